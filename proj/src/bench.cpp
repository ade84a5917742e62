#include "stmix/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace stmix {

namespace {

struct BenchLayer {
    BenchModule module;
    STRepMixerParams mixer;
    STAttentionParams attn;
    FFNParams ffn;
    ConvFFNParams convffn;
};

constexpr int kBenchHeads = 4;
constexpr int kBenchFFNRatio = 4;

BenchLayer make_layer(BenchModule module, int t, int c, Rng& rng) {
    BenchLayer layer;
    layer.module = module;
    switch (module) {
        case BenchModule::Conv: {
            // Fused form directly: tap magnitudes bounded by 1/taps so deep
            // stacks stay finite.
            STRepMixerParams p;
            p.temporal = make_random_conv(ConvKind::Temporal1d, c, 3, rng, 1.0f / 3.0f, false, false);
            p.spatial = make_random_conv(ConvKind::Spatial2d, c, 3, rng, 1.0f / 9.0f, false, false);
            layer.mixer = std::move(p);
            break;
        }
        case BenchModule::Attn: {
            STAttentionParams p = make_random_attention(t, c, kBenchHeads, 7, rng);
            layer.attn = reparameterize(p).params;
            break;
        }
        case BenchModule::FFN:
            layer.ffn = make_random_ffn(c, kBenchFFNRatio, rng, 0.5f / std::sqrt(static_cast<float>(c)));
            break;
        case BenchModule::ConvFFN: {
            ConvFFNParams p =
                make_random_convffn(c, kBenchFFNRatio, 3, rng, 0.5f / std::sqrt(static_cast<float>(c)));
            layer.convffn = reparameterize(p).params;
            break;
        }
    }
    return layer;
}

TokenGrid layer_forward(const BenchLayer& layer, const TokenGrid& x) {
    switch (layer.module) {
        case BenchModule::Conv: return st_repmixer_forward(x, layer.mixer, BlockMode::Fused);
        case BenchModule::Attn: return st_attention_forward(x, layer.attn, BlockMode::Fused);
        case BenchModule::FFN: return ffn_forward(x, layer.ffn);
        case BenchModule::ConvFFN: return convffn_forward(x, layer.convffn, BlockMode::Fused);
    }
    throw std::logic_error("unreachable");
}

double percentile(std::vector<double> sorted, double p) {
    if (sorted.empty()) return 0.0;
    const double idx = p * (sorted.size() - 1);
    const size_t lo = static_cast<size_t>(idx);
    const size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = idx - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

const char* module_name(BenchModule m) {
    switch (m) {
        case BenchModule::Conv: return "conv";
        case BenchModule::Attn: return "attn";
        case BenchModule::FFN: return "ffn";
        case BenchModule::ConvFFN: return "convffn";
    }
    return "?";
}

BenchModule parse_module(const std::string& name) {
    if (name == "conv") return BenchModule::Conv;
    if (name == "attn") return BenchModule::Attn;
    if (name == "ffn") return BenchModule::FFN;
    if (name == "convffn") return BenchModule::ConvFFN;
    throw ParseError("unknown module '" + name + "' (expected conv|attn|ffn|convffn)");
}

void BenchSpec::validate() const {
    if (t < 1 || h < 1 || w < 1 || c < 1)
        throw ShapeError("bench: all dims must be >= 1");
    if (layers < 1) throw ShapeError("bench: layer count must be >= 1");
    if (warmup < 1) throw ShapeError("bench: warmup must be >= 1");
    if (timed < 10) throw ShapeError("bench: timed iterations must be >= 10");
    if (module == BenchModule::Attn && c % kBenchHeads != 0)
        throw ShapeError("bench: attention dim must be divisible by " + std::to_string(kBenchHeads));
}

std::string BenchSpec::describe() const {
    std::ostringstream os;
    os << module_name(module) << " " << t << "x" << h << "x" << w << " c=" << c
       << " layers=" << layers;
    return os.str();
}

std::string host_descriptor() {
    std::ifstream cpuinfo("/proc/cpuinfo");
    std::string line;
    std::string model = "unknown-cpu";
    while (std::getline(cpuinfo, line)) {
        if (line.rfind("model name", 0) == 0) {
            const size_t colon = line.find(':');
            if (colon != std::string::npos) model = line.substr(colon + 1);
            break;
        }
    }
    // Keep the CSV single-token friendly.
    std::string out;
    bool space = true;
    for (char ch : model) {
        if (ch == ',' || ch == '\t') ch = ' ';
        if (ch == ' ') {
            if (!space && !out.empty()) out += '_';
            space = true;
        } else {
            out += ch;
            space = false;
        }
    }
    while (!out.empty() && out.back() == '_') out.pop_back();
    return out.empty() ? "unknown-cpu" : out;
}

LatencyRecord run_bench(const BenchSpec& spec) {
    spec.validate();
    LatencyRecord rec;
    rec.spec = spec;
    rec.host = host_descriptor();

    Rng rng(spec.seed);
    std::vector<BenchLayer> stack;
    try {
        stack.reserve(spec.layers);
        for (int l = 0; l < spec.layers; ++l) stack.push_back(make_layer(spec.module, spec.t, spec.c, rng));
    } catch (const std::bad_alloc&) {
        throw IOError("bench: out of memory constructing stack for spec " + spec.describe());
    }

    TokenGrid input(spec.t, spec.h, spec.w, spec.c);
    for (float& v : input.data) v = uniform(rng, -1.0f, 1.0f);

    auto forward = [&]() {
        TokenGrid x = stack[0].module == spec.module ? layer_forward(stack[0], input)
                                                     : input;  // layers >= 1 always
        for (size_t l = 1; l < stack.size(); ++l) x = layer_forward(stack[l], x);
        return x;
    };

    try {
        for (int i = 0; i < spec.warmup; ++i) {
            TokenGrid y = forward();
            if (i == 0 && !y.finite())
                throw std::runtime_error("bench: non-finite output for spec " + spec.describe());
        }
        rec.samples_ms.reserve(spec.timed);
        for (int i = 0; i < spec.timed; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            TokenGrid y = forward();
            const auto t1 = std::chrono::steady_clock::now();
            // Keep the result alive so the pass cannot be elided.
            if (!std::isfinite(y.data[0]))
                throw std::runtime_error("bench: non-finite output for spec " + spec.describe());
            rec.samples_ms.push_back(
                std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
    } catch (const std::bad_alloc&) {
        throw IOError("bench: out of memory running spec " + spec.describe());
    }

    std::vector<double> sorted = rec.samples_ms;
    std::sort(sorted.begin(), sorted.end());
    double sum = 0.0;
    for (double v : sorted) sum += v;
    rec.mean_ms = sum / sorted.size();
    rec.median_ms = percentile(sorted, 0.5);
    rec.p5_ms = percentile(sorted, 0.05);
    rec.p95_ms = percentile(sorted, 0.95);
    return rec;
}

std::vector<LatencyRecord> run_grid(const std::vector<BenchSpec>& grid) {
    std::vector<LatencyRecord> out;
    out.reserve(grid.size());
    for (const BenchSpec& spec : grid) {
        try {
            out.push_back(run_bench(spec));
        } catch (const std::exception& e) {
            LatencyRecord rec;
            rec.spec = spec;
            rec.host = host_descriptor();
            rec.ok = false;
            rec.error = e.what();
            out.push_back(std::move(rec));
        }
    }
    return out;
}

std::vector<BenchSpec> default_grid(int warmup, int timed, std::uint64_t seed) {
    const int sizes[3][3] = {{8, 7, 7}, {8, 14, 14}, {8, 16, 16}};
    const int dims[] = {64, 128, 256, 384, 512, 768, 1024};
    const BenchModule table8[] = {BenchModule::Conv, BenchModule::Attn, BenchModule::ConvFFN};
    const BenchModule table9[] = {BenchModule::Conv, BenchModule::Attn, BenchModule::FFN,
                                  BenchModule::ConvFFN};
    const int layer_sweep[] = {1, 10, 20, 30};

    std::vector<BenchSpec> grid;
    for (const auto& sz : sizes)
        for (int d : dims)
            for (BenchModule m : table8) {
                BenchSpec s;
                s.module = m;
                s.t = sz[0];
                s.h = sz[1];
                s.w = sz[2];
                s.c = d;
                s.layers = 1;
                s.warmup = warmup;
                s.timed = timed;
                s.seed = seed;
                grid.push_back(s);
            }
    for (int layers : layer_sweep)
        for (BenchModule m : table9) {
            BenchSpec s;
            s.module = m;
            s.t = 8;
            s.h = s.w = 14;
            s.c = 512;
            s.layers = layers;
            s.warmup = warmup;
            s.timed = timed;
            s.seed = seed;
            grid.push_back(s);
        }
    return grid;
}

std::string report_csv_string(const std::vector<LatencyRecord>& report) {
    std::ostringstream os;
    os << "module,t,h,w,c,layers,iters,mean_ms,median_ms,p5_ms,p95_ms,host\n";
    for (const LatencyRecord& r : report) {
        os << module_name(r.spec.module) << "," << r.spec.t << "," << r.spec.h << "," << r.spec.w
           << "," << r.spec.c << "," << r.spec.layers << "," << r.spec.timed << ",";
        if (r.ok)
            os << r.mean_ms << "," << r.median_ms << "," << r.p5_ms << "," << r.p95_ms;
        else
            os << "nan,nan,nan,nan";
        os << "," << r.host << "\n";
    }
    return os.str();
}

void write_report_csv(const std::vector<LatencyRecord>& report, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IOError("cannot open report for writing: " + path);
    f << report_csv_string(report);
}

std::vector<LatencyRecord> parse_report_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line)) throw ParseError("empty report", 1);
    if (line.rfind("module,t,h,w,c,layers,iters,", 0) != 0)
        throw ParseError("unexpected report header", 1);
    std::vector<LatencyRecord> out;
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (cells.size() != 12) throw ParseError("expected 12 columns", lineno);
        LatencyRecord r;
        try {
            r.spec.module = parse_module(cells[0]);
            r.spec.t = std::stoi(cells[1]);
            r.spec.h = std::stoi(cells[2]);
            r.spec.w = std::stoi(cells[3]);
            r.spec.c = std::stoi(cells[4]);
            r.spec.layers = std::stoi(cells[5]);
            r.spec.timed = std::stoi(cells[6]);
            r.mean_ms = std::stod(cells[7]);
            r.median_ms = std::stod(cells[8]);
            r.p5_ms = std::stod(cells[9]);
            r.p95_ms = std::stod(cells[10]);
            r.host = cells[11];
            r.ok = std::isfinite(r.median_ms);
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception&) {
            throw ParseError("bad numeric cell", lineno);
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<LatencyRecord> read_report_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IOError("cannot open report: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_report_csv(ss.str());
}

TrendThresholds TrendThresholds::parse(const std::string& text) {
    TrendThresholds th;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        key.erase(std::remove_if(key.begin(), key.end(), ::isspace), key.end());
        if (key.empty()) continue;
        try {
            if (key == "attn_layer_ratio_min") th.attn_layer_ratio_min = std::stod(val);
            else if (key == "conv_layer_ratio_max") th.conv_layer_ratio_max = std::stod(val);
            else if (key == "max_channel_inversions") th.max_channel_inversions = std::stoi(val);
            else if (key == "token_superlinear_exponent") th.token_superlinear_exponent = std::stod(val);
            else throw ParseError("unknown threshold key '" + key + "'", lineno);
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception&) {
            throw ParseError("bad threshold value for '" + key + "'", lineno);
        }
    }
    return th;
}

TrendThresholds TrendThresholds::load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IOError("cannot open thresholds file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
}

namespace {

struct Key {
    BenchModule m;
    int h, w, c, layers;
    bool operator<(const Key& o) const {
        return std::tie(m, h, w, c, layers) < std::tie(o.m, o.h, o.w, o.c, o.layers);
    }
};

}  // namespace

std::vector<TrendResult> trend_check(const std::vector<LatencyRecord>& report,
                                     const TrendThresholds& th) {
    std::map<Key, double> med;
    for (const LatencyRecord& r : report)
        if (r.ok) med[{r.spec.module, r.spec.h, r.spec.w, r.spec.c, r.spec.layers}] = r.median_ms;

    auto find = [&](BenchModule m, int h, int w, int c, int layers, double& out) {
        auto it = med.find({m, h, w, c, layers});
        if (it == med.end()) return false;
        out = it->second;
        return true;
    };

    const int dims[] = {64, 128, 256, 384, 512, 768, 1024};
    std::vector<TrendResult> results;

    // (a) attention superlinear in token count at every dim
    {
        TrendResult r{"attn_superlinear_in_tokens", TrendStatus::NotRun, ""};
        bool any = false, all_ok = true;
        std::ostringstream detail;
        for (int d : dims) {
            double t7, t14, t16;
            if (!find(BenchModule::Attn, 7, 7, d, 1, t7) ||
                !find(BenchModule::Attn, 14, 14, d, 1, t14) ||
                !find(BenchModule::Attn, 16, 16, d, 1, t16))
                continue;
            any = true;
            const double token_ratio = std::pow(256.0 / 49.0, th.token_superlinear_exponent);
            const bool increasing = t7 < t14 && t14 < t16;
            const bool superlinear = t16 / t7 > token_ratio;
            if (!increasing || !superlinear) {
                all_ok = false;
                detail << "dim=" << d << " ratio=" << t16 / t7 << " (need >" << token_ratio
                       << (increasing ? "" : ", not increasing") << "); ";
            }
        }
        if (any) {
            r.status = all_ok ? TrendStatus::Pass : TrendStatus::Fail;
            r.detail = all_ok ? "superlinear at every dim" : detail.str();
        } else {
            r.detail = "missing single-layer attn rows across the three sizes";
        }
        results.push_back(r);
    }

    // (b) attention layer stacking ratio
    {
        TrendResult r{"attn_layer_stacking_ratio", TrendStatus::NotRun, ""};
        double t1, t30;
        if (find(BenchModule::Attn, 14, 14, 512, 1, t1) &&
            find(BenchModule::Attn, 14, 14, 512, 30, t30)) {
            const double ratio = t30 / t1;
            r.status = ratio >= th.attn_layer_ratio_min ? TrendStatus::Pass : TrendStatus::Fail;
            std::ostringstream d;
            d << "30-layer/1-layer = " << ratio << " (need >= " << th.attn_layer_ratio_min << ")";
            r.detail = d.str();
        } else {
            r.detail = "missing attn layer-sweep rows at dim 512, 8x14x14";
        }
        results.push_back(r);
    }

    // (c) conv layer stacking ratio
    {
        TrendResult r{"conv_layer_stacking_ratio", TrendStatus::NotRun, ""};
        double t1, t30;
        if (find(BenchModule::Conv, 14, 14, 512, 1, t1) &&
            find(BenchModule::Conv, 14, 14, 512, 30, t30)) {
            const double ratio = t30 / t1;
            r.status = ratio <= th.conv_layer_ratio_max ? TrendStatus::Pass : TrendStatus::Fail;
            std::ostringstream d;
            d << "30-layer/1-layer = " << ratio << " (need <= " << th.conv_layer_ratio_max << ")";
            r.detail = d.str();
        } else {
            r.detail = "missing conv layer-sweep rows at dim 512, 8x14x14";
        }
        results.push_back(r);
    }

    // (d) latency non-decreasing in channel dim, one inversion allowed
    const BenchModule mods[] = {BenchModule::Conv, BenchModule::Attn, BenchModule::ConvFFN};
    const int sizes[3][2] = {{7, 7}, {14, 14}, {16, 16}};
    for (BenchModule m : mods) {
        TrendResult r{std::string("channel_monotonicity_") + module_name(m), TrendStatus::NotRun,
                      ""};
        bool any = false, all_ok = true;
        std::ostringstream detail;
        for (const auto& sz : sizes) {
            std::vector<double> series;
            bool complete = true;
            for (int d : dims) {
                double v;
                if (!find(m, sz[0], sz[1], d, 1, v)) {
                    complete = false;
                    break;
                }
                series.push_back(v);
            }
            if (!complete) continue;
            any = true;
            int inversions = 0;
            for (size_t i = 1; i < series.size(); ++i)
                if (series[i] < series[i - 1]) ++inversions;
            if (inversions > th.max_channel_inversions) {
                all_ok = false;
                detail << sz[0] << "x" << sz[1] << ": " << inversions << " inversions; ";
            }
        }
        if (any) {
            r.status = all_ok ? TrendStatus::Pass : TrendStatus::Fail;
            r.detail = all_ok ? "non-decreasing in channels" : detail.str();
        } else {
            r.detail = "missing single-layer rows over the dim sweep";
        }
        results.push_back(r);
    }
    return results;
}

}  // namespace stmix
