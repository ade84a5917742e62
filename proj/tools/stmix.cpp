// stmix: command-line entry point.
//
// Exit codes: 0 success, 1 check/assertion failure, 2 usage or IO error.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "stmix/bench.hpp"
#include "stmix/contrastive.hpp"
#include "stmix/retrieval.hpp"
#include "stmix/weights.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;

void write_out(const std::string& path, const std::string& text) {
    if (path.empty()) return;
    std::ofstream f(path);
    if (!f) throw stmix::IOError("cannot open --out path: " + path);
    f << text;
}

int cmd_reparam_check(const std::string& config_path, std::uint64_t seed, int trials, double tol,
                      const std::string& out) {
    using namespace stmix;
    ModelConfig cfg = ModelConfig::load_file(config_path);
    std::vector<double> max_devs;
    double worst = 0.0;
    Rng input_rng(seed ^ 0x9e3779b97f4a7c15ull);
    for (int k = 0; k < trials; ++k) {
        Model train = Model::random(cfg, seed + k);
        Model fused = train.reparameterized();
        TokenGrid v(cfg.t, cfg.h, cfg.w, 3);
        for (float& x : v.data) x = uniform(input_rng, -1.0f, 1.0f);
        Matrix a = train.encode_video(v).video;
        Matrix b = fused.encode_video(v).video;
        double dev = 0.0;
        for (size_t i = 0; i < a.data.size(); ++i)
            dev = std::max(dev, static_cast<double>(std::abs(a.data[i] - b.data[i])));
        max_devs.push_back(dev);
        worst = std::max(worst, dev);
    }
    std::sort(max_devs.begin(), max_devs.end());
    const double median = max_devs[max_devs.size() / 2];
    std::ostringstream report;
    report << "trials=" << trials << " max_deviation=" << worst << " median_deviation=" << median
           << " tol=" << tol << "\n";
    std::cout << report.str();
    write_out(out, report.str());
    if (worst > tol) {
        std::cout << "FAIL: max deviation exceeds tolerance\n";
        return kCheckFailed;
    }
    std::cout << "OK\n";
    return kOk;
}

int cmd_trend_check(const std::string& report_path, const std::string& thresholds_path,
                    const std::string& out) {
    using namespace stmix;
    std::vector<LatencyRecord> report = read_report_csv(report_path);
    TrendThresholds th;
    if (!thresholds_path.empty()) th = TrendThresholds::load_file(thresholds_path);
    std::vector<TrendResult> results = trend_check(report, th);
    std::ostringstream os;
    bool all_pass = true;
    for (const TrendResult& r : results) {
        const char* s = r.status == TrendStatus::Pass   ? "PASS"
                        : r.status == TrendStatus::Fail ? "FAIL"
                                                        : "NOT-RUN";
        if (r.status != TrendStatus::Pass) all_pass = false;
        os << s << " " << r.name << ": " << r.detail << "\n";
    }
    std::cout << os.str();
    write_out(out, os.str());
    return all_pass ? kOk : kCheckFailed;
}

int cmd_eval(const std::string& videos_path, const std::string& texts_path,
             const std::string& gt_path, int mc_per, const std::string& mc_correct_path,
             const std::string& out) {
    using namespace stmix;
    EmbeddingMatrix videos = load_embeddings(videos_path);
    EmbeddingMatrix texts = load_embeddings(texts_path);
    std::ostringstream os;

    auto read_indices = [](const std::string& path, int expected) {
        std::ifstream f(path);
        if (!f) throw IOError("cannot open index file: " + path);
        std::vector<int> idx;
        std::string line;
        int lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            if (line.empty()) continue;
            try {
                idx.push_back(std::stoi(line));
            } catch (const std::exception&) {
                throw ParseError("bad index '" + line + "'", lineno);
            }
        }
        if (static_cast<int>(idx.size()) != expected)
            throw ParseError("expected " + std::to_string(expected) + " indices, got " +
                             std::to_string(idx.size()));
        return idx;
    };

    if (mc_per > 0) {
        // Multiple choice: texts hold mc_per candidates per video, in order.
        if (texts.rows != videos.rows * mc_per)
            throw ParseError("texts must hold " + std::to_string(mc_per) +
                             " candidates per video");
        std::vector<EmbeddingMatrix> cands;
        for (int i = 0; i < videos.rows; ++i) {
            EmbeddingMatrix c(mc_per, texts.cols);
            for (int j = 0; j < mc_per; ++j)
                for (int d = 0; d < texts.cols; ++d) c.at(j, d) = texts.at(i * mc_per + j, d);
            cands.push_back(std::move(c));
        }
        std::vector<int> correct(videos.rows, 0);
        if (!mc_correct_path.empty()) correct = read_indices(mc_correct_path, videos.rows);
        const double acc = multiple_choice_accuracy(videos, cands, correct);
        os << "mc_accuracy=" << acc << "\n";
    } else {
        SimMatrix v2t = build_sim(videos, texts);
        std::vector<int> gt_v(videos.rows), gt_t(texts.rows);
        for (int i = 0; i < videos.rows; ++i) gt_v[i] = i;
        for (int i = 0; i < texts.rows; ++i) gt_t[i] = i;
        if (!gt_path.empty()) {
            gt_v = read_indices(gt_path, videos.rows);
            // Invert the bijection for the text-side queries.
            std::fill(gt_t.begin(), gt_t.end(), -1);
            for (int i = 0; i < videos.rows; ++i)
                if (gt_v[i] >= 0 && gt_v[i] < texts.rows) gt_t[gt_v[i]] = i;
        }
        SimMatrix t2v(v2t.cols, v2t.rows);
        for (int i = 0; i < v2t.rows; ++i)
            for (int j = 0; j < v2t.cols; ++j) t2v.at(j, i) = v2t.at(i, j);
        os << "v2t_r1=" << recall_at_1(v2t, gt_v) << "\n";
        os << "t2v_r1=" << recall_at_1(t2v, gt_t) << "\n";
    }
    std::cout << os.str();
    write_out(out, os.str());
    return kOk;
}

int cmd_inspect(const std::string& path, const std::string& out) {
    using namespace stmix;
    StoreInfo info = inspect_store(read_file_bytes(path));
    std::ostringstream os;
    os << "version=" << info.version << " fused=" << (info.fused ? 1 : 0)
       << " config_hash=" << info.config_hash << " tensors=" << info.tensors.size() << "\n";
    for (const TensorInfo& t : info.tensors) {
        os << t.name << " ";
        for (size_t i = 0; i < t.shape.size(); ++i) os << (i ? "x" : "") << t.shape[i];
        os << " count=" << t.count << "\n";
    }
    std::cout << os.str();
    write_out(out, os.str());
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spatiotemporal reparameterizable blocks: checks, training, benchmarks"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    std::string config_path = "configs/tiny-desk.cfg";
    std::uint64_t seed = 0;
    std::string out;

    // reparam-check
    auto* rc = app.add_subcommand("reparam-check", "verify train-form == fused-form on a model");
    int rc_trials = 50;
    double rc_tol = 1e-4;
    rc->add_option("--config", config_path, "model config path");
    rc->add_option("--seed", seed, "rng seed");
    rc->add_option("--trials", rc_trials, "number of random (model, input) trials");
    rc->add_option("--tol", rc_tol, "max allowed output deviation");
    rc->add_option("--out", out, "also write the report here");

    // bench
    auto* bn = app.add_subcommand("bench", "time one block stack");
    std::string bn_module = "conv";
    int bn_t = 8, bn_h = 14, bn_w = 14, bn_c = 512, bn_layers = 1, bn_warmup = 10, bn_iters = 100;
    bn->add_option("--module", bn_module, "conv|attn|ffn|convffn");
    bn->add_option("--frames", bn_t, "frame count");
    bn->add_option("--height", bn_h, "token rows");
    bn->add_option("--width", bn_w, "token cols");
    bn->add_option("--dim", bn_c, "channel dim");
    bn->add_option("--layers", bn_layers, "stack depth");
    bn->add_option("--warmup", bn_warmup, "warmup iterations");
    bn->add_option("--iters", bn_iters, "timed iterations");
    bn->add_option("--seed", seed, "rng seed");
    bn->add_option("--out", out, "CSV report path");

    // bench-grid
    auto* bg = app.add_subcommand("bench-grid", "time the full standard grid");
    bool bg_default = false;
    int bg_warmup = 10, bg_iters = 100;
    bg->add_flag("--default", bg_default, "run the built-in size/dim/layer grid");
    bg->add_option("--warmup", bg_warmup, "warmup iterations per row");
    bg->add_option("--iters", bg_iters, "timed iterations per row");
    bg->add_option("--seed", seed, "rng seed");
    bg->add_option("--out", out, "CSV report path");

    // trend-check
    auto* tc = app.add_subcommand("trend-check", "check latency trends in a bench report");
    std::string tc_report, tc_thresholds;
    tc->add_option("--report", tc_report, "bench-grid CSV report")->required();
    tc->add_option("--thresholds", tc_thresholds, "thresholds config (key=value)");
    tc->add_option("--seed", seed, "rng seed (unused; accepted for uniformity)");
    tc->add_option("--out", out, "also write the report here");

    // train-toy
    auto* tt = app.add_subcommand("train-toy", "fine-tune on a synthetic cluster dataset");
    stmix::TrainConfig tcfg;
    int tt_clusters = 4, tt_per = 8, tt_holdout = 1;
    std::string tt_save;
    tt->add_option("--config", config_path, "model config path");
    tt->add_option("--seed", tcfg.seed, "rng seed");
    tt->add_option("--epochs", tcfg.epochs, "training epochs");
    tt->add_option("--lr", tcfg.lr, "learning rate");
    tt->add_option("--batch", tcfg.batch, "batch size");
    tt->add_option("--tau0", tcfg.tau0, "initial temperature");
    tt->add_option("--subsets", tcfg.subsets, "trainable parameter subsets");
    tt->add_option("--clusters", tt_clusters, "synthetic cluster count");
    tt->add_option("--per-cluster", tt_per, "train clips per cluster");
    tt->add_option("--holdout", tt_holdout, "holdout clips per cluster");
    tt->add_option("--out", out, "training log path (CSV: step,loss,r1)");
    tt->add_option("--save", tt_save, "save final weights here (.stmx)");

    // eval
    auto* ev = app.add_subcommand("eval", "retrieval metrics over embedding files");
    std::string ev_videos, ev_texts, ev_gt, ev_mc_correct;
    int ev_mc_per = 0;
    ev->add_option("--videos", ev_videos, "video embeddings (CSV or .stmx)")->required();
    ev->add_option("--texts", ev_texts, "text embeddings (CSV or .stmx)")->required();
    ev->add_option("--gt", ev_gt, "ground-truth text index per video, one per line");
    ev->add_option("--mc-per", ev_mc_per, "multiple-choice candidates per video (0 = retrieval)");
    ev->add_option("--mc-correct", ev_mc_correct, "correct candidate index per video");
    ev->add_option("--seed", seed, "rng seed (unused; accepted for uniformity)");
    ev->add_option("--out", out, "also write the report here");

    // inspect-weights
    auto* iw = app.add_subcommand("inspect-weights", "list tensors in a weight store");
    std::string iw_path;
    iw->add_option("file", iw_path, "weight store path")->required();
    iw->add_option("--out", out, "also write the report here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc_code = app.exit(e);
        return rc_code == 0 ? kOk : kUsage;
    }

    try {
        if (rc->parsed()) {
            if (rc_trials < 1) {
                std::cerr << "usage error: --trials must be >= 1\n";
                return kUsage;
            }
            return cmd_reparam_check(config_path, seed, rc_trials, rc_tol, out);
        }
        if (bn->parsed()) {
            stmix::BenchSpec spec;
            spec.module = stmix::parse_module(bn_module);
            spec.t = bn_t;
            spec.h = bn_h;
            spec.w = bn_w;
            spec.c = bn_c;
            spec.layers = bn_layers;
            spec.warmup = bn_warmup;
            spec.timed = bn_iters;
            spec.seed = seed;
            try {
                spec.validate();
            } catch (const stmix::ShapeError& e) {
                std::cerr << "usage error: " << e.what() << "\n";
                return kUsage;
            }
            stmix::LatencyRecord r = stmix::run_bench(spec);
            std::cout << r.spec.describe() << ": mean=" << r.mean_ms
                      << "ms median=" << r.median_ms << "ms p5=" << r.p5_ms
                      << "ms p95=" << r.p95_ms << "ms\n";
            if (!out.empty()) stmix::write_report_csv({r}, out);
            return kOk;
        }
        if (bg->parsed()) {
            if (!bg_default) {
                std::cerr << "usage error: bench-grid currently requires --default\n";
                return kUsage;
            }
            std::vector<stmix::BenchSpec> grid = stmix::default_grid(bg_warmup, bg_iters, seed);
            std::vector<stmix::LatencyRecord> report = stmix::run_grid(grid);
            int failed = 0;
            for (const auto& r : report)
                if (!r.ok) {
                    ++failed;
                    std::cerr << "row failed: " << r.spec.describe() << ": " << r.error << "\n";
                }
            if (out.empty())
                std::cout << stmix::report_csv_string(report);
            else
                stmix::write_report_csv(report, out);
            std::cout << "rows=" << report.size() << " failed=" << failed << "\n";
            return failed == 0 ? kOk : kCheckFailed;
        }
        if (tc->parsed()) return cmd_trend_check(tc_report, tc_thresholds, out);
        if (tt->parsed()) {
            stmix::ModelConfig cfg = stmix::ModelConfig::load_file(config_path);
            stmix::Model model = stmix::Model::random(cfg, tcfg.seed);
            stmix::SyntheticDataset data =
                stmix::make_synthetic_dataset(cfg, tt_clusters, tt_per, tt_holdout, tcfg.seed);
            tcfg.log_path = out;
            stmix::TrainResult res = stmix::train_toy(model, data, tcfg);
            std::cout << "initial_loss=" << res.initial_loss << " final_loss=" << res.final_loss
                      << " holdout_t2v_r1=" << res.holdout_t2v_r1 << " tau=" << res.tau << "\n";
            if (!tt_save.empty()) stmix::save_model_file(model, tt_save);
            const bool ok = res.final_loss < res.initial_loss;
            if (!ok) std::cout << "FAIL: loss did not decrease\n";
            return ok ? kOk : kCheckFailed;
        }
        if (ev->parsed()) return cmd_eval(ev_videos, ev_texts, ev_gt, ev_mc_per, ev_mc_correct, out);
        if (iw->parsed()) return cmd_inspect(iw_path, out);
    } catch (const stmix::WeightError& e) {
        std::cerr << "weight store error: " << e.what() << "\n";
        return kUsage;
    } catch (const stmix::ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kUsage;
    } catch (const stmix::IOError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kCheckFailed;
    }
    return kUsage;
}
