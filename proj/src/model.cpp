#include "stmix/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace stmix {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

BlockKind parse_kind(const std::string& s, int line) {
    if (s == "repmixer") return BlockKind::RepMixer;
    if (s == "attention") return BlockKind::Attention;
    throw ParseError("unknown block kind '" + s + "'", line);
}

const char* kind_name(BlockKind k) {
    return k == BlockKind::RepMixer ? "repmixer" : "attention";
}

}  // namespace

void ModelConfig::validate() const {
    if (t < 1 || h < 1 || w < 1) throw ShapeError("config: t/h/w must be >= 1");
    if (stem < 1 || h % stem != 0 || w % stem != 0)
        throw ShapeError("config: stem factor must divide input size");
    if (stages.empty()) throw ShapeError("config: at least one stage required");
    if (embed_dim < 1) throw ShapeError("config: embed_dim must be >= 1");
    if (heads < 1) throw ShapeError("config: heads must be >= 1");
    if (temporal_kernel % 2 == 0 || spatial_kernel % 2 == 0 || cpe_kernel % 2 == 0)
        throw ShapeError("config: kernel sizes must be odd");
    if (ffn_ratio < 1) throw ShapeError("config: ffn_ratio must be >= 1");
    int prev = 0;
    for (const StageConfig& s : stages) {
        if (s.repeat < 1 || s.channels < 1) throw ShapeError("config: bad stage");
        if (s.channels < prev) throw ShapeError("config: channels must be non-decreasing");
        if (s.kind == BlockKind::Attention && s.channels % heads != 0)
            throw ShapeError("config: attention channels must be divisible by heads");
        prev = s.channels;
    }
}

std::string ModelConfig::canonical_text() const {
    std::ostringstream os;
    os << "t = " << t << "\n";
    os << "height = " << h << "\n";
    os << "width = " << w << "\n";
    os << "stem = " << stem << "\n";
    os << "stages = ";
    for (size_t i = 0; i < stages.size(); ++i) {
        if (i) os << ", ";
        os << kind_name(stages[i].kind) << ":" << stages[i].repeat << ":" << stages[i].channels;
    }
    os << "\n";
    os << "embed_dim = " << embed_dim << "\n";
    os << "heads = " << heads << "\n";
    os << "temporal_kernel = " << temporal_kernel << "\n";
    os << "spatial_kernel = " << spatial_kernel << "\n";
    os << "cpe_kernel = " << cpe_kernel << "\n";
    os << "ffn_ratio = " << ffn_ratio << "\n";
    return os.str();
}

std::uint64_t ModelConfig::hash() const {
    std::uint64_t h64 = 1469598103934665603ull;
    for (char ch : canonical_text()) {
        h64 ^= static_cast<unsigned char>(ch);
        h64 *= 1099511628211ull;
    }
    return h64;
}

ModelConfig ModelConfig::parse(const std::string& text) {
    ModelConfig cfg;
    cfg.stages.clear();
    std::istringstream is(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(is, raw)) {
        ++lineno;
        std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("expected 'key = value'", lineno);
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        try {
            if (key == "t") cfg.t = std::stoi(val);
            else if (key == "height") cfg.h = std::stoi(val);
            else if (key == "width") cfg.w = std::stoi(val);
            else if (key == "stem") cfg.stem = std::stoi(val);
            else if (key == "embed_dim") cfg.embed_dim = std::stoi(val);
            else if (key == "heads") cfg.heads = std::stoi(val);
            else if (key == "temporal_kernel") cfg.temporal_kernel = std::stoi(val);
            else if (key == "spatial_kernel") cfg.spatial_kernel = std::stoi(val);
            else if (key == "cpe_kernel") cfg.cpe_kernel = std::stoi(val);
            else if (key == "ffn_ratio") cfg.ffn_ratio = std::stoi(val);
            else if (key == "stages") {
                std::istringstream ss(val);
                std::string item;
                while (std::getline(ss, item, ',')) {
                    item = trim(item);
                    if (item.empty()) continue;
                    size_t c1 = item.find(':');
                    size_t c2 = item.find(':', c1 == std::string::npos ? c1 : c1 + 1);
                    if (c1 == std::string::npos || c2 == std::string::npos)
                        throw ParseError("stage must be kind:repeat:channels", lineno);
                    StageConfig st;
                    st.kind = parse_kind(trim(item.substr(0, c1)), lineno);
                    st.repeat = std::stoi(trim(item.substr(c1 + 1, c2 - c1 - 1)));
                    st.channels = std::stoi(trim(item.substr(c2 + 1)));
                    cfg.stages.push_back(st);
                }
            } else {
                throw ParseError("unknown key '" + key + "'", lineno);
            }
        } catch (const std::invalid_argument&) {
            throw ParseError("bad numeric value for '" + key + "'", lineno);
        }
    }
    cfg.validate();
    return cfg;
}

ModelConfig ModelConfig::load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IOError("cannot open config file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
}

ModelConfig ModelConfig::tiny_desk() {
    ModelConfig cfg;
    cfg.t = 8;
    cfg.h = cfg.w = 16;
    cfg.stem = 2;
    cfg.stages = {{BlockKind::RepMixer, 2, 32}, {BlockKind::Attention, 1, 64}};
    cfg.embed_dim = 64;
    cfg.heads = 4;
    cfg.temporal_kernel = 3;
    cfg.spatial_kernel = 3;
    cfg.cpe_kernel = 7;
    cfg.ffn_ratio = 2;
    cfg.validate();
    return cfg;
}

Model Model::random(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    Model m;
    m.cfg_ = cfg;

    const int patch = 3 * cfg.stem * cfg.stem;
    const int c1 = cfg.stages[0].channels;
    const float stem_scale = 1.0f / std::sqrt(static_cast<float>(patch));
    m.stem_weight_ = Matrix(patch, c1);
    for (float& v : m.stem_weight_.data) v = uniform(rng, -stem_scale, stem_scale);
    m.stem_bias_.resize(c1);
    for (float& v : m.stem_bias_) v = uniform(rng, -0.05f, 0.05f);

    int prev = c1;
    for (size_t s = 0; s < cfg.stages.size(); ++s) {
        const StageConfig& st = cfg.stages[s];
        if (st.channels != prev) {
            Transition tr;
            tr.weight = Matrix(prev, st.channels);
            const float sc = 1.0f / std::sqrt(static_cast<float>(prev));
            for (float& v : tr.weight.data) v = uniform(rng, -sc, sc);
            tr.bias.resize(st.channels);
            for (float& v : tr.bias) v = uniform(rng, -0.05f, 0.05f);
            m.transitions_.push_back(std::move(tr));
            m.transition_stage_.push_back(static_cast<int>(s));
        }
        for (int r = 0; r < st.repeat; ++r) {
            Block b;
            b.kind = st.kind;
            if (st.kind == BlockKind::RepMixer) {
                b.mixer = make_random_repmixer(st.channels, cfg.temporal_kernel,
                                               cfg.spatial_kernel, rng);
            } else {
                b.attn = make_random_attention(cfg.t, st.channels, cfg.heads, cfg.cpe_kernel, rng,
                                               -1.0f, /*zero_tpe=*/true);
            }
            b.ffn = make_random_convffn(st.channels, cfg.ffn_ratio, cfg.spatial_kernel, rng);
            m.blocks_.push_back(std::move(b));
            m.block_stage_.push_back(static_cast<int>(s));
        }
        prev = st.channels;
    }

    const float ps = 1.0f / std::sqrt(static_cast<float>(prev));
    m.proj_ = Matrix(prev, cfg.embed_dim);
    for (float& v : m.proj_.data) v = uniform(rng, -ps, ps);
    return m;
}

Model Model::reparameterized(bool* changed) const {
    Model m = *this;
    bool any = false;
    for (Block& b : m.blocks_) {
        if (b.kind == BlockKind::RepMixer) {
            auto r = reparameterize(b.mixer);
            b.mixer = r.params;
            any = any || r.changed;
        } else {
            auto r = reparameterize(b.attn);
            b.attn = r.params;
            any = any || r.changed;
        }
        auto f = reparameterize(b.ffn);
        b.ffn = f.params;
        any = any || f.changed;
    }
    m.fused_ = true;
    if (changed) *changed = any;
    return m;
}

TokenGrid Model::apply_stem(const TokenGrid& v) const {
    if (v.c != 3) throw ShapeError("encode_video: input must have 3 channels");
    if (v.t != cfg_.t || v.h != cfg_.h || v.w != cfg_.w)
        throw ShapeError("encode_video: input shape does not match config");
    const int f = cfg_.stem;
    const int th = cfg_.token_h(), tw = cfg_.token_w();
    const int patch = 3 * f * f;
    Matrix patches(v.t * th * tw, patch);
    int row = 0;
    for (int ti = 0; ti < v.t; ++ti)
        for (int i = 0; i < th; ++i)
            for (int j = 0; j < tw; ++j, ++row) {
                float* dst = &patches.at(row, 0);
                int idx = 0;
                for (int pi = 0; pi < f; ++pi)
                    for (int pj = 0; pj < f; ++pj)
                        for (int ch = 0; ch < 3; ++ch)
                            dst[idx++] = v.at(ti, i * f + pi, j * f + pj, ch);
            }
    Matrix tok = matmul(patches, stem_weight_);
    for (int i = 0; i < tok.rows; ++i)
        for (int j = 0; j < tok.cols; ++j) tok.at(i, j) += stem_bias_[j];
    return grid_of(tok, v.t, th, tw);
}

Matrix Model::frame_gap(const TokenGrid& x) const {
    Matrix gap(x.t, x.c);
    const float inv = 1.0f / static_cast<float>(x.h * x.w);
    for (int ti = 0; ti < x.t; ++ti) {
        for (int i = 0; i < x.h; ++i)
            for (int j = 0; j < x.w; ++j) {
                const float* src = &x.at(ti, i, j, 0);
                for (int ch = 0; ch < x.c; ++ch) gap.at(ti, ch) += src[ch];
            }
        for (int ch = 0; ch < x.c; ++ch) gap.at(ti, ch) *= inv;
    }
    return gap;
}

Model::Encoded Model::encode_video(const TokenGrid& v, bool normalize_frames) const {
    TokenGrid x = apply_stem(v);
    const BlockMode mode = fused_ ? BlockMode::Fused : BlockMode::Train;
    size_t tr = 0, bl = 0;
    for (size_t s = 0; s < cfg_.stages.size(); ++s) {
        if (tr < transitions_.size() && transition_stage_[tr] == static_cast<int>(s)) {
            Matrix tok = matmul(tokens_of(x), transitions_[tr].weight);
            for (int i = 0; i < tok.rows; ++i)
                for (int j = 0; j < tok.cols; ++j) tok.at(i, j) += transitions_[tr].bias[j];
            x = grid_of(tok, x.t, x.h, x.w);
            ++tr;
        }
        for (; bl < blocks_.size() && block_stage_[bl] == static_cast<int>(s); ++bl) {
            const Block& b = blocks_[bl];
            x = b.kind == BlockKind::RepMixer ? st_repmixer_forward(x, b.mixer, mode)
                                              : st_attention_forward(x, b.attn, mode);
            x = convffn_forward(x, b.ffn, mode);
        }
    }
    Encoded out;
    out.frames = matmul(frame_gap(x), proj_);
    Matrix pooled = temporal_pool(out.frames);
    out.video = l2_normalize_rows(pooled).m;
    if (normalize_frames) out.frames = l2_normalize_rows(out.frames).m;
    return out;
}

Matrix Model::encode_features(const TokenGrid& v) const {
    TokenGrid x = apply_stem(v);
    const BlockMode mode = fused_ ? BlockMode::Fused : BlockMode::Train;
    size_t tr = 0, bl = 0;
    for (size_t s = 0; s < cfg_.stages.size(); ++s) {
        if (tr < transitions_.size() && transition_stage_[tr] == static_cast<int>(s)) {
            Matrix tok = matmul(tokens_of(x), transitions_[tr].weight);
            for (int i = 0; i < tok.rows; ++i)
                for (int j = 0; j < tok.cols; ++j) tok.at(i, j) += transitions_[tr].bias[j];
            x = grid_of(tok, x.t, x.h, x.w);
            ++tr;
        }
        for (; bl < blocks_.size() && block_stage_[bl] == static_cast<int>(s); ++bl) {
            const Block& b = blocks_[bl];
            x = b.kind == BlockKind::RepMixer ? st_repmixer_forward(x, b.mixer, mode)
                                              : st_attention_forward(x, b.attn, mode);
            x = convffn_forward(x, b.ffn, mode);
        }
    }
    return temporal_pool(frame_gap(x));
}

Matrix Model::project_features(const Matrix& features) const {
    return l2_normalize_rows(matmul(features, proj_)).m;
}

long Model::param_count() const {
    long n = static_cast<long>(stem_weight_.rows) * stem_weight_.cols + stem_bias_.size();
    for (const Transition& t : transitions_)
        n += static_cast<long>(t.weight.rows) * t.weight.cols + t.bias.size();
    for (const Block& b : blocks_) {
        n += b.kind == BlockKind::RepMixer ? b.mixer.param_count() : b.attn.param_count();
        n += b.ffn.param_count();
    }
    n += static_cast<long>(proj_.rows) * proj_.cols;
    return n;
}

long dwconv_flops(int channels, int taps, int t, int h, int w) {
    return 2L * taps * channels * t * h * w;
}

long matmul_flops(long rows, long inner, long cols) { return 2L * rows * inner * cols; }

long attention_flops(int tokens, int channels) {
    const long n = tokens, c = channels;
    // scores (N^2 C) + attention-times-value (N^2 C) + Q,K,V,O projections (4 N C^2)
    return 2L * (n * n * c + n * n * c + 4L * n * c * c);
}

long Model::flop_count() const {
    const int th = cfg_.token_h(), tw = cfg_.token_w();
    const long tokens = static_cast<long>(cfg_.t) * th * tw;
    long fl = matmul_flops(tokens, stem_weight_.rows, stem_weight_.cols);
    for (const Transition& t : transitions_)
        fl += matmul_flops(tokens, t.weight.rows, t.weight.cols);
    auto conv_fl = [&](const FusableConv& c) {
        long f = dwconv_flops(c.channels(), c.taps(), cfg_.t, th, tw);
        if (c.bn) f += 2L * tokens * c.channels();
        return f;
    };
    for (const Block& b : blocks_) {
        if (b.kind == BlockKind::RepMixer) {
            fl += conv_fl(b.mixer.temporal) + conv_fl(b.mixer.spatial);
        } else {
            fl += conv_fl(b.attn.cpe);
            fl += attention_flops(static_cast<int>(tokens), b.attn.channels());
        }
        fl += conv_fl(b.ffn.dw);
        fl += matmul_flops(tokens, b.ffn.expand.rows, b.ffn.expand.cols);
        fl += matmul_flops(tokens, b.ffn.project.rows, b.ffn.project.cols);
    }
    fl += matmul_flops(cfg_.t, proj_.rows, proj_.cols);
    return fl;
}

namespace {

void push_ref(std::vector<ParamRef>& out, const std::string& name, std::vector<int> shape,
              float* data) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    out.push_back({name, std::move(shape), data, n});
}

void conv_refs(std::vector<ParamRef>& out, const std::string& prefix, FusableConv& c) {
    if (c.kind == ConvKind::Spatial2d)
        push_ref(out, prefix + ".weight", {c.k2.channels, c.k2.kh, c.k2.kw}, c.k2.w.data());
    else
        push_ref(out, prefix + ".weight", {c.k1.channels, c.k1.kt}, c.k1.w.data());
    push_ref(out, prefix + ".bias", {c.channels()}, c.bias.data());
    if (c.bn) {
        const int ch = c.channels();
        push_ref(out, prefix + ".bn_gamma", {ch}, c.bn->gamma.data());
        push_ref(out, prefix + ".bn_beta", {ch}, c.bn->beta.data());
        push_ref(out, prefix + ".bn_mean", {ch}, c.bn->mean.data());
        push_ref(out, prefix + ".bn_var", {ch}, c.bn->var.data());
        push_ref(out, prefix + ".bn_eps", {1}, &c.bn->eps);
    }
}

}  // namespace

std::vector<ParamRef> Model::param_refs() {
    std::vector<ParamRef> out;
    push_ref(out, "stem.weight", {stem_weight_.rows, stem_weight_.cols}, stem_weight_.data.data());
    push_ref(out, "stem.bias", {static_cast<int>(stem_bias_.size())}, stem_bias_.data());
    for (size_t i = 0; i < transitions_.size(); ++i) {
        const std::string p = "transition" + std::to_string(i);
        push_ref(out, p + ".weight", {transitions_[i].weight.rows, transitions_[i].weight.cols},
                 transitions_[i].weight.data.data());
        push_ref(out, p + ".bias", {static_cast<int>(transitions_[i].bias.size())},
                 transitions_[i].bias.data());
    }
    for (size_t i = 0; i < blocks_.size(); ++i) {
        Block& b = blocks_[i];
        const std::string p = "block" + std::to_string(i);
        if (b.kind == BlockKind::RepMixer) {
            conv_refs(out, p + ".mixer.temporal", b.mixer.temporal);
            conv_refs(out, p + ".mixer.spatial", b.mixer.spatial);
        } else {
            STAttentionParams& a = b.attn;
            push_ref(out, p + ".attn.tpe", {a.tpe.rows, a.tpe.cols}, a.tpe.data.data());
            conv_refs(out, p + ".attn.cpe", a.cpe);
            const int c = a.channels();
            push_ref(out, p + ".attn.wq", {c, c}, a.wq.data.data());
            push_ref(out, p + ".attn.bq", {c}, a.bq.data());
            push_ref(out, p + ".attn.wk", {c, c}, a.wk.data.data());
            push_ref(out, p + ".attn.bk", {c}, a.bk.data());
            push_ref(out, p + ".attn.wv", {c, c}, a.wv.data.data());
            push_ref(out, p + ".attn.bv", {c}, a.bv.data());
            push_ref(out, p + ".attn.wo", {c, c}, a.wo.data.data());
            push_ref(out, p + ".attn.bo", {c}, a.bo.data());
            push_ref(out, p + ".attn.ln_scale", {c}, a.ln.scale.data());
            push_ref(out, p + ".attn.ln_shift", {c}, a.ln.shift.data());
        }
        conv_refs(out, p + ".ffn.dw", b.ffn.dw);
        push_ref(out, p + ".ffn.expand.weight", {b.ffn.expand.rows, b.ffn.expand.cols},
                 b.ffn.expand.data.data());
        push_ref(out, p + ".ffn.expand.bias", {static_cast<int>(b.ffn.expand_bias.size())},
                 b.ffn.expand_bias.data());
        push_ref(out, p + ".ffn.project.weight", {b.ffn.project.rows, b.ffn.project.cols},
                 b.ffn.project.data.data());
        push_ref(out, p + ".ffn.project.bias", {static_cast<int>(b.ffn.project_bias.size())},
                 b.ffn.project_bias.data());
    }
    push_ref(out, "proj.weight", {proj_.rows, proj_.cols}, proj_.data.data());
    return out;
}

std::vector<const float*> Model::param_data() const {
    std::vector<ParamRef> refs = const_cast<Model*>(this)->param_refs();
    std::vector<const float*> out;
    out.reserve(refs.size());
    for (const ParamRef& r : refs) out.push_back(r.data);
    return out;
}

std::vector<ParamRef> Model::trainable_refs(const std::vector<std::string>& subsets) {
    std::vector<ParamRef> all = param_refs();
    std::vector<ParamRef> out;
    auto match = [](const ParamRef& r, const std::string& sub) {
        if (r.name.find(".bn_") != std::string::npos) return false;
        if (sub == "all") return true;
        if (sub == "proj") return r.name.rfind("proj.", 0) == 0;
        if (sub == "stem") return r.name.rfind("stem.", 0) == 0;
        if (sub == "tpe") return r.name.find(".tpe") != std::string::npos;
        if (sub == "temporal") return r.name.find(".temporal.") != std::string::npos;
        if (sub == "spatial") return r.name.find(".spatial.") != std::string::npos;
        if (sub == "cpe") return r.name.find(".cpe.") != std::string::npos;
        if (sub == "attn") return r.name.find(".attn.") != std::string::npos;
        if (sub == "ffn") return r.name.find(".ffn.") != std::string::npos;
        throw ParseError("unknown trainable subset '" + sub + "'");
    };
    for (const ParamRef& r : all) {
        for (const std::string& sub : subsets) {
            if (match(r, sub)) {
                out.push_back(r);
                break;
            }
        }
    }
    return out;
}

Matrix temporal_pool(const Matrix& frames) {
    if (frames.rows < 1) throw ShapeError("temporal_pool: need at least one frame");
    Matrix out(1, frames.cols);
    for (int i = 0; i < frames.rows; ++i)
        for (int j = 0; j < frames.cols; ++j) out.at(0, j) += frames.at(i, j);
    const float inv = 1.0f / static_cast<float>(frames.rows);
    for (int j = 0; j < frames.cols; ++j) out.at(0, j) *= inv;
    return out;
}

}  // namespace stmix
