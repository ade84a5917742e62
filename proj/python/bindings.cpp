// Python bindings for the core operations: depthwise convolutions, branch
// folding, the encoder model, the contrastive loss, and retrieval metrics.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "stmix/bench.hpp"
#include "stmix/contrastive.hpp"
#include "stmix/retrieval.hpp"
#include "stmix/weights.hpp"

namespace py = pybind11;
using namespace stmix;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

TokenGrid grid_from_array(const FloatArray& a) {
    if (a.ndim() != 4) throw ShapeError("expected a (t, h, w, c) float array");
    TokenGrid g(int(a.shape(0)), int(a.shape(1)), int(a.shape(2)), int(a.shape(3)));
    std::copy(a.data(), a.data() + a.size(), g.data.begin());
    return g;
}

py::array_t<float> grid_to_array(const TokenGrid& g) {
    py::array_t<float> a({g.t, g.h, g.w, g.c});
    std::copy(g.data.begin(), g.data.end(), a.mutable_data());
    return a;
}

Matrix matrix_from_array(const FloatArray& a) {
    if (a.ndim() != 2) throw ShapeError("expected a 2-d float array");
    Matrix m(int(a.shape(0)), int(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), m.data.begin());
    return m;
}

py::array_t<float> matrix_to_array(const Matrix& m) {
    py::array_t<float> a({m.rows, m.cols});
    std::copy(m.data.begin(), m.data.end(), a.mutable_data());
    return a;
}

std::vector<float> vector_from_array(const FloatArray& a) {
    if (a.ndim() != 1) throw ShapeError("expected a 1-d float array");
    return std::vector<float>(a.data(), a.data() + a.size());
}

Kernel2d kernel2d_from_array(const FloatArray& a) {
    if (a.ndim() != 3) throw ShapeError("expected a (c, kh, kw) kernel array");
    Kernel2d k(int(a.shape(0)), int(a.shape(1)), int(a.shape(2)));
    std::copy(a.data(), a.data() + a.size(), k.w.begin());
    return k;
}

Kernel1d kernel1d_from_array(const FloatArray& a) {
    if (a.ndim() != 2) throw ShapeError("expected a (c, kt) kernel array");
    Kernel1d k(int(a.shape(0)), int(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), k.w.begin());
    return k;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Spatiotemporal token-mixer core: convolutions, branch folding, "
              "video-text contrastive training pieces, and retrieval metrics.";

    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
    py::register_exception<IOError>(m, "IOError", PyExc_OSError);
    py::register_exception<WeightError>(m, "WeightError", PyExc_ValueError);

    // ---- tensor ops ----------------------------------------------------
    m.def(
        "dwconv2d",
        [](const FloatArray& x, const FloatArray& kernel, const FloatArray& bias) {
            return grid_to_array(
                dwconv2d(grid_from_array(x), kernel2d_from_array(kernel), vector_from_array(bias)));
        },
        py::arg("x"), py::arg("kernel"), py::arg("bias"),
        "Depthwise 2D convolution, zero-padded 'same', applied per frame.");
    m.def(
        "dwconv1d_temporal",
        [](const FloatArray& x, const FloatArray& kernel, const FloatArray& bias) {
            return grid_to_array(dwconv1d_temporal(grid_from_array(x), kernel1d_from_array(kernel),
                                                   vector_from_array(bias)));
        },
        py::arg("x"), py::arg("kernel"), py::arg("bias"),
        "Depthwise 1D convolution along the frame axis, zero-padded 'same'.");
    m.def(
        "softmax_rows",
        [](const FloatArray& x) { return matrix_to_array(softmax_rows(matrix_from_array(x))); },
        py::arg("x"));
    m.def(
        "gelu", [](const FloatArray& x) { return matrix_to_array(gelu(matrix_from_array(x))); },
        py::arg("x"));

    // ---- branch folding --------------------------------------------------
    m.def(
        "fold_bn_conv2d",
        [](const FloatArray& kernel, const FloatArray& bias, const FloatArray& gamma,
           const FloatArray& beta, const FloatArray& mean, const FloatArray& var, float eps) {
            FusableConv conv;
            conv.kind = ConvKind::Spatial2d;
            conv.k2 = kernel2d_from_array(kernel);
            conv.bias = vector_from_array(bias);
            BnStats bn(conv.k2.channels, eps);
            bn.gamma = vector_from_array(gamma);
            bn.beta = vector_from_array(beta);
            bn.mean = vector_from_array(mean);
            bn.var = vector_from_array(var);
            conv.bn = bn;
            FusableConv out = fold_bn(conv).conv;
            py::array_t<float> kout({out.k2.channels, out.k2.kh, out.k2.kw});
            std::copy(out.k2.w.begin(), out.k2.w.end(), kout.mutable_data());
            py::array_t<float> bout(py::ssize_t(out.bias.size()));
            std::copy(out.bias.begin(), out.bias.end(), bout.mutable_data());
            return py::make_tuple(kout, bout);
        },
        py::arg("kernel"), py::arg("bias"), py::arg("gamma"), py::arg("beta"), py::arg("mean"),
        py::arg("var"), py::arg("eps") = 1e-5f,
        "Fold batch-norm statistics into a depthwise 2D kernel and bias.");
    m.def(
        "fold_skip_conv2d",
        [](const FloatArray& kernel, const FloatArray& bias) {
            FusableConv conv;
            conv.kind = ConvKind::Spatial2d;
            conv.k2 = kernel2d_from_array(kernel);
            conv.bias = vector_from_array(bias);
            conv.skip = true;
            FusableConv out = fold_skip(conv).conv;
            py::array_t<float> kout({out.k2.channels, out.k2.kh, out.k2.kw});
            std::copy(out.k2.w.begin(), out.k2.w.end(), kout.mutable_data());
            py::array_t<float> bout(py::ssize_t(out.bias.size()));
            std::copy(out.bias.begin(), out.bias.end(), bout.mutable_data());
            return py::make_tuple(kout, bout);
        },
        py::arg("kernel"), py::arg("bias"),
        "Fold a residual identity branch into the kernel's center taps.");

    // ---- model ----------------------------------------------------------
    py::class_<Model>(m, "Model")
        .def_static(
            "random",
            [](const std::string& config_text, std::uint64_t seed) {
                return Model::random(ModelConfig::parse(config_text), seed);
            },
            py::arg("config_text"), py::arg("seed") = 0,
            "Seeded random model from `key = value` config text.")
        .def_property_readonly("fused", &Model::fused)
        .def_property_readonly("param_count", &Model::param_count)
        .def_property_readonly("flop_count", &Model::flop_count)
        .def_property_readonly("config_text",
                               [](const Model& m) { return m.config().canonical_text(); })
        .def(
            "reparameterized", [](const Model& m) { return m.reparameterized(); },
            "Fold every block into its inference form.")
        .def(
            "encode_video",
            [](const Model& m, const FloatArray& video) {
                Model::Encoded e = m.encode_video(grid_from_array(video));
                return py::make_tuple(matrix_to_array(e.frames), matrix_to_array(e.video));
            },
            py::arg("video"),
            "Returns (frame_embeddings, video_embedding); the video row is L2-normalized.");

    m.def("save_model", &save_model_file, py::arg("model"), py::arg("path"));
    m.def("load_model", &load_model_file, py::arg("path"));

    // ---- contrastive loss -------------------------------------------------
    m.def(
        "vtc_loss",
        [](const FloatArray& v, const FloatArray& t, float tau) {
            VTCBatch b{matrix_from_array(v), matrix_from_array(t), tau};
            VTCLoss l = vtc_loss(b);
            return py::make_tuple(l.total, l.v2t, l.t2v);
        },
        py::arg("video_embs"), py::arg("text_embs"), py::arg("tau") = 0.07f,
        "Symmetric InfoNCE over cosine similarities: (total, v2t, t2v).");
    m.def(
        "vtc_loss_grad",
        [](const FloatArray& v, const FloatArray& t, float tau) {
            VTCBatch b{matrix_from_array(v), matrix_from_array(t), tau};
            VTCGrad g = vtc_loss_grad(b);
            return py::make_tuple(matrix_to_array(g.dv), matrix_to_array(g.dt), g.dtau);
        },
        py::arg("video_embs"), py::arg("text_embs"), py::arg("tau") = 0.07f,
        "Analytic gradients w.r.t. raw embeddings and tau: (dv, dt, dtau).");

    // ---- retrieval ---------------------------------------------------------
    m.def(
        "build_sim",
        [](const FloatArray& v, const FloatArray& t) {
            return matrix_to_array(build_sim(matrix_from_array(v), matrix_from_array(t)));
        },
        py::arg("video_embs"), py::arg("text_embs"));
    m.def(
        "recall_at_1",
        [](const FloatArray& sim, const std::vector<int>& gt) {
            return recall_at_1(matrix_from_array(sim), gt);
        },
        py::arg("sim"), py::arg("ground_truth"));
    m.def(
        "multiple_choice_accuracy",
        [](const FloatArray& videos, const std::vector<FloatArray>& candidates,
           const std::vector<int>& correct) {
            std::vector<EmbeddingMatrix> cands;
            for (const FloatArray& c : candidates) cands.push_back(matrix_from_array(c));
            return multiple_choice_accuracy(matrix_from_array(videos), cands, correct);
        },
        py::arg("video_embs"), py::arg("candidates_per_video"), py::arg("correct_index"));
    m.def("video_prompt", &video_prompt, py::arg("label"));

    // ---- latency harness ----------------------------------------------------
    m.def(
        "run_bench",
        [](const std::string& module, int t, int h, int w, int c, int layers, int warmup,
           int timed, std::uint64_t seed) {
            BenchSpec spec;
            spec.module = parse_module(module);
            spec.t = t;
            spec.h = h;
            spec.w = w;
            spec.c = c;
            spec.layers = layers;
            spec.warmup = warmup;
            spec.timed = timed;
            spec.seed = seed;
            LatencyRecord r = run_bench(spec);
            py::dict d;
            d["module"] = module_name(r.spec.module);
            d["mean_ms"] = r.mean_ms;
            d["median_ms"] = r.median_ms;
            d["p5_ms"] = r.p5_ms;
            d["p95_ms"] = r.p95_ms;
            d["samples_ms"] = r.samples_ms;
            d["host"] = r.host;
            return d;
        },
        py::arg("module"), py::arg("t") = 8, py::arg("h") = 14, py::arg("w") = 14,
        py::arg("c") = 512, py::arg("layers") = 1, py::arg("warmup") = 1, py::arg("timed") = 10,
        py::arg("seed") = 0, "Time one fused block stack; returns latency statistics.");
}
