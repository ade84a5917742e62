#include "stmix/retrieval.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "stmix/weights.hpp"

namespace stmix {

SimMatrix build_sim(const EmbeddingMatrix& v, const EmbeddingMatrix& t) {
    if (v.cols != t.cols) throw ShapeError("build_sim: embedding dims differ");
    NormalizedRows nv = l2_normalize_rows(v);
    NormalizedRows nt = l2_normalize_rows(t);
    if (!nv.zero_rows.empty() || !nt.zero_rows.empty())
        throw ShapeError("build_sim: zero-norm embedding row");
    Matrix tt(t.cols, t.rows);
    for (int i = 0; i < t.rows; ++i)
        for (int j = 0; j < t.cols; ++j) tt.at(j, i) = nt.m.at(i, j);
    return matmul(nv.m, tt);
}

double recall_at_1(const SimMatrix& s, const std::vector<int>& ground_truth) {
    if (static_cast<int>(ground_truth.size()) != s.rows)
        throw ShapeError("recall_at_1: ground truth size mismatch");
    int hits = 0;
    for (int i = 0; i < s.rows; ++i) {
        if (ground_truth[i] < 0 || ground_truth[i] >= s.cols)
            throw ShapeError("recall_at_1: ground-truth index out of range");
        int best = 0;
        for (int j = 1; j < s.cols; ++j)
            if (s.at(i, j) > s.at(i, best)) best = j;
        if (best == ground_truth[i]) ++hits;
    }
    return s.rows == 0 ? 0.0 : static_cast<double>(hits) / s.rows;
}

double multiple_choice_accuracy(const EmbeddingMatrix& video_embs,
                                const std::vector<EmbeddingMatrix>& candidates_per_video,
                                const std::vector<int>& correct_index) {
    const int n = video_embs.rows;
    if (static_cast<int>(candidates_per_video.size()) != n ||
        static_cast<int>(correct_index.size()) != n)
        throw ShapeError("multiple_choice_accuracy: per-video list size mismatch");
    int hits = 0;
    for (int i = 0; i < n; ++i) {
        const EmbeddingMatrix& cand = candidates_per_video[i];
        if (cand.rows < 2) throw ShapeError("multiple_choice_accuracy: need >= 2 candidates");
        if (correct_index[i] < 0 || correct_index[i] >= cand.rows)
            throw ShapeError("multiple_choice_accuracy: correct index out of range");
        Matrix vi(1, video_embs.cols);
        for (int j = 0; j < video_embs.cols; ++j) vi.at(0, j) = video_embs.at(i, j);
        SimMatrix s = build_sim(vi, cand);
        int best = 0;
        for (int j = 1; j < s.cols; ++j)
            if (s.at(0, j) > s.at(0, best)) best = j;
        if (best == correct_index[i]) ++hits;
    }
    return static_cast<double>(hits) / n;
}

EmbeddingMatrix read_embeddings_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IOError("cannot open embeddings file: " + path);
    std::string line;
    if (!std::getline(f, line)) throw ParseError("empty embeddings file: " + path, 1);
    int dim = -1, count = -1;
    if (std::sscanf(line.c_str(), "dim=%d,count=%d", &dim, &count) != 2)
        throw ParseError("expected header 'dim=D,count=N' in " + path, 1);
    if (dim < 1 || count < 0) throw ParseError("bad dim/count in " + path, 1);
    EmbeddingMatrix e(count, dim);
    for (int i = 0; i < count; ++i) {
        if (!std::getline(f, line))
            throw ParseError("expected " + std::to_string(count) + " rows in " + path, i + 2);
        std::istringstream ls(line);
        std::string cell;
        for (int j = 0; j < dim; ++j) {
            if (!std::getline(ls, cell, ','))
                throw ParseError("row has fewer than " + std::to_string(dim) + " values", i + 2);
            try {
                e.at(i, j) = std::stof(cell);
            } catch (const std::exception&) {
                throw ParseError("bad numeric value '" + cell + "'", i + 2);
            }
        }
        std::string extra;
        if (std::getline(ls, extra, ',') && !extra.empty())
            throw ParseError("row has more than " + std::to_string(dim) + " values", i + 2);
    }
    return e;
}

void write_embeddings_csv(const EmbeddingMatrix& e, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IOError("cannot open for writing: " + path);
    f << "dim=" << e.cols << ",count=" << e.rows << "\n";
    for (int i = 0; i < e.rows; ++i) {
        for (int j = 0; j < e.cols; ++j) {
            if (j) f << ",";
            f << e.at(i, j);
        }
        f << "\n";
    }
}

void save_embeddings_binary(const EmbeddingMatrix& e, const std::string& path) {
    std::ostringstream header;
    header << "fused=0\nconfig_hash=0\nconfig_lines=0\ntensors=1\n";
    header << "embeddings " << e.rows << "x" << e.cols << " 0 "
           << static_cast<std::uint64_t>(e.rows) * e.cols << "\n";
    const std::string h = header.str();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IOError("cannot open for writing: " + path);
    f.write("STMX", 4);
    const std::uint32_t version = 1, hlen = static_cast<std::uint32_t>(h.size());
    f.write(reinterpret_cast<const char*>(&version), 4);
    f.write(reinterpret_cast<const char*>(&hlen), 4);
    f.write(h.data(), static_cast<std::streamsize>(h.size()));
    f.write(reinterpret_cast<const char*>(e.data.data()),
            static_cast<std::streamsize>(e.data.size() * sizeof(float)));
}

EmbeddingMatrix load_embeddings(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw IOError("cannot open embeddings file: " + path);
    char magic[4] = {0};
    probe.read(magic, 4);
    probe.close();
    if (std::memcmp(magic, "STMX", 4) != 0) return read_embeddings_csv(path);

    std::vector<std::uint8_t> bytes = read_file_bytes(path);
    StoreInfo info = inspect_store(bytes);
    const TensorInfo* tensor = nullptr;
    for (const TensorInfo& t : info.tensors)
        if (t.name == "embeddings") tensor = &t;
    if (!tensor || tensor->shape.size() != 2)
        throw WeightError(WeightError::Kind::Header,
                          "store does not hold a rank-2 'embeddings' tensor");
    std::uint32_t hlen = 0;
    std::memcpy(&hlen, bytes.data() + 8, 4);
    EmbeddingMatrix e(tensor->shape[0], tensor->shape[1]);
    std::memcpy(e.data.data(), bytes.data() + 12 + hlen + tensor->byte_offset,
                tensor->count * sizeof(float));
    return e;
}

std::string video_prompt(const std::string& label) { return "a video of " + label; }

}  // namespace stmix
