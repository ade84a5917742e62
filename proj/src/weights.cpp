#include "stmix/weights.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace stmix {

namespace {

constexpr char kMagic[4] = {'S', 'T', 'M', 'X'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& b, size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[off + i]) << (8 * i);
    return v;
}

std::string shape_str(const std::vector<int>& shape) {
    std::string s;
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s;
}

std::vector<int> parse_shape(const std::string& s) {
    std::vector<int> shape;
    std::istringstream is(s);
    std::string part;
    while (std::getline(is, part, 'x')) shape.push_back(std::stoi(part));
    return shape;
}

}  // namespace

std::vector<std::uint8_t> save_model(const Model& m) {
    Model& mm = const_cast<Model&>(m);
    std::vector<ParamRef> refs = mm.param_refs();

    std::ostringstream header;
    header << "fused=" << (m.fused() ? 1 : 0) << "\n";
    header << "config_hash=" << m.config().hash() << "\n";
    const std::string cfg = m.config().canonical_text();
    int cfg_lines = 0;
    for (char c : cfg)
        if (c == '\n') ++cfg_lines;
    header << "config_lines=" << cfg_lines << "\n" << cfg;
    header << "tensors=" << refs.size() << "\n";
    std::uint64_t offset = 0;
    for (const ParamRef& r : refs) {
        header << r.name << " " << shape_str(r.shape) << " " << offset << " " << r.count << "\n";
        offset += r.count * sizeof(float);
    }
    const std::string htext = header.str();

    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(htext.size()));
    out.insert(out.end(), htext.begin(), htext.end());
    for (const ParamRef& r : refs) {
        const size_t pos = out.size();
        out.resize(pos + r.count * sizeof(float));
        std::memcpy(out.data() + pos, r.data, r.count * sizeof(float));
    }
    return out;
}

StoreInfo inspect_store(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 12) throw WeightError(WeightError::Kind::Truncated, "file too short");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw WeightError(WeightError::Kind::Magic, "bad magic (expected STMX)");
    StoreInfo info;
    info.version = get_u32(bytes, 4);
    if (info.version != kVersion)
        throw WeightError(WeightError::Kind::Version,
                          "unsupported format version " + std::to_string(info.version));
    const std::uint32_t hlen = get_u32(bytes, 8);
    if (bytes.size() < 12 + static_cast<size_t>(hlen))
        throw WeightError(WeightError::Kind::Truncated, "header extends past end of file");
    const std::string htext(bytes.begin() + 12, bytes.begin() + 12 + hlen);
    std::istringstream is(htext);
    std::string line;

    auto expect_kv = [&](const std::string& key) -> std::string {
        if (!std::getline(is, line) || line.rfind(key + "=", 0) != 0)
            throw WeightError(WeightError::Kind::Header, "missing header field " + key);
        return line.substr(key.size() + 1);
    };
    try {
        info.fused = std::stoi(expect_kv("fused")) != 0;
        info.config_hash = std::stoull(expect_kv("config_hash"));
        const int cfg_lines = std::stoi(expect_kv("config_lines"));
        std::ostringstream cfg;
        for (int i = 0; i < cfg_lines; ++i) {
            if (!std::getline(is, line))
                throw WeightError(WeightError::Kind::Header, "truncated config section");
            cfg << line << "\n";
        }
        info.config_text = cfg.str();
        const size_t ntensors = std::stoul(expect_kv("tensors"));
        const std::uint64_t payload = bytes.size() - 12 - hlen;
        for (size_t i = 0; i < ntensors; ++i) {
            if (!std::getline(is, line))
                throw WeightError(WeightError::Kind::Header, "truncated tensor table");
            std::istringstream ls(line);
            TensorInfo t;
            std::string shape;
            if (!(ls >> t.name >> shape >> t.byte_offset >> t.count))
                throw WeightError(WeightError::Kind::Header, "malformed tensor entry: " + line);
            t.shape = parse_shape(shape);
            std::uint64_t n = 1;
            for (int d : t.shape) n *= static_cast<std::uint64_t>(d);
            if (n != t.count)
                throw WeightError(WeightError::Kind::Header,
                                  "shape/count mismatch for tensor " + t.name);
            if (t.byte_offset + t.count * sizeof(float) > payload)
                throw WeightError(WeightError::Kind::Truncated,
                                  "payload truncated for tensor " + t.name);
            info.tensors.push_back(std::move(t));
        }
    } catch (const WeightError&) {
        throw;
    } catch (const std::exception& e) {
        throw WeightError(WeightError::Kind::Header, std::string("malformed header: ") + e.what());
    }
    return info;
}

Model load_model(const std::vector<std::uint8_t>& bytes) {
    StoreInfo info = inspect_store(bytes);
    ModelConfig cfg;
    try {
        cfg = ModelConfig::parse(info.config_text);
    } catch (const std::exception& e) {
        throw WeightError(WeightError::Kind::Header, std::string("embedded config: ") + e.what());
    }
    if (cfg.hash() != info.config_hash)
        throw WeightError(WeightError::Kind::Header, "config hash mismatch");

    Model m = Model::random(cfg, 0);
    if (info.fused) m = m.reparameterized();
    std::vector<ParamRef> refs = m.param_refs();
    if (refs.size() != info.tensors.size())
        throw WeightError(WeightError::Kind::Header, "tensor count does not match model");
    const std::uint32_t hlen = get_u32(bytes, 8);
    const std::uint8_t* payload = bytes.data() + 12 + hlen;
    for (size_t i = 0; i < refs.size(); ++i) {
        const TensorInfo& t = info.tensors[i];
        if (t.name != refs[i].name || t.shape != refs[i].shape)
            throw WeightError(WeightError::Kind::Header,
                              "tensor " + t.name + " does not match model layout");
        std::memcpy(refs[i].data, payload + t.byte_offset, t.count * sizeof(float));
    }
    return m;
}

Model load_model(const std::vector<std::uint8_t>& bytes, BlockMode expected) {
    StoreInfo info = inspect_store(bytes);
    if (expected == BlockMode::Train && info.fused)
        throw WeightError(WeightError::Kind::Header,
                          "store holds fused weights; cannot load into train mode");
    if (expected == BlockMode::Fused && !info.fused)
        throw WeightError(WeightError::Kind::Header,
                          "store holds train-form weights; cannot load into fused mode");
    return load_model(bytes);
}

void save_model_file(const Model& m, const std::string& path) {
    std::vector<std::uint8_t> bytes = save_model(m);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IOError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IOError("write failed: " + path);
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IOError("cannot open: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

Model load_model_file(const std::string& path) { return load_model(read_file_bytes(path)); }

}  // namespace stmix
