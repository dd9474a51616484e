#include "masklrf/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <map>
#include <sstream>

#include <zlib.h>

namespace masklrf {

namespace {

using Kind = CheckpointError::Kind;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    std::uint64_t u(int width) {
        need(static_cast<std::size_t>(width));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)]))
                 << (8 * i);
        pos_ += static_cast<std::size_t>(width);
        return v;
    }
    std::uint32_t u32() { return static_cast<std::uint32_t>(u(4)); }
    std::uint64_t u64() { return u(8); }
    std::string_view take(std::size_t n) {
        need(n);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw CheckpointError(Kind::malformed, "checkpoint: unexpected end of data");
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

std::map<std::string, std::string> parse_kv(std::string_view text) {
    std::map<std::string, std::string> kv;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw CheckpointError(Kind::malformed, "checkpoint: bad config line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

}  // namespace

std::uint32_t crc32_of(std::string_view bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
    return static_cast<std::uint32_t>(crc);
}

std::string serialize_checkpoint(const ModelState& state) {
    std::string out = "MLRF";
    put_u32(out, kCheckpointVersion);
    std::string cfg;
    for (const auto& [k, v] : state.config.to_kv()) cfg += k + "=" + v + "\n";
    put_u64(out, cfg.size());
    out += cfg;
    put_u32(out, static_cast<std::uint32_t>(state.tensors.size()));
    for (const auto& t : state.tensors) {
        put_u32(out, static_cast<std::uint32_t>(t.name.size()));
        out += t.name;
        put_u32(out, 2);
        put_u64(out, t.value.rows);
        put_u64(out, t.value.cols);
        for (double x : t.value.data) put_u64(out, std::bit_cast<std::uint64_t>(x));
    }
    put_u32(out, crc32_of(out));
    return out;
}

ModelState parse_checkpoint(std::string_view bytes) {
    if (bytes.size() < 4 || bytes.substr(0, 4) != "MLRF") throw CheckpointError(Kind::bad_magic, "checkpoint: wrong magic");
    if (bytes.size() < 12) throw CheckpointError(Kind::crc_mismatch, "checkpoint: CRC mismatch (file truncated)");
    Reader head(bytes.substr(4, 4));
    const auto version = head.u32();
    if (version != kCheckpointVersion)
        throw CheckpointError(Kind::bad_version, "checkpoint: unsupported version " + std::to_string(version));
    const auto body = bytes.substr(0, bytes.size() - 4);
    Reader tail(bytes.substr(bytes.size() - 4));
    if (tail.u32() != crc32_of(body)) throw CheckpointError(Kind::crc_mismatch, "checkpoint: CRC mismatch");

    Reader r(body.substr(8));
    const auto cfg_len = r.u64();
    const auto kv = parse_kv(r.take(static_cast<std::size_t>(cfg_len)));
    for (const auto& [key, value] : ModelConfig{}.to_kv()) {
        (void)value;
        if (!kv.count(key)) throw CheckpointError(Kind::malformed, "checkpoint: config lacks key '" + key + "'");
    }
    ModelConfig cfg;
    ModelState state;
    try {
        cfg = ModelConfig::from_kv(kv, ModelConfig{});
        state = ModelState::skeleton(cfg);
    } catch (const std::invalid_argument& e) {
        throw CheckpointError(Kind::malformed, std::string("checkpoint: ") + e.what());
    }

    const auto count = r.u32();
    if (count != state.tensors.size())
        throw CheckpointError(Kind::shape_mismatch, "checkpoint: shape inconsistency (expected " +
                                                        std::to_string(state.tensors.size()) + " tensors, found " +
                                                        std::to_string(count) + ")");
    std::vector<bool> seen(state.tensors.size(), false);
    std::map<std::string, std::size_t> by_name;
    for (std::size_t i = 0; i < state.tensors.size(); ++i) by_name[state.tensors[i].name] = i;

    for (std::uint32_t t = 0; t < count; ++t) {
        const std::string name(r.take(r.u32()));
        const auto rank = r.u32();
        if (rank == 0 || rank > 2) throw CheckpointError(Kind::shape_mismatch, "checkpoint: unsupported rank for " + name);
        std::vector<std::uint64_t> dims(rank);
        for (auto& d : dims) d = r.u64();
        const std::uint64_t rows = rank == 2 ? dims[0] : 1;
        const std::uint64_t cols = dims.back();
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw CheckpointError(Kind::shape_mismatch, "checkpoint: shape inconsistency (unknown tensor " + name + ")");
        if (seen[it->second])
            throw CheckpointError(Kind::shape_mismatch, "checkpoint: shape inconsistency (duplicate tensor " + name + ")");
        seen[it->second] = true;
        auto& m = state.tensors[it->second].value;
        if (rows != m.rows || cols != m.cols)
            throw CheckpointError(Kind::shape_mismatch, "checkpoint: shape inconsistency for " + name + " (" +
                                                            std::to_string(rows) + "x" + std::to_string(cols) +
                                                            ", config implies " + shape_str(m) + ")");
        for (auto& x : m.data) x = std::bit_cast<double>(r.u64());
    }
    if (!r.done()) throw CheckpointError(Kind::malformed, "checkpoint: trailing bytes after tensor table");
    return state;
}

void save_checkpoint(const ModelState& state, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError(Kind::io, "cannot write " + path);
    const auto bytes = serialize_checkpoint(state);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(Kind::io, "write failed for " + path);
}

ModelState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(Kind::io, "cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_checkpoint(ss.str());
}

}  // namespace masklrf
