#include "microforge/autodiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "microforge/common/hash.hpp"

namespace mf::ad {

namespace {

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const std::string& in, std::size_t pos) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    return v;
}

[[noreturn]] void corrupt(const std::string& why) { throw std::runtime_error("checkpoint: " + why); }

}  // namespace

const Tensor& Checkpoint::get(const std::string& name) const {
    for (const auto& p : params)
        if (p.name == name) return p.tensor;
    throw std::out_of_range("checkpoint: no parameter '" + name + "'");
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    nlohmann::ordered_json header;
    header["version"] = kCheckpointVersion;
    header["config"] = ckpt.config;
    auto& plist = header["params"] = nlohmann::ordered_json::array();
    std::uint64_t offset = 0;
    for (const auto& p : ckpt.params) {
        plist.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", offset}});
        offset += 8 * p.tensor.size();
    }
    header["metadata"] = ckpt.metadata;
    const std::string text = header.dump();

    std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
    put_u64(out, text.size());
    out += text;
    out.reserve(out.size() + offset);
    for (const auto& p : ckpt.params)
        for (double v : p.tensor.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
    return out;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const std::string bytes = serialize_checkpoint(ckpt);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot write " + path.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

Checkpoint parse_checkpoint(const std::string& in) {
    if (in.size() < 16 || std::memcmp(in.data(), kCheckpointMagic, 8) != 0) corrupt("bad magic");
    const std::uint64_t hlen = get_u64(in, 8);
    if (hlen > in.size() - 16) corrupt("truncated header");
    const auto header = nlohmann::ordered_json::parse(in.begin() + 16, in.begin() + 16 + static_cast<long>(hlen));
    if (header.at("version").get<int>() != kCheckpointVersion) corrupt("unsupported version");
    const std::size_t blob = 16 + hlen;

    Checkpoint ck;
    ck.config = header.at("config");
    ck.metadata = header.at("metadata");
    std::uint64_t expected = 0;
    for (const auto& p : header.at("params")) {
        const Shape shape = p.at("shape").get<Shape>();
        const std::uint64_t off = p.at("offset").get<std::uint64_t>();
        if (off != expected) corrupt("non-contiguous parameter blobs");
        const std::size_t n = shape_size(shape);
        if (blob + off + 8 * n > in.size()) corrupt("truncated blob for " + p.at("name").get<std::string>());
        std::vector<double> values(n);
        for (std::size_t i = 0; i < n; ++i) values[i] = std::bit_cast<double>(get_u64(in, blob + off + 8 * i));
        ck.params.push_back({p.at("name").get<std::string>(), Tensor::from(shape, std::move(values))});
        expected = off + 8 * n;
    }
    if (blob + expected != in.size()) corrupt("trailing bytes");
    return ck;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_checkpoint(ss.str());
}

std::string parameter_hash(const std::vector<NamedTensor>& params) {
    Fnv1a h;
    for (const auto& p : params) {
        h.update(p.name);
        for (std::size_t d : p.tensor.shape()) h.update(&d, sizeof d);
        h.update(p.tensor.values());
    }
    return h.hex();
}

}  // namespace mf::ad
