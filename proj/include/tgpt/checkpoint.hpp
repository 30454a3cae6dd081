#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tgpt/io.hpp"
#include "tgpt/nn.hpp"

namespace tgpt {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'T', 'G', 'P', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian binary checkpoint:
///   magic[8] "TGPTCKPT", u32 version, u32 config length, config bytes
///   (key=value lines), u32 record count, then per record:
///   u32 name length, name bytes, u32 rank, u64 dims[rank], f32 values.
struct Checkpoint {
    std::string config;
    NamedTensors<float> records;

    [[nodiscard]] std::map<std::string, Tensor<float>> record_map() const { return to_map(records); }

    [[nodiscard]] std::map<std::string, std::string> config_map() const {
        std::map<std::string, std::string> kv;
        std::istringstream is(config);
        std::string line;
        while (std::getline(is, line)) {
            const auto eq = line.find('=');
            if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
        }
        return kv;
    }
};

namespace detail {

template <class U>
void put(std::string& out, U v) {
    char buf[sizeof(U)];
    std::memcpy(buf, &v, sizeof(U));
    out.append(buf, sizeof(U));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : b_(bytes) {}

    template <class U>
    U get() {
        need(sizeof(U));
        U v;
        std::memcpy(&v, b_.data() + pos_, sizeof(U));
        pos_ += sizeof(U);
        return v;
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    [[nodiscard]] bool done() const { return pos_ == b_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > b_.size()) throw std::runtime_error("checkpoint is truncated");
    }
    const std::string& b_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
    std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::put<std::uint32_t>(out, kCheckpointVersion);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.config.size()));
    out += ck.config;
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.records.size()));
    for (const auto& [name, t] : ck.records) {
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (auto dim : t.shape()) detail::put<std::uint64_t>(out, dim);
        const auto v = t.data();
        out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
    }
    return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
    detail::Reader r(bytes);
    if (r.bytes(sizeof kCheckpointMagic) != std::string(kCheckpointMagic, sizeof kCheckpointMagic)) {
        throw std::runtime_error("not a checkpoint file (bad magic)");
    }
    if (const auto ver = r.get<std::uint32_t>(); ver != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(ver));
    }
    Checkpoint ck;
    ck.config = r.bytes(r.get<std::uint32_t>());
    const auto n = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < n; ++i) {
        std::string name = r.bytes(r.get<std::uint32_t>());
        const auto rank = r.get<std::uint32_t>();
        Shape shape(rank);
        for (auto& dim : shape) dim = r.get<std::uint64_t>();
        std::vector<float> v(shape_numel(shape));
        const std::string raw = r.bytes(v.size() * sizeof(float));
        std::memcpy(v.data(), raw.data(), raw.size());
        ck.records.emplace_back(std::move(name), Tensor<float>::from(std::move(shape), std::move(v)));
    }
    if (!r.done()) throw std::runtime_error("checkpoint has trailing bytes");
    return ck;
}

/// Write-then-rename; a crash never leaves a partial checkpoint at `path`.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    io::write_atomic(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw std::runtime_error("missing checkpoint " + path.string());
    return decode_checkpoint(io::read_binary(path));
}

/// Float copies of the named tensors, for storing in a checkpoint.
template <class T>
NamedTensors<float> snapshot_records(const NamedTensors<T>& named) {
    NamedTensors<float> out;
    for (const auto& [n, t] : named) out.emplace_back(n, t.template cast<float>());
    return out;
}

}  // namespace tgpt
