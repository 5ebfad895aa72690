#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "ksnet/tensor.hpp"

namespace ksnet {

// Checkpoint container, version 1. All integers and floats little-endian:
//   magic "KSNETCKP", u32 version,
//   u64 config length + run-config JSON (canonical, no output directory),
//   u64 state length + trainer-state JSON,
//   u32 parameter entry count, entries,
//   u32 optimizer entry count, entries.
// Entry: u32 name length, name bytes, u8 dtype (0=f32, 1=f64), u32 rank,
// u64 extents, raw values. Shared kernels appear once — entries mirror the
// distinct ParamIds of the store, including BN running stats.

inline constexpr char kCkptMagic[8] = {'K', 'S', 'N', 'E', 'T', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCkptVersion = 1;

/// Store-independent image of a checkpoint.
template <Scalar T>
struct CheckpointData {
    std::string config_json;
    std::string state_json;
    std::vector<std::pair<std::string, Tensor<T>>> params;
    std::vector<std::pair<std::string, Tensor<T>>> optim;
};

namespace detail {

inline void put_bytes(std::string& buf, const void* p, std::size_t n) {
    buf.append(static_cast<const char*>(p), n);
}
inline void put_u8(std::string& buf, std::uint8_t v) { buf.push_back(static_cast<char>(v)); }
inline void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <Scalar T>
void put_scalar(std::string& buf, T v) {
    if constexpr (std::is_same_v<T, float>)
        put_u32(buf, std::bit_cast<std::uint32_t>(v));
    else
        put_u64(buf, std::bit_cast<std::uint64_t>(v));
}

class CkptReader {
public:
    explicit CkptReader(const std::string& path) : path_(path) {
        std::ifstream in(path, std::ios::binary);
        KSNET_CHECK(in.good(), IoError, "cannot open checkpoint '", path, "'");
        std::ostringstream ss;
        ss << in.rdbuf();
        buf_ = ss.str();
    }

    std::size_t offset() const { return off_; }

    const char* take(std::size_t n) {
        KSNET_CHECK(off_ + n <= buf_.size(), IoError, "checkpoint '", path_, "': truncated at ",
                    "byte offset ", off_, " (need ", n, " more bytes, file has ",
                    buf_.size() - off_, ")");
        const char* p = buf_.data() + off_;
        off_ += n;
        return p;
    }

    std::uint8_t u8() { return static_cast<std::uint8_t>(*take(1)); }
    std::uint32_t u32() {
        const unsigned char* p = reinterpret_cast<const unsigned char*>(take(4));
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        const unsigned char* p = reinterpret_cast<const unsigned char*>(take(8));
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        return v;
    }
    std::string str(std::size_t n) { return std::string(take(n), n); }

    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::string buf_;
    std::size_t off_ = 0;
};

template <Scalar T>
void put_entry(std::string& buf, const std::string& name, const Tensor<T>& t) {
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    put_bytes(buf, name.data(), name.size());
    put_u8(buf, std::is_same_v<T, float> ? 0 : 1);
    put_u32(buf, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d = 0; d < t.rank(); ++d) put_u64(buf, t.dim(d));
    for (std::size_t i = 0; i < t.numel(); ++i) put_scalar(buf, t[i]);
}

template <Scalar T>
std::pair<std::string, Tensor<T>> read_entry(CkptReader& r) {
    const std::uint32_t name_len = r.u32();
    std::string name = r.str(name_len);
    const std::uint8_t dtype = r.u8();
    KSNET_CHECK(dtype <= 1, IoError, "checkpoint '", r.path(), "': bad dtype tag ", int(dtype),
                " at byte offset ", r.offset() - 1);
    const std::uint32_t rank = r.u32();
    KSNET_CHECK(rank >= 1 && rank <= 8, IoError, "checkpoint '", r.path(), "': bad rank ", rank,
                " at byte offset ", r.offset() - 4);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.u64());
    Tensor<T> t(shape);
    if (dtype == 0) {
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const std::uint32_t bits = r.u32();
            t[i] = static_cast<T>(std::bit_cast<float>(bits));
        }
    } else {
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const std::uint64_t bits = r.u64();
            t[i] = static_cast<T>(std::bit_cast<double>(bits));
        }
    }
    return {std::move(name), std::move(t)};
}

}  // namespace detail

template <Scalar T>
void save_checkpoint(const std::string& path, const CheckpointData<T>& data) {
    std::string buf;
    detail::put_bytes(buf, kCkptMagic, sizeof(kCkptMagic));
    detail::put_u32(buf, kCkptVersion);
    detail::put_u64(buf, data.config_json.size());
    detail::put_bytes(buf, data.config_json.data(), data.config_json.size());
    detail::put_u64(buf, data.state_json.size());
    detail::put_bytes(buf, data.state_json.data(), data.state_json.size());
    detail::put_u32(buf, static_cast<std::uint32_t>(data.params.size()));
    for (const auto& [name, t] : data.params) detail::put_entry(buf, name, t);
    detail::put_u32(buf, static_cast<std::uint32_t>(data.optim.size()));
    for (const auto& [name, t] : data.optim) detail::put_entry(buf, name, t);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    KSNET_CHECK(out.good(), IoError, "cannot write checkpoint '", path, "'");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    KSNET_CHECK(out.good(), IoError, "write failed for checkpoint '", path, "'");
}

template <Scalar T>
CheckpointData<T> load_checkpoint(const std::string& path) {
    detail::CkptReader r(path);
    const std::string magic = r.str(sizeof(kCkptMagic));
    KSNET_CHECK(std::memcmp(magic.data(), kCkptMagic, sizeof(kCkptMagic)) == 0, IoError,
                "checkpoint '", path, "': bad magic at byte offset 0");
    const std::uint32_t version = r.u32();
    KSNET_CHECK(version == kCkptVersion, IoError, "checkpoint '", path,
                "': unsupported format version ", version, " at byte offset 8");
    CheckpointData<T> data;
    data.config_json = r.str(static_cast<std::size_t>(r.u64()));
    data.state_json = r.str(static_cast<std::size_t>(r.u64()));
    const std::uint32_t n_params = r.u32();
    data.params.reserve(n_params);
    for (std::uint32_t i = 0; i < n_params; ++i) data.params.push_back(detail::read_entry<T>(r));
    const std::uint32_t n_optim = r.u32();
    data.optim.reserve(n_optim);
    for (std::uint32_t i = 0; i < n_optim; ++i) data.optim.push_back(detail::read_entry<T>(r));
    return data;
}

}  // namespace ksnet
