#pragma once

#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace ksnet {

/// Scalar types the engine is instantiated with. f32 is the training
/// default, f64 is the verification mode used by gradient checks.
template <typename T>
concept Scalar = std::is_same_v<T, float> || std::is_same_v<T, double>;

namespace detail {
inline void msg_append(std::ostringstream&) {}
template <typename A, typename... Rest>
void msg_append(std::ostringstream& os, const A& a, const Rest&... rest) {
    os << a;
    msg_append(os, rest...);
}
}  // namespace detail

/// Builds an error/message string from heterogeneous pieces.
template <typename... Args>
std::string msg(const Args&... args) {
    std::ostringstream os;
    detail::msg_append(os, args...);
    return os.str();
}

/// Base error. kind() is a stable machine-readable slug used by the CLI's
/// error JSON.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
    virtual const char* kind() const noexcept { return "error"; }
};

class ShapeError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "shape_error"; }
};

class ConfigError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "config_error"; }
};

/// A sharing group member whose layer configuration deviates from the
/// group signature.
class IsomorphismError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "isomorphism_error"; }
};

/// Batch-normalization parameters can never be shared.
class SharedBatchNormError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "shared_batchnorm_error"; }
};

class NumericError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "numeric_error"; }
};

class IoError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "io_error"; }
};

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

#define KSNET_CHECK(cond, etype, ...)                  \
    do {                                               \
        if (!(cond)) throw etype(::ksnet::msg(__VA_ARGS__)); \
    } while (0)

}  // namespace ksnet
