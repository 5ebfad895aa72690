#pragma once

#include <algorithm>
#include <cstring>
#include <numeric>
#include <utility>
#include <vector>

#include "ksnet/common.hpp"
#include "ksnet/rng.hpp"

namespace ksnet {

/// Dense row-major N-dimensional array. Activations are interpreted as
/// (batch, channels, height, width). Once an op has produced a tensor it is
/// treated as immutable; ops return fresh tensors or write into caller-owned
/// outputs, never into their inputs.
template <Scalar T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, T fill = T(0))
        : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor from(std::vector<std::size_t> shape, std::vector<T> data) {
        Tensor t;
        KSNET_CHECK(checked_numel(shape) == data.size(), ShapeError,
                    "Tensor::from: shape ", shape_str(shape), " wants ",
                    checked_numel(shape), " elements, got ", data.size());
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    const T& at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    T& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    const T& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    /// Same data, new shape. Element count must match.
    Tensor reshaped(std::vector<std::size_t> shape) const {
        KSNET_CHECK(checked_numel(shape) == numel(), ShapeError, "reshape ",
                    shape_str(shape_), " -> ", shape_str(shape), ": element count differs");
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    /// Converts between the 32- and 64-bit modes.
    template <Scalar U>
    Tensor<U> cast() const {
        Tensor<U> t(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) t[i] = static_cast<U>(data_[i]);
        return t;
    }

private:
    static std::size_t checked_numel(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t e : shape) {
            KSNET_CHECK(e >= 1, ShapeError, "tensor extent must be >= 1, shape ", shape_str(shape));
            n *= e;
        }
        return n;
    }

    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

// ---------------------------------------------------------------------------
// Elementwise ops. Inputs are never modified.

template <Scalar T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    KSNET_CHECK(a.same_shape(b), ShapeError, op, ": shape mismatch ",
                shape_str(a.shape()), " vs ", shape_str(b.shape()));
}

template <Scalar T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "add");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
    return out;
}

template <Scalar T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "sub");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
    return out;
}

template <Scalar T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "mul");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
    return out;
}

template <Scalar T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
    return out;
}

template <Scalar T, typename F>
Tensor<T> map(const Tensor<T>& a, F f) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i]);
    return out;
}

template <Scalar T>
T inner(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "inner");
    T acc = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += a[i] * b[i];
    return acc;
}

// ---------------------------------------------------------------------------
// Matrix product. Fixed i/k/j loop order: every output element accumulates
// over k in ascending order, so results are bitwise reproducible.

template <Scalar T>
void matmul_into(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n) {
    std::memset(out, 0, sizeof(T) * m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* orow = out + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T aik = arow[kk];
            const T* brow = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
}

/// out(m,n) += a(m,k) * b(n,k)^T. Inner k loop ascending.
template <Scalar T>
void matmul_nt_acc(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* orow = out + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc = 0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            orow[j] += acc;
        }
    }
}

/// out(m,n) = a(k,m)^T * b(k,n). Outer k loop ascending, so each output
/// element accumulates in ascending k order.
template <Scalar T>
void matmul_tn_into(const T* a, const T* b, T* out, std::size_t k, std::size_t m, std::size_t n) {
    std::memset(out, 0, sizeof(T) * m * n);
    for (std::size_t kk = 0; kk < k; ++kk) {
        const T* arow = a + kk * m;
        const T* brow = b + kk * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T aki = arow[i];
            T* orow = out + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aki * brow[j];
        }
    }
}

template <Scalar T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    KSNET_CHECK(a.rank() == 2 && b.rank() == 2, ShapeError, "matmul: expects rank-2 tensors, got ",
                shape_str(a.shape()), " and ", shape_str(b.shape()));
    KSNET_CHECK(a.dim(1) == b.dim(0), ShapeError, "matmul: inner dimensions disagree, ",
                shape_str(a.shape()), " x ", shape_str(b.shape()));
    Tensor<T> out({a.dim(0), b.dim(1)});
    matmul_into(a.data(), b.data(), out.data(), a.dim(0), a.dim(1), b.dim(1));
    return out;
}

// ---------------------------------------------------------------------------
// im2col / col2im

struct ConvGeom {
    std::size_t kh = 1, kw = 1;
    std::size_t sh = 1, sw = 1;
    std::size_t ph = 0, pw = 0;

    std::size_t out_h(std::size_t h) const { return out_extent(h, kh, sh, ph, "height"); }
    std::size_t out_w(std::size_t w) const { return out_extent(w, kw, sw, pw, "width"); }

private:
    // Floor-division output size, the usual convolution convention: a
    // stride-2 3x3 conv with pad 1 halves 32 -> 16. Impossible geometries
    // (kernel larger than the padded input) are the error case.
    static std::size_t out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p,
                                  const char* axis) {
        KSNET_CHECK(in + 2 * p >= k, ShapeError,
                    "conv geometry: no valid output along ", axis, " (in=", in, " pad=", p,
                    " k=", k, ")");
        return (in + 2 * p - k) / s + 1;
    }
};

namespace detail {

// Patch extraction for one sample over a channel range [c0, c0+cn).
// dst is (cn*kh*kw) x (Ho*Wo), row-major. Zero padding outside bounds.
template <Scalar T>
void im2col_sample(const T* x, std::size_t C, std::size_t H, std::size_t W, std::size_t c0,
                   std::size_t cn, const ConvGeom& g, std::size_t Ho, std::size_t Wo, T* dst) {
    (void)C;
    const std::size_t cols = Ho * Wo;
    for (std::size_t c = 0; c < cn; ++c) {
        const T* xc = x + (c0 + c) * H * W;
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                T* row = dst + ((c * g.kh + ki) * g.kw + kj) * cols;
                for (std::size_t oh = 0; oh < Ho; ++oh) {
                    const std::ptrdiff_t ih =
                        static_cast<std::ptrdiff_t>(oh * g.sh + ki) - static_cast<std::ptrdiff_t>(g.ph);
                    T* rw = row + oh * Wo;
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) {
                        std::fill(rw, rw + Wo, T(0));
                        continue;
                    }
                    const T* xrow = xc + static_cast<std::size_t>(ih) * W;
                    for (std::size_t ow = 0; ow < Wo; ++ow) {
                        const std::ptrdiff_t iw =
                            static_cast<std::ptrdiff_t>(ow * g.sw + kj) - static_cast<std::ptrdiff_t>(g.pw);
                        rw[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W))
                                     ? T(0)
                                     : xrow[static_cast<std::size_t>(iw)];
                    }
                }
            }
        }
    }
}

// Adjoint of im2col_sample: scatters column gradients back, summing
// overlapping patch contributions. dst must be pre-zeroed by the caller.
template <Scalar T>
void col2im_sample(const T* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t c0,
                   std::size_t cn, const ConvGeom& g, std::size_t Ho, std::size_t Wo, T* dst) {
    (void)C;
    const std::size_t ncols = Ho * Wo;
    for (std::size_t c = 0; c < cn; ++c) {
        T* xc = dst + (c0 + c) * H * W;
        for (std::size_t ki = 0; ki < g.kh; ++ki) {
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                const T* row = cols + ((c * g.kh + ki) * g.kw + kj) * ncols;
                for (std::size_t oh = 0; oh < Ho; ++oh) {
                    const std::ptrdiff_t ih =
                        static_cast<std::ptrdiff_t>(oh * g.sh + ki) - static_cast<std::ptrdiff_t>(g.ph);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                    T* xrow = xc + static_cast<std::size_t>(ih) * W;
                    const T* rw = row + oh * Wo;
                    for (std::size_t ow = 0; ow < Wo; ++ow) {
                        const std::ptrdiff_t iw =
                            static_cast<std::ptrdiff_t>(ow * g.sw + kj) - static_cast<std::ptrdiff_t>(g.pw);
                        if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                        xrow[static_cast<std::size_t>(iw)] += rw[ow];
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// x: (N,C,H,W) -> columns (N, C*kh*kw, Ho*Wo). Column j of sample n holds
/// the receptive-field patch of output position j.
template <Scalar T>
Tensor<T> im2col(const Tensor<T>& x, const ConvGeom& g) {
    KSNET_CHECK(x.rank() == 4, ShapeError, "im2col: expects (N,C,H,W), got ", shape_str(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Ho = g.out_h(H), Wo = g.out_w(W);
    Tensor<T> cols({N, C * g.kh * g.kw, Ho * Wo});
    const std::size_t per = C * g.kh * g.kw * Ho * Wo;
    for (std::size_t n = 0; n < N; ++n) {
        detail::im2col_sample(x.data() + n * C * H * W, C, H, W, 0, C, g, Ho, Wo,
                              cols.data() + n * per);
    }
    return cols;
}

/// Adjoint of im2col for the same geometry: overlapping contributions sum.
template <Scalar T>
Tensor<T> col2im(const Tensor<T>& cols, std::size_t N, std::size_t C, std::size_t H, std::size_t W,
                 const ConvGeom& g) {
    const std::size_t Ho = g.out_h(H), Wo = g.out_w(W);
    KSNET_CHECK(cols.rank() == 3 && cols.dim(0) == N && cols.dim(1) == C * g.kh * g.kw &&
                    cols.dim(2) == Ho * Wo,
                ShapeError, "col2im: columns ", shape_str(cols.shape()),
                " inconsistent with geometry (N=", N, " C=", C, " H=", H, " W=", W, " k=", g.kh,
                "x", g.kw, ")");
    Tensor<T> x({N, C, H, W}, T(0));
    const std::size_t per = cols.dim(1) * cols.dim(2);
    for (std::size_t n = 0; n < N; ++n) {
        detail::col2im_sample(cols.data() + n * per, C, H, W, 0, C, g, Ho, Wo,
                              x.data() + n * C * H * W);
    }
    return x;
}

/// Fills with U(-bound, bound).
template <Scalar T>
void fill_uniform(Tensor<T>& t, Rng& rng, double bound) {
    for (std::size_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<T>(rng.uniform(-bound, bound));
}

template <Scalar T>
bool all_finite(const Tensor<T>& t) {
    for (std::size_t i = 0; i < t.numel(); ++i)
        if (!std::isfinite(static_cast<double>(t[i]))) return false;
    return true;
}

}  // namespace ksnet
