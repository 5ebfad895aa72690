#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "ksnet/tensor.hpp"

namespace ksnet {

// ---------------------------------------------------------------------------
// Convolution (grouped cross-correlation + per-output-channel bias)

struct ConvHyper {
    ConvGeom geom;
    std::size_t groups = 1;
    std::size_t in_ch = 0;
    std::size_t out_ch = 0;
};

template <Scalar T>
struct ConvGrads {
    Tensor<T> x, w, b;
};

namespace detail {

template <Scalar T>
void check_conv_args(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b,
                     const ConvHyper& hp) {
    KSNET_CHECK(x.rank() == 4, ShapeError, "conv2d: input must be (N,C,H,W), got ",
                shape_str(x.shape()));
    KSNET_CHECK(hp.groups >= 1 && hp.in_ch % hp.groups == 0 && hp.out_ch % hp.groups == 0,
                ShapeError, "conv2d: channels (", hp.in_ch, "->", hp.out_ch,
                ") not divisible by groups=", hp.groups);
    KSNET_CHECK(x.dim(1) == hp.in_ch, ShapeError, "conv2d: input has ", x.dim(1),
                " channels, layer expects ", hp.in_ch);
    const std::size_t cg = hp.in_ch / hp.groups;
    KSNET_CHECK(w.rank() == 4 && w.dim(0) == hp.out_ch && w.dim(1) == cg &&
                    w.dim(2) == hp.geom.kh && w.dim(3) == hp.geom.kw,
                ShapeError, "conv2d: weight ", shape_str(w.shape()), " inconsistent with (",
                hp.out_ch, ",", cg, ",", hp.geom.kh, ",", hp.geom.kw, ")");
    if (b)
        KSNET_CHECK(b->rank() == 1 && b->dim(0) == hp.out_ch, ShapeError, "conv2d: bias ",
                    shape_str(b->shape()), " must be (", hp.out_ch, ")");
}

}  // namespace detail

template <Scalar T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                         const ConvHyper& hp) {
    detail::check_conv_args(x, w, &b, hp);
    const std::size_t N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const std::size_t Ho = hp.geom.out_h(H), Wo = hp.geom.out_w(W);
    const std::size_t G = hp.groups, cg = hp.in_ch / G, og = hp.out_ch / G;
    const std::size_t ckk = cg * hp.geom.kh * hp.geom.kw;
    const std::size_t cols_n = Ho * Wo;
    const bool pointwise =
        hp.geom.kh == 1 && hp.geom.kw == 1 && hp.geom.sh == 1 && hp.geom.sw == 1 &&
        hp.geom.ph == 0 && hp.geom.pw == 0;

    Tensor<T> out({N, hp.out_ch, Ho, Wo});
    std::vector<T> cols;
    if (!pointwise) cols.resize(ckk * cols_n);
    for (std::size_t n = 0; n < N; ++n) {
        const T* xn = x.data() + n * hp.in_ch * H * W;
        T* on = out.data() + n * hp.out_ch * cols_n;
        for (std::size_t g = 0; g < G; ++g) {
            const T* colp;
            if (pointwise) {
                colp = xn + g * cg * H * W;  // columns == input slice, no copy
            } else {
                detail::im2col_sample(xn, hp.in_ch, H, W, g * cg, cg, hp.geom, Ho, Wo, cols.data());
                colp = cols.data();
            }
            matmul_into(w.data() + g * og * ckk, colp, on + g * og * cols_n, og, ckk, cols_n);
        }
        for (std::size_t co = 0; co < hp.out_ch; ++co) {
            const T bias = b[co];
            T* orow = on + co * cols_n;
            for (std::size_t i = 0; i < cols_n; ++i) orow[i] += bias;
        }
    }
    return out;
}

/// Gradients with respect to this site only; accumulation across a sharing
/// group happens later in the parameter store. grad_w sums over the batch in
/// ascending sample order.
template <Scalar T>
ConvGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& w,
                             const ConvHyper& hp) {
    detail::check_conv_args<T>(x, w, nullptr, hp);
    const std::size_t N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const std::size_t Ho = hp.geom.out_h(H), Wo = hp.geom.out_w(W);
    KSNET_CHECK(grad_out.rank() == 4 && grad_out.dim(0) == N && grad_out.dim(1) == hp.out_ch &&
                    grad_out.dim(2) == Ho && grad_out.dim(3) == Wo,
                ShapeError, "conv2d_backward: grad ", shape_str(grad_out.shape()),
                " does not match saved forward geometry (", N, ",", hp.out_ch, ",", Ho, ",", Wo,
                ")");
    const std::size_t G = hp.groups, cg = hp.in_ch / G, og = hp.out_ch / G;
    const std::size_t ckk = cg * hp.geom.kh * hp.geom.kw;
    const std::size_t cols_n = Ho * Wo;
    const bool pointwise =
        hp.geom.kh == 1 && hp.geom.kw == 1 && hp.geom.sh == 1 && hp.geom.sw == 1 &&
        hp.geom.ph == 0 && hp.geom.pw == 0;

    ConvGrads<T> gr{Tensor<T>(x.shape(), T(0)), Tensor<T>(w.shape(), T(0)),
                    Tensor<T>({hp.out_ch}, T(0))};

    for (std::size_t co = 0; co < hp.out_ch; ++co) {
        T acc = 0;
        for (std::size_t n = 0; n < N; ++n) {
            const T* row = grad_out.data() + (n * hp.out_ch + co) * cols_n;
            for (std::size_t i = 0; i < cols_n; ++i) acc += row[i];
        }
        gr.b[co] = acc;
    }

    std::vector<T> cols;
    std::vector<T> dcols(ckk * cols_n);
    if (!pointwise) cols.resize(ckk * cols_n);
    for (std::size_t n = 0; n < N; ++n) {
        const T* xn = x.data() + n * hp.in_ch * H * W;
        const T* gn = grad_out.data() + n * hp.out_ch * cols_n;
        T* gxn = gr.x.data() + n * hp.in_ch * H * W;
        for (std::size_t g = 0; g < G; ++g) {
            const T* colp;
            if (pointwise) {
                colp = xn + g * cg * H * W;
            } else {
                detail::im2col_sample(xn, hp.in_ch, H, W, g * cg, cg, hp.geom, Ho, Wo, cols.data());
                colp = cols.data();
            }
            // dW_g += dOut_g . cols^T
            matmul_nt_acc(gn + g * og * cols_n, colp, gr.w.data() + g * og * ckk, og, cols_n, ckk);
            // dCols = W_g^T . dOut_g, then scatter back to the input image
            matmul_tn_into(w.data() + g * og * ckk, gn + g * og * cols_n, dcols.data(), og, ckk,
                           cols_n);
            if (pointwise) {
                std::memcpy(gxn + g * cg * H * W, dcols.data(), sizeof(T) * cg * H * W);
            } else {
                detail::col2im_sample(dcols.data(), hp.in_ch, H, W, g * cg, cg, hp.geom, Ho, Wo,
                                      gxn);
            }
        }
    }
    return gr;
}

// ---------------------------------------------------------------------------
// Batch normalization. Normalization uses biased batch variance; the running
// variance is updated with the unbiased estimate; eval mode uses running
// statistics. Running stats are per layer site and never shared.

template <Scalar T>
struct BnCtx {
    Tensor<T> xhat;
    std::vector<T> inv_std;  // per channel
    bool training = true;
};

template <Scalar T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                            Tensor<T>& running_mean, Tensor<T>& running_var, double eps,
                            double momentum, bool training, bool update_running,
                            BnCtx<T>* ctx = nullptr) {
    KSNET_CHECK(x.rank() == 4, ShapeError, "batchnorm: input must be (N,C,H,W), got ",
                shape_str(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    KSNET_CHECK(gamma.numel() == C && beta.numel() == C && running_mean.numel() == C &&
                    running_var.numel() == C,
                ShapeError, "batchnorm: affine/running extents must equal channel count ", C);
    const std::size_t m = N * H * W;
    const std::size_t hw = H * W;

    Tensor<T> y(x.shape());
    if (ctx) {
        ctx->xhat = Tensor<T>(x.shape());
        ctx->inv_std.assign(C, T(0));
        ctx->training = training;
    }

    for (std::size_t c = 0; c < C; ++c) {
        T mean, istd;
        if (training) {
            KSNET_CHECK(m >= 2, NumericError,
                        "batchnorm: training-mode normalization needs at least 2 elements per "
                        "channel, got ",
                        m);
            T sum = 0;
            for (std::size_t n = 0; n < N; ++n) {
                const T* xc = x.data() + (n * C + c) * hw;
                for (std::size_t i = 0; i < hw; ++i) sum += xc[i];
            }
            mean = sum / static_cast<T>(m);
            T ssq = 0;
            for (std::size_t n = 0; n < N; ++n) {
                const T* xc = x.data() + (n * C + c) * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    const T d = xc[i] - mean;
                    ssq += d * d;
                }
            }
            const T var = ssq / static_cast<T>(m);
            istd = T(1) / std::sqrt(var + static_cast<T>(eps));
            if (update_running) {
                const T mom = static_cast<T>(momentum);
                running_mean[c] = (T(1) - mom) * running_mean[c] + mom * mean;
                running_var[c] = (T(1) - mom) * running_var[c] +
                                 mom * var * static_cast<T>(m) / static_cast<T>(m - 1);
            }
        } else {
            mean = running_mean[c];
            istd = T(1) / std::sqrt(running_var[c] + static_cast<T>(eps));
        }
        const T g = gamma[c], bt = beta[c];
        if (ctx) ctx->inv_std[c] = istd;
        for (std::size_t n = 0; n < N; ++n) {
            const T* xc = x.data() + (n * C + c) * hw;
            T* yc = y.data() + (n * C + c) * hw;
            T* xh = ctx ? ctx->xhat.data() + (n * C + c) * hw : nullptr;
            for (std::size_t i = 0; i < hw; ++i) {
                const T xhat = (xc[i] - mean) * istd;
                if (xh) xh[i] = xhat;
                yc[i] = g * xhat + bt;
            }
        }
    }
    return y;
}

template <Scalar T>
struct BnGrads {
    Tensor<T> x, gamma, beta;
};

template <Scalar T>
BnGrads<T> batchnorm_backward(const Tensor<T>& grad_out, const BnCtx<T>& ctx,
                              const Tensor<T>& gamma) {
    check_same_shape(grad_out, ctx.xhat, "batchnorm_backward");
    const std::size_t N = grad_out.dim(0), C = grad_out.dim(1);
    const std::size_t hw = grad_out.dim(2) * grad_out.dim(3);
    const std::size_t m = N * hw;
    BnGrads<T> gr{Tensor<T>(grad_out.shape()), Tensor<T>({C}), Tensor<T>({C})};
    for (std::size_t c = 0; c < C; ++c) {
        T sum_gy = 0, sum_gy_xhat = 0;
        for (std::size_t n = 0; n < N; ++n) {
            const T* gy = grad_out.data() + (n * C + c) * hw;
            const T* xh = ctx.xhat.data() + (n * C + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                sum_gy += gy[i];
                sum_gy_xhat += gy[i] * xh[i];
            }
        }
        gr.beta[c] = sum_gy;
        gr.gamma[c] = sum_gy_xhat;
        const T k = gamma[c] * ctx.inv_std[c];
        const T mean_gy = sum_gy / static_cast<T>(m);
        const T mean_gy_xhat = sum_gy_xhat / static_cast<T>(m);
        for (std::size_t n = 0; n < N; ++n) {
            const T* gy = grad_out.data() + (n * C + c) * hw;
            const T* xh = ctx.xhat.data() + (n * C + c) * hw;
            T* gx = gr.x.data() + (n * C + c) * hw;
            if (ctx.training) {
                for (std::size_t i = 0; i < hw; ++i)
                    gx[i] = k * (gy[i] - mean_gy - xh[i] * mean_gy_xhat);
            } else {
                for (std::size_t i = 0; i < hw; ++i) gx[i] = k * gy[i];
            }
        }
    }
    return gr;
}

// ---------------------------------------------------------------------------
// Activations. GELU defaults to the tanh approximation
//   0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)));
// gelu_erf is the exact-erf form kept for verification.

enum class ActKind { relu, gelu, gelu_erf, sigmoid };

inline const char* act_name(ActKind k) {
    switch (k) {
        case ActKind::relu: return "relu";
        case ActKind::gelu: return "gelu";
        case ActKind::gelu_erf: return "gelu_erf";
        case ActKind::sigmoid: return "sigmoid";
    }
    return "?";
}

namespace detail {
constexpr double kGeluCoef = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;

template <Scalar T>
T sigmoid_scalar(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}
}  // namespace detail

template <Scalar T>
Tensor<T> activation_forward(ActKind kind, const Tensor<T>& x) {
    switch (kind) {
        case ActKind::relu:
            return map(x, [](T v) { return v > T(0) ? v : T(0); });
        case ActKind::sigmoid:
            return map(x, [](T v) { return detail::sigmoid_scalar(v); });
        case ActKind::gelu:
            return map(x, [](T v) {
                const T u = static_cast<T>(detail::kGeluCoef) *
                            (v + static_cast<T>(detail::kGeluCubic) * v * v * v);
                return T(0.5) * v * (T(1) + std::tanh(u));
            });
        case ActKind::gelu_erf:
            return map(x, [](T v) {
                return T(0.5) * v * (T(1) + std::erf(v * static_cast<T>(M_SQRT1_2)));
            });
    }
    throw Error("activation_forward: unknown kind");
}

/// Backward via the saved input.
template <Scalar T>
Tensor<T> activation_backward(ActKind kind, const Tensor<T>& grad_out, const Tensor<T>& x) {
    check_same_shape(grad_out, x, "activation_backward");
    Tensor<T> gx(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const T v = x[i];
        T d;
        switch (kind) {
            case ActKind::relu:
                d = v > T(0) ? T(1) : T(0);
                break;
            case ActKind::sigmoid: {
                const T s = detail::sigmoid_scalar(v);
                d = s * (T(1) - s);
                break;
            }
            case ActKind::gelu: {
                const T a = static_cast<T>(detail::kGeluCubic);
                const T c = static_cast<T>(detail::kGeluCoef);
                const T u = c * (v + a * v * v * v);
                const T t = std::tanh(u);
                d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3) * a * v * v);
                break;
            }
            case ActKind::gelu_erf: {
                const T cdf = T(0.5) * (T(1) + std::erf(v * static_cast<T>(M_SQRT1_2)));
                const T pdf = std::exp(T(-0.5) * v * v) * static_cast<T>(0.3989422804014327);
                d = cdf + v * pdf;
                break;
            }
            default:
                throw Error("activation_backward: unknown kind");
        }
        gx[i] = grad_out[i] * d;
    }
    return gx;
}

// ---------------------------------------------------------------------------
// Global average pool: (N,C,H,W) -> (N,C)

template <Scalar T>
Tensor<T> global_avg_pool_forward(const Tensor<T>& x) {
    KSNET_CHECK(x.rank() == 4, ShapeError, "global_avg_pool: input must be (N,C,H,W), got ",
                shape_str(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> y({N, C});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const T* xc = x.data() + (n * C + c) * hw;
            T sum = 0;
            for (std::size_t i = 0; i < hw; ++i) sum += xc[i];
            y.at2(n, c) = sum / static_cast<T>(hw);
        }
    return y;
}

template <Scalar T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& grad_out,
                                   const std::vector<std::size_t>& in_shape) {
    const std::size_t N = in_shape[0], C = in_shape[1], hw = in_shape[2] * in_shape[3];
    KSNET_CHECK(grad_out.rank() == 2 && grad_out.dim(0) == N && grad_out.dim(1) == C, ShapeError,
                "global_avg_pool_backward: grad ", shape_str(grad_out.shape()),
                " vs input ", shape_str(in_shape));
    Tensor<T> gx(in_shape);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const T g = grad_out.at2(n, c) / static_cast<T>(hw);
            T* p = gx.data() + (n * C + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) p[i] = g;
        }
    return gx;
}

// ---------------------------------------------------------------------------
// Linear: y = x.W^T + b with x (N,in), W (out,in), b (out)

template <Scalar T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    KSNET_CHECK(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(1), ShapeError,
                "linear: x ", shape_str(x.shape()), " vs W ", shape_str(w.shape()));
    KSNET_CHECK(b.numel() == w.dim(0), ShapeError, "linear: bias ", shape_str(b.shape()),
                " must be (", w.dim(0), ")");
    const std::size_t N = x.dim(0), in = x.dim(1), out = w.dim(0);
    Tensor<T> y({N, out}, T(0));
    matmul_nt_acc(x.data(), w.data(), y.data(), N, in, out);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < out; ++o) y.at2(n, o) += b[o];
    return y;
}

template <Scalar T>
struct LinearGrads {
    Tensor<T> x, w, b;
};

template <Scalar T>
LinearGrads<T> linear_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& w) {
    const std::size_t N = x.dim(0), in = x.dim(1), out = w.dim(0);
    KSNET_CHECK(grad_out.rank() == 2 && grad_out.dim(0) == N && grad_out.dim(1) == out, ShapeError,
                "linear_backward: grad ", shape_str(grad_out.shape()));
    LinearGrads<T> gr{Tensor<T>({N, in}), Tensor<T>({out, in}), Tensor<T>({out}, T(0))};
    matmul_into(grad_out.data(), w.data(), gr.x.data(), N, out, in);
    matmul_tn_into(grad_out.data(), x.data(), gr.w.data(), N, out, in);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < out; ++o) gr.b[o] += grad_out.at2(n, o);
    return gr;
}

// ---------------------------------------------------------------------------
// Residual add. Backward duplicates the incoming gradient to both branches.

template <Scalar T>
Tensor<T> residual_add_forward(const Tensor<T>& a, const Tensor<T>& b) {
    return add(a, b);
}

// ---------------------------------------------------------------------------
// Squeeze-and-excitation: global pool -> bottleneck MLP -> sigmoid gate
// rescaling channels. w1 is (C/r, C), w2 is (C, C/r).

template <Scalar T>
struct SeCtx {
    Tensor<T> squeeze;  // (N,C)
    Tensor<T> hidden;   // (N,C/r) post-relu
    Tensor<T> gate;     // (N,C)
};

template <Scalar T>
Tensor<T> se_forward(const Tensor<T>& x, const Tensor<T>& w1, const Tensor<T>& b1,
                     const Tensor<T>& w2, const Tensor<T>& b2, SeCtx<T>* ctx = nullptr) {
    KSNET_CHECK(x.rank() == 4, ShapeError, "se_block: input must be (N,C,H,W), got ",
                shape_str(x.shape()));
    const std::size_t N = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
    KSNET_CHECK(w1.rank() == 2 && w1.dim(1) == C && w2.rank() == 2 && w2.dim(0) == C &&
                    w2.dim(1) == w1.dim(0),
                ShapeError, "se_block: weight shapes ", shape_str(w1.shape()), " / ",
                shape_str(w2.shape()), " inconsistent with C=", C);
    Tensor<T> s = global_avg_pool_forward(x);
    Tensor<T> h = activation_forward(ActKind::relu, linear_forward(s, w1, b1));
    Tensor<T> e = activation_forward(ActKind::sigmoid, linear_forward(h, w2, b2));
    Tensor<T> y(x.shape());
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const T g = e.at2(n, c);
            const T* xc = x.data() + (n * C + c) * hw;
            T* yc = y.data() + (n * C + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) yc[i] = xc[i] * g;
        }
    if (ctx) {
        ctx->squeeze = std::move(s);
        ctx->hidden = std::move(h);
        ctx->gate = std::move(e);
    }
    return y;
}

template <Scalar T>
struct SeGrads {
    Tensor<T> x, w1, b1, w2, b2;
};

template <Scalar T>
SeGrads<T> se_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& w1,
                       const Tensor<T>& w2, const SeCtx<T>& ctx) {
    check_same_shape(grad_out, x, "se_backward");
    const std::size_t N = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
    const std::size_t Cr = w1.dim(0);

    // Gate gradient and the direct x path.
    Tensor<T> ge({N, C});
    SeGrads<T> gr;
    gr.x = Tensor<T>(x.shape());
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const T g = ctx.gate.at2(n, c);
            const T* gy = grad_out.data() + (n * C + c) * hw;
            const T* xc = x.data() + (n * C + c) * hw;
            T* gx = gr.x.data() + (n * C + c) * hw;
            T acc = 0;
            for (std::size_t i = 0; i < hw; ++i) {
                acc += gy[i] * xc[i];
                gx[i] = gy[i] * g;
            }
            ge.at2(n, c) = acc;
        }

    // Through the sigmoid gate.
    Tensor<T> gz2({N, C});
    for (std::size_t i = 0; i < gz2.numel(); ++i) {
        const T e = ctx.gate[i];
        gz2[i] = ge[i] * e * (T(1) - e);
    }
    gr.w2 = Tensor<T>({C, Cr}, T(0));
    matmul_tn_into(gz2.data(), ctx.hidden.data(), gr.w2.data(), N, C, Cr);
    gr.b2 = Tensor<T>({C}, T(0));
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) gr.b2[c] += gz2.at2(n, c);
    Tensor<T> gh({N, Cr}, T(0));
    matmul_into(gz2.data(), w2.data(), gh.data(), N, C, Cr);

    // Through the relu bottleneck (hidden > 0 iff pre-activation > 0).
    Tensor<T> gz1({N, Cr});
    for (std::size_t i = 0; i < gz1.numel(); ++i)
        gz1[i] = ctx.hidden[i] > T(0) ? gh[i] : T(0);
    gr.w1 = Tensor<T>({Cr, C}, T(0));
    matmul_tn_into(gz1.data(), ctx.squeeze.data(), gr.w1.data(), N, Cr, C);
    gr.b1 = Tensor<T>({Cr}, T(0));
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < Cr; ++c) gr.b1[c] += gz1.at2(n, c);
    Tensor<T> gs({N, C}, T(0));
    matmul_into(gz1.data(), w1.data(), gs.data(), N, Cr, C);

    // Squeeze path back into x.
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const T g = gs.at2(n, c) / static_cast<T>(hw);
            T* gx = gr.x.data() + (n * C + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) gx[i] += g;
        }
    return gr;
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy, mean over the batch, stabilized by max-subtraction.

template <Scalar T>
struct LossResult {
    T loss;
    Tensor<T> grad_logits;  // (softmax - onehot) / N
};

template <Scalar T>
LossResult<T> softmax_xent(const Tensor<T>& logits, const std::vector<int>& labels) {
    KSNET_CHECK(logits.rank() == 2, ShapeError, "softmax_xent: logits must be (N,K), got ",
                shape_str(logits.shape()));
    const std::size_t N = logits.dim(0), K = logits.dim(1);
    KSNET_CHECK(labels.size() == N, ShapeError, "softmax_xent: ", labels.size(), " labels for ", N,
                " rows");
    LossResult<T> r{T(0), Tensor<T>({N, K})};
    for (std::size_t n = 0; n < N; ++n) {
        const int y = labels[n];
        KSNET_CHECK(y >= 0 && static_cast<std::size_t>(y) < K, Error,
                    "softmax_xent: label ", y, " out of range [0,", K, ")");
        const T* row = logits.data() + n * K;
        T mx = row[0];
        for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        T denom = 0;
        for (std::size_t k = 0; k < K; ++k) denom += std::exp(row[k] - mx);
        const T log_denom = std::log(denom);
        r.loss += -(row[y] - mx - log_denom);
        T* g = r.grad_logits.data() + n * K;
        for (std::size_t k = 0; k < K; ++k) {
            const T p = std::exp(row[k] - mx) / denom;
            g[k] = (p - (static_cast<std::size_t>(y) == k ? T(1) : T(0))) / static_cast<T>(N);
        }
    }
    r.loss /= static_cast<T>(N);
    return r;
}

}  // namespace ksnet
