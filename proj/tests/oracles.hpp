#pragma once

// Test-only oracles, deliberately independent of the library's compute
// paths: naive loop references, finite differences, a least-squares probe,
// scalar optimizer recurrences, and the tied unshared clone.

#include <cmath>
#include <map>
#include <vector>

#include "ksnet/ksnet.hpp"

namespace oracles {

using ksnet::Tensor;

template <typename T>
double rel_err_norm(const Tensor<T>& a, const Tensor<T>& b) {
    double d2 = 0, a2 = 0, b2 = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double da = static_cast<double>(a[i]);
        const double db = static_cast<double>(b[i]);
        d2 += (da - db) * (da - db);
        a2 += da * da;
        b2 += db * db;
    }
    const double denom = std::sqrt(a2) + std::sqrt(b2);
    return denom > 1e-300 ? std::sqrt(d2) / denom : std::sqrt(d2);
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.numel(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

/// Plain triple-loop matrix product (i, j, k).
template <typename T>
Tensor<T> naive_matmul(const Tensor<T>& a, const Tensor<T>& b) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> out({m, n}, T(0));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            T acc = 0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += a.at2(i, kk) * b.at2(kk, j);
            out.at2(i, j) = acc;
        }
    return out;
}

/// Direct nested-loop grouped cross-correlation with zero padding.
template <typename T>
Tensor<T> naive_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                       std::size_t groups, std::size_t stride, std::size_t pad) {
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Cout = w.dim(0), cg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    const std::size_t og = Cout / groups;
    const std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
    const std::size_t Wo = (W + 2 * pad - kw) / stride + 1;
    Tensor<T> y({N, Cout, Ho, Wo});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t co = 0; co < Cout; ++co) {
            const std::size_t g = co / og;
            for (std::size_t oh = 0; oh < Ho; ++oh)
                for (std::size_t ow = 0; ow < Wo; ++ow) {
                    T acc = b.numel() ? b[co] : T(0);
                    for (std::size_t ci = 0; ci < cg; ++ci)
                        for (std::size_t ki = 0; ki < kh; ++ki)
                            for (std::size_t kj = 0; kj < kw; ++kj) {
                                const std::ptrdiff_t ih =
                                    static_cast<std::ptrdiff_t>(oh * stride + ki) -
                                    static_cast<std::ptrdiff_t>(pad);
                                const std::ptrdiff_t iw =
                                    static_cast<std::ptrdiff_t>(ow * stride + kj) -
                                    static_cast<std::ptrdiff_t>(pad);
                                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H) || iw < 0 ||
                                    iw >= static_cast<std::ptrdiff_t>(W))
                                    continue;
                                acc += x.at4(n, g * cg + ci, static_cast<std::size_t>(ih),
                                             static_cast<std::size_t>(iw)) *
                                       w.at4(co, ci, ki, kj);
                            }
                    y.at4(n, co, oh, ow) = acc;
                }
        }
    return y;
}

/// Central finite differences of a scalar function with respect to every
/// element of `t` (mutated in place and restored).
template <typename F>
Tensor<double> finite_diff(Tensor<double>& t, F loss, double h = 1e-4) {
    Tensor<double> g(t.shape());
    for (std::size_t k = 0; k < t.numel(); ++k) {
        const double v = t[k];
        t[k] = v + h;
        const double lp = loss();
        t[k] = v - h;
        const double lm = loss();
        t[k] = v;
        g[k] = (lp - lm) / (2 * h);
    }
    return g;
}

/// Ridge least-squares probe on raw pixels, solved by Gaussian elimination.
/// Returns the training accuracy of the sign of the fitted score (2-class).
template <typename T>
double linear_probe_accuracy(const ksnet::Dataset<T>& ds, double ridge = 1e-3) {
    const std::size_t n = ds.size();
    const std::size_t d = ds.images.numel() / n + 1;  // + intercept
    std::vector<double> A(d * d, 0.0), rhs(d, 0.0);
    std::vector<double> row(d);
    for (std::size_t i = 0; i < n; ++i) {
        const T* px = ds.images.data() + i * (d - 1);
        for (std::size_t j = 0; j + 1 < d; ++j) row[j] = static_cast<double>(px[j]);
        row[d - 1] = 1.0;
        const double y = ds.labels[i] == 0 ? -1.0 : 1.0;
        for (std::size_t a = 0; a < d; ++a) {
            for (std::size_t bcol = 0; bcol < d; ++bcol) A[a * d + bcol] += row[a] * row[bcol];
            rhs[a] += row[a] * y;
        }
    }
    for (std::size_t a = 0; a < d; ++a) A[a * d + a] += ridge;
    // Gaussian elimination with partial pivoting.
    for (std::size_t col = 0; col < d; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < d; ++r)
            if (std::abs(A[r * d + col]) > std::abs(A[piv * d + col])) piv = r;
        if (piv != col) {
            for (std::size_t c = 0; c < d; ++c) std::swap(A[col * d + c], A[piv * d + c]);
            std::swap(rhs[col], rhs[piv]);
        }
        const double p = A[col * d + col];
        for (std::size_t r = col + 1; r < d; ++r) {
            const double f = A[r * d + col] / p;
            if (f == 0.0) continue;
            for (std::size_t c = col; c < d; ++c) A[r * d + c] -= f * A[col * d + c];
            rhs[r] -= f * rhs[col];
        }
    }
    std::vector<double> wsol(d);
    for (std::size_t col = d; col-- > 0;) {
        double acc = rhs[col];
        for (std::size_t c = col + 1; c < d; ++c) acc -= A[col * d + c] * wsol[c];
        wsol[col] = acc / A[col * d + col];
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T* px = ds.images.data() + i * (d - 1);
        double score = wsol[d - 1];
        for (std::size_t j = 0; j + 1 < d; ++j) score += wsol[j] * static_cast<double>(px[j]);
        const int pred = score >= 0 ? 1 : 0;
        if (pred == ds.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

/// Ordinary unshared model whose member-site weights are copies of the
/// shared model's kernels (and whose BN/SE/other parameters are copied
/// site-by-site). Forward-equal to the shared model by construction.
template <typename T>
ksnet::Model<T> tied_clone(const ksnet::ModelConfig& cfg, const ksnet::Model<T>& shared,
                           std::uint64_t seed) {
    ksnet::ModelConfig plain = cfg;
    plain.preset = ksnet::SharingPreset::none;
    plain.shared_stages.clear();
    ksnet::Model<T> clone = ksnet::build_model<T>(plain, seed);
    if (!(clone.graph.size() == shared.graph.size()))
        throw ksnet::Error("tied_clone: graphs differ in size");
    for (std::size_t i = 0; i < shared.graph.size(); ++i) {
        const auto& src = shared.graph.nodes[i];
        const auto& dst = clone.graph.nodes[i];
        if (src.param_ids.size() != dst.param_ids.size())
            throw ksnet::Error("tied_clone: node param arity differs");
        for (std::size_t s = 0; s < src.param_ids.size(); ++s)
            clone.store.value(dst.param_ids[s]) = shared.store.value(src.param_ids[s]);
    }
    return clone;
}

/// Worst relative error of Eq.-1 style accumulation: the shared kernel's
/// accumulated gradient versus the sum of the tied clone's per-site
/// gradients. Also verifies the two models' logits agree bitwise.
template <typename T>
struct Eq1Result {
    double worst_rel_err = 0;
    bool forward_bitwise_equal = false;
};

template <typename T>
Eq1Result<T> eq1_equivalence(const ksnet::ModelConfig& cfg, std::uint64_t seed,
                             std::size_t batch) {
    using namespace ksnet;
    Model<T> shared = build_model<T>(cfg, seed);
    Model<T> clone = tied_clone<T>(cfg, shared, seed + 1);

    Dataset<T> ds = synthetic_dataset<T>(seed + 2, std::max(batch, cfg.num_classes),
                                         cfg.num_classes, cfg.in_h, cfg.in_w);
    Tensor<T> images({batch, cfg.in_ch, cfg.in_h, cfg.in_w});
    std::copy(ds.images.data(), ds.images.data() + images.numel(), images.data());
    std::vector<int> labels(ds.labels.begin(), ds.labels.begin() + static_cast<long>(batch));

    ForwardOpts<T> opts{true, false};
    Trace<T> tr_shared, tr_clone;
    Tensor<T> logits_s = forward(shared.graph, shared.store, images, opts, &tr_shared);
    Tensor<T> logits_c = forward(clone.graph, clone.store, images, opts, &tr_clone);

    Eq1Result<T> result;
    result.forward_bitwise_equal = bitwise_equal(logits_s, logits_c);

    LossResult<T> loss_s = softmax_xent(logits_s, labels);
    LossResult<T> loss_c = softmax_xent(logits_c, labels);
    BackwardResult<T> bw_s = backward(shared.graph, shared.store, tr_shared, loss_s.grad_logits);
    BackwardResult<T> bw_c = backward(clone.graph, clone.store, tr_clone, loss_c.grad_logits);
    zero_grads(shared.store);
    accumulate_site_gradients(shared.store, shared.graph, bw_s.site_grads);
    step_ready(shared.store);

    for (const auto& group : shared.store.groups()) {
        for (std::size_t slot = 0; slot < group.kernel_param_ids.size(); ++slot) {
            const Tensor<T>& got = shared.store.grad(group.kernel_param_ids[slot]);
            Tensor<T> want(got.shape(), T(0));
            for (int site : group.member_sites) {
                const Tensor<T>& g = bw_c.site_grads[static_cast<std::size_t>(site)][slot];
                for (std::size_t k = 0; k < want.numel(); ++k) want[k] += g[k];
            }
            result.worst_rel_err = std::max(result.worst_rel_err, rel_err_norm(got, want));
        }
    }
    return result;
}

/// Scalar SGD-with-momentum reference recurrence.
struct ScalarSgd {
    double v = 0;
    double step(double& w, double g, double lr, double mu, double wd) {
        v = mu * v + g + wd * w;
        w -= lr * v;
        return w;
    }
};

/// Scalar AdamW reference recurrence.
struct ScalarAdamW {
    double m = 0, v = 0;
    long long t = 0;
    double step(double& w, double g, double lr, double b1, double b2, double eps, double wd) {
        w -= lr * wd * w;
        ++t;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mhat = m / (1 - std::pow(b1, static_cast<double>(t)));
        const double vhat = v / (1 - std::pow(b2, static_cast<double>(t)));
        w -= lr * mhat / (std::sqrt(vhat) + eps);
        return w;
    }
};

}  // namespace oracles
