#pragma once

#include <utility>
#include <vector>

#include "ksnet/graph.hpp"
#include "ksnet/sharing.hpp"

namespace ksnet {

/// Saved forward state needed by backward: per-node outputs plus the
/// batchnorm/SE contexts.
template <Scalar T>
struct Trace {
    std::vector<Tensor<T>> out;
    std::vector<BnCtx<T>> bn;
    std::vector<SeCtx<T>> se;
};

/// Per-site parameter gradients, aligned with each node's leading trainable
/// param_ids. These are per-site only: sharing-group accumulation happens in
/// the store afterwards.
template <Scalar T>
using SiteGrads = std::vector<std::vector<Tensor<T>>>;

template <Scalar T>
struct ForwardOpts {
    bool training = true;
    bool update_running_stats = true;
};

/// Runs the graph in topological order. With `trace`, saves everything
/// backward() needs; without it, only the rolling activations are kept.
template <Scalar T>
Tensor<T> forward(const Graph& g, ParameterStore<T>& store, const Tensor<T>& x,
                  const ForwardOpts<T>& opts, Trace<T>* trace = nullptr) {
    KSNET_CHECK(x.rank() == 4 && x.dim(1) == g.in_ch && x.dim(2) == g.in_h && x.dim(3) == g.in_w,
                ShapeError, "forward: input ", shape_str(x.shape()), " does not match graph input (",
                g.in_ch, ",", g.in_h, ",", g.in_w, ")");
    std::vector<Tensor<T>> local;
    std::vector<Tensor<T>>& acts = trace ? trace->out : local;
    acts.assign(g.size(), Tensor<T>());
    if (trace) {
        trace->bn.assign(g.size(), BnCtx<T>());
        trace->se.assign(g.size(), SeCtx<T>());
    }
    acts[0] = x;
    for (std::size_t i = 1; i < g.size(); ++i) {
        const LayerNode& n = g.nodes[i];
        const Tensor<T>& in0 = acts[n.inputs.at(0)];
        switch (n.kind) {
            case LayerKind::conv2d:
                acts[i] = conv2d_forward(in0, store.value(n.param_ids[0]),
                                         store.value(n.param_ids[1]), n.hyper.conv);
                break;
            case LayerKind::batchnorm2d:
                acts[i] = batchnorm_forward(in0, store.value(n.param_ids[0]),
                                            store.value(n.param_ids[1]),
                                            store.value(n.param_ids[2]),
                                            store.value(n.param_ids[3]), n.hyper.eps,
                                            n.hyper.momentum, opts.training,
                                            opts.training && opts.update_running_stats,
                                            trace ? &trace->bn[i] : nullptr);
                break;
            case LayerKind::activation:
                acts[i] = activation_forward(n.hyper.act, in0);
                break;
            case LayerKind::global_avg_pool:
                acts[i] = global_avg_pool_forward(in0);
                break;
            case LayerKind::linear:
                acts[i] = linear_forward(in0, store.value(n.param_ids[0]),
                                         store.value(n.param_ids[1]));
                break;
            case LayerKind::residual_add:
                acts[i] = residual_add_forward(in0, acts[n.inputs.at(1)]);
                break;
            case LayerKind::se_block:
                acts[i] = se_forward(in0, store.value(n.param_ids[0]), store.value(n.param_ids[1]),
                                     store.value(n.param_ids[2]), store.value(n.param_ids[3]),
                                     trace ? &trace->se[i] : nullptr);
                break;
            case LayerKind::input:
                throw Error("forward: unexpected input node past position 0");
        }
    }
    return acts.back();
}

template <Scalar T>
struct BackwardResult {
    SiteGrads<T> site_grads;
    Tensor<T> input_grad;
};

/// Reverse sweep. Output gradients of nodes feeding several consumers are
/// summed in descending consumer order; parameter gradients stay per-site.
template <Scalar T>
BackwardResult<T> backward(const Graph& g, const ParameterStore<T>& store, const Trace<T>& trace,
                           const Tensor<T>& grad_last) {
    KSNET_CHECK(trace.out.size() == g.size(), Error, "backward: trace does not match graph");
    std::vector<Tensor<T>> gbuf(g.size());
    auto addg = [&](int node, Tensor<T>&& contrib) {
        if (gbuf[node].empty())
            gbuf[node] = std::move(contrib);
        else
            for (std::size_t k = 0; k < contrib.numel(); ++k) gbuf[node][k] += contrib[k];
    };

    BackwardResult<T> res;
    res.site_grads.assign(g.size(), {});
    gbuf.back() = grad_last;
    for (std::size_t i = g.size() - 1; i >= 1; --i) {
        if (gbuf[i].empty()) continue;  // dead branch
        const LayerNode& n = g.nodes[i];
        const int in0 = n.inputs.at(0);
        const Tensor<T>& x = trace.out[in0];
        switch (n.kind) {
            case LayerKind::conv2d: {
                ConvGrads<T> cg =
                    conv2d_backward(gbuf[i], x, store.value(n.param_ids[0]), n.hyper.conv);
                res.site_grads[i] = {std::move(cg.w), std::move(cg.b)};
                addg(in0, std::move(cg.x));
                break;
            }
            case LayerKind::batchnorm2d: {
                BnGrads<T> bg = batchnorm_backward(gbuf[i], trace.bn[i],
                                                   store.value(n.param_ids[0]));
                res.site_grads[i] = {std::move(bg.gamma), std::move(bg.beta)};
                addg(in0, std::move(bg.x));
                break;
            }
            case LayerKind::activation:
                addg(in0, activation_backward(n.hyper.act, gbuf[i], x));
                break;
            case LayerKind::global_avg_pool:
                addg(in0, global_avg_pool_backward(gbuf[i], x.shape()));
                break;
            case LayerKind::linear: {
                LinearGrads<T> lg = linear_backward(gbuf[i], x, store.value(n.param_ids[0]));
                res.site_grads[i] = {std::move(lg.w), std::move(lg.b)};
                addg(in0, std::move(lg.x));
                break;
            }
            case LayerKind::residual_add: {
                Tensor<T> dup = gbuf[i];
                addg(in0, std::move(dup));
                addg(n.inputs.at(1), std::move(gbuf[i]));
                break;
            }
            case LayerKind::se_block: {
                SeGrads<T> sg = se_backward(gbuf[i], x, store.value(n.param_ids[0]),
                                            store.value(n.param_ids[2]), trace.se[i]);
                res.site_grads[i] = {std::move(sg.w1), std::move(sg.b1), std::move(sg.w2),
                                     std::move(sg.b2)};
                addg(in0, std::move(sg.x));
                break;
            }
            case LayerKind::input:
                throw Error("backward: unexpected input node");
        }
        gbuf[i] = Tensor<T>();  // release as we go
    }
    res.input_grad = std::move(gbuf[0]);
    return res;
}

/// Merges per-site gradients into the store. Nodes are visited in ascending
/// layer-index order, so a shared kernel accumulates its member contributions
/// ascending — one deterministic reduction regardless of where the gradients
/// were computed.
template <Scalar T>
void accumulate_site_gradients(ParameterStore<T>& store, const Graph& g,
                               const SiteGrads<T>& site_grads) {
    KSNET_CHECK(site_grads.size() == g.size(), Error,
                "accumulate_site_gradients: size mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) {
        const LayerNode& n = g.nodes[i];
        const std::size_t slots = n.trainable_slots();
        if (slots == 0) continue;
        KSNET_CHECK(site_grads[i].size() == slots, Error, "node '", n.name, "' produced ",
                    site_grads[i].size(), " gradients, expected ", slots);
        for (std::size_t s = 0; s < slots; ++s) store.accumulate(n.param_ids[s], site_grads[i][s]);
    }
}

}  // namespace ksnet
