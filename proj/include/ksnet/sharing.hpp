#pragma once

#include <map>
#include <string>
#include <vector>

#include "ksnet/graph.hpp"
#include "ksnet/rng.hpp"
#include "ksnet/tensor.hpp"

namespace ksnet {

/// A set of isomorphic layer sites bound to one trainable kernel. Gradients
/// from every member site are summed into the kernel's gradient buffer, in
/// ascending layer-index order.
struct SharingGroup {
    int id = -1;
    std::string name;
    std::vector<ParamId> kernel_param_ids;  // weight (+bias)
    std::vector<int> member_sites;          // ascending layer indices
    LayerSignature signature;
};

/// How a freshly allocated parameter is filled by initialize_params.
struct InitSpec {
    enum class Kind { uniform, constant } kind = Kind::constant;
    double bound = 0.0;  // uniform(-bound, bound)
    double value = 0.0;  // constant
    static InitSpec uniform(double bound) { return {Kind::uniform, bound, 0.0}; }
    static InitSpec constant(double v) { return {Kind::constant, 0.0, v}; }
};

template <Scalar T>
struct ParamEntry {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;
    bool weight_decay = true;  // biases and BN affine pairs are excluded
    InitSpec init;
    int expected_contribs = 0;  // number of sites bound to this id
    int contribs = 0;           // gradient contributions since last zero_grads
};

/// Registry mapping parameter ids to storage. A shared kernel is a single
/// entry bound at many layer sites, so trainable_parameter_count() counts it
/// once.
template <Scalar T>
class ParameterStore {
public:
    ParamId add(std::string name, std::vector<std::size_t> shape, bool trainable,
                bool weight_decay, InitSpec init) {
        for (const auto& e : entries_)
            KSNET_CHECK(e.name != name, Error, "parameter store: duplicate name '", name, "'");
        ParamEntry<T> e;
        e.name = std::move(name);
        e.value = Tensor<T>(std::move(shape), static_cast<T>(init.value));
        e.grad = Tensor<T>(e.value.shape(), T(0));
        e.trainable = trainable;
        e.weight_decay = weight_decay;
        e.init = init;
        entries_.push_back(std::move(e));
        return ParamId{static_cast<int>(entries_.size()) - 1};
    }

    std::size_t size() const { return entries_.size(); }

    ParamEntry<T>& entry(ParamId id) { return entries_.at(check(id)); }
    const ParamEntry<T>& entry(ParamId id) const { return entries_.at(check(id)); }

    Tensor<T>& value(ParamId id) { return entry(id).value; }
    const Tensor<T>& value(ParamId id) const { return entry(id).value; }
    Tensor<T>& grad(ParamId id) { return entry(id).grad; }
    const Tensor<T>& grad(ParamId id) const { return entry(id).grad; }
    const std::string& name(ParamId id) const { return entry(id).name; }

    ParamId find(const std::string& name) const {
        for (std::size_t i = 0; i < entries_.size(); ++i)
            if (entries_[i].name == name) return ParamId{static_cast<int>(i)};
        return ParamId{};
    }

    /// Records that one more layer site reads this parameter.
    void note_binding(ParamId id) { entry(id).expected_contribs += 1; }

    /// grad[id] += g. Each call is one site contribution.
    void accumulate(ParamId id, const Tensor<T>& g) {
        ParamEntry<T>& e = entry(id);
        check_same_shape(e.grad, g, "gradient accumulate");
        for (std::size_t i = 0; i < g.numel(); ++i) e.grad[i] += g[i];
        e.contribs += 1;
    }

    void zero_grads() {
        for (auto& e : entries_) {
            e.grad.fill(T(0));
            e.contribs = 0;
        }
    }

    /// Asserts every trainable parameter received exactly the expected number
    /// of site contributions. Catches layers that were never bound or wired.
    void step_ready() const {
        for (const auto& e : entries_) {
            if (!e.trainable) continue;
            KSNET_CHECK(e.contribs == e.expected_contribs, Error, "step_ready: parameter '",
                        e.name, "' received ", e.contribs, " gradient contributions, expected ",
                        e.expected_contribs);
        }
    }

    /// Distinct trainable elements; shared kernels counted once.
    long long trainable_parameter_count() const {
        long long n = 0;
        for (const auto& e : entries_)
            if (e.trainable) n += static_cast<long long>(e.value.numel());
        return n;
    }

    int add_group(SharingGroup g) {
        g.id = static_cast<int>(groups_.size());
        groups_.push_back(std::move(g));
        return groups_.back().id;
    }
    const std::vector<SharingGroup>& groups() const { return groups_; }
    SharingGroup& group(int id) { return groups_.at(static_cast<std::size_t>(id)); }

    template <typename F>
    void for_each(F f) {
        for (std::size_t i = 0; i < entries_.size(); ++i) f(ParamId{static_cast<int>(i)}, entries_[i]);
    }
    template <typename F>
    void for_each(F f) const {
        for (std::size_t i = 0; i < entries_.size(); ++i) f(ParamId{static_cast<int>(i)}, entries_[i]);
    }

private:
    std::size_t check(ParamId id) const {
        KSNET_CHECK(id.valid() && static_cast<std::size_t>(id.idx) < entries_.size(), Error,
                    "invalid ParamId ", id.idx);
        return static_cast<std::size_t>(id.idx);
    }

    std::vector<ParamEntry<T>> entries_;
    std::vector<SharingGroup> groups_;
};

namespace detail {
inline double fan_in_bound(std::size_t fan_in) {
    // Kaiming-uniform, fan-in mode.
    return std::sqrt(6.0 / static_cast<double>(fan_in));
}
inline double bias_bound(std::size_t fan_in) {
    return 1.0 / std::sqrt(static_cast<double>(fan_in));
}
}  // namespace detail

/// Validates isomorphism and binds one kernel (weight + bias) at every member
/// site. Member hyperparameters must all equal `signature`; batch-norm sites
/// are rejected outright, as are plans that try to share them.
template <Scalar T>
SharingGroup& create_group(ParameterStore<T>& store, Graph& graph, const std::string& name,
                           const LayerSignature& signature, const std::vector<int>& member_sites) {
    KSNET_CHECK(!member_sites.empty(), Error, "sharing group '", name, "' has no member sites");
    for (std::size_t i = 1; i < member_sites.size(); ++i)
        KSNET_CHECK(member_sites[i] > member_sites[i - 1], Error, "sharing group '", name,
                    "': member sites must be strictly ascending");
    KSNET_CHECK(signature.kind != LayerKind::batchnorm2d, SharedBatchNormError,
                "sharing group '", name, "': batch normalization parameters cannot be shared");
    KSNET_CHECK(signature.kind == LayerKind::conv2d, IsomorphismError, "sharing group '", name,
                "': kind ", layer_kind_name(signature.kind), " is not a shareable kernel");
    for (int site : member_sites) {
        const LayerNode& node = graph.at(site);
        KSNET_CHECK(node.kind != LayerKind::batchnorm2d, SharedBatchNormError, "sharing group '",
                    name, "': member ", site, " ('", node.name,
                    "') is a batch normalization layer");
        const LayerSignature ms = node.signature();
        if (const char* field = signature.first_mismatch(ms)) {
            throw IsomorphismError(msg("sharing group '", name, "': member ", site, " ('",
                                       node.name, "') differs in ", field, " (group: ",
                                       signature.str(), "; member: ", ms.str(), ")"));
        }
        KSNET_CHECK(node.param_ids.empty(), Error, "sharing group '", name, "': member ", site,
                    " already bound");
    }

    const std::size_t cg = signature.in_ch / signature.groups;
    const std::size_t fan_in = cg * signature.kh * signature.kw;
    // One draw per group: the kernel is created once, not averaged from
    // per-site draws, so a tied unshared clone matches from step 0.
    ParamId w = store.add(name + ".weight", {signature.out_ch, cg, signature.kh, signature.kw},
                          true, true, InitSpec::uniform(detail::fan_in_bound(fan_in)));
    ParamId b = store.add(name + ".bias", {signature.out_ch}, true, false,
                          InitSpec::uniform(detail::bias_bound(fan_in)));

    SharingGroup g;
    g.name = name;
    g.kernel_param_ids = {w, b};
    g.member_sites = member_sites;
    g.signature = signature;
    int gid = store.add_group(std::move(g));

    for (int site : member_sites) {
        graph.at(site).param_ids = {w, b};
        store.note_binding(w);
        store.note_binding(b);
    }
    return store.group(gid);
}

/// Spec-level accumulation for one group: per-site kernel gradients, summed
/// in ascending layer-index order into the group's weight gradient.
/// `site_grads` must hold exactly one tensor per member site.
template <Scalar T>
void accumulate_shared_gradients(ParameterStore<T>& store, const SharingGroup& group,
                                 const std::map<int, Tensor<T>>& site_grads) {
    KSNET_CHECK(site_grads.size() == group.member_sites.size(), Error,
                "accumulate_shared_gradients: got ", site_grads.size(), " site gradients for ",
                group.member_sites.size(), " member sites");
    const ParamId w = group.kernel_param_ids.at(0);
    for (int site : group.member_sites) {  // member_sites are ascending
        auto it = site_grads.find(site);
        KSNET_CHECK(it != site_grads.end(), Error,
                    "accumulate_shared_gradients: missing gradient for site ", site);
        store.accumulate(w, it->second);
    }
}

template <Scalar T>
void zero_grads(ParameterStore<T>& store) {
    store.zero_grads();
}

template <Scalar T>
void step_ready(const ParameterStore<T>& store) {
    store.step_ready();
}

template <Scalar T>
long long trainable_parameter_count(const ParameterStore<T>& store) {
    return store.trainable_parameter_count();
}

/// Draws every parameter from its InitSpec, in ascending id order, each from
/// an id-keyed stream of `seed`. Same seed, same values, regardless of how
/// the ids were allocated.
template <Scalar T>
void initialize_params(ParameterStore<T>& store, std::uint64_t seed) {
    Rng root(seed);
    store.for_each([&](ParamId id, ParamEntry<T>& e) {
        if (e.init.kind == InitSpec::Kind::uniform) {
            Rng r = root.fork(static_cast<std::uint64_t>(id.idx));
            fill_uniform(e.value, r, e.init.bound);
        } else {
            e.value.fill(static_cast<T>(e.init.value));
        }
    });
}

}  // namespace ksnet
