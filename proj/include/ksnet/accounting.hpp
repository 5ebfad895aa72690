#pragma once

#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ksnet/models.hpp"

namespace ksnet {

/// One forward pass at the graph's input geometry (batch 1), 2 FLOPs per
/// multiply-accumulate. Convolutions and the linear-algebra layers carry all
/// the cost; BN/activation/pool are counted as 0.
struct CostRow {
    std::string name;
    std::string kind;
    long long params = 0;  // distinct trainable parameters this row contributes
    long long flops = 0;
};

struct CostReport {
    long long trainable_params = 0;
    long long flops = 0;
    std::vector<CostRow> rows;  // totals equal the sum of the breakdown
};

namespace detail {

inline long long node_param_count(const LayerNode& n) {
    switch (n.kind) {
        case LayerKind::conv2d: {
            const ConvHyper& c = n.hyper.conv;
            return static_cast<long long>(c.out_ch) *
                       static_cast<long long>((c.in_ch / c.groups) * c.geom.kh * c.geom.kw) +
                   static_cast<long long>(c.out_ch);
        }
        case LayerKind::batchnorm2d:
            return 2LL * static_cast<long long>(n.hyper.channels);
        case LayerKind::linear:
            return static_cast<long long>(n.hyper.out_features) *
                   (static_cast<long long>(n.hyper.in_features) + 1);
        case LayerKind::se_block: {
            const long long C = static_cast<long long>(n.hyper.channels);
            const long long Cr = C / static_cast<long long>(n.hyper.se_ratio);
            return 2 * C * Cr + Cr + C;
        }
        default:
            return 0;
    }
}

}  // namespace detail

/// Distinct trainable parameters of (graph, plan), computed in closed form
/// from layer hyperparameters alone. This is the oracle the ParameterStore's
/// own count is cross-checked against; the two never share code.
inline long long count_params(const Graph& g, const SharingPlan& plan) {
    // A shared kernel is charged to the group's first member site.
    std::map<int, bool> counted_site;  // site -> charged?
    for (const auto& d : plan.groups)
        for (std::size_t i = 0; i < d.members.size(); ++i) counted_site[d.members[i]] = (i == 0);

    long long total = 0;
    for (const auto& n : g.nodes) {
        auto it = counted_site.find(n.layer_index);
        if (it != counted_site.end()) {
            if (it->second) total += detail::node_param_count(n);
            // Batch-norm and SE parameters are per-site and unaffected by the
            // plan; conv nodes own nothing but their kernel, so nothing else
            // to add for non-charged members.
        } else {
            total += detail::node_param_count(n);
        }
    }
    return total;
}

/// FLOPs for one forward pass at the configured input geometry. Independent
/// of any sharing plan: sharing changes storage, not arithmetic.
inline long long count_flops(const Graph& g) {
    const std::vector<NodeShape> shapes = infer_shapes(g);
    long long total = 0;
    for (const auto& n : g.nodes) {
        switch (n.kind) {
            case LayerKind::conv2d: {
                const ConvHyper& c = n.hyper.conv;
                const NodeShape& out = shapes[static_cast<std::size_t>(n.layer_index)];
                total += 2LL * static_cast<long long>(out.h) * static_cast<long long>(out.w) *
                         static_cast<long long>(c.out_ch) *
                         static_cast<long long>((c.in_ch / c.groups) * c.geom.kh * c.geom.kw);
                break;
            }
            case LayerKind::linear:
                total += 2LL * static_cast<long long>(n.hyper.in_features) *
                         static_cast<long long>(n.hyper.out_features);
                break;
            case LayerKind::se_block: {
                const long long C = static_cast<long long>(n.hyper.channels);
                const long long Cr = C / static_cast<long long>(n.hyper.se_ratio);
                total += 4 * C * Cr;  // two fully connected layers
                break;
            }
            default:
                break;
        }
    }
    return total;
}

inline CostReport cost_report(const Graph& g, const SharingPlan& plan) {
    CostReport rep;
    std::map<int, std::pair<const SharingPlan::GroupDirective*, bool>> site_info;
    for (const auto& d : plan.groups)
        for (std::size_t i = 0; i < d.members.size(); ++i)
            site_info[d.members[i]] = {&d, i == 0};

    const std::vector<NodeShape> shapes = infer_shapes(g);
    for (const auto& n : g.nodes) {
        if (n.kind == LayerKind::input || n.kind == LayerKind::activation ||
            n.kind == LayerKind::residual_add || n.kind == LayerKind::global_avg_pool)
            continue;
        CostRow row;
        row.name = n.name;
        row.kind = layer_kind_name(n.kind);
        row.params = detail::node_param_count(n);
        auto it = site_info.find(n.layer_index);
        if (it != site_info.end()) {
            row.kind += msg(" [", it->second.first->name, "]");
            if (!it->second.second) row.params = 0;  // kernel charged at the first site
        }
        switch (n.kind) {
            case LayerKind::conv2d: {
                const ConvHyper& c = n.hyper.conv;
                const NodeShape& out = shapes[static_cast<std::size_t>(n.layer_index)];
                row.flops = 2LL * static_cast<long long>(out.h * out.w) *
                            static_cast<long long>(c.out_ch) *
                            static_cast<long long>((c.in_ch / c.groups) * c.geom.kh * c.geom.kw);
                break;
            }
            case LayerKind::linear:
                row.flops = 2LL * static_cast<long long>(n.hyper.in_features * n.hyper.out_features);
                break;
            case LayerKind::se_block:
                row.flops = 4LL * static_cast<long long>(n.hyper.channels) *
                            static_cast<long long>(n.hyper.channels / n.hyper.se_ratio);
                break;
            default:
                break;
        }
        rep.rows.push_back(std::move(row));
    }
    for (const auto& r : rep.rows) {
        rep.trainable_params += r.params;
        rep.flops += r.flops;
    }
    return rep;
}

/// baseline params / shared params.
inline double sharing_ratio(const CostReport& baseline, const CostReport& shared) {
    return static_cast<double>(baseline.trainable_params) /
           static_cast<double>(shared.trainable_params);
}

inline std::string cost_table(const CostReport& rep) {
    std::size_t name_w = 5, kind_w = 4;
    for (const auto& r : rep.rows) {
        name_w = std::max(name_w, r.name.size());
        kind_w = std::max(kind_w, r.kind.size());
    }
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(name_w) + 2) << "layer"
       << std::setw(static_cast<int>(kind_w) + 2) << "kind" << std::right << std::setw(14)
       << "params" << std::setw(16) << "flops" << "\n";
    for (const auto& r : rep.rows)
        os << std::left << std::setw(static_cast<int>(name_w) + 2) << r.name
           << std::setw(static_cast<int>(kind_w) + 2) << r.kind << std::right << std::setw(14)
           << r.params << std::setw(16) << r.flops << "\n";
    os << std::left << std::setw(static_cast<int>(name_w) + 2) << "total"
       << std::setw(static_cast<int>(kind_w) + 2) << "" << std::right << std::setw(14)
       << rep.trainable_params << std::setw(16) << rep.flops << "\n";
    os << "trainable parameters: " << rep.trainable_params << "\n";
    os << "forward GFLOPs (batch 1): " << std::fixed << std::setprecision(4)
       << static_cast<double>(rep.flops) / 1e9 << "\n";
    return os.str();
}

}  // namespace ksnet
