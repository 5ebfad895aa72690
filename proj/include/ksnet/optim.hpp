#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ksnet/sharing.hpp"

namespace ksnet {

enum class OptimKind { sgd, adamw };

inline const char* optim_name(OptimKind k) { return k == OptimKind::sgd ? "sgd" : "adamw"; }

struct OptimHyper {
    OptimKind kind = OptimKind::sgd;
    double lr = 0.1;
    double momentum = 0.9;  // sgd
    double beta1 = 0.9;     // adamw
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

enum class ScheduleKind { cosine, multistep, constant };

inline const char* schedule_name(ScheduleKind k) {
    switch (k) {
        case ScheduleKind::cosine: return "cosine";
        case ScheduleKind::multistep: return "multistep";
        case ScheduleKind::constant: return "constant";
    }
    return "?";
}

struct Schedule {
    ScheduleKind kind = ScheduleKind::constant;
    double base_lr = 0.1;
    std::size_t total_epochs = 1;
    std::vector<std::size_t> milestones;  // strictly increasing, < total_epochs
    double gamma = 0.1;
    double min_lr = 0.0;

    void validate() const {
        KSNET_CHECK(total_epochs >= 1, ConfigError, "schedule: total_epochs must be >= 1");
        for (std::size_t i = 0; i < milestones.size(); ++i) {
            KSNET_CHECK(milestones[i] < total_epochs, ConfigError, "schedule: milestone ",
                        milestones[i], " not below total_epochs ", total_epochs);
            if (i > 0)
                KSNET_CHECK(milestones[i] > milestones[i - 1], ConfigError,
                            "schedule: milestones must be strictly increasing");
        }
    }
};

/// Learning rate for `epoch` (stepped per epoch, not per iteration).
inline double lr_at(const Schedule& s, std::size_t epoch) {
    KSNET_CHECK(epoch <= s.total_epochs, ConfigError, "lr_at: epoch ", epoch,
                " out of range [0,", s.total_epochs, "]");
    switch (s.kind) {
        case ScheduleKind::cosine: {
            const double t = static_cast<double>(epoch) / static_cast<double>(s.total_epochs);
            return s.min_lr + 0.5 * (s.base_lr - s.min_lr) * (1.0 + std::cos(M_PI * t));
        }
        case ScheduleKind::multistep: {
            std::size_t passed = 0;
            for (std::size_t m : s.milestones)
                if (m <= epoch) ++passed;
            return s.base_lr * std::pow(s.gamma, static_cast<double>(passed));
        }
        case ScheduleKind::constant:
            return s.base_lr;
    }
    throw ConfigError("lr_at: unknown schedule kind");
}

/// SGD with momentum or AdamW over a parameter store. A shared kernel is a
/// single store entry, so it has exactly one state slot and is updated once
/// per step no matter how many sites bind it. Weight decay applies only to
/// entries flagged for it (conv/linear weights; never biases or BN affine).
template <Scalar T>
class Optimizer {
public:
    Optimizer(OptimHyper hyper, const ParameterStore<T>& store) : hyper_(hyper) {
        slot_a_.resize(store.size());
        slot_b_.resize(store.size());
        steps_.assign(store.size(), 0);
        store.for_each([&](ParamId id, const ParamEntry<T>& e) {
            if (!e.trainable) return;
            const std::size_t i = static_cast<std::size_t>(id.idx);
            slot_a_[i] = Tensor<T>(e.value.shape(), T(0));
            if (hyper_.kind == OptimKind::adamw) slot_b_[i] = Tensor<T>(e.value.shape(), T(0));
        });
    }

    const OptimHyper& hyper() const { return hyper_; }
    void set_lr(double lr) { hyper_.lr = lr; }

    void step(ParameterStore<T>& store) {
        store.for_each([&](ParamId id, ParamEntry<T>& e) {
            if (!e.trainable) return;
            KSNET_CHECK(all_finite(e.grad), NumericError, "optimizer: non-finite gradient in '",
                        e.name, "'");
            const std::size_t i = static_cast<std::size_t>(id.idx);
            const T lr = static_cast<T>(hyper_.lr);
            const T wd = e.weight_decay ? static_cast<T>(hyper_.weight_decay) : T(0);
            steps_[i] += 1;
            if (hyper_.kind == OptimKind::sgd) {
                const T mu = static_cast<T>(hyper_.momentum);
                Tensor<T>& v = slot_a_[i];
                for (std::size_t k = 0; k < e.value.numel(); ++k) {
                    v[k] = mu * v[k] + e.grad[k] + wd * e.value[k];
                    e.value[k] -= lr * v[k];
                }
            } else {
                const T b1 = static_cast<T>(hyper_.beta1);
                const T b2 = static_cast<T>(hyper_.beta2);
                const T eps = static_cast<T>(hyper_.eps);
                const T bc1 = T(1) - static_cast<T>(std::pow(hyper_.beta1,
                                                             static_cast<double>(steps_[i])));
                const T bc2 = T(1) - static_cast<T>(std::pow(hyper_.beta2,
                                                             static_cast<double>(steps_[i])));
                Tensor<T>& m = slot_a_[i];
                Tensor<T>& v = slot_b_[i];
                for (std::size_t k = 0; k < e.value.numel(); ++k) {
                    e.value[k] -= lr * wd * e.value[k];  // decoupled decay
                    m[k] = b1 * m[k] + (T(1) - b1) * e.grad[k];
                    v[k] = b2 * v[k] + (T(1) - b2) * e.grad[k] * e.grad[k];
                    const T mhat = m[k] / bc1;
                    const T vhat = v[k] / bc2;
                    e.value[k] -= lr * mhat / (std::sqrt(vhat) + eps);
                }
            }
        });
    }

    long long step_count(ParamId id) const { return steps_.at(static_cast<std::size_t>(id.idx)); }

    /// State access for checkpointing: slot_a is the SGD velocity / Adam first
    /// moment, slot_b the Adam second moment.
    Tensor<T>& slot_a(ParamId id) { return slot_a_.at(static_cast<std::size_t>(id.idx)); }
    Tensor<T>& slot_b(ParamId id) { return slot_b_.at(static_cast<std::size_t>(id.idx)); }
    void set_step_count(ParamId id, long long t) { steps_.at(static_cast<std::size_t>(id.idx)) = t; }

private:
    OptimHyper hyper_;
    std::vector<Tensor<T>> slot_a_;
    std::vector<Tensor<T>> slot_b_;
    std::vector<long long> steps_;
};

template <Scalar T>
void sgd_step(ParameterStore<T>& store, Optimizer<T>& opt) {
    KSNET_CHECK(opt.hyper().kind == OptimKind::sgd, ConfigError, "sgd_step on non-SGD state");
    opt.step(store);
}

template <Scalar T>
void adamw_step(ParameterStore<T>& store, Optimizer<T>& opt) {
    KSNET_CHECK(opt.hyper().kind == OptimKind::adamw, ConfigError, "adamw_step on non-AdamW state");
    opt.step(store);
}

}  // namespace ksnet
