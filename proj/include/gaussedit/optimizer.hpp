#pragma once

// First-order updates of the editable Gaussians with one step size per
// attribute group.

#include "gaussedit/error.hpp"
#include "gaussedit/renderer.hpp"
#include "gaussedit/scene.hpp"

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace gaussedit {

struct LearningRates {
    double mu = 1e-3;
    double scale = 5e-3;
    double rot = 1e-3;
    double opacity = 5e-2;
    double sh0 = 5e-2;

    // Zero freezes a group.
    void validate() const {
        for (double v : {mu, scale, rot, opacity, sh0})
            require(std::isfinite(v) && v >= 0.0, ErrorKind::Validation, "learning rates must be finite and >= 0");
    }
    bool all_positive() const { return mu > 0 && scale > 0 && rot > 0 && opacity > 0 && sh0 > 0; }
};

enum class OptimizerKind { Sgd, Adam };

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

struct AdamSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class ParameterOptimizer {
public:
    ParameterOptimizer(OptimizerKind kind, const LearningRates& rates, std::size_t count, AdamSettings adam = {})
        : kind_(kind), rates_(rates), adam_(adam) {
        rates_.validate();
        if (kind_ == OptimizerKind::Adam) {
            first_.assign(count, {});
            second_.assign(count, {});
        }
    }

    OptimizerKind kind() const { return kind_; }
    const LearningRates& rates() const { return rates_; }
    std::uint64_t steps() const { return steps_; }

    /// Descends along `grads`. A Gaussian whose rotation moved gets its
    /// quaternion renormalized; untouched parameters keep their exact bits.
    void step(std::span<Gaussian> params, const SceneGradients& grads) {
        require(params.size() == grads.size(), ErrorKind::Argument,
                "optimizer: " + std::to_string(grads.size()) + " gradients for " + std::to_string(params.size()) +
                    " Gaussians");
        require(kind_ == OptimizerKind::Sgd || params.size() == first_.size(), ErrorKind::Argument,
                "optimizer: parameter count changed since construction");
        ++steps_;
        const double c1 = 1.0 - std::pow(adam_.beta1, static_cast<double>(steps_));
        const double c2 = 1.0 - std::pow(adam_.beta2, static_cast<double>(steps_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Gaussian& g = params[i];
            const GaussianGrad& d = grads[i];
            int slot = 0;
            auto update = [&](double& value, double grad, double lr) {
                const int s = slot++;
                if (lr == 0.0) return;
                if (kind_ == OptimizerKind::Sgd) {
                    value -= lr * grad;
                    return;
                }
                double& m = first_[i][s];
                double& v = second_[i][s];
                m = adam_.beta1 * m + (1.0 - adam_.beta1) * grad;
                v = adam_.beta2 * v + (1.0 - adam_.beta2) * grad * grad;
                if (m == 0.0) return;
                value -= lr * (m / c1) / (std::sqrt(v / c2) + adam_.epsilon);
            };
            for (int k = 0; k < 3; ++k) update(g.mu[k], d.d_mu[k], rates_.mu);
            for (int k = 0; k < 3; ++k) update(g.log_scale[k], d.d_log_scale[k], rates_.scale);
            const Vec4 before = g.rot;
            for (int k = 0; k < 4; ++k) update(g.rot[k], d.d_rot[k], rates_.rot);
            for (int k = 0; k < 3; ++k) update(g.sh0[k], d.d_sh0[k], rates_.sh0);
            update(g.opacity_logit, d.d_opacity_logit, rates_.opacity);
            if (g.rot != before) {
                const double n = g.rot.norm();
                require(n > 0.0 && std::isfinite(n), ErrorKind::Propagation,
                        "optimizer: quaternion collapsed during update");
                g.rot /= n;
            }
        }
    }

private:
    OptimizerKind kind_;
    LearningRates rates_;
    AdamSettings adam_;
    std::uint64_t steps_ = 0;
    std::vector<std::array<double, 14>> first_;
    std::vector<std::array<double, 14>> second_;
};

} // namespace gaussedit
