#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "langadapt/error.h"

namespace langadapt {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-6;
    double weight_decay = 0.01;
};

/// One trainable tensor and its gradient for a single update.
struct ParamRef {
    std::vector<float>* value;
    const std::vector<float>* grad;
    bool decay;
};

/// AdamW with decoupled weight decay. Moment slots are bound to parameter
/// position, so every call must pass the tensors in the same order.
class AdamW {
public:
    explicit AdamW(AdamWConfig config = {}) : config_(config) {}

    void step(const std::vector<ParamRef>& params, double learning_rate) {
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(p.value->size(), 0.0f);
                v_.emplace_back(p.value->size(), 0.0f);
            }
        }
        if (m_.size() != params.size()) {
            throw Error("optimizer called with a different parameter list");
        }
        ++t_;
        const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
        const auto b1 = static_cast<float>(config_.beta1);
        const auto b2 = static_cast<float>(config_.beta2);
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto& w = *params[k].value;
            const auto& g = *params[k].grad;
            auto& m = m_[k];
            auto& v = v_[k];
            if (w.size() != m.size() || g.size() != w.size()) {
                throw Error("optimizer parameter size changed");
            }
            const auto decay =
                params[k].decay ? static_cast<float>(1.0 - learning_rate * config_.weight_decay) : 1.0f;
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = b1 * m[i] + (1.0f - b1) * g[i];
                v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
                const double mhat = m[i] / c1;
                const double vhat = v[i] / c2;
                w[i] = static_cast<float>(w[i] * decay - learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon));
            }
        }
    }

    std::size_t steps() const { return t_; }

private:
    AdamWConfig config_;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
    std::size_t t_ = 0;
};

} // namespace langadapt
