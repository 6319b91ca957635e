// SPDX-License-Identifier: Apache-2.0
//
// Adam with layerwise learning-rate decay: a block at depth d trains at
// base_lr * alpha^d, where depth 0 is the output head and depth grows toward
// the input. No weight decay, no warmup.
#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace bam::optim {

struct OptimConfig {
    double base_lr = 1e-4;
    double layer_decay = 0.9;  // alpha; 1.0 disables the layerwise schedule
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

inline double layer_lr(double base_lr, double alpha, std::size_t d) {
    if (base_lr <= 0.0) throw std::invalid_argument("layer_lr: base_lr must be positive");
    if (alpha <= 0.0 || alpha > 1.0) throw std::invalid_argument("layer_lr: alpha must be in (0,1]");
    return base_lr * std::pow(alpha, double(d));
}

// Mutable view of one parameter block plus its depth in the network.
struct ParamView {
    double* data = nullptr;
    std::size_t size = 0;
    std::size_t depth = 0;
};

class Adam {
  public:
    explicit Adam(OptimConfig cfg) : cfg_(cfg) {
        if (cfg.base_lr <= 0.0) throw std::invalid_argument("Adam: base_lr must be positive");
        if (cfg.layer_decay <= 0.0 || cfg.layer_decay > 1.0)
            throw std::invalid_argument("Adam: layer_decay must be in (0,1]");
        if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0)
            throw std::invalid_argument("Adam: betas must be in [0,1)");
        if (cfg.epsilon <= 0.0) throw std::invalid_argument("Adam: epsilon must be positive");
    }

    const OptimConfig& config() const { return cfg_; }
    std::size_t steps_taken() const { return t_; }

    // One bias-corrected update. Moment state is laid out on the first call
    // and block shapes must stay fixed afterwards.
    void step(const std::vector<ParamView>& blocks, const std::vector<std::vector<double>>& grads) {
        if (blocks.size() != grads.size())
            throw std::invalid_argument("Adam::step: block/grad count mismatch");
        if (t_ == 0) {
            sizes_.reserve(blocks.size());
            for (const auto& b : blocks) {
                sizes_.push_back(b.size);
                m_.emplace_back(b.size, 0.0);
                v_.emplace_back(b.size, 0.0);
            }
        } else if (blocks.size() != sizes_.size()) {
            throw std::invalid_argument("Adam::step: block count changed between steps");
        }
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            if (blocks[i].size != sizes_[i] || grads[i].size() != sizes_[i])
                throw std::invalid_argument("Adam::step: shape mismatch between params and grads");
        }

        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const double lr = layer_lr(cfg_.base_lr, cfg_.layer_decay, blocks[i].depth);
            double* p = blocks[i].data;
            const std::vector<double>& g = grads[i];
            std::vector<double>& m = m_[i];
            std::vector<double>& v = v_[i];
            for (std::size_t k = 0; k < sizes_[i]; ++k) {
                m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
                v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
                const double mhat = m[k] / bc1;
                const double vhat = v[k] / bc2;
                p[k] -= lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
            }
        }
    }

  private:
    OptimConfig cfg_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
    std::vector<std::size_t> sizes_;
};

}  // namespace bam::optim
