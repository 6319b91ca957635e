// SPDX-License-Identifier: Apache-2.0
//
// Task-weighted example sampling. Each minibatch slot independently draws a
// task with probability proportional to |D_tau|^e (e = 0.75 by default, so
// large datasets do not drown out small ones), then a uniform example from
// that task's train split. Slots are i.i.d., so a batch freely mixes tasks.
#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bam/rng.hpp"

namespace bam::sampling {

// w_tau = size_tau^e / sum_sigma size_sigma^e. e = 1 reproduces plain
// size-proportional shuffling, e = 0 gives uniform-over-tasks.
inline std::vector<double> task_weights(const std::vector<std::size_t>& sizes, double e) {
    if (sizes.empty()) throw std::invalid_argument("task_weights: no tasks");
    if (e < 0.0) throw std::invalid_argument("task_weights: exponent must be >= 0");
    std::vector<double> w(sizes.size());
    double total = 0.0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (sizes[i] == 0) throw std::invalid_argument("task_weights: empty task dataset");
        w[i] = std::pow(double(sizes[i]), e);
        total += w[i];
    }
    for (auto& v : w) v /= total;
    return w;
}

// Steps per training run: ceil(epochs * total examples / batch_size). The
// weighted sampler has no natural epoch boundary, so "epoch" here just means
// one pass worth of examples in expectation.
inline std::size_t total_steps(const std::vector<std::size_t>& sizes, std::size_t batch_size,
                               std::size_t epochs) {
    if (batch_size == 0) throw std::invalid_argument("total_steps: batch_size must be positive");
    std::size_t total = 0;
    for (std::size_t s : sizes) total += s;
    return (epochs * total + batch_size - 1) / batch_size;
}

struct BatchSlot {
    std::size_t task;     // index into the sampler's task list
    std::size_t example;  // index into that task's train split
};

class TaskSampler {
  public:
    TaskSampler(std::vector<std::string> task_ids, std::vector<std::size_t> train_sizes,
                double exponent, Rng stream)
        : task_ids_(std::move(task_ids)),
          sizes_(std::move(train_sizes)),
          weights_(task_weights(sizes_, exponent)),
          rng_(stream) {
        if (task_ids_.size() != sizes_.size())
            throw std::invalid_argument("TaskSampler: task_ids/train_sizes size mismatch");
        cdf_.resize(weights_.size());
        double acc = 0.0;
        for (std::size_t i = 0; i < weights_.size(); ++i) {
            acc += weights_[i];
            cdf_[i] = acc;
        }
        cdf_.back() = 1.0;  // absorb summation rounding; next_double() < 1
    }

    const std::vector<std::string>& task_ids() const { return task_ids_; }
    const std::vector<double>& weights() const { return weights_; }

    BatchSlot draw() {
        const double u = rng_.next_double();
        std::size_t task = 0;
        while (cdf_[task] <= u) ++task;
        return {task, rng_.next_index(sizes_[task])};
    }

    std::vector<BatchSlot> sample_batch(std::size_t batch_size) {
        if (batch_size == 0) throw std::invalid_argument("sample_batch: batch_size must be positive");
        std::vector<BatchSlot> batch(batch_size);
        for (auto& slot : batch) slot = draw();
        return batch;
    }

  private:
    std::vector<std::string> task_ids_;
    std::vector<std::size_t> sizes_;
    std::vector<double> weights_;
    std::vector<double> cdf_;
    Rng rng_;
};

}  // namespace bam::sampling
