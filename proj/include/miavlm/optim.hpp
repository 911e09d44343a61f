#pragma once

#include <cstdint>
#include <vector>

#include "miavlm/tensor.hpp"

namespace miavlm {

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction over a fixed parameter list. Moment buffers are
/// keyed by position, so the parameter list must not change between steps.
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<Tensor> params, AdamConfig config = {});

    /// Applies one update from the parameters' accumulated gradients.
    /// Parameters without an accumulated gradient are treated as zero-grad.
    void step();
    void zero_grad();

    void set_lr(double lr) { config_.lr = lr; }
    double lr() const { return config_.lr; }
    std::uint64_t step_count() const { return step_count_; }
    const std::vector<double>& first_moment(std::size_t i) const { return m_[i]; }
    const std::vector<double>& second_moment(std::size_t i) const { return v_[i]; }

private:
    std::vector<Tensor> params_;
    AdamConfig config_;
    std::uint64_t step_count_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

struct CosineSchedule {
    double base_lr = 0.001;
    int total_epochs = 20;
    double min_lr = 0.0;
};

/// min_lr + (base_lr - min_lr) * (1 + cos(pi * epoch / total)) / 2.
/// Valid for 0 <= epoch <= total_epochs; boundary values are exact.
double cosine_lr(const CosineSchedule& schedule, int epoch);

}  // namespace miavlm
