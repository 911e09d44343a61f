#include "miavlm/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace miavlm {

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
    if (config_.lr <= 0.0) throw std::invalid_argument("adam: lr must be positive");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
    }
}

void AdamOptimizer::step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
    for (std::size_t p = 0; p < params_.size(); ++p) {
        auto& param = params_[p];
        auto& m = m_[p];
        auto& v = v_[p];
        const bool has_grad = param.has_grad();
        auto& data = param.data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = has_grad ? param.grad()[i] : 0.0;
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            data[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
        }
    }
}

void AdamOptimizer::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

double cosine_lr(const CosineSchedule& schedule, int epoch) {
    if (schedule.total_epochs <= 0)
        throw std::invalid_argument("cosine_lr: total_epochs must be positive");
    if (epoch < 0 || epoch > schedule.total_epochs)
        throw std::invalid_argument("cosine_lr: epoch " + std::to_string(epoch) +
                                    " outside [0, " + std::to_string(schedule.total_epochs) + "]");
    if (epoch == 0) return schedule.base_lr;
    if (epoch == schedule.total_epochs) return schedule.min_lr;
    const double t = static_cast<double>(epoch) / static_cast<double>(schedule.total_epochs);
    return schedule.min_lr + 0.5 * (schedule.base_lr - schedule.min_lr) * (1.0 + std::cos(M_PI * t));
}

}  // namespace miavlm
