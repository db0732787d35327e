#include "ilora/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ilora {

AdamState::AdamState(const std::vector<Param*>& params, double b1, double b2,
                     double e, double wd)
    : beta1(b1), beta2(b2), eps(e), weight_decay(wd) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Param* p : params) {
        m_.emplace_back(p->value.rows, p->value.cols, 0.0);
        v_.emplace_back(p->value.rows, p->value.cols, 0.0);
    }
}

void AdamState::step(const std::vector<Param*>& params, double lr) {
    if (lr < 0.0) throw std::invalid_argument("adam: negative learning rate");
    if (params.size() != m_.size())
        throw std::logic_error("adam: param list size drifted from optimizer state");
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Param& p = *params[pi];
        if (!p.value.same_shape(m_[pi]))
            throw std::logic_error("adam: shape drift on param " + p.name);
        if (p.frozen) {
            p.zero_grad();
            continue;
        }
        Matrix& m = m_[pi];
        Matrix& v = v_[pi];
        for (std::size_t i = 0; i < p.value.data.size(); ++i) {
            const double g = p.grad.data[i];
            m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * g;
            v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * g * g;
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            p.value.data[i] -= lr * (mhat / (std::sqrt(vhat) + eps) +
                                     weight_decay * p.value.data[i]);
        }
        p.zero_grad();
    }
}

double lr_at(const LrSchedule& s, std::size_t step) {
    if (step < s.warmup_steps) {
        return s.max_lr * static_cast<double>(step) /
               static_cast<double>(s.warmup_steps);
    }
    if (step >= s.total_steps) return s.floor_lr;
    const double progress =
        static_cast<double>(step - s.warmup_steps) /
        static_cast<double>(s.total_steps - s.warmup_steps);
    return s.floor_lr + 0.5 * (s.max_lr - s.floor_lr) *
                            (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace ilora
