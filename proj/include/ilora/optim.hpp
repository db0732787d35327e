#pragma once

#include <cstddef>
#include <vector>

#include "ilora/param.hpp"

namespace ilora {

// Bias-corrected Adam with decoupled weight decay. Moment buffers are aligned
// by position with the param list handed to the constructor.
class AdamState {
public:
    AdamState(const std::vector<Param*>& params, double beta1 = 0.9,
              double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0);

    // One optimizer step; frozen params untouched; all grads zeroed after.
    void step(const std::vector<Param*>& params, double lr);

    std::size_t step_count() const { return step_; }

    double beta1, beta2, eps, weight_decay;

private:
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
    std::size_t step_ = 0;
};

// Linear warmup to max_lr, then cosine decay to floor_lr at total_steps,
// clamped to floor_lr afterwards.
struct LrSchedule {
    double max_lr = 1e-3;
    std::size_t warmup_steps = 0;
    std::size_t total_steps = 1;
    double floor_lr = 0.0;
};

double lr_at(const LrSchedule& s, std::size_t step);

}  // namespace ilora
