#pragma once

#include <string>

#include "ilora/matrix.hpp"

namespace ilora {

// A model tensor with its gradient buffer. Frozen params never change under
// optimizer steps and accumulate no gradient.
struct Param {
    std::string name;
    Matrix value;
    Matrix grad;
    bool frozen = false;

    Param() = default;
    Param(std::string n, Matrix v, bool froze = false)
        : name(std::move(n)), value(std::move(v)),
          grad(value.rows, value.cols, 0.0), frozen(froze) {}

    void zero_grad() { grad.fill(0.0); }
};

}  // namespace ilora
