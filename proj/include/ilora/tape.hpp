#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "ilora/matrix.hpp"
#include "ilora/param.hpp"

namespace ilora {

// Recorded computation with explicit per-op backward rules. One tape per
// forward/backward pass; Params live outside and collect gradients.
class Tape {
public:
    using NodeId = int;

    NodeId input(Matrix m);          // constant leaf, no gradient flows out
    NodeId param(Param& p);          // leaf bound to an external Param

    NodeId matmul(NodeId a, NodeId b);      // a * b
    NodeId matmul_nt(NodeId a, NodeId b);   // a * b^T
    NodeId add(NodeId a, NodeId b);         // same shape
    NodeId add_rowwise(NodeId a, NodeId row);  // broadcast 1xC row over rows of a
    NodeId scale(NodeId a, double s);
    // out = a * vec[idx], vec a 1xK node; gradient flows into both.
    NodeId scale_by_entry(NodeId a, NodeId vec, std::size_t idx);
    NodeId softmax_rows(NodeId a, double temperature);
    NodeId relu(NodeId a);
    NodeId layer_norm(NodeId a, NodeId gain, NodeId bias, double eps = 1e-5);
    NodeId lookup_rows(NodeId table, std::vector<int> ids);
    NodeId slice_cols(NodeId a, std::size_t c0, std::size_t c1);
    NodeId concat_cols(const std::vector<NodeId>& parts);
    // Assemble a matrix row-by-row from (source node, source row) picks.
    NodeId gather_rows(const std::vector<std::pair<NodeId, std::size_t>>& picks);
    // Mean NLL over non-ignored positions; returns a 1x1 node.
    NodeId cross_entropy_mean(NodeId logits, std::vector<int> targets, int ignore_id);
    NodeId sum_all(NodeId a);  // 1x1

    const Matrix& value(NodeId id) const { return nodes_[id].val; }
    const Matrix& grad(NodeId id) const { return nodes_[id].grad; }

    // Seeds d(root)=1 and propagates to every leaf; root must be 1x1.
    void backward(NodeId root);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix val;
        Matrix grad;
        std::function<void(Tape&)> back;  // empty for leaves without parents
    };

    NodeId push(Matrix val, std::function<void(Tape&)> back);
    Matrix& grad_mut(NodeId id) { return nodes_[id].grad; }

    std::vector<Node> nodes_;
};

// Central-difference gradient oracle. `loss` must rebuild its computation from
// the current param values, run backward, and leave gradients in the params.
// Returns max over entries of |analytic - numeric| / max(1, |numeric|).
double grad_check(const std::function<double()>& loss,
                  const std::vector<Param*>& params, double h);

}  // namespace ilora
