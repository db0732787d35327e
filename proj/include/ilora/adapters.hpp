#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ilora/matrix.hpp"
#include "ilora/param.hpp"
#include "ilora/rng.hpp"
#include "ilora/tape.hpp"

namespace ilora {

// Rank-r update pair for one frozen base matrix. b starts at zero so the
// adapter is a no-op until trained; a starts Gaussian(0, 0.02).
struct LoraAdapter {
    Param a;  // r x d_in
    Param b;  // d_out x r
    double alpha = 16.0;
    std::size_t rank = 8;
    std::string target;
};

LoraAdapter make_lora(const std::string& target, std::size_t d_out,
                      std::size_t d_in, std::size_t r, double alpha, Rng& rng);

struct Expert {
    Param b;  // d_out x r_star (column slice of B)
    Param a;  // r_star x d_in  (row slice of A)
};

struct ExpertBank {
    std::vector<Expert> experts;
    std::size_t k_experts = 1;
    std::size_t r_star = 1;
    std::size_t rank = 1;  // total rank r = k_experts * r_star
    double alpha = 16.0;
    std::string target;

    std::vector<Param*> trainable();
};

// b_k = columns [(k-1)r*, kr*) of B; a_k = rows [(k-1)r*, kr*) of A.
// Requires r divisible by k.
ExpertBank split_experts(const LoraAdapter& ad, std::size_t k);

// Shared per-model gate; zero init gives a uniform expert mixture.
struct GatingNetwork {
    Param w_g;  // K x d
    double temperature = 1.0;
};

GatingNetwork make_gate(std::size_t k, std::size_t d, double temperature = 1.0);

// omega = softmax(W_g z / temperature), entries in (0,1), sum 1.
// Tape variant keeps the gradient path into W_g open (z stays constant).
Tape::NodeId gate_forward(Tape& t, GatingNetwork& g, const Matrix& z /*1 x d*/);
Matrix gate_eval(const GatingNetwork& g, const Matrix& z);  // 1 x K

// Activations are row-major: h is T x d_in, outputs are T x d_out.
// base holds the frozen W (d_out x d_in).
Tape::NodeId lora_forward(Tape& t, Tape::NodeId h, Param& base, LoraAdapter& ad);
// Wh + (alpha/r) sum_k omega_k B_k (A_k h); omega is a 1 x K node.
Tape::NodeId ilora_forward(Tape& t, Tape::NodeId h, Param& base, ExpertBank& bank,
                           Tape::NodeId omega);

// Dense sum_k omega_k B_k A_k (no alpha/r scaling); oracle and analysis use
// only, never the hot path.
Matrix aggregate_delta_dense(const ExpertBank& bank, const std::vector<double>& omega);

struct ParamCounts {
    std::size_t adapter = 0;    // all (A, B) entries across adapted matrices
    std::size_t projector = 0;  // behavior projector
    std::size_t gate = 0;       // zero for the uniform variant
    std::size_t total = 0;
    double increase_vs_adapter = 0.0;  // gate / adapter
    double increase_vs_total = 0.0;    // gate / (adapter + projector)
};

struct AdapterLayout {
    std::size_t n_layers = 4;
    std::size_t matrices_per_layer = 2;  // q and v by default
    std::size_t d_model = 256;
    std::size_t r = 8;
    std::size_t k_experts = 4;
    std::size_t gate_dim = 64;  // recommender embedding dim d
    bool shared_gate = true;
};

ParamCounts count_trainable(bool ilora, const AdapterLayout& layout);

}  // namespace ilora
