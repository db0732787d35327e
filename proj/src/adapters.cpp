#include "ilora/adapters.hpp"

#include <stdexcept>

namespace ilora {

LoraAdapter make_lora(const std::string& target, std::size_t d_out,
                      std::size_t d_in, std::size_t r, double alpha, Rng& rng) {
    if (r < 1) throw std::invalid_argument("lora: rank must be >= 1");
    if (r > std::min(d_in, d_out) / 2)
        throw std::invalid_argument("lora: rank " + std::to_string(r) +
                                    " too large for " + std::to_string(d_out) + "x" +
                                    std::to_string(d_in));
    LoraAdapter ad;
    ad.alpha = alpha;
    ad.rank = r;
    ad.target = target;
    Matrix a(r, d_in);
    for (auto& v : a.data) v = rng.next_gaussian(0.0, 0.02);
    ad.a = Param(target + "/a", std::move(a));
    ad.b = Param(target + "/b", Matrix::zeros(d_out, r));
    return ad;
}

std::vector<Param*> ExpertBank::trainable() {
    std::vector<Param*> out;
    for (auto& e : experts) {
        out.push_back(&e.a);
        out.push_back(&e.b);
    }
    return out;
}

ExpertBank split_experts(const LoraAdapter& ad, std::size_t k) {
    if (k < 1 || ad.rank % k != 0)
        throw std::invalid_argument("split_experts: rank " + std::to_string(ad.rank) +
                                    " not divisible by K=" + std::to_string(k));
    const std::size_t r_star = ad.rank / k;
    const std::size_t d_in = ad.a.value.cols;
    const std::size_t d_out = ad.b.value.rows;
    ExpertBank bank;
    bank.k_experts = k;
    bank.r_star = r_star;
    bank.rank = ad.rank;
    bank.alpha = ad.alpha;
    bank.target = ad.target;
    for (std::size_t e = 0; e < k; ++e) {
        Matrix ae(r_star, d_in);
        for (std::size_t i = 0; i < r_star; ++i)
            for (std::size_t j = 0; j < d_in; ++j)
                ae.at(i, j) = ad.a.value.at(e * r_star + i, j);
        Matrix be(d_out, r_star);
        for (std::size_t i = 0; i < d_out; ++i)
            for (std::size_t j = 0; j < r_star; ++j)
                be.at(i, j) = ad.b.value.at(i, e * r_star + j);
        Expert ex;
        ex.a = Param(ad.target + "/a_" + std::to_string(e), std::move(ae));
        ex.b = Param(ad.target + "/b_" + std::to_string(e), std::move(be));
        bank.experts.push_back(std::move(ex));
    }
    return bank;
}

GatingNetwork make_gate(std::size_t k, std::size_t d, double temperature) {
    GatingNetwork g;
    g.w_g = Param("gate/w_g", Matrix::zeros(k, d));
    g.temperature = temperature;
    return g;
}

Tape::NodeId gate_forward(Tape& t, GatingNetwork& g, const Matrix& z) {
    if (z.rows != 1 || z.cols != g.w_g.value.cols)
        throw std::invalid_argument("gate: z shape " + z.shape_str() +
                                    " does not match W_g " + g.w_g.value.shape_str());
    auto zn = t.input(z);
    auto logits = t.matmul_nt(zn, t.param(g.w_g));  // 1 x K
    return t.softmax_rows(logits, g.temperature);
}

Matrix gate_eval(const GatingNetwork& g, const Matrix& z) {
    Tape t;
    GatingNetwork& gm = const_cast<GatingNetwork&>(g);
    auto id = gate_forward(t, gm, z);
    return t.value(id);
}

Tape::NodeId lora_forward(Tape& t, Tape::NodeId h, Param& base, LoraAdapter& ad) {
    auto out = t.matmul_nt(h, t.param(base));  // T x d_out
    auto down = t.matmul_nt(h, t.param(ad.a));  // T x r
    auto up = t.matmul_nt(down, t.param(ad.b));  // T x d_out
    return t.add(out, t.scale(up, ad.alpha / static_cast<double>(ad.rank)));
}

Tape::NodeId ilora_forward(Tape& t, Tape::NodeId h, Param& base, ExpertBank& bank,
                           Tape::NodeId omega) {
    if (t.value(omega).cols != bank.k_experts)
        throw std::invalid_argument("ilora_forward: omega length " +
                                    std::to_string(t.value(omega).cols) + " vs K=" +
                                    std::to_string(bank.k_experts));
    auto out = t.matmul_nt(h, t.param(base));
    const double scaling = bank.alpha / static_cast<double>(bank.rank);
    for (std::size_t k = 0; k < bank.k_experts; ++k) {
        auto down = t.matmul_nt(h, t.param(bank.experts[k].a));
        auto up = t.matmul_nt(down, t.param(bank.experts[k].b));
        out = t.add(out, t.scale(t.scale_by_entry(up, omega, k), scaling));
    }
    return out;
}

Matrix aggregate_delta_dense(const ExpertBank& bank, const std::vector<double>& omega) {
    if (omega.size() != bank.k_experts)
        throw std::invalid_argument("aggregate_delta: omega length mismatch");
    const std::size_t d_out = bank.experts[0].b.value.rows;
    const std::size_t d_in = bank.experts[0].a.value.cols;
    Matrix delta(d_out, d_in, 0.0);
    for (std::size_t k = 0; k < bank.k_experts; ++k) {
        Matrix bk_ak = matmul(bank.experts[k].b.value, bank.experts[k].a.value);
        axpy_inplace(delta, omega[k], bk_ak);
    }
    return delta;
}

ParamCounts count_trainable(bool ilora, const AdapterLayout& lo) {
    ParamCounts c;
    const std::size_t per_matrix = lo.r * (lo.d_model + lo.d_model);
    c.adapter = lo.n_layers * lo.matrices_per_layer * per_matrix;
    c.projector = lo.d_model * lo.gate_dim;
    if (ilora) {
        const std::size_t gates = lo.shared_gate ? 1 : lo.n_layers;
        c.gate = gates * lo.k_experts * lo.gate_dim;
    }
    c.total = c.adapter + c.projector + c.gate;
    const std::size_t uniform = c.adapter + c.projector;
    c.increase_vs_adapter = static_cast<double>(c.gate) / static_cast<double>(c.adapter);
    c.increase_vs_total = static_cast<double>(c.gate) / static_cast<double>(uniform);
    return c;
}

}  // namespace ilora
