#include "ilora/transformer.hpp"

#include <cmath>
#include <stdexcept>

namespace ilora {

Tape::NodeId project(Tape& t, Tape::NodeId h, Param& w, const AdapterSlot& slot,
                     Tape::NodeId omega) {
    if (slot.bank != nullptr) {
        if (omega < 0) throw std::logic_error("project: expert bank without omega");
        return ilora_forward(t, h, w, *slot.bank, omega);
    }
    if (slot.uniform != nullptr) return lora_forward(t, h, w, *slot.uniform);
    return t.matmul_nt(h, t.param(w));
}

std::vector<Param*> TransformerBlockParams::params() {
    return {&wq, &wk, &wv, &wo, &w1, &b1, &w2, &b2,
            &ln1_g, &ln1_b, &ln2_g, &ln2_b};
}

void TransformerBlockParams::collect(std::vector<std::pair<std::string, Matrix*>>& out,
                                     const std::string& prefix) {
    out.emplace_back(prefix + "/wq", &wq.value);
    out.emplace_back(prefix + "/wk", &wk.value);
    out.emplace_back(prefix + "/wv", &wv.value);
    out.emplace_back(prefix + "/wo", &wo.value);
    out.emplace_back(prefix + "/w1", &w1.value);
    out.emplace_back(prefix + "/b1", &b1.value);
    out.emplace_back(prefix + "/w2", &w2.value);
    out.emplace_back(prefix + "/b2", &b2.value);
    out.emplace_back(prefix + "/ln1_g", &ln1_g.value);
    out.emplace_back(prefix + "/ln1_b", &ln1_b.value);
    out.emplace_back(prefix + "/ln2_g", &ln2_g.value);
    out.emplace_back(prefix + "/ln2_b", &ln2_b.value);
}

namespace {

Matrix gaussian(Rng& rng, std::size_t r, std::size_t c, double std) {
    Matrix m(r, c);
    for (auto& v : m.data) v = rng.next_gaussian(0.0, std);
    return m;
}

}  // namespace

TransformerBlockParams init_block(std::size_t d, std::size_t ff, Rng& rng,
                                  const std::string& name) {
    const double std = 0.02;
    TransformerBlockParams bp;
    bp.wq = Param(name + "/wq", gaussian(rng, d, d, std));
    bp.wk = Param(name + "/wk", gaussian(rng, d, d, std));
    bp.wv = Param(name + "/wv", gaussian(rng, d, d, std));
    bp.wo = Param(name + "/wo", gaussian(rng, d, d, std));
    bp.w1 = Param(name + "/w1", gaussian(rng, ff, d, std));
    bp.b1 = Param(name + "/b1", Matrix::zeros(1, ff));
    bp.w2 = Param(name + "/w2", gaussian(rng, d, ff, std));
    bp.b2 = Param(name + "/b2", Matrix::zeros(1, d));
    bp.ln1_g = Param(name + "/ln1_g", Matrix(1, d, 1.0));
    bp.ln1_b = Param(name + "/ln1_b", Matrix::zeros(1, d));
    bp.ln2_g = Param(name + "/ln2_g", Matrix(1, d, 1.0));
    bp.ln2_b = Param(name + "/ln2_b", Matrix::zeros(1, d));
    return bp;
}

Tape::NodeId transformer_block(Tape& t, Tape::NodeId h, TransformerBlockParams& bp,
                               std::size_t heads, const AdapterSlot& q_slot,
                               const AdapterSlot& v_slot, Tape::NodeId omega) {
    const std::size_t d = t.value(h).cols;
    const std::size_t T = t.value(h).rows;
    if (d % heads != 0)
        throw std::invalid_argument("transformer_block: dim not divisible by heads");
    const std::size_t dh = d / heads;

    auto q = project(t, h, bp.wq, q_slot, omega);
    auto k = project(t, h, bp.wk, AdapterSlot{}, omega);
    auto v = project(t, h, bp.wv, v_slot, omega);

    // causal mask: position i attends to positions <= i
    Matrix mask(T, T, 0.0);
    for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = i + 1; j < T; ++j) mask.at(i, j) = -1e30;
    auto mask_node = t.input(mask);

    std::vector<Tape::NodeId> head_outs;
    head_outs.reserve(heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t hd = 0; hd < heads; ++hd) {
        auto qh = t.slice_cols(q, hd * dh, (hd + 1) * dh);
        auto kh = t.slice_cols(k, hd * dh, (hd + 1) * dh);
        auto vh = t.slice_cols(v, hd * dh, (hd + 1) * dh);
        auto scores = t.add(t.scale(t.matmul_nt(qh, kh), scale), mask_node);
        auto attn = t.softmax_rows(scores, 1.0);
        head_outs.push_back(t.matmul(attn, vh));
    }
    auto concat = heads == 1 ? head_outs[0] : t.concat_cols(head_outs);
    auto attn_out = t.matmul_nt(concat, t.param(bp.wo));
    auto h1 = t.layer_norm(t.add(h, attn_out), t.param(bp.ln1_g), t.param(bp.ln1_b));

    auto ff = t.relu(t.add_rowwise(t.matmul_nt(h1, t.param(bp.w1)), t.param(bp.b1)));
    auto ff_out = t.add_rowwise(t.matmul_nt(ff, t.param(bp.w2)), t.param(bp.b2));
    return t.layer_norm(t.add(h1, ff_out), t.param(bp.ln2_g), t.param(bp.ln2_b));
}

}  // namespace ilora
