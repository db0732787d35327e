#include "ilora/seqrec.hpp"

#include <algorithm>
#include <stdexcept>

#include "ilora/optim.hpp"

namespace ilora {

SeqRecModel::SeqRecModel(const SeqRecConfig& cfg, std::size_t catalog_size, Rng& rng)
    : cfg_(cfg), catalog_size_(catalog_size) {
    Matrix emb(catalog_size + 1, cfg.dim);
    for (auto& v : emb.data) v = rng.next_gaussian(0.0, 0.02);
    item_emb_ = Param("seqrec/item_emb", std::move(emb));
    Matrix pos(cfg.max_seq_len, cfg.dim);
    for (auto& v : pos.data) v = rng.next_gaussian(0.0, 0.02);
    pos_emb_ = Param("seqrec/pos_emb", std::move(pos));
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        blocks_.push_back(init_block(cfg.dim, 4 * cfg.dim, rng,
                                     "seqrec/block" + std::to_string(b)));
    }
}

std::vector<Param*> SeqRecModel::params() {
    std::vector<Param*> out{&item_emb_, &pos_emb_};
    for (auto& b : blocks_) {
        auto bp = b.params();
        out.insert(out.end(), bp.begin(), bp.end());
    }
    return out;
}

void SeqRecModel::freeze() {
    for (Param* p : params()) p->frozen = true;
    frozen_ = true;
}

std::uint64_t params_checksum(const std::vector<const Param*>& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const Param* p : params) {
        for (double d : p->value.data) {
            std::uint64_t bits;
            static_assert(sizeof(bits) == sizeof(d));
            __builtin_memcpy(&bits, &d, sizeof(bits));
            for (int i = 0; i < 8; ++i) {
                h ^= (bits >> (8 * i)) & 0xff;
                h *= 0x100000001b3ULL;
            }
        }
    }
    return h;
}

std::uint64_t SeqRecModel::checksum() const {
    auto ps = const_cast<SeqRecModel*>(this)->params();
    std::vector<const Param*> cps(ps.begin(), ps.end());
    return params_checksum(cps);
}

Matrix SeqRecModel::item_embed(int item) const {
    if (item < 0 || static_cast<std::size_t>(item) > catalog_size_)
        throw std::out_of_range("item_embed: id " + std::to_string(item) +
                                " outside catalog of " + std::to_string(catalog_size_));
    Matrix out(1, cfg_.dim);
    for (std::size_t j = 0; j < cfg_.dim; ++j)
        out.at(0, j) = item_emb_.value.at(static_cast<std::size_t>(item), j);
    return out;
}

std::vector<int> SeqRecModel::effective_items(const InteractionSequence& seq) const {
    std::vector<int> items;
    for (int it : seq.items) {
        if (it == 0) continue;  // padding never influences the encoding
        if (it < 0 || static_cast<std::size_t>(it) > catalog_size_)
            throw std::out_of_range("sequence for user " + std::to_string(seq.user_id) +
                                    ": item " + std::to_string(it) + " outside catalog");
        items.push_back(it);
    }
    if (items.empty())
        throw std::invalid_argument("sequence for user " + std::to_string(seq.user_id) +
                                    " is empty");
    if (items.size() > cfg_.max_seq_len)
        items.erase(items.begin(),
                    items.end() - static_cast<std::ptrdiff_t>(cfg_.max_seq_len));
    return items;
}

Tape::NodeId SeqRecModel::hidden(Tape& t, const std::vector<int>& items) const {
    auto* self = const_cast<SeqRecModel*>(this);
    auto emb = t.lookup_rows(t.param(self->item_emb_), items);
    std::vector<int> positions(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) positions[i] = static_cast<int>(i);
    auto pos = t.lookup_rows(t.param(self->pos_emb_), positions);
    auto h = t.add(emb, pos);
    for (auto& bp : self->blocks_)
        h = transformer_block(t, h, bp, cfg_.heads, AdapterSlot{}, AdapterSlot{}, -1);
    return h;
}

Matrix SeqRecModel::encode(const InteractionSequence& seq) const {
    const auto items = effective_items(seq);
    Tape t;
    auto h = hidden(t, items);
    const Matrix& hv = t.value(h);
    Matrix z(1, cfg_.dim);
    for (std::size_t j = 0; j < cfg_.dim; ++j) z.at(0, j) = hv.at(hv.rows - 1, j);
    require_finite(z, "sr_encode");
    return z;
}

Matrix SeqRecModel::hidden_states(const InteractionSequence& seq) const {
    const auto items = effective_items(seq);
    Tape t;
    auto h = hidden(t, items);
    return t.value(h);
}

Matrix SeqRecModel::scores(const InteractionSequence& seq) const {
    Matrix z = encode(seq);
    Matrix logits = matmul_nt(z, item_emb_.value);  // 1 x (|I|+1)
    logits.at(0, 0) = -1e30;                        // padding row never wins
    return logits;
}

std::vector<double> SeqRecModel::train(const std::vector<InteractionSequence>& data,
                                       Rng& rng) {
    if (data.empty()) throw std::invalid_argument("sr_train: empty dataset");
    for (const auto& s : data) {
        for (int it : s.items)
            if (it < 0 || static_cast<std::size_t>(it) > catalog_size_)
                throw std::invalid_argument("sr_train: item " + std::to_string(it) +
                                            " outside catalog");
    }
    auto ps = params();
    AdamState opt(ps, 0.9, 0.999, 1e-8, cfg_.weight_decay);
    const std::size_t batch = std::min(cfg_.batch, data.size());

    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<double> epoch_losses;
    for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
        // deterministic Fisher-Yates
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.next_below(i)]);
        double loss_sum = 0.0;
        std::size_t loss_n = 0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(start + batch, order.size());
            const double inv_b = 1.0 / static_cast<double>(end - start);
            for (std::size_t i = start; i < end; ++i) {
                const auto& seq = data[order[i]];
                auto items = effective_items(seq);
                std::vector<int> targets(items.size(), -1);
                for (std::size_t p = 0; p + 1 < items.size(); ++p)
                    targets[p] = items[p + 1];
                if (seq.has_truth()) targets[items.size() - 1] = seq.truth;
                if (items.size() == 1 && !seq.has_truth()) continue;

                Tape t;
                auto h = hidden(t, items);
                auto logits = t.matmul_nt(h, t.param(item_emb_));
                Matrix pad_mask(1, catalog_size_ + 1, 0.0);
                pad_mask.at(0, 0) = -1e30;
                auto masked = t.add_rowwise(logits, t.input(pad_mask));
                auto loss = t.cross_entropy_mean(masked, targets, -1);
                loss_sum += t.value(loss).at(0, 0);
                ++loss_n;
                auto scaled = t.scale(loss, inv_b);
                t.backward(scaled);
            }
            opt.step(ps, cfg_.lr);
        }
        epoch_losses.push_back(loss_n ? loss_sum / static_cast<double>(loss_n) : 0.0);
    }
    return epoch_losses;
}

NamedTensors SeqRecModel::tensors() const {
    NamedTensors out;
    out.emplace_back(item_emb_.name, item_emb_.value);
    out.emplace_back(pos_emb_.name, pos_emb_.value);
    std::vector<std::pair<std::string, Matrix*>> refs;
    for (std::size_t b = 0; b < blocks_.size(); ++b)
        const_cast<TransformerBlockParams&>(blocks_[b])
            .collect(refs, "seqrec/block" + std::to_string(b));
    for (auto& [name, m] : refs) out.emplace_back(name, *m);
    return out;
}

void SeqRecModel::load_tensors(const NamedTensors& t) {
    item_emb_.value = checkpoint_get(t, item_emb_.name);
    pos_emb_.value = checkpoint_get(t, pos_emb_.name);
    std::vector<std::pair<std::string, Matrix*>> refs;
    for (std::size_t b = 0; b < blocks_.size(); ++b)
        blocks_[b].collect(refs, "seqrec/block" + std::to_string(b));
    for (auto& [name, m] : refs) *m = checkpoint_get(t, name);
    for (Param* p : params()) p->zero_grad();
}

}  // namespace ilora
