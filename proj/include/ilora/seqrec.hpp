#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ilora/checkpoint.hpp"
#include "ilora/matrix.hpp"
#include "ilora/param.hpp"
#include "ilora/rng.hpp"
#include "ilora/transformer.hpp"

namespace ilora {

// A user's ordered item history; item ids are 1..|I| (0 reserved padding).
struct InteractionSequence {
    std::uint64_t user_id = 0;
    std::vector<int> items;
    int truth = -1;  // -1 when absent

    bool has_truth() const { return truth > 0; }
};

struct SeqRecConfig {
    std::size_t dim = 64;
    std::size_t heads = 2;
    std::size_t blocks = 2;
    std::size_t max_seq_len = 50;
    double lr = 0.001;
    std::size_t batch = 256;
    std::size_t epochs = 10;
    double weight_decay = 0.0;
};

// SASRec-style self-attentive encoder with dot-product scoring against the
// shared item embedding table.
class SeqRecModel {
public:
    SeqRecModel(const SeqRecConfig& cfg, std::size_t catalog_size, Rng& rng);

    std::size_t catalog_size() const { return catalog_size_; }
    const SeqRecConfig& config() const { return cfg_; }

    // Embedding-table row for one item (1 x d).
    Matrix item_embed(int item) const;

    // Whole-sequence representation z: encoder output at the last position.
    Matrix encode(const InteractionSequence& seq) const;

    // Next-item logits over the catalog (1 x |I|+1, padding masked to -inf).
    Matrix scores(const InteractionSequence& seq) const;

    // Full encoder output (T x d); row t sees only positions <= t.
    Matrix hidden_states(const InteractionSequence& seq) const;

    // Adam at cfg.lr, cross-entropy over next-item targets at every position.
    // Returns per-epoch mean loss.
    std::vector<double> train(const std::vector<InteractionSequence>& data, Rng& rng);

    void freeze();
    bool frozen() const { return frozen_; }
    std::uint64_t checksum() const;

    NamedTensors tensors() const;  // names "seqrec/<tensor>"
    void load_tensors(const NamedTensors& t);

    std::vector<Param*> params();

private:
    // items clipped to the most recent max_seq_len non-padding entries
    std::vector<int> effective_items(const InteractionSequence& seq) const;
    Tape::NodeId hidden(Tape& t, const std::vector<int>& items) const;

    SeqRecConfig cfg_;
    std::size_t catalog_size_;
    bool frozen_ = false;
    Param item_emb_;  // (|I|+1) x d, row 0 padding
    Param pos_emb_;   // max_seq_len x d
    std::vector<TransformerBlockParams> blocks_;
};

// FNV-1a over the raw value bytes of a param set; the frozen-weights oracle.
std::uint64_t params_checksum(const std::vector<const Param*>& params);

}  // namespace ilora
