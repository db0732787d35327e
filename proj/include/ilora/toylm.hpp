#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ilora/adapters.hpp"
#include "ilora/checkpoint.hpp"
#include "ilora/datasets.hpp"
#include "ilora/optim.hpp"
#include "ilora/seqrec.hpp"
#include "ilora/transformer.hpp"

namespace ilora {

// Closed word-level vocabulary over the catalog and templates. [BEH] in text
// maps to the behavior special; any unseen word becomes UNK.
struct Vocab {
    std::vector<std::string> tokens;  // id -> surface form
    std::unordered_map<std::string, int> ids;
    static constexpr int kPad = 0, kBos = 1, kEos = 2, kUnk = 3, kBeh = 4;

    std::size_t size() const { return tokens.size(); }
    int id(const std::string& word) const;
};

Vocab build_vocab(const ItemCatalog& catalog, const std::vector<std::string>& templates);

// Lowercase, split on whitespace; punctuation runs become their own tokens.
std::vector<int> tokenize(const Vocab& v, const std::string& text);
std::string detokenize(const Vocab& v, const std::vector<int>& ids);

// lowercase + collapse runs of whitespace to single spaces + trim
std::string normalize_text(const std::string& text);

struct ToyLMConfig {
    std::size_t d_model = 256;
    std::size_t blocks = 4;
    std::size_t heads = 4;
    std::size_t context = 512;
};

enum class TuneMode { frozen, uniform_lora, ilora };

// The trainable side of fine-tuning: adapters (uniform pair or expert bank)
// on q and v of every block, the shared gate, and the behavior projector.
struct AdapterSet {
    TuneMode mode = TuneMode::frozen;
    std::vector<LoraAdapter> uniform_q, uniform_v;  // uniform_lora
    std::vector<ExpertBank> bank_q, bank_v;         // ilora
    GatingNetwork gate;                             // ilora
    Param proj;  // d_model x d, maps recommender space into token space

    std::vector<Param*> trainable();
    NamedTensors tensors() const;
    void load_tensors(const NamedTensors& t);
};

// Both modes consume the rng identically (ilora splits the same full-rank
// pair), so uniform and K=1 instance-wise runs share initial weights exactly.
AdapterSet make_adapter_set(TuneMode mode, const ToyLMConfig& cfg, std::size_t sr_dim,
                            std::size_t r, std::size_t k_experts, double alpha,
                            double temperature, Rng& rng);

// One prompt position: a text token or a behavior slot for one history item.
struct HybridEntry {
    int token_id = -1;  // >= 0 for text
    int item_id = 0;    // > 0 for behavior
    bool is_text() const { return token_id >= 0; }
};

struct HybridSeq {
    std::uint64_t user = 0;
    std::vector<HybridEntry> entries;
};

// Tokenize the rendered prompt and bind each [BEH] slot, in order, to the
// corresponding history item.
HybridSeq hybrid_from_pair(const Vocab& v, const InstructionPair& pair);

class ToyLM {
public:
    ToyLM(const ToyLMConfig& cfg, std::size_t vocab_size, Rng& rng);

    const ToyLMConfig& config() const { return cfg_; }
    std::size_t vocab_size() const { return vocab_size_; }

    std::vector<Param*> params();  // the frozen base
    void freeze();
    bool frozen() const { return frozen_; }
    std::uint64_t checksum() const;
    NamedTensors tensors() const;  // names "lm/<tensor>"
    void load_tensors(const NamedTensors& t);

    Param& tok_emb() { return tok_emb_; }

    // x is T x d_model raw embeddings; positions are added inside. omega must
    // be a valid 1xK node when ad uses expert banks. Logits are T x |V| via
    // the tied embedding head.
    Tape::NodeId hidden(Tape& t, Tape::NodeId x, AdapterSet* ad, Tape::NodeId omega);
    Tape::NodeId logits(Tape& t, Tape::NodeId x, AdapterSet* ad, Tape::NodeId omega);

private:
    ToyLMConfig cfg_;
    std::size_t vocab_size_;
    bool frozen_ = false;
    Param tok_emb_;  // |V| x d_model, also the output head
    Param pos_emb_;  // context x d_model
    std::vector<TransformerBlockParams> blocks_;
};

// Prompt embeddings: title tokens from the frozen table, behavior slots as
// proj-mapped recommender embeddings. Throws on context overflow.
Tape::NodeId embed_hybrid(Tape& t, ToyLM& lm, Param& proj, const SeqRecModel& sr,
                          const HybridSeq& seq, std::size_t extra_budget = 0);

// Mean NLL of the target tokens (EOS-terminated) given the hybrid prompt;
// prompt positions are loss-masked. In ilora mode omega = gate(sr.encode) is
// computed once per instance. Throws std::logic_error when the mode needs
// machinery the adapter set lacks.
Tape::NodeId lm_loss(Tape& t, ToyLM& lm, AdapterSet& ad, const SeqRecModel& sr,
                     const Vocab& v, const InstructionPair& pair, TuneMode mode);

double lm_loss_value(ToyLM& lm, AdapterSet& ad, const SeqRecModel& sr, const Vocab& v,
                     const InstructionPair& pair, TuneMode mode);

// Brief next-token training of the base on plain text, before freezing.
std::vector<double> pretrain(ToyLM& lm, const Vocab& v,
                             const std::vector<std::string>& texts, std::size_t steps,
                             double lr, std::size_t batch, Rng& rng);

struct FinetuneConfig {
    double max_lr = 2e-4;
    double floor_lr = 0.0;
    std::size_t warmup_steps = 0;
    std::size_t total_steps = 1;
    std::size_t batch = 8;
    double weight_decay = 0.0;
    std::size_t ckpt_every = 0;  // 0 disables the checkpoint stream
};

// Fires after each pair's backward pass; grads hold that single pair's
// gradients for every trainable param.
using GradHook = std::function<void(std::size_t step, std::uint64_t user,
                                    const std::vector<Param*>& grads)>;
using CkptHook = std::function<void(std::size_t step, const NamedTensors& tensors)>;

// AdamW over the adapter set; per-step mean batch loss returned. The base lm
// and the recommender stay frozen (checksum-verified by the tests).
std::vector<double> finetune(ToyLM& lm, AdapterSet& ad, const SeqRecModel& sr,
                             const Vocab& v, const std::vector<InstructionPair>& data,
                             const FinetuneConfig& cfg, Rng& rng,
                             const CkptHook& on_ckpt = nullptr,
                             const GradHook& on_grad = nullptr);

// Argmax decoding until EOS or max_new tokens; pure in (weights, prompt).
std::string greedy_decode(ToyLM& lm, AdapterSet& ad, const SeqRecModel& sr,
                          const Vocab& v, const InstructionPair& pair,
                          std::size_t max_new);

}  // namespace ilora
