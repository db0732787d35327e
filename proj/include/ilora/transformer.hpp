#pragma once

#include <cstddef>
#include <vector>

#include "ilora/adapters.hpp"
#include "ilora/param.hpp"
#include "ilora/rng.hpp"
#include "ilora/tape.hpp"

namespace ilora {

// Either the frozen base path, a uniform LoRA pair, or an expert bank mixed
// by the current instance's omega.
struct AdapterSlot {
    LoraAdapter* uniform = nullptr;
    ExpertBank* bank = nullptr;
};

// h (T x d_in) through W (d_out x d_in), with an optional adapter.
// omega must be a valid 1xK node when slot.bank is set.
Tape::NodeId project(Tape& t, Tape::NodeId h, Param& w, const AdapterSlot& slot,
                     Tape::NodeId omega);

// Pre-norm-free (post-LN) decoder block: causal attention + feed-forward.
struct TransformerBlockParams {
    Param wq, wk, wv, wo;  // d x d
    Param w1, b1;          // ff_hidden x d, 1 x ff_hidden
    Param w2, b2;          // d x ff_hidden, 1 x d
    Param ln1_g, ln1_b, ln2_g, ln2_b;

    std::vector<Param*> params();
    void collect(std::vector<std::pair<std::string, Matrix*>>& out,
                 const std::string& prefix);
};

TransformerBlockParams init_block(std::size_t d, std::size_t ff_hidden, Rng& rng,
                                  const std::string& name);

Tape::NodeId transformer_block(Tape& t, Tape::NodeId h, TransformerBlockParams& bp,
                               std::size_t heads, const AdapterSlot& q_slot,
                               const AdapterSlot& v_slot, Tape::NodeId omega);

}  // namespace ilora
