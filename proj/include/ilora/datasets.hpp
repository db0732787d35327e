#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ilora/rng.hpp"
#include "ilora/seqrec.hpp"

namespace ilora {

// Dense item ids 1..|I|; id 0 is the padding reservation.
struct ItemCatalog {
    std::vector<std::string> titles;  // titles[0] unused

    std::size_t size() const { return titles.empty() ? 0 : titles.size() - 1; }
    const std::string& title(int id) const;
};

// 21 items: the true next item plus 20 non-interacted distractors.
struct CandidateSet {
    std::vector<int> items;
    std::size_t truth_index = 0;
};

struct SyntheticSpec {
    std::size_t num_regimes = 4;
    std::size_t items_per_regime = 8;
    std::size_t users_per_regime = 64;
    std::size_t seq_min = 4;
    std::size_t seq_max = 10;
    double cross_regime_prob = 0.05;
    std::uint64_t seed = 0;
};

struct SyntheticData {
    ItemCatalog catalog;
    std::vector<InteractionSequence> sequences;
    std::vector<std::size_t> regime_of_user;  // parallel to sequences
};

// Each user draws i.i.d. from their regime pool, except with
// cross_regime_prob from a random other pool. Deterministic under seed.
SyntheticData gen_synthetic(const SyntheticSpec& spec);

std::string regime_name(std::size_t idx);

struct LoadedInteractions {
    std::vector<InteractionSequence> sequences;
    std::size_t dropped = 0;  // users with fewer than 2 rows
};

// TSV rows "user<TAB>item<TAB>timestamp"; rows grouped by user, stable-sorted
// by timestamp; the last item becomes the held-out truth.
LoadedInteractions load_interactions(const std::string& path, const ItemCatalog& catalog);
void save_interactions(const std::string& path,
                       const std::vector<InteractionSequence>& seqs);

ItemCatalog load_catalog(const std::string& path);  // TSV "id<TAB>title"
void save_catalog(const std::string& path, const ItemCatalog& catalog);

// 20 uniform draws without replacement from items outside history+truth,
// truth inserted at a uniform random position.
CandidateSet make_candidates(const InteractionSequence& seq, const ItemCatalog& catalog,
                             Rng& rng);

// Hybrid prompt text with one [BEH] marker after each history item title.
struct InstructionPair {
    std::uint64_t user = 0;
    std::vector<int> items;  // history, most recent last
    CandidateSet candidates;
    int truth = 0;
    std::string prompt_text;
    std::string target_text;
};

inline constexpr const char* kDefaultTemplate =
    "this user has watched {history} in the previous. recommend the next item "
    "from the following candidates: {candidates}. answer:";

std::string render_prompt(const std::string& templ, const ItemCatalog& catalog,
                          const std::vector<int>& history, const CandidateSet& cands);

// One pair per sequence; candidate draws use a per-user derived rng stream
// (seed xor user id) so parallel rendering stays deterministic.
std::vector<InstructionPair> render_pairs(const std::vector<InteractionSequence>& seqs,
                                          const ItemCatalog& catalog,
                                          const std::string& templ, std::uint64_t seed,
                                          std::size_t max_history);

void save_pairs_jsonl(const std::string& path, const std::vector<InstructionPair>& pairs);
std::vector<InstructionPair> load_pairs_jsonl(const std::string& path);

}  // namespace ilora
