#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ilora/datasets.hpp"
#include "ilora/matrix.hpp"
#include "ilora/rng.hpp"
#include "ilora/toylm.hpp"

namespace ilora {

struct EvalRecord {
    std::uint64_t user = 0;
    std::string generated;
    int matched = -1;  // candidate item id, -1 when no candidate matches
    bool correct = false;
};

struct EvalReport {
    double hit_ratio_1 = 0.0;   // exact-truth matches / n
    double valid_ratio = 0.0;   // in-candidate outputs / n
    std::size_t n_eval = 0;
    std::vector<EvalRecord> records;
};

// Greedy-decode every pair; outputs compared to candidate titles after
// normalization. hit_count <= valid_count always.
EvalReport evaluate(ToyLM& lm, AdapterSet& ad, const SeqRecModel& sr, const Vocab& v,
                    const ItemCatalog& catalog, const std::vector<InstructionPair>& pairs,
                    std::size_t max_new = 12);

std::string eval_report_json(const EvalReport& report);

// One flattened adapter-gradient vector, per module kind ("q" / "v"),
// averaged across layers. owner is the sequence's user or a cluster id.
struct GradientRecord {
    std::size_t step = 0;
    std::string module_name;
    std::uint64_t owner = 0;
    std::vector<double> vec;
};

// Gradient-only pass at the current weights for each pair: backward through
// the fine-tuning loss, flatten each adapted (A, B) pair, average across
// layers per module kind. Weights are asserted unchanged.
std::vector<GradientRecord> capture_grads(ToyLM& lm, AdapterSet& ad,
                                          const SeqRecModel& sr, const Vocab& v,
                                          const std::vector<InstructionPair>& pairs,
                                          std::size_t step);

struct ClusterAssignment {
    std::vector<std::size_t> cluster;        // per input row
    Matrix centroids;                        // C x d
    std::vector<std::size_t> display_order;  // average-linkage leaf order
};

// k-means (k-means++ seeding, Euclidean, <=100 iterations or shift < 1e-6)
// over row embeddings, then average-linkage ordering of the centroids.
ClusterAssignment cluster_sequences(const Matrix& embeddings, std::size_t c, Rng& rng);

double cluster_purity(const ClusterAssignment& a, const std::vector<std::size_t>& truth);

struct Heatmap {
    Matrix values;  // C x C, symmetric, entries in [-1, 1]
    std::vector<std::string> labels;
    std::size_t excluded = 0;  // zero-norm pairs skipped
};

// records carry owner = cluster id. Per step and module: cluster-mean
// gradient, pairwise cosine; mean over modules, then over steps.
Heatmap grad_similarity(const std::vector<GradientRecord>& records,
                        std::size_t n_clusters);

Heatmap reorder_heatmap(const Heatmap& h, const std::vector<std::size_t>& order);

void export_heatmap(const Heatmap& h, const std::string& path_csv,
                    const std::string& path_svg);
Matrix load_heatmap_csv(const std::string& path);

// One stacked bar of expert mixture weights per sequence.
void export_attention(const std::vector<std::pair<std::string, std::vector<double>>>& rows,
                      const std::string& path_csv, const std::string& path_svg);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace ilora
