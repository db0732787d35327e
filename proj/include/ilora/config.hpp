#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ilora/datasets.hpp"
#include "ilora/seqrec.hpp"
#include "ilora/toylm.hpp"

namespace ilora {

// Whole-pipeline configuration, "key = value" lines under [section] headers.
// Defaults are desk-scale so the end-to-end run fits a laptop budget; the
// reference-architecture sizes live in the library type defaults.
struct RunConfig {
    // [run]
    std::uint64_t seed = 7;
    std::string out_dir = "runs/default";

    // [data] — file paths win over the synthetic generator when set
    std::string catalog_path;
    std::string interactions_path;
    std::size_t num_regimes = 4;
    std::size_t items_per_regime = 8;
    std::size_t users_per_regime = 64;
    std::size_t seq_min = 4;
    std::size_t seq_max = 10;
    double cross_regime_prob = 0.05;
    std::size_t max_history = 8;
    std::string prompt_template = kDefaultTemplate;

    // [seqrec]
    std::size_t sr_dim = 64;
    std::size_t sr_heads = 2;
    std::size_t sr_blocks = 2;
    std::size_t sr_max_seq_len = 50;
    double sr_lr = 1e-3;
    std::size_t sr_batch = 256;
    std::size_t sr_epochs = 10;

    // [lm]
    std::size_t d_model = 64;
    std::size_t lm_blocks = 2;
    std::size_t lm_heads = 2;
    std::size_t context = 256;
    std::size_t pretrain_steps = 600;
    double pretrain_lr = 3e-3;
    std::size_t pretrain_batch = 8;

    // [adapters]
    std::string mode = "ilora";  // "lora" or "ilora"
    std::size_t r = 8;
    double alpha = 16.0;
    std::size_t k_experts = 4;
    double temperature = 1.0;
    std::vector<std::size_t> sweep;  // optional expert-count sweep

    // [schedule]
    double max_lr = 5e-3;
    double floor_lr = 0.0;
    double weight_decay = 0.0;
    std::size_t warmup_steps = 50;
    std::size_t total_steps = 800;
    std::size_t batch = 8;
    std::size_t ckpt_every = 100;

    // [eval]
    std::size_t eval_max_new = 12;

    // [analysis]
    std::size_t clusters = 8;
    std::string granularity = "per-sequence";  // or "per-cluster"
    std::size_t capture_limit = 100;           // sequences sampled per checkpoint

    SyntheticSpec synthetic_spec() const;
    SeqRecConfig seqrec_config() const;
    ToyLMConfig lm_config() const;
    FinetuneConfig finetune_config() const;
    TuneMode tune_mode() const;
};

RunConfig parse_config(const std::string& path);
RunConfig parse_config_text(const std::string& text, const std::string& origin);

// Canonical form; parse(dump(cfg)) reproduces cfg exactly.
std::string dump_config(const RunConfig& cfg);

// "section.key=value" command-line override.
void apply_override(RunConfig& cfg, const std::string& assignment);

std::uint64_t config_hash(const RunConfig& cfg);

}  // namespace ilora
