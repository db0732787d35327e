#pragma once

#include <string>
#include <vector>

#include "ilora/config.hpp"
#include "ilora/eval.hpp"

namespace ilora::pipeline {

// ILORA_OUT env var overrides the configured output directory.
std::string out_dir(const RunConfig& cfg);

struct StageResult {
    bool skipped = false;  // manifest already matches config+seed
    std::vector<std::string> outputs;
};

// Each stage writes its artifacts plus manifest_<stage>.json (config hash,
// seed, versions) under the output dir. Rerunning a completed stage with the
// same config is a no-op unless force. Missing upstream artifacts raise a
// dependency error naming the artifact and the stage that produces it.
StageResult gen_data(const RunConfig& cfg, bool force = false);
StageResult train_sr(const RunConfig& cfg, bool force = false);
StageResult render_pairs_stage(const RunConfig& cfg, bool force = false);
StageResult pretrain_lm(const RunConfig& cfg, bool force = false);
StageResult finetune_stage(const RunConfig& cfg, bool force = false);
StageResult evaluate_stage(const RunConfig& cfg, bool force = false);
StageResult analyze_gradients(const RunConfig& cfg, bool force = false);
StageResult export_attention_stage(const RunConfig& cfg, bool force = false);

// Finite-difference audit of the full instance-wise loss on compact fixed
// dimensions; returns the max relative error (gate < 1e-4).
double run_grad_check(std::uint64_t seed);

std::string param_count_table(const RunConfig& cfg);

// "lora" or "ilora_k<K>" artifact tag.
std::string variant_tag(const std::string& mode, std::size_t k);

}  // namespace ilora::pipeline
