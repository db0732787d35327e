// Single-binary pipeline driver: every stage is a subcommand over one shared
// config model. Flags override config keys; stages are restartable via their
// manifests unless --force.
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ilora/config.hpp"
#include "ilora/pipeline.hpp"

namespace {

struct CliState {
    std::string config_path;
    std::vector<std::string> overrides;
    bool force = false;
};

ilora::RunConfig resolve_config(const CliState& st) {
    ilora::RunConfig cfg =
        st.config_path.empty() ? ilora::RunConfig{} : ilora::parse_config(st.config_path);
    for (const auto& o : st.overrides) ilora::apply_override(cfg, o);
    return cfg;
}

void report(const char* stage, const ilora::pipeline::StageResult& res) {
    std::printf("%s: %s (%zu artifacts)\n", stage,
                res.skipped ? "up to date" : "done", res.outputs.size());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mixture-of-adapters recommendation pipeline"};
    app.require_subcommand(1);

    CliState st;
    app.add_option("--config", st.config_path, "config file (key = value sections)");
    app.add_option("--set", st.overrides, "override a config key, section.key=value");
    app.add_flag("--force", st.force, "rerun the stage even if its manifest matches");

    using Stage = ilora::pipeline::StageResult (*)(const ilora::RunConfig&, bool);
    const std::vector<std::pair<const char*, Stage>> stages = {
        {"gen-data", ilora::pipeline::gen_data},
        {"train-sr", ilora::pipeline::train_sr},
        {"render-pairs", ilora::pipeline::render_pairs_stage},
        {"pretrain-lm", ilora::pipeline::pretrain_lm},
        {"finetune", ilora::pipeline::finetune_stage},
        {"evaluate", ilora::pipeline::evaluate_stage},
        {"analyze-gradients", ilora::pipeline::analyze_gradients},
        {"export-attention", ilora::pipeline::export_attention_stage},
    };
    for (const auto& [name, fn] : stages) {
        CLI::App* sub = app.add_subcommand(name);
        sub->callback([&st, name = name, fn = fn]() {
            report(name, fn(resolve_config(st), st.force));
        });
    }

    CLI::App* gc = app.add_subcommand(
        "grad-check", "finite-difference audit of the instance-wise loss");
    gc->callback([&st]() {
        const ilora::RunConfig cfg = resolve_config(st);
        const double err = ilora::pipeline::run_grad_check(cfg.seed);
        std::printf("grad-check: max relative error %.3e\n", err);
        if (err >= 1e-4) throw std::runtime_error("gradient check failed, tolerance 1e-4");
    });

    CLI::App* pc = app.add_subcommand("param-count", "trainable parameter accounting");
    pc->callback([&st]() {
        std::fputs(ilora::pipeline::param_count_table(resolve_config(st)).c_str(),
                   stdout);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
