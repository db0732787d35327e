#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "ilora/config.hpp"
#include "ilora/pipeline.hpp"

using namespace ilora;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string fresh_dir(const std::string& name) {
    const std::string dir = (fs::temp_directory_path() / name).string();
    fs::remove_all(dir);
    return dir;
}

// small enough that the full stage chain runs in seconds
RunConfig tiny_cfg(const std::string& dir) {
    RunConfig c;
    c.seed = 11;
    c.out_dir = dir;
    c.num_regimes = 2;
    c.items_per_regime = 16;
    c.users_per_regime = 6;
    c.seq_min = 3;
    c.seq_max = 5;
    c.sr_dim = 8;
    c.sr_heads = 2;
    c.sr_blocks = 1;
    c.sr_max_seq_len = 12;
    c.sr_batch = 12;
    c.sr_epochs = 3;
    c.d_model = 32;
    c.lm_blocks = 1;
    c.lm_heads = 2;
    c.context = 160;
    c.pretrain_steps = 30;
    c.pretrain_batch = 4;
    c.mode = "ilora";
    c.r = 4;
    c.k_experts = 2;
    c.total_steps = 20;
    c.warmup_steps = 2;
    c.batch = 4;
    c.ckpt_every = 10;
    c.clusters = 3;
    c.capture_limit = 8;
    return c;
}

void run_all_stages(const RunConfig& c) {
    pipeline::gen_data(c);
    pipeline::train_sr(c);
    pipeline::render_pairs_stage(c);
    pipeline::pretrain_lm(c);
    pipeline::finetune_stage(c);
    pipeline::evaluate_stage(c);
    pipeline::analyze_gradients(c);
    pipeline::export_attention_stage(c);
}

}  // namespace

TEST_CASE("config: minimal file gets defaults, k = 4 among them") {
    const RunConfig c = parse_config_text(
        "[run]\nseed = 42\nout_dir = runs/x\n", "mini");
    CHECK(c.seed == 42);
    CHECK(c.out_dir == "runs/x");
    CHECK(c.k_experts == 4);
    CHECK(c.r == 8);
    CHECK(c.mode == "ilora");
    CHECK(c.alpha == 16.0);
    CHECK(c.num_regimes == 4);
}

TEST_CASE("config: rank not divisible by expert count names key and line") {
    const std::string text = "[adapters]\nr = 8\nk = 3\n";
    CHECK_THROWS_WITH_AS(parse_config_text(text, "bad"),
                         doctest::Contains("bad:3"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config_text(text, "bad"),
                         doctest::Contains("adapters.k"), std::runtime_error);
}

TEST_CASE("config: unknown keys, type mismatch, and stray keys are errors") {
    CHECK_THROWS_WITH_AS(parse_config_text("[run]\nspeed = 3\n", "f"),
                         doctest::Contains("unknown key 'run.speed'"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config_text("[seqrec]\ndim = fast\n", "f"),
                         doctest::Contains("expected a non-negative integer"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config_text("seed = 3\n", "f"),
                         doctest::Contains("outside any [section]"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_config_text("[adapters]\nsweep = 1,3\n", "f"),
                         doctest::Contains("sweep entry 3"), std::runtime_error);
}

TEST_CASE("config: dump then parse is the identity, hash agrees") {
    RunConfig c;
    c.seed = 99;
    c.sweep = {1, 2, 4, 8};
    c.cross_regime_prob = 0.125;
    c.max_lr = 3.5e-3;
    const std::string text = dump_config(c);
    const RunConfig back = parse_config_text(text, "dump");
    CHECK(dump_config(back) == text);
    CHECK(config_hash(back) == config_hash(c));

    RunConfig other;
    other.seed = 100;
    CHECK(config_hash(other) != config_hash(c));
}

TEST_CASE("config: overrides parse, re-validate, and reject junk") {
    RunConfig c;
    apply_override(c, "adapters.k=2");
    CHECK(c.k_experts == 2);
    apply_override(c, "schedule.max_lr = 0.01");
    CHECK(c.max_lr == 0.01);
    CHECK_THROWS_WITH_AS(apply_override(c, "adapters.k=5"),
                         doctest::Contains("not divisible"), std::runtime_error);
    CHECK_THROWS_AS(apply_override(c, "nonsense"), std::runtime_error);
    CHECK_THROWS_WITH_AS(apply_override(c, "run.bogus=1"),
                         doctest::Contains("unknown key"), std::runtime_error);
}

TEST_CASE("variant tags") {
    CHECK(pipeline::variant_tag("lora", 4) == "lora");
    CHECK(pipeline::variant_tag("ilora", 4) == "ilora_k4");
}

TEST_CASE("pipeline: full stage chain, restart no-op, force rerun") {
    unsetenv("ILORA_OUT");
    const std::string dir = fresh_dir("ilora_pipe_smoke");
    RunConfig c = tiny_cfg(dir);
    run_all_stages(c);

    for (const char* name :
         {"catalog.tsv", "interactions.tsv", "regimes.csv", "sr.ckpt",
          "sr_losses.csv", "pairs.jsonl", "lm.ckpt", "pretrain_losses.csv",
          "adapters_ilora_k2.ckpt", "adapters_ilora_k2_step0010.ckpt",
          "adapters_ilora_k2_step0020.ckpt", "ft_losses_ilora_k2.csv",
          "eval_ilora_k2.json", "clusters.csv", "grad_heatmap.csv",
          "grad_heatmap.svg", "attention.csv", "attention.svg"})
        CHECK(fs::exists(fs::path(dir) / name));

    CHECK(pipeline::finetune_stage(c).skipped);
    CHECK(pipeline::evaluate_stage(c).skipped);
    CHECK_FALSE(pipeline::evaluate_stage(c, /*force=*/true).skipped);

    // a config change invalidates the manifest
    c.eval_max_new = 10;
    CHECK_FALSE(pipeline::evaluate_stage(c).skipped);
}

TEST_CASE("pipeline: dependency errors name the missing artifact and stage") {
    unsetenv("ILORA_OUT");
    const std::string dir = fresh_dir("ilora_pipe_deps");
    RunConfig c = tiny_cfg(dir);
    CHECK_THROWS_WITH_AS(pipeline::train_sr(c), doctest::Contains("run gen-data"),
                         std::runtime_error);
    pipeline::gen_data(c);
    CHECK_THROWS_WITH_AS(pipeline::pretrain_lm(c),
                         doctest::Contains("run render-pairs"), std::runtime_error);
    pipeline::render_pairs_stage(c);
    CHECK_THROWS_WITH_AS(pipeline::finetune_stage(c),
                         doctest::Contains("run train-sr"), std::runtime_error);
    pipeline::train_sr(c);
    CHECK_THROWS_WITH_AS(pipeline::finetune_stage(c),
                         doctest::Contains("run pretrain-lm"), std::runtime_error);
    pipeline::pretrain_lm(c);
    CHECK_THROWS_WITH_AS(pipeline::evaluate_stage(c),
                         doctest::Contains("run finetune"), std::runtime_error);
}

TEST_CASE("pipeline: ILORA_OUT wins over the configured output dir") {
    const std::string dir = fresh_dir("ilora_pipe_env");
    RunConfig c = tiny_cfg("/nonexistent/should-not-be-used");
    setenv("ILORA_OUT", dir.c_str(), 1);
    CHECK(pipeline::out_dir(c) == dir);
    pipeline::gen_data(c);
    CHECK(fs::exists(fs::path(dir) / "catalog.tsv"));
    unsetenv("ILORA_OUT");
    CHECK(pipeline::out_dir(c) == "/nonexistent/should-not-be-used");
}

TEST_CASE("pipeline: identical config and seed give byte-identical artifacts") {
    unsetenv("ILORA_OUT");
    const std::string a = fresh_dir("ilora_pipe_det_a");
    const std::string b = fresh_dir("ilora_pipe_det_b");
    RunConfig ca = tiny_cfg(a);
    RunConfig cb = tiny_cfg(b);
    for (const RunConfig* c : {&ca, &cb}) {
        pipeline::gen_data(*c);
        pipeline::train_sr(*c);
        pipeline::render_pairs_stage(*c);
    }
    for (const char* name :
         {"catalog.tsv", "interactions.tsv", "sr.ckpt", "sr_losses.csv",
          "pairs.jsonl"})
        CHECK(read_file((fs::path(a) / name).string()) ==
              read_file((fs::path(b) / name).string()));
}

TEST_CASE("pipeline: expert-count sweep emits table, curves, notes") {
    unsetenv("ILORA_OUT");
    const std::string dir = fresh_dir("ilora_pipe_sweep");
    RunConfig c = tiny_cfg(dir);
    c.sweep = {1, 2};
    c.total_steps = 10;
    c.ckpt_every = 0;
    pipeline::gen_data(c);
    pipeline::train_sr(c);
    pipeline::render_pairs_stage(c);
    pipeline::pretrain_lm(c);
    pipeline::finetune_stage(c);
    pipeline::evaluate_stage(c);

    const std::string curves = read_file((fs::path(dir) / "sweep_curves.csv").string());
    CHECK(curves.substr(0, curves.find('\n')) == "step,k1,k2");
    const std::string table = read_file((fs::path(dir) / "sweep_table.csv").string());
    CHECK(table.substr(0, table.find('\n')) == "k,hit_ratio_1,valid_ratio,n_eval");
    CHECK(table.find("\n1,") != std::string::npos);
    CHECK(table.find("\n2,") != std::string::npos);
    const std::string notes = read_file((fs::path(dir) / "sweep_notes.txt").string());
    CHECK(notes.find("peak hit_ratio_1") != std::string::npos);
    CHECK(fs::exists(fs::path(dir) / "eval_ilora_k1.json"));
    CHECK(fs::exists(fs::path(dir) / "eval_ilora_k2.json"));
}

TEST_CASE("pipeline: attention export refuses the uniform variant") {
    unsetenv("ILORA_OUT");
    const std::string dir = fresh_dir("ilora_pipe_attn");
    RunConfig c = tiny_cfg(dir);
    c.mode = "lora";
    CHECK_THROWS_WITH_AS(pipeline::export_attention_stage(c),
                         doctest::Contains("mode = ilora"), std::runtime_error);
}

TEST_CASE("grad-check audit and parameter table") {
    CHECK(pipeline::run_grad_check(22) < 1e-4);

    RunConfig c;  // defaults: 2 blocks, d_model 64, r 8, k 4, sr dim 64
    const std::string table = pipeline::param_count_table(c);
    CHECK(table.find("variant,adapter,projector,gate,total") != std::string::npos);
    CHECK(table.find("uniform,") != std::string::npos);
    CHECK(table.find("instance-wise,") != std::string::npos);
    CHECK(table.find("gate overhead") != std::string::npos);
}
