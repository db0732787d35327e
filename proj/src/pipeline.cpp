#include "ilora/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "ilora/checkpoint.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace ilora::pipeline {
namespace {

// Fixed rng substreams off the run seed. lora shares the k=1 adapter and
// shuffle streams so uniform and single-expert runs start bitwise identical.
constexpr std::uint64_t kStreamSrInit = 1;
constexpr std::uint64_t kStreamSrTrain = 2;
constexpr std::uint64_t kStreamLmInit = 3;
constexpr std::uint64_t kStreamPretrain = 4;
constexpr std::uint64_t kStreamAdapterBase = 10;  // + effective expert count
constexpr std::uint64_t kStreamFinetuneBase = 20;
constexpr std::uint64_t kStreamCaptureSample = 30;
constexpr std::uint64_t kStreamCluster = 31;

std::string join(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output dir '" + dir + "'");
}

void require_artifact(const std::string& path, const std::string& stage) {
    if (!fs::exists(path))
        throw std::runtime_error("missing artifact '" + path + "'; run " + stage +
                                 " first");
}

std::string hash_hex(std::uint64_t h) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write '" + path + "'");
    os << text;
}

void write_losses_csv(const std::string& path, const std::string& index_name,
                      const std::vector<double>& losses) {
    std::ostringstream os;
    os << index_name << ",loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i)
        os << (i + 1) << ',' << fmt_double(losses[i]) << '\n';
    write_text(path, os.str());
}

std::string manifest_path(const std::string& dir, const std::string& stage) {
    return join(dir, "manifest_" + stage + ".json");
}

void write_manifest(const std::string& dir, const std::string& stage,
                    const RunConfig& cfg, const std::vector<std::string>& outputs) {
    json m;
    m["stage"] = stage;
    m["config_hash"] = hash_hex(config_hash(cfg));
    m["seed"] = cfg.seed;
    m["versions"] = {{"checkpoint", kCheckpointVersion}, {"pipeline", 1}};
    m["outputs"] = outputs;
    m["completed"] = true;
    write_text(manifest_path(dir, stage), m.dump(2) + "\n");
}

// A stage is a no-op when its manifest matches the config+seed and every
// listed output still exists.
bool stage_done(const std::string& dir, const std::string& stage,
                const RunConfig& cfg) {
    std::ifstream is(manifest_path(dir, stage), std::ios::binary);
    if (!is) return false;
    json m;
    try {
        is >> m;
    } catch (const json::exception&) {
        return false;
    }
    if (m.value("stage", "") != stage) return false;
    if (m.value("config_hash", "") != hash_hex(config_hash(cfg))) return false;
    if (m.value("seed", std::uint64_t{0}) != cfg.seed) return false;
    if (!m.value("completed", false)) return false;
    if (!m.contains("outputs")) return false;
    for (const auto& o : m["outputs"])
        if (!fs::exists(join(dir, o.get<std::string>()))) return false;
    return true;
}

ItemCatalog read_catalog(const std::string& dir) {
    require_artifact(join(dir, "catalog.tsv"), "gen-data");
    return load_catalog(join(dir, "catalog.tsv"));
}

std::vector<InteractionSequence> read_sequences(const std::string& dir,
                                                const ItemCatalog& cat) {
    require_artifact(join(dir, "interactions.tsv"), "gen-data");
    return load_interactions(join(dir, "interactions.tsv"), cat).sequences;
}

std::vector<InstructionPair> read_pairs(const std::string& dir) {
    require_artifact(join(dir, "pairs.jsonl"), "render-pairs");
    return load_pairs_jsonl(join(dir, "pairs.jsonl"));
}

SeqRecModel read_sr(const RunConfig& cfg, const std::string& dir,
                    std::size_t catalog_size) {
    require_artifact(join(dir, "sr.ckpt"), "train-sr");
    Rng scratch(0);
    SeqRecModel sr(cfg.seqrec_config(), catalog_size, scratch);
    sr.load_tensors(load_checkpoint(join(dir, "sr.ckpt")));
    sr.freeze();
    return sr;
}

ToyLM read_lm(const RunConfig& cfg, const std::string& dir, std::size_t vocab_size) {
    require_artifact(join(dir, "lm.ckpt"), "pretrain-lm");
    Rng scratch(0);
    ToyLM lm(cfg.lm_config(), vocab_size, scratch);
    lm.load_tensors(load_checkpoint(join(dir, "lm.ckpt")));
    lm.freeze();
    return lm;
}

struct Variant {
    TuneMode mode;
    std::size_t k;  // effective expert count (1 for uniform)
    std::string tag;
};

std::vector<Variant> variants_of(const RunConfig& cfg) {
    std::vector<Variant> out;
    if (cfg.sweep.empty()) {
        const TuneMode m = cfg.tune_mode();
        const std::size_t k = m == TuneMode::uniform_lora ? 1 : cfg.k_experts;
        out.push_back({m, k, variant_tag(cfg.mode, cfg.k_experts)});
    } else {
        for (std::size_t k : cfg.sweep)
            out.push_back({TuneMode::ilora, k, variant_tag("ilora", k)});
    }
    return out;
}

AdapterSet fresh_adapters(const RunConfig& cfg, const Variant& v) {
    Rng rng = Rng(cfg.seed).derive(kStreamAdapterBase + v.k);
    return make_adapter_set(v.mode, cfg.lm_config(), cfg.sr_dim, cfg.r, v.k,
                            cfg.alpha, cfg.temperature, rng);
}

AdapterSet read_adapters(const RunConfig& cfg, const std::string& dir,
                         const Variant& v) {
    require_artifact(join(dir, "adapters_" + v.tag + ".ckpt"), "finetune");
    AdapterSet ad = fresh_adapters(cfg, v);
    ad.load_tensors(load_checkpoint(join(dir, "adapters_" + v.tag + ".ckpt")));
    return ad;
}

std::string step_ckpt_name(const std::string& tag, std::size_t step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "_step%04zu.ckpt", step);
    return "adapters_" + tag + buf;
}

// Deterministic capture subset: partial Fisher-Yates over the pair indices.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t limit, Rng rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    const std::size_t take = std::min(limit, n);
    for (std::size_t i = 0; i < take; ++i)
        std::swap(idx[i], idx[i + rng.next_below(n - i)]);
    idx.resize(take);
    return idx;
}

InteractionSequence gate_sequence(const InstructionPair& p) {
    return InteractionSequence{p.user, p.items, -1};
}

}  // namespace

std::string out_dir(const RunConfig& cfg) {
    if (const char* env = std::getenv("ILORA_OUT"); env && *env) return env;
    return cfg.out_dir;
}

std::string variant_tag(const std::string& mode, std::size_t k) {
    return mode == "lora" ? "lora" : "ilora_k" + std::to_string(k);
}

StageResult gen_data(const RunConfig& cfg, bool force) {
    const std::string dir = out_dir(cfg);
    ensure_dir(dir);
    const bool synthetic = cfg.catalog_path.empty();
    std::vector<std::string> outputs = {"catalog.tsv", "interactions.tsv"};
    if (synthetic) outputs.push_back("regimes.csv");
    if (!force && stage_done(dir, "gen-data", cfg)) return {true, outputs};

    if (synthetic) {
        SyntheticData data = gen_synthetic(cfg.synthetic_spec());
        save_catalog(join(dir, "catalog.tsv"), data.catalog);
        save_interactions(join(dir, "interactions.tsv"), data.sequences);
        std::ostringstream os;
        os << "user,regime\n";
        for (std::size_t i = 0; i < data.sequences.size(); ++i)
            os << data.sequences[i].user_id << ',' << data.regime_of_user[i] << '\n';
        write_text(join(dir, "regimes.csv"), os.str());
    } else {
        if (cfg.interactions_path.empty())
            throw std::runtime_error(
                "data.catalog is set but data.interactions is not");
        ItemCatalog cat = load_catalog(cfg.catalog_path);
        LoadedInteractions li = load_interactions(cfg.interactions_path, cat);
        save_catalog(join(dir, "catalog.tsv"), cat);
        save_interactions(join(dir, "interactions.tsv"), li.sequences);
    }
    write_manifest(dir, "gen-data", cfg, outputs);
    return {false, outputs};
}

StageResult train_sr(const RunConfig& cfg, bool force) {
    const std::string dir = out_dir(cfg);
    ensure_dir(dir);
    std::vector<std::string> outputs = {"sr.ckpt", "sr_losses.csv"};
    if (!force && stage_done(dir, "train-sr", cfg)) return {true, outputs};

    ItemCatalog cat = read_catalog(dir);
    auto seqs = read_sequences(dir, cat);
    Rng init = Rng(cfg.seed).derive(kStreamSrInit);
    SeqRecModel sr(cfg.seqrec_config(), cat.size(), init);
    Rng train_rng = Rng(cfg.seed).derive(kStreamSrTrain);
    auto losses = sr.train(seqs, train_rng);
    save_checkpoint(join(dir, "sr.ckpt"), sr.tensors());
    write_losses_csv(join(dir, "sr_losses.csv"), "epoch", losses);
    write_manifest(dir, "train-sr", cfg, outputs);
    return {false, outputs};
}

StageResult render_pairs_stage(const RunConfig& cfg, bool force) {
    const std::string dir = out_dir(cfg);
    ensure_dir(dir);
    std::vector<std::string> outputs = {"pairs.jsonl"};
    if (!force && stage_done(dir, "render-pairs", cfg)) return {true, outputs};

    ItemCatalog cat = read_catalog(dir);
    auto seqs = read_sequences(dir, cat);
    auto pairs = render_pairs(seqs, cat, cfg.prompt_template, cfg.seed,
                              cfg.max_history);
    save_pairs_jsonl(join(dir, "pairs.jsonl"), pairs);
    write_manifest(dir, "render-pairs", cfg, outputs);
    return {false, outputs};
}

StageResult pretrain_lm(const RunConfig& cfg, bool force) {
    const std::string dir = out_dir(cfg);
    ensure_dir(dir);
    std::vector<std::string> outputs = {"lm.ckpt", "pretrain_losses.csv"};
    if (!force && stage_done(dir, "pretrain-lm", cfg)) return {true, outputs};

    ItemCatalog cat = read_catalog(dir);
    auto pairs = read_pairs(dir);
    Vocab v = build_vocab(cat, {cfg.prompt_template});
    Rng init = Rng(cfg.seed).derive(kStreamLmInit);
    ToyLM lm(cfg.lm_config(), v.size(), init);

    // Prompts plus cycled catalog titles: the base learns the prompt surface
    // and title statistics without a preference for any particular answer.
    std::vector<std::string> texts;
    texts.reserve(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i)
        texts.push_back(pairs[i].prompt_text + " " +
                        cat.title(static_cast<int>(1 + i % cat.size())));

    Rng pr = Rng(cfg.seed).derive(kStreamPretrain);
    auto losses = pretrain(lm, v, texts, cfg.pretrain_steps, cfg.pretrain_lr,
                           cfg.pretrain_batch, pr);
    save_checkpoint(join(dir, "lm.ckpt"), lm.tensors());
    write_losses_csv(join(dir, "pretrain_losses.csv"), "step", losses);
    write_manifest(dir, "pretrain-lm", cfg, outputs);
    return {false, outputs};
}

StageResult finetune_stage(const RunConfig& cfg, bool force) {
    const std::string dir = out_dir(cfg);
    ensure_dir(dir);
    const auto variants = variants_of(cfg);
    std::vector<std::string> outputs;
    for (const auto& v : variants) {
        outputs.push_back("adapters_" + v.tag + ".ckpt");
        outputs.push_back("ft_losses_" + v.tag + ".csv");
        if (cfg.ckpt_every > 0)
            for (std::size_t s = cfg.ckpt_every; s <= cfg.total_steps;
                 s += cfg.ckpt_every)
                outputs.push_back(step_ckpt_name(v.tag, s));
    }
    if (!cfg.sweep.empty()) outputs.push_back("sweep_curves.csv");
    if (!force && stage_done(dir, "finetune", cfg)) return {true, outputs};

    ItemCatalog cat = read_catalog(dir);
    auto pairs = read_pairs(dir);
    Vocab v = build_vocab(cat, {cfg.prompt_template});
    SeqRecModel sr = read_sr(cfg, dir, cat.size());
    ToyLM lm = read_lm(cfg, dir, v.size());

    std::vector<std::vector<double>> curves;
    for (const auto& var : variants) {
        AdapterSet ad = fresh_adapters(cfg, var);
        Rng train_rng = Rng(cfg.seed).derive(kStreamFinetuneBase + var.k);
        CkptHook on_ckpt = [&](std::size_t step, const NamedTensors& tensors) {
            save_checkpoint(join(dir, step_ckpt_name(var.tag, step)), tensors);
        };
        auto losses = finetune(lm, ad, sr, v, pairs, cfg.finetune_config(),
                               train_rng, on_ckpt);
        save_checkpoint(join(dir, "adapters_" + var.tag + ".ckpt"), ad.tensors());
        write_losses_csv(join(dir, "ft_losses_" + var.tag + ".csv"), "step", losses);
        curves.push_back(std::move(losses));
    }

    if (!cfg.sweep.empty()) {
        std::ostringstream os;
        os << "step";
        for (std::size_t k : cfg.sweep) os << ",k" << k;
        os << '\n';
        for (std::size_t s = 0; s < cfg.total_steps; ++s) {
            os << (s + 1);
            for (const auto& c : curves) os << ',' << fmt_double(c[s]);
            os << '\n';
        }
        write_text(join(dir, "sweep_curves.csv"), os.str());
    }
    write_manifest(dir, "finetune", cfg, outputs);
    return {false, outputs};
}

StageResult evaluate_stage(const RunConfig& cfg, bool force) {
    const std::string dir = out_dir(cfg);
    ensure_dir(dir);
    const auto variants = variants_of(cfg);
    std::vector<std::string> outputs;
    for (const auto& v : variants) outputs.push_back("eval_" + v.tag + ".json");
    if (!cfg.sweep.empty()) {
        outputs.push_back("sweep_table.csv");
        outputs.push_back("sweep_notes.txt");
    }
    if (!force && stage_done(dir, "evaluate", cfg)) return {true, outputs};

    ItemCatalog cat = read_catalog(dir);
    auto pairs = read_pairs(dir);
    Vocab v = build_vocab(cat, {cfg.prompt_template});
    SeqRecModel sr = read_sr(cfg, dir, cat.size());
    ToyLM lm = read_lm(cfg, dir, v.size());

    std::vector<EvalReport> reports;
    for (const auto& var : variants) {
        AdapterSet ad = read_adapters(cfg, dir, var);
        EvalReport rep = evaluate(lm, ad, sr, v, cat, pairs, cfg.eval_max_new);
        write_text(join(dir, "eval_" + var.tag + ".json"),
                   eval_report_json(rep) + "\n");
        reports.push_back(std::move(rep));
    }

    if (!cfg.sweep.empty()) {
        std::ostringstream os;
        os << "k,hit_ratio_1,valid_ratio,n_eval\n";
        for (std::size_t i = 0; i < variants.size(); ++i)
            os << variants[i].k << ',' << fmt_double(reports[i].hit_ratio_1) << ','
               << fmt_double(reports[i].valid_ratio) << ',' << reports[i].n_eval
               << '\n';
        write_text(join(dir, "sweep_table.csv"), os.str());

        std::size_t best = 0;
        for (std::size_t i = 1; i < reports.size(); ++i)
            if (reports[i].hit_ratio_1 > reports[best].hit_ratio_1) best = i;
        std::ostringstream notes;
        notes << "expert-count sweep over " << variants.size() << " settings\n";
        notes << "peak hit_ratio_1 " << fmt_double(reports[best].hit_ratio_1)
              << " at k=" << variants[best].k << "\n";
        for (std::size_t i = 0; i < variants.size(); ++i)
            notes << "k=" << variants[i].k
                  << " hit_ratio_1=" << fmt_double(reports[i].hit_ratio_1)
                  << " valid_ratio=" << fmt_double(reports[i].valid_ratio) << "\n";
        write_text(join(dir, "sweep_notes.txt"), notes.str());
    }
    write_manifest(dir, "evaluate", cfg, outputs);
    return {false, outputs};
}

StageResult analyze_gradients(const RunConfig& cfg, bool force) {
    const std::string dir = out_dir(cfg);
    ensure_dir(dir);
    std::vector<std::string> outputs = {"clusters.csv", "grad_heatmap.csv",
                                        "grad_heatmap.svg"};
    if (!force && stage_done(dir, "analyze-gradients", cfg)) return {true, outputs};
    if (cfg.ckpt_every == 0 || cfg.ckpt_every > cfg.total_steps)
        throw std::runtime_error(
            "analyze-gradients needs a checkpoint stream; set schedule.ckpt_every "
            "between 1 and schedule.total_steps");

    ItemCatalog cat = read_catalog(dir);
    auto pairs = read_pairs(dir);
    Vocab v = build_vocab(cat, {cfg.prompt_template});
    SeqRecModel sr = read_sr(cfg, dir, cat.size());
    ToyLM lm = read_lm(cfg, dir, v.size());
    const Variant var = variants_of(cfg).front();

    auto idx = sample_indices(pairs.size(), cfg.capture_limit,
                              Rng(cfg.seed).derive(kStreamCaptureSample));
    std::vector<InstructionPair> sampled;
    for (std::size_t i : idx) sampled.push_back(pairs[i]);

    Matrix emb(sampled.size(), cfg.sr_dim);
    for (std::size_t i = 0; i < sampled.size(); ++i) {
        Matrix z = sr.encode(gate_sequence(sampled[i]));
        for (std::size_t j = 0; j < cfg.sr_dim; ++j) emb.at(i, j) = z.at(0, j);
    }
    const std::size_t n_clusters = std::min(cfg.clusters, sampled.size());
    Rng cl_rng = Rng(cfg.seed).derive(kStreamCluster);
    ClusterAssignment assign = cluster_sequences(emb, n_clusters, cl_rng);

    std::ostringstream cl_csv;
    cl_csv << "user,cluster\n";
    for (std::size_t i = 0; i < sampled.size(); ++i)
        cl_csv << sampled[i].user << ',' << assign.cluster[i] << '\n';
    write_text(join(dir, "clusters.csv"), cl_csv.str());

    // per-cluster granularity captures only the pair nearest each centroid
    std::vector<InstructionPair> capture = sampled;
    std::unordered_map<std::uint64_t, std::size_t> cluster_of_user;
    for (std::size_t i = 0; i < sampled.size(); ++i)
        cluster_of_user[sampled[i].user] = assign.cluster[i];
    if (cfg.granularity == "per-cluster") {
        capture.clear();
        for (std::size_t c = 0; c < n_clusters; ++c) {
            std::size_t best = sampled.size();
            double best_d = 0.0;
            for (std::size_t i = 0; i < sampled.size(); ++i) {
                if (assign.cluster[i] != c) continue;
                double d = 0.0;
                for (std::size_t j = 0; j < emb.cols; ++j) {
                    const double diff = emb.at(i, j) - assign.centroids.at(c, j);
                    d += diff * diff;
                }
                if (best == sampled.size() || d < best_d) best = i, best_d = d;
            }
            if (best < sampled.size()) capture.push_back(sampled[best]);
        }
    }

    AdapterSet ad = fresh_adapters(cfg, var);
    std::vector<GradientRecord> records;
    for (std::size_t step = cfg.ckpt_every; step <= cfg.total_steps;
         step += cfg.ckpt_every) {
        const std::string ckpt = join(dir, step_ckpt_name(var.tag, step));
        require_artifact(ckpt, "finetune");
        ad.load_tensors(load_checkpoint(ckpt));
        auto batch = capture_grads(lm, ad, sr, v, capture, step);
        for (auto& r : batch) r.owner = cluster_of_user.at(r.owner);
        records.insert(records.end(), std::make_move_iterator(batch.begin()),
                       std::make_move_iterator(batch.end()));
    }

    Heatmap heat = grad_similarity(records, n_clusters);
    heat = reorder_heatmap(heat, assign.display_order);
    export_heatmap(heat, join(dir, "grad_heatmap.csv"), join(dir, "grad_heatmap.svg"));
    write_manifest(dir, "analyze-gradients", cfg, outputs);
    return {false, outputs};
}

StageResult export_attention_stage(const RunConfig& cfg, bool force) {
    const std::string dir = out_dir(cfg);
    ensure_dir(dir);
    std::vector<std::string> outputs = {"attention.csv", "attention.svg"};
    if (!force && stage_done(dir, "export-attention", cfg)) return {true, outputs};
    if (cfg.tune_mode() != TuneMode::ilora)
        throw std::runtime_error("export-attention requires adapters.mode = ilora");

    ItemCatalog cat = read_catalog(dir);
    auto pairs = read_pairs(dir);
    SeqRecModel sr = read_sr(cfg, dir, cat.size());
    const Variant var = variants_of(cfg).front();
    AdapterSet ad = read_adapters(cfg, dir, var);

    auto idx = sample_indices(pairs.size(), cfg.capture_limit,
                              Rng(cfg.seed).derive(kStreamCaptureSample));
    std::vector<std::pair<std::string, std::vector<double>>> rows;
    for (std::size_t i : idx) {
        Matrix z = sr.encode(gate_sequence(pairs[i]));
        Matrix omega = gate_eval(ad.gate, z);
        rows.emplace_back("user " + std::to_string(pairs[i].user), omega.data);
    }
    export_attention(rows, join(dir, "attention.csv"), join(dir, "attention.svg"));
    write_manifest(dir, "export-attention", cfg, outputs);
    return {false, outputs};
}

double run_grad_check(std::uint64_t seed) {
    // Compact fixed dimensions keep the finite-difference sweep under budget
    // while still exercising every trainable tensor kind.
    ItemCatalog cat;
    cat.titles = {"",          "red shoes",  "blue sky",    "green tea",
                  "gold rush", "silver fox", "white noise"};
    Vocab v = build_vocab(cat, {kDefaultTemplate});
    ToyLMConfig cfg{16, 1, 2, 96};
    Rng lm_rng(seed);
    ToyLM lm(cfg, v.size(), lm_rng);
    lm.freeze();
    SeqRecConfig scfg;
    scfg.dim = 8;
    scfg.heads = 2;
    scfg.blocks = 1;
    scfg.max_seq_len = 12;
    Rng sr_rng = Rng(seed).derive(1);
    SeqRecModel sr(scfg, cat.size(), sr_rng);
    sr.freeze();
    Rng ad_rng = Rng(seed).derive(2);
    AdapterSet ad =
        make_adapter_set(TuneMode::ilora, cfg, scfg.dim, 4, 2, 16.0, 1.0, ad_rng);
    Rng perturb = Rng(seed).derive(3);  // move off the zero-init saddle
    for (Param* p : ad.trainable())
        for (auto& val : p->value.data) val = perturb.next_gaussian(0.0, 0.05);

    InstructionPair pair;
    pair.user = 7;
    pair.items = {1, 2};
    pair.candidates.items = {3, 4};
    pair.candidates.truth_index = 1;
    pair.truth = 4;
    pair.prompt_text = render_prompt(kDefaultTemplate, cat, pair.items, pair.candidates);
    pair.target_text = cat.title(pair.truth);

    auto trainable = ad.trainable();
    auto loss_fn = [&]() {
        Tape t;
        auto loss = lm_loss(t, lm, ad, sr, v, pair, TuneMode::ilora);
        t.backward(loss);
        return t.value(loss).at(0, 0);
    };
    return grad_check(loss_fn, trainable, 1e-5);
}

std::string param_count_table(const RunConfig& cfg) {
    AdapterLayout lay;
    lay.n_layers = cfg.lm_blocks;
    lay.matrices_per_layer = 2;
    lay.d_model = cfg.d_model;
    lay.r = cfg.r;
    lay.k_experts = cfg.k_experts;
    lay.gate_dim = cfg.sr_dim;
    const ParamCounts uni = count_trainable(false, lay);
    const ParamCounts mix = count_trainable(true, lay);

    std::ostringstream os;
    os << "variant,adapter,projector,gate,total\n";
    os << "uniform," << uni.adapter << ',' << uni.projector << ',' << uni.gate << ','
       << uni.total << '\n';
    os << "instance-wise," << mix.adapter << ',' << mix.projector << ',' << mix.gate
       << ',' << mix.total << '\n';
    os << "gate overhead vs adapter params: "
       << fmt_double(100.0 * mix.increase_vs_adapter) << "%\n";
    os << "gate overhead vs uniform trainable total: "
       << fmt_double(100.0 * mix.increase_vs_total) << "%\n";
    return os.str();
}

}  // namespace ilora::pipeline
