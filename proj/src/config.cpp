#include "ilora/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace ilora {

SyntheticSpec RunConfig::synthetic_spec() const {
    SyntheticSpec s;
    s.num_regimes = num_regimes;
    s.items_per_regime = items_per_regime;
    s.users_per_regime = users_per_regime;
    s.seq_min = seq_min;
    s.seq_max = seq_max;
    s.cross_regime_prob = cross_regime_prob;
    s.seed = seed;
    return s;
}

SeqRecConfig RunConfig::seqrec_config() const {
    SeqRecConfig c;
    c.dim = sr_dim;
    c.heads = sr_heads;
    c.blocks = sr_blocks;
    c.max_seq_len = sr_max_seq_len;
    c.lr = sr_lr;
    c.batch = sr_batch;
    c.epochs = sr_epochs;
    return c;
}

ToyLMConfig RunConfig::lm_config() const {
    ToyLMConfig c;
    c.d_model = d_model;
    c.blocks = lm_blocks;
    c.heads = lm_heads;
    c.context = context;
    return c;
}

FinetuneConfig RunConfig::finetune_config() const {
    FinetuneConfig c;
    c.max_lr = max_lr;
    c.floor_lr = floor_lr;
    c.weight_decay = weight_decay;
    c.warmup_steps = warmup_steps;
    c.total_steps = total_steps;
    c.batch = batch;
    c.ckpt_every = ckpt_every;
    return c;
}

TuneMode RunConfig::tune_mode() const {
    return mode == "lora" ? TuneMode::uniform_lora : TuneMode::ilora;
}

namespace {

[[noreturn]] void fail(const std::string& origin, std::size_t line,
                       const std::string& what) {
    throw std::runtime_error(origin + ":" + std::to_string(line) + ": " + what);
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

struct Setter {
    std::function<void(RunConfig&, const std::string& value, const std::string& origin,
                       std::size_t line, const std::string& key)>
        set;
};

std::size_t parse_size(const std::string& v, const std::string& origin,
                       std::size_t line, const std::string& key) {
    std::size_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        fail(origin, line, "key '" + key + "': expected a non-negative integer, got '" +
                               v + "'");
    return out;
}

std::uint64_t parse_u64(const std::string& v, const std::string& origin,
                        std::size_t line, const std::string& key) {
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        fail(origin, line, "key '" + key + "': expected a non-negative integer, got '" +
                               v + "'");
    return out;
}

double parse_double(const std::string& v, const std::string& origin, std::size_t line,
                    const std::string& key) {
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        fail(origin, line, "key '" + key + "': expected a number, got '" + v + "'");
    }
}

std::vector<std::size_t> parse_size_list(const std::string& v, const std::string& origin,
                                         std::size_t line, const std::string& key) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string part;
    while (std::getline(ss, part, ',')) {
        part = trim(part);
        if (part.empty()) continue;
        out.push_back(parse_size(part, origin, line, key));
    }
    return out;
}

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        auto size_key = [&t](const char* name, std::size_t RunConfig::* field) {
            t[name] = {[field](RunConfig& c, const std::string& v, const std::string& o,
                               std::size_t l, const std::string& k) {
                c.*field = parse_size(v, o, l, k);
            }};
        };
        auto double_key = [&t](const char* name, double RunConfig::* field) {
            t[name] = {[field](RunConfig& c, const std::string& v, const std::string& o,
                               std::size_t l, const std::string& k) {
                c.*field = parse_double(v, o, l, k);
            }};
        };
        auto string_key = [&t](const char* name, std::string RunConfig::* field) {
            t[name] = {[field](RunConfig& c, const std::string& v, const std::string&,
                               std::size_t, const std::string&) { c.*field = v; }};
        };
        t["run.seed"] = {[](RunConfig& c, const std::string& v, const std::string& o,
                            std::size_t l, const std::string& k) {
            c.seed = parse_u64(v, o, l, k);
        }};
        string_key("run.out_dir", &RunConfig::out_dir);
        string_key("data.catalog", &RunConfig::catalog_path);
        string_key("data.interactions", &RunConfig::interactions_path);
        size_key("data.num_regimes", &RunConfig::num_regimes);
        size_key("data.items_per_regime", &RunConfig::items_per_regime);
        size_key("data.users_per_regime", &RunConfig::users_per_regime);
        size_key("data.seq_min", &RunConfig::seq_min);
        size_key("data.seq_max", &RunConfig::seq_max);
        double_key("data.cross_regime_prob", &RunConfig::cross_regime_prob);
        size_key("data.max_history", &RunConfig::max_history);
        string_key("data.template", &RunConfig::prompt_template);
        size_key("seqrec.dim", &RunConfig::sr_dim);
        size_key("seqrec.heads", &RunConfig::sr_heads);
        size_key("seqrec.blocks", &RunConfig::sr_blocks);
        size_key("seqrec.max_seq_len", &RunConfig::sr_max_seq_len);
        double_key("seqrec.lr", &RunConfig::sr_lr);
        size_key("seqrec.batch", &RunConfig::sr_batch);
        size_key("seqrec.epochs", &RunConfig::sr_epochs);
        size_key("lm.d_model", &RunConfig::d_model);
        size_key("lm.blocks", &RunConfig::lm_blocks);
        size_key("lm.heads", &RunConfig::lm_heads);
        size_key("lm.context", &RunConfig::context);
        size_key("lm.pretrain_steps", &RunConfig::pretrain_steps);
        double_key("lm.pretrain_lr", &RunConfig::pretrain_lr);
        size_key("lm.pretrain_batch", &RunConfig::pretrain_batch);
        string_key("adapters.mode", &RunConfig::mode);
        size_key("adapters.r", &RunConfig::r);
        double_key("adapters.alpha", &RunConfig::alpha);
        size_key("adapters.k", &RunConfig::k_experts);
        double_key("adapters.temperature", &RunConfig::temperature);
        t["adapters.sweep"] = {[](RunConfig& c, const std::string& v,
                                  const std::string& o, std::size_t l,
                                  const std::string& k) {
            c.sweep = parse_size_list(v, o, l, k);
        }};
        double_key("schedule.max_lr", &RunConfig::max_lr);
        double_key("schedule.floor_lr", &RunConfig::floor_lr);
        double_key("schedule.weight_decay", &RunConfig::weight_decay);
        size_key("schedule.warmup_steps", &RunConfig::warmup_steps);
        size_key("schedule.total_steps", &RunConfig::total_steps);
        size_key("schedule.batch", &RunConfig::batch);
        size_key("schedule.ckpt_every", &RunConfig::ckpt_every);
        size_key("eval.max_new", &RunConfig::eval_max_new);
        size_key("analysis.clusters", &RunConfig::clusters);
        string_key("analysis.granularity", &RunConfig::granularity);
        size_key("analysis.capture_limit", &RunConfig::capture_limit);
        return t;
    }();
    return table;
}

void validate(const RunConfig& cfg, const std::string& origin,
              const std::map<std::string, std::size_t>& key_lines) {
    auto line_of = [&](const std::string& key) {
        auto it = key_lines.find(key);
        return it == key_lines.end() ? std::size_t{0} : it->second;
    };
    if (cfg.mode != "lora" && cfg.mode != "ilora")
        fail(origin, line_of("adapters.mode"),
             "key 'adapters.mode': expected 'lora' or 'ilora', got '" + cfg.mode + "'");
    if (cfg.granularity != "per-sequence" && cfg.granularity != "per-cluster")
        fail(origin, line_of("analysis.granularity"),
             "key 'analysis.granularity': expected 'per-sequence' or 'per-cluster'");
    if (cfg.r < 1)
        fail(origin, line_of("adapters.r"), "key 'adapters.r': rank must be >= 1");
    if (cfg.k_experts < 1 || cfg.r % cfg.k_experts != 0)
        fail(origin, line_of("adapters.k"),
             "key 'adapters.k': rank " + std::to_string(cfg.r) +
                 " is not divisible by k = " + std::to_string(cfg.k_experts));
    for (std::size_t k : cfg.sweep)
        if (k < 1 || cfg.r % k != 0)
            fail(origin, line_of("adapters.sweep"),
                 "key 'adapters.sweep': rank " + std::to_string(cfg.r) +
                     " is not divisible by sweep entry " + std::to_string(k));
    if (cfg.seq_min < 1 || cfg.seq_min > cfg.seq_max)
        fail(origin, line_of("data.seq_min"),
             "key 'data.seq_min': need 1 <= seq_min <= seq_max");
    if (cfg.temperature <= 0.0)
        fail(origin, line_of("adapters.temperature"),
             "key 'adapters.temperature': must be positive");
    if (cfg.total_steps < 1)
        fail(origin, line_of("schedule.total_steps"),
             "key 'schedule.total_steps': must be >= 1");
    if (cfg.batch < 1)
        fail(origin, line_of("schedule.batch"), "key 'schedule.batch': must be >= 1");
    if (cfg.clusters < 1)
        fail(origin, line_of("analysis.clusters"),
             "key 'analysis.clusters': must be >= 1");
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::map<std::string, std::size_t> key_lines;
    std::istringstream is(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                fail(origin, lineno, "malformed section header '" + t + "'");
            section = t.substr(1, t.size() - 2);
            continue;
        }
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            fail(origin, lineno, "expected 'key = value', got '" + t + "'");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (section.empty())
            fail(origin, lineno, "key '" + key + "' outside any [section]");
        const std::string full = section + "." + key;
        auto it = setters().find(full);
        if (it == setters().end())
            fail(origin, lineno, "unknown key '" + full + "'");
        it->second.set(cfg, value, origin, lineno, full);
        key_lines[full] = lineno;
    }
    validate(cfg, origin, key_lines);
    return cfg;
}

RunConfig parse_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("parse_config: cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str(), path);
}

std::string dump_config(const RunConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "[run]\n";
    os << "seed = " << c.seed << "\n";
    os << "out_dir = " << c.out_dir << "\n";
    os << "\n[data]\n";
    os << "catalog = " << c.catalog_path << "\n";
    os << "interactions = " << c.interactions_path << "\n";
    os << "num_regimes = " << c.num_regimes << "\n";
    os << "items_per_regime = " << c.items_per_regime << "\n";
    os << "users_per_regime = " << c.users_per_regime << "\n";
    os << "seq_min = " << c.seq_min << "\n";
    os << "seq_max = " << c.seq_max << "\n";
    os << "cross_regime_prob = " << c.cross_regime_prob << "\n";
    os << "max_history = " << c.max_history << "\n";
    os << "template = " << c.prompt_template << "\n";
    os << "\n[seqrec]\n";
    os << "dim = " << c.sr_dim << "\n";
    os << "heads = " << c.sr_heads << "\n";
    os << "blocks = " << c.sr_blocks << "\n";
    os << "max_seq_len = " << c.sr_max_seq_len << "\n";
    os << "lr = " << c.sr_lr << "\n";
    os << "batch = " << c.sr_batch << "\n";
    os << "epochs = " << c.sr_epochs << "\n";
    os << "\n[lm]\n";
    os << "d_model = " << c.d_model << "\n";
    os << "blocks = " << c.lm_blocks << "\n";
    os << "heads = " << c.lm_heads << "\n";
    os << "context = " << c.context << "\n";
    os << "pretrain_steps = " << c.pretrain_steps << "\n";
    os << "pretrain_lr = " << c.pretrain_lr << "\n";
    os << "pretrain_batch = " << c.pretrain_batch << "\n";
    os << "\n[adapters]\n";
    os << "mode = " << c.mode << "\n";
    os << "r = " << c.r << "\n";
    os << "alpha = " << c.alpha << "\n";
    os << "k = " << c.k_experts << "\n";
    os << "temperature = " << c.temperature << "\n";
    os << "sweep = ";
    for (std::size_t i = 0; i < c.sweep.size(); ++i)
        os << (i ? "," : "") << c.sweep[i];
    os << "\n";
    os << "\n[schedule]\n";
    os << "max_lr = " << c.max_lr << "\n";
    os << "floor_lr = " << c.floor_lr << "\n";
    os << "weight_decay = " << c.weight_decay << "\n";
    os << "warmup_steps = " << c.warmup_steps << "\n";
    os << "total_steps = " << c.total_steps << "\n";
    os << "batch = " << c.batch << "\n";
    os << "ckpt_every = " << c.ckpt_every << "\n";
    os << "\n[eval]\n";
    os << "max_new = " << c.eval_max_new << "\n";
    os << "\n[analysis]\n";
    os << "clusters = " << c.clusters << "\n";
    os << "granularity = " << c.granularity << "\n";
    os << "capture_limit = " << c.capture_limit << "\n";
    return os.str();
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        throw std::runtime_error("override '" + assignment +
                                 "' is not of the form section.key=value");
    const std::string key = trim(assignment.substr(0, eq));
    const std::string value = trim(assignment.substr(eq + 1));
    auto it = setters().find(key);
    if (it == setters().end())
        throw std::runtime_error("override: unknown key '" + key + "'");
    it->second.set(cfg, value, "override", 0, key);
    // re-validate the combined result
    std::map<std::string, std::size_t> no_lines;
    validate(cfg, "override", no_lines);
}

std::uint64_t config_hash(const RunConfig& cfg) {
    const std::string text = dump_config(cfg);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace ilora
