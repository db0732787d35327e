#include "ilora/datasets.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ilora {

const std::string& ItemCatalog::title(int id) const {
    if (id < 1 || static_cast<std::size_t>(id) >= titles.size())
        throw std::out_of_range("catalog: item id " + std::to_string(id) +
                                " outside 1.." + std::to_string(size()));
    return titles[static_cast<std::size_t>(id)];
}

std::string regime_name(std::size_t idx) {
    static const char* kNames[] = {"amber", "basil", "cedar", "delta",
                                   "ember", "fjord", "grove", "haven"};
    if (idx < 8) return kNames[idx];
    return "regime" + std::to_string(idx);
}

SyntheticData gen_synthetic(const SyntheticSpec& spec) {
    if (spec.num_regimes < 1 || spec.items_per_regime < 1 || spec.seq_min < 1 ||
        spec.seq_min > spec.seq_max || spec.cross_regime_prob < 0.0 ||
        spec.cross_regime_prob > 1.0)
        throw std::invalid_argument("gen_synthetic: invalid spec");

    SyntheticData out;
    out.catalog.titles.push_back("");  // padding slot
    for (std::size_t r = 0; r < spec.num_regimes; ++r)
        for (std::size_t i = 0; i < spec.items_per_regime; ++i)
            out.catalog.titles.push_back(regime_name(r) + " item " +
                                         std::to_string(i + 1));

    Rng rng(spec.seed);
    std::uint64_t user = 1;
    for (std::size_t r = 0; r < spec.num_regimes; ++r) {
        for (std::size_t u = 0; u < spec.users_per_regime; ++u, ++user) {
            const std::size_t len =
                spec.seq_min + rng.next_below(spec.seq_max - spec.seq_min + 1);
            InteractionSequence seq;
            seq.user_id = user;
            auto draw = [&]() {
                std::size_t regime = r;
                if (spec.num_regimes > 1 && rng.next_double() < spec.cross_regime_prob) {
                    std::size_t other = rng.next_below(spec.num_regimes - 1);
                    regime = other >= r ? other + 1 : other;
                }
                return static_cast<int>(1 + regime * spec.items_per_regime +
                                        rng.next_below(spec.items_per_regime));
            };
            for (std::size_t j = 0; j < len; ++j) seq.items.push_back(draw());
            seq.truth = draw();
            out.sequences.push_back(std::move(seq));
            out.regime_of_user.push_back(r);
        }
    }
    return out;
}

LoadedInteractions load_interactions(const std::string& path,
                                     const ItemCatalog& catalog) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_interactions: cannot open " + path);

    struct Row {
        int item;
        long long ts;
        std::size_t order;
    };
    std::vector<std::uint64_t> user_order;
    std::map<std::uint64_t, std::vector<Row>> by_user;

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string ufield, ifield, tfield;
        if (!std::getline(ls, ufield, '\t') || !std::getline(ls, ifield, '\t') ||
            !std::getline(ls, tfield, '\t')) {
            throw std::runtime_error("load_interactions: malformed row at line " +
                                     std::to_string(lineno));
        }
        std::uint64_t user;
        int item;
        long long ts;
        try {
            user = std::stoull(ufield);
            item = std::stoi(ifield);
            ts = std::stoll(tfield);
        } catch (const std::exception&) {
            throw std::runtime_error("load_interactions: malformed row at line " +
                                     std::to_string(lineno));
        }
        if (item < 1 || static_cast<std::size_t>(item) > catalog.size())
            throw std::runtime_error("load_interactions: line " + std::to_string(lineno) +
                                     " references unknown item " + std::to_string(item));
        auto [it, inserted] = by_user.try_emplace(user);
        if (inserted) user_order.push_back(user);
        it->second.push_back({item, ts, it->second.size()});
    }

    LoadedInteractions out;
    for (std::uint64_t user : user_order) {
        auto& rows = by_user[user];
        std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
            return a.ts < b.ts;  // equal timestamps keep input order
        });
        if (rows.size() < 2) {
            ++out.dropped;
            continue;
        }
        InteractionSequence seq;
        seq.user_id = user;
        for (std::size_t i = 0; i + 1 < rows.size(); ++i)
            seq.items.push_back(rows[i].item);
        seq.truth = rows.back().item;
        out.sequences.push_back(std::move(seq));
    }
    return out;
}

void save_interactions(const std::string& path,
                       const std::vector<InteractionSequence>& seqs) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("save_interactions: cannot open " + path);
    for (const auto& seq : seqs) {
        long long ts = 0;
        for (int item : seq.items)
            os << seq.user_id << '\t' << item << '\t' << ts++ << '\n';
        if (seq.has_truth())
            os << seq.user_id << '\t' << seq.truth << '\t' << ts << '\n';
    }
}

ItemCatalog load_catalog(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_catalog: cannot open " + path);
    std::map<int, std::string> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::runtime_error("load_catalog: malformed row at line " +
                                     std::to_string(lineno));
        int id;
        try {
            id = std::stoi(line.substr(0, tab));
        } catch (const std::exception&) {
            throw std::runtime_error("load_catalog: malformed id at line " +
                                     std::to_string(lineno));
        }
        std::string title = line.substr(tab + 1);
        if (title.empty())
            throw std::runtime_error("load_catalog: empty title for id " +
                                     std::to_string(id));
        if (!rows.emplace(id, std::move(title)).second)
            throw std::runtime_error("load_catalog: duplicate id " + std::to_string(id));
    }
    ItemCatalog cat;
    cat.titles.push_back("");
    int expect = 1;
    for (auto& [id, title] : rows) {
        if (id != expect)
            throw std::runtime_error("load_catalog: gap in ids, expected " +
                                     std::to_string(expect) + " found " +
                                     std::to_string(id));
        cat.titles.push_back(std::move(title));
        ++expect;
    }
    return cat;
}

void save_catalog(const std::string& path, const ItemCatalog& catalog) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("save_catalog: cannot open " + path);
    for (std::size_t id = 1; id < catalog.titles.size(); ++id)
        os << id << '\t' << catalog.titles[id] << '\n';
}

CandidateSet make_candidates(const InteractionSequence& seq, const ItemCatalog& catalog,
                             Rng& rng) {
    if (!seq.has_truth())
        throw std::invalid_argument("make_candidates: sequence has no truth item");
    std::vector<char> excluded(catalog.size() + 1, 0);
    excluded[0] = 1;
    for (int it : seq.items)
        if (it > 0) excluded[static_cast<std::size_t>(it)] = 1;
    excluded[static_cast<std::size_t>(seq.truth)] = 1;
    std::vector<int> pool;
    for (std::size_t id = 1; id <= catalog.size(); ++id)
        if (!excluded[id]) pool.push_back(static_cast<int>(id));
    if (pool.size() < 20)
        throw std::runtime_error("make_candidates: catalog too small, only " +
                                 std::to_string(pool.size()) +
                                 " non-interacted items available");

    CandidateSet out;
    for (int draw = 0; draw < 20; ++draw) {
        const std::size_t pick = rng.next_below(pool.size());
        out.items.push_back(pool[pick]);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    out.truth_index = rng.next_below(21);
    out.items.insert(out.items.begin() + static_cast<std::ptrdiff_t>(out.truth_index),
                     seq.truth);
    return out;
}

std::string render_prompt(const std::string& templ, const ItemCatalog& catalog,
                          const std::vector<int>& history, const CandidateSet& cands) {
    std::string hist;
    for (std::size_t i = 0; i < history.size(); ++i) {
        if (i) hist += ' ';
        hist += catalog.title(history[i]) + " [BEH]";
    }
    std::string cand;
    for (std::size_t i = 0; i < cands.items.size(); ++i) {
        if (i) cand += ", ";
        cand += catalog.title(cands.items[i]);
    }
    std::string out = templ;
    const auto hpos = out.find("{history}");
    if (hpos == std::string::npos)
        throw std::invalid_argument("template missing {history}");
    out.replace(hpos, 9, hist);
    const auto cpos = out.find("{candidates}");
    if (cpos == std::string::npos)
        throw std::invalid_argument("template missing {candidates}");
    out.replace(cpos, 12, cand);
    return out;
}

std::vector<InstructionPair> render_pairs(const std::vector<InteractionSequence>& seqs,
                                          const ItemCatalog& catalog,
                                          const std::string& templ, std::uint64_t seed,
                                          std::size_t max_history) {
    std::vector<InstructionPair> out;
    out.reserve(seqs.size());
    Rng base(seed);
    for (const auto& seq : seqs) {
        Rng rng = base.derive(seq.user_id);
        InstructionPair pair;
        pair.user = seq.user_id;
        pair.items = seq.items;
        if (pair.items.size() > max_history)
            pair.items.erase(pair.items.begin(),
                             pair.items.end() -
                                 static_cast<std::ptrdiff_t>(max_history));
        pair.truth = seq.truth;
        InteractionSequence clipped{seq.user_id, pair.items, seq.truth};
        pair.candidates = make_candidates(clipped, catalog, rng);
        pair.prompt_text = render_prompt(templ, catalog, pair.items, pair.candidates);
        pair.target_text = catalog.title(seq.truth);
        out.push_back(std::move(pair));
    }
    return out;
}

void save_pairs_jsonl(const std::string& path, const std::vector<InstructionPair>& pairs) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("save_pairs_jsonl: cannot open " + path);
    for (const auto& p : pairs) {
        nlohmann::ordered_json j;
        j["user"] = p.user;
        j["items"] = p.items;
        j["candidates"] = p.candidates.items;
        j["truth"] = p.truth;
        j["prompt_text"] = p.prompt_text;
        j["target_text"] = p.target_text;
        os << j.dump() << '\n';
    }
}

std::vector<InstructionPair> load_pairs_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_pairs_jsonl: cannot open " + path);
    std::vector<InstructionPair> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        InstructionPair p;
        p.user = j.at("user").get<std::uint64_t>();
        p.items = j.at("items").get<std::vector<int>>();
        p.candidates.items = j.at("candidates").get<std::vector<int>>();
        p.truth = j.at("truth").get<int>();
        p.prompt_text = j.at("prompt_text").get<std::string>();
        p.target_text = j.at("target_text").get<std::string>();
        for (std::size_t i = 0; i < p.candidates.items.size(); ++i)
            if (p.candidates.items[i] == p.truth) p.candidates.truth_index = i;
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace ilora
