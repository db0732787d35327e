#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "ilora/datasets.hpp"
#include "ilora/seqrec.hpp"

using namespace ilora;

namespace {

std::string temp_path(const char* stem) {
    return std::string("./tmp_") + stem;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void spit(const std::string& path, const std::string& body) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << body;
}

}  // namespace

TEST_CASE("gen_synthetic: shapes, id ranges, regime labels") {
    SyntheticSpec spec;
    spec.seed = 42;
    auto data = gen_synthetic(spec);
    CHECK(data.catalog.size() == spec.num_regimes * spec.items_per_regime);
    CHECK(data.sequences.size() == spec.num_regimes * spec.users_per_regime);
    CHECK(data.regime_of_user.size() == data.sequences.size());
    for (std::size_t i = 0; i < data.sequences.size(); ++i) {
        const auto& s = data.sequences[i];
        CHECK(s.items.size() >= spec.seq_min);
        CHECK(s.items.size() <= spec.seq_max);
        CHECK(s.has_truth());
        for (int it : s.items) {
            CHECK(it >= 1);
            CHECK(static_cast<std::size_t>(it) <= data.catalog.size());
        }
        CHECK(data.regime_of_user[i] == i / spec.users_per_regime);
    }
    // user ids are 1-based and unique
    std::set<std::uint64_t> users;
    for (const auto& s : data.sequences) users.insert(s.user_id);
    CHECK(users.size() == data.sequences.size());
    CHECK(*users.begin() == 1);
}

TEST_CASE("gen_synthetic: fixed seed is reproducible, different seeds differ") {
    SyntheticSpec spec;
    spec.seed = 7;
    auto a = gen_synthetic(spec);
    auto b = gen_synthetic(spec);
    REQUIRE(a.sequences.size() == b.sequences.size());
    for (std::size_t i = 0; i < a.sequences.size(); ++i) {
        CHECK(a.sequences[i].items == b.sequences[i].items);
        CHECK(a.sequences[i].truth == b.sequences[i].truth);
    }
    spec.seed = 8;
    auto c = gen_synthetic(spec);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.sequences.size() && !any_diff; ++i)
        any_diff = a.sequences[i].items != c.sequences[i].items;
    CHECK(any_diff);
}

TEST_CASE("gen_synthetic: regime membership dominates at low cross rate") {
    SyntheticSpec spec;
    spec.num_regimes = 2;
    spec.items_per_regime = 10;
    spec.users_per_regime = 50;
    spec.cross_regime_prob = 0.05;
    spec.seed = 3;
    auto data = gen_synthetic(spec);
    std::size_t in = 0, total = 0;
    for (std::size_t i = 0; i < data.sequences.size(); ++i) {
        const std::size_t r = data.regime_of_user[i];
        for (int it : data.sequences[i].items) {
            const std::size_t ir = static_cast<std::size_t>(it - 1) / spec.items_per_regime;
            in += (ir == r);
            ++total;
        }
    }
    const double frac = static_cast<double>(in) / static_cast<double>(total);
    CHECK(frac > 0.90);
    CHECK(frac < 1.0);  // some leakage must occur at 5%
}

TEST_CASE("catalog: round trip, duplicate id, gap, empty title, bad row") {
    ItemCatalog cat;
    cat.titles = {"", "alpha film", "beta film", "gamma film"};
    const auto path = temp_path("catalog.tsv");
    save_catalog(path, cat);
    auto back = load_catalog(path);
    CHECK(back.titles == cat.titles);

    spit(path, "1\talpha\n1\tbeta\n");
    CHECK_THROWS_WITH_AS(load_catalog(path), doctest::Contains("duplicate id 1"),
                         std::runtime_error);
    spit(path, "1\talpha\n3\tgamma\n");
    CHECK_THROWS_WITH_AS(load_catalog(path), doctest::Contains("gap in ids"),
                         std::runtime_error);
    spit(path, "1\talpha\n2\t\n");
    CHECK_THROWS_WITH_AS(load_catalog(path), doctest::Contains("empty title"),
                         std::runtime_error);
    spit(path, "1\talpha\nnot a row\n");
    CHECK_THROWS_WITH_AS(load_catalog(path), doctest::Contains("line 2"),
                         std::runtime_error);
    std::remove(path.c_str());
}

TEST_CASE("interactions: save then load is the identity") {
    SyntheticSpec spec;
    spec.users_per_regime = 8;
    spec.seed = 11;
    auto data = gen_synthetic(spec);
    const auto path = temp_path("interactions.tsv");
    save_interactions(path, data.sequences);
    auto loaded = load_interactions(path, data.catalog);
    CHECK(loaded.dropped == 0);
    REQUIRE(loaded.sequences.size() == data.sequences.size());
    for (std::size_t i = 0; i < loaded.sequences.size(); ++i) {
        CHECK(loaded.sequences[i].user_id == data.sequences[i].user_id);
        CHECK(loaded.sequences[i].items == data.sequences[i].items);
        CHECK(loaded.sequences[i].truth == data.sequences[i].truth);
    }
    std::remove(path.c_str());
}

TEST_CASE("interactions: timestamp sort, short-user drop, error rows") {
    ItemCatalog cat;
    cat.titles = {"", "a", "b", "c"};
    const auto path = temp_path("interactions2.tsv");

    // user 1 out of order, user 2 has a single row (dropped),
    // equal timestamps for user 3 keep file order
    spit(path,
         "1\t2\t30\n1\t1\t10\n1\t3\t20\n"
         "2\t1\t0\n"
         "3\t3\t5\n3\t1\t5\n3\t2\t5\n");
    auto loaded = load_interactions(path, cat);
    CHECK(loaded.dropped == 1);
    REQUIRE(loaded.sequences.size() == 2);
    CHECK(loaded.sequences[0].items == std::vector<int>{1, 3});
    CHECK(loaded.sequences[0].truth == 2);
    CHECK(loaded.sequences[1].items == std::vector<int>{3, 1});
    CHECK(loaded.sequences[1].truth == 2);

    spit(path, "1\t1\t0\nbroken\n");
    CHECK_THROWS_WITH_AS(load_interactions(path, cat), doctest::Contains("line 2"),
                         std::runtime_error);
    spit(path, "1\t9\t0\n");
    CHECK_THROWS_WITH_AS(load_interactions(path, cat),
                         doctest::Contains("unknown item 9"), std::runtime_error);
    std::remove(path.c_str());
}

TEST_CASE("make_candidates: invariants hold over 10000 generations") {
    SyntheticSpec spec;
    spec.items_per_regime = 16;  // catalog 64, plenty of headroom
    spec.seed = 21;
    auto data = gen_synthetic(spec);
    Rng rng(22);
    bool truth_moved = false;
    std::size_t first_pos = 99;
    for (int trial = 0; trial < 10000; ++trial) {
        const auto& seq = data.sequences[static_cast<std::size_t>(trial) %
                                         data.sequences.size()];
        auto cs = make_candidates(seq, data.catalog, rng);
        REQUIRE(cs.items.size() == 21);
        REQUIRE(cs.truth_index < 21);
        REQUIRE(cs.items[cs.truth_index] == seq.truth);
        std::set<int> uniq(cs.items.begin(), cs.items.end());
        REQUIRE(uniq.size() == 21);
        for (int c : cs.items) {
            REQUIRE(c >= 1);
            REQUIRE(static_cast<std::size_t>(c) <= data.catalog.size());
            if (c != seq.truth) {
                for (int h : seq.items) REQUIRE(c != h);
            }
        }
        if (trial == 0) first_pos = cs.truth_index;
        truth_moved = truth_moved || cs.truth_index != first_pos;
    }
    CHECK(truth_moved);  // truth position is not fixed
}

TEST_CASE("make_candidates: capacity error and missing truth") {
    ItemCatalog small;
    small.titles.assign(16, "x");  // 15 items: never 20 spare distractors
    InteractionSequence seq{.user_id = 1, .items = {1, 2}, .truth = 3};
    Rng rng(1);
    CHECK_THROWS_WITH_AS(make_candidates(seq, small, rng),
                         doctest::Contains("catalog too small"), std::runtime_error);
    InteractionSequence no_truth{.user_id = 1, .items = {1, 2}};
    SyntheticSpec spec;
    spec.items_per_regime = 16;
    auto data = gen_synthetic(spec);
    CHECK_THROWS_AS(make_candidates(no_truth, data.catalog, rng),
                    std::invalid_argument);
}

TEST_CASE("render_prompt: hand-checked layout with markers") {
    ItemCatalog cat;
    cat.titles = {"", "red movie", "blue movie", "green movie", "gold movie"};
    CandidateSet cs;
    cs.items = {3, 4};
    cs.truth_index = 1;
    const std::string text = render_prompt(kDefaultTemplate, cat, {1, 2}, cs);
    CHECK(text ==
          "this user has watched red movie [BEH] blue movie [BEH] in the previous. "
          "recommend the next item from the following candidates: green movie, "
          "gold movie. answer:");
    CHECK_THROWS_AS(render_prompt("no placeholders", cat, {1}, cs),
                    std::invalid_argument);
}

TEST_CASE("render_pairs: deterministic per user, independent of batch order") {
    SyntheticSpec spec;
    spec.items_per_regime = 16;
    spec.users_per_regime = 8;
    spec.seed = 31;
    auto data = gen_synthetic(spec);
    auto pairs = render_pairs(data.sequences, data.catalog, kDefaultTemplate, 99, 50);
    REQUIRE(pairs.size() == data.sequences.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        CHECK(pairs[i].truth == data.sequences[i].truth);
        CHECK(pairs[i].target_text == data.catalog.title(pairs[i].truth));
        CHECK(pairs[i].candidates.items[pairs[i].candidates.truth_index] ==
              pairs[i].truth);
        CHECK(pairs[i].prompt_text.find(pairs[i].target_text) != std::string::npos);
    }
    // reversed input order yields the same pair per user
    std::vector<InteractionSequence> rev(data.sequences.rbegin(),
                                         data.sequences.rend());
    auto pairs_rev = render_pairs(rev, data.catalog, kDefaultTemplate, 99, 50);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& fwd = pairs[i];
        const auto& bwd = pairs_rev[pairs.size() - 1 - i];
        CHECK(fwd.user == bwd.user);
        CHECK(fwd.prompt_text == bwd.prompt_text);
        CHECK(fwd.candidates.items == bwd.candidates.items);
    }
}

TEST_CASE("render_pairs: history clipped to the most recent max_history items") {
    SyntheticSpec spec;
    spec.items_per_regime = 16;
    spec.users_per_regime = 2;
    spec.seq_min = 8;
    spec.seq_max = 8;
    spec.seed = 41;
    auto data = gen_synthetic(spec);
    auto pairs = render_pairs(data.sequences, data.catalog, kDefaultTemplate, 5, 3);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        CHECK(pairs[i].items.size() == 3);
        const auto& full = data.sequences[i].items;
        CHECK(pairs[i].items ==
              std::vector<int>(full.end() - 3, full.end()));
    }
}

TEST_CASE("pairs jsonl: save then load is the identity") {
    SyntheticSpec spec;
    spec.items_per_regime = 16;
    spec.users_per_regime = 4;
    spec.seed = 51;
    auto data = gen_synthetic(spec);
    auto pairs = render_pairs(data.sequences, data.catalog, kDefaultTemplate, 1, 50);
    const auto path = temp_path("pairs.jsonl");
    save_pairs_jsonl(path, pairs);
    auto back = load_pairs_jsonl(path);
    REQUIRE(back.size() == pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        CHECK(back[i].user == pairs[i].user);
        CHECK(back[i].items == pairs[i].items);
        CHECK(back[i].candidates.items == pairs[i].candidates.items);
        CHECK(back[i].candidates.truth_index == pairs[i].candidates.truth_index);
        CHECK(back[i].truth == pairs[i].truth);
        CHECK(back[i].prompt_text == pairs[i].prompt_text);
        CHECK(back[i].target_text == pairs[i].target_text);
    }
    // writing twice is byte-identical
    const std::string once = slurp(path);
    save_pairs_jsonl(path, pairs);
    CHECK(slurp(path) == once);
    std::remove(path.c_str());
}

TEST_CASE("encoder training on small per-regime pools cuts loss by half") {
    // 8 regimes x 4 items: the i.i.d. loss floor ln(4) is well under half the
    // untrained ln(32), so a 50% reduction is attainable and required
    SyntheticSpec spec;
    spec.num_regimes = 8;
    spec.items_per_regime = 4;
    spec.users_per_regime = 12;
    spec.seq_min = 6;
    spec.seq_max = 10;
    spec.cross_regime_prob = 0.0;
    spec.seed = 61;
    auto data = gen_synthetic(spec);

    SeqRecConfig cfg;
    cfg.dim = 16;
    cfg.heads = 2;
    cfg.blocks = 1;
    cfg.max_seq_len = 12;
    cfg.batch = 64;
    cfg.epochs = 120;
    Rng rng(62);
    SeqRecModel model(cfg, data.catalog.size(), rng);
    Rng train_rng(63);
    auto losses = model.train(data.sequences, train_rng);
    CHECK(losses.back() < 0.5 * losses.front());
}
