#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "ilora/checkpoint.hpp"
#include "ilora/matrix.hpp"
#include "ilora/optim.hpp"
#include "ilora/rng.hpp"
#include "ilora/tape.hpp"

using namespace ilora;

namespace {

Matrix make(std::size_t r, std::size_t c, std::initializer_list<double> vals) {
    Matrix m(r, c);
    std::size_t i = 0;
    for (double v : vals) m.data[i++] = v;
    return m;
}

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
    Matrix m(r, c);
    for (auto& v : m.data) v = rng.next_gaussian(0.0, scale);
    return m;
}

}  // namespace

TEST_CASE("matmul identity and hand-computed cases") {
    Matrix v = make(2, 1, {3, 4});
    Matrix out = matmul(Matrix::identity(2), v);
    CHECK(out.at(0, 0) == 3.0);
    CHECK(out.at(1, 0) == 4.0);

    Matrix a = make(1, 2, {1, 2});
    Matrix r = matmul(a, v);
    CHECK(r.rows == 1);
    CHECK(r.at(0, 0) == doctest::Approx(11.0));

    Matrix z = Matrix::zeros(2, 3);
    Matrix any = make(3, 2, {1, 2, 3, 4, 5, 6});
    Matrix zr = matmul(z, any);
    for (double x : zr.data) CHECK(x == 0.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Matrix a(2, 3), b(2, 2);
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("(2x3)"), std::invalid_argument);
}

TEST_CASE("softmax rows: equal logits, hand computation, stability") {
    Tape t;
    auto id = t.softmax_rows(t.input(make(1, 2, {0, 0})), 1.0);
    CHECK(t.value(id).at(0, 0) == doctest::Approx(0.5));

    Tape t2;
    auto id2 = t2.softmax_rows(t2.input(make(1, 2, {std::log(2.0), 0})), 1.0);
    CHECK(t2.value(id2).at(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(t2.value(id2).at(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    Tape t3;
    auto id3 = t3.softmax_rows(t3.input(make(1, 2, {1000, 0})), 1.0);
    CHECK(t3.value(id3).all_finite());
    CHECK(t3.value(id3).at(0, 0) == doctest::Approx(1.0));

    Tape t4;
    CHECK_THROWS_AS(t4.softmax_rows(t4.input(make(1, 2, {0, 0})), 0.0),
                    std::invalid_argument);
}

TEST_CASE("softmax rows sum to one for large random logits") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        Matrix m(4, 6);
        for (auto& v : m.data) v = (rng.next_double() * 2.0 - 1.0) * 1e3;
        Tape t;
        auto id = t.softmax_rows(t.input(m), 1.0);
        for (std::size_t i = 0; i < 4; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < 6; ++j) {
                const double p = t.value(id).at(i, j);
                // exp underflows to exactly 0 for logit gaps beyond ~745
                CHECK(p >= 0.0);
                CHECK(p <= 1.0);
                s += p;
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("cross entropy hand cases and degenerate input") {
    Tape t;
    auto loss = t.cross_entropy_mean(t.input(make(1, 2, {0, 0})), {0}, -1);
    CHECK(t.value(loss).at(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Tape t2;
    auto l2 = t2.cross_entropy_mean(t2.input(make(1, 2, {30, -30})), {0}, -1);
    CHECK(t2.value(l2).at(0, 0) == doctest::Approx(0.0).epsilon(1e-9));

    Tape t3;
    CHECK_THROWS_AS(t3.cross_entropy_mean(t3.input(make(2, 2, {0, 0, 0, 0})), {-1, -1}, -1),
                    std::invalid_argument);
}

TEST_CASE("adam: fixed point on zero grads, first-step magnitude, frozen contract") {
    Param p("p", make(1, 1, {5.0}));
    std::vector<Param*> ps{&p};
    AdamState st(ps);

    st.step(ps, 0.1);
    CHECK(p.value.at(0, 0) == 5.0);  // zero gradient, wd=0

    p.grad.at(0, 0) = 1.0;
    AdamState st2(ps);
    st2.step(ps, 0.1);
    // closed form first step: mhat=1, vhat=1 -> update = lr/(1+eps)
    CHECK(p.value.at(0, 0) == doctest::Approx(5.0 - 0.1).epsilon(1e-6));
    CHECK(p.grad.at(0, 0) == 0.0);  // grads zeroed after apply

    Param f("f", make(1, 1, {2.0}), /*frozen=*/true);
    f.grad.at(0, 0) = 42.0;
    std::vector<Param*> fs{&f};
    AdamState st3(fs);
    st3.step(fs, 0.5);
    CHECK(f.value.at(0, 0) == 2.0);
}

TEST_CASE("lr schedule: ramp, peak, decay midpoint, floor, continuity") {
    LrSchedule s{.max_lr = 1.0, .warmup_steps = 10, .total_steps = 110, .floor_lr = 0.2};
    CHECK(lr_at(s, 0) == 0.0);
    CHECK(lr_at(s, 10) == doctest::Approx(1.0));
    CHECK(lr_at(s, 60) == doctest::Approx(0.6));  // (max+floor)/2 at decay midpoint
    CHECK(lr_at(s, 110) == doctest::Approx(0.2));
    CHECK(lr_at(s, 5000) == doctest::Approx(0.2));

    const double bound = s.max_lr * (1.0 / 10 + std::numbers::pi / 110);
    for (std::size_t k = 0; k < 200; ++k) {
        CHECK(std::abs(lr_at(s, k) - lr_at(s, k + 1)) <= bound + 1e-12);
    }
}

TEST_CASE("grad_check: linear function is exact") {
    Rng rng(3);
    Param p("p", random_matrix(rng, 3, 4));
    auto loss = [&]() {
        Tape t;
        auto l = t.sum_all(t.param(p));
        t.backward(l);
        return t.value(l).at(0, 0);
    };
    CHECK(grad_check(loss, {&p}, 1e-5) < 1e-10);
}

TEST_CASE("grad_check: cross entropy of 1x3 logits") {
    Rng rng(4);
    Param p("logits", random_matrix(rng, 1, 3));
    auto loss = [&]() {
        Tape t;
        auto l = t.cross_entropy_mean(t.param(p), {2}, -1);
        t.backward(l);
        return t.value(l).at(0, 0);
    };
    CHECK(grad_check(loss, {&p}, 1e-5) < 1e-6);
}

TEST_CASE("backward correctness of every registered op on random small instances") {
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        Param a("a", random_matrix(rng, 3, 4));
        Param b("b", random_matrix(rng, 4, 2));
        Param c("c", random_matrix(rng, 3, 2));
        Param row("row", random_matrix(rng, 1, 2));
        Param gain("g", random_matrix(rng, 1, 2, 0.3));
        Param bias("bi", random_matrix(rng, 1, 2, 0.3));
        Param vec("v", random_matrix(rng, 1, 3));
        std::vector<Param*> ps{&a, &b, &c, &row, &gain, &bias, &vec};
        auto loss = [&]() {
            Tape t;
            auto na = t.param(a);
            auto nb = t.param(b);
            auto prod = t.matmul(na, nb);                       // 3x2
            auto nt = t.matmul_nt(prod, t.param(c));            // 3x3
            auto sm = t.softmax_rows(nt, 0.7);
            auto back = t.matmul(sm, t.param(c));               // 3x2
            auto sum = t.add(back, prod);
            auto br = t.add_rowwise(sum, t.param(row));
            auto ln = t.layer_norm(br, t.param(gain), t.param(bias));
            auto rl = t.relu(ln);
            auto sc = t.scale(rl, 1.3);
            auto se = t.scale_by_entry(sc, t.softmax_rows(t.param(vec), 1.0), 1);
            auto sl = t.slice_cols(se, 0, 1);
            auto cc = t.concat_cols({sl, sl});
            auto gr = t.gather_rows({{cc, 0}, {cc, 2}, {cc, 1}});
            auto l = t.cross_entropy_mean(gr, {0, 1, -1}, -1);
            t.backward(l);
            return t.value(l).at(0, 0);
        };
        CHECK(grad_check(loss, ps, 1e-5) < 1e-6);
    }
}

TEST_CASE("lookup_rows gradient scatters into the table") {
    Rng rng(12);
    Param table("t", random_matrix(rng, 5, 3));
    auto loss = [&]() {
        Tape t;
        auto lk = t.lookup_rows(t.param(table), {1, 3, 1});
        auto l = t.cross_entropy_mean(lk, {0, 2, 1}, -1);
        t.backward(l);
        return t.value(l).at(0, 0);
    };
    CHECK(grad_check(loss, {&table}, 1e-5) < 1e-6);
}

TEST_CASE("frozen params accumulate no gradient through the tape") {
    Param p("p", make(1, 2, {1.0, 2.0}), /*frozen=*/true);
    Tape t;
    auto l = t.sum_all(t.param(p));
    t.backward(l);
    CHECK(p.grad.at(0, 0) == 0.0);
    CHECK(p.grad.at(0, 1) == 0.0);
}

TEST_CASE("rng: identical seed gives identical stream, derive gives independent one") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(123);
    Rng d1 = c.derive(1), d2 = c.derive(2);
    CHECK(d1.next_u64() != d2.next_u64());
}

TEST_CASE("checkpoint container round-trips bit-exact") {
    Rng rng(9);
    NamedTensors ts;
    ts.emplace_back("seqrec/item_emb", random_matrix(rng, 4, 3));
    ts.emplace_back("adapter/0/q/a_1", random_matrix(rng, 2, 5));
    ts.back().second.at(0, 0) = 0.1 + 0.2;  // awkward binary value on purpose
    const std::string path =
        (std::filesystem::temp_directory_path() / "ilora_ckpt_test.bin").string();
    save_checkpoint(path, ts);
    NamedTensors back = load_checkpoint(path);
    REQUIRE(back.size() == ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
        CHECK(back[i].first == ts[i].first);
        REQUIRE(back[i].second.same_shape(ts[i].second));
        for (std::size_t j = 0; j < ts[i].second.data.size(); ++j)
            CHECK(back[i].second.data[j] == ts[i].second.data[j]);
    }
    CHECK_THROWS(checkpoint_get(back, "missing/name"));
    std::filesystem::remove(path);
}
