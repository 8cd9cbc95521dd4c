#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "latlab/errors.hpp"
#include "latlab/nets.hpp"
#include "test_util.hpp"

using namespace latlab;
using testutil::finite_diff_check;
using testutil::random_tensor;

namespace {

// Builds a store with one random parameter per name/shape.
ParamStore make_store(const std::vector<std::tuple<std::string, int, int>>& specs,
                      std::uint64_t seed) {
    ParamStore store;
    RngStream rng(seed);
    for (const auto& [name, r, c] : specs) {
        Param& p = store.create(name, r, c);
        p.value = random_tensor(r, c, rng, 0.8);
    }
    return store;
}

void check_fd(ParamStore& store, const std::vector<std::string>& names,
              const std::function<Var(Tape&)>& build) {
    const auto rep = finite_diff_check(store, names, build);
    CHECK(rep.frac_ok >= 0.95);
    CHECK(rep.worst_rel <= 1e-3);
}

}  // namespace

TEST_CASE("fd: elementwise, broadcast, and reduction ops") {
    ParamStore store = make_store({{"a", 3, 4}, {"b", 3, 4}, {"r", 1, 4}}, 1);
    RngStream rng(2);
    const Tensor c = random_tensor(3, 4, rng);

    check_fd(store, {"a", "b"}, [&](Tape& t) {
        Var a = t.param("a"), b = t.param("b");
        Var mix = t.add(t.mul(a, b), t.sub(a, t.affine(b, 0.7, 0.1)));
        return t.sum(t.mul(mix, t.constant(c)));
    });
    check_fd(store, {"a", "r"}, [&](Tape& t) {
        Var v = t.mul_row(t.add_row(t.param("a"), t.param("r")), t.param("r"));
        return t.mean_all(t.mul(v, t.constant(c)));
    });
    check_fd(store, {"a"}, [&](Tape& t) {
        Var a = t.param("a");
        Var u = t.add(t.tanh_op(a), t.add(t.sigmoid_op(a), t.softplus_op(a)));
        return t.sum(t.mul(u, t.constant(c)));
    });
    check_fd(store, {"a"}, [&](Tape& t) {
        // keep the log argument positive
        Var pos = t.affine(t.sigmoid_op(t.param("a")), 1.0, 0.5);
        return t.sum(t.add(t.log_op(pos), t.exp_op(t.affine(t.param("a"), 0.3, 0.0))));
    });
}

TEST_CASE("fd: matmul, transpose, diag, select, shapes ops") {
    ParamStore store = make_store({{"w", 4, 3}, {"x", 5, 4}, {"d", 1, 4}, {"e", 6, 3}}, 3);
    RngStream rng(4);
    const Tensor c53 = random_tensor(5, 3, rng);
    const Tensor c54 = random_tensor(5, 4, rng);
    const Tensor c44 = random_tensor(4, 4, rng);

    check_fd(store, {"w", "x"}, [&](Tape& t) {
        return t.sum(t.mul(t.matmul_op(t.param("x"), t.param("w")), t.constant(c53)));
    });
    check_fd(store, {"x"}, [&](Tape& t) {
        return t.sum(t.mul(t.transpose_op(t.param("x")), t.constant(transpose(c54))));
    });
    check_fd(store, {"d"}, [&](Tape& t) {
        return t.sum(t.mul(t.diag_row(t.param("d")), t.constant(c44)));
    });
    check_fd(store, {"e"}, [&](Tape& t) {
        return t.sum(t.mul(t.select_rows(t.param("e"), {2, 0, 2, 5, 1}), t.constant(c53)));
    });
    check_fd(store, {"x"}, [&](Tape& t) {
        Var s = t.concat_cols(t.slice_cols(t.param("x"), 1, 3), t.slice_cols(t.param("x"), 0, 2));
        return t.sum(t.mul(s, t.constant(c54)));
    });
    check_fd(store, {"x"}, [&](Tape& t) {
        Var rows = t.stack_rows({t.row(t.param("x"), 3), t.row(t.param("x"), 0),
                                 t.row(t.param("x"), 3), t.row(t.param("x"), 2),
                                 t.row(t.param("x"), 4)});
        return t.sum(t.mul(rows, t.constant(c54)));
    });
    check_fd(store, {"x"}, [&](Tape& t) {
        Var sh = t.add(t.shift_rows(t.param("x"), 1), t.shift_rows(t.param("x"), -2));
        return t.sum(t.mul(t.scale_rows(sh, {0.5, -1.0, 2.0, 0.25, 1.5}), t.constant(c54)));
    });
}

TEST_CASE("fd: gaussian wrappers") {
    ParamStore store = make_store({{"mq", 3, 2}, {"lq", 3, 2}, {"mp", 3, 2}, {"lp", 3, 2}}, 5);
    RngStream rng(6);
    const Tensor x = random_tensor(3, 2, rng);
    check_fd(store, {"mq", "lq", "mp", "lp"}, [&](Tape& t) {
        return t.gaussian_kl_total(t.param("mq"), t.param("lq"), t.param("mp"), t.param("lp"));
    });
    check_fd(store, {"mp", "lp"}, [&](Tape& t) {
        return t.gaussian_log_prob_total(t.constant(x), t.param("mp"), t.param("lp"));
    });
}

TEST_CASE("fd: gru composed over five steps") {
    ParamStore store;
    RngStream rng(7);
    init_gru(store, "g", 3, 4, rng);
    Param& x = store.create("x", 5, 3);
    x.value = random_tensor(5, 3, rng, 0.5);
    const Tensor target = random_tensor(5, 4, rng);
    check_fd(store, store.names(), [&](Tape& t) {
        Var h = gru_sequence(t, "g", t.param("x"), 4);
        return t.squared_error(h, t.constant(target));
    });
}

TEST_CASE("analytic spot values") {
    ParamStore store;
    store.create("x", 1, 1);  // zero
    {
        // d/dx tanh at 0 is 1
        Tape t(&store);
        Var y = t.tanh_op(t.param("x"));
        t.backward(y);
        CHECK(store.at("x").grad.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    }
    store.zero_grads();
    {
        // gradient of 0.5 * ||v||^2 is v
        Param& v = store.create("v", 2, 3);
        RngStream rng(8);
        v.value = random_tensor(2, 3, rng);
        Tape t(&store);
        Var loss = t.affine(t.sum(t.mul(t.param("v"), t.param("v"))), 0.5, 0.0);
        t.backward(loss);
        CHECK(max_abs_diff(store.at("v").grad, v.value) <= 1e-12);
    }
}

TEST_CASE("kl gradient wrt prior mean vanishes at the posterior mean") {
    ParamStore store;
    RngStream rng(9);
    Param& mp = store.create("mp", 2, 2);
    mp.value = random_tensor(2, 2, rng);
    const Tensor mq = mp.value;  // equal means
    Tape t(&store);
    Var kl = t.gaussian_kl_total(t.constant(mq), t.constant(Tensor(2, 2, 0.3)), t.param("mp"),
                                 t.constant(Tensor(2, 2, -0.2)));
    t.backward(kl);
    for (std::size_t i = 0; i < mp.grad.size(); ++i) {
        CHECK(std::fabs(mp.grad.data()[i]) <= 1e-12);
    }
}

TEST_CASE("zero loss produces zero gradients") {
    ParamStore store;
    RngStream rng(10);
    Param& w = store.create("w", 3, 3);
    w.value = random_tensor(3, 3, rng);
    Tape t(&store);
    Var loss = t.affine(t.sum(t.param("w")), 0.0, 0.0);
    t.backward(loss);
    for (std::size_t i = 0; i < w.grad.size(); ++i) CHECK(w.grad.data()[i] == 0.0);
}

TEST_CASE("backward contract errors") {
    ParamStore store;
    store.create("w", 2, 2);
    Tape t(&store);
    Var w = t.param("w");
    Var loss = t.sum(w);
    t.backward(loss);
    CHECK_THROWS_AS(t.backward(loss), UsageError);  // double backward
    Tape t2(&store);
    CHECK_THROWS_AS(t2.backward(t2.param("w")), UsageError);  // non-scalar loss
}

TEST_CASE("gradient accumulation is linear") {
    ParamStore store;
    RngStream rng(11);
    Param& w = store.create("w", 2, 3);
    w.value = random_tensor(2, 3, rng);
    const Tensor c1 = random_tensor(2, 3, rng);
    const Tensor c2 = random_tensor(2, 3, rng);
    const double a = 0.7, b = -1.3;

    auto l1 = [&](Tape& t) { return t.sum(t.mul(t.tanh_op(t.param("w")), t.constant(c1))); };
    auto l2 = [&](Tape& t) { return t.squared_error(t.param("w"), t.constant(c2)); };

    store.zero_grads();
    {
        Tape t(&store);
        t.backward(t.add(t.affine(l1(t), a, 0.0), t.affine(l2(t), b, 0.0)));
    }
    const Tensor combined = store.at("w").grad;
    store.zero_grads();
    {
        Tape t(&store);
        t.backward(l1(t));
    }
    const Tensor g1 = store.at("w").grad;
    store.zero_grads();
    {
        Tape t(&store);
        t.backward(l2(t));
    }
    const Tensor g2 = store.at("w").grad;
    for (std::size_t i = 0; i < combined.size(); ++i) {
        CHECK(std::fabs(combined.data()[i] - (a * g1.data()[i] + b * g2.data()[i])) <= 1e-10);
    }
}

TEST_CASE("identical seeds give bit-identical loss and gradients") {
    auto run = [](std::uint64_t seed) {
        ParamStore store;
        RngStream rng(seed);
        init_gru(store, "g", 2, 3, rng);
        Param& x = store.create("x", 4, 2);
        x.value = random_tensor(4, 2, rng);
        Tape t(&store);
        Var loss = t.sum(gru_sequence(t, "g", t.param("x"), 3));
        t.backward(loss);
        return std::make_pair(t.value(loss).at(0, 0), store.at("g.wr").grad);
    };
    const auto [l1, g1] = run(33);
    const auto [l2, g2] = run(33);
    CHECK(l1 == l2);
    CHECK(g1 == g2);
}

TEST_CASE("non-finite intermediates are reported with the op name") {
    ParamStore store;
    Param& w = store.create("w", 1, 1);
    w.value.at(0, 0) = -1.0;
    Tape t(&store);
    try {
        t.log_op(t.param("w"));
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(e.op_name == std::string("log"));
    }
    w.value.at(0, 0) = 1000.0;
    Tape t2(&store);
    try {
        t2.exp_op(t2.param("w"));
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(e.op_name == std::string("exp"));
    }
}

TEST_CASE("adam first step moves by -lr * g / (|g| + eps)") {
    ParamStore store;
    Param& w = store.create("w", 1, 3);
    w.value.at(0, 0) = 1.0;
    w.value.at(0, 1) = -2.0;
    w.value.at(0, 2) = 0.5;
    const Tensor before = w.value;
    w.grad.at(0, 0) = 0.3;
    w.grad.at(0, 1) = -1.7;
    w.grad.at(0, 2) = 0.0;
    store.mark_grads_pending();
    AdamConfig cfg;
    cfg.lr = 0.01;
    store.adam_step(cfg);
    for (int j = 0; j < 3; ++j) {
        const double g = (j == 0) ? 0.3 : (j == 1 ? -1.7 : 0.0);
        const double expect = before.at(0, j) - cfg.lr * g / (std::fabs(g) + cfg.eps);
        CHECK(w.value.at(0, j) == doctest::Approx(expect).epsilon(1e-12));
    }
    // zero-gradient coordinate is unchanged
    CHECK(w.value.at(0, 2) == before.at(0, 2));
    // gradients are zeroed after the step
    for (int j = 0; j < 3; ++j) CHECK(w.grad.at(0, j) == 0.0);
}

TEST_CASE("adam step magnitude stays bounded by lr for constant gradients") {
    ParamStore store;
    Param& w = store.create("w", 1, 1);
    AdamConfig cfg;
    cfg.lr = 0.05;
    double prev = w.value.at(0, 0);
    for (int step = 0; step < 2; ++step) {
        w.grad.at(0, 0) = 0.8;
        store.mark_grads_pending();
        store.adam_step(cfg);
        CHECK(std::fabs(w.value.at(0, 0) - prev) <= cfg.lr * 1.0001);
        prev = w.value.at(0, 0);
    }
}

TEST_CASE("adam usage errors") {
    ParamStore store;
    store.create("w", 1, 1);
    AdamConfig cfg;
    cfg.lr = 0.0;
    store.mark_grads_pending();
    CHECK_THROWS_AS(store.adam_step(cfg), UsageError);  // lr <= 0
    cfg.lr = 0.01;
    store.adam_step(cfg);
    CHECK_THROWS_AS(store.adam_step(cfg), UsageError);  // no new gradients
}

TEST_CASE("non-trainable parameters are never updated") {
    ParamStore store;
    Param& w = store.create("w", 1, 1);
    w.trainable = false;
    w.value.at(0, 0) = 2.0;
    w.grad.at(0, 0) = 1.0;
    store.mark_grads_pending();
    AdamConfig cfg;
    store.adam_step(cfg);
    CHECK(w.value.at(0, 0) == 2.0);
}
