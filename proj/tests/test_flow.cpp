#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "latlab/errors.hpp"
#include "latlab/flow.hpp"
#include "latlab/gaussian.hpp"
#include "test_util.hpp"

using namespace latlab;
using testutil::random_tensor;

namespace {

FlowConfig small_cfg(int channels, int blocks, int context = 6) {
    FlowConfig c;
    c.channels = channels;
    c.context = context;
    c.blocks = blocks;
    c.coupling_hidden = 16;
    c.conv_channels = 6;
    c.base_hidden = 12;
    c.with_durations = false;
    return c;
}

ParamStore make_flow(const FlowConfig& cfg, std::uint64_t seed, bool randomize) {
    ParamStore store;
    RngStream rng(seed);
    flow_init(store, cfg, rng);
    if (randomize) {
        // Move the couplings and actnorms away from their identity init so the
        // tests exercise non-trivial transforms.
        RngStream prng(seed + 1);
        for (const std::string& name : store.names("flow.")) {
            Param& p = store.at(name);
            if (!p.trainable) continue;
            const double scale = name.find("logs") != std::string::npos ? 0.2 : 0.4;
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                p.value.data()[i] += scale * prng.normal();
            }
        }
        for (const std::string& name : store.names("base.")) {
            Param& p = store.at(name);
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                p.value.data()[i] += 0.2 * prng.normal();
            }
        }
    }
    return store;
}

// Forces actnorm and invertible-linear layers to the identity.
void make_identity_mixing(ParamStore& store, const FlowConfig& cfg) {
    for (int k = 0; k < cfg.blocks; ++k) {
        const std::string b = "flow.b" + std::to_string(k) + ".";
        store.at(b + "act.bias").value.fill(0.0);
        store.at(b + "act.logs").value.fill(0.0);
        store.at(b + "lin.lower").value.fill(0.0);
        store.at(b + "lin.upper").value.fill(0.0);
        store.at(b + "lin.logs").value.fill(0.0);
        for (int i = 0; i < cfg.channels; ++i) {
            store.at(b + "lin.sign").value.at(0, i) = 1.0;
            store.at(b + "lin.perm").value.at(0, i) = static_cast<double>(i);
        }
    }
}

}  // namespace

TEST_CASE("round-trip identity on 100 random inputs") {
    for (int channels : {2, 5, 9}) {
        const FlowConfig cfg = small_cfg(channels, 3);
        ParamStore store = make_flow(cfg, 7 + channels, true);
        RngStream rng(11);
        for (int rep = 0; rep < 100; ++rep) {
            const int n = 1 + static_cast<int>(rng.next_below(7));
            const Tensor v = random_tensor(n, channels, rng, 1.5);
            const Tensor c = random_tensor(n, cfg.context, rng);
            const Tensor z0 = flow_forward_values(store, cfg, v, c);
            const Tensor back = flow_inverse(store, cfg, z0, c);
            CHECK(max_abs_diff(v, back) <= 1e-6);
            // and the other direction
            const Tensor fwd = flow_forward_values(store, cfg, flow_inverse(store, cfg, v, c), c);
            CHECK(max_abs_diff(v, fwd) <= 1e-6);
        }
    }
}

TEST_CASE("analytic logdet matches the numeric jacobian determinant") {
    RngStream rng(3);
    for (int channels : {1, 3, 8}) {
        const FlowConfig cfg = small_cfg(channels, 2);
        ParamStore store = make_flow(cfg, 31 + channels, true);
        const int n = 3;
        const Tensor v = random_tensor(n, channels, rng);
        const Tensor c = random_tensor(n, cfg.context, rng);
        double logdet = 0.0;
        flow_forward_values(store, cfg, v, c, &logdet);

        const int dim = n * channels;
        Tensor jac(dim, dim);
        const double h = 1e-5;
        for (int col = 0; col < dim; ++col) {
            Tensor vp = v, vm = v;
            vp.data()[col] += h;
            vm.data()[col] -= h;
            const Tensor up = flow_forward_values(store, cfg, vp, c);
            const Tensor um = flow_forward_values(store, cfg, vm, c);
            for (int row = 0; row < dim; ++row) {
                jac.at(row, col) = (up.data()[row] - um.data()[row]) / (2.0 * h);
            }
        }
        CHECK(std::fabs(log_abs_det(jac) - logdet) <= 1e-4);
    }
}

TEST_CASE("zero-initialized couplings contribute nothing") {
    const FlowConfig cfg = small_cfg(4, 2);
    ParamStore store = make_flow(cfg, 5, false);  // fresh init: couplings are identity
    RngStream rng(9);
    const Tensor v = random_tensor(3, 4, rng);
    const Tensor c = random_tensor(3, cfg.context, rng);
    double logdet = 0.0;
    const Tensor z0 = flow_forward_values(store, cfg, v, c, &logdet);

    // Manual actnorm + linear pass per block (couplings skipped entirely).
    Tensor x = v;
    double manual_logdet = 0.0;
    for (int k = 0; k < cfg.blocks; ++k) {
        const std::string b = "flow.b" + std::to_string(k) + ".";
        const Tensor& bias = store.at(b + "act.bias").value;
        const Tensor& logs = store.at(b + "act.logs").value;
        for (int i = 0; i < x.rows(); ++i) {
            for (int j = 0; j < x.cols(); ++j) {
                x.at(i, j) = (x.at(i, j) + bias.at(0, j)) * std::exp(logs.at(0, j));
            }
        }
        for (int j = 0; j < x.cols(); ++j) manual_logdet += x.rows() * logs.at(0, j);
        // reconstruct the mixing matrix by probing the graph on a 1-block stack
        Tape t(&store);
        FlowVar lin = invlinear_forward(t, b, t.constant(x));
        manual_logdet += t.value(lin.logdet).at(0, 0);
        x = t.value(lin.out);
    }
    CHECK(max_abs_diff(x, z0) <= 1e-12);
    CHECK(logdet == doctest::Approx(manual_logdet).epsilon(1e-12));
}

TEST_CASE("identity stack likelihood reduces to the standard gaussian") {
    const FlowConfig cfg = small_cfg(3, 2);
    ParamStore store = make_flow(cfg, 6, false);
    make_identity_mixing(store, cfg);
    RngStream rng(13);
    const Tensor v = random_tensor(4, 3, rng);
    const Tensor c = random_tensor(4, cfg.context, rng);
    const double ll = flow_log_likelihood_value(store, cfg, v, c);
    const double expect = gaussian_log_prob(v, GaussianSeq::standard(4, 3)).total;
    CHECK(ll == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("coupling with constant scales has logdet sum log s") {
    const FlowConfig cfg = small_cfg(4, 1);
    ParamStore store = make_flow(cfg, 8, false);
    const double raw = 0.7;
    // Head weights stay zero; the bias sets shift = 0 and a constant raw scale.
    Param& head_b = store.at("flow.b0.cp.head.b");
    const int db = cfg.split_b();
    for (int j = 0; j < db; ++j) head_b.value.at(0, db + j) = raw;
    RngStream rng(4);
    const int n = 5;
    const Tensor x = random_tensor(n, 4, rng);
    const Tensor c = random_tensor(n, cfg.context, rng);
    Tape t(&store);
    FlowVar cp = coupling_forward(t, "flow.b0.", cfg, t.constant(x), c);
    const double s = 1.0 / (1.0 + std::exp(-raw)) + 0.5;
    CHECK(t.value(cp.logdet).at(0, 0) ==
          doctest::Approx(n * db * std::log(s)).epsilon(1e-12));
}

TEST_CASE("likelihood is invariant under an appended identity coupling block") {
    const FlowConfig cfg1 = small_cfg(4, 2);
    ParamStore s1 = make_flow(cfg1, 21, true);
    FlowConfig cfg2 = cfg1;
    cfg2.blocks = 3;
    ParamStore s2 = make_flow(cfg2, 21, false);
    // Copy the first two blocks and the base from the randomized stack.
    for (const std::string& name : s1.names()) {
        if (name == "flow.actnorm_init") continue;
        s2.at(name).value = s1.at(name).value;
    }
    // Final block: identity actnorm/linear and the zero-init (identity) coupling.
    const std::string b = "flow.b2.";
    s2.at(b + "act.bias").value.fill(0.0);
    s2.at(b + "act.logs").value.fill(0.0);
    s2.at(b + "lin.lower").value.fill(0.0);
    s2.at(b + "lin.upper").value.fill(0.0);
    s2.at(b + "lin.logs").value.fill(0.0);
    for (int i = 0; i < cfg2.channels; ++i) {
        s2.at(b + "lin.sign").value.at(0, i) = 1.0;
        s2.at(b + "lin.perm").value.at(0, i) = static_cast<double>(i);
    }
    RngStream rng(14);
    const Tensor v = random_tensor(5, 4, rng);
    const Tensor c = random_tensor(5, cfg1.context, rng);
    CHECK(flow_log_likelihood_value(s1, cfg1, v, c) ==
          doctest::Approx(flow_log_likelihood_value(s2, cfg2, v, c)).epsilon(1e-12));
}

TEST_CASE("one-dimensional density integrates to one") {
    const FlowConfig cfg = small_cfg(1, 2, 3);
    ParamStore store = make_flow(cfg, 17, true);
    const Tensor c(1, cfg.context, 0.25);
    // Map the base interval [-9, 9] back through the flow for the grid bounds.
    const Tensor lo_t = flow_inverse(store, cfg, Tensor(1, 1, -9.0), c);
    const Tensor hi_t = flow_inverse(store, cfg, Tensor(1, 1, 9.0), c);
    double lo = std::min(lo_t.at(0, 0), hi_t.at(0, 0));
    double hi = std::max(lo_t.at(0, 0), hi_t.at(0, 0));
    const int points = 20001;
    const double dx = (hi - lo) / (points - 1);
    double integral = 0.0;
    for (int i = 0; i < points; ++i) {
        const double x = lo + i * dx;
        const double p = std::exp(flow_log_likelihood_value(store, cfg, Tensor(1, 1, x), c));
        integral += (i == 0 || i == points - 1) ? 0.5 * p : p;
    }
    integral *= dx;
    CHECK(integral == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("finite differences pass for every layer type and the base") {
    const FlowConfig cfg = small_cfg(4, 1, 5);
    ParamStore store = make_flow(cfg, 23, true);
    RngStream rng(6);
    const Tensor v = random_tensor(4, 4, rng);
    const Tensor c = random_tensor(4, cfg.context, rng);
    const Tensor target = random_tensor(4, 4, rng);

    auto check = [&](const std::vector<std::string>& names,
                     const std::function<Var(Tape&)>& build) {
        const auto rep = testutil::finite_diff_check(store, names, build);
        CHECK(rep.frac_ok >= 0.95);
        CHECK(rep.worst_rel <= 1e-3);
    };

    check({"flow.b0.act.bias", "flow.b0.act.logs"}, [&](Tape& t) {
        FlowVar f = actnorm_forward(t, "flow.b0.", t.constant(v));
        return t.add(t.squared_error(f.out, t.constant(target)), f.logdet);
    });
    check({"flow.b0.lin.lower", "flow.b0.lin.upper", "flow.b0.lin.logs"}, [&](Tape& t) {
        FlowVar f = invlinear_forward(t, "flow.b0.", t.constant(v));
        return t.add(t.squared_error(f.out, t.constant(target)), f.logdet);
    });
    check(store.names("flow.b0.cp."), [&](Tape& t) {
        FlowVar f = coupling_forward(t, "flow.b0.", cfg, t.constant(v), c);
        return t.add(t.squared_error(f.out, t.constant(target)), f.logdet);
    });
    check(store.names("base."), [&](Tape& t) {
        GaussVars g = base_forward_graph(t, cfg, t.constant(c));
        return t.gaussian_log_prob_total(t.constant(v), g.mean, g.log_std);
    });
    // Full likelihood through every parameter at once.
    std::vector<std::string> all;
    for (const std::string& name : store.names()) {
        if (name == "flow.actnorm_init" || name.find(".perm") != std::string::npos ||
            name.find(".sign") != std::string::npos) {
            continue;
        }
        all.push_back(name);
    }
    check(all, [&](Tape& t) {
        return flow_log_likelihood_graph(t, cfg, t.constant(v), c);
    });
}

TEST_CASE("actnorm data-dependent init normalizes the first batch") {
    const FlowConfig cfg = small_cfg(3, 2, 4);
    ParamStore store = make_flow(cfg, 29, true);
    RngStream rng(8);
    std::vector<Tensor> xs;
    std::vector<Tensor> contexts;
    for (int u = 0; u < 6; ++u) {
        xs.push_back(random_tensor(5, 3, rng, 2.0));
        contexts.push_back(random_tensor(5, cfg.context, rng));
    }
    std::vector<const Tensor*> ctx_ptrs;
    for (const Tensor& c : contexts) ctx_ptrs.push_back(&c);
    std::vector<Tensor> inputs = xs;
    flow_actnorm_init(store, cfg, inputs, ctx_ptrs);
    CHECK(flow_actnorm_initialized(store));

    // Block-0 actnorm outputs over the same batch: mean 0, std 1 per channel.
    Tensor mean(1, 3, 0.0), var(1, 3, 0.0);
    std::int64_t rows = 0;
    std::vector<Tensor> outs;
    for (const Tensor& x : xs) {
        Tape t(&store);
        outs.push_back(t.value(actnorm_forward(t, "flow.b0.", t.constant(x)).out));
        rows += x.rows();
    }
    for (const Tensor& y : outs)
        for (int i = 0; i < y.rows(); ++i)
            for (int j = 0; j < 3; ++j) mean.at(0, j) += y.at(i, j);
    for (int j = 0; j < 3; ++j) mean.at(0, j) /= static_cast<double>(rows);
    for (const Tensor& y : outs)
        for (int i = 0; i < y.rows(); ++i)
            for (int j = 0; j < 3; ++j) {
                const double d = y.at(i, j) - mean.at(0, j);
                var.at(0, j) += d * d;
            }
    for (int j = 0; j < 3; ++j) {
        CHECK(std::fabs(mean.at(0, j)) <= 1e-6);
        CHECK(std::fabs(std::sqrt(var.at(0, j) / rows) - 1.0) <= 1e-6);
    }
}

TEST_CASE("distinct base samples map to distinct outputs") {
    const FlowConfig cfg = small_cfg(4, 2);
    ParamStore store = make_flow(cfg, 41, true);
    RngStream rng(10);
    const Tensor c = random_tensor(3, cfg.context, rng);
    for (int rep = 0; rep < 1000; ++rep) {
        const Tensor z0a = random_tensor(3, 4, rng);
        Tensor z0b = z0a;
        z0b.at(static_cast<int>(rng.next_below(3)), static_cast<int>(rng.next_below(4))) += 0.01;
        const Tensor va = flow_inverse(store, cfg, z0a, c);
        const Tensor vb = flow_inverse(store, cfg, z0b, c);
        CHECK(max_abs_diff(va, vb) > 0.0);
    }
}

TEST_CASE("sampling is deterministic per seed and rejects bad temperatures") {
    FlowConfig cfg = small_cfg(5, 2);
    cfg.with_durations = true;  // channels 5 = 4 latent dims + durations
    ParamStore store = make_flow(cfg, 43, true);
    RngStream rng(12);
    const Tensor c = random_tensor(6, cfg.context, rng);
    RngStream a(77), b(77);
    const FlowSample sa = flow_sample(store, cfg, c, 0.5, a);
    const FlowSample sb = flow_sample(store, cfg, c, 0.5, b);
    CHECK(sa.latents == sb.latents);
    CHECK(sa.durations == sb.durations);
    for (int d : sa.durations) CHECK(d >= 1);
    RngStream r2(1);
    CHECK_THROWS_AS(flow_sample(store, cfg, c, 0.0, r2), UsageError);
    CHECK_THROWS_AS(flow_sample(store, cfg, c, -1.0, r2), UsageError);
}

TEST_CASE("training lowers validation nll and preserves invertibility") {
    // Synthetic latent dataset: a fixed linear map of the context plus noise,
    // so conditional structure is learnable.
    RngStream rng(50);
    const int d = 3, ctx = 4;
    LatentDataset ds;
    ds.dim = d;
    ds.context_dim = ctx;
    const Tensor map = random_tensor(ctx, d, rng);
    for (int u = 0; u < 60; ++u) {
        LatentRecord r;
        r.id = "r" + std::to_string(u);
        const int n = 3 + static_cast<int>(rng.next_below(4));
        r.context = random_tensor(n, ctx, rng);
        r.mean = matmul(r.context, map);
        r.std = Tensor(n, d, 0.05);
        r.sample = r.mean;
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < d; ++j) r.sample.at(i, j) += 0.3 * rng.normal();
            r.durations.push_back(1 + static_cast<int>(rng.next_below(6)));
        }
        ds.records.push_back(std::move(r));
    }
    FlowConfig cfg;
    cfg.channels = d + 1;
    cfg.context = ctx;
    cfg.blocks = 2;
    cfg.coupling_hidden = 24;
    cfg.conv_channels = 6;
    cfg.base_hidden = 16;
    cfg.with_durations = true;
    ParamStore store;
    RngStream init_rng(51);
    flow_init(store, cfg, init_rng);
    FlowTrainConfig tc;
    tc.steps = 300;
    tc.batch = 8;
    tc.lr = 5e-3;
    tc.seed = 3;
    const FlowTrainResult res = flow_train(store, cfg, ds, tc);
    CHECK(res.final_val_nll_per_dim < res.initial_val_nll_per_dim);
    for (const TraceRow& row : res.trace) CHECK(std::isfinite(row.value));

    RngStream rt(60);
    for (int rep = 0; rep < 20; ++rep) {
        const Tensor v = random_tensor(4, cfg.channels, rt);
        const Tensor c = random_tensor(4, ctx, rt);
        const Tensor back = flow_inverse(store, cfg, flow_forward_values(store, cfg, v, c), c);
        CHECK(max_abs_diff(v, back) <= 1e-6);
    }
}
