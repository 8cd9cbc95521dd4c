#include "latlab/flow.hpp"

#include <cmath>

#include "latlab/errors.hpp"
#include "latlab/nets.hpp"

namespace latlab {

using nlohmann::json;

json FlowConfig::to_json() const {
    return json{{"channels", channels},
                {"context", context},
                {"blocks", blocks},
                {"coupling_hidden", coupling_hidden},
                {"conv_channels", conv_channels},
                {"base_hidden", base_hidden},
                {"with_durations", with_durations}};
}

FlowConfig FlowConfig::from_json(const json& j) {
    FlowConfig c;
    c.channels = j.at("channels").get<int>();
    c.context = j.at("context").get<int>();
    c.blocks = j.at("blocks").get<int>();
    c.coupling_hidden = j.at("coupling_hidden").get<int>();
    c.conv_channels = j.at("conv_channels").get<int>();
    c.base_hidden = j.at("base_hidden").get<int>();
    c.with_durations = j.at("with_durations").get<bool>();
    return c;
}

namespace {

std::string block_prefix(int k) { return "flow.b" + std::to_string(k) + "."; }

// Random orthogonal matrix via Gram-Schmidt on a standard normal draw.
Tensor random_orthogonal(int n, RngStream& rng) {
    Tensor a(n, n);
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
    for (int c = 0; c < n; ++c) {
        for (int prev = 0; prev < c; ++prev) {
            double dot = 0.0;
            for (int r = 0; r < n; ++r) dot += a.at(r, c) * a.at(r, prev);
            for (int r = 0; r < n; ++r) a.at(r, c) -= dot * a.at(r, prev);
        }
        double norm = 0.0;
        for (int r = 0; r < n; ++r) norm += a.at(r, c) * a.at(r, c);
        norm = std::sqrt(norm);
        if (norm < 1e-8) throw NumericError("random_orthogonal", "degenerate column");
        for (int r = 0; r < n; ++r) a.at(r, c) /= norm;
    }
    return a;
}

// LU factorization with partial pivoting: P*W = L*U, so W = P^T L U; we store
// the row permutation applied to W.
void lu_decompose(const Tensor& w, std::vector<int>& perm, Tensor& lower, Tensor& upper) {
    const int n = w.rows();
    Tensor a = w;
    perm.resize(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    lower = Tensor(n, n, 0.0);
    for (int k = 0; k < n; ++k) {
        int piv = k;
        for (int i = k + 1; i < n; ++i) {
            if (std::fabs(a.at(i, k)) > std::fabs(a.at(piv, k))) piv = i;
        }
        if (piv != k) {
            for (int j = 0; j < n; ++j) std::swap(a.at(k, j), a.at(piv, j));
            for (int j = 0; j < k; ++j) std::swap(lower.at(k, j), lower.at(piv, j));
            std::swap(perm[k], perm[piv]);
        }
        if (a.at(k, k) == 0.0) throw NumericError("lu_decompose", "singular matrix");
        for (int i = k + 1; i < n; ++i) {
            const double f = a.at(i, k) / a.at(k, k);
            lower.at(i, k) = f;
            for (int j = k; j < n; ++j) a.at(i, j) -= f * a.at(k, j);
        }
    }
    upper = a;
}

Tensor perm_matrix(const Tensor& perm_row) {
    // Row k of (L U) is row perm[k] of W, so W = P (L U) with P[perm[k], k] = 1.
    const int n = perm_row.cols();
    Tensor p(n, n, 0.0);
    for (int i = 0; i < n; ++i) {
        p.at(static_cast<int>(perm_row.at(0, i)), i) = 1.0;
    }
    return p;
}

Tensor strict_lower_mask(int n) {
    Tensor m(n, n, 0.0);
    for (int i = 1; i < n; ++i)
        for (int j = 0; j < i; ++j) m.at(i, j) = 1.0;
    return m;
}

Tensor strict_upper_mask(int n) {
    Tensor m(n, n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) m.at(i, j) = 1.0;
    return m;
}

Tensor identity(int n) {
    Tensor m(n, n, 0.0);
    for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

// Reconstructs the mixing matrix W from the stored LU parameters.
Tensor invlinear_matrix(const ParamStore& store, const std::string& block) {
    const Tensor& lower = store.at(block + "lin.lower").value;
    const Tensor& upper = store.at(block + "lin.upper").value;
    const Tensor& logs = store.at(block + "lin.logs").value;
    const Tensor& sign = store.at(block + "lin.sign").value;
    const Tensor& perm = store.at(block + "lin.perm").value;
    const int n = lower.rows();
    Tensor l = identity(n);
    Tensor u(n, n, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < i; ++j) l.at(i, j) = lower.at(i, j);
        for (int j = i + 1; j < n; ++j) u.at(i, j) = upper.at(i, j);
        u.at(i, i) = sign.at(0, i) * std::exp(logs.at(0, i));
    }
    return matmul(perm_matrix(perm), matmul(l, u));
}

struct CouplingCond {
    Var shift;
    Var scale;  // sigmoid(raw) + 0.5, in (0.5, 1.5)
};

CouplingCond coupling_cond(Tape& t, const std::string& block, const FlowConfig& cfg, Var a,
                           const Tensor& context) {
    const int db = cfg.split_b();
    Var conv = t.add_row(
        t.add(t.add(t.matmul_op(t.shift_rows(a, 1), t.param(block + "cp.convm")),
                    t.matmul_op(a, t.param(block + "cp.conv0"))),
              t.matmul_op(t.shift_rows(a, -1), t.param(block + "cp.convp"))),
        t.param(block + "cp.convb"));
    Var inp = t.concat_cols(a, t.concat_cols(t.constant(context), conv));
    Var h = t.tanh_op(apply_linear(t, block + "cp.fc", inp));
    Var head = apply_linear(t, block + "cp.head", h);
    CouplingCond out;
    out.shift = t.slice_cols(head, 0, db);
    out.scale = t.affine(t.sigmoid_op(t.slice_cols(head, db, 2 * db)), 1.0, 0.5);
    return out;
}

}  // namespace

void flow_init(ParamStore& store, const FlowConfig& cfg, RngStream& rng) {
    if (cfg.channels < 1 || cfg.blocks < 1) throw UsageError("flow_init: invalid config");
    const int n = cfg.channels;
    const int da = cfg.split_a(), db = cfg.split_b();
    for (int k = 0; k < cfg.blocks; ++k) {
        const std::string b = block_prefix(k);
        store.create(b + "act.bias", 1, n);
        store.create(b + "act.logs", 1, n);

        const Tensor w = random_orthogonal(n, rng);
        std::vector<int> perm;
        Tensor lower, upper;
        lu_decompose(w, perm, lower, upper);
        Param& p_lower = store.create(b + "lin.lower", n, n);
        Param& p_upper = store.create(b + "lin.upper", n, n);
        Param& p_logs = store.create(b + "lin.logs", 1, n);
        Param& p_sign = store.create(b + "lin.sign", 1, n);
        Param& p_perm = store.create(b + "lin.perm", 1, n);
        p_sign.trainable = false;
        p_perm.trainable = false;
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < i; ++j) p_lower.value.at(i, j) = lower.at(i, j);
            for (int j = i + 1; j < n; ++j) p_upper.value.at(i, j) = upper.at(i, j);
            const double d = upper.at(i, i);
            p_sign.value.at(0, i) = d >= 0.0 ? 1.0 : -1.0;
            p_logs.value.at(0, i) = std::log(std::fabs(d));
            p_perm.value.at(0, i) = static_cast<double>(perm[i]);
        }

        if (db > 0) {
            for (const char* tap : {"convm", "conv0", "convp"}) {
                Param& w_tap = store.create(b + "cp." + tap, da, cfg.conv_channels);
                init_xavier(w_tap.value, rng);
            }
            store.create(b + "cp.convb", 1, cfg.conv_channels);
            init_linear(store, b + "cp.fc", da + cfg.context + cfg.conv_channels,
                        cfg.coupling_hidden, rng);
            // Zero head: the coupling is the identity at initialization.
            init_linear(store, b + "cp.head", cfg.coupling_hidden, 2 * db, rng, /*zero=*/true);
        }
    }
    init_gru(store, "base.gru", cfg.context, cfg.base_hidden, rng);
    init_linear(store, "base.mean", cfg.base_hidden, n, rng, /*zero=*/true);
    init_linear(store, "base.logstd", cfg.base_hidden, n, rng, /*zero=*/true);
    Param& flag = store.create("flow.actnorm_init", 1, 1);
    flag.trainable = false;
}

bool flow_actnorm_initialized(const ParamStore& store) {
    return store.at("flow.actnorm_init").value.at(0, 0) != 0.0;
}

FlowVar actnorm_forward(Tape& t, const std::string& block, Var x) {
    Var bias = t.param(block + "act.bias");
    Var logs = t.param(block + "act.logs");
    Var y = t.mul_row(t.add_row(x, bias), t.exp_op(logs));
    const double n = static_cast<double>(t.value(x).rows());
    return FlowVar{y, t.affine(t.sum(logs), n, 0.0)};
}

FlowVar invlinear_forward(Tape& t, const std::string& block, Var x) {
    const int n = t.value(x).cols();
    Var lower = t.param(block + "lin.lower");
    Var upper = t.param(block + "lin.upper");
    Var logs = t.param(block + "lin.logs");
    // sign and perm are fixed (non-trainable); adam never touches them.
    Var sign = t.param(block + "lin.sign");
    Var l = t.add(t.mul(lower, t.constant(strict_lower_mask(n))), t.constant(identity(n)));
    Var u = t.add(t.mul(upper, t.constant(strict_upper_mask(n))),
                  t.diag_row(t.mul(t.exp_op(logs), sign)));
    Var w = t.matmul_op(t.constant(perm_matrix(t.value(t.param(block + "lin.perm")))),
                        t.matmul_op(l, u));
    Var y = t.matmul_op(x, t.transpose_op(w));
    const double rows = static_cast<double>(t.value(x).rows());
    return FlowVar{y, t.affine(t.sum(logs), rows, 0.0)};
}

FlowVar coupling_forward(Tape& t, const std::string& block, const FlowConfig& cfg, Var x,
                         const Tensor& context) {
    const int da = cfg.split_a(), db = cfg.split_b();
    if (db == 0) {
        return FlowVar{x, t.constant_scalar(0.0)};
    }
    Var a = t.slice_cols(x, 0, da);
    Var b = t.slice_cols(x, da, cfg.channels);
    CouplingCond cond = coupling_cond(t, block, cfg, a, context);
    Var yb = t.add(t.mul(b, cond.scale), cond.shift);
    return FlowVar{t.concat_cols(a, yb), t.sum(t.log_op(cond.scale))};
}

FlowVar flow_forward_graph(Tape& t, const FlowConfig& cfg, Var v, const Tensor& context) {
    if (t.value(v).cols() != cfg.channels) {
        throw ShapeError("flow_forward: input has " + std::to_string(t.value(v).cols()) +
                         " channels, config says " + std::to_string(cfg.channels));
    }
    Var x = v;
    Var logdet = t.constant_scalar(0.0);
    for (int k = 0; k < cfg.blocks; ++k) {
        const std::string b = block_prefix(k);
        FlowVar an = actnorm_forward(t, b, x);
        FlowVar il = invlinear_forward(t, b, an.out);
        FlowVar cp = coupling_forward(t, b, cfg, il.out, context);
        x = cp.out;
        logdet = t.add(logdet, t.add(an.logdet, t.add(il.logdet, cp.logdet)));
    }
    return FlowVar{x, logdet};
}

GaussVars base_forward_graph(Tape& t, const FlowConfig& cfg, Var context) {
    Var h = gru_sequence(t, "base.gru", context, cfg.base_hidden);
    return GaussVars{apply_linear(t, "base.mean", h), apply_linear(t, "base.logstd", h)};
}

Var flow_log_likelihood_graph(Tape& t, const FlowConfig& cfg, Var v, const Tensor& context) {
    FlowVar fw = flow_forward_graph(t, cfg, v, context);
    GaussVars base = base_forward_graph(t, cfg, t.constant(context));
    Var lp = t.gaussian_log_prob_total(fw.out, base.mean, base.log_std);
    return t.add(lp, fw.logdet);
}

Tensor flow_forward_values(ParamStore& store, const FlowConfig& cfg, const Tensor& v,
                           const Tensor& context, double* logdet_out) {
    Tape t(&store);
    FlowVar fw = flow_forward_graph(t, cfg, t.constant(v), context);
    if (logdet_out) *logdet_out = t.value(fw.logdet).at(0, 0);
    return t.value(fw.out);
}

Tensor flow_inverse(ParamStore& store, const FlowConfig& cfg, const Tensor& z0,
                    const Tensor& context) {
    if (z0.cols() != cfg.channels) {
        throw ShapeError("flow_inverse: input has " + std::to_string(z0.cols()) +
                         " channels, config says " + std::to_string(cfg.channels));
    }
    const int da = cfg.split_a(), db = cfg.split_b();
    Tensor x = z0;
    for (int k = cfg.blocks - 1; k >= 0; --k) {
        const std::string b = block_prefix(k);
        // coupling inverse
        if (db > 0) {
            Tensor a(x.rows(), da), yb(x.rows(), db);
            for (int i = 0; i < x.rows(); ++i) {
                for (int j = 0; j < da; ++j) a.at(i, j) = x.at(i, j);
                for (int j = 0; j < db; ++j) yb.at(i, j) = x.at(i, da + j);
            }
            Tape t(&store);
            CouplingCond cond = coupling_cond(t, b, cfg, t.constant(a), context);
            const Tensor& shift = t.value(cond.shift);
            const Tensor& scale = t.value(cond.scale);
            for (int i = 0; i < x.rows(); ++i) {
                for (int j = 0; j < db; ++j) {
                    x.at(i, da + j) = (yb.at(i, j) - shift.at(i, j)) / scale.at(i, j);
                }
            }
        }
        // invertible linear inverse
        const Tensor w_inv = matrix_inverse(invlinear_matrix(store, b));
        x = matmul(x, transpose(w_inv));
        // actnorm inverse
        const Tensor& bias = store.at(b + "act.bias").value;
        const Tensor& logs = store.at(b + "act.logs").value;
        for (int i = 0; i < x.rows(); ++i) {
            for (int j = 0; j < cfg.channels; ++j) {
                x.at(i, j) = x.at(i, j) * std::exp(-logs.at(0, j)) - bias.at(0, j);
            }
        }
        if (!x.all_finite()) throw NumericError("flow_inverse", "block " + std::to_string(k));
    }
    return x;
}

GaussianSeq flow_base_values(ParamStore& store, const FlowConfig& cfg, const Tensor& context) {
    Tape t(&store);
    GaussVars g = base_forward_graph(t, cfg, t.constant(context));
    return GaussianSeq(t.value(g.mean), t.value(g.log_std));
}

double flow_log_likelihood_value(ParamStore& store, const FlowConfig& cfg, const Tensor& v,
                                 const Tensor& context) {
    Tape t(&store);
    return t.value(flow_log_likelihood_graph(t, cfg, t.constant(v), context)).at(0, 0);
}

Tensor flow_input_from_record(const FlowConfig& cfg, const LatentRecord& record, bool resample,
                              RngStream& rng) {
    const int n = record.mean.rows();
    const int d = cfg.latent_dim();
    if (record.mean.cols() != d) {
        throw ShapeError("flow_input_from_record: record dim " +
                         std::to_string(record.mean.cols()) + " vs flow latent dim " +
                         std::to_string(d));
    }
    Tensor v(n, cfg.channels);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
            double z = record.sample.at(i, j);
            if (resample) z = record.mean.at(i, j) + record.std.at(i, j) * rng.normal();
            v.at(i, j) = z;
        }
        if (cfg.with_durations) {
            const double u = rng.uniform();
            v.at(i, d) = std::log(static_cast<double>(record.durations[i]) + u);
        }
    }
    return v;
}

void flow_actnorm_init(ParamStore& store, const FlowConfig& cfg, std::vector<Tensor> xs,
                       const std::vector<const Tensor*>& contexts) {
    const int n = cfg.channels;
    for (int k = 0; k < cfg.blocks; ++k) {
        const std::string b = block_prefix(k);
        Tensor mean(1, n, 0.0), var(1, n, 0.0);
        std::int64_t rows = 0;
        for (const Tensor& x : xs) {
            for (int i = 0; i < x.rows(); ++i)
                for (int j = 0; j < n; ++j) mean.at(0, j) += x.at(i, j);
            rows += x.rows();
        }
        for (int j = 0; j < n; ++j) mean.at(0, j) /= static_cast<double>(rows);
        for (const Tensor& x : xs) {
            for (int i = 0; i < x.rows(); ++i) {
                for (int j = 0; j < n; ++j) {
                    const double d = x.at(i, j) - mean.at(0, j);
                    var.at(0, j) += d * d;
                }
            }
        }
        Param& bias = store.at(b + "act.bias");
        Param& logs = store.at(b + "act.logs");
        for (int j = 0; j < n; ++j) {
            const double sd = std::sqrt(std::max(var.at(0, j) / static_cast<double>(rows), 1e-12));
            bias.value.at(0, j) = -mean.at(0, j);
            logs.value.at(0, j) = -std::log(sd);
        }
        for (std::size_t u = 0; u < xs.size(); ++u) {
            Tape t(&store);
            FlowVar an = actnorm_forward(t, b, t.constant(xs[u]));
            FlowVar il = invlinear_forward(t, b, an.out);
            FlowVar cp = coupling_forward(t, b, cfg, il.out, *contexts[u]);
            xs[u] = t.value(cp.out);
        }
    }
    store.at("flow.actnorm_init").value.at(0, 0) = 1.0;
}

double flow_eval_nll_per_dim(ParamStore& store, const FlowConfig& cfg,
                             const std::vector<LatentRecord>& records, RngStream& rng) {
    double nll = 0.0;
    std::int64_t count = 0;
    for (const LatentRecord& r : records) {
        const Tensor v = flow_input_from_record(cfg, r, false, rng);
        nll -= flow_log_likelihood_value(store, cfg, v, r.context);
        count += static_cast<std::int64_t>(v.rows()) * cfg.channels;
    }
    if (count == 0) throw DataError("flow_eval_nll_per_dim: no records");
    return nll / static_cast<double>(count);
}

FlowTrainResult flow_train(ParamStore& store, const FlowConfig& cfg, const LatentDataset& dataset,
                           const FlowTrainConfig& tc) {
    if (dataset.records.empty()) throw DataError("flow_train: empty latent dataset");
    if (dataset.dim != cfg.latent_dim() || dataset.context_dim != cfg.context) {
        throw ShapeError("flow_train: dataset dims (" + std::to_string(dataset.dim) + "," +
                         std::to_string(dataset.context_dim) + ") do not match flow config");
    }
    const int n = static_cast<int>(dataset.records.size());
    const int n_val = std::max(1, static_cast<int>(std::round(tc.val_frac * n)));
    const int n_train = std::max(1, n - n_val);
    std::vector<LatentRecord> val(dataset.records.begin() + n_train, dataset.records.end());

    RngStream master(tc.seed);
    RngStream batch_rng = master.substream(1);
    RngStream noise_rng = master.substream(2);
    RngStream eval_rng = master.substream(3);

    // Actnorm init from the first batch the training loop would draw.
    if (!flow_actnorm_initialized(store)) {
        RngStream peek_batch = batch_rng;
        RngStream peek_noise = noise_rng;
        std::vector<Tensor> xs;
        std::vector<const Tensor*> contexts;
        for (int bi = 0; bi < tc.batch; ++bi) {
            const LatentRecord& r =
                dataset.records[peek_batch.next_below(static_cast<std::uint64_t>(n_train))];
            xs.push_back(flow_input_from_record(cfg, r, tc.resample_latents, peek_noise));
            contexts.push_back(&r.context);
        }
        flow_actnorm_init(store, cfg, std::move(xs), contexts);
    }

    FlowTrainResult out;
    {
        RngStream r = eval_rng;
        out.initial_val_nll_per_dim = flow_eval_nll_per_dim(store, cfg, val, r);
    }

    AdamConfig adam;
    adam.lr = tc.lr;
    for (int step = 0; step < tc.steps; ++step) {
        std::vector<const LatentRecord*> batch;
        std::int64_t dims = 0;
        for (int bi = 0; bi < tc.batch; ++bi) {
            batch.push_back(
                &dataset.records[batch_rng.next_below(static_cast<std::uint64_t>(n_train))]);
            dims += static_cast<std::int64_t>(batch.back()->mean.rows()) * cfg.channels;
        }
        const double inv_dims = 1.0 / static_cast<double>(dims);
        double nll_acc = 0.0;
        try {
            for (const LatentRecord* r : batch) {
                const Tensor v = flow_input_from_record(cfg, *r, tc.resample_latents, noise_rng);
                Tape t(&store);
                Var ll = flow_log_likelihood_graph(t, cfg, t.constant(v), r->context);
                Var loss = t.affine(ll, -inv_dims, 0.0);
                const double lv = t.value(loss).at(0, 0);
                if (!std::isfinite(lv)) throw DivergenceError(step, "flow loss is not finite");
                t.backward(loss);
                nll_acc += lv;
            }
        } catch (const NumericError& e) {
            throw DivergenceError(step, e.what());
        }
        store.adam_step(adam);
        if (step % tc.log_every == 0 || step + 1 == tc.steps) {
            out.trace.push_back({step, "nll", nll_acc});
        }
    }
    {
        RngStream r = eval_rng;
        out.final_val_nll_per_dim = flow_eval_nll_per_dim(store, cfg, val, r);
    }
    return out;
}

FlowSample flow_sample(ParamStore& store, const FlowConfig& cfg, const Tensor& context,
                       double temperature, RngStream& rng) {
    if (temperature <= 0.0) throw UsageError("flow_sample: temperature must be > 0");
    const GaussianSeq base = flow_base_values(store, cfg, context);
    Tensor z0(base.steps(), base.dims());
    for (int i = 0; i < z0.rows(); ++i) {
        for (int j = 0; j < z0.cols(); ++j) {
            z0.at(i, j) = base.mean.at(i, j) +
                          temperature * std::exp(base.log_std.at(i, j)) * rng.normal();
        }
    }
    const Tensor v = flow_inverse(store, cfg, z0, context);
    FlowSample out;
    const int d = cfg.latent_dim();
    out.latents = Tensor(v.rows(), d);
    for (int i = 0; i < v.rows(); ++i)
        for (int j = 0; j < d; ++j) out.latents.at(i, j) = v.at(i, j);
    if (cfg.with_durations) {
        out.durations.resize(v.rows());
        for (int i = 0; i < v.rows(); ++i) {
            const double dur = std::floor(std::exp(v.at(i, d)));
            out.durations[i] =
                static_cast<int>(std::min(std::max(dur, 1.0), 200.0));
        }
    }
    return out;
}

}  // namespace latlab
