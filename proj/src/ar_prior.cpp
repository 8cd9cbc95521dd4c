#include "latlab/ar_prior.hpp"

#include <cmath>

#include "latlab/errors.hpp"

namespace latlab {

TeacherMode teacher_mode_from_string(const std::string& s) {
    if (s == "resample") return TeacherMode::kResample;
    if (s == "stored") return TeacherMode::kStoredSample;
    if (s == "mean") return TeacherMode::kMean;
    throw UsageError("unknown teacher mode '" + s + "' (resample|stored|mean)");
}

void init_ar_prior(ParamStore& store, const std::string& prefix, const ArPriorConfig& cfg,
                   RngStream& rng) {
    init_linear(store, prefix + "in", cfg.context + cfg.latent, cfg.hidden, rng);
    init_gru(store, prefix + "gru", cfg.hidden, cfg.hidden, rng);
    // Zero heads: the untrained prior is exactly N(0, I).
    init_linear(store, prefix + "mean", cfg.hidden, cfg.latent, rng, /*zero=*/true);
    init_linear(store, prefix + "logstd", cfg.hidden, cfg.latent, rng, /*zero=*/true);
    store.create(prefix + "z0", 1, cfg.latent);
    init_linear(store, prefix + "dur.fc", cfg.context, cfg.dur_hidden, rng);
    init_linear(store, prefix + "dur.out", cfg.dur_hidden, 1, rng, /*zero=*/true);
}

GaussVars ar_prior_forward(Tape& t, const std::string& prefix, const ArPriorConfig& cfg,
                           Var context, Var teacher) {
    const int n = t.value(context).rows();
    if (t.value(teacher).rows() != n) {
        throw ShapeError("ar_prior_forward: context has " + std::to_string(n) +
                         " steps but teacher has " +
                         std::to_string(t.value(teacher).rows()));
    }
    const GruVars gru = gru_vars(t, prefix + "gru");
    Var h = t.constant(Tensor(1, cfg.hidden, 0.0));
    Var z_prev = t.param(prefix + "z0");
    std::vector<Var> means, log_stds;
    means.reserve(n);
    log_stds.reserve(n);
    for (int i = 0; i < n; ++i) {
        Var x = t.tanh_op(
            apply_linear(t, prefix + "in", t.concat_cols(t.row(context, i), z_prev)));
        h = gru_step(t, gru, x, h);
        means.push_back(apply_linear(t, prefix + "mean", h));
        log_stds.push_back(apply_linear(t, prefix + "logstd", h));
        z_prev = t.row(teacher, i);
    }
    return GaussVars{t.stack_rows(means), t.stack_rows(log_stds)};
}

GaussianSeq ar_prior_forward_values(ParamStore& store, const std::string& prefix,
                                    const ArPriorConfig& cfg, const Tensor& context,
                                    const Tensor& teacher) {
    Tape t(&store);
    GaussVars g = ar_prior_forward(t, prefix, cfg, t.constant(context), t.constant(teacher));
    return GaussianSeq(t.value(g.mean), t.value(g.log_std));
}

Var ar_duration_forward(Tape& t, const std::string& prefix, Var context) {
    return apply_linear(t, prefix + "dur.out",
                        t.tanh_op(apply_linear(t, prefix + "dur.fc", context)));
}

namespace {

Tensor teacher_tensor(const LatentRecord& r, TeacherMode mode, RngStream& rng) {
    switch (mode) {
        case TeacherMode::kStoredSample:
            return r.sample;
        case TeacherMode::kMean:
            return r.mean;
        case TeacherMode::kResample: {
            Tensor out = r.mean;
            for (int i = 0; i < out.rows(); ++i)
                for (int j = 0; j < out.cols(); ++j)
                    out.at(i, j) += r.std.at(i, j) * rng.normal();
            return out;
        }
    }
    throw UsageError("teacher_tensor: bad mode");
}

Tensor log_std_from_std(const Tensor& std) {
    Tensor out = std;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::log(out.data()[i]);
    return out;
}

Tensor log_durations(const std::vector<int>& durations) {
    Tensor out(static_cast<int>(durations.size()), 1);
    for (std::size_t i = 0; i < durations.size(); ++i)
        out.at(static_cast<int>(i), 0) = std::log(static_cast<double>(durations[i]));
    return out;
}

}  // namespace

double ar_eval_kl_per_step(ParamStore& store, const std::string& prefix, const ArPriorConfig& cfg,
                           const std::vector<LatentRecord>& records, TeacherMode teacher,
                           RngStream& rng) {
    double kl_sum = 0.0;
    std::int64_t steps = 0;
    for (const LatentRecord& r : records) {
        const Tensor teach = teacher_tensor(r, teacher, rng);
        const GaussianSeq p = ar_prior_forward_values(store, prefix, cfg, r.context, teach);
        const GaussianSeq q(r.mean, log_std_from_std(r.std));
        kl_sum += gaussian_kl(q, p).total;
        steps += r.mean.rows();
    }
    if (steps == 0) throw DataError("ar_eval_kl_per_step: no records");
    return kl_sum / static_cast<double>(steps);
}

double ar_eval_nll_per_dim(ParamStore& store, const std::string& prefix, const ArPriorConfig& cfg,
                           const std::vector<LatentRecord>& records) {
    double nll = 0.0;
    std::int64_t count = 0;
    for (const LatentRecord& r : records) {
        const GaussianSeq p = ar_prior_forward_values(store, prefix, cfg, r.context, r.sample);
        nll -= gaussian_log_prob(r.sample, p).total;
        count += r.sample.rows() * r.sample.cols();
    }
    if (count == 0) throw DataError("ar_eval_nll_per_dim: no records");
    return nll / static_cast<double>(count);
}

PosthocResult train_posthoc(ParamStore& store, const std::string& prefix,
                            const ArPriorConfig& cfg, const LatentDataset& dataset,
                            const PosthocConfig& tc) {
    if (dataset.records.empty()) throw DataError("train_posthoc: empty latent dataset");
    if (dataset.dim != cfg.latent || dataset.context_dim != cfg.context) {
        throw ShapeError("train_posthoc: dataset dims (" + std::to_string(dataset.dim) + "," +
                         std::to_string(dataset.context_dim) + ") do not match prior config (" +
                         std::to_string(cfg.latent) + "," + std::to_string(cfg.context) + ")");
    }
    const int n = static_cast<int>(dataset.records.size());
    const int n_val = std::max(1, static_cast<int>(std::round(tc.val_frac * n)));
    const int n_train = std::max(1, n - n_val);
    std::vector<LatentRecord> val(dataset.records.begin() + n_train, dataset.records.end());

    RngStream master(tc.seed);
    RngStream batch_rng = master.substream(1);
    RngStream teacher_rng = master.substream(2);
    RngStream eval_rng = master.substream(3);

    PosthocResult out;
    {
        RngStream r = eval_rng;
        out.initial_val_kl_per_step =
            ar_eval_kl_per_step(store, prefix, cfg, val, tc.teacher, r);
    }

    AdamConfig adam;
    adam.lr = tc.lr;
    for (int step = 0; step < tc.steps; ++step) {
        double kl_value = 0.0, dur_value = 0.0;
        std::int64_t total_steps = 0;
        std::vector<const LatentRecord*> batch;
        for (int b = 0; b < tc.batch; ++b) {
            batch.push_back(
                &dataset.records[batch_rng.next_below(static_cast<std::uint64_t>(n_train))]);
            total_steps += batch.back()->mean.rows();
        }
        const double inv_steps = 1.0 / static_cast<double>(total_steps);
        for (const LatentRecord* r : batch) {
            Tape t(&store);
            Var context = t.constant(r->context);
            Var teacher = t.constant(teacher_tensor(*r, tc.teacher, teacher_rng));
            GaussVars p = ar_prior_forward(t, prefix, cfg, context, teacher);
            Var kl = t.gaussian_kl_total(t.constant(r->mean),
                                         t.constant(log_std_from_std(r->std)), p.mean, p.log_std);
            Var logd = ar_duration_forward(t, prefix, context);
            Var dur_se = t.squared_error(logd, t.constant(log_durations(r->durations)));
            Var loss = t.affine(
                t.add(kl, t.affine(dur_se, tc.dur_loss_weight, 0.0)), inv_steps, 0.0);
            if (!std::isfinite(t.value(loss).at(0, 0))) {
                throw DivergenceError(step, "posthoc prior loss is not finite");
            }
            t.backward(loss);
            kl_value += t.value(kl).at(0, 0);
            dur_value += t.value(dur_se).at(0, 0);
        }
        store.adam_step(adam, prefix);
        if (step % tc.log_every == 0 || step + 1 == tc.steps) {
            out.trace.push_back({step, "kl", kl_value * inv_steps});
            out.trace.push_back({step, "dur_mse", dur_value * inv_steps});
        }
    }
    {
        RngStream r = eval_rng;
        out.final_val_kl_per_step = ar_eval_kl_per_step(store, prefix, cfg, val, tc.teacher, r);
    }
    return out;
}

ArSample ar_sample(ParamStore& store, const std::string& prefix, const ArPriorConfig& cfg,
                   const Tensor& context, double temperature, RngStream& rng) {
    if (temperature < 0.0) throw UsageError("ar_sample: temperature must be >= 0");
    const int n = context.rows();
    Tape t(&store);
    Var context_v = t.constant(context);
    const GruVars gru = gru_vars(t, prefix + "gru");
    Var h = t.constant(Tensor(1, cfg.hidden, 0.0));
    Var z_prev = t.param(prefix + "z0");
    ArSample out;
    out.latents = Tensor(n, cfg.latent);
    for (int i = 0; i < n; ++i) {
        Var x = t.tanh_op(
            apply_linear(t, prefix + "in", t.concat_cols(t.row(context_v, i), z_prev)));
        h = gru_step(t, gru, x, h);
        const Tensor mean = t.value(apply_linear(t, prefix + "mean", h));
        const Tensor log_std = t.value(apply_linear(t, prefix + "logstd", h));
        Tensor z(1, cfg.latent);
        for (int j = 0; j < cfg.latent; ++j) {
            const double eps = temperature == 0.0 ? 0.0 : rng.normal();
            z.at(0, j) = mean.at(0, j) + temperature * std::exp(log_std.at(0, j)) * eps;
        }
        out.latents.set_row(i, z);
        z_prev = t.constant(z);
    }
    const Tensor logd = t.value(ar_duration_forward(t, prefix, context_v));
    out.durations.resize(n);
    for (int i = 0; i < n; ++i) {
        const long long d = std::llround(std::exp(logd.at(i, 0)));
        out.durations[i] = static_cast<int>(std::min<long long>(std::max<long long>(d, 1), 200));
    }
    return out;
}

}  // namespace latlab
