#include "latlab/fvae.hpp"

#include <cmath>

#include "latlab/errors.hpp"
#include "latlab/nets.hpp"

namespace latlab {

using nlohmann::json;

json FvaeConfig::to_json() const {
    return json{{"alphabet", alphabet},   {"emb", emb},
                {"context", context},     {"latent", latent},
                {"enc_hidden", enc_hidden}, {"dec_hidden", dec_hidden},
                {"d_obs", d_obs},         {"prior", prior},
                {"prior_hidden", prior_hidden}};
}

FvaeConfig FvaeConfig::from_json(const json& j) {
    FvaeConfig c;
    c.alphabet = j.at("alphabet").get<int>();
    c.emb = j.at("emb").get<int>();
    c.context = j.at("context").get<int>();
    c.latent = j.at("latent").get<int>();
    c.enc_hidden = j.at("enc_hidden").get<int>();
    c.dec_hidden = j.at("dec_hidden").get<int>();
    c.d_obs = j.at("d_obs").get<int>();
    c.prior = j.at("prior").get<std::string>();
    c.prior_hidden = j.at("prior_hidden").get<int>();
    return c;
}

FvaeModel fvae_init(const FvaeConfig& cfg, std::uint64_t seed) {
    if (cfg.prior != "standard-normal" && cfg.prior != "autoregressive") {
        throw UsageError("fvae_init: unknown prior mode '" + cfg.prior + "'");
    }
    FvaeModel m;
    m.cfg = cfg;
    RngStream rng(seed);
    Param& emb = m.store.create("enc.emb", cfg.alphabet, cfg.emb);
    init_uniform(emb.value, 0.5, rng);
    init_gru(m.store, "enc.gru", cfg.emb, cfg.context, rng);
    init_linear(m.store, "enc.fc", cfg.d_obs + cfg.context, cfg.enc_hidden, rng);
    init_linear(m.store, "enc.mean", cfg.enc_hidden, cfg.latent, rng, /*zero=*/true);
    // Posterior stds start sharp (exp(-1.5) ~ 0.22) so the decoder's latent
    // pathway trains on a clean signal from the first step.
    init_linear(m.store, "enc.logstd", cfg.enc_hidden, cfg.latent, rng, /*zero=*/true);
    m.store.at("enc.logstd.b").value.fill(-1.5);
    init_linear(m.store, "dec.fc", cfg.latent + cfg.context, cfg.dec_hidden, rng);
    init_linear(m.store, "dec.out", cfg.dec_hidden, cfg.d_obs, rng);
    if (cfg.autoregressive()) {
        RngStream prior_rng = rng.substream(17);
        init_ar_prior(m.store, "prior.", cfg.prior_config(), prior_rng);
    }
    return m;
}

namespace {

// Alignment-derived constants reused every time an utterance is visited.
struct UttFeatures {
    std::vector<int> symbols;
    std::vector<double> dur_weights;
    Tensor pooled;      // N x d_obs, mean of frames per phoneme
    Tensor frame_sums;  // N x d_obs, sum of frames per phoneme
    double sq_sum = 0.0;
    int frames = 0;
    Tensor log_dur;  // N x 1
};

UttFeatures make_features(const FvaeConfig& cfg, const Utterance& utt) {
    if (utt.observation.cols() != cfg.d_obs) {
        throw ShapeError("fvae: utterance observation dim " +
                         std::to_string(utt.observation.cols()) + " does not match model d_obs " +
                         std::to_string(cfg.d_obs));
    }
    for (int s : utt.symbols) {
        if (s < 0 || s >= cfg.alphabet) {
            throw DataError("fvae: symbol id out of model alphabet range");
        }
    }
    const int n = utt.length();
    UttFeatures f;
    f.symbols = utt.symbols;
    f.pooled = Tensor(n, cfg.d_obs, 0.0);
    f.frame_sums = Tensor(n, cfg.d_obs, 0.0);
    f.dur_weights.resize(n);
    f.log_dur = Tensor(n, 1);
    int fr = 0;
    for (int i = 0; i < n; ++i) {
        const int d = utt.durations[i];
        f.dur_weights[i] = static_cast<double>(d);
        f.log_dur.at(i, 0) = std::log(static_cast<double>(d));
        for (int r = 0; r < d; ++r, ++fr) {
            for (int j = 0; j < cfg.d_obs; ++j) {
                const double x = utt.observation.at(fr, j);
                f.frame_sums.at(i, j) += x;
                f.sq_sum += x * x;
            }
        }
        for (int j = 0; j < cfg.d_obs; ++j) {
            f.pooled.at(i, j) = f.frame_sums.at(i, j) / static_cast<double>(d);
        }
    }
    f.frames = fr;
    return f;
}

struct ElboGraph {
    Var context;
    Var mean_q, log_std_q;
    Var z;
    Var recon;
    Var kl;
    Var elbo;
    Var prior_mean = -1, prior_log_std = -1;
};

Var build_context(Tape& t, const FvaeConfig& cfg, const std::vector<int>& symbols) {
    Var emb = t.select_rows(t.param("enc.emb"), symbols);
    return gru_sequence(t, "enc.gru", emb, cfg.context);
}

// Reconstruction log-likelihood under a unit-std Gaussian per frame, computed
// per phoneme: each phoneme's decoded mean is shared by its frames, so
// sum_f ||x_f - m_n(f)||^2 = sum_n (dur_n ||m_n||^2 - 2 <m_n, S_n> + Q).
ElboGraph build_elbo(Tape& t, const FvaeConfig& cfg, const UttFeatures& f, double beta,
                     const Tensor& eps) {
    ElboGraph g;
    Var c = build_context(t, cfg, f.symbols);
    g.context = c;
    Var post_in = t.concat_cols(t.constant(f.pooled), c);
    Var h = t.tanh_op(apply_linear(t, "enc.fc", post_in));
    g.mean_q = apply_linear(t, "enc.mean", h);
    g.log_std_q = apply_linear(t, "enc.logstd", h);
    g.z = t.add(g.mean_q, t.mul(t.exp_op(g.log_std_q), t.constant(eps)));

    Var dec_h = t.tanh_op(apply_linear(t, "dec.fc", t.concat_cols(g.z, c)));
    Var m = apply_linear(t, "dec.out", dec_h);
    Var quad = t.sum(t.mul(t.scale_rows(m, f.dur_weights), m));
    Var cross = t.sum(t.mul(m, t.constant(f.frame_sums)));
    Var sse = t.affine(t.add(quad, t.affine(cross, -2.0, 0.0)), 1.0, f.sq_sum);
    g.recon = t.affine(sse, -0.5, -0.5 * kLn2Pi * f.frames * cfg.d_obs);

    if (cfg.autoregressive()) {
        GaussVars p = ar_prior_forward(t, "prior.", cfg.prior_config(), c, g.z);
        g.prior_mean = p.mean;
        g.prior_log_std = p.log_std;
        g.kl = t.gaussian_kl_total(g.mean_q, g.log_std_q, p.mean, p.log_std);
    } else {
        const int n = t.value(g.mean_q).rows();
        Var zeros = t.constant(Tensor(n, cfg.latent, 0.0));
        g.kl = t.gaussian_kl_total(g.mean_q, g.log_std_q, zeros, zeros);
    }
    g.elbo = t.sub(g.recon, t.affine(g.kl, beta, 0.0));
    return g;
}

std::string text_prefix(const std::string& id) {
    const auto pos = id.find('_');
    return pos == std::string::npos ? id : id.substr(0, pos);
}

}  // namespace

int corpus_split_index(const Corpus& corpus, double val_frac) {
    const int n = static_cast<int>(corpus.utterances.size());
    int idx = n - std::max(1, static_cast<int>(std::round(val_frac * n)));
    idx = std::max(1, std::min(idx, n - 1));
    while (idx > 1 && text_prefix(corpus.utterances[idx].id) ==
                          text_prefix(corpus.utterances[idx - 1].id)) {
        --idx;
    }
    return idx;
}

ElboVars fvae_elbo_graph(Tape& t, FvaeModel& model, const Utterance& utt, double beta,
                         const Tensor& eps) {
    const UttFeatures f = make_features(model.cfg, utt);
    const ElboGraph g = build_elbo(t, model.cfg, f, beta, eps);
    return ElboVars{g.context, g.mean_q, g.log_std_q, g.z, g.recon, g.kl, g.elbo};
}

ElboResult fvae_elbo(FvaeModel& model, const Utterance& utt, double beta, RngStream& rng) {
    const UttFeatures f = make_features(model.cfg, utt);
    Tensor eps(utt.length(), model.cfg.latent);
    for (std::size_t i = 0; i < eps.size(); ++i) eps.data()[i] = rng.normal();
    Tape t(&model.store);
    const ElboGraph g = build_elbo(t, model.cfg, f, beta, eps);
    ElboResult out;
    out.recon_term = t.value(g.recon).at(0, 0);
    out.kl_total = t.value(g.kl).at(0, 0);
    out.total = t.value(g.elbo).at(0, 0);
    GaussianSeq q(t.value(g.mean_q), t.value(g.log_std_q));
    GaussianSeq p = model.cfg.autoregressive()
                        ? GaussianSeq(t.value(g.prior_mean), t.value(g.prior_log_std))
                        : GaussianSeq::standard(q.steps(), q.dims());
    out.kl_per_step = gaussian_kl(q, p).per_step;
    return out;
}

FvaeTrainResult fvae_train(FvaeModel& model, const Corpus& corpus, const FvaeTrainConfig& tc) {
    if (corpus.utterances.empty()) throw DataError("fvae_train: empty corpus");
    const int split = corpus_split_index(corpus, tc.val_frac);
    std::vector<UttFeatures> features;
    features.reserve(corpus.utterances.size());
    for (const Utterance& u : corpus.utterances) features.push_back(make_features(model.cfg, u));

    RngStream master(tc.seed);
    RngStream batch_rng = master.substream(1);
    RngStream noise_rng = master.substream(2);

    const int warmup = std::max(1, static_cast<int>(std::round(tc.warmup_frac * tc.steps)));
    AdamConfig adam;
    adam.lr = tc.lr;
    FvaeTrainResult out;
    out.val_begin = split;

    for (int step = 0; step < tc.steps; ++step) {
        const double beta_eff = tc.beta * std::min(1.0, static_cast<double>(step + 1) / warmup);
        double recon_acc = 0.0, kl_acc = 0.0, total_acc = 0.0;
        const double inv_batch = 1.0 / static_cast<double>(tc.batch);
        try {
            for (int b = 0; b < tc.batch; ++b) {
                const int idx =
                    static_cast<int>(batch_rng.next_below(static_cast<std::uint64_t>(split)));
                const UttFeatures& f = features[idx];
                const int n = static_cast<int>(f.symbols.size());
                Tensor eps(n, model.cfg.latent);
                for (std::size_t i = 0; i < eps.size(); ++i) eps.data()[i] = noise_rng.normal();
                Tape t(&model.store);
                const ElboGraph g = build_elbo(t, model.cfg, f, beta_eff, eps);
                const double inv_n = 1.0 / static_cast<double>(n);
                Var loss = t.affine(g.elbo, -inv_n, 0.0);
                if (model.cfg.autoregressive()) {
                    // The duration head trains concurrently with the prior.
                    Var logd = ar_duration_forward(t, "prior.", g.context);
                    Var dur_se = t.squared_error(logd, t.constant(f.log_dur));
                    loss = t.add(loss, t.affine(dur_se, tc.dur_loss_weight * inv_n, 0.0));
                }
                Var scaled = t.affine(loss, inv_batch, 0.0);
                const double lv = t.value(scaled).at(0, 0);
                if (!std::isfinite(lv)) throw DivergenceError(step, "loss is not finite");
                t.backward(scaled);
                recon_acc += t.value(g.recon).at(0, 0) * inv_n;
                kl_acc += t.value(g.kl).at(0, 0) * inv_n;
                total_acc += t.value(g.elbo).at(0, 0) * inv_n;
            }
        } catch (const NumericError& e) {
            throw DivergenceError(step, e.what());
        }
        model.store.adam_step(adam);
        if (step % tc.log_every == 0 || step + 1 == tc.steps) {
            out.trace.push_back({step, "recon", recon_acc * inv_batch});
            out.trace.push_back({step, "kl", kl_acc * inv_batch});
            out.trace.push_back({step, "total", total_acc * inv_batch});
        }
    }
    return out;
}

double fvae_recon_mse(FvaeModel& model, const Corpus& corpus, int begin, int end) {
    double sse = 0.0;
    std::int64_t count = 0;
    for (int u = begin; u < end; ++u) {
        const Utterance& utt = corpus.utterances[u];
        const GaussianSeq q = fvae_posterior(model, utt);
        const Tensor recon = fvae_decode(model, utt.symbols, q.mean, utt.durations);
        for (int i = 0; i < recon.rows(); ++i) {
            for (int j = 0; j < recon.cols(); ++j) {
                const double d = recon.at(i, j) - utt.observation.at(i, j);
                sse += d * d;
                ++count;
            }
        }
    }
    if (count == 0) throw DataError("fvae_recon_mse: empty range");
    return sse / static_cast<double>(count);
}

double corpus_mean_mse(const Corpus& corpus, int begin, int end) {
    if (begin >= end) throw DataError("corpus_mean_mse: empty range");
    const int d = corpus.config.d_obs;
    Tensor mean(1, d, 0.0);
    std::int64_t frames = 0;
    for (int u = begin; u < end; ++u) {
        const Tensor& x = corpus.utterances[u].observation;
        for (int i = 0; i < x.rows(); ++i) {
            for (int j = 0; j < d; ++j) mean.at(0, j) += x.at(i, j);
            ++frames;
        }
    }
    for (int j = 0; j < d; ++j) mean.at(0, j) /= static_cast<double>(frames);
    double sse = 0.0;
    for (int u = begin; u < end; ++u) {
        const Tensor& x = corpus.utterances[u].observation;
        for (int i = 0; i < x.rows(); ++i) {
            for (int j = 0; j < d; ++j) {
                const double diff = x.at(i, j) - mean.at(0, j);
                sse += diff * diff;
            }
        }
    }
    return sse / (static_cast<double>(frames) * d);
}

LatentDataset fvae_extract(FvaeModel& model, const Corpus& corpus, std::uint64_t seed) {
    LatentDataset ds;
    ds.dim = model.cfg.latent;
    ds.context_dim = model.cfg.context;
    RngStream master(seed);
    double std_acc = 0.0;
    std::int64_t std_count = 0;
    for (std::size_t u = 0; u < corpus.utterances.size(); ++u) {
        const Utterance& utt = corpus.utterances[u];
        const UttFeatures f = make_features(model.cfg, utt);
        Tape t(&model.store);
        Var c = build_context(t, model.cfg, f.symbols);
        Var h = t.tanh_op(apply_linear(t, "enc.fc", t.concat_cols(t.constant(f.pooled), c)));
        const Tensor mean = t.value(apply_linear(t, "enc.mean", h));
        const Tensor log_std = t.value(apply_linear(t, "enc.logstd", h));
        LatentRecord rec;
        rec.id = utt.id;
        rec.mean = mean;
        rec.std = Tensor(mean.rows(), mean.cols());
        rec.sample = Tensor(mean.rows(), mean.cols());
        RngStream rng = master.substream(u);
        for (int i = 0; i < mean.rows(); ++i) {
            for (int j = 0; j < mean.cols(); ++j) {
                const double s = std::exp(log_std.at(i, j));
                rec.std.at(i, j) = s;
                rec.sample.at(i, j) = mean.at(i, j) + s * rng.normal();
                std_acc += s;
                ++std_count;
            }
        }
        rec.durations = utt.durations;
        rec.context = t.value(c);
        ds.records.push_back(std::move(rec));
    }
    ds.mean_posterior_std = std_count ? std_acc / static_cast<double>(std_count) : 0.0;
    return ds;
}

PosthocResult fvae_finetune_prior(FvaeModel& model, const Corpus& corpus,
                                  const FinetuneConfig& fc) {
    if (!model.cfg.autoregressive()) {
        // Converted in place: the encoder/decoder stay frozen either way.
        model.cfg.prior = "autoregressive";
        RngStream prior_rng = RngStream(fc.seed).substream(17);
        init_ar_prior(model.store, "prior.", model.cfg.prior_config(), prior_rng);
    }
    LatentDataset ds = fvae_extract(model, corpus, RngStream(fc.seed).substream(23).seed());
    PosthocConfig pc;
    pc.steps = fc.steps;
    pc.batch = fc.batch;
    pc.lr = fc.lr;
    pc.val_frac = fc.val_frac;
    pc.dur_loss_weight = fc.dur_loss_weight;
    pc.teacher = fc.teacher;
    pc.seed = fc.seed;
    return train_posthoc(model.store, "prior.", model.cfg.prior_config(), ds, pc);
}

Tensor fvae_context(FvaeModel& model, const std::vector<int>& symbols) {
    for (int s : symbols) {
        if (s < 0 || s >= model.cfg.alphabet) {
            throw DataError("fvae_context: unknown symbol id " + std::to_string(s));
        }
    }
    Tape t(&model.store);
    return t.value(build_context(t, model.cfg, symbols));
}

GaussianSeq fvae_posterior(FvaeModel& model, const Utterance& utt) {
    const UttFeatures f = make_features(model.cfg, utt);
    Tape t(&model.store);
    Var c = build_context(t, model.cfg, f.symbols);
    Var h = t.tanh_op(apply_linear(t, "enc.fc", t.concat_cols(t.constant(f.pooled), c)));
    return GaussianSeq(t.value(apply_linear(t, "enc.mean", h)),
                       t.value(apply_linear(t, "enc.logstd", h)));
}

Tensor fvae_decode(FvaeModel& model, const std::vector<int>& symbols, const Tensor& latents,
                   const std::vector<int>& durations) {
    if (latents.rows() != static_cast<int>(symbols.size()) ||
        latents.cols() != model.cfg.latent ||
        durations.size() != symbols.size()) {
        throw ShapeError("fvae_decode: inconsistent inputs");
    }
    Tape t(&model.store);
    Var c = build_context(t, model.cfg, symbols);
    Var dec_h = t.tanh_op(apply_linear(t, "dec.fc", t.concat_cols(t.constant(latents), c)));
    const Tensor mean = t.value(apply_linear(t, "dec.out", dec_h));
    int frames = 0;
    for (int d : durations) frames += d;
    Tensor out(frames, model.cfg.d_obs);
    int f = 0;
    for (std::size_t i = 0; i < durations.size(); ++i) {
        for (int r = 0; r < durations[i]; ++r, ++f) {
            for (int j = 0; j < model.cfg.d_obs; ++j) {
                out.at(f, j) = mean.at(static_cast<int>(i), j);
            }
        }
    }
    return out;
}

CheckpointMeta fvae_meta(const FvaeModel& model, std::int64_t step) {
    CheckpointMeta meta;
    meta.kind = model.cfg.autoregressive() ? "dvae" : "fvae";
    meta.hyper = model.cfg.to_json();
    meta.step = step;
    meta.prior_mode = model.cfg.prior;
    return meta;
}

FvaeModel fvae_from_checkpoint(const LoadedCheckpoint& ck) {
    if (ck.meta.kind != "fvae" && ck.meta.kind != "dvae") {
        throw DataError("fvae_from_checkpoint: checkpoint kind '" + ck.meta.kind +
                        "' is not a VAE");
    }
    FvaeModel m;
    m.cfg = FvaeConfig::from_json(ck.meta.hyper);
    m.store = ck.store;
    return m;
}

}  // namespace latlab
