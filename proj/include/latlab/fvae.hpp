#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "latlab/ar_prior.hpp"
#include "latlab/checkpoint.hpp"
#include "latlab/corpus.hpp"
#include "latlab/gaussian.hpp"
#include "latlab/graph.hpp"
#include "latlab/latents.hpp"

namespace latlab {

// Per-phoneme VAE over synthetic corpora. The posterior encoder pools
// observation frames per phoneme through the exact alignment, the decoder
// broadcasts each phoneme's latent back over its frames, and the prior is
// either N(0, I) or the autoregressive net from ar_prior.
struct FvaeConfig {
    int alphabet = 40;
    int emb = 16;
    int context = 32;
    int latent = 16;
    int enc_hidden = 64;
    int dec_hidden = 64;
    int d_obs = 32;
    std::string prior = "standard-normal";  // or "autoregressive"
    int prior_hidden = 64;

    bool autoregressive() const { return prior == "autoregressive"; }
    ArPriorConfig prior_config() const {
        return ArPriorConfig{context, latent, prior_hidden, 32};
    }
    nlohmann::json to_json() const;
    static FvaeConfig from_json(const nlohmann::json& j);
};

struct FvaeModel {
    FvaeConfig cfg;
    ParamStore store;
};

FvaeModel fvae_init(const FvaeConfig& cfg, std::uint64_t seed);

struct ElboResult {
    double recon_term = 0.0;
    std::vector<double> kl_per_step;
    double kl_total = 0.0;
    double total = 0.0;  // recon_term - beta * kl_total, exactly
};

// One reparameterized posterior sample, unit observation std.
ElboResult fvae_elbo(FvaeModel& model, const Utterance& utt, double beta, RngStream& rng);

// Graph handles for the ELBO of one utterance with frozen reparameterization
// noise; the gradient-check suites differentiate through this.
struct ElboVars {
    Var context;
    Var mean_q, log_std_q;
    Var z;
    Var recon;
    Var kl;
    Var elbo;
};
ElboVars fvae_elbo_graph(Tape& t, FvaeModel& model, const Utterance& utt, double beta,
                         const Tensor& eps);

struct FvaeTrainConfig {
    int steps = 2000;
    int batch = 8;
    double lr = 2e-3;
    double beta = 1.0;
    double warmup_frac = 0.1;  // linear KL warm-up over the first fraction of steps
    double val_frac = 0.1;
    double dur_loss_weight = 1.0;  // autoregressive mode only
    std::uint64_t seed = 1;
    int log_every = 10;
};

struct FvaeTrainResult {
    std::vector<TraceRow> trace;
    int val_begin = 0;  // first validation utterance index (text-boundary split)
};

FvaeTrainResult fvae_train(FvaeModel& model, const Corpus& corpus, const FvaeTrainConfig& tc);

// Mean squared error per frame and observation dimension of the posterior-mean
// reconstruction over utterances [begin, end).
double fvae_recon_mse(FvaeModel& model, const Corpus& corpus, int begin, int end);

// Baseline: MSE of predicting the corpus-mean observation frame everywhere.
double corpus_mean_mse(const Corpus& corpus, int begin, int end);

LatentDataset fvae_extract(FvaeModel& model, const Corpus& corpus, std::uint64_t seed);

struct FinetuneConfig {
    int steps = 1000;
    int batch = 8;
    double lr = 2e-3;
    double val_frac = 0.1;
    double dur_loss_weight = 1.0;
    TeacherMode teacher = TeacherMode::kResample;
    std::uint64_t seed = 1;
};

// Freezes everything except the prior net and minimizes the same KL as DVAE
// training against the frozen posterior. Converts a standard-normal model to
// autoregressive mode first when needed.
PosthocResult fvae_finetune_prior(FvaeModel& model, const Corpus& corpus,
                                  const FinetuneConfig& fc);

// Text-encoder context for a symbol sequence (N x context).
Tensor fvae_context(FvaeModel& model, const std::vector<int>& symbols);

// Posterior parameters for one utterance.
GaussianSeq fvae_posterior(FvaeModel& model, const Utterance& utt);

// Decoder mean broadcast over frames (frames x d_obs).
Tensor fvae_decode(FvaeModel& model, const std::vector<int>& symbols, const Tensor& latents,
                   const std::vector<int>& durations);

CheckpointMeta fvae_meta(const FvaeModel& model, std::int64_t step);
FvaeModel fvae_from_checkpoint(const LoadedCheckpoint& ck);

// First index of the validation span: a split at val_frac from the end,
// widened to the nearest text-group boundary so repeated readings of one text
// never straddle the split.
int corpus_split_index(const Corpus& corpus, double val_frac);

}  // namespace latlab
