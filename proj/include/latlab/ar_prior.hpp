#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latlab/gaussian.hpp"
#include "latlab/graph.hpp"
#include "latlab/latents.hpp"
#include "latlab/nets.hpp"

namespace latlab {

// Autoregressive Gaussian prior p(z_n | z_<n, c): an input projection over
// [c_n ; z_{n-1}], a GRU cell, and linear mean / log-std heads. Step 1 uses a
// learned initial latent. Heads are zero-initialized, so an untrained net
// emits exactly N(0, I). A small MLP duration head (c_n -> log duration)
// rides along for end-to-end sampling.
struct ArPriorConfig {
    int context = 32;
    int latent = 16;
    int hidden = 64;
    int dur_hidden = 32;
};

// Teacher-forcing input selection for KL training.
enum class TeacherMode { kResample, kStoredSample, kMean };
TeacherMode teacher_mode_from_string(const std::string& s);

void init_ar_prior(ParamStore& store, const std::string& prefix, const ArPriorConfig& cfg,
                   RngStream& rng);

// Step n of the output depends only on c_{1..n} and teacher rows 1..n-1.
GaussVars ar_prior_forward(Tape& t, const std::string& prefix, const ArPriorConfig& cfg,
                           Var context, Var teacher);

// Value-level convenience wrapper.
GaussianSeq ar_prior_forward_values(ParamStore& store, const std::string& prefix,
                                    const ArPriorConfig& cfg, const Tensor& context,
                                    const Tensor& teacher);

// Predicted log-durations from context, N x 1.
Var ar_duration_forward(Tape& t, const std::string& prefix, Var context);

struct PosthocConfig {
    int steps = 2000;
    int batch = 8;
    double lr = 2e-3;
    double val_frac = 0.1;
    double dur_loss_weight = 1.0;
    TeacherMode teacher = TeacherMode::kResample;
    std::uint64_t seed = 1;
    int log_every = 10;
};

struct PosthocResult {
    std::vector<TraceRow> trace;
    double final_val_kl_per_step = 0.0;
    double initial_val_kl_per_step = 0.0;
};

// Minimizes mean closed-form KL(q || p) per step against the stored posterior,
// teacher-forced per `teacher`; also regresses log durations. Updates only
// parameters under `prefix`.
PosthocResult train_posthoc(ParamStore& store, const std::string& prefix,
                            const ArPriorConfig& cfg, const LatentDataset& dataset,
                            const PosthocConfig& tc);

// Mean per-step closed-form KL(q || p) over the given records.
double ar_eval_kl_per_step(ParamStore& store, const std::string& prefix, const ArPriorConfig& cfg,
                           const std::vector<LatentRecord>& records, TeacherMode teacher,
                           RngStream& rng);

// Average NLL per step and dimension of `latents` fields under the prior,
// teacher-forced with the same latents.
double ar_eval_nll_per_dim(ParamStore& store, const std::string& prefix, const ArPriorConfig& cfg,
                           const std::vector<LatentRecord>& records);

struct ArSample {
    Tensor latents;  // N x D
    std::vector<int> durations;
};

// Ancestral rollout: z_n ~ N(mu_p, (temperature * sigma_p)^2), each sample fed
// back as the next teacher input. temperature 0 yields the mean rollout.
ArSample ar_sample(ParamStore& store, const std::string& prefix, const ArPriorConfig& cfg,
                   const Tensor& context, double temperature, RngStream& rng);

}  // namespace latlab
