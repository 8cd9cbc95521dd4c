#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "latlab/gaussian.hpp"
#include "latlab/graph.hpp"
#include "latlab/latents.hpp"

namespace latlab {

// Conditional normalizing flow over per-phoneme channels [z ; log-duration]
// with a context-conditioned Gaussian base distribution. Each block applies
// actnorm, an LU-parameterized invertible linear mix over channels, and an
// affine coupling layer whose conditioner sees the identity half, the context
// row, and a kernel-3 temporal convolution over neighboring identity rows.
// Every layer exposes forward, inverse, and log|det J|; couplings are
// zero-initialized so a fresh stack is an actnorm/linear-only map.
struct FlowConfig {
    int channels = 9;  // latent dim (+1 duration channel when enabled)
    int context = 32;
    int blocks = 4;
    int coupling_hidden = 64;
    int conv_channels = 16;
    int base_hidden = 64;
    bool with_durations = true;

    int latent_dim() const { return with_durations ? channels - 1 : channels; }
    int split_a() const { return (channels + 1) / 2; }
    int split_b() const { return channels - split_a(); }

    nlohmann::json to_json() const;
    static FlowConfig from_json(const nlohmann::json& j);
};

// Creates "flow.*" (layers) and "base.*" (conditioner) parameters.
void flow_init(ParamStore& store, const FlowConfig& cfg, RngStream& rng);

struct FlowVar {
    Var out;
    Var logdet;  // 1x1, v -> z0 direction
};

// Per-layer graph builders; block prefixes are "flow.b<k>.".
FlowVar actnorm_forward(Tape& t, const std::string& block, Var x);
FlowVar invlinear_forward(Tape& t, const std::string& block, Var x);
FlowVar coupling_forward(Tape& t, const std::string& block, const FlowConfig& cfg, Var x,
                         const Tensor& context);

// Whole-stack forward with accumulated log-determinant.
FlowVar flow_forward_graph(Tape& t, const FlowConfig& cfg, Var v, const Tensor& context);

// Conditional base distribution parameters (graph nodes, N x channels each).
GaussVars base_forward_graph(Tape& t, const FlowConfig& cfg, Var context);

// log p0(forward(v) | c) + logdet, 1x1.
Var flow_log_likelihood_graph(Tape& t, const FlowConfig& cfg, Var v, const Tensor& context);

// Value-level paths (no gradients).
Tensor flow_forward_values(ParamStore& store, const FlowConfig& cfg, const Tensor& v,
                           const Tensor& context, double* logdet_out = nullptr);
Tensor flow_inverse(ParamStore& store, const FlowConfig& cfg, const Tensor& z0,
                    const Tensor& context);
GaussianSeq flow_base_values(ParamStore& store, const FlowConfig& cfg, const Tensor& context);
double flow_log_likelihood_value(ParamStore& store, const FlowConfig& cfg, const Tensor& v,
                                 const Tensor& context);

bool flow_actnorm_initialized(const ParamStore& store);

// Data-dependent actnorm init: per channel over the whole batch, each actnorm
// layer is set to zero mean / unit std on its own input, block by block.
void flow_actnorm_init(ParamStore& store, const FlowConfig& cfg, std::vector<Tensor> inputs,
                       const std::vector<const Tensor*>& contexts);

struct FlowTrainConfig {
    int steps = 2000;
    int batch = 8;
    double lr = 2e-3;
    double val_frac = 0.1;
    bool resample_latents = false;  // default trains on the stored samples
    std::uint64_t seed = 1;
    int log_every = 10;
};

struct FlowTrainResult {
    std::vector<TraceRow> trace;  // term "nll", nats per dimension
    double initial_val_nll_per_dim = 0.0;
    double final_val_nll_per_dim = 0.0;
};

// Exact maximum-likelihood training on the latent dataset; durations enter as
// a log(d + u) channel with fresh uniform dequantization noise per visit.
// Actnorm parameters are data-dependent initialized on the first batch.
FlowTrainResult flow_train(ParamStore& store, const FlowConfig& cfg, const LatentDataset& dataset,
                           const FlowTrainConfig& tc);

// Mean NLL per step and channel over records (fresh dequantization noise from
// rng when duration modeling is on).
double flow_eval_nll_per_dim(ParamStore& store, const FlowConfig& cfg,
                             const std::vector<LatentRecord>& records, RngStream& rng);

struct FlowSample {
    Tensor latents;  // N x latent_dim
    std::vector<int> durations;  // empty when with_durations is false
};

// z0 ~ N(mu(c), (temperature*sigma(c))^2), v = inverse(z0, c); the duration
// channel is un-dequantized by floor of exp and clamped to >= 1.
FlowSample flow_sample(ParamStore& store, const FlowConfig& cfg, const Tensor& context,
                       double temperature, RngStream& rng);

// Assembles the flow input channels for a record (dequantization noise drawn
// from rng when durations are modeled).
Tensor flow_input_from_record(const FlowConfig& cfg, const LatentRecord& record, bool resample,
                              RngStream& rng);

}  // namespace latlab
