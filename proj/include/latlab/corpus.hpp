#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latlab/metrics.hpp"
#include "latlab/rng.hpp"
#include "latlab/tensor.hpp"

namespace latlab {

struct CorpusConfig {
    int n_utterances = 200;
    int min_len = 8;  // symbols per utterance
    int max_len = 20;
    int alphabet_size = 40;
    int d_true = 16;  // true latent dimension
    int d_obs = 32;   // observation dimension
    int n_cepstra = 13;
    int text_repeats = 1;  // realizations per distinct symbol sequence
    std::uint64_t seed = 1;
};

// The fixed generative process behind a corpus. Phoneme latents follow
//   z_n = A z_{n-1} + emb(y_n) + sigma_true * eps_n,   z_0 = 0,
// with A = diag(ar_coeff), |a_i| < 1. Observations are a fixed random MLP of
// the latent plus noise; frame tracks are fixed linear readouts of the
// observation plus small jitter; durations are per-symbol shifted geometric
// clipped to [1, 40].
struct TrueProcess {
    CorpusConfig config;
    Tensor emb;                      // V x D_true
    std::vector<double> ar_coeff;    // D_true
    double innovation_std = 0.3;
    Tensor dec_w1, dec_b1, dec_w2, dec_b2;  // latent -> observation mean
    double obs_noise_std = 0.06;
    Tensor f0_readout;      // 1 x D_obs
    double f0_base = 120.0;
    double f0_scale = 35.0;
    Tensor energy_readout;  // 1 x D_obs
    double energy_base = 5.0;
    double energy_scale = 1.2;
    Tensor mcep_readout;    // K x D_obs
    double track_jitter_f0 = 1.5;
    double track_jitter_energy = 0.05;
    double track_jitter_mcep = 0.01;
    std::vector<std::uint8_t> unvoiced;  // per symbol
    std::vector<double> dur_p;           // per-symbol geometric parameter
    int dur_max = 40;

    std::uint64_t checksum() const;
    // Mean observation for one latent vector (1 x D_obs).
    Tensor decode_mean(const Tensor& latent_row) const;
};

struct Utterance {
    std::string id;
    std::vector<int> symbols;
    std::vector<int> durations;
    Tensor oracle_latents;  // N x D_true
    Tensor observation;     // frames x D_obs
    FrameTrack track;

    int frames() const { return observation.rows(); }
    int length() const { return static_cast<int>(symbols.size()); }
    void validate(const CorpusConfig& cfg) const;
};

struct Corpus {
    CorpusConfig config;
    std::uint64_t process_checksum = 0;
    std::vector<Utterance> utterances;
};

struct GeneratedCorpus {
    Corpus corpus;
    TrueProcess process;
};

GeneratedCorpus generate_corpus(const CorpusConfig& config);

// Generates further utterances from an existing process (e.g. held-out texts).
Corpus generate_with_process(const TrueProcess& process, int n_utterances, std::uint64_t seed);

// Exact average conditional NLL per step and dimension of the oracle latents;
// no checksum gate (usable with perturbed processes).
double conditional_nll_per_dim(const Corpus& corpus, const TrueProcess& process);
// Same, but requires process.checksum() to match the corpus header.
double oracle_nll(const Corpus& corpus, const TrueProcess& process);

void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);
void save_process(const TrueProcess& process, const std::string& path);
TrueProcess load_process(const std::string& path);

// Voicing flags per frame derived from the symbol inventory.
std::vector<std::uint8_t> frame_voicing(const TrueProcess& process, const std::vector<int>& symbols,
                                        const std::vector<int>& durations);

// Deterministic track readout of an observation (no jitter); used for both
// oracle and synthesized observations.
FrameTrack tracks_from_observation(const TrueProcess& process, const Tensor& observation,
                                   const std::vector<std::uint8_t>& voiced);

}  // namespace latlab
