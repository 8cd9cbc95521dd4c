#pragma once

#include <functional>
#include <string>
#include <vector>

#include "latlab/corpus.hpp"
#include "latlab/fvae.hpp"
#include "latlab/metrics.hpp"

namespace latlab {

// One synthesized reading of a text: sampled latents plus durations, decoded
// through the frozen FVAE decoder and rendered into frame tracks.
struct SampleRecord {
    std::string text_id;
    int resample = 0;
    std::vector<int> symbols;
    std::vector<int> durations;
    Tensor latents;
    FrameTrack track;
};

struct SampleSet {
    std::string model;  // "fvae", "dvae", "flow", ...
    double temperature = 1.0;
    std::uint64_t seed = 0;
    std::vector<SampleRecord> records;
};

void save_samples(const SampleSet& s, const std::string& path);
SampleSet load_samples(const std::string& path);

// Draws latents and durations for one context at one temperature.
using SamplerFn = std::function<std::pair<Tensor, std::vector<int>>(
    const Tensor& context, double temperature, RngStream& rng)>;

// Samples every text `resamples` times, decodes through the FVAE decoder, and
// renders tracks with the process readouts. RNG substreams are derived per
// (text, resample), so worker count does not affect the output.
SampleSet run_sampling(FvaeModel& fvae, const TrueProcess& process,
                       const std::vector<const Utterance*>& texts, int resamples,
                       double temperature, const SamplerFn& sampler, std::uint64_t seed,
                       int workers, const std::string& model_name);

struct ReconEval {
    double mcd = 0.0;
    double ffe = 0.0;
    double recon_mse = 0.0;
    double mean_posterior_std = 0.0;
    int utterances = 0;
};

// Posterior-mean reconstruction with ground-truth durations against the
// reference tracks.
ReconEval eval_reconstruction(FvaeModel& model, const Corpus& corpus, const TrueProcess& process,
                              int workers);

// Expressiveness over resample 0 of each text (one reading per sentence).
ProsodyStd sampleset_expressiveness(const SampleSet& s);
// Reference expressiveness from corpus tracks.
ProsodyStd corpus_expressiveness(const Corpus& corpus);
// Per-position spread across the resamples of each text.
ProsodyStd sampleset_diversity(const SampleSet& s);

}  // namespace latlab
