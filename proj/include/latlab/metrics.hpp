#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "latlab/tensor.hpp"

namespace latlab {

// Frame-level feature tracks. f0 values are meaningful only where the
// corresponding voiced flag is set.
struct FrameTrack {
    std::vector<double> f0;
    std::vector<std::uint8_t> voiced;
    std::vector<double> energy;
    Tensor mcep;  // frames x K

    int frames() const { return static_cast<int>(energy.size()); }
    void validate(const std::string& where) const;
};

// Per-phoneme prosody features: energy and F0 averaged over the phoneme's
// frames (F0 over voiced frames only, absent when none), duration in frames.
struct PhonemeFeatures {
    double energy = 0.0;
    std::optional<double> f0;
    int duration = 0;
};

struct ProsodyStd {
    double energy = 0.0;
    double f0 = 0.0;
    double dur = 0.0;
};

// Percentage of frames with a voicing-decision mismatch, or with both frames
// voiced and |f0_syn - f0_ref| > 0.2 * f0_ref.
double ffe_percent(const FrameTrack& ref, const FrameTrack& syn);

// Frame-wise (10/ln 10) * sqrt(2 * sum_{i=1..K-1} (c_i - c'_i)^2), coefficient
// 0 excluded, averaged over frames.
double mcd_db(const FrameTrack& ref, const FrameTrack& syn);

std::vector<PhonemeFeatures> features_from_utterance(const FrameTrack& track,
                                                     const std::vector<int>& durations);

// Groups phonemes across utterances by symbol type; population stddev of each
// feature per type with >= 2 occurrences, averaged unweighted over types.
struct SymbolFeatures {
    std::vector<int> symbols;
    std::vector<PhonemeFeatures> features;
};
ProsodyStd expressiveness_stddev(const std::vector<SymbolFeatures>& utterances);

// texts x resamples x phoneme position. Per text and position: population
// stddev across resamples; averaged over positions, then texts.
ProsodyStd diversity_stddev(
    const std::vector<std::vector<std::vector<PhonemeFeatures>>>& samples);

// Aggregated metric values for one evaluated system. Stddevs use the
// population convention throughout.
struct MetricsReport {
    std::string model;
    double temperature = 1.0;
    double mcd_db = 0.0;
    double ffe_pct = 0.0;
    ProsodyStd expressiveness;
    ProsodyStd diversity;
    int utterance_count = 0;
    double mean_posterior_std = 0.0;
};

nlohmann::json prosody_std_to_json(const ProsodyStd& p);
ProsodyStd prosody_std_from_json(const nlohmann::json& j);

double population_stddev(const std::vector<double>& values);

}  // namespace latlab
