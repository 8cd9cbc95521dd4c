#include "latlab/metrics.hpp"

#include <cmath>
#include <map>

#include "latlab/errors.hpp"

namespace latlab {

void FrameTrack::validate(const std::string& where) const {
    const std::size_t n = energy.size();
    if (f0.size() != n || voiced.size() != n ||
        static_cast<std::size_t>(mcep.rows()) != n) {
        throw ShapeError(where + ": inconsistent frame counts in FrameTrack");
    }
}

double population_stddev(const std::vector<double>& values) {
    if (values.empty()) return 0.0;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double acc = 0.0;
    for (double v : values) acc += (v - mean) * (v - mean);
    return std::sqrt(acc / static_cast<double>(values.size()));
}

double ffe_percent(const FrameTrack& ref, const FrameTrack& syn) {
    ref.validate("ffe");
    syn.validate("ffe");
    if (ref.frames() != syn.frames()) {
        throw ShapeError("ffe: frame count mismatch " + std::to_string(ref.frames()) + " vs " +
                         std::to_string(syn.frames()));
    }
    const int n = ref.frames();
    int errors = 0;
    for (int i = 0; i < n; ++i) {
        const bool rv = ref.voiced[i] != 0, sv = syn.voiced[i] != 0;
        if (rv != sv) {
            ++errors;
        } else if (rv && sv) {
            if (std::fabs(syn.f0[i] - ref.f0[i]) > 0.2 * ref.f0[i]) ++errors;
        }
    }
    return 100.0 * static_cast<double>(errors) / static_cast<double>(n);
}

double mcd_db(const FrameTrack& ref, const FrameTrack& syn) {
    ref.validate("mcd");
    syn.validate("mcd");
    if (ref.frames() != syn.frames()) {
        throw ShapeError("mcd: frame count mismatch " + std::to_string(ref.frames()) + " vs " +
                         std::to_string(syn.frames()));
    }
    if (ref.mcep.cols() != syn.mcep.cols()) {
        throw ShapeError("mcd: cepstral order mismatch " + std::to_string(ref.mcep.cols()) +
                         " vs " + std::to_string(syn.mcep.cols()));
    }
    const int n = ref.frames();
    const int k = ref.mcep.cols();
    const double scale = 10.0 / std::log(10.0);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        double ss = 0.0;
        for (int j = 1; j < k; ++j) {  // coefficient 0 excluded
            const double d = ref.mcep.at(i, j) - syn.mcep.at(i, j);
            ss += d * d;
        }
        acc += scale * std::sqrt(2.0 * ss);
    }
    return acc / static_cast<double>(n);
}

std::vector<PhonemeFeatures> features_from_utterance(const FrameTrack& track,
                                                     const std::vector<int>& durations) {
    track.validate("features_from_utterance");
    int total = 0;
    for (int d : durations) {
        if (d < 1) throw DataError("features_from_utterance: duration < 1");
        total += d;
    }
    if (total != track.frames()) {
        throw ShapeError("features_from_utterance: durations sum to " + std::to_string(total) +
                         " but track has " + std::to_string(track.frames()) + " frames");
    }
    std::vector<PhonemeFeatures> out;
    out.reserve(durations.size());
    int f = 0;
    for (int d : durations) {
        PhonemeFeatures feat;
        feat.duration = d;
        double e = 0.0, f0_sum = 0.0;
        int voiced_frames = 0;
        for (int i = f; i < f + d; ++i) {
            e += track.energy[i];
            if (track.voiced[i]) {
                f0_sum += track.f0[i];
                ++voiced_frames;
            }
        }
        feat.energy = e / static_cast<double>(d);
        if (voiced_frames > 0) feat.f0 = f0_sum / static_cast<double>(voiced_frames);
        out.push_back(feat);
        f += d;
    }
    return out;
}

ProsodyStd expressiveness_stddev(const std::vector<SymbolFeatures>& utterances) {
    std::map<int, std::vector<PhonemeFeatures>> groups;
    for (const auto& utt : utterances) {
        if (utt.symbols.size() != utt.features.size()) {
            throw ShapeError("expressiveness_stddev: symbol/feature count mismatch");
        }
        for (std::size_t i = 0; i < utt.symbols.size(); ++i) {
            groups[utt.symbols[i]].push_back(utt.features[i]);
        }
    }
    std::vector<double> e_stds, f0_stds, dur_stds;
    for (const auto& [sym, feats] : groups) {
        if (feats.size() < 2) continue;
        std::vector<double> e, f0, dur;
        for (const auto& f : feats) {
            e.push_back(f.energy);
            dur.push_back(static_cast<double>(f.duration));
            if (f.f0) f0.push_back(*f.f0);
        }
        e_stds.push_back(population_stddev(e));
        dur_stds.push_back(population_stddev(dur));
        if (f0.size() >= 2) f0_stds.push_back(population_stddev(f0));
    }
    if (e_stds.empty()) {
        throw DataError("expressiveness_stddev: no symbol type with >= 2 occurrences");
    }
    auto avg = [](const std::vector<double>& v) {
        if (v.empty()) return 0.0;
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    return ProsodyStd{avg(e_stds), avg(f0_stds), avg(dur_stds)};
}

ProsodyStd diversity_stddev(
    const std::vector<std::vector<std::vector<PhonemeFeatures>>>& samples) {
    if (samples.empty()) throw DataError("diversity_stddev: no texts");
    std::vector<double> text_e, text_f0, text_dur;
    for (const auto& versions : samples) {
        if (versions.size() < 2) throw DataError("diversity_stddev: need >= 2 resamples per text");
        const std::size_t n = versions[0].size();
        for (const auto& v : versions) {
            if (v.size() != n) {
                throw ShapeError("diversity_stddev: inconsistent phoneme counts across resamples");
            }
        }
        std::vector<double> pos_e, pos_f0, pos_dur;
        for (std::size_t pos = 0; pos < n; ++pos) {
            std::vector<double> e, f0, dur;
            for (const auto& v : versions) {
                e.push_back(v[pos].energy);
                dur.push_back(static_cast<double>(v[pos].duration));
                if (v[pos].f0) f0.push_back(*v[pos].f0);
            }
            pos_e.push_back(population_stddev(e));
            pos_dur.push_back(population_stddev(dur));
            if (f0.size() >= 2) pos_f0.push_back(population_stddev(f0));
        }
        auto avg = [](const std::vector<double>& v) {
            if (v.empty()) return 0.0;
            double s = 0.0;
            for (double x : v) s += x;
            return s / static_cast<double>(v.size());
        };
        text_e.push_back(avg(pos_e));
        text_f0.push_back(avg(pos_f0));
        text_dur.push_back(avg(pos_dur));
    }
    auto avg = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    return ProsodyStd{avg(text_e), avg(text_f0), avg(text_dur)};
}

nlohmann::json prosody_std_to_json(const ProsodyStd& p) {
    return nlohmann::json{{"energy", p.energy}, {"f0", p.f0}, {"dur", p.dur}};
}

ProsodyStd prosody_std_from_json(const nlohmann::json& j) {
    return ProsodyStd{j.at("energy").get<double>(), j.at("f0").get<double>(),
                      j.at("dur").get<double>()};
}

}  // namespace latlab
