#include "latlab/pipeline.hpp"

#include <map>
#include <sstream>

#include <json.hpp>

#include "latlab/errors.hpp"
#include "latlab/io_util.hpp"
#include "latlab/parallel.hpp"

namespace latlab {

using nlohmann::json;

void save_samples(const SampleSet& s, const std::string& path) {
    std::ostringstream out;
    json header;
    header["format_version"] = 1;
    header["kind"] = "latlab-samples";
    header["model"] = s.model;
    header["temperature"] = s.temperature;
    header["seed"] = s.seed;
    header["n_records"] = s.records.size();
    out << header.dump() << "\n";
    for (const SampleRecord& r : s.records) {
        json j;
        j["text_id"] = r.text_id;
        j["resample"] = r.resample;
        j["symbols"] = r.symbols;
        j["durations"] = r.durations;
        j["latents"] = tensor_to_json(r.latents);
        j["f0"] = doubles_to_b64(r.track.f0.data(), r.track.f0.size());
        j["voiced"] = r.track.voiced;
        j["energy"] = doubles_to_b64(r.track.energy.data(), r.track.energy.size());
        j["mcep"] = tensor_to_json(r.track.mcep);
        out << j.dump() << "\n";
    }
    write_file(path, out.str());
}

SampleSet load_samples(const std::string& path) {
    const std::string text = read_file(path);
    SampleSet s;
    std::size_t pos = 0, line_no = 0, expected = 0;
    bool have_header = false;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        const std::string line = text.substr(pos, end - pos);
        ++line_no;
        if (!line.empty()) {
            json j;
            try {
                j = json::parse(line);
            } catch (const json::parse_error& e) {
                throw ParseError("samples parse error: " + std::string(e.what()), line_no,
                                 pos + (e.byte > 0 ? e.byte - 1 : 0));
            }
            try {
                if (!have_header) {
                    if (j.at("kind").get<std::string>() != "latlab-samples") {
                        throw DataError("not a sample-set file: " + path);
                    }
                    if (j.at("format_version").get<int>() != 1) {
                        throw DataError("sample-set format version mismatch");
                    }
                    s.model = j.at("model").get<std::string>();
                    s.temperature = j.at("temperature").get<double>();
                    s.seed = j.at("seed").get<std::uint64_t>();
                    expected = j.at("n_records").get<std::size_t>();
                    have_header = true;
                } else {
                    SampleRecord r;
                    r.text_id = j.at("text_id").get<std::string>();
                    r.resample = j.at("resample").get<int>();
                    r.symbols = j.at("symbols").get<std::vector<int>>();
                    r.durations = j.at("durations").get<std::vector<int>>();
                    r.latents = tensor_from_json(j.at("latents"), "samples.latents");
                    r.track.f0 = doubles_from_b64(j.at("f0").get<std::string>());
                    r.track.voiced = j.at("voiced").get<std::vector<std::uint8_t>>();
                    r.track.energy = doubles_from_b64(j.at("energy").get<std::string>());
                    r.track.mcep = tensor_from_json(j.at("mcep"), "samples.mcep");
                    s.records.push_back(std::move(r));
                }
            } catch (const json::exception& e) {
                throw ParseError("samples record error: " + std::string(e.what()), line_no, pos);
            }
        }
        pos = end + 1;
    }
    if (!have_header) throw DataError("sample-set file has no header: " + path);
    if (s.records.size() != expected) {
        throw ParseError("sample set truncated: expected " + std::to_string(expected) +
                             " records, found " + std::to_string(s.records.size()),
                         line_no, text.size());
    }
    return s;
}

SampleSet run_sampling(FvaeModel& fvae, const TrueProcess& process,
                       const std::vector<const Utterance*>& texts, int resamples,
                       double temperature, const SamplerFn& sampler, std::uint64_t seed,
                       int workers, const std::string& model_name) {
    if (resamples < 1) throw UsageError("run_sampling: resamples must be >= 1");
    SampleSet out;
    out.model = model_name;
    out.temperature = temperature;
    out.seed = seed;
    out.records.resize(texts.size() * static_cast<std::size_t>(resamples));

    // Contexts are deterministic per text; precompute serially.
    std::vector<Tensor> contexts;
    contexts.reserve(texts.size());
    for (const Utterance* u : texts) contexts.push_back(fvae_context(fvae, u->symbols));

    RngStream master(seed);
    parallel_for(out.records.size(), workers, [&](std::size_t idx) {
        const std::size_t ti = idx / static_cast<std::size_t>(resamples);
        const int r = static_cast<int>(idx % static_cast<std::size_t>(resamples));
        const Utterance* u = texts[ti];
        RngStream rng = master.substream(ti).substream(static_cast<std::uint64_t>(r));
        auto [latents, durations] = sampler(contexts[ti], temperature, rng);
        SampleRecord rec;
        rec.text_id = u->id;
        rec.resample = r;
        rec.symbols = u->symbols;
        rec.durations = durations;
        rec.latents = latents;
        const Tensor obs = fvae_decode(fvae, u->symbols, latents, durations);
        rec.track =
            tracks_from_observation(process, obs, frame_voicing(process, u->symbols, durations));
        out.records[idx] = std::move(rec);
    });
    return out;
}

ReconEval eval_reconstruction(FvaeModel& model, const Corpus& corpus, const TrueProcess& process,
                              int workers) {
    if (corpus.utterances.empty()) throw DataError("eval_reconstruction: empty corpus");
    const std::size_t n = corpus.utterances.size();
    std::vector<double> mcds(n), ffes(n), mses(n), stds(n);
    std::vector<std::int64_t> mse_counts(n), std_counts(n);
    parallel_for(n, workers, [&](std::size_t i) {
        const Utterance& utt = corpus.utterances[i];
        const GaussianSeq q = fvae_posterior(model, utt);
        const Tensor recon = fvae_decode(model, utt.symbols, q.mean, utt.durations);
        const FrameTrack syn = tracks_from_observation(
            process, recon, frame_voicing(process, utt.symbols, utt.durations));
        mcds[i] = mcd_db(utt.track, syn);
        ffes[i] = ffe_percent(utt.track, syn);
        double sse = 0.0;
        for (int r = 0; r < recon.rows(); ++r) {
            for (int c = 0; c < recon.cols(); ++c) {
                const double d = recon.at(r, c) - utt.observation.at(r, c);
                sse += d * d;
            }
        }
        mses[i] = sse;
        mse_counts[i] = static_cast<std::int64_t>(recon.rows()) * recon.cols();
        double st = 0.0;
        for (int r = 0; r < q.log_std.rows(); ++r)
            for (int c = 0; c < q.log_std.cols(); ++c) st += std::exp(q.log_std.at(r, c));
        stds[i] = st;
        std_counts[i] = static_cast<std::int64_t>(q.log_std.rows()) * q.log_std.cols();
    });
    ReconEval out;
    out.utterances = static_cast<int>(n);
    double mse_sum = 0.0, std_sum = 0.0;
    std::int64_t mse_count = 0, std_count = 0;
    for (std::size_t i = 0; i < n; ++i) {
        out.mcd += mcds[i];
        out.ffe += ffes[i];
        mse_sum += mses[i];
        mse_count += mse_counts[i];
        std_sum += stds[i];
        std_count += std_counts[i];
    }
    out.mcd /= static_cast<double>(n);
    out.ffe /= static_cast<double>(n);
    out.recon_mse = mse_sum / static_cast<double>(mse_count);
    out.mean_posterior_std = std_sum / static_cast<double>(std_count);
    return out;
}

ProsodyStd sampleset_expressiveness(const SampleSet& s) {
    std::vector<SymbolFeatures> utts;
    for (const SampleRecord& r : s.records) {
        if (r.resample != 0) continue;
        SymbolFeatures sf;
        sf.symbols = r.symbols;
        sf.features = features_from_utterance(r.track, r.durations);
        utts.push_back(std::move(sf));
    }
    return expressiveness_stddev(utts);
}

ProsodyStd corpus_expressiveness(const Corpus& corpus) {
    std::vector<SymbolFeatures> utts;
    for (const Utterance& u : corpus.utterances) {
        SymbolFeatures sf;
        sf.symbols = u.symbols;
        sf.features = features_from_utterance(u.track, u.durations);
        utts.push_back(std::move(sf));
    }
    return expressiveness_stddev(utts);
}

ProsodyStd sampleset_diversity(const SampleSet& s) {
    std::map<std::string, std::vector<const SampleRecord*>> by_text;
    for (const SampleRecord& r : s.records) by_text[r.text_id].push_back(&r);
    std::vector<std::vector<std::vector<PhonemeFeatures>>> samples;
    for (auto& [id, records] : by_text) {
        std::sort(records.begin(), records.end(),
                  [](const SampleRecord* a, const SampleRecord* b) {
                      return a->resample < b->resample;
                  });
        std::vector<std::vector<PhonemeFeatures>> versions;
        for (const SampleRecord* r : records) {
            versions.push_back(features_from_utterance(r->track, r->durations));
        }
        samples.push_back(std::move(versions));
    }
    return diversity_stddev(samples);
}

}  // namespace latlab
