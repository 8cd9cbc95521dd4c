#include "latlab/corpus.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "latlab/errors.hpp"
#include "latlab/gaussian.hpp"
#include "latlab/io_util.hpp"

namespace latlab {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

// Substream layout off the master seed: 0 = process parameters, 1 = parent of
// per-text symbol streams, 2 = parent of per-utterance realization streams.
constexpr std::uint64_t kProcessStream = 0;
constexpr std::uint64_t kTextStreamParent = 1;
constexpr std::uint64_t kRealizationStreamParent = 2;

void validate_config(const CorpusConfig& c) {
    if (c.n_utterances < 0 || c.min_len < 1 || c.max_len < c.min_len || c.alphabet_size < 1 ||
        c.d_true < 1 || c.d_obs < 1 || c.n_cepstra < 2 || c.text_repeats < 1) {
        throw UsageError("generate_corpus: invalid config");
    }
}

json config_to_json(const CorpusConfig& c) {
    return json{{"n_utterances", c.n_utterances}, {"min_len", c.min_len},
                {"max_len", c.max_len},           {"alphabet_size", c.alphabet_size},
                {"d_true", c.d_true},             {"d_obs", c.d_obs},
                {"n_cepstra", c.n_cepstra},       {"text_repeats", c.text_repeats},
                {"seed", c.seed}};
}

CorpusConfig config_from_json(const json& j) {
    CorpusConfig c;
    c.n_utterances = j.at("n_utterances").get<int>();
    c.min_len = j.at("min_len").get<int>();
    c.max_len = j.at("max_len").get<int>();
    c.alphabet_size = j.at("alphabet_size").get<int>();
    c.d_true = j.at("d_true").get<int>();
    c.d_obs = j.at("d_obs").get<int>();
    c.n_cepstra = j.at("n_cepstra").get<int>();
    c.text_repeats = j.at("text_repeats").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

json process_body_json(const TrueProcess& p) {
    json j;
    j["config"] = config_to_json(p.config);
    j["emb"] = tensor_to_json(p.emb);
    j["ar_coeff"] = p.ar_coeff;
    j["innovation_std"] = p.innovation_std;
    j["dec_w1"] = tensor_to_json(p.dec_w1);
    j["dec_b1"] = tensor_to_json(p.dec_b1);
    j["dec_w2"] = tensor_to_json(p.dec_w2);
    j["dec_b2"] = tensor_to_json(p.dec_b2);
    j["obs_noise_std"] = p.obs_noise_std;
    j["f0_readout"] = tensor_to_json(p.f0_readout);
    j["f0_base"] = p.f0_base;
    j["f0_scale"] = p.f0_scale;
    j["energy_readout"] = tensor_to_json(p.energy_readout);
    j["energy_base"] = p.energy_base;
    j["energy_scale"] = p.energy_scale;
    j["mcep_readout"] = tensor_to_json(p.mcep_readout);
    j["track_jitter_f0"] = p.track_jitter_f0;
    j["track_jitter_energy"] = p.track_jitter_energy;
    j["track_jitter_mcep"] = p.track_jitter_mcep;
    j["unvoiced"] = p.unvoiced;
    j["dur_p"] = p.dur_p;
    j["dur_max"] = p.dur_max;
    return j;
}

TrueProcess process_from_body(const json& j) {
    TrueProcess p;
    p.config = config_from_json(j.at("config"));
    p.emb = tensor_from_json(j.at("emb"), "process.emb");
    p.ar_coeff = j.at("ar_coeff").get<std::vector<double>>();
    p.innovation_std = j.at("innovation_std").get<double>();
    p.dec_w1 = tensor_from_json(j.at("dec_w1"), "process.dec_w1");
    p.dec_b1 = tensor_from_json(j.at("dec_b1"), "process.dec_b1");
    p.dec_w2 = tensor_from_json(j.at("dec_w2"), "process.dec_w2");
    p.dec_b2 = tensor_from_json(j.at("dec_b2"), "process.dec_b2");
    p.obs_noise_std = j.at("obs_noise_std").get<double>();
    p.f0_readout = tensor_from_json(j.at("f0_readout"), "process.f0_readout");
    p.f0_base = j.at("f0_base").get<double>();
    p.f0_scale = j.at("f0_scale").get<double>();
    p.energy_readout = tensor_from_json(j.at("energy_readout"), "process.energy_readout");
    p.energy_base = j.at("energy_base").get<double>();
    p.energy_scale = j.at("energy_scale").get<double>();
    p.mcep_readout = tensor_from_json(j.at("mcep_readout"), "process.mcep_readout");
    p.track_jitter_f0 = j.at("track_jitter_f0").get<double>();
    p.track_jitter_energy = j.at("track_jitter_energy").get<double>();
    p.track_jitter_mcep = j.at("track_jitter_mcep").get<double>();
    p.unvoiced = j.at("unvoiced").get<std::vector<std::uint8_t>>();
    p.dur_p = j.at("dur_p").get<std::vector<double>>();
    p.dur_max = j.at("dur_max").get<int>();
    return p;
}

TrueProcess make_process(const CorpusConfig& cfg, RngStream rng) {
    TrueProcess p;
    p.config = cfg;
    const int v = cfg.alphabet_size, d = cfg.d_true, dobs = cfg.d_obs, k = cfg.n_cepstra;
    p.emb = Tensor(v, d);
    for (std::size_t i = 0; i < p.emb.size(); ++i) p.emb.data()[i] = 0.5 * rng.normal();
    p.ar_coeff.resize(d);
    for (int i = 0; i < d; ++i) p.ar_coeff[i] = 0.7 + 0.2 * rng.uniform();

    const int hidden = 24;
    p.dec_w1 = Tensor(d, hidden);
    for (std::size_t i = 0; i < p.dec_w1.size(); ++i)
        p.dec_w1.data()[i] = rng.normal() / std::sqrt(static_cast<double>(d));
    p.dec_b1 = Tensor(1, hidden);
    for (std::size_t i = 0; i < p.dec_b1.size(); ++i) p.dec_b1.data()[i] = 0.2 * rng.normal();
    p.dec_w2 = Tensor(hidden, dobs);
    for (std::size_t i = 0; i < p.dec_w2.size(); ++i)
        p.dec_w2.data()[i] = 3.0 * rng.normal() / std::sqrt(static_cast<double>(hidden));
    p.dec_b2 = Tensor(1, dobs);
    for (std::size_t i = 0; i < p.dec_b2.size(); ++i) p.dec_b2.data()[i] = 0.1 * rng.normal();

    auto unit_row = [&](double scale) {
        Tensor t(1, dobs);
        double norm = 0.0;
        for (int i = 0; i < dobs; ++i) {
            t.at(0, i) = rng.normal();
            norm += t.at(0, i) * t.at(0, i);
        }
        norm = std::sqrt(norm);
        for (int i = 0; i < dobs; ++i) t.at(0, i) *= scale / norm;
        return t;
    };
    p.f0_readout = unit_row(1.0);
    p.energy_readout = unit_row(1.0);
    p.mcep_readout = Tensor(k, dobs);
    for (std::size_t i = 0; i < p.mcep_readout.size(); ++i)
        p.mcep_readout.data()[i] = rng.normal() / std::sqrt(static_cast<double>(dobs));

    p.unvoiced.resize(v);
    for (int i = 0; i < v; ++i) p.unvoiced[i] = rng.uniform() < 0.3 ? 1 : 0;
    p.dur_p.resize(v);
    for (int i = 0; i < v; ++i) p.dur_p[i] = 0.10 + 0.30 * rng.uniform();
    return p;
}

int draw_duration(const TrueProcess& p, int symbol, RngStream& rng) {
    // Shifted geometric: 1 + number of failures before first success.
    const double q = p.dur_p[symbol];
    int d = 1;
    while (d < p.dur_max && rng.uniform() >= q) ++d;
    return d;
}

Utterance make_utterance(const TrueProcess& p, const std::vector<int>& symbols,
                         const std::string& id, RngStream rng) {
    const CorpusConfig& cfg = p.config;
    Utterance u;
    u.id = id;
    u.symbols = symbols;
    const int n = static_cast<int>(symbols.size());

    u.durations.resize(n);
    for (int i = 0; i < n; ++i) u.durations[i] = draw_duration(p, symbols[i], rng);
    int frames = 0;
    for (int d : u.durations) frames += d;

    u.oracle_latents = Tensor(n, cfg.d_true);
    std::vector<double> prev(cfg.d_true, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < cfg.d_true; ++j) {
            const double mean = p.ar_coeff[j] * prev[j] + p.emb.at(symbols[i], j);
            const double z = mean + p.innovation_std * rng.normal();
            u.oracle_latents.at(i, j) = z;
            prev[j] = z;
        }
    }

    u.observation = Tensor(frames, cfg.d_obs);
    int f = 0;
    for (int i = 0; i < n; ++i) {
        const Tensor mean = p.decode_mean(u.oracle_latents.row(i));
        for (int r = 0; r < u.durations[i]; ++r, ++f) {
            for (int j = 0; j < cfg.d_obs; ++j) {
                u.observation.at(f, j) = mean.at(0, j) + p.obs_noise_std * rng.normal();
            }
        }
    }

    u.track = tracks_from_observation(p, u.observation, frame_voicing(p, symbols, u.durations));
    for (int i = 0; i < frames; ++i) {
        u.track.f0[i] += p.track_jitter_f0 * rng.normal();
        u.track.energy[i] += p.track_jitter_energy * rng.normal();
        for (int j = 0; j < cfg.n_cepstra; ++j) {
            u.track.mcep.at(i, j) += p.track_jitter_mcep * rng.normal();
        }
    }
    return u;
}

json utterance_to_json(const Utterance& u) {
    json j;
    j["id"] = u.id;
    j["symbols"] = u.symbols;
    j["durations"] = u.durations;
    j["latents"] = tensor_to_json(u.oracle_latents);
    j["observation"] = tensor_to_json(u.observation);
    j["f0"] = doubles_to_b64(u.track.f0.data(), u.track.f0.size());
    j["voiced"] = u.track.voiced;
    j["energy"] = doubles_to_b64(u.track.energy.data(), u.track.energy.size());
    j["mcep"] = tensor_to_json(u.track.mcep);
    return j;
}

Utterance utterance_from_json(const json& j, const std::string& where) {
    Utterance u;
    u.id = j.at("id").get<std::string>();
    u.symbols = j.at("symbols").get<std::vector<int>>();
    u.durations = j.at("durations").get<std::vector<int>>();
    u.oracle_latents = tensor_from_json(j.at("latents"), where + ".latents");
    u.observation = tensor_from_json(j.at("observation"), where + ".observation");
    u.track.f0 = doubles_from_b64(j.at("f0").get<std::string>());
    u.track.voiced = j.at("voiced").get<std::vector<std::uint8_t>>();
    u.track.energy = doubles_from_b64(j.at("energy").get<std::string>());
    u.track.mcep = tensor_from_json(j.at("mcep"), where + ".mcep");
    return u;
}

}  // namespace

std::uint64_t TrueProcess::checksum() const {
    return fnv1a64(process_body_json(*this).dump());
}

Tensor TrueProcess::decode_mean(const Tensor& latent_row) const {
    Tensor h = matmul(latent_row, dec_w1);
    for (int j = 0; j < h.cols(); ++j) h.at(0, j) = std::tanh(h.at(0, j) + dec_b1.at(0, j));
    Tensor out = matmul(h, dec_w2);
    for (int j = 0; j < out.cols(); ++j) out.at(0, j) += dec_b2.at(0, j);
    return out;
}

void Utterance::validate(const CorpusConfig& cfg) const {
    const int n = length();
    if (n < 1) throw DataError("utterance '" + id + "': empty symbol sequence");
    if (static_cast<int>(durations.size()) != n) {
        throw DataError("utterance '" + id + "': symbol/duration count mismatch");
    }
    int frames_sum = 0;
    for (int d : durations) {
        if (d < 1) throw DataError("utterance '" + id + "': duration < 1");
        frames_sum += d;
    }
    for (int s : symbols) {
        if (s < 0 || s >= cfg.alphabet_size) {
            throw DataError("utterance '" + id + "': symbol id out of range");
        }
    }
    if (observation.rows() != frames_sum) {
        throw DataError("utterance '" + id + "': durations sum " + std::to_string(frames_sum) +
                        " != frame count " + std::to_string(observation.rows()));
    }
    if (observation.cols() != cfg.d_obs || oracle_latents.rows() != n ||
        oracle_latents.cols() != cfg.d_true) {
        throw DataError("utterance '" + id + "': tensor shapes inconsistent with config");
    }
    track.validate("utterance '" + id + "'");
    if (track.frames() != frames_sum || track.mcep.cols() != cfg.n_cepstra) {
        throw DataError("utterance '" + id + "': track shape inconsistent");
    }
    if (!observation.all_finite() || !oracle_latents.all_finite()) {
        throw DataError("utterance '" + id + "': non-finite values");
    }
}

std::vector<std::uint8_t> frame_voicing(const TrueProcess& process, const std::vector<int>& symbols,
                                        const std::vector<int>& durations) {
    std::vector<std::uint8_t> v;
    for (std::size_t i = 0; i < symbols.size(); ++i) {
        const std::uint8_t flag = process.unvoiced[symbols[i]] ? 0 : 1;
        for (int r = 0; r < durations[i]; ++r) v.push_back(flag);
    }
    return v;
}

FrameTrack tracks_from_observation(const TrueProcess& process, const Tensor& observation,
                                   const std::vector<std::uint8_t>& voiced) {
    const int frames = observation.rows();
    if (static_cast<int>(voiced.size()) != frames) {
        throw ShapeError("tracks_from_observation: voicing length mismatch");
    }
    FrameTrack t;
    t.voiced = voiced;
    t.f0.resize(frames, 0.0);
    t.energy.resize(frames, 0.0);
    t.mcep = Tensor(frames, process.mcep_readout.rows());
    for (int i = 0; i < frames; ++i) {
        double fp = 0.0, ep = 0.0;
        for (int j = 0; j < observation.cols(); ++j) {
            fp += process.f0_readout.at(0, j) * observation.at(i, j);
            ep += process.energy_readout.at(0, j) * observation.at(i, j);
        }
        t.energy[i] = process.energy_base + process.energy_scale * ep;
        t.f0[i] = voiced[i] ? process.f0_base + process.f0_scale * fp : 0.0;
        for (int c = 0; c < process.mcep_readout.rows(); ++c) {
            double m = 0.0;
            for (int j = 0; j < observation.cols(); ++j) {
                m += process.mcep_readout.at(c, j) * observation.at(i, j);
            }
            t.mcep.at(i, c) = m;
        }
    }
    return t;
}

GeneratedCorpus generate_corpus(const CorpusConfig& config) {
    validate_config(config);
    RngStream master(config.seed);
    GeneratedCorpus out;
    out.process = make_process(config, master.substream(kProcessStream));
    out.corpus.config = config;
    out.corpus.process_checksum = out.process.checksum();

    const RngStream text_parent = master.substream(kTextStreamParent);
    const RngStream real_parent = master.substream(kRealizationStreamParent);
    const int n_texts = (config.n_utterances + config.text_repeats - 1) / config.text_repeats;
    int made = 0;
    for (int t = 0; t < n_texts && made < config.n_utterances; ++t) {
        // The text (symbols) is drawn once per group; realizations differ in
        // durations, latent noise, and observation noise.
        RngStream text_rng = text_parent.substream(static_cast<std::uint64_t>(t));
        const int len =
            config.min_len + static_cast<int>(text_rng.next_below(
                                 static_cast<std::uint64_t>(config.max_len - config.min_len + 1)));
        std::vector<int> symbols(len);
        for (int i = 0; i < len; ++i) {
            symbols[i] = static_cast<int>(
                text_rng.next_below(static_cast<std::uint64_t>(config.alphabet_size)));
        }
        for (int r = 0; r < config.text_repeats && made < config.n_utterances; ++r, ++made) {
            std::ostringstream id;
            id << "t" << t << "_r" << r;
            out.corpus.utterances.push_back(
                make_utterance(out.process, symbols, id.str(),
                               real_parent.substream(static_cast<std::uint64_t>(made))));
        }
    }
    return out;
}

Corpus generate_with_process(const TrueProcess& process, int n_utterances, std::uint64_t seed) {
    if (n_utterances < 0) throw UsageError("generate_with_process: invalid count");
    Corpus out;
    out.config = process.config;
    out.config.n_utterances = n_utterances;
    out.config.text_repeats = 1;
    out.config.seed = seed;
    out.process_checksum = process.checksum();
    RngStream master(seed);
    const RngStream text_parent = master.substream(kTextStreamParent);
    const RngStream real_parent = master.substream(kRealizationStreamParent);
    for (int i = 0; i < n_utterances; ++i) {
        RngStream text_rng = text_parent.substream(static_cast<std::uint64_t>(i));
        const int len = out.config.min_len +
                        static_cast<int>(text_rng.next_below(static_cast<std::uint64_t>(
                            out.config.max_len - out.config.min_len + 1)));
        std::vector<int> symbols(len);
        for (int s = 0; s < len; ++s) {
            symbols[s] = static_cast<int>(
                text_rng.next_below(static_cast<std::uint64_t>(out.config.alphabet_size)));
        }
        std::ostringstream id;
        id << "x" << i << "_r0";
        out.utterances.push_back(make_utterance(process, symbols, id.str(),
                                                real_parent.substream(static_cast<std::uint64_t>(i))));
    }
    return out;
}

double conditional_nll_per_dim(const Corpus& corpus, const TrueProcess& process) {
    const int d = process.config.d_true;
    double total = 0.0;
    std::int64_t count = 0;
    for (const Utterance& u : corpus.utterances) {
        const int n = u.length();
        std::vector<double> prev(d, 0.0);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < d; ++j) {
                const double mean = process.ar_coeff[j] * prev[j] + process.emb.at(u.symbols[i], j);
                const double z = u.oracle_latents.at(i, j);
                const double s = process.innovation_std;
                const double zn = (z - mean) / s;
                total += 0.5 * kLn2Pi + std::log(s) + 0.5 * zn * zn;
                prev[j] = z;
                ++count;
            }
        }
    }
    if (count == 0) throw DataError("conditional_nll_per_dim: empty corpus");
    return total / static_cast<double>(count);
}

double oracle_nll(const Corpus& corpus, const TrueProcess& process) {
    if (process.checksum() != corpus.process_checksum) {
        throw DataError("oracle_nll: process checksum does not match corpus header");
    }
    return conditional_nll_per_dim(corpus, process);
}

void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ostringstream out;
    json header;
    header["format_version"] = kFormatVersion;
    header["kind"] = "latlab-corpus";
    header["config"] = config_to_json(corpus.config);
    header["process_checksum"] = hex_u64(corpus.process_checksum);
    header["n_utterances"] = corpus.utterances.size();
    out << header.dump() << "\n";
    for (const Utterance& u : corpus.utterances) out << utterance_to_json(u).dump() << "\n";
    write_file(path, out.str());
}

Corpus load_corpus(const std::string& path) {
    const std::string text = read_file(path);
    Corpus corpus;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    bool have_header = false;
    std::size_t expected = 0;
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
                throw ParseError("corpus parse error: " + std::string(e.what()), line_no,
                                 pos + (e.byte > 0 ? e.byte - 1 : 0));
            }
            try {
                if (!have_header) {
                    if (j.at("kind").get<std::string>() != "latlab-corpus") {
                        throw DataError("not a corpus file: " + path);
                    }
                    const int ver = j.at("format_version").get<int>();
                    if (ver != kFormatVersion) {
                        throw DataError("corpus format version mismatch: file has " +
                                        std::to_string(ver) + ", expected " +
                                        std::to_string(kFormatVersion));
                    }
                    corpus.config = config_from_json(j.at("config"));
                    corpus.process_checksum =
                        std::stoull(j.at("process_checksum").get<std::string>(), nullptr, 16);
                    expected = j.at("n_utterances").get<std::size_t>();
                    have_header = true;
                } else {
                    Utterance u = utterance_from_json(j, "corpus line " + std::to_string(line_no));
                    u.validate(corpus.config);
                    corpus.utterances.push_back(std::move(u));
                }
            } catch (const json::exception& e) {
                throw ParseError("corpus record error: " + std::string(e.what()), line_no, pos);
            }
        }
        pos = end + 1;
    }
    if (!have_header) throw DataError("corpus file has no header line: " + path);
    if (corpus.utterances.size() != expected) {
        throw ParseError("corpus truncated: header declares " + std::to_string(expected) +
                             " utterances, found " + std::to_string(corpus.utterances.size()),
                         line_no, text.size());
    }
    return corpus;
}

void save_process(const TrueProcess& process, const std::string& path) {
    json j = process_body_json(process);
    j["format_version"] = kFormatVersion;
    j["kind"] = "latlab-process";
    j["checksum"] = hex_u64(process.checksum());
    write_file(path, j.dump(2) + "\n");
}

TrueProcess load_process(const std::string& path) {
    const std::string text = read_file(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError("process parse error: " + std::string(e.what()), 1,
                         e.byte > 0 ? e.byte - 1 : 0);
    }
    try {
        if (j.at("kind").get<std::string>() != "latlab-process") {
            throw DataError("not a process file: " + path);
        }
        if (j.at("format_version").get<int>() != kFormatVersion) {
            throw DataError("process format version mismatch");
        }
        TrueProcess p = process_from_body(j);
        const std::string declared = j.at("checksum").get<std::string>();
        if (hex_u64(p.checksum()) != declared) {
            throw DataError("process checksum mismatch in " + path);
        }
        return p;
    } catch (const json::exception& e) {
        throw ParseError("process record error: " + std::string(e.what()), 1, 0);
    }
}

}  // namespace latlab
