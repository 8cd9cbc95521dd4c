// latlab command-line front end: data generation, training of the four model
// variants, latent extraction, sampling, metric evaluation, and report
// emission. Every command is deterministic given its config and seed; all
// randomness derives from one master seed per command.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "latlab/ar_prior.hpp"
#include "latlab/checkpoint.hpp"
#include "latlab/corpus.hpp"
#include "latlab/errors.hpp"
#include "latlab/flow.hpp"
#include "latlab/fvae.hpp"
#include "latlab/io_util.hpp"
#include "latlab/latents.hpp"
#include "latlab/parallel.hpp"
#include "latlab/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace latlab;

namespace {

constexpr const char* kToolVersion = "latlab 1.0.0";

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string format_temperature(double t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", t);
    return buf;
}

// Output-directory bookkeeping: effective config echo plus a manifest that
// lists every produced artifact with its checksum.
struct OutDir {
    fs::path dir;
    json echo = json::object();
    std::vector<std::string> artifacts;

    explicit OutDir(const std::string& path) : dir(path) {
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw DataError("cannot create output directory '" + path + "': " + ec.message());
    }
    std::string path(const std::string& name) const { return (dir / name).string(); }
    void add(const std::string& name) { artifacts.push_back(name); }
    void finalize(const std::string& command) {
        write_file(path("config_echo.json"), echo.dump(2) + "\n");
        add("config_echo.json");
        std::sort(artifacts.begin(), artifacts.end());
        json manifest;
        manifest["tool_version"] = kToolVersion;
        manifest["command"] = command;
        manifest["config_hash"] = hex_u64(fnv1a64(echo.dump()));
        json entries = json::array();
        for (const std::string& name : artifacts) {
            const std::string full = path(name);
            const std::string bytes = read_file(full);
            entries.push_back(json{{"path", name},
                                   {"bytes", bytes.size()},
                                   {"fnv1a", hex_u64(fnv1a64(bytes))}});
        }
        manifest["artifacts"] = std::move(entries);
        write_file(path("manifest.json"), manifest.dump(2) + "\n");
    }
};

// Applies config-file values under CLI-flag precedence and rejects unknown
// keys before any work starts.
struct ConfigBinder {
    json file = json::object();
    std::set<std::string> known;

    void load(const std::string& config_path) {
        if (config_path.empty()) return;
        try {
            file = json::parse(read_file(config_path));
        } catch (const json::parse_error& e) {
            throw UsageError("config file parse error in " + config_path + ": " + e.what());
        }
        if (!file.is_object()) throw UsageError("config file must hold a JSON object");
    }
    template <typename T>
    void bind(const std::string& key, const CLI::Option* opt, T& target) {
        known.insert(key);
        if (file.contains(key) && (opt == nullptr || opt->count() == 0)) {
            try {
                target = file.at(key).get<T>();
            } catch (const json::exception& e) {
                throw UsageError("config key '" + key + "': " + e.what());
            }
        }
    }
    void finish() const {
        for (const auto& [key, value] : file.items()) {
            if (!known.count(key)) throw UsageError("unknown config key '" + key + "'");
        }
    }
};

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& rows) {
    std::ostringstream out;
    out << "step,term,value\n";
    for (const TraceRow& r : rows) {
        out << r.step << "," << r.term << "," << format_double(r.value) << "\n";
    }
    write_file(path, out.str());
}

std::vector<const Utterance*> text_pointers(const Corpus& corpus, int count) {
    if (corpus.utterances.empty()) throw DataError("corpus has no utterances to sample from");
    std::vector<const Utterance*> out;
    std::set<std::string> seen;
    for (const Utterance& u : corpus.utterances) {
        const std::string text = u.id.substr(0, u.id.find('_'));
        if (seen.count(text)) continue;  // one entry per distinct text
        seen.insert(text);
        out.push_back(&u);
        if (static_cast<int>(out.size()) == count) break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
    std::string out, config, process_path;
    CorpusConfig corpus;
};

void cmd_gen_data(GenDataArgs& a, const ConfigBinder& binder) {
    OutDir out(a.out);
    out.echo = json{{"command", "gen-data"},
                    {"n_utterances", a.corpus.n_utterances},
                    {"min_len", a.corpus.min_len},
                    {"max_len", a.corpus.max_len},
                    {"alphabet", a.corpus.alphabet_size},
                    {"d_true", a.corpus.d_true},
                    {"d_obs", a.corpus.d_obs},
                    {"n_cepstra", a.corpus.n_cepstra},
                    {"text_repeats", a.corpus.text_repeats},
                    {"seed", a.corpus.seed},
                    {"process", a.process_path}};
    binder.finish();
    if (!a.process_path.empty()) {
        const TrueProcess process = load_process(a.process_path);
        const Corpus corpus =
            generate_with_process(process, a.corpus.n_utterances, a.corpus.seed);
        save_corpus(corpus, out.path("corpus.jsonl"));
        save_process(process, out.path("process.json"));
    } else {
        const GeneratedCorpus g = generate_corpus(a.corpus);
        save_corpus(g.corpus, out.path("corpus.jsonl"));
        save_process(g.process, out.path("process.json"));
    }
    out.add("corpus.jsonl");
    out.add("process.json");
    out.finalize("gen-data");
    std::printf("gen-data: wrote %s\n", out.path("corpus.jsonl").c_str());
}

// ---------------------------------------------------------------------------
// train fvae / dvae

struct TrainVaeArgs {
    std::string out, config, corpus_path;
    bool autoregressive = false;
    FvaeConfig model;
    FvaeTrainConfig train;
    std::uint64_t init_seed = 0;  // defaults to train seed
};

void cmd_train_vae(TrainVaeArgs& a, const ConfigBinder& binder) {
    OutDir out(a.out);
    a.model.prior = a.autoregressive ? "autoregressive" : "standard-normal";
    const Corpus corpus = load_corpus(a.corpus_path);
    a.model.alphabet = corpus.config.alphabet_size;
    a.model.d_obs = corpus.config.d_obs;
    const std::uint64_t init_seed = a.init_seed ? a.init_seed : a.train.seed;
    out.echo = json{{"command", a.autoregressive ? "train dvae" : "train fvae"},
                    {"corpus", a.corpus_path},
                    {"model", a.model.to_json()},
                    {"steps", a.train.steps},
                    {"batch", a.train.batch},
                    {"lr", a.train.lr},
                    {"beta", a.train.beta},
                    {"warmup_frac", a.train.warmup_frac},
                    {"val_frac", a.train.val_frac},
                    {"seed", a.train.seed},
                    {"init_seed", init_seed}};
    binder.finish();
    FvaeModel model = fvae_init(a.model, init_seed);
    const FvaeTrainResult res = fvae_train(model, corpus, a.train);
    CheckpointMeta meta = fvae_meta(model, a.train.steps);
    meta.rng_seed = a.train.seed;
    save_checkpoint(out.path("checkpoint.ckpt"), meta, model.store);
    write_trace_csv(out.path("trace.csv"), res.trace);
    out.add("checkpoint.ckpt");
    out.add("trace.csv");
    out.finalize(a.autoregressive ? "train-dvae" : "train-fvae");
    std::printf("train %s: %d steps, checkpoint at %s\n", a.autoregressive ? "dvae" : "fvae",
                a.train.steps, out.path("checkpoint.ckpt").c_str());
}

// ---------------------------------------------------------------------------
// train ar-prior

struct TrainArArgs {
    std::string out, config, latents_path, teacher = "resample";
    ArPriorConfig prior;
    PosthocConfig train;
    std::uint64_t init_seed = 0;
};

void cmd_train_ar(TrainArArgs& a, const ConfigBinder& binder) {
    OutDir out(a.out);
    const LatentDataset ds = load_latents(a.latents_path);
    a.prior.context = ds.context_dim;
    a.prior.latent = ds.dim;
    a.train.teacher = teacher_mode_from_string(a.teacher);
    const std::uint64_t init_seed = a.init_seed ? a.init_seed : a.train.seed;
    out.echo = json{{"command", "train ar-prior"},
                    {"latents", a.latents_path},
                    {"hidden", a.prior.hidden},
                    {"dur_hidden", a.prior.dur_hidden},
                    {"steps", a.train.steps},
                    {"batch", a.train.batch},
                    {"lr", a.train.lr},
                    {"val_frac", a.train.val_frac},
                    {"teacher", a.teacher},
                    {"seed", a.train.seed},
                    {"init_seed", init_seed}};
    binder.finish();
    ParamStore store;
    RngStream rng(init_seed);
    init_ar_prior(store, "prior.", a.prior, rng);
    const PosthocResult res = train_posthoc(store, "prior.", a.prior, ds, a.train);
    CheckpointMeta meta;
    meta.kind = "ar-prior";
    meta.hyper = json{{"context", a.prior.context},
                      {"latent", a.prior.latent},
                      {"hidden", a.prior.hidden},
                      {"dur_hidden", a.prior.dur_hidden}};
    meta.step = a.train.steps;
    meta.rng_seed = a.train.seed;
    meta.prior_mode = "autoregressive";
    save_checkpoint(out.path("checkpoint.ckpt"), meta, store);
    std::vector<TraceRow> trace = res.trace;
    trace.push_back({0, "val_kl_initial", res.initial_val_kl_per_step});
    trace.push_back({a.train.steps, "val_kl_final", res.final_val_kl_per_step});
    write_trace_csv(out.path("trace.csv"), trace);
    out.add("checkpoint.ckpt");
    out.add("trace.csv");
    out.finalize("train-ar-prior");
    std::printf("train ar-prior: val kl %s -> %s\n",
                format_double(res.initial_val_kl_per_step).c_str(),
                format_double(res.final_val_kl_per_step).c_str());
}

// ---------------------------------------------------------------------------
// train flow

struct TrainFlowArgs {
    std::string out, config, latents_path;
    FlowConfig flow;
    FlowTrainConfig train;
    std::uint64_t init_seed = 0;
    bool no_durations = false;
};

void cmd_train_flow(TrainFlowArgs& a, const ConfigBinder& binder) {
    OutDir out(a.out);
    const LatentDataset ds = load_latents(a.latents_path);
    a.flow.with_durations = !a.no_durations;
    a.flow.context = ds.context_dim;
    a.flow.channels = ds.dim + (a.flow.with_durations ? 1 : 0);
    const std::uint64_t init_seed = a.init_seed ? a.init_seed : a.train.seed;
    out.echo = json{{"command", "train flow"},
                    {"latents", a.latents_path},
                    {"flow", a.flow.to_json()},
                    {"steps", a.train.steps},
                    {"batch", a.train.batch},
                    {"lr", a.train.lr},
                    {"val_frac", a.train.val_frac},
                    {"resample_latents", a.train.resample_latents},
                    {"seed", a.train.seed},
                    {"init_seed", init_seed}};
    binder.finish();
    ParamStore store;
    RngStream rng(init_seed);
    flow_init(store, a.flow, rng);
    const FlowTrainResult res = flow_train(store, a.flow, ds, a.train);
    CheckpointMeta meta;
    meta.kind = "flow";
    meta.hyper = a.flow.to_json();
    meta.step = a.train.steps;
    meta.rng_seed = a.train.seed;
    meta.prior_mode = "flow";
    save_checkpoint(out.path("checkpoint.ckpt"), meta, store);
    std::vector<TraceRow> trace = res.trace;
    trace.push_back({0, "val_nll_initial", res.initial_val_nll_per_dim});
    trace.push_back({a.train.steps, "val_nll_final", res.final_val_nll_per_dim});
    write_trace_csv(out.path("trace.csv"), trace);
    out.add("checkpoint.ckpt");
    out.add("trace.csv");
    out.finalize("train-flow");
    std::printf("train flow: val nll/dim %s -> %s\n",
                format_double(res.initial_val_nll_per_dim).c_str(),
                format_double(res.final_val_nll_per_dim).c_str());
}

// ---------------------------------------------------------------------------
// finetune-prior

struct FinetuneArgs {
    std::string out, config, checkpoint_path, corpus_path;
    FinetuneConfig fc;
    std::string teacher = "resample";
};

void cmd_finetune(FinetuneArgs& a, const ConfigBinder& binder) {
    OutDir out(a.out);
    out.echo = json{{"command", "finetune-prior"}, {"checkpoint", a.checkpoint_path},
                    {"corpus", a.corpus_path},     {"steps", a.fc.steps},
                    {"batch", a.fc.batch},         {"lr", a.fc.lr},
                    {"val_frac", a.fc.val_frac},   {"teacher", a.teacher},
                    {"seed", a.fc.seed}};
    binder.finish();
    a.fc.teacher = teacher_mode_from_string(a.teacher);
    const Corpus corpus = load_corpus(a.corpus_path);
    FvaeModel model = fvae_from_checkpoint(load_checkpoint(a.checkpoint_path));
    const PosthocResult res = fvae_finetune_prior(model, corpus, a.fc);
    CheckpointMeta meta = fvae_meta(model, a.fc.steps);
    meta.rng_seed = a.fc.seed;
    save_checkpoint(out.path("checkpoint.ckpt"), meta, model.store);
    std::vector<TraceRow> trace = res.trace;
    trace.push_back({0, "val_kl_initial", res.initial_val_kl_per_step});
    trace.push_back({a.fc.steps, "val_kl_final", res.final_val_kl_per_step});
    write_trace_csv(out.path("trace.csv"), trace);
    out.add("checkpoint.ckpt");
    out.add("trace.csv");
    out.finalize("finetune-prior");
    std::printf("finetune-prior: held-out kl %s -> %s\n",
                format_double(res.initial_val_kl_per_step).c_str(),
                format_double(res.final_val_kl_per_step).c_str());
}

// ---------------------------------------------------------------------------
// extract-latents

struct ExtractArgs {
    std::string out, config, checkpoint_path, corpus_path;
    std::uint64_t seed = 1;
};

void cmd_extract(ExtractArgs& a, const ConfigBinder& binder) {
    OutDir out(a.out);
    out.echo = json{{"command", "extract-latents"},
                    {"checkpoint", a.checkpoint_path},
                    {"corpus", a.corpus_path},
                    {"seed", a.seed}};
    binder.finish();
    const Corpus corpus = load_corpus(a.corpus_path);
    FvaeModel model = fvae_from_checkpoint(load_checkpoint(a.checkpoint_path));
    const LatentDataset ds = fvae_extract(model, corpus, a.seed);
    save_latents(ds, out.path("latents.jsonl"));
    out.add("latents.jsonl");
    out.finalize("extract-latents");
    std::printf("extract-latents: %zu records, mean posterior std %s\n", ds.records.size(),
                format_double(ds.mean_posterior_std).c_str());
}

// ---------------------------------------------------------------------------
// sample

struct SampleArgs {
    std::string out, config, checkpoint_path, fvae_path, corpus_path, process_path, model_name;
    int texts = 50;
    int resamples = 10;
    std::vector<double> temperatures;
    std::uint64_t seed = 1;
    int threads = 0;
};

void cmd_sample(SampleArgs& a, const ConfigBinder& binder) {
    OutDir out(a.out);
    const LoadedCheckpoint ck = load_checkpoint(a.checkpoint_path);
    if (a.temperatures.empty()) {
        a.temperatures = ck.meta.kind == "flow" ? std::vector<double>{0.33, 0.5, 0.8}
                                                : std::vector<double>{1.0};
    }
    if (a.model_name.empty()) {
        // Table naming: the post-hoc AR prior on a plain FVAE is the FVAE system.
        a.model_name = ck.meta.kind == "ar-prior" ? "fvae" : ck.meta.kind;
    }
    out.echo = json{{"command", "sample"},
                    {"checkpoint", a.checkpoint_path},
                    {"fvae", a.fvae_path},
                    {"corpus", a.corpus_path},
                    {"process", a.process_path},
                    {"model_name", a.model_name},
                    {"texts", a.texts},
                    {"resamples", a.resamples},
                    {"temperatures", a.temperatures},
                    {"seed", a.seed},
                    {"threads", a.threads}};
    binder.finish();
    const Corpus corpus = load_corpus(a.corpus_path);
    const TrueProcess process = load_process(a.process_path);
    const int workers = a.threads > 0 ? a.threads : default_workers();

    FvaeModel fvae;  // decoder + text encoder
    SamplerFn sampler;
    std::unique_ptr<ParamStore> prior_store;
    ArPriorConfig ar_cfg;
    FlowConfig flow_cfg;
    if (ck.meta.kind == "dvae" || ck.meta.kind == "fvae") {
        fvae = fvae_from_checkpoint(ck);
        if (!fvae.cfg.autoregressive()) {
            throw UsageError(
                "checkpoint has a standard-normal prior and no sampler; train dvae, "
                "finetune-prior, or pass an ar-prior/flow checkpoint");
        }
        ar_cfg = fvae.cfg.prior_config();
        sampler = [&fvae, ar_cfg](const Tensor& c, double temp, RngStream& rng) {
            const ArSample s = ar_sample(fvae.store, "prior.", ar_cfg, c, temp, rng);
            return std::make_pair(s.latents, s.durations);
        };
    } else if (ck.meta.kind == "ar-prior") {
        if (a.fvae_path.empty()) {
            throw UsageError("sampling an ar-prior checkpoint needs --fvae for the decoder");
        }
        fvae = fvae_from_checkpoint(load_checkpoint(a.fvae_path));
        prior_store = std::make_unique<ParamStore>(ck.store);
        ar_cfg.context = ck.meta.hyper.at("context").get<int>();
        ar_cfg.latent = ck.meta.hyper.at("latent").get<int>();
        ar_cfg.hidden = ck.meta.hyper.at("hidden").get<int>();
        ar_cfg.dur_hidden = ck.meta.hyper.at("dur_hidden").get<int>();
        if (ar_cfg.latent != fvae.cfg.latent || ar_cfg.context != fvae.cfg.context) {
            throw DataError("ar-prior checkpoint dims do not match the fvae checkpoint");
        }
        ParamStore* store = prior_store.get();
        sampler = [store, ar_cfg](const Tensor& c, double temp, RngStream& rng) {
            const ArSample s = ar_sample(*store, "prior.", ar_cfg, c, temp, rng);
            return std::make_pair(s.latents, s.durations);
        };
    } else if (ck.meta.kind == "flow") {
        if (a.fvae_path.empty()) {
            throw UsageError("sampling a flow checkpoint needs --fvae for the decoder");
        }
        fvae = fvae_from_checkpoint(load_checkpoint(a.fvae_path));
        prior_store = std::make_unique<ParamStore>(ck.store);
        flow_cfg = FlowConfig::from_json(ck.meta.hyper);
        if (!flow_cfg.with_durations) {
            throw UsageError("flow checkpoint was trained without a duration channel; "
                             "it cannot drive sampling");
        }
        if (flow_cfg.latent_dim() != fvae.cfg.latent || flow_cfg.context != fvae.cfg.context) {
            throw DataError("flow checkpoint dims do not match the fvae checkpoint");
        }
        ParamStore* store = prior_store.get();
        sampler = [store, flow_cfg](const Tensor& c, double temp, RngStream& rng) {
            const FlowSample s = flow_sample(*store, flow_cfg, c, temp, rng);
            return std::make_pair(s.latents, s.durations);
        };
    } else {
        throw UsageError("cannot sample from checkpoint kind '" + ck.meta.kind + "'");
    }

    const std::vector<const Utterance*> texts = text_pointers(corpus, a.texts);
    for (double temp : a.temperatures) {
        const SampleSet set = run_sampling(fvae, process, texts, a.resamples, temp, sampler,
                                           a.seed, workers, a.model_name);
        const std::string name = "samples_" + a.model_name + "_t" + format_temperature(temp) +
                                 ".jsonl";
        save_samples(set, out.path(name));
        out.add(name);
    }
    out.finalize("sample");
    std::printf("sample: %zu texts x %d resamples x %zu temperatures\n", texts.size(),
                a.resamples, a.temperatures.size());
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string out, config, checkpoint_path, corpus_path, process_path;
    std::vector<std::string> sample_paths;
    int threads = 0;
};

void cmd_eval_recon(EvalArgs& a, const ConfigBinder& binder) {
    OutDir out(a.out);
    out.echo = json{{"command", "eval recon"},
                    {"checkpoint", a.checkpoint_path},
                    {"corpus", a.corpus_path},
                    {"process", a.process_path},
                    {"threads", a.threads}};
    binder.finish();
    const Corpus corpus = load_corpus(a.corpus_path);
    const TrueProcess process = load_process(a.process_path);
    FvaeModel model = fvae_from_checkpoint(load_checkpoint(a.checkpoint_path));
    const int workers = a.threads > 0 ? a.threads : default_workers();
    const ReconEval r = eval_reconstruction(model, corpus, process, workers);
    json j;
    j["kind"] = "eval-recon";
    j["model"] = model.cfg.autoregressive() ? "dvae" : "fvae";
    j["latent_dim"] = model.cfg.latent;
    j["mcd_db"] = r.mcd;
    j["ffe_pct"] = r.ffe;
    j["recon_mse"] = r.recon_mse;
    j["mean_posterior_std"] = r.mean_posterior_std;
    j["utterances"] = r.utterances;
    write_file(out.path("eval_recon.json"), j.dump(2) + "\n");
    out.add("eval_recon.json");
    out.finalize("eval-recon");
    std::printf("eval recon: MCD %.3f dB, FFE %.2f%%\n", r.mcd, r.ffe);
}

void cmd_eval_spread(EvalArgs& a, const ConfigBinder& binder, bool diversity) {
    OutDir out(a.out);
    out.echo = json{{"command", diversity ? "eval diversity" : "eval express"},
                    {"samples", a.sample_paths},
                    {"corpus", a.corpus_path}};
    binder.finish();
    if (a.sample_paths.empty()) {
        throw DataError(diversity ? "eval diversity: no sample files given"
                                  : "eval express: no sample files given");
    }
    json rows = json::array();
    if (!diversity && !a.corpus_path.empty()) {
        const Corpus corpus = load_corpus(a.corpus_path);
        json row;
        row["model"] = "real";
        row["temperature"] = 1.0;
        row["stddev"] = prosody_std_to_json(corpus_expressiveness(corpus));
        rows.push_back(std::move(row));
    }
    for (const std::string& path : a.sample_paths) {
        const SampleSet set = load_samples(path);
        if (set.records.empty()) throw DataError("sample set is empty: " + path);
        json row;
        row["model"] = set.model;
        row["temperature"] = set.temperature;
        row["stddev"] = prosody_std_to_json(diversity ? sampleset_diversity(set)
                                                      : sampleset_expressiveness(set));
        rows.push_back(std::move(row));
    }
    json j;
    j["kind"] = diversity ? "eval-diversity" : "eval-express";
    j["rows"] = std::move(rows);
    const std::string name = diversity ? "eval_diversity.json" : "eval_express.json";
    write_file(out.path(name), j.dump(2) + "\n");
    out.add(name);
    out.finalize(diversity ? "eval-diversity" : "eval-express");
    std::printf("%s: %zu rows\n", diversity ? "eval diversity" : "eval express",
                a.sample_paths.size());
}

// ---------------------------------------------------------------------------
// report

struct ReportArgs {
    std::string in, out, config;
};

int model_rank(const std::string& model) {
    if (model == "real") return 0;
    if (model == "fvae") return 1;
    if (model == "dvae") return 2;
    if (model == "flow") return 3;
    return 4;
}

void cmd_report(ReportArgs& a, const ConfigBinder& binder) {
    OutDir out(a.out);
    out.echo = json{{"command", "report"}, {"in", a.in}};
    binder.finish();
    if (!fs::is_directory(a.in)) throw DataError("report: input directory not found: " + a.in);

    json recon_rows = json::array();
    json express_rows = json::array();
    json diversity_rows = json::array();
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(a.in)) {
        if (entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const fs::path& p : files) {
        json j;
        try {
            j = json::parse(read_file(p.string()));
        } catch (const json::parse_error&) {
            continue;  // not an eval artifact
        }
        if (!j.is_object() || !j.contains("kind")) continue;
        const std::string kind = j.at("kind").get<std::string>();
        if (kind == "eval-recon") {
            recon_rows.push_back(j);
        } else if (kind == "eval-express") {
            for (const auto& row : j.at("rows")) express_rows.push_back(row);
        } else if (kind == "eval-diversity") {
            for (const auto& row : j.at("rows")) diversity_rows.push_back(row);
        }
    }
    if (recon_rows.empty() && express_rows.empty() && diversity_rows.empty()) {
        throw DataError("report: no eval artifacts found in " + a.in);
    }
    auto order = [](json& rows) {
        std::stable_sort(rows.begin(), rows.end(), [](const json& x, const json& y) {
            const int rx = model_rank(x.at("model").get<std::string>());
            const int ry = model_rank(y.at("model").get<std::string>());
            if (rx != ry) return rx < ry;
            return x.value("temperature", 1.0) < y.value("temperature", 1.0);
        });
    };
    order(express_rows);
    order(diversity_rows);

    json report;
    report["tool_version"] = kToolVersion;
    report["reconstruction"] = recon_rows;
    report["expressiveness"] = express_rows;
    report["diversity"] = diversity_rows;
    write_file(out.path("report.json"), report.dump(2) + "\n");

    std::ostringstream md, csv;
    md << "# Evaluation report\n";
    csv << "table,model,temperature,col1,col2,col3\n";
    if (!recon_rows.empty()) {
        md << "\n## Reconstruction (lower is better)\n\n";
        md << "| model | dim | MCD (dB) | FFE (%) |\n|---|---|---|---|\n";
        for (const auto& r : recon_rows) {
            md << "| " << r.at("model").get<std::string>() << " | " << r.at("latent_dim")
               << " | " << format_double(r.at("mcd_db").get<double>()) << " | "
               << format_double(r.at("ffe_pct").get<double>()) << " |\n";
            csv << "reconstruction," << r.at("model").get<std::string>() << ","
                << r.at("latent_dim") << "," << format_double(r.at("mcd_db").get<double>()) << ","
                << format_double(r.at("ffe_pct").get<double>()) << ",\n";
        }
    }
    auto spread_table = [&](const char* title, const char* key, const json& rows) {
        if (rows.empty()) return;
        md << "\n## " << title << "\n\n";
        md << "| model | temperature | E | F0 | Dur |\n|---|---|---|---|---|\n";
        for (const auto& r : rows) {
            const ProsodyStd s = prosody_std_from_json(r.at("stddev"));
            md << "| " << r.at("model").get<std::string>() << " | "
               << format_temperature(r.value("temperature", 1.0)) << " | "
               << format_double(s.energy) << " | " << format_double(s.f0) << " | "
               << format_double(s.dur) << " |\n";
            csv << key << "," << r.at("model").get<std::string>() << ","
                << format_temperature(r.value("temperature", 1.0)) << ","
                << format_double(s.energy) << "," << format_double(s.f0) << ","
                << format_double(s.dur) << "\n";
        }
    };
    spread_table("Prosody stddev (expressiveness)", "expressiveness", express_rows);
    spread_table("Prosody stddev (diversity)", "diversity", diversity_rows);
    write_file(out.path("report.md"), md.str());
    write_file(out.path("report.csv"), csv.str());
    out.add("report.json");
    out.add("report.md");
    out.add("report.csv");
    out.finalize("report");
    std::printf("report: wrote %s\n", out.path("report.md").c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"latlab: phoneme-level prosodic latent prior laboratory"};
    app.require_subcommand(1);

    GenDataArgs gen;
    TrainVaeArgs vae;
    TrainArArgs ar;
    TrainFlowArgs flow;
    FinetuneArgs ft;
    ExtractArgs ex;
    SampleArgs sm;
    EvalArgs ev;
    ReportArgs rp;

    ConfigBinder binder;
    std::function<void()> run;

    // gen-data -----------------------------------------------------------
    auto* c_gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
    c_gen->add_option("--out", gen.out, "output directory")->required();
    c_gen->add_option("--config", gen.config, "JSON config file");
    auto* o_n = c_gen->add_option("--n", gen.corpus.n_utterances, "utterance count");
    auto* o_min = c_gen->add_option("--min-len", gen.corpus.min_len, "min symbols");
    auto* o_max = c_gen->add_option("--max-len", gen.corpus.max_len, "max symbols");
    auto* o_v = c_gen->add_option("--alphabet", gen.corpus.alphabet_size, "alphabet size");
    auto* o_dt = c_gen->add_option("--dim-true", gen.corpus.d_true, "true latent dim");
    auto* o_do = c_gen->add_option("--d-obs", gen.corpus.d_obs, "observation dim");
    auto* o_k = c_gen->add_option("--cepstra", gen.corpus.n_cepstra, "cepstra per frame");
    auto* o_rep = c_gen->add_option("--repeats", gen.corpus.text_repeats, "readings per text");
    auto* o_gseed = c_gen->add_option("--seed", gen.corpus.seed, "master seed");
    auto* o_proc = c_gen->add_option("--process", gen.process_path, "reuse an existing process");
    c_gen->callback([&] {
        binder.load(gen.config);
        binder.bind("n_utterances", o_n, gen.corpus.n_utterances);
        binder.bind("min_len", o_min, gen.corpus.min_len);
        binder.bind("max_len", o_max, gen.corpus.max_len);
        binder.bind("alphabet", o_v, gen.corpus.alphabet_size);
        binder.bind("d_true", o_dt, gen.corpus.d_true);
        binder.bind("d_obs", o_do, gen.corpus.d_obs);
        binder.bind("n_cepstra", o_k, gen.corpus.n_cepstra);
        binder.bind("text_repeats", o_rep, gen.corpus.text_repeats);
        binder.bind("seed", o_gseed, gen.corpus.seed);
        binder.bind("process", o_proc, gen.process_path);
        run = [&] { cmd_gen_data(gen, binder); };
    });

    // train ----------------------------------------------------------------
    auto* c_train = app.add_subcommand("train", "train a model variant");
    c_train->require_subcommand(1);
    auto add_vae_variant = [&](const char* name, bool autoregressive) {
        auto* c = c_train->add_subcommand(name, autoregressive
                                                    ? "FVAE with a concurrent AR prior"
                                                    : "FVAE with the N(0,I) prior");
        c->add_option("--out", vae.out, "output directory")->required();
        c->add_option("--config", vae.config, "JSON config file");
        c->add_option("--corpus", vae.corpus_path, "corpus file")->required();
        auto* od = c->add_option("--dim", vae.model.latent, "latent dimension");
        auto* oe = c->add_option("--emb", vae.model.emb, "symbol embedding dim");
        auto* oc = c->add_option("--context", vae.model.context, "context dim");
        auto* oh = c->add_option("--enc-hidden", vae.model.enc_hidden, "encoder hidden");
        auto* ohd = c->add_option("--dec-hidden", vae.model.dec_hidden, "decoder hidden");
        auto* ohp = c->add_option("--prior-hidden", vae.model.prior_hidden, "prior hidden");
        auto* os = c->add_option("--steps", vae.train.steps, "training steps");
        auto* ob = c->add_option("--batch", vae.train.batch, "batch size");
        auto* ol = c->add_option("--lr", vae.train.lr, "learning rate");
        auto* obeta = c->add_option("--beta", vae.train.beta, "KL weight");
        auto* ow = c->add_option("--warmup-frac", vae.train.warmup_frac, "KL warm-up fraction");
        auto* ov = c->add_option("--val-frac", vae.train.val_frac, "validation fraction");
        auto* osd = c->add_option("--seed", vae.train.seed, "master seed");
        auto* oi = c->add_option("--init-seed", vae.init_seed, "weight init seed");
        c->callback([&, autoregressive, od, oe, oc, oh, ohd, ohp, os, ob, ol, obeta, ow, ov, osd,
                     oi] {
            vae.autoregressive = autoregressive;
            binder.load(vae.config);
            binder.bind("dim", od, vae.model.latent);
            binder.bind("emb", oe, vae.model.emb);
            binder.bind("context", oc, vae.model.context);
            binder.bind("enc_hidden", oh, vae.model.enc_hidden);
            binder.bind("dec_hidden", ohd, vae.model.dec_hidden);
            binder.bind("prior_hidden", ohp, vae.model.prior_hidden);
            binder.bind("steps", os, vae.train.steps);
            binder.bind("batch", ob, vae.train.batch);
            binder.bind("lr", ol, vae.train.lr);
            binder.bind("beta", obeta, vae.train.beta);
            binder.bind("warmup_frac", ow, vae.train.warmup_frac);
            binder.bind("val_frac", ov, vae.train.val_frac);
            binder.bind("seed", osd, vae.train.seed);
            binder.bind("init_seed", oi, vae.init_seed);
            run = [&] { cmd_train_vae(vae, binder); };
        });
    };
    add_vae_variant("fvae", false);
    add_vae_variant("dvae", true);

    auto* c_ar = c_train->add_subcommand("ar-prior", "post-hoc AR prior on extracted latents");
    c_ar->add_option("--out", ar.out, "output directory")->required();
    c_ar->add_option("--config", ar.config, "JSON config file");
    c_ar->add_option("--latents", ar.latents_path, "latent dataset")->required();
    auto* a_h = c_ar->add_option("--hidden", ar.prior.hidden, "GRU hidden size");
    auto* a_s = c_ar->add_option("--steps", ar.train.steps, "training steps");
    auto* a_b = c_ar->add_option("--batch", ar.train.batch, "batch size");
    auto* a_l = c_ar->add_option("--lr", ar.train.lr, "learning rate");
    auto* a_v = c_ar->add_option("--val-frac", ar.train.val_frac, "validation fraction");
    auto* a_t = c_ar->add_option("--teacher", ar.teacher, "resample|stored|mean");
    auto* a_sd = c_ar->add_option("--seed", ar.train.seed, "master seed");
    auto* a_i = c_ar->add_option("--init-seed", ar.init_seed, "weight init seed");
    c_ar->callback([&] {
        binder.load(ar.config);
        binder.bind("hidden", a_h, ar.prior.hidden);
        binder.bind("steps", a_s, ar.train.steps);
        binder.bind("batch", a_b, ar.train.batch);
        binder.bind("lr", a_l, ar.train.lr);
        binder.bind("val_frac", a_v, ar.train.val_frac);
        binder.bind("teacher", a_t, ar.teacher);
        binder.bind("seed", a_sd, ar.train.seed);
        binder.bind("init_seed", a_i, ar.init_seed);
        run = [&] { cmd_train_ar(ar, binder); };
    });

    auto* c_flow = c_train->add_subcommand("flow", "conditional flow prior on latents");
    c_flow->add_option("--out", flow.out, "output directory")->required();
    c_flow->add_option("--config", flow.config, "JSON config file");
    c_flow->add_option("--latents", flow.latents_path, "latent dataset")->required();
    auto* f_bl = c_flow->add_option("--blocks", flow.flow.blocks, "actnorm/linear/coupling blocks");
    auto* f_ch = c_flow->add_option("--coupling-hidden", flow.flow.coupling_hidden,
                                    "coupling conditioner hidden");
    auto* f_cc = c_flow->add_option("--conv-channels", flow.flow.conv_channels,
                                    "temporal conv channels");
    auto* f_bh = c_flow->add_option("--base-hidden", flow.flow.base_hidden, "base RNN hidden");
    auto* f_s = c_flow->add_option("--steps", flow.train.steps, "training steps");
    auto* f_b = c_flow->add_option("--batch", flow.train.batch, "batch size");
    auto* f_l = c_flow->add_option("--lr", flow.train.lr, "learning rate");
    auto* f_v = c_flow->add_option("--val-frac", flow.train.val_frac, "validation fraction");
    auto* f_r = c_flow->add_flag("--resample-latents", flow.train.resample_latents,
                                 "draw fresh posterior samples per visit");
    auto* f_nd = c_flow->add_flag("--no-durations", flow.no_durations,
                                  "model latent channels only");
    auto* f_sd = c_flow->add_option("--seed", flow.train.seed, "master seed");
    auto* f_i = c_flow->add_option("--init-seed", flow.init_seed, "weight init seed");
    c_flow->callback([&] {
        binder.load(flow.config);
        binder.bind("blocks", f_bl, flow.flow.blocks);
        binder.bind("coupling_hidden", f_ch, flow.flow.coupling_hidden);
        binder.bind("conv_channels", f_cc, flow.flow.conv_channels);
        binder.bind("base_hidden", f_bh, flow.flow.base_hidden);
        binder.bind("steps", f_s, flow.train.steps);
        binder.bind("batch", f_b, flow.train.batch);
        binder.bind("lr", f_l, flow.train.lr);
        binder.bind("val_frac", f_v, flow.train.val_frac);
        binder.bind("resample_latents", f_r, flow.train.resample_latents);
        binder.bind("no_durations", f_nd, flow.no_durations);
        binder.bind("seed", f_sd, flow.train.seed);
        binder.bind("init_seed", f_i, flow.init_seed);
        run = [&] { cmd_train_flow(flow, binder); };
    });

    // finetune-prior ---------------------------------------------------------
    auto* c_ft = app.add_subcommand("finetune-prior", "fine-tune only the prior predictor");
    c_ft->add_option("--out", ft.out, "output directory")->required();
    c_ft->add_option("--config", ft.config, "JSON config file");
    c_ft->add_option("--checkpoint", ft.checkpoint_path, "fvae/dvae checkpoint")->required();
    c_ft->add_option("--corpus", ft.corpus_path, "corpus file")->required();
    auto* t_s = c_ft->add_option("--steps", ft.fc.steps, "training steps");
    auto* t_b = c_ft->add_option("--batch", ft.fc.batch, "batch size");
    auto* t_l = c_ft->add_option("--lr", ft.fc.lr, "learning rate");
    auto* t_v = c_ft->add_option("--val-frac", ft.fc.val_frac, "validation fraction");
    auto* t_t = c_ft->add_option("--teacher", ft.teacher, "resample|stored|mean");
    auto* t_sd = c_ft->add_option("--seed", ft.fc.seed, "master seed");
    c_ft->callback([&] {
        binder.load(ft.config);
        binder.bind("steps", t_s, ft.fc.steps);
        binder.bind("batch", t_b, ft.fc.batch);
        binder.bind("lr", t_l, ft.fc.lr);
        binder.bind("val_frac", t_v, ft.fc.val_frac);
        binder.bind("teacher", t_t, ft.teacher);
        binder.bind("seed", t_sd, ft.fc.seed);
        run = [&] { cmd_finetune(ft, binder); };
    });

    // extract-latents ---------------------------------------------------------
    auto* c_ex = app.add_subcommand("extract-latents", "save posterior latents for every utterance");
    c_ex->add_option("--out", ex.out, "output directory")->required();
    c_ex->add_option("--config", ex.config, "JSON config file");
    c_ex->add_option("--checkpoint", ex.checkpoint_path, "fvae/dvae checkpoint")->required();
    c_ex->add_option("--corpus", ex.corpus_path, "corpus file")->required();
    auto* e_sd = c_ex->add_option("--seed", ex.seed, "sampling seed");
    c_ex->callback([&] {
        binder.load(ex.config);
        binder.bind("seed", e_sd, ex.seed);
        run = [&] { cmd_extract(ex, binder); };
    });

    // sample ---------------------------------------------------------------
    auto* c_sm = app.add_subcommand("sample", "draw latent/duration samples and decode them");
    c_sm->add_option("--out", sm.out, "output directory")->required();
    c_sm->add_option("--config", sm.config, "JSON config file");
    c_sm->add_option("--checkpoint", sm.checkpoint_path, "prior checkpoint")->required();
    c_sm->add_option("--fvae", sm.fvae_path, "fvae checkpoint (decoder) for ar-prior/flow");
    c_sm->add_option("--corpus", sm.corpus_path, "corpus supplying texts")->required();
    c_sm->add_option("--process", sm.process_path, "true-process sidecar")->required();
    auto* s_tx = c_sm->add_option("--texts", sm.texts, "number of texts");
    auto* s_r = c_sm->add_option("--resamples", sm.resamples, "samples per text");
    auto* s_t = c_sm->add_option("--temperature", sm.temperatures, "sampling temperatures");
    auto* s_sd = c_sm->add_option("--seed", sm.seed, "master seed");
    auto* s_th = c_sm->add_option("--threads", sm.threads, "worker threads (0 = cores)");
    auto* s_mn = c_sm->add_option("--model-name", sm.model_name, "row label override");
    c_sm->callback([&] {
        binder.load(sm.config);
        binder.bind("texts", s_tx, sm.texts);
        binder.bind("resamples", s_r, sm.resamples);
        binder.bind("temperatures", s_t, sm.temperatures);
        binder.bind("seed", s_sd, sm.seed);
        binder.bind("threads", s_th, sm.threads);
        binder.bind("model_name", s_mn, sm.model_name);
        run = [&] { cmd_sample(sm, binder); };
    });

    // eval -------------------------------------------------------------------
    auto* c_ev = app.add_subcommand("eval", "compute metrics");
    c_ev->require_subcommand(1);
    auto* c_evr = c_ev->add_subcommand("recon", "posterior reconstruction MCD/FFE");
    c_evr->add_option("--out", ev.out, "output directory")->required();
    c_evr->add_option("--config", ev.config, "JSON config file");
    c_evr->add_option("--checkpoint", ev.checkpoint_path, "fvae/dvae checkpoint")->required();
    c_evr->add_option("--corpus", ev.corpus_path, "corpus file")->required();
    c_evr->add_option("--process", ev.process_path, "true-process sidecar")->required();
    auto* r_th = c_evr->add_option("--threads", ev.threads, "worker threads");
    c_evr->callback([&] {
        binder.load(ev.config);
        binder.bind("threads", r_th, ev.threads);
        run = [&] { cmd_eval_recon(ev, binder); };
    });
    auto* c_eve = c_ev->add_subcommand("express", "per-type prosody stddev");
    c_eve->add_option("--out", ev.out, "output directory")->required();
    c_eve->add_option("--config", ev.config, "JSON config file");
    c_eve->add_option("--samples", ev.sample_paths, "sample-set files");
    c_eve->add_option("--corpus", ev.corpus_path, "reference corpus for the real row");
    c_eve->callback([&] {
        binder.load(ev.config);
        run = [&] { cmd_eval_spread(ev, binder, false); };
    });
    auto* c_evd = c_ev->add_subcommand("diversity", "per-position prosody stddev");
    c_evd->add_option("--out", ev.out, "output directory")->required();
    c_evd->add_option("--config", ev.config, "JSON config file");
    c_evd->add_option("--samples", ev.sample_paths, "sample-set files");
    c_evd->callback([&] {
        binder.load(ev.config);
        run = [&] { cmd_eval_spread(ev, binder, true); };
    });

    // report -------------------------------------------------------------------
    auto* c_rp = app.add_subcommand("report", "assemble eval artifacts into tables");
    c_rp->add_option("--in", rp.in, "directory of eval_*.json files")->required();
    c_rp->add_option("--out", rp.out, "output directory")->required();
    c_rp->add_option("--config", rp.config, "JSON config file");
    c_rp->callback([&] {
        binder.load(rp.config);
        run = [&] { cmd_report(rp, binder); };
    });

    try {
        app.parse(argc, argv);
        if (run) run();
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
