#include "latlab/checkpoint.hpp"

#include "latlab/errors.hpp"
#include "latlab/io_util.hpp"

namespace latlab {

using nlohmann::json;

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const ParamStore& store) {
    json j;
    j["format_version"] = meta.format_version;
    j["kind"] = meta.kind;
    j["hyper"] = meta.hyper;
    j["step"] = meta.step;
    j["rng"] = json{{"seed", meta.rng_seed}, {"counter", meta.rng_counter}};
    j["prior_mode"] = meta.prior_mode;
    json params = json::object();
    for (const auto& [name, p] : store) {
        params[name] = json{{"rows", p.value.rows()},
                            {"cols", p.value.cols()},
                            {"value", doubles_to_b64(p.value.data(), p.value.size())},
                            {"m", doubles_to_b64(p.m.data(), p.m.size())},
                            {"v", doubles_to_b64(p.v.data(), p.v.size())},
                            {"t", p.step},
                            {"trainable", p.trainable}};
    }
    j["params"] = std::move(params);
    write_file(path, j.dump() + "\n");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    const std::string text = read_file(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError("checkpoint parse error: " + std::string(e.what()), 1,
                         e.byte > 0 ? e.byte - 1 : 0);
    }
    LoadedCheckpoint out;
    try {
        out.meta.format_version = j.at("format_version").get<int>();
        if (out.meta.format_version != 1) {
            throw DataError("checkpoint format version mismatch in " + path);
        }
        out.meta.kind = j.at("kind").get<std::string>();
        out.meta.hyper = j.at("hyper");
        out.meta.step = j.at("step").get<std::int64_t>();
        out.meta.rng_seed = j.at("rng").at("seed").get<std::uint64_t>();
        out.meta.rng_counter = j.at("rng").at("counter").get<std::uint64_t>();
        out.meta.prior_mode = j.at("prior_mode").get<std::string>();
        for (const auto& [name, pj] : j.at("params").items()) {
            const int rows = pj.at("rows").get<int>();
            const int cols = pj.at("cols").get<int>();
            Param& p = out.store.create(name, rows, cols);
            auto fill = [&](Tensor& t, const char* key) {
                std::vector<double> vals = doubles_from_b64(pj.at(key).get<std::string>());
                if (vals.size() != t.size()) {
                    throw DataError("checkpoint param '" + name + "': size mismatch for " + key);
                }
                t = Tensor(rows, cols, std::move(vals));
            };
            fill(p.value, "value");
            fill(p.m, "m");
            fill(p.v, "v");
            p.step = pj.at("t").get<std::int64_t>();
            p.trainable = pj.at("trainable").get<bool>();
        }
    } catch (const json::exception& e) {
        throw DataError("checkpoint record error in " + path + ": " + e.what());
    }
    return out;
}

}  // namespace latlab
