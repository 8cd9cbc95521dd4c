#include "latlab/latents.hpp"

#include <sstream>

#include <json.hpp>

#include "latlab/errors.hpp"
#include "latlab/io_util.hpp"

namespace latlab {

using nlohmann::json;

void LatentDataset::validate() const {
    for (const LatentRecord& r : records) {
        if (r.mean.cols() != dim || !r.mean.same_shape(r.std) || !r.mean.same_shape(r.sample) ||
            r.context.cols() != context_dim || r.context.rows() != r.mean.rows() ||
            static_cast<int>(r.durations.size()) != r.mean.rows()) {
            throw DataError("latent record '" + r.id + "': inconsistent shapes");
        }
        for (int i = 0; i < r.std.rows(); ++i) {
            for (int j = 0; j < r.std.cols(); ++j) {
                if (!(r.std.at(i, j) > 0.0)) {
                    throw DataError("latent record '" + r.id + "': non-positive std");
                }
            }
        }
        for (int d : r.durations) {
            if (d < 1) throw DataError("latent record '" + r.id + "': duration < 1");
        }
    }
}

void save_latents(const LatentDataset& ds, const std::string& path) {
    ds.validate();
    std::ostringstream out;
    json header;
    header["format_version"] = 1;
    header["kind"] = "latlab-latents";
    header["dim"] = ds.dim;
    header["context_dim"] = ds.context_dim;
    header["mean_posterior_std"] = ds.mean_posterior_std;
    header["n_records"] = ds.records.size();
    out << header.dump() << "\n";
    for (const LatentRecord& r : ds.records) {
        json j;
        j["id"] = r.id;
        j["means"] = tensor_to_json(r.mean);
        j["stds"] = tensor_to_json(r.std);
        j["sample"] = tensor_to_json(r.sample);
        j["durations"] = r.durations;
        j["context"] = tensor_to_json(r.context);
        out << j.dump() << "\n";
    }
    write_file(path, out.str());
}

LatentDataset load_latents(const std::string& path) {
    const std::string text = read_file(path);
    LatentDataset ds;
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
                throw ParseError("latents parse error: " + std::string(e.what()), line_no,
                                 pos + (e.byte > 0 ? e.byte - 1 : 0));
            }
            try {
                if (!have_header) {
                    if (j.at("kind").get<std::string>() != "latlab-latents") {
                        throw DataError("not a latent-dataset file: " + path);
                    }
                    if (j.at("format_version").get<int>() != 1) {
                        throw DataError("latent-dataset format version mismatch");
                    }
                    ds.dim = j.at("dim").get<int>();
                    ds.context_dim = j.at("context_dim").get<int>();
                    ds.mean_posterior_std = j.at("mean_posterior_std").get<double>();
                    expected = j.at("n_records").get<std::size_t>();
                    have_header = true;
                } else {
                    LatentRecord r;
                    r.id = j.at("id").get<std::string>();
                    r.mean = tensor_from_json(j.at("means"), "latents.means");
                    r.std = tensor_from_json(j.at("stds"), "latents.stds");
                    r.sample = tensor_from_json(j.at("sample"), "latents.sample");
                    r.durations = j.at("durations").get<std::vector<int>>();
                    r.context = tensor_from_json(j.at("context"), "latents.context");
                    ds.records.push_back(std::move(r));
                }
            } catch (const json::exception& e) {
                throw ParseError("latents record error: " + std::string(e.what()), line_no, pos);
            }
        }
        pos = end + 1;
    }
    if (!have_header) throw DataError("latent-dataset file has no header: " + path);
    if (ds.records.size() != expected) {
        throw ParseError("latent dataset truncated: expected " + std::to_string(expected) +
                             " records, found " + std::to_string(ds.records.size()),
                         line_no, text.size());
    }
    ds.validate();
    return ds;
}

}  // namespace latlab
