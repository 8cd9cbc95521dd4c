#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "latlab/graph.hpp"

namespace latlab {

// Versioned JSON container for a trained model: hyperparameters, every
// ParamStore entry (value + Adam state), training step, and RNG state.
// Loading reproduces bit-identical forward outputs.
struct CheckpointMeta {
    int format_version = 1;
    std::string kind;  // "fvae", "dvae", "ar-prior", "flow"
    nlohmann::json hyper;
    std::int64_t step = 0;
    std::uint64_t rng_seed = 0;
    std::uint64_t rng_counter = 0;
    std::string prior_mode;  // "standard-normal" or "autoregressive"
};

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const ParamStore& store);

struct LoadedCheckpoint {
    CheckpointMeta meta;
    ParamStore store;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace latlab
