#pragma once

#include <string>
#include <vector>

#include "latlab/tensor.hpp"

namespace latlab {

// One utterance's extracted posterior: per-phoneme Gaussian parameters, one
// drawn sample, ground-truth durations, and the text-encoder context.
struct LatentRecord {
    std::string id;
    Tensor mean;     // N x D
    Tensor std;      // N x D, strictly positive
    Tensor sample;   // N x D
    std::vector<int> durations;
    Tensor context;  // N x C
};

struct LatentDataset {
    int dim = 0;
    int context_dim = 0;
    double mean_posterior_std = 0.0;  // posterior-collapse diagnostic
    std::vector<LatentRecord> records;

    void validate() const;
};

void save_latents(const LatentDataset& ds, const std::string& path);
LatentDataset load_latents(const std::string& path);

}  // namespace latlab
