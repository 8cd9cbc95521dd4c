#pragma once

#include <cstdint>
#include <vector>

#include "latlab/rng.hpp"
#include "latlab/tensor.hpp"

namespace latlab {

inline constexpr double kLn2Pi = 1.8378770664093454836;

// Per-step isotropic Gaussian parameters over an (N x D) latent sequence.
// log_std is the stored parameterization; std = exp(log_std) is always > 0.
struct GaussianSeq {
    Tensor mean;
    Tensor log_std;

    GaussianSeq() = default;
    GaussianSeq(Tensor mean_in, Tensor log_std_in);

    int steps() const { return mean.rows(); }
    int dims() const { return mean.cols(); }

    static GaussianSeq standard(int steps, int dims) {
        return GaussianSeq(Tensor(steps, dims, 0.0), Tensor(steps, dims, 0.0));
    }
};

struct KlResult {
    std::vector<double> per_step;
    double total = 0.0;
};

// Closed-form KL(q || p) for diagonal Gaussians, per latent dimension
//   log(sigma_p / sigma_q) + (sigma_q^2 + (mu_p - mu_q)^2) / (2 sigma_p^2) - 1/2
// summed over dimensions per step.
KlResult gaussian_kl(const GaussianSeq& q, const GaussianSeq& p);

struct LogProbResult {
    std::vector<double> per_step;
    double total = 0.0;
};

LogProbResult gaussian_log_prob(const Tensor& x, const GaussianSeq& g);

// sample = mean + temperature * std * eps, eps ~ N(0, I).
// temperature = 0 is permitted and returns the mean exactly; negative
// temperature is an error.
Tensor gaussian_sample(const GaussianSeq& g, double temperature, RngStream& rng);

struct McKlEstimate {
    double estimate = 0.0;
    double std_error = 0.0;
    bool se_valid = false;  // false when n_samples < 2
};

// Monte Carlo E_q[log q - log p]; the independent oracle for gaussian_kl.
McKlEstimate kl_mc_estimate(const GaussianSeq& q, const GaussianSeq& p, std::int64_t n_samples,
                            RngStream& rng);

}  // namespace latlab
