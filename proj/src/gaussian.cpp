#include "latlab/gaussian.hpp"

#include <cmath>

#include "latlab/errors.hpp"

namespace latlab {

namespace {

void require_pair(const GaussianSeq& q, const GaussianSeq& p, const char* where) {
    if (!q.mean.same_shape(p.mean)) {
        throw ShapeError(std::string(where) + ": shape mismatch " + q.mean.shape_str() + " vs " +
                         p.mean.shape_str());
    }
}

void require_finite(double v, const char* op) {
    if (!std::isfinite(v)) throw NumericError(op, "result is not finite");
}

}  // namespace

GaussianSeq::GaussianSeq(Tensor mean_in, Tensor log_std_in)
    : mean(std::move(mean_in)), log_std(std::move(log_std_in)) {
    require_same_shape(mean, log_std, "GaussianSeq");
    if (mean.rows() < 1 || mean.cols() < 1) {
        throw ShapeError("GaussianSeq: shape must be at least 1x1, got " + mean.shape_str());
    }
}

KlResult gaussian_kl(const GaussianSeq& q, const GaussianSeq& p) {
    require_pair(q, p, "gaussian_kl");
    const int n = q.steps(), d = q.dims();
    KlResult out;
    out.per_step.resize(n, 0.0);
    for (int i = 0; i < n; ++i) {
        double step = 0.0;
        for (int j = 0; j < d; ++j) {
            const double lq = q.log_std.at(i, j), lp = p.log_std.at(i, j);
            const double dm = p.mean.at(i, j) - q.mean.at(i, j);
            const double var_q = std::exp(2.0 * lq);
            const double inv_var_p = std::exp(-2.0 * lp);
            step += (lp - lq) + 0.5 * (var_q + dm * dm) * inv_var_p - 0.5;
        }
        require_finite(step, "gaussian_kl");
        out.per_step[i] = step;
        out.total += step;
    }
    require_finite(out.total, "gaussian_kl");
    return out;
}

LogProbResult gaussian_log_prob(const Tensor& x, const GaussianSeq& g) {
    require_same_shape(x, g.mean, "gaussian_log_prob");
    const int n = g.steps(), d = g.dims();
    LogProbResult out;
    out.per_step.resize(n, 0.0);
    for (int i = 0; i < n; ++i) {
        double step = 0.0;
        for (int j = 0; j < d; ++j) {
            const double l = g.log_std.at(i, j);
            const double z = (x.at(i, j) - g.mean.at(i, j)) * std::exp(-l);
            step += -0.5 * kLn2Pi - l - 0.5 * z * z;
        }
        require_finite(step, "gaussian_log_prob");
        out.per_step[i] = step;
        out.total += step;
    }
    require_finite(out.total, "gaussian_log_prob");
    return out;
}

Tensor gaussian_sample(const GaussianSeq& g, double temperature, RngStream& rng) {
    if (temperature < 0.0) throw UsageError("gaussian_sample: temperature must be >= 0");
    const int n = g.steps(), d = g.dims();
    Tensor out(n, d);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
            if (temperature == 0.0) {
                out.at(i, j) = g.mean.at(i, j);
            } else {
                out.at(i, j) =
                    g.mean.at(i, j) + temperature * std::exp(g.log_std.at(i, j)) * rng.normal();
            }
            require_finite(out.at(i, j), "gaussian_sample");
        }
    }
    return out;
}

McKlEstimate kl_mc_estimate(const GaussianSeq& q, const GaussianSeq& p, std::int64_t n_samples,
                            RngStream& rng) {
    require_pair(q, p, "kl_mc_estimate");
    if (n_samples < 1) throw UsageError("kl_mc_estimate: n_samples must be >= 1");
    const int n = q.steps(), d = q.dims();
    double sum = 0.0, sum_sq = 0.0;
    for (std::int64_t s = 0; s < n_samples; ++s) {
        double val = 0.0;
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < d; ++j) {
                const double lq = q.log_std.at(i, j), lp = p.log_std.at(i, j);
                const double sq = std::exp(lq);
                const double x = q.mean.at(i, j) + sq * rng.normal();
                const double zq = (x - q.mean.at(i, j)) / sq;
                const double zp = (x - p.mean.at(i, j)) * std::exp(-lp);
                val += (-lq - 0.5 * zq * zq) - (-lp - 0.5 * zp * zp);
            }
        }
        sum += val;
        sum_sq += val * val;
    }
    McKlEstimate out;
    const double mean = sum / static_cast<double>(n_samples);
    out.estimate = mean;
    require_finite(out.estimate, "kl_mc_estimate");
    if (n_samples >= 2) {
        const double var =
            (sum_sq - sum * sum / static_cast<double>(n_samples)) / (n_samples - 1.0);
        out.std_error = std::sqrt(std::max(0.0, var) / static_cast<double>(n_samples));
        out.se_valid = true;
    }
    return out;
}

}  // namespace latlab
