#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "latlab/errors.hpp"
#include "latlab/gaussian.hpp"
#include "test_util.hpp"

using namespace latlab;
using testutil::random_tensor;

namespace {

GaussianSeq scalar_gauss(double mean, double std) {
    return GaussianSeq(Tensor(1, 1, mean), Tensor(1, 1, std::log(std)));
}

GaussianSeq random_gauss(int n, int d, RngStream& rng) {
    Tensor mean = random_tensor(n, d, rng, 2.0);
    Tensor log_std(n, d);
    for (std::size_t i = 0; i < log_std.size(); ++i) log_std.data()[i] = rng.normal() * 0.7;
    return GaussianSeq(std::move(mean), std::move(log_std));
}

}  // namespace

TEST_CASE("kl of identical distributions is zero per step") {
    RngStream rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        GaussianSeq q = random_gauss(1 + static_cast<int>(rng.next_below(6)),
                                     1 + static_cast<int>(rng.next_below(5)), rng);
        const KlResult r = gaussian_kl(q, q);
        for (double v : r.per_step) CHECK(std::fabs(v) <= 1e-12);
        CHECK(std::fabs(r.total) <= 1e-12);
    }
}

TEST_CASE("kl closed form matches hand values") {
    // N(0,1) vs N(0,2): ln 2 + 1/8 - 1/2
    const double expect = std::log(2.0) + 0.125 - 0.5;
    const KlResult r = gaussian_kl(scalar_gauss(0.0, 1.0), scalar_gauss(0.0, 2.0));
    CHECK(r.total == doctest::Approx(expect).epsilon(1e-12));
    CHECK(r.total == doctest::Approx(0.318147).epsilon(1e-5));
    // N(1,1) vs N(0,1): 1/2
    CHECK(gaussian_kl(scalar_gauss(1.0, 1.0), scalar_gauss(0.0, 1.0)).total ==
          doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("kl hand values agree with the monte carlo oracle") {
    RngStream rng(77);
    {
        GaussianSeq q = scalar_gauss(0.0, 1.0), p = scalar_gauss(0.0, 2.0);
        const McKlEstimate mc = kl_mc_estimate(q, p, 1000000, rng);
        const double closed = gaussian_kl(q, p).total;
        CHECK(std::fabs(mc.estimate - closed) <= 3.0 * mc.std_error);
    }
    {
        GaussianSeq q = scalar_gauss(1.0, 1.0), p = scalar_gauss(0.0, 1.0);
        const McKlEstimate mc = kl_mc_estimate(q, p, 1000000, rng);
        CHECK(std::fabs(mc.estimate - 0.5) <= 3.0 * mc.std_error);
    }
}

TEST_CASE("kl is non-negative for random pairs") {
    RngStream rng(5);
    for (int rep = 0; rep < 200; ++rep) {
        const int n = 1 + static_cast<int>(rng.next_below(5));
        const int d = 1 + static_cast<int>(rng.next_below(4));
        GaussianSeq q = random_gauss(n, d, rng);
        GaussianSeq p = random_gauss(n, d, rng);
        CHECK(gaussian_kl(q, p).total >= -1e-12);
    }
}

TEST_CASE("kl closed form within 3 SE of monte carlo for random pairs") {
    RngStream rng(42);
    int failures = 0;
    for (int rep = 0; rep < 100; ++rep) {
        GaussianSeq q = random_gauss(1, 2, rng);
        GaussianSeq p = random_gauss(1, 2, rng);
        const double closed = gaussian_kl(q, p).total;
        const McKlEstimate mc = kl_mc_estimate(q, p, 20000, rng);
        if (std::fabs(mc.estimate - closed) > 3.0 * mc.std_error) ++failures;
    }
    // 3-sigma misses happen ~0.3% of the time per pair.
    CHECK(failures <= 2);
}

TEST_CASE("kl shape mismatch raises a shape error naming both shapes") {
    GaussianSeq q = GaussianSeq::standard(2, 3);
    GaussianSeq p = GaussianSeq::standard(2, 4);
    CHECK_THROWS_AS(gaussian_kl(q, p), ShapeError);
    try {
        gaussian_kl(q, p);
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("2x3") != std::string::npos);
        CHECK(msg.find("2x4") != std::string::npos);
    }
}

TEST_CASE("log prob hand values") {
    const double half_ln2pi = 0.5 * kLn2Pi;
    {
        // x at the mean of a unit Gaussian
        Tensor x(1, 1, 0.3);
        GaussianSeq g(Tensor(1, 1, 0.3), Tensor(1, 1, 0.0));
        CHECK(gaussian_log_prob(x, g).total == doctest::Approx(-half_ln2pi).epsilon(1e-12));
        CHECK(gaussian_log_prob(x, g).total == doctest::Approx(-0.918939).epsilon(1e-5));
    }
    {
        // peak value scales as -ln sigma
        for (double sigma : {0.25, 1.0, 3.0}) {
            Tensor x(1, 1, 1.7);
            GaussianSeq g(Tensor(1, 1, 1.7), Tensor(1, 1, std::log(sigma)));
            CHECK(gaussian_log_prob(x, g).total ==
                  doctest::Approx(-half_ln2pi - std::log(sigma)).epsilon(1e-12));
        }
    }
    {
        // one std from the mean
        Tensor x(1, 1, 1.0);
        GaussianSeq g(Tensor(1, 1, 0.0), Tensor(1, 1, 0.0));
        CHECK(gaussian_log_prob(x, g).total ==
              doctest::Approx(-half_ln2pi - 0.5).epsilon(1e-12));
    }
}

TEST_CASE("log prob totals sum per-step values and check shapes") {
    RngStream rng(9);
    GaussianSeq g = random_gauss(4, 3, rng);
    Tensor x = random_tensor(4, 3, rng);
    const LogProbResult r = gaussian_log_prob(x, g);
    double acc = 0.0;
    for (double v : r.per_step) acc += v;
    CHECK(r.total == doctest::Approx(acc).epsilon(1e-12));
    CHECK_THROWS_AS(gaussian_log_prob(random_tensor(4, 2, rng), g), ShapeError);
}

TEST_CASE("density integrates to one") {
    const double mu = 0.7, sigma = 1.9;
    GaussianSeq g(Tensor(1, 1, mu), Tensor(1, 1, std::log(sigma)));
    const int points = 10000;
    const double lo = mu - 8.0 * sigma, hi = mu + 8.0 * sigma;
    const double dx = (hi - lo) / (points - 1);
    double integral = 0.0;
    for (int i = 0; i < points; ++i) {
        const double x = lo + i * dx;
        const double p = std::exp(gaussian_log_prob(Tensor(1, 1, x), g).total);
        integral += (i == 0 || i == points - 1) ? 0.5 * p : p;
    }
    integral *= dx;
    CHECK(integral == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("sampling at temperature zero returns the mean exactly") {
    RngStream data_rng(3);
    GaussianSeq g = random_gauss(5, 4, data_rng);
    RngStream rng(1);
    const Tensor s = gaussian_sample(g, 0.0, rng);
    CHECK(max_abs_diff(s, g.mean) == 0.0);
}

TEST_CASE("negative temperature is rejected") {
    GaussianSeq g = GaussianSeq::standard(1, 1);
    RngStream rng(1);
    CHECK_THROWS_AS(gaussian_sample(g, -0.1, rng), UsageError);
}

TEST_CASE("sampling std scales with temperature") {
    GaussianSeq g = GaussianSeq::standard(1, 1);
    RngStream rng(123);
    const int n = 100000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = gaussian_sample(g, 0.5, rng).at(0, 0);
        sum += v;
        sum_sq += v * v;
    }
    const double mean = sum / n;
    const double std = std::sqrt(sum_sq / n - mean * mean);
    CHECK(std == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("sampling is byte-identical for identical seeds") {
    RngStream data_rng(8);
    GaussianSeq g = random_gauss(6, 3, data_rng);
    RngStream a(99), b(99);
    const Tensor sa = gaussian_sample(g, 0.8, a);
    const Tensor sb = gaussian_sample(g, 0.8, b);
    CHECK(sa == sb);
}

TEST_CASE("mc estimate of identical pair is within 3 SE of zero") {
    RngStream data_rng(4);
    GaussianSeq q = random_gauss(2, 3, data_rng);
    RngStream rng(17);
    const McKlEstimate mc = kl_mc_estimate(q, q, 50000, rng);
    CHECK(std::fabs(mc.estimate) <= std::max(3.0 * mc.std_error, 1e-12));
}

TEST_CASE("mc estimate with one sample reports SE unavailable") {
    GaussianSeq q = scalar_gauss(0.0, 1.0), p = scalar_gauss(1.0, 2.0);
    RngStream rng(2);
    const McKlEstimate mc = kl_mc_estimate(q, p, 1, rng);
    CHECK(std::isfinite(mc.estimate));
    CHECK_FALSE(mc.se_valid);
    CHECK(mc.std_error == 0.0);
    CHECK_THROWS_AS(kl_mc_estimate(q, p, 0, rng), UsageError);
}

TEST_CASE("rng substreams and restore are deterministic") {
    RngStream a(5);
    RngStream b(5);
    for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
    RngStream c = a.substream(3);
    RngStream d = b.substream(3);
    CHECK(c.next_u64() == d.next_u64());
    RngStream restored = RngStream::restore(a.seed(), a.counter());
    CHECK(restored.next_u64() == a.next_u64());
}
