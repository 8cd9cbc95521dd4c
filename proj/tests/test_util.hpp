#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "latlab/graph.hpp"
#include "latlab/rng.hpp"

namespace latlab::testutil {

struct FdReport {
    double frac_ok = 0.0;    // fraction of coordinates with rel err <= tol
    double worst_rel = 0.0;
    std::size_t coords = 0;
};

// Central finite differences against the tape gradients for every coordinate
// of the named parameters. `build_loss` must construct the full forward pass
// from the current store contents.
inline FdReport finite_diff_check(ParamStore& store, const std::vector<std::string>& names,
                                  const std::function<Var(Tape&)>& build_loss, double h = 1e-5,
                                  double tol = 1e-4) {
    store.zero_grads();
    {
        Tape t(&store);
        Var loss = build_loss(t);
        t.backward(loss);
    }
    auto eval = [&]() {
        Tape t(&store);
        return t.value(build_loss(t)).at(0, 0);
    };
    FdReport rep;
    std::size_t ok = 0;
    for (const std::string& name : names) {
        Param& p = store.at(name);
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double saved = p.value.data()[i];
            p.value.data()[i] = saved + h;
            const double up = eval();
            p.value.data()[i] = saved - h;
            const double down = eval();
            p.value.data()[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double ad = p.grad.data()[i];
            const double rel = std::fabs(ad - fd) / std::max({std::fabs(ad), std::fabs(fd), 1e-4});
            rep.worst_rel = std::max(rep.worst_rel, rel);
            if (rel <= tol) ++ok;
            ++rep.coords;
        }
    }
    rep.frac_ok = rep.coords ? static_cast<double>(ok) / rep.coords : 1.0;
    store.zero_grads();
    return rep;
}

inline latlab::Tensor random_tensor(int rows, int cols, RngStream& rng, double scale = 1.0) {
    latlab::Tensor t(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = scale * rng.normal();
    return t;
}

// Fresh scratch directory under the working directory.
inline std::string scratch_dir(const std::string& name) {
    const std::filesystem::path p = std::filesystem::path("latlab_test_tmp") / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

inline bool files_identical(const std::string& a, const std::string& b) {
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    if (!fa || !fb) return false;
    std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    return sa == sb;
}

}  // namespace latlab::testutil
