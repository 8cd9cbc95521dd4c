#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "latlab/rng.hpp"
#include "latlab/tensor.hpp"

namespace latlab {

// One named trainable array with its gradient accumulator and Adam state.
struct Param {
    Tensor value;
    Tensor grad;
    Tensor m;  // first moment
    Tensor v;  // second moment
    std::int64_t step = 0;
    bool trainable = true;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class ParamStore {
public:
    Param& create(const std::string& name, int rows, int cols);
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) > 0; }
    std::vector<std::string> names(const std::string& prefix = "") const;
    std::size_t count() const { return params_.size(); }

    void zero_grads();
    // Applies one bias-corrected Adam update to every trainable parameter whose
    // name starts with prefix (all when empty), then zeroes those gradients.
    void adam_step(const AdamConfig& cfg, const std::string& prefix = "");

    void mark_grads_pending() { grads_pending_ = true; }
    bool grads_pending() const { return grads_pending_; }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::map<std::string, Param> params_;  // ordered: deterministic iteration
    bool grads_pending_ = false;
};

using Var = std::int32_t;

// A (mean, log_std) node pair parameterizing a Gaussian sequence.
struct GaussVars {
    Var mean;
    Var log_std;
};

// One logged training value: (step, term name, value).
struct TraceRow {
    std::int64_t step;
    std::string term;
    double value;
};

// Eagerly evaluated computation tape for one scalar loss. Forward values are
// computed at op-creation time; backward() may run exactly once and flushes
// parameter gradients into the owning ParamStore. Single-threaded.
class Tape {
public:
    explicit Tape(ParamStore* store = nullptr) : store_(store) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor t);
    Var constant_scalar(double v) { return constant(Tensor(1, 1, v)); }
    Var param(const std::string& name);

    const Tensor& value(Var v) const { return nodes_[v].val; }
    Tensor& grad(Var v) { return nodes_[v].grad; }
    std::size_t node_count() const { return nodes_.size(); }

    // Runs reverse-mode accumulation from a 1x1 loss node; errors if the loss
    // is not scalar or if backward already ran on this tape.
    void backward(Var loss);

    // ---- primitive ops (each has a finite-difference test) ----
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var affine(Var a, double k, double c);  // k*a + c
    Var matmul_op(Var a, Var b);
    Var add_row(Var m, Var row);  // broadcast 1xD row over rows
    Var mul_row(Var m, Var row);
    Var tanh_op(Var a);
    Var sigmoid_op(Var a);
    Var exp_op(Var a);
    Var log_op(Var a);
    Var softplus_op(Var a);
    Var concat_cols(Var a, Var b);
    Var slice_cols(Var a, int c0, int c1);
    Var stack_rows(const std::vector<Var>& rows);
    Var row(Var a, int r);
    Var shift_rows(Var a, int delta);  // row i of output = row i-delta of input, zero pad
    Var scale_rows(Var a, const std::vector<double>& w);
    Var select_rows(Var table, const std::vector<int>& indices);
    Var transpose_op(Var a);
    Var diag_row(Var a);  // 1xD -> DxD diagonal
    Var sum(Var a);       // 1x1
    Var mean_all(Var a);  // 1x1

    // ---- composites ----
    Var linear(Var x, Var w, Var b) { return add_row(matmul_op(x, w), b); }
    Var squared_error(Var a, Var b);  // sum((a-b)^2), 1x1
    // Total KL(q || p) over all steps and dims, 1x1.
    Var gaussian_kl_total(Var mean_q, Var log_std_q, Var mean_p, Var log_std_p);
    // Total diagonal-Gaussian log density of x (any node) under (mean, log_std).
    Var gaussian_log_prob_total(Var x, Var mean, Var log_std);

private:
    struct Node {
        Tensor val;
        Tensor grad;
        std::function<void(Tape&, Var)> back;  // empty for leaves
        const char* op = "";
    };

    Var push(Tensor val, const char* op, std::function<void(Tape&, Var)> back);
    void check_finite(const Tensor& t, const char* op) const;

    std::vector<Node> nodes_;
    ParamStore* store_ = nullptr;
    std::map<std::string, Var> param_cache_;
    bool backward_done_ = false;
};

// Fills a tensor with uniform values in (-scale, scale).
void init_uniform(Tensor& t, double scale, RngStream& rng);
// Xavier-style range from fan-in/fan-out.
void init_xavier(Tensor& t, RngStream& rng);

}  // namespace latlab
