#include "latlab/graph.hpp"

#include <cmath>

#include "latlab/errors.hpp"
#include "latlab/gaussian.hpp"

namespace latlab {

// ---------------------------------------------------------------------------
// ParamStore

Param& ParamStore::create(const std::string& name, int rows, int cols) {
    if (params_.count(name)) throw UsageError("ParamStore: duplicate parameter '" + name + "'");
    Param p;
    p.value = Tensor(rows, cols, 0.0);
    p.grad = Tensor(rows, cols, 0.0);
    p.m = Tensor(rows, cols, 0.0);
    p.v = Tensor(rows, cols, 0.0);
    return params_.emplace(name, std::move(p)).first->second;
}

Param& ParamStore::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw UsageError("ParamStore: unknown parameter '" + name + "'");
    return it->second;
}

const Param& ParamStore::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw UsageError("ParamStore: unknown parameter '" + name + "'");
    return it->second;
}

std::vector<std::string> ParamStore::names(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [name, p] : params_) {
        if (name.rfind(prefix, 0) == 0) out.push_back(name);
    }
    return out;
}

void ParamStore::zero_grads() {
    for (auto& [name, p] : params_) p.grad.fill(0.0);
    grads_pending_ = false;
}

void ParamStore::adam_step(const AdamConfig& cfg, const std::string& prefix) {
    if (cfg.lr <= 0.0) throw UsageError("adam_step: lr must be > 0");
    if (!grads_pending_) throw UsageError("adam_step: no gradients accumulated since last step");
    for (auto& [name, p] : params_) {
        if (!p.trainable) continue;
        if (name.rfind(prefix, 0) != 0) continue;
        p.step += 1;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.step));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.step));
        double* theta = p.value.data();
        double* g = p.grad.data();
        double* m = p.m.data();
        double* v = p.v.data();
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            theta[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
            g[i] = 0.0;
        }
        if (!p.value.all_finite()) throw NumericError("adam_step", "parameter '" + name + "'");
    }
    grads_pending_ = false;
}

// ---------------------------------------------------------------------------
// Tape

void Tape::check_finite(const Tensor& t, const char* op) const {
    if (!t.all_finite()) throw NumericError(op, "output of shape " + t.shape_str());
}

Var Tape::push(Tensor val, const char* op, std::function<void(Tape&, Var)> back) {
    check_finite(val, op);
    Node n;
    n.val = std::move(val);
    n.grad = Tensor(n.val.rows(), n.val.cols(), 0.0);
    n.back = std::move(back);
    n.op = op;
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
}

Var Tape::constant(Tensor t) { return push(std::move(t), "constant", {}); }

Var Tape::param(const std::string& name) {
    if (!store_) throw UsageError("Tape::param: tape has no ParamStore");
    auto it = param_cache_.find(name);
    if (it != param_cache_.end()) return it->second;
    Var v = push(store_->at(name).value, "param", {});
    param_cache_.emplace(name, v);
    return v;
}

void Tape::backward(Var loss) {
    if (backward_done_) throw UsageError("Tape::backward: backward already ran on this tape");
    const Tensor& lv = nodes_[loss].val;
    if (lv.rows() != 1 || lv.cols() != 1) {
        throw UsageError("Tape::backward: loss must be scalar, got " + lv.shape_str());
    }
    backward_done_ = true;
    nodes_[loss].grad.at(0, 0) = 1.0;
    for (Var i = static_cast<Var>(nodes_.size()) - 1; i >= 0; --i) {
        if (nodes_[i].back) nodes_[i].back(*this, i);
    }
    if (store_) {
        for (const auto& [name, var] : param_cache_) {
            axpy(store_->at(name).grad, 1.0, nodes_[var].grad);
        }
        if (!param_cache_.empty()) store_->mark_grads_pending();
    }
}

// ---------------------------------------------------------------------------
// primitive ops

Var Tape::add(Var a, Var b) {
    require_same_shape(value(a), value(b), "add");
    Tensor out = value(a);
    axpy(out, 1.0, value(b));
    return push(std::move(out), "add", [a, b](Tape& t, Var self) {
        axpy(t.grad(a), 1.0, t.grad(self));
        axpy(t.grad(b), 1.0, t.grad(self));
    });
}

Var Tape::sub(Var a, Var b) {
    require_same_shape(value(a), value(b), "sub");
    Tensor out = value(a);
    axpy(out, -1.0, value(b));
    return push(std::move(out), "sub", [a, b](Tape& t, Var self) {
        axpy(t.grad(a), 1.0, t.grad(self));
        axpy(t.grad(b), -1.0, t.grad(self));
    });
}

Var Tape::mul(Var a, Var b) {
    Tensor out = hadamard(value(a), value(b));
    return push(std::move(out), "mul", [a, b](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad(a);
        Tensor& gb = t.grad(b);
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga.data()[i] += g.data()[i] * bv.data()[i];
            gb.data()[i] += g.data()[i] * av.data()[i];
        }
    });
}

Var Tape::affine(Var a, double k, double c) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = k * out.data()[i] + c;
    return push(std::move(out), "affine",
                [a, k](Tape& t, Var self) { axpy(t.grad(a), k, t.grad(self)); });
}

Var Tape::matmul_op(Var a, Var b) {
    Tensor out = matmul(value(a), value(b));
    return push(std::move(out), "matmul", [a, b](Tape& t, Var self) {
        axpy(t.grad(a), 1.0, matmul_nt(t.grad(self), t.value(b)));
        axpy(t.grad(b), 1.0, matmul_tn(t.value(a), t.grad(self)));
    });
}

Var Tape::add_row(Var m, Var r) {
    const Tensor& mv = value(m);
    const Tensor& rv = value(r);
    if (rv.rows() != 1 || rv.cols() != mv.cols()) {
        throw ShapeError("add_row: shape mismatch " + mv.shape_str() + " vs " + rv.shape_str());
    }
    Tensor out = mv;
    for (int i = 0; i < out.rows(); ++i)
        for (int j = 0; j < out.cols(); ++j) out.at(i, j) += rv.at(0, j);
    return push(std::move(out), "add_row", [m, r](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        axpy(t.grad(m), 1.0, g);
        Tensor& gr = t.grad(r);
        for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < g.cols(); ++j) gr.at(0, j) += g.at(i, j);
    });
}

Var Tape::mul_row(Var m, Var r) {
    const Tensor& mv = value(m);
    const Tensor& rv = value(r);
    if (rv.rows() != 1 || rv.cols() != mv.cols()) {
        throw ShapeError("mul_row: shape mismatch " + mv.shape_str() + " vs " + rv.shape_str());
    }
    Tensor out = mv;
    for (int i = 0; i < out.rows(); ++i)
        for (int j = 0; j < out.cols(); ++j) out.at(i, j) *= rv.at(0, j);
    return push(std::move(out), "mul_row", [m, r](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        Tensor& gm = t.grad(m);
        Tensor& gr = t.grad(r);
        const Tensor& mval = t.value(m);
        const Tensor& rval = t.value(r);
        for (int i = 0; i < g.rows(); ++i) {
            for (int j = 0; j < g.cols(); ++j) {
                gm.at(i, j) += g.at(i, j) * rval.at(0, j);
                gr.at(0, j) += g.at(i, j) * mval.at(i, j);
            }
        }
    });
}

Var Tape::tanh_op(Var a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::tanh(out.data()[i]);
    return push(std::move(out), "tanh", [a](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor& ga = t.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga.data()[i] += g.data()[i] * (1.0 - y.data()[i] * y.data()[i]);
        }
    });
}

Var Tape::sigmoid_op(Var a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = 1.0 / (1.0 + std::exp(-out.data()[i]));
    return push(std::move(out), "sigmoid", [a](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor& ga = t.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga.data()[i] += g.data()[i] * y.data()[i] * (1.0 - y.data()[i]);
        }
    });
}

Var Tape::exp_op(Var a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::exp(out.data()[i]);
    return push(std::move(out), "exp", [a](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor& ga = t.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * y.data()[i];
    });
}

Var Tape::log_op(Var a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::log(out.data()[i]);
    return push(std::move(out), "log", [a](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        const Tensor& x = t.value(a);
        Tensor& ga = t.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] / x.data()[i];
    });
}

Var Tape::softplus_op(Var a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = out.data()[i];
        out.data()[i] = x > 30.0 ? x : std::log1p(std::exp(x));
    }
    return push(std::move(out), "softplus", [a](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        const Tensor& x = t.value(a);
        Tensor& ga = t.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga.data()[i] += g.data()[i] / (1.0 + std::exp(-x.data()[i]));
        }
    });
}

Var Tape::concat_cols(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.rows() != bv.rows()) {
        throw ShapeError("concat_cols: row mismatch " + av.shape_str() + " vs " + bv.shape_str());
    }
    Tensor out(av.rows(), av.cols() + bv.cols());
    for (int i = 0; i < av.rows(); ++i) {
        for (int j = 0; j < av.cols(); ++j) out.at(i, j) = av.at(i, j);
        for (int j = 0; j < bv.cols(); ++j) out.at(i, av.cols() + j) = bv.at(i, j);
    }
    const int ac = av.cols();
    return push(std::move(out), "concat_cols", [a, b, ac](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad(a);
        Tensor& gb = t.grad(b);
        for (int i = 0; i < g.rows(); ++i) {
            for (int j = 0; j < ga.cols(); ++j) ga.at(i, j) += g.at(i, j);
            for (int j = 0; j < gb.cols(); ++j) gb.at(i, j) += g.at(i, ac + j);
        }
    });
}

Var Tape::slice_cols(Var a, int c0, int c1) {
    const Tensor& av = value(a);
    if (c0 < 0 || c1 > av.cols() || c0 >= c1) {
        throw ShapeError("slice_cols: invalid range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") for " + av.shape_str());
    }
    Tensor out(av.rows(), c1 - c0);
    for (int i = 0; i < av.rows(); ++i)
        for (int j = c0; j < c1; ++j) out.at(i, j - c0) = av.at(i, j);
    return push(std::move(out), "slice_cols", [a, c0](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad(a);
        for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < g.cols(); ++j) ga.at(i, c0 + j) += g.at(i, j);
    });
}

Var Tape::stack_rows(const std::vector<Var>& rows) {
    if (rows.empty()) throw ShapeError("stack_rows: empty row list");
    const int d = value(rows[0]).cols();
    Tensor out(static_cast<int>(rows.size()), d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Tensor& rv = value(rows[i]);
        if (rv.rows() != 1 || rv.cols() != d) {
            throw ShapeError("stack_rows: row " + std::to_string(i) + " has shape " +
                             rv.shape_str());
        }
        out.set_row(static_cast<int>(i), rv);
    }
    return push(std::move(out), "stack_rows", [rows](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            Tensor& gr = t.grad(rows[i]);
            for (int j = 0; j < g.cols(); ++j) gr.at(0, j) += g.at(static_cast<int>(i), j);
        }
    });
}

Var Tape::row(Var a, int r) {
    const Tensor& av = value(a);
    if (r < 0 || r >= av.rows()) {
        throw ShapeError("row: index " + std::to_string(r) + " out of range for " +
                         av.shape_str());
    }
    return push(av.row(r), "row", [a, r](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad(a);
        for (int j = 0; j < g.cols(); ++j) ga.at(r, j) += g.at(0, j);
    });
}

Var Tape::shift_rows(Var a, int delta) {
    const Tensor& av = value(a);
    Tensor out(av.rows(), av.cols(), 0.0);
    for (int i = 0; i < av.rows(); ++i) {
        const int src = i - delta;
        if (src < 0 || src >= av.rows()) continue;
        for (int j = 0; j < av.cols(); ++j) out.at(i, j) = av.at(src, j);
    }
    return push(std::move(out), "shift_rows", [a, delta](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad(a);
        for (int i = 0; i < g.rows(); ++i) {
            const int src = i - delta;
            if (src < 0 || src >= g.rows()) continue;
            for (int j = 0; j < g.cols(); ++j) ga.at(src, j) += g.at(i, j);
        }
    });
}

Var Tape::scale_rows(Var a, const std::vector<double>& w) {
    const Tensor& av = value(a);
    if (static_cast<int>(w.size()) != av.rows()) {
        throw ShapeError("scale_rows: weight count " + std::to_string(w.size()) +
                         " does not match " + av.shape_str());
    }
    Tensor out = av;
    for (int i = 0; i < out.rows(); ++i)
        for (int j = 0; j < out.cols(); ++j) out.at(i, j) *= w[i];
    return push(std::move(out), "scale_rows", [a, w](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad(a);
        for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < g.cols(); ++j) ga.at(i, j) += w[i] * g.at(i, j);
    });
}

Var Tape::select_rows(Var table, const std::vector<int>& indices) {
    const Tensor& tv = value(table);
    Tensor out(static_cast<int>(indices.size()), tv.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] >= tv.rows()) {
            throw ShapeError("select_rows: index " + std::to_string(indices[i]) +
                             " out of range for " + tv.shape_str());
        }
        for (int j = 0; j < tv.cols(); ++j) out.at(static_cast<int>(i), j) = tv.at(indices[i], j);
    }
    return push(std::move(out), "select_rows", [table, indices](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        Tensor& gt = t.grad(table);
        for (std::size_t i = 0; i < indices.size(); ++i)
            for (int j = 0; j < g.cols(); ++j)
                gt.at(indices[i], j) += g.at(static_cast<int>(i), j);
    });
}

Var Tape::transpose_op(Var a) {
    return push(transpose(value(a)), "transpose",
                [a](Tape& t, Var self) { axpy(t.grad(a), 1.0, transpose(t.grad(self))); });
}

Var Tape::diag_row(Var a) {
    const Tensor& av = value(a);
    if (av.rows() != 1) throw ShapeError("diag_row: expected 1xD, got " + av.shape_str());
    const int d = av.cols();
    Tensor out(d, d, 0.0);
    for (int j = 0; j < d; ++j) out.at(j, j) = av.at(0, j);
    return push(std::move(out), "diag_row", [a, d](Tape& t, Var self) {
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad(a);
        for (int j = 0; j < d; ++j) ga.at(0, j) += g.at(j, j);
    });
}

Var Tape::sum(Var a) {
    double s = 0.0;
    const Tensor& av = value(a);
    for (std::size_t i = 0; i < av.size(); ++i) s += av.data()[i];
    return push(Tensor(1, 1, s), "sum", [a](Tape& t, Var self) {
        const double g = t.grad(self).at(0, 0);
        Tensor& ga = t.grad(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga.data()[i] += g;
    });
}

Var Tape::mean_all(Var a) {
    const Tensor& av = value(a);
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) s += av.data()[i];
    const double inv = 1.0 / static_cast<double>(av.size());
    return push(Tensor(1, 1, s * inv), "mean", [a, inv](Tape& t, Var self) {
        const double g = t.grad(self).at(0, 0) * inv;
        Tensor& ga = t.grad(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga.data()[i] += g;
    });
}

// ---------------------------------------------------------------------------
// composites

Var Tape::squared_error(Var a, Var b) {
    Var d = sub(a, b);
    return sum(mul(d, d));
}

Var Tape::gaussian_kl_total(Var mean_q, Var log_std_q, Var mean_p, Var log_std_p) {
    Var dm = sub(mean_p, mean_q);
    Var dm2 = mul(dm, dm);
    Var var_q = exp_op(affine(log_std_q, 2.0, 0.0));
    Var inv_var_p = exp_op(affine(log_std_p, -2.0, 0.0));
    Var quad = affine(mul(add(var_q, dm2), inv_var_p), 0.5, -0.5);
    Var terms = add(sub(log_std_p, log_std_q), quad);
    return sum(terms);
}

Var Tape::gaussian_log_prob_total(Var x, Var mean, Var log_std) {
    Var d = sub(x, mean);
    Var z2 = mul(mul(d, d), exp_op(affine(log_std, -2.0, 0.0)));
    Var inner = sum(add(log_std, affine(z2, 0.5, 0.0)));
    const double n = static_cast<double>(value(x).size());
    return affine(inner, -1.0, -0.5 * kLn2Pi * n);
}

// ---------------------------------------------------------------------------

void init_uniform(Tensor& t, double scale, RngStream& rng) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        t.data()[i] = (2.0 * rng.uniform() - 1.0) * scale;
    }
}

void init_xavier(Tensor& t, RngStream& rng) {
    const double s = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
    init_uniform(t, s, rng);
}

}  // namespace latlab
