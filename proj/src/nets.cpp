#include "latlab/nets.hpp"

namespace latlab {

void init_linear(ParamStore& store, const std::string& prefix, int in, int out, RngStream& rng,
                 bool zero) {
    Param& w = store.create(prefix + ".w", in, out);
    store.create(prefix + ".b", 1, out);
    if (!zero) init_xavier(w.value, rng);
}

Var apply_linear(Tape& t, const std::string& prefix, Var x) {
    return t.linear(x, t.param(prefix + ".w"), t.param(prefix + ".b"));
}

void init_gru(ParamStore& store, const std::string& prefix, int in, int hidden, RngStream& rng) {
    const char* gates[] = {"r", "u", "c"};
    for (const char* g : gates) {
        Param& w = store.create(prefix + ".w" + g, in, hidden);
        Param& u = store.create(prefix + ".u" + g, hidden, hidden);
        store.create(prefix + ".b" + g, 1, hidden);
        init_xavier(w.value, rng);
        init_xavier(u.value, rng);
    }
}

GruVars gru_vars(Tape& t, const std::string& prefix) {
    GruVars g;
    g.wr = t.param(prefix + ".wr");
    g.ur = t.param(prefix + ".ur");
    g.br = t.param(prefix + ".br");
    g.wu = t.param(prefix + ".wu");
    g.uu = t.param(prefix + ".uu");
    g.bu = t.param(prefix + ".bu");
    g.wc = t.param(prefix + ".wc");
    g.uc = t.param(prefix + ".uc");
    g.bc = t.param(prefix + ".bc");
    return g;
}

Var gru_step(Tape& t, const GruVars& g, Var x, Var h) {
    Var r = t.sigmoid_op(t.add_row(t.add(t.matmul_op(x, g.wr), t.matmul_op(h, g.ur)), g.br));
    Var u = t.sigmoid_op(t.add_row(t.add(t.matmul_op(x, g.wu), t.matmul_op(h, g.uu)), g.bu));
    Var cand =
        t.tanh_op(t.add_row(t.add(t.matmul_op(x, g.wc), t.matmul_op(t.mul(r, h), g.uc)), g.bc));
    return t.add(t.mul(u, h), t.mul(t.affine(u, -1.0, 1.0), cand));
}

Var gru_sequence(Tape& t, const std::string& prefix, Var inputs, int hidden) {
    const GruVars g = gru_vars(t, prefix);
    const int n = t.value(inputs).rows();
    Var h = t.constant(Tensor(1, hidden, 0.0));
    std::vector<Var> states;
    states.reserve(n);
    for (int i = 0; i < n; ++i) {
        h = gru_step(t, g, t.row(inputs, i), h);
        states.push_back(h);
    }
    return t.stack_rows(states);
}

}  // namespace latlab
