#pragma once

#include <string>

#include "latlab/graph.hpp"

namespace latlab {

// Parameter-name conventions: a linear layer at prefix "p" owns "p.w" and
// "p.b"; a GRU at prefix "p" owns "p.wr/ur/br/wu/uu/bu/wc/uc/bc".

void init_linear(ParamStore& store, const std::string& prefix, int in, int out, RngStream& rng,
                 bool zero = false);
Var apply_linear(Tape& t, const std::string& prefix, Var x);

void init_gru(ParamStore& store, const std::string& prefix, int in, int hidden, RngStream& rng);

struct GruVars {
    Var wr, ur, br;
    Var wu, uu, bu;
    Var wc, uc, bc;
};
GruVars gru_vars(Tape& t, const std::string& prefix);

// One gated recurrent step: x is 1xI, h is 1xH, returns the next 1xH state.
//   r = sigmoid(x Wr + h Ur + br)
//   u = sigmoid(x Wu + h Uu + bu)
//   c = tanh(x Wc + (r*h) Uc + bc)
//   h' = u*h + (1-u)*c
Var gru_step(Tape& t, const GruVars& g, Var x, Var h);

// Runs the GRU over every row of inputs (NxI) from a zero initial state and
// stacks the hidden states into an NxH node.
Var gru_sequence(Tape& t, const std::string& prefix, Var inputs, int hidden);

}  // namespace latlab
