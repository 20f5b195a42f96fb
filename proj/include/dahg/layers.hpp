#pragma once

// Parameterised building blocks shared by the model components.

#include <cstddef>
#include <random>
#include <string>

#include "dahg/autograd.hpp"

namespace dahg {

// x * W + b
struct Linear {
    Parameter* weight = nullptr;  // [in x out]
    Parameter* bias = nullptr;    // [1 x out]

    static Linear create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                         ParamGroup group = ParamGroup::generator);
    ag::Var operator()(ag::Tape& tape, ag::Var x) const;
    std::size_t in() const { return weight->value.rows(); }
    std::size_t out() const { return weight->value.cols(); }
};

// One LSTM direction. Gate layout in the 4H columns: input, forget, cell, output.
struct LstmLayer {
    Parameter* w_input = nullptr;   // [in x 4H]
    Parameter* w_hidden = nullptr;  // [H x 4H]
    Parameter* bias = nullptr;      // [1 x 4H]

    static LstmLayer create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden);
    std::size_t hidden() const { return w_hidden->value.rows(); }

    // Input projection for a whole flattened sequence [(B*T) x in] -> [(B*T) x 4H].
    ag::Var project(ag::Tape& tape, ag::Var inputs) const;
    // One step from projected inputs; returns [B x 2H] = (h, c).
    ag::Var step(ag::Tape& tape, ag::Var projected_t, ag::Var h, ag::Var c) const;
};

// Draws every parameter from N(0, std^2).
void init_gaussian(ParameterStore& store, double std, std::mt19937_64& rng);

// Fills a tensor with N(0, 1) draws.
Tensor standard_normal(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

}  // namespace dahg
