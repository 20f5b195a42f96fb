#pragma once

// Multi-hop highlight polishing: a GRU whose update gate is replaced by a
// per-position scalar computed from the previous hop's states and the content
// latent c, normalised with a softmax over the valid positions.

#include <cstddef>
#include <optional>
#include <vector>

#include "dahg/layers.hpp"

namespace dahg {

struct PolishState {
    std::vector<ag::Var> hops;   // hops[0] = encoder states, hops[k] = output of hop k, [(B*T) x D]
    std::vector<ag::Var> gates;  // gates[k-1] = gate of hop k, [B x T]
};

class Polisher {
  public:
    Polisher() = default;
    // state_dim is 2H of the document encoder.
    Polisher(ParameterStore& store, std::size_t state_dim, std::size_t latent_dim);

    // Elementwise sigmoid instead of the position softmax (comparison variant).
    void set_sigmoid_gate(bool on) { sigmoid_gate_ = on; }
    bool sigmoid_gate() const { return sigmoid_gate_; }

    // c mapped to the state dimension (identity when the sizes already agree).
    ag::Var project_content(ag::Tape& tape, ag::Var c) const;

    // g = softmax_t(W2 tanh(W1 [h*c; h; c] + b1) + b2) over valid positions; [B x T].
    ag::Var gate(ag::Tape& tape, ag::Var prev_hop, ag::Var content_proj, const Tensor& mask, std::size_t steps) const;

    // h_t = g_t * h_hat_t + (1 - g_t) * h_{t-1}, with the GRU reset gate and
    // candidate. x_t is the previous hop's state; gate_t is [B x 1].
    ag::Var cell(ag::Tape& tape, ag::Var x_t, ag::Var h_prev, ag::Var gate_t) const;

    // K hops; each runs left to right from a zero state over the previous hop.
    PolishState polish(ag::Tape& tape, ag::Var doc_states, const Tensor& mask, std::size_t steps, ag::Var c,
                       std::size_t hops, const std::vector<std::optional<Tensor>>* forced_gates = nullptr) const;

    std::size_t state_dim() const { return state_dim_; }

  private:
    ag::Var step(ag::Tape& tape, ag::Var reset_in, ag::Var cand_in, ag::Var h_prev, ag::Var gate_t) const;
    ag::Var run_hop(ag::Tape& tape, ag::Var prev, ag::Var gates, std::size_t steps, std::size_t active) const;

    std::size_t state_dim_ = 0;
    std::optional<Linear> content_proj_;
    Linear gate_hidden_, gate_out_;
    Linear reset_x_;
    Parameter* reset_h_ = nullptr;
    Linear cand_x_;
    Parameter* cand_h_ = nullptr;
    bool sigmoid_gate_ = false;
};

}  // namespace dahg
