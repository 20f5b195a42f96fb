#include "dahg/polish.hpp"

#include <algorithm>

#include "dahg/error.hpp"

namespace dahg {

Polisher::Polisher(ParameterStore& store, std::size_t state_dim, std::size_t latent_dim)
    : state_dim_(state_dim),
      gate_hidden_(Linear::create(store, "polish.gate_hidden", 3 * state_dim, state_dim)),
      gate_out_(Linear::create(store, "polish.gate_out", state_dim, 1)),
      reset_x_(Linear::create(store, "polish.reset_x", state_dim, state_dim)),
      reset_h_(&store.add("polish.reset_h", state_dim, state_dim)),
      cand_x_(Linear::create(store, "polish.cand_x", state_dim, state_dim)),
      cand_h_(&store.add("polish.cand_h", state_dim, state_dim)) {
    if (latent_dim != state_dim) content_proj_ = Linear::create(store, "polish.content_proj", latent_dim, state_dim);
}

ag::Var Polisher::project_content(ag::Tape& tape, ag::Var c) const {
    return content_proj_ ? (*content_proj_)(tape, c) : c;
}

ag::Var Polisher::gate(ag::Tape& tape, ag::Var prev, ag::Var content_proj, const Tensor& mask, std::size_t steps) const {
    const std::size_t batch = content_proj.rows();
    ag::Var c_rep = ag::repeat_rows(content_proj, steps);
    ag::Var e = ag::concat_cols({ag::mul(prev, c_rep), prev, c_rep});
    ag::Var z = gate_out_(tape, ag::tanh(gate_hidden_(tape, e)));
    ag::Var scores = ag::reshape(z, batch, steps);
    if (sigmoid_gate_) return ag::mul(ag::sigmoid(scores), tape.constant(mask));
    return ag::softmax(scores, &mask);
}

ag::Var Polisher::cell(ag::Tape& tape, ag::Var x_t, ag::Var h_prev, ag::Var gate_t) const {
    return step(tape, reset_x_(tape, x_t), cand_x_(tape, x_t), h_prev, gate_t);
}

ag::Var Polisher::step(ag::Tape& tape, ag::Var reset_in, ag::Var cand_in, ag::Var h_prev, ag::Var gate_t) const {
    ag::Var r = ag::sigmoid(ag::add(reset_in, ag::matmul(h_prev, tape.param(*reset_h_))));
    ag::Var cand = ag::tanh(ag::add(cand_in, ag::mul(r, ag::matmul(h_prev, tape.param(*cand_h_)))));
    return ag::gate_mix(gate_t, cand, h_prev);
}

ag::Var Polisher::run_hop(ag::Tape& tape, ag::Var prev, ag::Var gates, std::size_t steps, std::size_t active) const {
    const std::size_t batch = gates.rows();
    // Input projections for the whole sequence at once.
    ag::Var xr = reset_x_(tape, prev);
    ag::Var xc = cand_x_(tape, prev);
    ag::Var h = tape.constant(Tensor(batch, state_dim_));
    std::vector<ag::Var> outs(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        if (t < active) h = step(tape, ag::seq_step(xr, steps, t), ag::seq_step(xc, steps, t), h, ag::slice_cols(gates, t, 1));
        outs[t] = h;
    }
    return ag::stack_steps(outs);
}

PolishState Polisher::polish(ag::Tape& tape, ag::Var doc_states, const Tensor& mask, std::size_t steps, ag::Var c,
                             std::size_t hops, const std::vector<std::optional<Tensor>>* forced_gates) const {
    if (hops == 0) throw Error("polish needs at least one hop");
    if (mask.cols() != steps || doc_states.rows() != mask.rows() * steps) throw Error("polish shape mismatch");
    // Positions past the longest row are padding in every row; their gate is 0.
    std::size_t active = 0;
    for (std::size_t b = 0; b < mask.rows(); ++b) {
        for (std::size_t t = 0; t < steps; ++t) {
            if (mask(b, t) != 0.0) active = std::max(active, t + 1);
        }
    }
    PolishState st;
    st.hops.push_back(doc_states);
    ag::Var cp = project_content(tape, c);
    for (std::size_t k = 1; k <= hops; ++k) {
        ag::Var g;
        if (forced_gates != nullptr && k - 1 < forced_gates->size() && (*forced_gates)[k - 1]) {
            g = tape.constant(*(*forced_gates)[k - 1]);
        } else {
            g = gate(tape, st.hops.back(), cp, mask, steps);
        }
        st.gates.push_back(g);
        st.hops.push_back(run_hop(tape, st.hops.back(), g, steps, active));
    }
    return st;
}

}  // namespace dahg
