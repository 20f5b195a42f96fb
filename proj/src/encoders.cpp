#include "dahg/encoders.hpp"

#include <algorithm>
#include <vector>

#include "dahg/error.hpp"

namespace dahg {

Embedding::Embedding(ParameterStore& store, std::size_t vocab_size, std::size_t dim)
    : table_(&store.add("embedding", vocab_size, dim)) {}

ag::Var Embedding::lookup(ag::Tape& tape, std::span<const int> ids) const {
    return ag::gather_rows(tape.param(*table_), ids);
}

BiLstmEncoder::BiLstmEncoder(ParameterStore& store, const std::string& name, std::size_t input_dim, std::size_t hidden)
    : forward_(LstmLayer::create(store, name + ".fwd", input_dim, hidden)),
      backward_(LstmLayer::create(store, name + ".bwd", input_dim, hidden)) {}

EncoderStates BiLstmEncoder::encode(ag::Tape& tape, const Embedding& embedding, const PaddedIds& ids) const {
    if (ids.rows == 0 || ids.steps == 0) throw Error("cannot encode an empty batch");
    for (std::size_t len : ids.lengths) {
        if (len == 0) throw Error("cannot encode a zero-length sequence");
    }
    const std::size_t batch = ids.rows;
    const std::size_t steps = ids.steps;
    const std::size_t hidden = forward_.hidden();
    // Steps at or beyond the longest row are all padding and leave every state unchanged.
    const std::size_t active = *std::max_element(ids.lengths.begin(), ids.lengths.end());

    ag::Var emb = embedding.lookup(tape, ids.ids);
    ag::Var proj_f = forward_.project(tape, emb);
    ag::Var proj_b = backward_.project(tape, emb);
    ag::Var zeros = tape.constant(Tensor(batch, hidden));

    std::vector<ag::Var> out_f(steps, zeros);
    std::vector<ag::Var> out_b(steps, zeros);
    std::vector<Tensor> masks;
    for (std::size_t t = 0; t < active; ++t) masks.push_back(ids.column_mask(t));

    ag::Var h = zeros, c = zeros;
    for (std::size_t t = 0; t < active; ++t) {
        ag::Var hc = forward_.step(tape, ag::seq_step(proj_f, steps, t), h, c);
        ag::Var h_new = ag::slice_cols(hc, 0, hidden);
        out_f[t] = ag::blend_mask(h_new, zeros, masks[t]);
        h = ag::blend_mask(h_new, h, masks[t]);
        c = ag::blend_mask(ag::slice_cols(hc, hidden, hidden), c, masks[t]);
    }
    ag::Var last_forward = h;

    h = zeros;
    c = zeros;
    for (std::size_t t = active; t-- > 0;) {
        ag::Var hc = backward_.step(tape, ag::seq_step(proj_b, steps, t), h, c);
        ag::Var h_new = ag::slice_cols(hc, 0, hidden);
        out_b[t] = ag::blend_mask(h_new, zeros, masks[t]);
        h = ag::blend_mask(h_new, h, masks[t]);
        c = ag::blend_mask(ag::slice_cols(hc, hidden, hidden), c, masks[t]);
    }

    EncoderStates s;
    s.states = ag::concat_cols({ag::stack_steps(out_f), ag::stack_steps(out_b)});
    s.pooled = ag::concat_cols({last_forward, h});
    s.mask = ids.mask;
    s.steps = steps;
    return s;
}

}  // namespace dahg
