#include "dahg/generator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dahg/error.hpp"

namespace dahg {

HeadlineGenerator::HeadlineGenerator(ParameterStore& store, const GeneratorDims& d)
    : bridge_h_(Linear::create(store, "decoder.bridge_h", d.state, d.hidden)),
      bridge_c_(Linear::create(store, "decoder.bridge_c", d.state, d.hidden)),
      lstm_(LstmLayer::create(store, "decoder.lstm", d.embedding + d.state, d.hidden)),
      attn_doc_(&store.add("decoder.attn_doc", d.hidden, d.state)),
      attn_polished_(&store.add("decoder.attn_polished", d.hidden, d.state)),
      edit_gate_(Linear::create(store, "decoder.edit_gate", d.hidden, 1)),
      output_(Linear::create(store, "decoder.output", d.hidden + d.state, d.hidden)),
      guide_gate_(Linear::create(store, "decoder.guide_gate", d.hidden, 1)),
      style_proj_(Linear::create(store, "decoder.style_proj", d.latent, d.hidden)),
      vocab_(Linear::create(store, "decoder.vocab", d.hidden, d.vocab)),
      p_gen_(Linear::create(store, "copy.p_gen", d.state + d.hidden + d.embedding, 1)) {}

DecoderState HeadlineGenerator::init(ag::Tape& tape, ag::Var pooled_doc) const {
    DecoderState s;
    s.h = bridge_h_(tape, pooled_doc);
    s.c = bridge_c_(tape, pooled_doc);
    s.context = tape.constant(Tensor(pooled_doc.rows(), pooled_doc.cols()));
    return s;
}

ag::Var HeadlineGenerator::project_style(ag::Tape& tape, ag::Var style) const { return style_proj_(tape, style); }

namespace {

ag::Var forced_or(ag::Tape& tape, const std::optional<double>& forced, std::size_t rows, ag::Var computed) {
    if (!forced) return computed;
    return tape.constant(Tensor(rows, 1, *forced));
}

}  // namespace

DecoderStep HeadlineGenerator::step(ag::Tape& tape, const DecoderState& prev, ag::Var prev_embedding,
                                    const SourceMemory& memory, ag::Var style_proj, const StepOverrides* ov) const {
    const std::size_t hidden = lstm_.hidden();
    const std::size_t batch = prev_embedding.rows();
    DecoderStep st;

    ag::Var input = ag::concat_cols({prev_embedding, prev.context});
    ag::Var hc = lstm_.step(tape, lstm_.project(tape, input), prev.h, prev.c);
    ag::Var d = ag::slice_cols(hc, 0, hidden);
    st.state.h = d;
    st.state.c = ag::slice_cols(hc, hidden, hidden);

    // f(h_i, d_t) = h_i^T W_f d_t, one W_f per stream
    st.attn_doc = ag::softmax(ag::seq_dot(memory.doc_states, ag::matmul(d, tape.param(*attn_doc_)), memory.steps), &memory.mask);
    st.attn_polished = ag::softmax(
        ag::seq_dot(memory.polished_states, ag::matmul(d, tape.param(*attn_polished_)), memory.steps), &memory.mask);
    st.ctx_doc = ag::seq_weighted_sum(st.attn_doc, memory.doc_states, memory.steps);
    st.ctx_polished = ag::seq_weighted_sum(st.attn_polished, memory.polished_states, memory.steps);

    st.edit_gate = forced_or(tape, ov ? ov->edit_gate : std::nullopt, batch, ag::sigmoid(edit_gate_(tape, d)));
    st.state.context = ag::gate_mix(st.edit_gate, st.ctx_doc, st.ctx_polished);
    st.out_state = output_(tape, ag::concat_cols({d, st.state.context}));
    st.guide_gate = forced_or(tape, ov ? ov->guide_gate : std::nullopt, batch, ag::sigmoid(guide_gate_(tape, d)));
    st.guided = ag::gate_mix(st.guide_gate, st.out_state, style_proj);
    st.p_vocab = ag::softmax(vocab_(tape, st.guided));
    return st;
}

void HeadlineGenerator::copy_distribution(ag::Tape& tape, DecoderStep& st, ag::Var prev_embedding,
                                          const SourceMemory& memory, const StepOverrides* ov) const {
    ag::Var features = ag::concat_cols({st.state.context, st.state.h, prev_embedding});
    st.p_gen = forced_or(tape, ov ? ov->p_gen : std::nullopt, prev_embedding.rows(), ag::sigmoid(p_gen_(tape, features)));
    st.p_final = ag::copy_mix(st.p_vocab, st.p_gen, st.attn_doc, memory.extended_ids, memory.width);
}

DecoderStep HeadlineGenerator::decode(ag::Tape& tape, const DecoderState& prev, ag::Var prev_embedding,
                                      const SourceMemory& memory, ag::Var style_proj, const StepOverrides* ov) const {
    DecoderStep st = step(tape, prev, prev_embedding, memory, style_proj, ov);
    copy_distribution(tape, st, prev_embedding, memory, ov);
    return st;
}

ag::Var sequence_loss(std::span<const ag::Var> p_final, std::span<const int> targets, const Tensor& mask,
                      SequenceLossStats* stats) {
    if (p_final.empty()) throw Error("sequence loss over zero steps");
    const std::size_t batch = mask.rows();
    const std::size_t steps = mask.cols();
    if (targets.size() != batch * steps || p_final.size() > steps) throw Error("sequence loss shape mismatch");
    std::vector<ag::Var> picked;
    double total = 0.0;
    for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t b = 0; b < batch; ++b) {
            if (mask(b, t) == 0.0) continue;
            if (t >= p_final.size()) throw Error("sequence loss is missing an unmasked step");
            total += mask(b, t);
        }
    }
    if (total == 0.0) throw Error("sequence loss over an all-PAD batch");
    Tensor w(batch, p_final.size());
    std::size_t clamped = 0;
    for (std::size_t t = 0; t < p_final.size(); ++t) {
        std::vector<int> col(batch);
        for (std::size_t b = 0; b < batch; ++b) {
            col[b] = targets[b * steps + t];
            w(b, t) = -mask(b, t) / total;
            if (mask(b, t) != 0.0 && p_final[t].value()(b, static_cast<std::size_t>(col[b])) < kProbabilityFloor) ++clamped;
        }
        picked.push_back(ag::pick(p_final[t], col));
    }
    if (stats != nullptr) {
        stats->tokens = static_cast<std::size_t>(total);
        stats->clamped = clamped;
    }
    return ag::weighted_sum(ag::log(ag::concat_cols(picked), kProbabilityFloor), w);
}

ag::Var teacher_forced_loss(ag::Tape& tape, const HeadlineGenerator& gen, const Embedding& embedding,
                            const SourceMemory& memory, ag::Var style_proj, const DecoderState& init,
                            const Batch& batch, SequenceLossStats* stats) {
    const PaddedIds& in = batch.decoder_input;
    const std::size_t active = *std::max_element(in.lengths.begin(), in.lengths.end());
    DecoderState state = init;
    std::vector<ag::Var> finals;
    for (std::size_t t = 0; t < active; ++t) {
        ag::Var emb = embedding.lookup(tape, in.column(t));
        DecoderStep st = gen.decode(tape, state, emb, memory, style_proj);
        finals.push_back(st.p_final);
        state = st.state;
    }
    return sequence_loss(finals, batch.target_extended, batch.target_mask, stats);
}

// ---- beam search -----------------------------------------------------------------

double Hypothesis::score() const {
    const std::size_t len = tokens.size() + (completed ? 1 : 0);
    return len == 0 ? log_prob : log_prob / static_cast<double>(len);
}

std::vector<Hypothesis> beam_search(BeamModel& model, const BeamConfig& cfg) {
    if (cfg.beam == 0 || cfg.max_len == 0) throw Error("beam size and max length must be positive");
    if (cfg.min_len > cfg.max_len) throw Error("min length exceeds max length");
    struct Live {
        Hypothesis hyp;
        std::size_t state;
    };
    struct Candidate {
        std::size_t parent;
        int token;
        double log_prob;
    };
    const int stop = model.stop_token();
    std::vector<Live> live{{Hypothesis{}, model.initial_state()}};
    std::vector<Hypothesis> completed;

    while (!live.empty()) {
        std::vector<Candidate> candidates;
        for (std::size_t i = 0; i < live.size(); ++i) {
            const Hypothesis& h = live[i].hyp;
            const std::vector<double> lp = model.log_probs(live[i].state);
            if (lp.size() != model.width()) throw Error("beam model returned a distribution of the wrong width");
            if (h.tokens.size() >= cfg.min_len && std::isfinite(lp[static_cast<std::size_t>(stop)])) {
                Hypothesis done = h;
                done.log_prob += lp[static_cast<std::size_t>(stop)];
                done.completed = true;
                completed.push_back(std::move(done));
            }
            if (h.tokens.size() >= cfg.max_len) continue;
            for (std::size_t w = 0; w < lp.size(); ++w) {
                if (static_cast<int>(w) == stop || !std::isfinite(lp[w])) continue;
                candidates.push_back({i, static_cast<int>(w), h.log_prob + lp[w]});
            }
        }
        if (candidates.empty()) break;
        const std::size_t keep = std::min(cfg.beam, candidates.size());
        std::partial_sort(candidates.begin(), candidates.begin() + static_cast<long>(keep), candidates.end(),
                          [](const Candidate& a, const Candidate& b) {
                              if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                              if (a.parent != b.parent) return a.parent < b.parent;
                              return a.token < b.token;
                          });
        std::vector<Live> next;
        for (std::size_t k = 0; k < keep; ++k) {
            const Candidate& c = candidates[k];
            Hypothesis h = live[c.parent].hyp;
            h.tokens.push_back(c.token);
            h.log_prob = c.log_prob;
            next.push_back({std::move(h), model.extend(live[c.parent].state, c.token)});
        }
        live = std::move(next);
        if (live.front().hyp.tokens.size() >= cfg.max_len) {
            // One more round lets max-length hypotheses stop; keep them if they cannot.
            std::vector<Hypothesis> at_max;
            for (const Live& l : live) at_max.push_back(l.hyp);
            for (const Live& l : live) {
                const std::vector<double> lp = model.log_probs(l.state);
                if (std::isfinite(lp[static_cast<std::size_t>(stop)]) && l.hyp.tokens.size() >= cfg.min_len) {
                    Hypothesis done = l.hyp;
                    done.log_prob += lp[static_cast<std::size_t>(stop)];
                    done.completed = true;
                    completed.push_back(std::move(done));
                }
            }
            if (completed.empty()) completed = std::move(at_max);
            live.clear();
        }
    }
    std::stable_sort(completed.begin(), completed.end(),
                     [](const Hypothesis& a, const Hypothesis& b) { return a.score() > b.score(); });
    return completed;
}

DecoderBeamModel::DecoderBeamModel(ag::Tape& tape, const HeadlineGenerator& gen, const Embedding& embedding,
                                   const SourceMemory& memory, ag::Var style_proj, DecoderState init)
    : tape_(tape), gen_(gen), embedding_(embedding), memory_(memory), style_proj_(style_proj) {
    if (memory.mask.rows() != 1) throw Error("beam search decodes one document at a time");
    Node root;
    root.prev = std::move(init);
    nodes_.push_back(std::move(root));
}

std::vector<double> DecoderBeamModel::log_probs(std::size_t state) {
    Node& n = nodes_.at(state);
    if (!n.next) {
        int input = n.last_token;
        if (input < 0 || static_cast<std::size_t>(input) >= embedding_.vocab_size()) input = Vocabulary::kUnk;
        const std::vector<int> ids{input};
        ag::Var emb = embedding_.lookup(tape_, ids);
        DecoderStep st = gen_.decode(tape_, n.prev, emb, memory_, style_proj_);
        const Tensor& p = st.p_final.value();
        n.log_probs.resize(p.cols());
        for (std::size_t w = 0; w < p.cols(); ++w) {
            n.log_probs[w] = p[w] > 0.0 ? std::log(p[w]) : -std::numeric_limits<double>::infinity();
        }
        n.next = st.state;
    }
    return nodes_.at(state).log_probs;
}

std::size_t DecoderBeamModel::extend(std::size_t state, int token) {
    if (!nodes_.at(state).next) log_probs(state);
    Node child;
    child.prev = *nodes_.at(state).next;
    child.last_token = token;
    nodes_.push_back(std::move(child));
    return nodes_.size() - 1;
}

}  // namespace dahg
