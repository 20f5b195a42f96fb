#pragma once

// LSTM headline decoder with dual attention over the original and polished
// document states, editing and guidance gates, pointer-generator copying, and
// length-normalised beam search.

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "dahg/corpus.hpp"
#include "dahg/encoders.hpp"
#include "dahg/layers.hpp"

namespace dahg {

// Recurrent state carried between steps: d_t = (h, c) and h^E_t.
struct DecoderState {
    ag::Var h;
    ag::Var c;
    ag::Var context;
};

// What the decoder attends to and copies from.
struct SourceMemory {
    ag::Var doc_states;       // [(B*T) x D]
    ag::Var polished_states;  // [(B*T) x D]
    Tensor mask;              // [B x T]
    std::size_t steps = 0;
    std::vector<int> extended_ids;  // [B x T], extended vocabulary ids of the source
    std::size_t width = 0;          // |V| + max OOV count
};

// Forces gate values (tests and ablations).
struct StepOverrides {
    std::optional<double> edit_gate;
    std::optional<double> guide_gate;
    std::optional<double> p_gen;
};

struct DecoderStep {
    DecoderState state;      // d_t and h^E_t
    ag::Var attn_doc;        // [B x T]
    ag::Var attn_polished;   // [B x T]
    ag::Var ctx_doc;         // g^{X^d}_t
    ag::Var ctx_polished;    // g^p_t
    ag::Var edit_gate;       // gamma, [B x 1]
    ag::Var out_state;       // d^o_t
    ag::Var guide_gate;      // gamma_s, [B x 1]
    ag::Var guided;          // d^o_t mixed with the projected style
    ag::Var p_vocab;         // [B x |V|]
    ag::Var p_gen;           // [B x 1], set by copy_distribution
    ag::Var p_final;         // [B x width], set by copy_distribution
};

struct GeneratorDims {
    std::size_t vocab = 0;
    std::size_t embedding = 0;
    std::size_t state = 0;   // document state size 2H
    std::size_t latent = 0;
    std::size_t hidden = 0;  // decoder LSTM size
};

class HeadlineGenerator {
  public:
    HeadlineGenerator() = default;
    HeadlineGenerator(ParameterStore& store, const GeneratorDims& dims);

    // d_0 from an affine bridge of the pooled document state; h^E_0 = 0.
    DecoderState init(ag::Tape& tape, ag::Var pooled_doc) const;

    // s mapped to the size of d^o_t.
    ag::Var project_style(ag::Tape& tape, ag::Var style) const;

    // One step up to the vocabulary distribution P_v. prev_embedding is e(y_{t-1}).
    DecoderStep step(ag::Tape& tape, const DecoderState& prev, ag::Var prev_embedding, const SourceMemory& memory,
                     ag::Var style_proj, const StepOverrides* overrides = nullptr) const;

    // Fills p_gen and P_final (scatter of the original-document attention).
    void copy_distribution(ag::Tape& tape, DecoderStep& step, ag::Var prev_embedding, const SourceMemory& memory,
                           const StepOverrides* overrides = nullptr) const;

    // step() followed by copy_distribution().
    DecoderStep decode(ag::Tape& tape, const DecoderState& prev, ag::Var prev_embedding, const SourceMemory& memory,
                       ag::Var style_proj, const StepOverrides* overrides = nullptr) const;

    std::size_t hidden() const { return lstm_.hidden(); }

  private:
    Linear bridge_h_, bridge_c_;
    LstmLayer lstm_;
    Parameter* attn_doc_ = nullptr;       // W_f for original states, [hidden x D]
    Parameter* attn_polished_ = nullptr;  // W_f for polished states
    Linear edit_gate_;
    Linear output_;
    Linear guide_gate_;
    Linear style_proj_;
    Linear vocab_;
    Linear p_gen_;
};

struct SequenceLossStats {
    std::size_t tokens = 0;
    std::size_t clamped = 0;  // targets whose probability fell below the floor
};

inline constexpr double kProbabilityFloor = 1e-12;

// Mean over non-PAD target steps of -log P_final(y_t). p_final[t] is [B x W];
// targets and mask are [B x steps] with steps >= p_final.size() and every
// unmasked step covered.
ag::Var sequence_loss(std::span<const ag::Var> p_final, std::span<const int> targets, const Tensor& mask,
                      SequenceLossStats* stats = nullptr);

// Teacher-forced decode of a batch's targets; returns L_seq.
ag::Var teacher_forced_loss(ag::Tape& tape, const HeadlineGenerator& gen, const Embedding& embedding,
                            const SourceMemory& memory, ag::Var style_proj, const DecoderState& init,
                            const Batch& batch, SequenceLossStats* stats = nullptr);

// ---- beam search ------------------------------------------------------------------

// Left-to-right model seen by the beam search through opaque state handles.
class BeamModel {
  public:
    virtual ~BeamModel() = default;
    virtual std::size_t width() const = 0;
    virtual int stop_token() const = 0;
    virtual std::size_t initial_state() = 0;
    // Log-probabilities of the next token after `state`.
    virtual std::vector<double> log_probs(std::size_t state) = 0;
    // State after emitting `token` from `state`.
    virtual std::size_t extend(std::size_t state, int token) = 0;
};

struct BeamConfig {
    std::size_t beam = 4;
    std::size_t min_len = 10;
    std::size_t max_len = 30;
};

struct Hypothesis {
    std::vector<int> tokens;  // without STOP
    double log_prob = 0.0;
    bool completed = false;   // ended with STOP
    // log_prob / (tokens + 1 if completed else tokens)
    double score() const;
};

// Keeps the `beam` best live prefixes per step. STOP is forbidden before
// min_len tokens; a hypothesis at max_len tokens may only stop. Returns every
// completed hypothesis sorted best first, or, if none completed, the live
// hypotheses at max_len.
std::vector<Hypothesis> beam_search(BeamModel& model, const BeamConfig& config);

// Beam search over the DAHG decoder for the first row of a memory (batch of 1).
class DecoderBeamModel : public BeamModel {
  public:
    DecoderBeamModel(ag::Tape& tape, const HeadlineGenerator& gen, const Embedding& embedding,
                     const SourceMemory& memory, ag::Var style_proj, DecoderState init);

    std::size_t width() const override { return memory_.width; }
    int stop_token() const override { return Vocabulary::kStop; }
    std::size_t initial_state() override { return 0; }
    std::vector<double> log_probs(std::size_t state) override;
    std::size_t extend(std::size_t state, int token) override;

  private:
    struct Node {
        DecoderState prev;
        int last_token = Vocabulary::kStart;
        std::optional<DecoderState> next;
        std::vector<double> log_probs;
    };

    ag::Tape& tape_;
    const HeadlineGenerator& gen_;
    const Embedding& embedding_;
    const SourceMemory& memory_;
    ag::Var style_proj_;
    std::vector<Node> nodes_;
};

}  // namespace dahg
