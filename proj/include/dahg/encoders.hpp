#pragma once

// Shared word embedding and the bidirectional LSTM encoders for documents
// (Bi-RNN_X) and headlines (Bi-RNN_Y).

#include <cstddef>
#include <span>
#include <string>

#include "dahg/corpus.hpp"
#include "dahg/layers.hpp"

namespace dahg {

class Embedding {
  public:
    Embedding() = default;
    Embedding(ParameterStore& store, std::size_t vocab_size, std::size_t dim);

    // Row lookup; every id must be < vocab size (map extended ids to UNK first).
    ag::Var lookup(ag::Tape& tape, std::span<const int> ids) const;
    std::size_t vocab_size() const { return table_->value.rows(); }
    std::size_t dim() const { return table_->value.cols(); }
    Parameter& table() const { return *table_; }

  private:
    Parameter* table_ = nullptr;
};

// Per-token states of a padded batch.
struct EncoderStates {
    ag::Var states;  // [(B*T) x 2H], zero at PAD positions
    ag::Var pooled;  // [B x 2H] = (forward state at the last token, backward state at the first)
    Tensor mask;     // [B x T]
    std::size_t steps = 0;
};

class BiLstmEncoder {
  public:
    BiLstmEncoder() = default;
    BiLstmEncoder(ParameterStore& store, const std::string& name, std::size_t input_dim, std::size_t hidden);

    EncoderStates encode(ag::Tape& tape, const Embedding& embedding, const PaddedIds& ids) const;
    std::size_t hidden() const { return forward_.hidden(); }
    std::size_t output_dim() const { return 2 * hidden(); }

  private:
    LstmLayer forward_;
    LstmLayer backward_;
};

}  // namespace dahg
