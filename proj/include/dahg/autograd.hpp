#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every operation as a node holding its forward value and a
// closure that pushes the node's gradient to its inputs. Parameters enter the
// tape as leaves whose gradient is accumulated straight into Parameter::grad.
// A tape constructed with record=false only evaluates values, which is what the
// decoder uses at inference time.

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dahg/tensor.hpp"

namespace dahg {

enum class ParamGroup { generator, discriminator };

struct Parameter {
    std::string name;
    ParamGroup group = ParamGroup::generator;
    Tensor value;
    Tensor grad;
};

// Owns parameters in creation order; addresses are stable.
class ParameterStore {
  public:
    Parameter& add(const std::string& name, std::size_t rows, std::size_t cols,
                   ParamGroup group = ParamGroup::generator);
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<Parameter*> group(ParamGroup g) const;
    std::vector<Parameter*> all() const;
    std::size_t size() const { return params_.size(); }

    void zero_grad();
    void zero_grad(ParamGroup g);

  private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

namespace ag {

class Tape;

class Var {
  public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape() const { return tape_; }
    int id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }
    const Tensor& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    // Value of a 1x1 node.
    double item() const;

  private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
  public:
    using BackwardFn = std::function<void(Tape&, int)>;

    explicit Tape(bool record = true) : record_(record) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return record_; }
    std::size_t size() const { return nodes_.size(); }

    Var constant(Tensor value);
    Var param(Parameter& p);
    // Same value, cut from the graph.
    Var detach(Var v);

    // Back-propagates d(root)/d(.) for a 1x1 root. Intermediate gradients from a
    // previous call are discarded; parameter gradients accumulate.
    void backward(Var root);

    const Tensor& value(int id) const;
    bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
    // Gradient buffer of a node, zero-initialised on first touch per backward.
    Tensor& grad(int id);

    // Appends a computed node. The closure is kept only when recording and at
    // least one input requires a gradient.
    Var emit(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
    Var emit(Tensor value, std::span<const Var> inputs, BackwardFn fn);

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        Parameter* param = nullptr;
        bool needs_grad = false;
        bool has_grad = false;
        BackwardFn backward;
    };

    bool record_;
    std::deque<Node> nodes_;
};

// ---- arithmetic -------------------------------------------------------------

Var matmul(Var a, Var b);
// x * W + b, with b a [1 x n] row broadcast over rows.
Var linear(Var x, Var w, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// a + row, row is [1 x cols] broadcast over rows.
Var add_row(Var a, Var row);
// a * col, col is [rows x 1] broadcast over columns.
Var mul_col(Var a, Var col);
Var scale(Var a, double k);
Var add_scalar(Var a, double k);
Var one_minus(Var a);
Var square(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var exp(Var a);
// log(max(a, floor)); zero gradient where the floor is active.
Var log(Var a, double floor = 0.0);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// ---- shape -----------------------------------------------------------------

Var concat_cols(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
Var concat_rows(std::span<const Var> parts);
Var concat_rows(std::initializer_list<Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var reshape(Var a, std::size_t rows, std::size_t cols);
// Embedding lookup: row i of the result is table row ids[i].
Var gather_rows(Var table, std::span<const int> ids);
// [B x D] -> [(B*steps) x D], each row repeated `steps` times.
Var repeat_rows(Var a, std::size_t steps);
// Row t of every sequence in a flattened [(B*steps) x D] tensor -> [B x D].
Var seq_step(Var seq, std::size_t steps, std::size_t t);
// Inverse of seq_step over all t: steps[t] is [B x D].
Var stack_steps(std::span<const Var> steps);

// ---- reductions and normalisation --------------------------------------------

Var sum(Var a);
Var mean(Var a);
// sum_ij w_ij * a_ij for a constant weight tensor of the same shape.
Var weighted_sum(Var a, const Tensor& w);
// Row-wise sum -> [rows x 1].
Var row_sum(Var a);
// Row-wise softmax. Entries with mask == 0 get probability exactly 0; each row
// must keep at least one unmasked entry. mask may be null.
Var softmax(Var a, const Tensor* mask = nullptr);
Var log_softmax(Var a);
// Element (r, cols[r]) of every row -> [rows x 1].
Var pick(Var a, std::span<const int> cols);

// ---- sequence attention ------------------------------------------------------

// scores[b, t] = seq[b*steps + t] . q[b]
Var seq_dot(Var seq, Var q, std::size_t steps);
// out[b] = sum_t w[b, t] * seq[b*steps + t]
Var seq_weighted_sum(Var w, Var seq, std::size_t steps);

// ---- fused cells -------------------------------------------------------------

// gates [B x 4H] laid out (input, forget, cell, output) pre-activations.
// Returns [B x 2H] = (h, c) of the standard LSTM update.
Var lstm_cell(Var gates, Var c_prev);
// m * fresh + (1 - m) * old for a constant [rows x 1] mask m.
Var blend_mask(Var fresh, Var old, const Tensor& m);
// gate * a + (1 - gate) * b with gate [rows x 1] broadcast over columns.
Var gate_mix(Var gate, Var a, Var b);
// Pointer-generator output distribution over `width` extended ids:
// p_gen * [p_vocab, 0...] + (1 - p_gen) * scatter(attn, ext_ids).
// ext_ids is [B x T] (row-major); PAD positions must carry zero attention.
Var copy_mix(Var p_vocab, Var p_gen, Var attn, std::span<const int> ext_ids, std::size_t width);

}  // namespace ag
}  // namespace dahg
