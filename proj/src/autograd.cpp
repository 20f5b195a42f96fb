#include "dahg/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dahg/error.hpp"
#include "dahg/kernels.hpp"

namespace dahg {

// ---- ParameterStore -----------------------------------------------------------

Parameter& ParameterStore::add(const std::string& name, std::size_t rows, std::size_t cols,
                               ParamGroup group) {
    if (contains(name)) throw Error("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->group = group;
    p->value = Tensor(rows, cols);
    p->grad = Tensor(rows, cols);
    index_.emplace(name, params_.size());
    params_.push_back(std::move(p));
    return *params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter: " + name);
    return *params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter: " + name);
    return *params_[it->second];
}

std::vector<Parameter*> ParameterStore::group(ParamGroup g) const {
    std::vector<Parameter*> out;
    for (const auto& p : params_) {
        if (p->group == g) out.push_back(p.get());
    }
    return out;
}

std::vector<Parameter*> ParameterStore::all() const {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.get());
    return out;
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) p->grad.fill(0.0);
}

void ParameterStore::zero_grad(ParamGroup g) {
    for (auto& p : params_) {
        if (p->group == g) p->grad.fill(0.0);
    }
}

namespace ag {

const Tensor& Var::value() const { return tape_->value(id_); }

double Var::item() const {
    const Tensor& v = value();
    if (v.size() != 1) throw Error("item() on a non-scalar node");
    return v[0];
}

// ---- Tape ----------------------------------------------------------------------

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(Parameter& p) {
    Node n;
    n.param = &p;
    n.needs_grad = record_;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::detach(Var v) { return constant(v.value()); }

const Tensor& Tape::value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.param != nullptr ? n.param->value : n.value;
}

Tensor& Tape::grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.param != nullptr) {
        if (!n.param->grad.same_shape(n.param->value)) {
            n.param->grad.resize(n.param->value.rows(), n.param->value.cols());
        }
        return n.param->grad;
    }
    if (!n.has_grad) {
        if (n.grad.same_shape(n.value)) {
            n.grad.fill(0.0);
        } else {
            n.grad.resize(n.value.rows(), n.value.cols());
        }
        n.has_grad = true;
    }
    return n.grad;
}

Var Tape::emit(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return emit(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Var Tape::emit(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    if (record_) {
        for (const Var& v : inputs) {
            if (v.tape() != this) throw Error("operation mixes nodes from different tapes");
            if (needs_grad(v.id())) {
                n.needs_grad = true;
                break;
            }
        }
        if (n.needs_grad) n.backward = std::move(fn);
    }
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
}

void Tape::backward(Var root) {
    if (!record_) throw Error("backward on a non-recording tape");
    if (root.tape() != this || root.value().size() != 1) throw Error("backward needs a scalar root");
    for (Node& n : nodes_) n.has_grad = false;
    if (!needs_grad(root.id())) return;
    grad(root.id())[0] = 1.0;
    for (int i = root.id(); i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.backward && n.has_grad) n.backward(*this, i);
    }
}

namespace {

const kernels::KernelTable& K() { return kernels::active(); }

void accumulate(Tensor& dst, const Tensor& src) { K().axpy(1.0, src.data(), dst.data(), src.size()); }

void check(bool ok, const char* what) {
    if (!ok) throw Error(std::string("shape mismatch in ") + what);
}

template <typename Fwd, typename Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
    const Tensor& av = a.value();
    Tensor out(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
    const int ia = a.id();
    return a.tape()->emit(std::move(out), {a}, [ia, deriv](Tape& t, int self) {
        if (!t.needs_grad(ia)) return;
        const Tensor& x = t.value(ia);
        const Tensor& y = t.value(self);
        const Tensor& go = t.grad(self);
        Tensor& ga = t.grad(ia);
        for (std::size_t i = 0; i < x.size(); ++i) ga[i] += go[i] * deriv(x[i], y[i]);
    });
}

double sigmoid_scalar(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

// ---- arithmetic -------------------------------------------------------------

Var matmul(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    check(av.cols() == bv.rows(), "matmul");
    Tensor out = dahg::matmul(av, bv);
    const int ia = a.id(), ib = b.id();
    return a.tape()->emit(std::move(out), {a, b}, [ia, ib](Tape& t, int self) {
        const Tensor& A = t.value(ia);
        const Tensor& B = t.value(ib);
        const Tensor& go = t.grad(self);
        const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
        if (t.needs_grad(ia)) kernels::gemm_nt(m, k, n, go.data(), B.data(), t.grad(ia).data(), true);
        if (t.needs_grad(ib)) kernels::gemm_tn(m, n, k, A.data(), go.data(), t.grad(ib).data(), true);
    });
}

Var linear(Var x, Var w, Var b) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    const Tensor& bv = b.value();
    check(xv.cols() == wv.rows() && bv.rows() == 1 && bv.cols() == wv.cols(), "linear");
    Tensor out(xv.rows(), wv.cols());
    for (std::size_t r = 0; r < out.rows(); ++r) std::copy(bv.data(), bv.data() + bv.cols(), out.row(r).data());
    kernels::gemm_nn(xv.rows(), wv.cols(), xv.cols(), xv.data(), wv.data(), out.data(), true);
    const int ix = x.id(), iw = w.id(), ib = b.id();
    return x.tape()->emit(std::move(out), {x, w, b}, [ix, iw, ib](Tape& t, int self) {
        const Tensor& X = t.value(ix);
        const Tensor& W = t.value(iw);
        const Tensor& go = t.grad(self);
        const std::size_t m = X.rows(), k = X.cols(), n = W.cols();
        if (t.needs_grad(ix)) kernels::gemm_nt(m, k, n, go.data(), W.data(), t.grad(ix).data(), true);
        if (t.needs_grad(iw)) kernels::gemm_tn(m, n, k, X.data(), go.data(), t.grad(iw).data(), true);
        if (t.needs_grad(ib)) {
            Tensor& gb = t.grad(ib);
            for (std::size_t r = 0; r < m; ++r) K().axpy(1.0, go.row(r).data(), gb.data(), n);
        }
    });
}

Var add(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    check(av.same_shape(bv), "add");
    Tensor out(av.rows(), av.cols());
    K().add(av.data(), bv.data(), out.data(), av.size());
    const int ia = a.id(), ib = b.id();
    return a.tape()->emit(std::move(out), {a, b}, [ia, ib](Tape& t, int self) {
        const Tensor& go = t.grad(self);
        if (t.needs_grad(ia)) accumulate(t.grad(ia), go);
        if (t.needs_grad(ib)) accumulate(t.grad(ib), go);
    });
}

Var sub(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    check(av.same_shape(bv), "sub");
    Tensor out(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
    const int ia = a.id(), ib = b.id();
    return a.tape()->emit(std::move(out), {a, b}, [ia, ib](Tape& t, int self) {
        const Tensor& go = t.grad(self);
        if (t.needs_grad(ia)) accumulate(t.grad(ia), go);
        if (t.needs_grad(ib)) K().axpy(-1.0, go.data(), t.grad(ib).data(), go.size());
    });
}

Var mul(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    check(av.same_shape(bv), "mul");
    Tensor out(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    const int ia = a.id(), ib = b.id();
    return a.tape()->emit(std::move(out), {a, b}, [ia, ib](Tape& t, int self) {
        const Tensor& go = t.grad(self);
        if (t.needs_grad(ia)) K().mul_acc(go.data(), t.value(ib).data(), t.grad(ia).data(), go.size());
        if (t.needs_grad(ib)) K().mul_acc(go.data(), t.value(ia).data(), t.grad(ib).data(), go.size());
    });
}

Var add_row(Var a, Var row) {
    const Tensor& av = a.value();
    const Tensor& rv = row.value();
    check(rv.rows() == 1 && rv.cols() == av.cols(), "add_row");
    Tensor out(av.rows(), av.cols());
    for (std::size_t r = 0; r < av.rows(); ++r) {
        K().add(av.row(r).data(), rv.data(), out.row(r).data(), av.cols());
    }
    const int ia = a.id(), ir = row.id();
    return a.tape()->emit(std::move(out), {a, row}, [ia, ir](Tape& t, int self) {
        const Tensor& go = t.grad(self);
        if (t.needs_grad(ia)) accumulate(t.grad(ia), go);
        if (t.needs_grad(ir)) {
            Tensor& gr = t.grad(ir);
            for (std::size_t r = 0; r < go.rows(); ++r) K().axpy(1.0, go.row(r).data(), gr.data(), go.cols());
        }
    });
}

Var mul_col(Var a, Var col) {
    const Tensor& av = a.value();
    const Tensor& cv = col.value();
    check(cv.cols() == 1 && cv.rows() == av.rows(), "mul_col");
    Tensor out(av.rows(), av.cols());
    for (std::size_t r = 0; r < av.rows(); ++r) {
        for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) = av(r, c) * cv[r];
    }
    const int ia = a.id(), ic = col.id();
    return a.tape()->emit(std::move(out), {a, col}, [ia, ic](Tape& t, int self) {
        const Tensor& A = t.value(ia);
        const Tensor& C = t.value(ic);
        const Tensor& go = t.grad(self);
        if (t.needs_grad(ia)) {
            Tensor& ga = t.grad(ia);
            for (std::size_t r = 0; r < A.rows(); ++r) K().axpy(C[r], go.row(r).data(), ga.row(r).data(), A.cols());
        }
        if (t.needs_grad(ic)) {
            Tensor& gc = t.grad(ic);
            for (std::size_t r = 0; r < A.rows(); ++r) gc[r] += K().dot(go.row(r).data(), A.row(r).data(), A.cols());
        }
    });
}

Var scale(Var a, double k) {
    return unary(a, [k](double x) { return k * x; }, [k](double, double) { return k; });
}

Var add_scalar(Var a, double k) {
    return unary(a, [k](double x) { return x + k; }, [](double, double) { return 1.0; });
}

Var one_minus(Var a) {
    return unary(a, [](double x) { return 1.0 - x; }, [](double, double) { return -1.0; });
}

Var square(Var a) {
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sigmoid(Var a) {
    return unary(a, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
    return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a, double floor) {
    return unary(
        a, [floor](double x) { return std::log(std::max(x, floor)); },
        [floor](double x, double) { return x > floor ? 1.0 / x : 0.0; });
}

// ---- shape -----------------------------------------------------------------

Var concat_cols(std::initializer_list<Var> parts) {
    return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw Error("concat_cols of nothing");
    const std::size_t rows = parts[0].rows();
    std::size_t cols = 0;
    std::vector<int> ids;
    std::vector<std::size_t> widths;
    for (const Var& p : parts) {
        check(p.rows() == rows, "concat_cols");
        ids.push_back(p.id());
        widths.push_back(p.cols());
        cols += p.cols();
    }
    Tensor out(rows, cols);
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        for (std::size_t r = 0; r < rows; ++r) std::copy(v.row(r).begin(), v.row(r).end(), out.row(r).data() + off);
        off += v.cols();
    }
    return parts[0].tape()->emit(std::move(out), parts, [ids, widths](Tape& t, int self) {
        const Tensor& go = t.grad(self);
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (t.needs_grad(ids[k])) {
                Tensor& g = t.grad(ids[k]);
                for (std::size_t r = 0; r < go.rows(); ++r) {
                    K().axpy(1.0, go.row(r).data() + off, g.row(r).data(), widths[k]);
                }
            }
            off += widths[k];
        }
    });
}

Var concat_rows(std::initializer_list<Var> parts) {
    return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw Error("concat_rows of nothing");
    const std::size_t cols = parts[0].cols();
    std::size_t rows = 0;
    std::vector<int> ids;
    for (const Var& p : parts) {
        check(p.cols() == cols, "concat_rows");
        ids.push_back(p.id());
        rows += p.rows();
    }
    Tensor out(rows, cols);
    std::size_t off = 0;
    for (const Var& p : parts) {
        std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + off);
        off += p.value().size();
    }
    return parts[0].tape()->emit(std::move(out), parts, [ids](Tape& t, int self) {
        const Tensor& go = t.grad(self);
        std::size_t off = 0;
        for (int id : ids) {
            const std::size_t n = t.value(id).size();
            if (t.needs_grad(id)) K().axpy(1.0, go.data() + off, t.grad(id).data(), n);
            off += n;
        }
    });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
    const Tensor& av = a.value();
    check(begin + count <= av.cols(), "slice_cols");
    Tensor out(av.rows(), count);
    for (std::size_t r = 0; r < av.rows(); ++r) {
        std::copy(av.row(r).data() + begin, av.row(r).data() + begin + count, out.row(r).data());
    }
    const int ia = a.id();
    return a.tape()->emit(std::move(out), {a}, [ia, begin, count](Tape& t, int self) {
        if (!t.needs_grad(ia)) return;
        const Tensor& go = t.grad(self);
        Tensor& ga = t.grad(ia);
        for (std::size_t r = 0; r < go.rows(); ++r) K().axpy(1.0, go.row(r).data(), ga.row(r).data() + begin, count);
    });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
    const Tensor& av = a.value();
    check(begin + count <= av.rows(), "slice_rows");
    const std::size_t cols = av.cols();
    Tensor out(count, cols);
    std::copy(av.data() + begin * cols, av.data() + (begin + count) * cols, out.data());
    const int ia = a.id();
    return a.tape()->emit(std::move(out), {a}, [ia, begin, cols](Tape& t, int self) {
        if (!t.needs_grad(ia)) return;
        const Tensor& go = t.grad(self);
        K().axpy(1.0, go.data(), t.grad(ia).data() + begin * cols, go.size());
    });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
    const Tensor& av = a.value();
    check(rows * cols == av.size(), "reshape");
    Tensor out(rows, cols, av.values());
    const int ia = a.id();
    return a.tape()->emit(std::move(out), {a}, [ia](Tape& t, int self) {
        if (!t.needs_grad(ia)) return;
        const Tensor& go = t.grad(self);
        K().axpy(1.0, go.data(), t.grad(ia).data(), go.size());
    });
}

Var gather_rows(Var table, std::span<const int> ids) {
    const Tensor& tv = table.value();
    const std::size_t cols = tv.cols();
    Tensor out(ids.size(), cols);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows()) {
            throw Error("embedding id " + std::to_string(ids[i]) + " out of range");
        }
        std::copy(tv.row(static_cast<std::size_t>(ids[i])).begin(), tv.row(static_cast<std::size_t>(ids[i])).end(),
                  out.row(i).data());
    }
    const int it = table.id();
    std::vector<int> idv(ids.begin(), ids.end());
    return table.tape()->emit(std::move(out), {table}, [it, idv = std::move(idv)](Tape& t, int self) {
        if (!t.needs_grad(it)) return;
        const Tensor& go = t.grad(self);
        Tensor& gt = t.grad(it);
        for (std::size_t i = 0; i < idv.size(); ++i) {
            K().axpy(1.0, go.row(i).data(), gt.row(static_cast<std::size_t>(idv[i])).data(), go.cols());
        }
    });
}

Var repeat_rows(Var a, std::size_t steps) {
    const Tensor& av = a.value();
    const std::size_t cols = av.cols();
    Tensor out(av.rows() * steps, cols);
    for (std::size_t b = 0; b < av.rows(); ++b) {
        for (std::size_t s = 0; s < steps; ++s) std::copy(av.row(b).begin(), av.row(b).end(), out.row(b * steps + s).data());
    }
    const int ia = a.id();
    return a.tape()->emit(std::move(out), {a}, [ia, steps](Tape& t, int self) {
        if (!t.needs_grad(ia)) return;
        const Tensor& go = t.grad(self);
        Tensor& ga = t.grad(ia);
        for (std::size_t b = 0; b < ga.rows(); ++b) {
            for (std::size_t s = 0; s < steps; ++s) K().axpy(1.0, go.row(b * steps + s).data(), ga.row(b).data(), ga.cols());
        }
    });
}

Var seq_step(Var seq, std::size_t steps, std::size_t t_index) {
    const Tensor& sv = seq.value();
    check(steps > 0 && sv.rows() % steps == 0 && t_index < steps, "seq_step");
    const std::size_t batch = sv.rows() / steps;
    const std::size_t cols = sv.cols();
    Tensor out(batch, cols);
    for (std::size_t b = 0; b < batch; ++b) {
        const auto src = sv.row(b * steps + t_index);
        std::copy(src.begin(), src.end(), out.row(b).data());
    }
    const int is = seq.id();
    return seq.tape()->emit(std::move(out), {seq}, [is, steps, t_index](Tape& t, int self) {
        if (!t.needs_grad(is)) return;
        const Tensor& go = t.grad(self);
        Tensor& gs = t.grad(is);
        for (std::size_t b = 0; b < go.rows(); ++b) {
            K().axpy(1.0, go.row(b).data(), gs.row(b * steps + t_index).data(), go.cols());
        }
    });
}

Var stack_steps(std::span<const Var> steps) {
    if (steps.empty()) throw Error("stack_steps of nothing");
    const std::size_t batch = steps[0].rows();
    const std::size_t cols = steps[0].cols();
    const std::size_t n = steps.size();
    Tensor out(batch * n, cols);
    std::vector<int> ids;
    for (std::size_t s = 0; s < n; ++s) {
        check(steps[s].rows() == batch && steps[s].cols() == cols, "stack_steps");
        ids.push_back(steps[s].id());
        const Tensor& v = steps[s].value();
        for (std::size_t b = 0; b < batch; ++b) std::copy(v.row(b).begin(), v.row(b).end(), out.row(b * n + s).data());
    }
    return steps[0].tape()->emit(std::move(out), steps, [ids](Tape& t, int self) {
        const Tensor& go = t.grad(self);
        const std::size_t n = ids.size();
        for (std::size_t s = 0; s < n; ++s) {
            if (!t.needs_grad(ids[s])) continue;
            Tensor& g = t.grad(ids[s]);
            for (std::size_t b = 0; b < g.rows(); ++b) K().axpy(1.0, go.row(b * n + s).data(), g.row(b).data(), g.cols());
        }
    });
}

// ---- reductions and normalisation --------------------------------------------

Var sum(Var a) {
    Tensor out = Tensor::scalar(a.value().sum());
    const int ia = a.id();
    return a.tape()->emit(std::move(out), {a}, [ia](Tape& t, int self) {
        if (!t.needs_grad(ia)) return;
        const double g = t.grad(self)[0];
        for (double& v : t.grad(ia).flat()) v += g;
    });
}

Var mean(Var a) {
    const double n = static_cast<double>(a.value().size());
    return scale(sum(a), 1.0 / n);
}

Var weighted_sum(Var a, const Tensor& w) {
    const Tensor& av = a.value();
    check(av.same_shape(w), "weighted_sum");
    Tensor out = Tensor::scalar(K().dot(av.data(), w.data(), av.size()));
    const int ia = a.id();
    return a.tape()->emit(std::move(out), {a}, [ia, w](Tape& t, int self) {
        if (!t.needs_grad(ia)) return;
        K().axpy(t.grad(self)[0], w.data(), t.grad(ia).data(), w.size());
    });
}

Var row_sum(Var a) {
    const Tensor& av = a.value();
    Tensor out(av.rows(), 1);
    for (std::size_t r = 0; r < av.rows(); ++r) {
        double s = 0.0;
        for (double v : av.row(r)) s += v;
        out[r] = s;
    }
    const int ia = a.id();
    return a.tape()->emit(std::move(out), {a}, [ia](Tape& t, int self) {
        if (!t.needs_grad(ia)) return;
        const Tensor& go = t.grad(self);
        Tensor& ga = t.grad(ia);
        for (std::size_t r = 0; r < ga.rows(); ++r) {
            for (double& v : ga.row(r)) v += go[r];
        }
    });
}

Var softmax(Var a, const Tensor* mask) {
    const Tensor& av = a.value();
    if (mask != nullptr) check(mask->same_shape(av), "softmax mask");
    Tensor out(av.rows(), av.cols());
    for (std::size_t r = 0; r < av.rows(); ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < av.cols(); ++c) {
            if (mask == nullptr || (*mask)(r, c) != 0.0) mx = std::max(mx, av(r, c));
        }
        if (!std::isfinite(mx)) throw Error("softmax row has no valid entries");
        double z = 0.0;
        for (std::size_t c = 0; c < av.cols(); ++c) {
            const double e = (mask == nullptr || (*mask)(r, c) != 0.0) ? std::exp(av(r, c) - mx) : 0.0;
            out(r, c) = e;
            z += e;
        }
        for (double& v : out.row(r)) v /= z;
    }
    const int ia = a.id();
    return a.tape()->emit(std::move(out), {a}, [ia](Tape& t, int self) {
        if (!t.needs_grad(ia)) return;
        const Tensor& y = t.value(self);
        const Tensor& go = t.grad(self);
        Tensor& ga = t.grad(ia);
        for (std::size_t r = 0; r < y.rows(); ++r) {
            const double dotp = K().dot(go.row(r).data(), y.row(r).data(), y.cols());
            for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += y(r, c) * (go(r, c) - dotp);
        }
    });
}

Var log_softmax(Var a) {
    const Tensor& av = a.value();
    Tensor out(av.rows(), av.cols());
    for (std::size_t r = 0; r < av.rows(); ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (double v : av.row(r)) mx = std::max(mx, v);
        double z = 0.0;
        for (double v : av.row(r)) z += std::exp(v - mx);
        const double lse = mx + std::log(z);
        for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) = av(r, c) - lse;
    }
    const int ia = a.id();
    return a.tape()->emit(std::move(out), {a}, [ia](Tape& t, int self) {
        if (!t.needs_grad(ia)) return;
        const Tensor& y = t.value(self);
        const Tensor& go = t.grad(self);
        Tensor& ga = t.grad(ia);
        for (std::size_t r = 0; r < y.rows(); ++r) {
            double gs = 0.0;
            for (double v : go.row(r)) gs += v;
            for (std::size_t c = 0; c < y.cols(); ++c) ga(r, c) += go(r, c) - std::exp(y(r, c)) * gs;
        }
    });
}

Var pick(Var a, std::span<const int> cols) {
    const Tensor& av = a.value();
    check(cols.size() == av.rows(), "pick");
    Tensor out(av.rows(), 1);
    for (std::size_t r = 0; r < av.rows(); ++r) {
        if (cols[r] < 0 || static_cast<std::size_t>(cols[r]) >= av.cols()) throw Error("pick index out of range");
        out[r] = av(r, static_cast<std::size_t>(cols[r]));
    }
    const int ia = a.id();
    std::vector<int> cv(cols.begin(), cols.end());
    return a.tape()->emit(std::move(out), {a}, [ia, cv = std::move(cv)](Tape& t, int self) {
        if (!t.needs_grad(ia)) return;
        const Tensor& go = t.grad(self);
        Tensor& ga = t.grad(ia);
        for (std::size_t r = 0; r < cv.size(); ++r) ga(r, static_cast<std::size_t>(cv[r])) += go[r];
    });
}

// ---- sequence attention ------------------------------------------------------

Var seq_dot(Var seq, Var q, std::size_t steps) {
    const Tensor& sv = seq.value();
    const Tensor& qv = q.value();
    check(steps > 0 && sv.rows() == qv.rows() * steps && sv.cols() == qv.cols(), "seq_dot");
    const std::size_t batch = qv.rows();
    const std::size_t dim = qv.cols();
    Tensor out(batch, steps);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t s = 0; s < steps; ++s) out(b, s) = K().dot(sv.row(b * steps + s).data(), qv.row(b).data(), dim);
    }
    const int is = seq.id(), iq = q.id();
    return seq.tape()->emit(std::move(out), {seq, q}, [is, iq, steps](Tape& t, int self) {
        const Tensor& S = t.value(is);
        const Tensor& Q = t.value(iq);
        const Tensor& go = t.grad(self);
        const std::size_t dim = Q.cols();
        if (t.needs_grad(is)) {
            Tensor& gs = t.grad(is);
            for (std::size_t b = 0; b < Q.rows(); ++b) {
                for (std::size_t s = 0; s < steps; ++s) K().axpy(go(b, s), Q.row(b).data(), gs.row(b * steps + s).data(), dim);
            }
        }
        if (t.needs_grad(iq)) {
            Tensor& gq = t.grad(iq);
            for (std::size_t b = 0; b < Q.rows(); ++b) {
                for (std::size_t s = 0; s < steps; ++s) K().axpy(go(b, s), S.row(b * steps + s).data(), gq.row(b).data(), dim);
            }
        }
    });
}

Var seq_weighted_sum(Var w, Var seq, std::size_t steps) {
    const Tensor& wv = w.value();
    const Tensor& sv = seq.value();
    check(wv.cols() == steps && sv.rows() == wv.rows() * steps, "seq_weighted_sum");
    const std::size_t batch = wv.rows();
    const std::size_t dim = sv.cols();
    Tensor out(batch, dim);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t s = 0; s < steps; ++s) K().axpy(wv(b, s), sv.row(b * steps + s).data(), out.row(b).data(), dim);
    }
    const int iw = w.id(), is = seq.id();
    return w.tape()->emit(std::move(out), {w, seq}, [iw, is, steps](Tape& t, int self) {
        const Tensor& W = t.value(iw);
        const Tensor& S = t.value(is);
        const Tensor& go = t.grad(self);
        const std::size_t dim = S.cols();
        if (t.needs_grad(iw)) {
            Tensor& gw = t.grad(iw);
            for (std::size_t b = 0; b < W.rows(); ++b) {
                for (std::size_t s = 0; s < steps; ++s) gw(b, s) += K().dot(go.row(b).data(), S.row(b * steps + s).data(), dim);
            }
        }
        if (t.needs_grad(is)) {
            Tensor& gs = t.grad(is);
            for (std::size_t b = 0; b < W.rows(); ++b) {
                for (std::size_t s = 0; s < steps; ++s) K().axpy(W(b, s), go.row(b).data(), gs.row(b * steps + s).data(), dim);
            }
        }
    });
}

// ---- fused cells -------------------------------------------------------------

Var lstm_cell(Var gates, Var c_prev) {
    const Tensor& gv = gates.value();
    const Tensor& cv = c_prev.value();
    const std::size_t hidden = cv.cols();
    check(gv.cols() == 4 * hidden && gv.rows() == cv.rows(), "lstm_cell");
    Tensor out(cv.rows(), 2 * hidden);
    for (std::size_t r = 0; r < cv.rows(); ++r) {
        const double* g = gv.row(r).data();
        for (std::size_t j = 0; j < hidden; ++j) {
            const double in = sigmoid_scalar(g[j]);
            const double fg = sigmoid_scalar(g[hidden + j]);
            const double cand = std::tanh(g[2 * hidden + j]);
            const double og = sigmoid_scalar(g[3 * hidden + j]);
            const double c = fg * cv(r, j) + in * cand;
            out(r, j) = og * std::tanh(c);
            out(r, hidden + j) = c;
        }
    }
    const int ig = gates.id(), ic = c_prev.id();
    return gates.tape()->emit(std::move(out), {gates, c_prev}, [ig, ic, hidden](Tape& t, int self) {
        const Tensor& G = t.value(ig);
        const Tensor& C = t.value(ic);
        const Tensor& Y = t.value(self);
        const Tensor& go = t.grad(self);
        Tensor* gg = t.needs_grad(ig) ? &t.grad(ig) : nullptr;
        Tensor* gc = t.needs_grad(ic) ? &t.grad(ic) : nullptr;
        for (std::size_t r = 0; r < C.rows(); ++r) {
            const double* g = G.row(r).data();
            for (std::size_t j = 0; j < hidden; ++j) {
                const double in = sigmoid_scalar(g[j]);
                const double fg = sigmoid_scalar(g[hidden + j]);
                const double cand = std::tanh(g[2 * hidden + j]);
                const double og = sigmoid_scalar(g[3 * hidden + j]);
                const double tc = std::tanh(Y(r, hidden + j));
                const double dh = go(r, j);
                const double dc = go(r, hidden + j) + dh * og * (1.0 - tc * tc);
                if (gg != nullptr) {
                    (*gg)(r, j) += dc * cand * in * (1.0 - in);
                    (*gg)(r, hidden + j) += dc * C(r, j) * fg * (1.0 - fg);
                    (*gg)(r, 2 * hidden + j) += dc * in * (1.0 - cand * cand);
                    (*gg)(r, 3 * hidden + j) += dh * tc * og * (1.0 - og);
                }
                if (gc != nullptr) (*gc)(r, j) += dc * fg;
            }
        }
    });
}

Var blend_mask(Var fresh, Var old, const Tensor& m) {
    const Tensor& fv = fresh.value();
    const Tensor& ov = old.value();
    check(fv.same_shape(ov) && m.rows() == fv.rows() && m.cols() == 1, "blend_mask");
    Tensor out(fv.rows(), fv.cols());
    for (std::size_t r = 0; r < fv.rows(); ++r) {
        for (std::size_t c = 0; c < fv.cols(); ++c) out(r, c) = m[r] * fv(r, c) + (1.0 - m[r]) * ov(r, c);
    }
    const int i_f = fresh.id(), i_o = old.id();
    return fresh.tape()->emit(std::move(out), {fresh, old}, [i_f, i_o, m](Tape& t, int self) {
        const Tensor& go = t.grad(self);
        for (std::size_t r = 0; r < go.rows(); ++r) {
            if (t.needs_grad(i_f) && m[r] != 0.0) K().axpy(m[r], go.row(r).data(), t.grad(i_f).row(r).data(), go.cols());
            if (t.needs_grad(i_o) && m[r] != 1.0) {
                K().axpy(1.0 - m[r], go.row(r).data(), t.grad(i_o).row(r).data(), go.cols());
            }
        }
    });
}

Var gate_mix(Var gate, Var a, Var b) {
    const Tensor& gv = gate.value();
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    check(av.same_shape(bv) && gv.cols() == 1 && gv.rows() == av.rows(), "gate_mix");
    Tensor out(av.rows(), av.cols());
    for (std::size_t r = 0; r < av.rows(); ++r) {
        for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) = gv[r] * av(r, c) + (1.0 - gv[r]) * bv(r, c);
    }
    const int ig = gate.id(), ia = a.id(), ib = b.id();
    return gate.tape()->emit(std::move(out), {gate, a, b}, [ig, ia, ib](Tape& t, int self) {
        const Tensor& G = t.value(ig);
        const Tensor& A = t.value(ia);
        const Tensor& B = t.value(ib);
        const Tensor& go = t.grad(self);
        for (std::size_t r = 0; r < A.rows(); ++r) {
            if (t.needs_grad(ia)) K().axpy(G[r], go.row(r).data(), t.grad(ia).row(r).data(), A.cols());
            if (t.needs_grad(ib)) K().axpy(1.0 - G[r], go.row(r).data(), t.grad(ib).row(r).data(), A.cols());
            if (t.needs_grad(ig)) {
                double s = 0.0;
                for (std::size_t c = 0; c < A.cols(); ++c) s += go(r, c) * (A(r, c) - B(r, c));
                t.grad(ig)[r] += s;
            }
        }
    });
}

Var copy_mix(Var p_vocab, Var p_gen, Var attn, std::span<const int> ext_ids, std::size_t width) {
    const Tensor& pv = p_vocab.value();
    const Tensor& pg = p_gen.value();
    const Tensor& av = attn.value();
    const std::size_t batch = pv.rows();
    const std::size_t vocab = pv.cols();
    const std::size_t steps = av.cols();
    check(width >= vocab && pg.rows() == batch && pg.cols() == 1 && av.rows() == batch &&
              ext_ids.size() == batch * steps,
          "copy_mix");
    Tensor out(batch, width);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t w = 0; w < vocab; ++w) out(b, w) = pg[b] * pv(b, w);
        for (std::size_t s = 0; s < steps; ++s) {
            const int id = ext_ids[b * steps + s];
            if (id < 0 || static_cast<std::size_t>(id) >= width) throw Error("copy_mix extended id out of range");
            out(b, static_cast<std::size_t>(id)) += (1.0 - pg[b]) * av(b, s);
        }
    }
    const int iv = p_vocab.id(), ig = p_gen.id(), ia = attn.id();
    std::vector<int> ids(ext_ids.begin(), ext_ids.end());
    return p_vocab.tape()->emit(std::move(out), {p_vocab, p_gen, attn}, [iv, ig, ia, ids = std::move(ids)](Tape& t, int self) {
        const Tensor& PV = t.value(iv);
        const Tensor& PG = t.value(ig);
        const Tensor& A = t.value(ia);
        const Tensor& go = t.grad(self);
        const std::size_t vocab = PV.cols();
        const std::size_t steps = A.cols();
        for (std::size_t b = 0; b < PV.rows(); ++b) {
            if (t.needs_grad(iv)) K().axpy(PG[b], go.row(b).data(), t.grad(iv).row(b).data(), vocab);
            double gpg = K().dot(go.row(b).data(), PV.row(b).data(), vocab);
            for (std::size_t s = 0; s < steps; ++s) {
                const double gw = go(b, static_cast<std::size_t>(ids[b * steps + s]));
                if (t.needs_grad(ia)) t.grad(ia)(b, s) += gw * (1.0 - PG[b]);
                gpg -= gw * A(b, s);
            }
            if (t.needs_grad(ig)) t.grad(ig)[b] += gpg;
        }
    });
}

}  // namespace ag
}  // namespace dahg
