#include "dahg/layers.hpp"

namespace dahg {

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, ParamGroup group) {
    Linear l;
    l.weight = &store.add(name + ".w", in, out, group);
    l.bias = &store.add(name + ".b", 1, out, group);
    return l;
}

ag::Var Linear::operator()(ag::Tape& tape, ag::Var x) const {
    return ag::linear(x, tape.param(*weight), tape.param(*bias));
}

LstmLayer LstmLayer::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden) {
    LstmLayer l;
    l.w_input = &store.add(name + ".w_x", in, 4 * hidden);
    l.w_hidden = &store.add(name + ".w_h", hidden, 4 * hidden);
    l.bias = &store.add(name + ".b", 1, 4 * hidden);
    return l;
}

ag::Var LstmLayer::project(ag::Tape& tape, ag::Var inputs) const {
    return ag::linear(inputs, tape.param(*w_input), tape.param(*bias));
}

ag::Var LstmLayer::step(ag::Tape& tape, ag::Var projected_t, ag::Var h, ag::Var c) const {
    ag::Var gates = ag::add(projected_t, ag::matmul(h, tape.param(*w_hidden)));
    return ag::lstm_cell(gates, c);
}

void init_gaussian(ParameterStore& store, double std, std::mt19937_64& rng) {
    for (Parameter* p : store.all()) {
        std::normal_distribution<double> dist(0.0, std);
        for (double& v : p->value.flat()) v = dist(rng);
    }
}

Tensor standard_normal(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Tensor t(rows, cols);
    for (double& v : t.flat()) v = dist(rng);
    return t;
}

}  // namespace dahg
