#pragma once

// Shared helpers for the unit and acceptance tests: random data, central
// finite differences, and synthetic corpora.

#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dahg/autograd.hpp"
#include "dahg/corpus.hpp"
#include "dahg/model.hpp"
#include "dahg/training.hpp"

namespace dahg::test {

inline Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(rows, cols);
    for (double& v : t.flat()) v = u(rng);
    return t;
}

inline bool close(double a, double b, double tol) { return std::abs(a - b) <= tol; }

// |a - n| <= rel * max(|a|, |n|) + abs_floor
inline bool grad_close(double analytic, double numeric, double rel, double abs_floor = 1e-9) {
    return std::abs(analytic - numeric) <= rel * std::max(std::abs(analytic), std::abs(numeric)) + abs_floor;
}

struct GradCheckResult {
    std::size_t checked = 0;
    std::size_t failed = 0;
    double worst_relative = 0.0;
    std::string worst_param;
};

// Compares backward() against central differences for up to `per_param`
// coordinates of every parameter in `params`. `loss` must build the scalar on
// the given tape from the current parameter values, deterministically.
inline GradCheckResult grad_check(ParameterStore& store, const std::vector<Parameter*>& params,
                                  const std::function<ag::Var(ag::Tape&)>& loss, std::size_t per_param = 6,
                                  double rel = 1e-3, double eps = 1e-6, std::uint64_t seed = 5) {
    store.zero_grad();
    {
        ag::Tape tape;
        tape.backward(loss(tape));
    }
    std::mt19937_64 rng(seed);
    GradCheckResult out;
    for (Parameter* p : params) {
        const std::size_t n = p->value.size();
        std::vector<std::size_t> coords;
        if (n <= per_param) {
            for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
        } else {
            std::uniform_int_distribution<std::size_t> pick(0, n - 1);
            for (std::size_t k = 0; k < per_param; ++k) coords.push_back(pick(rng));
        }
        for (std::size_t i : coords) {
            const double saved = p->value[i];
            p->value[i] = saved + eps;
            double up;
            {
                ag::Tape t(false);
                up = loss(t).item();
            }
            p->value[i] = saved - eps;
            double down;
            {
                ag::Tape t(false);
                down = loss(t).item();
            }
            p->value[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double analytic = p->grad[i];
            ++out.checked;
            const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
            const double r = std::abs(analytic - numeric) / scale;
            if (!grad_close(analytic, numeric, rel)) {
                ++out.failed;
                if (r > out.worst_relative) {
                    out.worst_relative = r;
                    out.worst_param = p->name + "[" + std::to_string(i) + "]";
                }
            }
        }
    }
    return out;
}

// Pairs whose document tokens come from one of `topics` disjoint word sets and
// whose headline repeats topic words; attractive headlines end with "! ?" and
// draw more than 20 comments.
inline std::vector<Pair> synthetic_style_corpus(std::size_t count, std::size_t topics, std::uint64_t seed,
                                                const std::string& prefix = "syn-") {
    std::mt19937_64 rng(seed);
    std::vector<Pair> out;
    constexpr std::size_t kWordsPerTopic = 8;
    std::uniform_int_distribution<std::size_t> word(0, kWordsPerTopic - 1);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t topic = i % topics;
        const bool attractive = (i / topics) % 2 == 0;
        auto w = [&](std::size_t k) { return "t" + std::to_string(topic) + "w" + std::to_string(k); };
        std::string doc, head;
        for (std::size_t k = 0; k < 12; ++k) doc += (k ? " " : "") + w(word(rng));
        for (std::size_t k = 0; k < 4; ++k) head += (k ? " " : "") + w(word(rng));
        if (attractive) head += " ! ?";
        char id[32];
        std::snprintf(id, sizeof id, "%s%04zu", prefix.c_str(), i);
        out.push_back(make_pair(id, doc, head, attractive ? 40 : 3));
    }
    return out;
}

// A small configuration for fast tests.
inline TrainConfig tiny_config() {
    TrainConfig c;
    c.seed = 3;
    c.batch_size = 4;
    c.lr = 3e-3;
    c.kl_anneal_batches = 20;
    c.vocab_cap = 500;
    c.steps = 10;
    c.limits = {24, 8, 8};
    c.model.embedding = 8;
    c.model.hidden = 6;
    c.model.latent = 5;
    c.model.decoder_hidden = 7;
    c.model.hops = 2;
    c.beam = {3, 2, 8};
    c.checkpoint_dir.clear();
    c.metrics_log.clear();
    return c;
}

}  // namespace dahg::test
