#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "dahg/error.hpp"
#include "dahg/generator.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace dahg;
using dahg::test::grad_check;
using dahg::test::random_tensor;
using dahg::test::ToyModel;
using dahg::test::exhaustive_best;
using dahg::test::log_normalize;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct GeneratorFixture {
    GeneratorDims dims{9, 4, 6, 3, 5};
    ParameterStore store;
    Embedding embedding;
    HeadlineGenerator gen;
    Tensor doc, polished, style;
    Tensor mask;
    std::vector<int> extended;
    std::size_t steps = 4;

    GeneratorFixture() {
        embedding = Embedding(store, dims.vocab, dims.embedding);
        gen = HeadlineGenerator(store, dims);
        std::mt19937_64 rng(21);
        init_gaussian(store, 0.4, rng);
        doc = random_tensor(2 * steps, dims.state, rng);
        polished = random_tensor(2 * steps, dims.state, rng);
        style = random_tensor(2, dims.latent, rng);
        mask = Tensor(2, steps, 1.0);
        mask(1, 3) = 0.0;
        for (std::size_t k = 0; k < dims.state; ++k) {
            doc(7, k) = 0.0;
            polished(7, k) = 0.0;
        }
        // row 0 copies two OOVs (ids 9 and 10), row 1 one
        extended = {4, 9, 10, 9, 5, 6, 9, 0};
    }

    SourceMemory memory(ag::Tape& t) const {
        SourceMemory m;
        m.doc_states = t.constant(doc);
        m.polished_states = t.constant(polished);
        m.mask = mask;
        m.steps = steps;
        m.extended_ids = extended;
        m.width = dims.vocab + 2;
        return m;
    }

    DecoderStep run(ag::Tape& t, const StepOverrides* ov = nullptr) const {
        SourceMemory m = memory(t);
        std::mt19937_64 rng(5);
        const DecoderState init = gen.init(t, t.constant(random_tensor(2, dims.state, rng)));
        const int prev[] = {Vocabulary::kStart, 6};
        return gen.decode(t, init, embedding.lookup(t, prev), m, gen.project_style(t, t.constant(style)), ov);
    }
};

bool same(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) && std::equal(a.data(), a.data() + a.size(), b.data());
}

}  // namespace

TEST_CASE("decoder initial state is an affine bridge with a zero context") {
    GeneratorFixture f;
    for (const char* name : {"decoder.bridge_h.b", "decoder.bridge_c.b"}) f.store.get(name).value.fill(0.0);
    ag::Tape t;
    const DecoderState z = f.gen.init(t, t.constant(Tensor(2, f.dims.state)));
    for (double v : z.h.value().flat()) CHECK(v == 0.0);
    for (double v : z.c.value().flat()) CHECK(v == 0.0);
    for (double v : z.context.value().flat()) CHECK(v == 0.0);

    std::mt19937_64 rng(1);
    const Tensor pooled = random_tensor(2, f.dims.state, rng);
    const DecoderState a = f.gen.init(t, t.constant(pooled));
    const DecoderState b = f.gen.init(t, t.constant(pooled));
    CHECK(same(a.h.value(), b.h.value()));

    GeneratorFixture g;
    auto loss = [&](ag::Tape& tape) {
        const DecoderState s = g.gen.init(tape, tape.constant(pooled));
        return ag::add(ag::sum(ag::square(s.h)), ag::sum(ag::tanh(s.c)));
    };
    std::vector<Parameter*> bridge{&g.store.get("decoder.bridge_h.w"), &g.store.get("decoder.bridge_h.b"),
                                   &g.store.get("decoder.bridge_c.w"), &g.store.get("decoder.bridge_c.b")};
    CHECK(grad_check(g.store, bridge, loss, 8, 1e-6).failed == 0);
}

TEST_CASE("decoder step distributions and gates are well formed") {
    GeneratorFixture f;
    ag::Tape t;
    const DecoderStep st = f.run(t);
    for (std::size_t r = 0; r < 2; ++r) {
        double a = 0.0, b = 0.0, v = 0.0, fin = 0.0;
        for (std::size_t p = 0; p < f.steps; ++p) {
            a += st.attn_doc.value()(r, p);
            b += st.attn_polished.value()(r, p);
        }
        for (std::size_t w = 0; w < f.dims.vocab; ++w) v += st.p_vocab.value()(r, w);
        for (std::size_t w = 0; w < f.dims.vocab + 2; ++w) fin += st.p_final.value()(r, w);
        CHECK(a == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(b == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(fin == doctest::Approx(1.0).epsilon(1e-12));
        for (const ag::Var* g : {&st.edit_gate, &st.guide_gate, &st.p_gen}) {
            CHECK(g->value()(r, 0) > 0.0);
            CHECK(g->value()(r, 0) < 1.0);
        }
    }
    CHECK(st.attn_doc.value()(1, 3) == 0.0);
    CHECK(st.attn_polished.value()(1, 3) == 0.0);
}

TEST_CASE("P_v matches an explicit softmax of the guided state") {
    GeneratorFixture f;
    ag::Tape t;
    const DecoderStep st = f.run(t);
    const Tensor& w = f.store.get("decoder.vocab.w").value;
    const Tensor& b = f.store.get("decoder.vocab.b").value;
    for (std::size_t r = 0; r < 2; ++r) {
        std::vector<double> z(f.dims.vocab);
        double total = 0.0;
        for (std::size_t v = 0; v < f.dims.vocab; ++v) {
            z[v] = b(0, v);
            for (std::size_t k = 0; k < f.dims.hidden; ++k) z[v] += st.guided.value()(r, k) * w(k, v);
            z[v] = std::exp(z[v]);
            total += z[v];
        }
        for (std::size_t v = 0; v < f.dims.vocab; ++v) {
            CHECK(st.p_vocab.value()(r, v) == doctest::Approx(z[v] / total).epsilon(1e-12));
        }
    }
}

TEST_CASE("forced gates select one stream exactly and mix linearly") {
    GeneratorFixture f;
    ag::Tape t;
    StepOverrides ov;
    ov.edit_gate = 1.0;
    ov.guide_gate = 1.0;
    const DecoderStep st = f.run(t, &ov);
    CHECK(same(st.state.context.value(), st.ctx_doc.value()));
    CHECK(same(st.guided.value(), st.out_state.value()));

    ov.edit_gate = 0.0;
    const DecoderStep zero = f.run(t, &ov);
    CHECK(same(zero.state.context.value(), zero.ctx_polished.value()));

    for (double gamma : {0.1, 0.35, 0.8}) {
        ov.edit_gate = gamma;
        const DecoderStep s = f.run(t, &ov);
        for (std::size_t i = 0; i < s.state.context.value().size(); ++i) {
            const double want = gamma * s.ctx_doc.value()[i] + (1.0 - gamma) * s.ctx_polished.value()[i];
            CHECK(s.state.context.value()[i] == doctest::Approx(want).epsilon(1e-14));
        }
    }
}

TEST_CASE("a single valid source position gives point-mass attention") {
    GeneratorFixture f;
    f.mask = Tensor(2, f.steps);
    f.mask(0, 2) = 1.0;
    f.mask(1, 0) = 1.0;
    ag::Tape t;
    const DecoderStep st = f.run(t);
    CHECK(st.attn_doc.value()(0, 2) == 1.0);
    CHECK(st.attn_polished.value()(0, 2) == 1.0);
    CHECK(st.attn_doc.value()(1, 0) == 1.0);
    CHECK(st.attn_polished.value()(1, 0) == 1.0);
}

TEST_CASE("copy distribution cases and scatter oracle") {
    GeneratorFixture f;
    ag::Tape t;
    StepOverrides ov;
    ov.p_gen = 1.0;
    DecoderStep st = f.run(t, &ov);
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t w = 0; w < f.dims.vocab; ++w) CHECK(st.p_final.value()(r, w) == st.p_vocab.value()(r, w));
        CHECK(st.p_final.value()(r, 9) == 0.0);
    }

    ov.p_gen = 0.0;
    f.mask = Tensor(2, f.steps);
    f.mask(0, 2) = 1.0;  // extended id 10, an OOV
    f.mask(1, 2) = 1.0;  // extended id 9
    st = f.run(t, &ov);
    CHECK(st.p_final.value()(0, 10) == 1.0);
    CHECK(st.p_final.value()(1, 9) == 1.0);

    GeneratorFixture g;
    st = g.run(t);
    for (std::size_t r = 0; r < 2; ++r) {
        const double pg = st.p_gen.value()(r, 0);
        std::vector<double> want(g.dims.vocab + 2, 0.0);
        for (std::size_t w = 0; w < g.dims.vocab; ++w) want[w] = pg * st.p_vocab.value()(r, w);
        for (std::size_t p = 0; p < g.steps; ++p) {
            want[static_cast<std::size_t>(g.extended[r * g.steps + p])] += (1.0 - pg) * st.attn_doc.value()(r, p);
        }
        for (std::size_t w = 0; w < want.size(); ++w) CHECK(st.p_final.value()(r, w) == doctest::Approx(want[w]).epsilon(1e-13));
    }
}

TEST_CASE("sequence loss cases") {
    ag::Tape t;
    // point masses on the targets
    Tensor p(2, 5);
    p(0, 3) = 1.0;
    p(1, 1) = 1.0;
    const std::vector<ag::Var> exact{t.constant(p)};
    const std::vector<int> targets{3, 1};
    CHECK(sequence_loss(exact, targets, Tensor(2, 1, 1.0)).item() == 0.0);

    const std::vector<ag::Var> uniform{t.constant(Tensor(2, 5, 0.2)), t.constant(Tensor(2, 5, 0.2))};
    const std::vector<int> t2{1, 2, 3, 4};
    CHECK(sequence_loss(uniform, t2, Tensor(2, 2, 1.0)).item() == doctest::Approx(std::log(5.0)).epsilon(1e-14));

    std::mt19937_64 rng(3);
    std::vector<ag::Var> steps;
    std::vector<Tensor> raw;
    for (int s = 0; s < 3; ++s) {
        Tensor r = random_tensor(3, 6, rng, 0.01, 1.0);
        for (std::size_t b = 0; b < 3; ++b) {
            double sum = 0.0;
            for (std::size_t w = 0; w < 6; ++w) sum += r(b, w);
            for (std::size_t w = 0; w < 6; ++w) r(b, w) /= sum;
        }
        raw.push_back(r);
        steps.push_back(t.constant(r));
    }
    const std::vector<int> tg{1, 5, 2, 0, 3, 3, 4, 4, 0};
    Tensor mask(3, 3, 1.0);
    mask(1, 2) = 0.0;
    mask(2, 1) = 0.0;
    mask(2, 2) = 0.0;
    double want = 0.0;
    for (std::size_t b = 0; b < 3; ++b) {
        for (std::size_t s = 0; s < 3; ++s) {
            if (mask(b, s) != 0.0) want -= std::log(raw[s](b, static_cast<std::size_t>(tg[b * 3 + s])));
        }
    }
    SequenceLossStats stats;
    CHECK(sequence_loss(steps, tg, mask, &stats).item() == doctest::Approx(want / 6.0).epsilon(1e-13));
    CHECK(stats.tokens == 6);
    CHECK(stats.clamped == 0);

    // zero probability on a target is clamped and counted
    Tensor z(1, 3);
    z(0, 0) = 1.0;
    const std::vector<ag::Var> zero{t.constant(z)};
    const std::vector<int> miss{2};
    const double clamped = sequence_loss(zero, miss, Tensor(1, 1, 1.0), &stats).item();
    CHECK(clamped == doctest::Approx(-std::log(kProbabilityFloor)));
    CHECK(stats.clamped == 1);
    CHECK_THROWS_AS(sequence_loss(zero, miss, Tensor(1, 1, 0.0)), Error);
}

TEST_CASE("teacher-forced sequence loss gradients match finite differences") {
    GeneratorFixture f;
    std::vector<Pair> pairs{make_pair("a", "w4 w5 zz", "w5 zz"), make_pair("b", "w6 w4", "w4 w6")};
    const Vocabulary vocab = Vocabulary::from_tokens({"<pad>", "<unk>", "<s>", "</s>", "w4", "w5", "w6", "w7", "w8"});
    std::vector<TrainingExample> ex{{&pairs[0], &pairs[1], &pairs[1], &pairs[1], &pairs[0], &pairs[1]},
                                    {&pairs[1], &pairs[0], &pairs[0], &pairs[0], &pairs[0], &pairs[1]}};
    const Batch batch = make_batch(ex, vocab, BatchLimits{4, 2, 2});
    f.extended = batch.doc_extended;
    f.mask = batch.doc.mask;
    std::mt19937_64 rng(7);
    const Tensor pooled = random_tensor(2, f.dims.state, rng);
    Parameter& style = f.store.add("test.style", 2, f.dims.latent);
    style.value = f.style;
    auto loss = [&](ag::Tape& t) {
        SourceMemory m = f.memory(t);
        m.width = vocab.size() + batch.max_oov;
        const DecoderState init = f.gen.init(t, t.constant(pooled));
        return teacher_forced_loss(t, f.gen, f.embedding, m, f.gen.project_style(t, t.param(style)), init, batch);
    };
    const auto res = grad_check(f.store, f.store.all(), loss, 6, 1e-3);
    CHECK_MESSAGE(res.failed == 0, res.worst_param << " " << res.worst_relative);
    CHECK(res.checked > 60);
}

TEST_CASE("beam search with beam 1 is greedy decoding") {
    std::mt19937_64 rng(11);
    std::vector<std::vector<double>> table(6);
    for (auto& row : table) {
        row.resize(6);
        for (double& v : row) v = std::uniform_real_distribution<double>(-3.0, 0.0)(rng);
        row = log_normalize(row);
    }
    auto f = [&](const std::vector<int>& prefix) { return table[prefix.empty() ? 0 : static_cast<std::size_t>(prefix.back())]; };
    ToyModel model(6, f);
    const BeamConfig cfg{1, 2, 6};
    const auto out = beam_search(model, cfg);
    REQUIRE_FALSE(out.empty());

    std::vector<int> greedy;
    for (;;) {
        const auto next = f(greedy);
        std::size_t arg = 1;
        for (std::size_t w = 2; w < next.size(); ++w) {
            if (next[w] > next[arg]) arg = w;
        }
        if (greedy.size() == cfg.max_len) break;
        greedy.push_back(static_cast<int>(arg));
    }
    // greedy never chooses STOP, so every completion along the path is a candidate
    Hypothesis best;
    double best_score = kNegInf;
    double prefix_lp = 0.0;
    for (std::size_t len = 0; len <= greedy.size(); ++len) {
        const std::vector<int> p(greedy.begin(), greedy.begin() + static_cast<long>(len));
        if (len >= cfg.min_len) {
            Hypothesis h{p, prefix_lp + f(p)[0], true};
            if (h.score() > best_score) {
                best = h;
                best_score = h.score();
            }
        }
        if (len < greedy.size()) prefix_lp += f(p)[static_cast<std::size_t>(greedy[len])];
    }
    CHECK(out.front().tokens == best.tokens);
    CHECK(out.front().log_prob == doctest::Approx(best.log_prob).epsilon(1e-14));
}

TEST_CASE("beam search without STOP returns max_len tokens") {
    ToyModel model(5, [](const std::vector<int>&) { return std::vector<double>{kNegInf, -1.0, -2.0, -1.5, -3.0}; });
    const auto out = beam_search(model, BeamConfig{4, 2, 7});
    REQUIRE_FALSE(out.empty());
    CHECK(out.front().tokens.size() == 7);
    CHECK_FALSE(out.front().completed);
    CHECK(out.front().tokens == std::vector<int>(7, 1));
}

TEST_CASE("beam search STOP suppression before min_len") {
    ToyModel model(3, [](const std::vector<int>&) { return log_normalize({5.0, 0.0, 0.0}); });
    const auto out = beam_search(model, BeamConfig{2, 3, 6});
    for (const Hypothesis& h : out) CHECK(h.tokens.size() >= 3);
    CHECK(out.front().tokens.size() == 3);
    CHECK(out.front().completed);
}

TEST_CASE("beam 4 on a step-dependent toy model matches exhaustive search") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        std::vector<std::vector<double>> per_step(5);
        for (auto& row : per_step) {
            row.resize(5);
            for (double& v : row) v = std::normal_distribution<double>(0.0, 1.5)(rng);
            row = log_normalize(row);
        }
        ToyModel model(5, [&](const std::vector<int>& p) { return per_step[p.size()]; });
        const BeamConfig cfg{4, 1, 4};
        const Hypothesis want = exhaustive_best(model, cfg);
        const auto got = beam_search(model, cfg);
        CAPTURE(seed);
        CHECK(got.front().tokens == want.tokens);
        CHECK(got.front().score() == doctest::Approx(want.score()).epsilon(1e-14));
    }
}

TEST_CASE("a beam wide enough to hold every prefix matches exhaustive search on a bigram model") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(100 + seed);
        std::vector<std::vector<double>> bigram(5);
        for (auto& row : bigram) {
            row.resize(5);
            for (double& v : row) v = std::normal_distribution<double>(0.0, 1.5)(rng);
            row = log_normalize(row);
        }
        ToyModel model(5, [&](const std::vector<int>& p) { return bigram[p.empty() ? 0 : static_cast<std::size_t>(p.back())]; });
        const BeamConfig cfg{256, 1, 4};
        const Hypothesis want = exhaustive_best(model, cfg);
        const auto got = beam_search(model, cfg);
        CHECK(got.front().tokens == want.tokens);
        CHECK(got.front().score() == doctest::Approx(want.score()).epsilon(1e-14));
    }
}

TEST_CASE("returned hypotheses are sorted by non-increasing score") {
    std::mt19937_64 rng(5);
    std::vector<std::vector<double>> bigram(6);
    for (auto& row : bigram) {
        row.resize(6);
        for (double& v : row) v = std::normal_distribution<double>(0.0, 1.0)(rng);
        row = log_normalize(row);
    }
    ToyModel model(6, [&](const std::vector<int>& p) { return bigram[p.empty() ? 0 : static_cast<std::size_t>(p.back())]; });
    const auto out = beam_search(model, BeamConfig{4, 2, 8});
    REQUIRE(out.size() > 1);
    for (std::size_t i = 1; i < out.size(); ++i) CHECK(out[i - 1].score() >= out[i].score());
    CHECK_THROWS_AS(beam_search(model, BeamConfig{0, 1, 3}), Error);
    CHECK_THROWS_AS(beam_search(model, BeamConfig{2, 5, 3}), Error);
}

TEST_CASE("decoder beam model follows the decoder's distributions") {
    GeneratorFixture f;
    ag::Tape t(false);
    SourceMemory m;
    std::mt19937_64 rng(3);
    m.doc_states = t.constant(random_tensor(f.steps, f.dims.state, rng));
    m.polished_states = t.constant(random_tensor(f.steps, f.dims.state, rng));
    m.mask = Tensor(1, f.steps, 1.0);
    m.steps = f.steps;
    m.extended_ids = {4, 9, 5, 9};
    m.width = f.dims.vocab + 1;
    ag::Var sp = f.gen.project_style(t, t.constant(random_tensor(1, f.dims.latent, rng)));
    const DecoderState init = f.gen.init(t, t.constant(random_tensor(1, f.dims.state, rng)));
    DecoderBeamModel model(t, f.gen, f.embedding, m, sp, init);
    const auto lp = model.log_probs(model.initial_state());
    REQUIRE(lp.size() == m.width);
    const int start[] = {Vocabulary::kStart};
    const DecoderStep st = f.gen.decode(t, init, f.embedding.lookup(t, start), m, sp);
    for (std::size_t w = 0; w < lp.size(); ++w) CHECK(lp[w] == doctest::Approx(std::log(st.p_final.value()(0, w))).epsilon(1e-12));

    // an OOV token fed back is embedded as UNK
    const std::size_t oov_state = model.extend(0, 9);
    const auto after_oov = model.log_probs(oov_state);
    const std::size_t unk_state = model.extend(0, Vocabulary::kUnk);
    const auto after_unk = model.log_probs(unk_state);
    for (std::size_t w = 0; w < lp.size(); ++w) CHECK(after_oov[w] == after_unk[w]);

    const auto out = beam_search(model, BeamConfig{3, 2, 5});
    REQUIRE_FALSE(out.empty());
    CHECK(out.front().tokens.size() >= 2);
    CHECK(out.front().tokens.size() <= 5);
}
