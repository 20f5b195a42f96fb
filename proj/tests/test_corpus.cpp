#include <doctest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <random>

#include "dahg/corpus.hpp"
#include "dahg/error.hpp"

using namespace dahg;

namespace {

Pair simple(const std::string& id, const std::string& doc, const std::string& head, int comments = 0) {
    return make_pair(id, doc, head, comments);
}

}  // namespace

TEST_CASE("tokenize splits on whitespace, per character for CJK, and rejects empty text") {
    CHECK(tokenize("a b c") == Tokens{"a", "b", "c"});
    CHECK(tokenize("  a\tb\n") == Tokens{"a", "b"});
    CHECK_THROWS_AS(tokenize(""), Error);
    CHECK_THROWS_AS(tokenize("   "), Error);
    CHECK(tokenize("今天下雨") == Tokens{"今", "天", "下", "雨"});
    CHECK(tokenize("word") == Tokens{"word"});
    CHECK_THROWS_AS(tokenize("\xe4\xbb"), Error);
}

TEST_CASE("attractiveness follows the comment threshold") {
    CHECK_FALSE(simple("a", "x", "y", 20).attractive);
    CHECK(simple("a", "x", "y", 21).attractive);
    CHECK_THROWS_AS(simple("a", "x", "y", -1), Error);
    CHECK_THROWS_AS(simple("a", "x", "", 3), Error);
}

TEST_CASE("corpus JSONL parsing") {
    const auto pairs = parse_corpus(
        R"({"id":"1","document":"a b","headline":["c","d"],"comment_count":30})"
        "\n\n"
        R"({"id":"2","document":"e","headline":"f g","comment_count":0})");
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0].headline == Tokens{"c", "d"});
    CHECK(pairs[0].attractive);
    CHECK_FALSE(pairs[1].attractive);
    CHECK(parse_corpus(pair_to_json(pairs[0]))[0].document == pairs[0].document);
    CHECK_THROWS_WITH_AS(parse_corpus("{\"id\":\"1\"}\nnot json"), doctest::Contains("corpus line 1"), Error);
    CHECK(parse_corpus(R"({"id":"x","document":"a b"})", false)[0].headline.empty());
}

TEST_CASE("vocabulary ranks by frequency with lexicographic ties") {
    std::vector<Pair> c{simple("1", "a a b", "a")};
    Vocabulary v = Vocabulary::build(c, 6);
    CHECK(v.tokens() == std::vector<std::string>{"<pad>", "<unk>", "<s>", "</s>", "a", "b"});

    std::vector<Pair> tie{simple("1", "b a", "b a")};
    Vocabulary w = Vocabulary::build(tie, 5);
    CHECK(w.size() == 5);
    CHECK(w.contains("a"));
    CHECK_FALSE(w.contains("b"));
    CHECK(w.id("b") == Vocabulary::kUnk);

    CHECK_THROWS_AS(Vocabulary::build(std::vector<Pair>{}, 10), Error);
    CHECK_THROWS_AS(Vocabulary::build(c, 4), Error);
    CHECK(Vocabulary::build(c, 6) == v);
    CHECK(Vocabulary::from_tokens(v.tokens()) == v);
}

TEST_CASE("desk corpus vocabulary equals an independent frequency count") {
    const auto pairs = load_corpus(std::string(DAHG_TEST_DATA) + "/desk50.jsonl");
    REQUIRE(pairs.size() == 50);
    const Vocabulary v = Vocabulary::build(pairs, 500);

    std::map<std::string, long> counts;
    for (const Pair& p : pairs) {
        for (const auto& t : p.document) ++counts[t];
        for (const auto& t : p.headline) ++counts[t];
    }
    std::vector<std::pair<long, std::string>> ranked;
    for (const auto& [t, n] : counts) ranked.emplace_back(-n, t);
    std::sort(ranked.begin(), ranked.end());
    std::vector<std::string> want{v.tokens().begin(), v.tokens().begin() + 4};
    for (const auto& [n, t] : ranked) {
        if (want.size() == 500) break;
        want.push_back(t);
    }
    CHECK(v.tokens() == want);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(v.id(v.token(static_cast<int>(i))) == static_cast<int>(i));
}

TEST_CASE("extended encoding numbers OOVs by first occurrence and round-trips") {
    std::vector<Pair> c{simple("1", "x y z q r s t", "u v")};
    const Vocabulary v = Vocabulary::build(c, 14);
    REQUIRE(v.size() == 13);

    const Tokens known{"x", "y", "x"};
    auto enc = encode_extended(known, v);
    CHECK(enc.ids == enc.extended_ids);
    CHECK(enc.oovs.empty());

    // pad the vocabulary to size 10 for the hand example
    std::vector<std::string> ten(v.tokens().begin(), v.tokens().begin() + 10);
    const Vocabulary v10 = Vocabulary::from_tokens(ten);
    const std::string in_vocab = ten[4];
    const Tokens line{in_vocab, "oov1", "oov1"};
    enc = encode_extended(line, v10);
    CHECK(enc.extended_ids == std::vector<int>{v10.id(in_vocab), 10, 10});
    CHECK(enc.ids == std::vector<int>{v10.id(in_vocab), Vocabulary::kUnk, Vocabulary::kUnk});
    CHECK(enc.oovs == Tokens{"oov1"});

    std::mt19937_64 rng(4);
    const Tokens pool{"x", "y", "z", "u", "v", "new1", "new2", "new3", "q"};
    for (int trial = 0; trial < 20; ++trial) {
        Tokens t;
        for (int i = 0; i < 30; ++i) t.push_back(pool[rng() % pool.size()]);
        auto e = encode_extended(t, v);
        CHECK(decode_extended(e.extended_ids, v, e.oovs) == t);
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (e.extended_ids[i] >= static_cast<int>(v.size())) CHECK(e.ids[i] == Vocabulary::kUnk);
            else CHECK(e.ids[i] == e.extended_ids[i]);
        }
    }
    const std::vector<int> bad{static_cast<int>(v.size()) + 3};
    CHECK_THROWS_AS(decode_extended(bad, v, Tokens{"a"}), Error);

    const auto tgt = encode_target_extended(Tokens{"new2", "other", "x"}, v, Tokens{"new1", "new2"});
    CHECK(tgt == std::vector<int>{static_cast<int>(v.size()) + 1, Vocabulary::kUnk, v.id("x")});
}

TEST_CASE("padding cuts to the prefix and masks match lengths") {
    std::vector<std::vector<int>> seqs{std::vector<int>(500, 7), std::vector<int>(10, 5), {4, 5, 6}};
    std::iota(seqs[0].begin(), seqs[0].end(), 4);
    const PaddedIds p = pad_sequences(seqs, 400);
    CHECK(p.steps == 400);
    CHECK(p.lengths == std::vector<std::size_t>{400, 10, 3});
    for (std::size_t t = 0; t < 400; ++t) CHECK(p.ids[t] == 4 + static_cast<int>(t));
    for (std::size_t r = 0; r < 3; ++r) {
        double sum = 0.0;
        std::vector<int> back;
        for (std::size_t t = 0; t < p.steps; ++t) {
            sum += p.mask(r, t);
            if (p.mask(r, t) == 1.0) back.push_back(p.ids[r * p.steps + t]);
            else CHECK(p.ids[r * p.steps + t] == Vocabulary::kPad);
        }
        CHECK(sum == static_cast<double>(p.lengths[r]));
        const std::size_t keep = std::min<std::size_t>(seqs[r].size(), 400);
        CHECK(back == std::vector<int>(seqs[r].begin(), seqs[r].begin() + static_cast<long>(keep)));
    }
    CHECK_THROWS_AS(pad_sequences(std::vector<std::vector<int>>{{}}, 4), Error);

    const PaddedIds* blocks[] = {&p, &p};
    const PaddedIds s = stack_padded(blocks);
    CHECK(s.rows == 6);
    CHECK(s.mask(4, 9) == 1.0);
    CHECK(s.mask(4, 10) == 0.0);
}

TEST_CASE("training batches carry documents, targets and negatives") {
    std::vector<Pair> c{simple("1", "a b c d e", "a b", 30), simple("2", "c d e f", "c zz", 1),
                        simple("3", "e f g", "g h", 25)};
    const Vocabulary v = Vocabulary::build(c, 9);
    const Pair extra = simple("4", "a qq b", "qq a ww", 0);
    std::vector<TrainingExample> ex{
        {&c[0], &c[1], &c[2], &c[1], &c[0], &c[1]},
        {&extra, &c[0], &c[1], &c[2], &c[2], &c[1]},
    };
    const BatchLimits lim{4, 3, 2};
    const Batch b = make_batch(ex, v, lim);
    CHECK(b.size == 2);
    CHECK(b.doc.steps == 4);
    CHECK(b.doc.lengths == std::vector<std::size_t>{4, 3});
    CHECK(b.doc_oovs[1] == Tokens{"qq"});
    CHECK(b.max_oov == 1);
    const int base = static_cast<int>(v.size());
    CHECK(b.doc_extended[4 + 1] == base);
    CHECK(b.doc.ids[4 + 1] == Vocabulary::kUnk);
    for (std::size_t i = 0; i < b.doc_extended.size(); ++i) {
        CHECK(b.doc_extended[i] >= 0);
        CHECK(b.doc_extended[i] < base + static_cast<int>(b.max_oov));
    }

    // targets: START + cut headline as input, cut headline + STOP as output
    CHECK(b.decoder_input.steps == 3);
    CHECK(b.decoder_input.column(0) == std::vector<int>{Vocabulary::kStart, Vocabulary::kStart});
    CHECK(b.target_extended[3 + 0] == base);
    CHECK(b.target_extended[3 + 1] == v.id("a"));
    CHECK(b.target_extended[3 + 2] == Vocabulary::kStop);
    CHECK(b.target_mask.sum() == 6.0);
    CHECK(b.attractive_headline.ids[0] == v.id("a"));
    CHECK(b.unattractive_headline.ids[0] == v.id("c"));

    CHECK_THROWS_AS(make_batch(std::vector<TrainingExample>{}, v, lim), Error);
    std::vector<TrainingExample> broken{{&c[0], nullptr, &c[2], &c[1], &c[0], &c[1]}};
    CHECK_THROWS_AS(make_batch(broken, v, lim), Error);
}
