#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "dahg/error.hpp"
#include "dahg/retrieval.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace dahg;
using namespace dahg::test;

TEST_CASE("tf-idf weights follow tf * ln(N/df)") {
    std::vector<Pair> same{make_pair("a", "x y", "z"), make_pair("b", "y x", "z")};
    const TfIdfIndex both = TfIdfIndex::build(same);
    CHECK(both.vector(0).empty());
    CHECK(both.vector(1).empty());

    const TfIdfIndex idx = TfIdfIndex::build({make_pair("a", "t t t u", "v"), make_pair("b", "u", "v")});
    REQUIRE(idx.vector(0).entries.size() == 1);
    CHECK(idx.vector(0).entries[0].second == doctest::Approx(3.0 * std::log(2.0)).epsilon(1e-15));
    CHECK(idx.document_frequency("u") == 2);
    CHECK_THROWS_AS(TfIdfIndex::build({}), Error);
    CHECK_THROWS_AS(TfIdfIndex::build({make_pair("a", "x", "y"), make_pair("a", "z", "y")}), Error);
}

TEST_CASE("tf-idf vectors match a dense oracle and similarity matches a dense dot product") {
    const auto corpus = random_corpus(11);
    const TfIdfIndex idx = TfIdfIndex::build(corpus);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto want = dense_tfidf(corpus, corpus[i]);
        std::size_t nonzero = 0;
        for (const auto& [t, w] : want) {
            if (w == 0.0) continue;
            ++nonzero;
        }
        CHECK(idx.vector(i).entries.size() == nonzero);
        for (const auto& [term, w] : idx.vector(i).entries) CHECK(w != 0.0);
        for (std::size_t j = 0; j < corpus.size(); ++j) {
            const double s = similarity(idx.vector(i), idx.vector(j));
            CHECK(s == doctest::Approx(dense_dot(want, dense_tfidf(corpus, corpus[j]))).epsilon(1e-9));
            CHECK(s == similarity(idx.vector(j), idx.vector(i)));
        }
        double norm = 0.0;
        for (const auto& [t, w] : want) norm += w * w;
        CHECK(similarity(idx.vector(i), idx.vector(i)) == doctest::Approx(norm).epsilon(1e-12));
    }
    SparseVector a, b;
    a.entries = {{1, 2.0}, {4, 1.0}};
    b.entries = {{2, 5.0}, {5, 1.0}};
    CHECK(similarity(a, b) == 0.0);
}

TEST_CASE("pools partition the corpus by attractiveness") {
    const auto corpus = random_corpus(12);
    const TfIdfIndex idx = TfIdfIndex::build(corpus);
    std::set<std::size_t> all;
    for (std::size_t i : idx.attractive_pool()) {
        CHECK(corpus[i].attractive);
        all.insert(i);
    }
    for (std::size_t i : idx.unattractive_pool()) {
        CHECK_FALSE(corpus[i].attractive);
        CHECK(all.insert(i).second);
    }
    CHECK(all.size() == corpus.size());
}

TEST_CASE("prototype and similar-document retrieval match exhaustive scans") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto corpus = random_corpus(seed);
        const TfIdfIndex idx = TfIdfIndex::build(corpus);
        for (const Pair& p : corpus) {
            const Pair& proto = idx.retrieve_prototype(p);
            CHECK(proto.id != p.id);
            CHECK(proto.id == brute_force_argmax(corpus, p, p.id));
            CHECK(idx.retrieve_similar_document(proto).id == brute_force_argmax(corpus, proto, proto.id));
        }
        const auto queries = random_corpus(seed + 100, 5);
        for (Pair q : queries) {
            q.id = "query-" + q.id;
            CHECK(idx.retrieve_prototype(q).id == brute_force_argmax(corpus, q, q.id));
        }
    }
}

TEST_CASE("retrieval hand cases") {
    std::vector<Pair> c;
    for (int i = 0; i < 10; ++i) c.push_back(make_pair("d" + std::to_string(i), "common filler", "head"));
    c[7] = make_pair("d7", "common special", "head");
    const TfIdfIndex idx = TfIdfIndex::build(c);
    CHECK(idx.retrieve_prototype(make_pair("q", "special", "other")).id == "d7");
    CHECK(idx.retrieve_prototype(make_pair("q", "common special", "head")).id == "d7");
    // no shared informative term: every score is 0 and the smallest id wins
    CHECK(idx.retrieve_prototype(make_pair("q", "nothing", "here")).id == "d0");
    CHECK(idx.retrieve_prototype(c[0]).id == "d1");

    const TfIdfIndex two = TfIdfIndex::build({make_pair("a", "x", "y"), make_pair("b", "z", "w")});
    CHECK(two.retrieve_similar_document(two.pair(0)).id == "b");
    CHECK(two.retrieve_similar_document(two.pair(1)).id == "a");

    const TfIdfIndex dup = TfIdfIndex::build(
        {make_pair("p", "alpha beta", "gamma"), make_pair("q", "delta", "eps"), make_pair("z", "alpha beta", "gamma")});
    CHECK(dup.retrieve_similar_document(dup.pair(0)).id == "z");

    const TfIdfIndex one = TfIdfIndex::build({make_pair("only", "x", "y")});
    CHECK_THROWS_AS(one.retrieve_prototype(one.pair(0)), Error);
}

TEST_CASE("negative sampling is seeded, respects pools and is uniform") {
    const auto corpus = dahg::test::synthetic_style_corpus(12, 3, 5);
    const TfIdfIndex idx = TfIdfIndex::build(corpus);
    const Pair& proto = idx.pair(4);

    std::mt19937_64 r1(9), r2(9);
    const Negatives a = idx.sample_negatives(proto, r1);
    const Negatives b = idx.sample_negatives(proto, r2);
    CHECK(a.attractive == b.attractive);
    CHECK(a.unattractive == b.unattractive);
    CHECK(a.document == b.document);

    const std::size_t draws = 10000;
    std::map<const Pair*, double> fa, fn, fq;
    for (std::size_t i = 0; i < draws; ++i) {
        const Negatives n = idx.sample_negatives(proto, r1);
        CHECK(n.attractive->attractive);
        CHECK_FALSE(n.unattractive->attractive);
        CHECK(n.document->id != proto.id);
        ++fa[n.attractive];
        ++fn[n.unattractive];
        ++fq[n.document];
    }
    // chi-square against uniform; the 0.999 quantile for df <= 10 is below 30
    auto chi2 = [&](const std::map<const Pair*, double>& f, std::size_t k) {
        CHECK(f.size() == k);
        const double e = static_cast<double>(draws) / static_cast<double>(k);
        double s = 0.0;
        for (const auto& [p, n] : f) s += (n - e) * (n - e) / e;
        return s;
    };
    CHECK(chi2(fa, idx.attractive_pool().size()) < 30.0);
    CHECK(chi2(fn, idx.unattractive_pool().size()) < 30.0);
    CHECK(chi2(fq, corpus.size() - 1) < 30.0);

    std::vector<Pair> single{make_pair("a", "x", "y", 50), make_pair("b", "z", "y", 1), make_pair("c", "w", "y", 2)};
    const TfIdfIndex s = TfIdfIndex::build(single);
    for (int i = 0; i < 20; ++i) CHECK(s.sample_negatives(s.pair(1), r1).attractive->id == "a");

    const TfIdfIndex none = TfIdfIndex::build({make_pair("a", "x", "y", 50), make_pair("b", "z", "y", 50)});
    CHECK_THROWS_AS(none.sample_negatives(none.pair(0), r1), Error);
}

TEST_CASE("index save and load round-trips") {
    const auto corpus = random_corpus(21);
    const TfIdfIndex idx = TfIdfIndex::build(corpus);
    const auto path = std::filesystem::temp_directory_path() / "dahg_index_roundtrip.json";
    idx.save(path);
    const TfIdfIndex back = TfIdfIndex::load(path);
    REQUIRE(back.size() == idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        CHECK(back.pair(i).id == idx.pair(i).id);
        CHECK(back.pair(i).headline == idx.pair(i).headline);
        CHECK(back.vector(i).entries == idx.vector(i).entries);
        CHECK(back.retrieve_prototype(corpus[i]).id == idx.retrieve_prototype(corpus[i]).id);
    }
    CHECK(back.attractive_pool() == idx.attractive_pool());

    {
        std::ofstream out(path);
        out << "{\"format\":\"something-else\"}";
    }
    CHECK_THROWS_AS(TfIdfIndex::load(path), Error);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(TfIdfIndex::load(path), Error);
}
