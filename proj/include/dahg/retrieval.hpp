#pragma once

// TF-IDF index over document+headline text: prototype retrieval, most-similar
// document lookup and uniform negative sampling.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dahg/corpus.hpp"

namespace dahg {

// Sorted by term id, no zero entries.
struct SparseVector {
    std::vector<std::pair<int, double>> entries;

    bool empty() const { return entries.empty(); }
    double weight(int term) const;
};

// sum_t a_t * b_t
double similarity(const SparseVector& a, const SparseVector& b);

struct Negatives {
    const Pair* attractive = nullptr;    // Y^a
    const Pair* unattractive = nullptr;  // Y^n
    const Pair* document = nullptr;      // X^q
};

class TfIdfIndex {
  public:
    static constexpr int kFormatVersion = 1;

    // weight(t, d) = tf(t, d) * ln(N / df(t)); zero weights are dropped.
    static TfIdfIndex build(std::vector<Pair> pairs);

    std::size_t size() const { return pairs_.size(); }
    const std::vector<Pair>& pairs() const { return pairs_; }
    const Pair& pair(std::size_t i) const { return pairs_.at(i); }
    const SparseVector& vector(std::size_t i) const { return vectors_.at(i); }
    std::optional<std::size_t> find(const std::string& id) const;

    std::size_t document_frequency(const std::string& term) const;
    std::size_t term_count() const { return terms_.size(); }
    // Vector of arbitrary text against this index's statistics; unknown terms
    // are ignored.
    SparseVector vectorize(const Tokens& document, const Tokens& headline) const;

    const std::vector<std::size_t>& attractive_pool() const { return attractive_; }
    const std::vector<std::size_t>& unattractive_pool() const { return unattractive_; }

    // Most similar indexed pair; the query's own id is excluded when indexed.
    // Ties go to the smallest id.
    const Pair& retrieve_prototype(const Pair& query) const;
    // Most similar indexed document to the prototype, never the prototype itself.
    const Pair& retrieve_similar_document(const Pair& prototype) const;
    // Index positions, same rules as above.
    std::size_t retrieve_prototype_index(const Pair& query) const;
    std::size_t retrieve_similar_index(const Pair& prototype) const;

    // Y^a uniform over attractive pairs, Y^n uniform over unattractive pairs, X^q
    // uniform over all pairs except the prototype.
    Negatives sample_negatives(const Pair& prototype, std::mt19937_64& rng) const;

    void save(const std::filesystem::path& path) const;
    static TfIdfIndex load(const std::filesystem::path& path);

  private:
    std::size_t argmax_excluding(const SparseVector& q, const std::string& exclude_id) const;

    std::vector<Pair> pairs_;
    std::unordered_map<std::string, int> terms_;
    std::vector<std::size_t> df_;
    std::vector<SparseVector> vectors_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::vector<std::size_t> attractive_;
    std::vector<std::size_t> unattractive_;
};

}  // namespace dahg
