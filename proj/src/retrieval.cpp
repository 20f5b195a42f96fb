#include "dahg/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>

#include "dahg/error.hpp"

namespace dahg {

double SparseVector::weight(int term) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), term, [](const auto& e, int t) { return e.first < t; });
    return (it != entries.end() && it->first == term) ? it->second : 0.0;
}

double similarity(const SparseVector& a, const SparseVector& b) {
    double s = 0.0;
    auto ia = a.entries.begin();
    auto ib = b.entries.begin();
    while (ia != a.entries.end() && ib != b.entries.end()) {
        if (ia->first < ib->first) {
            ++ia;
        } else if (ib->first < ia->first) {
            ++ib;
        } else {
            s += ia->second * ib->second;
            ++ia;
            ++ib;
        }
    }
    return s;
}

namespace {

std::map<std::string, std::size_t> term_counts(const Tokens& document, const Tokens& headline) {
    std::map<std::string, std::size_t> tf;
    for (const auto& t : document) ++tf[t];
    for (const auto& t : headline) ++tf[t];
    return tf;
}

}  // namespace

TfIdfIndex TfIdfIndex::build(std::vector<Pair> pairs) {
    if (pairs.empty()) throw Error("cannot index an empty corpus");
    TfIdfIndex idx;
    idx.pairs_ = std::move(pairs);
    std::vector<std::map<std::string, std::size_t>> tfs;
    for (std::size_t i = 0; i < idx.pairs_.size(); ++i) {
        const Pair& p = idx.pairs_[i];
        if (!idx.by_id_.emplace(p.id, i).second) throw Error("duplicate pair id in corpus: " + p.id);
        (p.attractive ? idx.attractive_ : idx.unattractive_).push_back(i);
        tfs.push_back(term_counts(p.document, p.headline));
        for (const auto& [term, n] : tfs.back()) {
            auto [it, inserted] = idx.terms_.emplace(term, static_cast<int>(idx.df_.size()));
            if (inserted) idx.df_.push_back(0);
            ++idx.df_[static_cast<std::size_t>(it->second)];
        }
    }
    for (const auto& tf : tfs) {
        SparseVector v;
        const double n_docs = static_cast<double>(idx.pairs_.size());
        for (const auto& [term, n] : tf) {
            const int id = idx.terms_.at(term);
            const double w = static_cast<double>(n) * std::log(n_docs / static_cast<double>(idx.df_[static_cast<std::size_t>(id)]));
            if (w != 0.0) v.entries.emplace_back(id, w);
        }
        std::sort(v.entries.begin(), v.entries.end());
        idx.vectors_.push_back(std::move(v));
    }
    return idx;
}

std::optional<std::size_t> TfIdfIndex::find(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
}

std::size_t TfIdfIndex::document_frequency(const std::string& term) const {
    auto it = terms_.find(term);
    return it == terms_.end() ? 0 : df_[static_cast<std::size_t>(it->second)];
}

SparseVector TfIdfIndex::vectorize(const Tokens& document, const Tokens& headline) const {
    SparseVector v;
    const double n_docs = static_cast<double>(pairs_.size());
    for (const auto& [term, n] : term_counts(document, headline)) {
        auto it = terms_.find(term);
        if (it == terms_.end()) continue;
        const double w = static_cast<double>(n) * std::log(n_docs / static_cast<double>(df_[static_cast<std::size_t>(it->second)]));
        if (w != 0.0) v.entries.emplace_back(it->second, w);
    }
    std::sort(v.entries.begin(), v.entries.end());
    return v;
}

std::size_t TfIdfIndex::argmax_excluding(const SparseVector& q, const std::string& exclude_id) const {
    std::optional<std::size_t> best;
    double best_score = 0.0;
    for (std::size_t i = 0; i < pairs_.size(); ++i) {
        if (pairs_[i].id == exclude_id) continue;
        const double s = similarity(q, vectors_[i]);
        if (!best || s > best_score || (s == best_score && pairs_[i].id < pairs_[*best].id)) {
            best = i;
            best_score = s;
        }
    }
    if (!best) throw Error("no candidate left in the index after excluding '" + exclude_id + "'");
    return *best;
}

std::size_t TfIdfIndex::retrieve_prototype_index(const Pair& query) const {
    if (auto self = find(query.id)) return argmax_excluding(vectors_[*self], query.id);
    return argmax_excluding(vectorize(query.document, query.headline), query.id);
}

std::size_t TfIdfIndex::retrieve_similar_index(const Pair& prototype) const {
    // Same as prototype retrieval; the prototype is always excluded by id.
    return retrieve_prototype_index(prototype);
}

const Pair& TfIdfIndex::retrieve_prototype(const Pair& query) const { return pairs_[retrieve_prototype_index(query)]; }

const Pair& TfIdfIndex::retrieve_similar_document(const Pair& prototype) const {
    return pairs_[retrieve_similar_index(prototype)];
}

Negatives TfIdfIndex::sample_negatives(const Pair& prototype, std::mt19937_64& rng) const {
    if (attractive_.empty()) throw Error("attractive headline pool is empty");
    if (unattractive_.empty()) throw Error("unattractive headline pool is empty");
    const auto proto = find(prototype.id);
    const std::size_t candidates = pairs_.size() - (proto ? 1 : 0);
    if (candidates == 0) throw Error("no negative document available");

    Negatives n;
    std::uniform_int_distribution<std::size_t> pick_a(0, attractive_.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_n(0, unattractive_.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_q(0, candidates - 1);
    n.attractive = &pairs_[attractive_[pick_a(rng)]];
    n.unattractive = &pairs_[unattractive_[pick_n(rng)]];
    std::size_t q = pick_q(rng);
    if (proto && q >= *proto) ++q;
    n.document = &pairs_[q];
    return n;
}

void TfIdfIndex::save(const std::filesystem::path& path) const {
    nlohmann::json j;
    j["format"] = "dahg-tfidf";
    j["version"] = kFormatVersion;
    std::vector<std::string> terms(terms_.size());
    for (const auto& [t, id] : terms_) terms[static_cast<std::size_t>(id)] = t;
    j["terms"] = terms;
    j["df"] = df_;
    auto& docs = j["pairs"] = nlohmann::json::array();
    for (std::size_t i = 0; i < pairs_.size(); ++i) {
        const Pair& p = pairs_[i];
        nlohmann::json d;
        d["id"] = p.id;
        d["document"] = p.document;
        d["headline"] = p.headline;
        d["comment_count"] = p.comment_count;
        d["vector"] = vectors_[i].entries;
        docs.push_back(std::move(d));
    }
    std::ofstream out(path);
    if (!out) throw Error("cannot write index file: " + path.string());
    out << j.dump() << '\n';
    if (!out) throw Error("failed writing index file: " + path.string());
}

TfIdfIndex TfIdfIndex::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open index file: " + path.string());
    try {
        const auto j = nlohmann::json::parse(in);
        if (j.at("format") != "dahg-tfidf") throw Error("not a TF-IDF index file: " + path.string());
        if (j.at("version").get<int>() != kFormatVersion) {
            throw Error("index version " + std::to_string(j.at("version").get<int>()) + " is not supported");
        }
        TfIdfIndex idx;
        const auto terms = j.at("terms").get<std::vector<std::string>>();
        idx.df_ = j.at("df").get<std::vector<std::size_t>>();
        if (terms.size() != idx.df_.size()) throw Error("index term table is inconsistent");
        for (std::size_t i = 0; i < terms.size(); ++i) idx.terms_.emplace(terms[i], static_cast<int>(i));
        for (const auto& d : j.at("pairs")) {
            Pair p;
            p.id = d.at("id").get<std::string>();
            p.document = d.at("document").get<Tokens>();
            p.headline = d.at("headline").get<Tokens>();
            p.comment_count = d.at("comment_count").get<int>();
            p.attractive = p.comment_count > kAttractiveCommentThreshold;
            SparseVector v;
            v.entries = d.at("vector").get<std::vector<std::pair<int, double>>>();
            const std::size_t i = idx.pairs_.size();
            if (!idx.by_id_.emplace(p.id, i).second) throw Error("duplicate pair id in index: " + p.id);
            (p.attractive ? idx.attractive_ : idx.unattractive_).push_back(i);
            idx.pairs_.push_back(std::move(p));
            idx.vectors_.push_back(std::move(v));
        }
        if (idx.pairs_.empty()) throw Error("index file holds no pairs");
        return idx;
    } catch (const nlohmann::json::exception& e) {
        throw Error("malformed index file " + path.string() + ": " + e.what());
    }
}

}  // namespace dahg
