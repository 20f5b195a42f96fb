#include "dahg/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "dahg/error.hpp"

namespace dahg {

namespace {

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::size_t utf8_length(unsigned char lead) {
    if (lead < 0x80) return 1;
    if ((lead >> 5) == 0x6) return 2;
    if ((lead >> 4) == 0xE) return 3;
    if ((lead >> 3) == 0x1E) return 4;
    throw Error("invalid UTF-8 lead byte");
}

Tokens tokens_from_json(const nlohmann::json& j, const char* field) {
    if (j.is_string()) return tokenize(j.get<std::string>());
    if (j.is_array()) {
        Tokens out;
        for (const auto& t : j) {
            if (!t.is_string() || t.get<std::string>().empty()) {
                throw Error(std::string("field '") + field + "' must hold non-empty string tokens");
            }
            out.push_back(t.get<std::string>());
        }
        if (out.empty()) throw Error(std::string("field '") + field + "' is empty");
        return out;
    }
    throw Error(std::string("field '") + field + "' must be a string or an array");
}

}  // namespace

Tokens tokenize(std::string_view text) {
    const bool has_space = std::any_of(text.begin(), text.end(), [](char c) { return is_space(static_cast<unsigned char>(c)); });
    Tokens out;
    if (has_space) {
        std::size_t i = 0;
        while (i < text.size()) {
            while (i < text.size() && is_space(static_cast<unsigned char>(text[i]))) ++i;
            std::size_t j = i;
            while (j < text.size() && !is_space(static_cast<unsigned char>(text[j]))) ++j;
            if (j > i) out.emplace_back(text.substr(i, j - i));
            i = j;
        }
    } else if (std::any_of(text.begin(), text.end(), [](char c) { return static_cast<unsigned char>(c) >= 0x80; })) {
        std::size_t i = 0;
        while (i < text.size()) {
            const std::size_t n = utf8_length(static_cast<unsigned char>(text[i]));
            if (i + n > text.size()) throw Error("truncated UTF-8 sequence");
            out.emplace_back(text.substr(i, n));
            i += n;
        }
    } else if (!text.empty()) {
        out.emplace_back(text);
    }
    if (out.empty()) throw Error("cannot tokenize empty text");
    return out;
}

Pair make_pair(std::string id, std::string_view document, std::string_view headline, int comment_count) {
    if (comment_count < 0) throw Error("comment_count must be non-negative");
    Pair p;
    p.id = std::move(id);
    p.document = tokenize(document);
    p.headline = tokenize(headline);
    p.comment_count = comment_count;
    p.attractive = comment_count > kAttractiveCommentThreshold;
    return p;
}

std::vector<Pair> parse_corpus(std::string_view jsonl, bool require_headline) {
    std::vector<Pair> pairs;
    std::istringstream in{std::string(jsonl)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (std::all_of(line.begin(), line.end(), [](char c) { return is_space(static_cast<unsigned char>(c)); })) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            Pair p;
            p.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
            p.document = tokens_from_json(j.at("document"), "document");
            if (require_headline || j.contains("headline")) p.headline = tokens_from_json(j.at("headline"), "headline");
            p.comment_count = j.value("comment_count", 0);
            if (p.comment_count < 0) throw Error("comment_count must be non-negative");
            p.attractive = p.comment_count > kAttractiveCommentThreshold;
            pairs.push_back(std::move(p));
        } catch (const nlohmann::json::exception& e) {
            throw Error("corpus line " + std::to_string(lineno) + ": " + e.what());
        } catch (const Error& e) {
            throw Error("corpus line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return pairs;
}

std::vector<Pair> load_corpus(const std::filesystem::path& path, bool require_headline) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open corpus file: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_corpus(ss.str(), require_headline);
}

std::string join_tokens(std::span<const std::string> tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

std::string pair_to_json(const Pair& p) {
    nlohmann::json j;
    j["id"] = p.id;
    j["document"] = join_tokens(p.document);
    j["headline"] = join_tokens(p.headline);
    j["comment_count"] = p.comment_count;
    return j.dump();
}

void save_corpus(const std::filesystem::path& path, std::span<const Pair> pairs) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write corpus file: " + path.string());
    for (const Pair& p : pairs) out << pair_to_json(p) << '\n';
}

// ---- Vocabulary ------------------------------------------------------------------

Vocabulary::Vocabulary() : tokens_{"<pad>", "<unk>", "<s>", "</s>"} {
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < kSpecials) throw Error("vocabulary is missing its special tokens");
    Vocabulary v;
    v.tokens_.clear();
    v.index_.clear();
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (!v.index_.emplace(tokens[i], static_cast<int>(i)).second) throw Error("duplicate vocabulary token: " + tokens[i]);
    }
    v.tokens_ = std::move(tokens);
    return v;
}

Vocabulary Vocabulary::build(std::span<const Pair> pairs, std::size_t cap) {
    if (pairs.empty()) throw Error("cannot build a vocabulary from an empty corpus");
    if (cap < kSpecials + 1) throw Error("vocabulary cap must be at least 5");
    std::map<std::string, std::size_t> counts;
    for (const Pair& p : pairs) {
        for (const auto& t : p.document) ++counts[t];
        for (const auto& t : p.headline) ++counts[t];
    }
    Vocabulary base;
    std::vector<std::pair<std::string, std::size_t>> ranked;
    for (auto& [tok, n] : counts) {
        if (!base.contains(tok)) ranked.emplace_back(tok, n);
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> tokens = base.tokens();
    for (const auto& [tok, n] : ranked) {
        if (tokens.size() >= cap) break;
        tokens.push_back(tok);
    }
    return from_tokens(std::move(tokens));
}

int Vocabulary::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw Error("vocabulary id out of range");
    return tokens_[static_cast<std::size_t>(id)];
}

// ---- extended encodings ----------------------------------------------------------

ExtendedEncoding encode_extended(std::span<const std::string> tokens, const Vocabulary& vocab) {
    ExtendedEncoding enc;
    const int base = static_cast<int>(vocab.size());
    for (const auto& tok : tokens) {
        if (vocab.contains(tok)) {
            const int id = vocab.id(tok);
            enc.ids.push_back(id);
            enc.extended_ids.push_back(id);
            continue;
        }
        auto it = std::find(enc.oovs.begin(), enc.oovs.end(), tok);
        const int k = static_cast<int>(it - enc.oovs.begin());
        if (it == enc.oovs.end()) enc.oovs.push_back(tok);
        enc.ids.push_back(Vocabulary::kUnk);
        enc.extended_ids.push_back(base + k);
    }
    return enc;
}

std::vector<int> encode_target_extended(std::span<const std::string> tokens, const Vocabulary& vocab,
                                        std::span<const std::string> source_oovs) {
    std::vector<int> out;
    const int base = static_cast<int>(vocab.size());
    for (const auto& tok : tokens) {
        if (vocab.contains(tok)) {
            out.push_back(vocab.id(tok));
            continue;
        }
        auto it = std::find(source_oovs.begin(), source_oovs.end(), tok);
        out.push_back(it == source_oovs.end() ? Vocabulary::kUnk : base + static_cast<int>(it - source_oovs.begin()));
    }
    return out;
}

Tokens decode_extended(std::span<const int> extended_ids, const Vocabulary& vocab, std::span<const std::string> oovs) {
    Tokens out;
    const std::size_t base = vocab.size();
    for (int id : extended_ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= base + oovs.size()) throw Error("extended id out of range");
        const auto u = static_cast<std::size_t>(id);
        out.push_back(u < base ? vocab.token(id) : oovs[u - base]);
    }
    return out;
}

// ---- padding ---------------------------------------------------------------------

std::vector<int> PaddedIds::column(std::size_t t) const {
    std::vector<int> out(rows);
    for (std::size_t r = 0; r < rows; ++r) out[r] = ids[r * steps + t];
    return out;
}

Tensor PaddedIds::column_mask(std::size_t t) const {
    Tensor out(rows, 1);
    for (std::size_t r = 0; r < rows; ++r) out[r] = mask(r, t);
    return out;
}

PaddedIds pad_sequences(std::span<const std::vector<int>> seqs, std::size_t limit) {
    if (limit == 0) throw Error("padding limit must be positive");
    PaddedIds p;
    p.rows = seqs.size();
    p.steps = limit;
    p.ids.assign(p.rows * limit, Vocabulary::kPad);
    p.mask = Tensor(p.rows, limit);
    for (std::size_t r = 0; r < p.rows; ++r) {
        const std::size_t n = std::min(seqs[r].size(), limit);
        if (n == 0) throw Error("cannot pad an empty sequence");
        for (std::size_t t = 0; t < n; ++t) {
            p.ids[r * limit + t] = seqs[r][t];
            p.mask(r, t) = 1.0;
        }
        p.lengths.push_back(n);
    }
    return p;
}

PaddedIds stack_padded(std::span<const PaddedIds* const> blocks) {
    if (blocks.empty()) throw Error("nothing to stack");
    PaddedIds out;
    out.steps = blocks[0]->steps;
    for (const PaddedIds* b : blocks) {
        if (b->steps != out.steps) throw Error("stacked blocks differ in length");
        out.rows += b->rows;
    }
    out.mask = Tensor(out.rows, out.steps);
    std::size_t r0 = 0;
    for (const PaddedIds* b : blocks) {
        out.ids.insert(out.ids.end(), b->ids.begin(), b->ids.end());
        out.lengths.insert(out.lengths.end(), b->lengths.begin(), b->lengths.end());
        std::copy(b->mask.data(), b->mask.data() + b->mask.size(), out.mask.data() + r0 * out.steps);
        r0 += b->rows;
    }
    return out;
}

namespace {

std::vector<int> base_ids(std::span<const std::string> tokens, const Vocabulary& vocab, std::size_t limit) {
    std::vector<int> out;
    for (std::size_t i = 0; i < tokens.size() && i < limit; ++i) out.push_back(vocab.id(tokens[i]));
    return out;
}

void fill_documents(Batch& b, std::span<const Pair* const> docs, const Vocabulary& vocab, const BatchLimits& limits) {
    b.size = docs.size();
    std::vector<std::vector<int>> ids;
    b.doc_extended.assign(b.size * limits.doc, Vocabulary::kPad);
    for (std::size_t r = 0; r < docs.size(); ++r) {
        const Pair& p = *docs[r];
        b.ids.push_back(p.id);
        const std::size_t n = std::min(p.document.size(), limits.doc);
        ExtendedEncoding enc = encode_extended(std::span(p.document).first(n), vocab);
        std::copy(enc.extended_ids.begin(), enc.extended_ids.end(), b.doc_extended.begin() + static_cast<long>(r * limits.doc));
        b.max_oov = std::max(b.max_oov, enc.oovs.size());
        b.doc_oovs.push_back(std::move(enc.oovs));
        ids.push_back(std::move(enc.ids));
    }
    b.doc = pad_sequences(ids, limits.doc);
}

template <typename Get>
PaddedIds pad_field(std::span<const TrainingExample> examples, Get get, const Vocabulary& vocab, std::size_t limit) {
    std::vector<std::vector<int>> seqs;
    for (const auto& ex : examples) seqs.push_back(base_ids(get(ex), vocab, limit));
    return pad_sequences(seqs, limit);
}

}  // namespace

Batch make_batch(std::span<const TrainingExample> examples, const Vocabulary& vocab, const BatchLimits& limits) {
    if (examples.empty()) throw Error("cannot make a batch of size 0");
    std::vector<const Pair*> docs;
    for (const auto& ex : examples) {
        if (!ex.pair || !ex.prototype || !ex.similar || !ex.negative || !ex.attractive || !ex.unattractive) {
            throw Error("training example has unresolved retrieval links");
        }
        docs.push_back(ex.pair);
    }
    Batch b;
    fill_documents(b, docs, vocab, limits);
    b.proto_headline = pad_field(examples, [](const TrainingExample& e) -> const Tokens& { return e.prototype->headline; }, vocab, limits.proto);
    b.proto_doc = pad_field(examples, [](const TrainingExample& e) -> const Tokens& { return e.prototype->document; }, vocab, limits.doc);
    b.similar_doc = pad_field(examples, [](const TrainingExample& e) -> const Tokens& { return e.similar->document; }, vocab, limits.doc);
    b.negative_doc = pad_field(examples, [](const TrainingExample& e) -> const Tokens& { return e.negative->document; }, vocab, limits.doc);
    b.attractive_headline = pad_field(examples, [](const TrainingExample& e) -> const Tokens& { return e.attractive->headline; }, vocab, limits.proto);
    b.unattractive_headline = pad_field(examples, [](const TrainingExample& e) -> const Tokens& { return e.unattractive->headline; }, vocab, limits.proto);

    const std::size_t steps = limits.target + 1;
    std::vector<std::vector<int>> inputs;
    b.target_extended.assign(b.size * steps, Vocabulary::kPad);
    b.target_mask = Tensor(b.size, steps);
    for (std::size_t r = 0; r < b.size; ++r) {
        const Tokens& head = examples[r].pair->headline;
        const std::size_t n = std::min(head.size(), limits.target);
        std::vector<int> in{Vocabulary::kStart};
        for (std::size_t i = 0; i < n; ++i) in.push_back(vocab.id(head[i]));
        std::vector<int> ext = encode_target_extended(std::span(head).first(n), vocab, b.doc_oovs[r]);
        ext.push_back(Vocabulary::kStop);
        for (std::size_t t = 0; t < ext.size(); ++t) {
            b.target_extended[r * steps + t] = ext[t];
            b.target_mask(r, t) = 1.0;
        }
        inputs.push_back(std::move(in));
    }
    b.decoder_input = pad_sequences(inputs, steps);
    return b;
}

Batch make_inference_batch(std::span<const Pair* const> docs, std::span<const Pair* const> prototypes,
                           const Vocabulary& vocab, const BatchLimits& limits) {
    if (docs.empty()) throw Error("cannot make a batch of size 0");
    if (docs.size() != prototypes.size()) throw Error("every document needs a prototype");
    Batch b;
    fill_documents(b, docs, vocab, limits);
    std::vector<std::vector<int>> heads;
    for (const Pair* p : prototypes) heads.push_back(base_ids(p->headline, vocab, limits.proto));
    b.proto_headline = pad_sequences(heads, limits.proto);
    return b;
}

}  // namespace dahg
