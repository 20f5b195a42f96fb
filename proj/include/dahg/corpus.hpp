#pragma once

// Document/headline records, vocabulary and padded batches.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dahg/tensor.hpp"

namespace dahg {

using Tokens = std::vector<std::string>;

// A headline is attractive when its article drew more than this many comments.
inline constexpr int kAttractiveCommentThreshold = 20;

struct Pair {
    std::string id;
    Tokens document;
    Tokens headline;
    int comment_count = 0;
    bool attractive = false;
};

// Whitespace split when the text contains whitespace (pre-segmented corpus);
// otherwise one token per UTF-8 code point if any byte is non-ASCII; otherwise
// the whole text is a single token. Throws on empty or blank text.
Tokens tokenize(std::string_view text);

// Builds a validated Pair; attractiveness is derived from comment_count.
Pair make_pair(std::string id, std::string_view document, std::string_view headline, int comment_count = 0);

// JSONL: one {id, document, headline, comment_count} object per line. document
// and headline may be strings (tokenized) or arrays of tokens. Inputs to the
// generator may omit the headline when require_headline is false.
std::vector<Pair> load_corpus(const std::filesystem::path& path, bool require_headline = true);
std::vector<Pair> parse_corpus(std::string_view jsonl, bool require_headline = true);
void save_corpus(const std::filesystem::path& path, std::span<const Pair> pairs);
std::string pair_to_json(const Pair& p);

std::string join_tokens(std::span<const std::string> tokens);

class Vocabulary {
  public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kStart = 2;
    static constexpr int kStop = 3;
    static constexpr std::size_t kSpecials = 4;

    Vocabulary();

    // Tokens of documents and headlines ranked by frequency (ties broken
    // lexicographically) after the four specials; at most `cap` entries total.
    static Vocabulary build(std::span<const Pair> pairs, std::size_t cap);
    // Restores a vocabulary from its id-ordered token list (specials included).
    static Vocabulary from_tokens(std::vector<std::string> tokens);

    std::size_t size() const { return tokens_.size(); }
    bool contains(const std::string& token) const { return index_.count(token) != 0; }
    // UNK for unknown tokens.
    int id(const std::string& token) const;
    const std::string& token(int id) const;
    const std::vector<std::string>& tokens() const { return tokens_; }

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

struct ExtendedEncoding {
    std::vector<int> ids;           // OOV tokens -> UNK
    std::vector<int> extended_ids;  // OOV tokens -> |V| + k, k by first occurrence
    Tokens oovs;
};

ExtendedEncoding encode_extended(std::span<const std::string> tokens, const Vocabulary& vocab);

// Extended ids of a target sequence that may copy source OOVs; target OOVs not
// present in `source_oovs` map to UNK.
std::vector<int> encode_target_extended(std::span<const std::string> tokens, const Vocabulary& vocab,
                                        std::span<const std::string> source_oovs);

// Inverse of encode_extended. Throws on ids outside |V| + |oovs|.
Tokens decode_extended(std::span<const int> extended_ids, const Vocabulary& vocab,
                       std::span<const std::string> oovs);

struct BatchLimits {
    std::size_t doc = 400;
    std::size_t proto = 30;
    std::size_t target = 30;
};

// A right-padded id matrix with its 0/1 mask.
struct PaddedIds {
    std::size_t rows = 0;
    std::size_t steps = 0;
    std::vector<int> ids;  // [rows x steps]
    Tensor mask;           // [rows x steps]
    std::vector<std::size_t> lengths;

    bool empty() const { return rows == 0; }
    std::vector<int> column(std::size_t t) const;
    // mask column t as [rows x 1]
    Tensor column_mask(std::size_t t) const;
};

// Pads (or cuts, keeping the prefix) base-vocabulary ids to exactly `limit`.
PaddedIds pad_sequences(std::span<const std::vector<int>> seqs, std::size_t limit);

// Stacks several padded blocks with the same step count row-wise.
PaddedIds stack_padded(std::span<const PaddedIds* const> blocks);

// Everything one training example needs; pointers refer into the corpus.
struct TrainingExample {
    const Pair* pair = nullptr;          // X^d, Y^d
    const Pair* prototype = nullptr;     // X^r, Y^r
    const Pair* similar = nullptr;       // X^s
    const Pair* negative = nullptr;      // X^q
    const Pair* attractive = nullptr;    // Y^a
    const Pair* unattractive = nullptr;  // Y^n
};

struct Batch {
    std::size_t size = 0;
    std::vector<std::string> ids;

    PaddedIds doc;
    std::vector<int> doc_extended;  // [size x doc.steps]
    std::vector<Tokens> doc_oovs;
    std::size_t max_oov = 0;

    PaddedIds proto_headline;
    PaddedIds proto_doc;
    PaddedIds similar_doc;
    PaddedIds negative_doc;
    PaddedIds attractive_headline;
    PaddedIds unattractive_headline;

    // START + target tokens (base ids) and target tokens + STOP (extended ids).
    PaddedIds decoder_input;
    std::vector<int> target_extended;  // [size x decoder_input.steps]
    Tensor target_mask;                // [size x decoder_input.steps]
};

// Training batch: all links must be resolved.
Batch make_batch(std::span<const TrainingExample> examples, const Vocabulary& vocab, const BatchLimits& limits);

// Inference batch: only the documents and their prototype headlines.
Batch make_inference_batch(std::span<const Pair* const> docs, std::span<const Pair* const> prototypes,
                           const Vocabulary& vocab, const BatchLimits& limits);

}  // namespace dahg
