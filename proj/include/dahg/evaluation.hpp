#pragma once

// ROUGE-N, ROUGE-L and corpus BLEU over token sequences, and the evaluation
// report that compares DAHG against simple baselines.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dahg/corpus.hpp"
#include "dahg/generator.hpp"

namespace dahg {

class DahgModel;
class TfIdfIndex;

struct Prf {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Clipped n-gram overlap. Empty candidate -> all zeros.
Prf rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference, std::size_t n);
// Longest common subsequence.
Prf rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference);
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

struct BleuScore {
    double bleu = 0.0;
    double brevity_penalty = 0.0;
    std::vector<double> precisions;  // modified n-gram precision for n = 1..max_n
    std::size_t candidate_length = 0;
    std::size_t reference_length = 0;
};

// Corpus BLEU, one reference per candidate, no smoothing.
BleuScore bleu(std::span<const Tokens> candidates, std::span<const Tokens> references, std::size_t max_n = 4);

// Mean ROUGE F1s and corpus BLEU of a system's outputs.
struct CorpusScores {
    std::string system;
    std::size_t count = 0;
    double rouge1 = 0.0;
    double rouge2 = 0.0;
    double rougeL = 0.0;
    BleuScore bleu;
};
CorpusScores score_corpus(const std::string& system, std::span<const Tokens> candidates,
                          std::span<const Tokens> references);

// Tokens up to and including the first sentence delimiter (。！？.!?), or the whole document.
Tokens lead_sentence(std::span<const std::string> document);

struct ExampleResult {
    std::string id;
    Tokens reference;
    Tokens generated;
    Tokens lead;
    Tokens prototype;
    std::string prototype_id;
    Prf rouge1, rouge2, rougeL;
};

struct EvaluationReport {
    std::vector<ExampleResult> examples;
    std::vector<CorpusScores> systems;  // DAHG first, then baselines
};

// Retrieves a prototype for every test document from the training index (the
// test headline is hidden from retrieval), decodes with beam search and scores.
EvaluationReport evaluate(const DahgModel& model, std::span<const Pair> test, const TfIdfIndex& index,
                          const BeamConfig& beam);

// Scores supplied outputs against references by id (the "hypotheses" are JSONL
// {id, headline}); the report has a single system.
EvaluationReport score_outputs(std::span<const Pair> references, std::span<const Pair> outputs,
                               const std::string& system = "outputs");

// Generated outputs, JSONL {id, headline}; headline as a string or token array.
std::vector<Pair> load_outputs(const std::filesystem::path& path);

// per_example.csv and summary.json under `dir`.
void write_report(const EvaluationReport& report, const std::filesystem::path& dir);

}  // namespace dahg
