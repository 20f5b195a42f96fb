#include "dahg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <unordered_map>

#include <json.hpp>

#include "dahg/error.hpp"
#include "dahg/model.hpp"
#include "dahg/retrieval.hpp"

namespace dahg {

namespace {

using Gram = std::vector<std::string>;

std::map<Gram, std::size_t> ngram_counts(std::span<const std::string> tokens, std::size_t n) {
    std::map<Gram, std::size_t> counts;
    if (n == 0 || tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++counts[Gram(tokens.begin() + i, tokens.begin() + i + n)];
    return counts;
}

std::size_t clipped_overlap(const std::map<Gram, std::size_t>& cand, const std::map<Gram, std::size_t>& ref) {
    std::size_t hit = 0;
    for (const auto& [g, c] : cand) {
        const auto it = ref.find(g);
        if (it != ref.end()) hit += std::min(c, it->second);
    }
    return hit;
}

Prf from_counts(std::size_t hit, std::size_t cand_total, std::size_t ref_total) {
    Prf out;
    out.precision = cand_total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(cand_total);
    out.recall = ref_total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(ref_total);
    const double s = out.precision + out.recall;
    out.f1 = s == 0.0 ? 0.0 : 2.0 * out.precision * out.recall / s;
    return out;
}

std::size_t total(const std::map<Gram, std::size_t>& counts) {
    std::size_t n = 0;
    for (const auto& kv : counts) n += kv.second;
    return n;
}

}  // namespace

Prf rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference, std::size_t n) {
    if (n == 0) throw Error("ROUGE-N needs n >= 1");
    const auto c = ngram_counts(candidate, n);
    const auto r = ngram_counts(reference, n);
    return from_counts(clipped_overlap(c, r), total(c), total(r));
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

Prf rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference) {
    return from_counts(lcs_length(candidate, reference), candidate.size(), reference.size());
}

BleuScore bleu(std::span<const Tokens> candidates, std::span<const Tokens> references, std::size_t max_n) {
    if (candidates.size() != references.size()) throw Error("BLEU needs one reference per candidate");
    if (max_n == 0) throw Error("BLEU needs max_n >= 1");
    BleuScore out;
    std::vector<std::size_t> hits(max_n, 0), totals(max_n, 0);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        out.candidate_length += candidates[i].size();
        out.reference_length += references[i].size();
        for (std::size_t n = 1; n <= max_n; ++n) {
            const auto c = ngram_counts(candidates[i], n);
            hits[n - 1] += clipped_overlap(c, ngram_counts(references[i], n));
            totals[n - 1] += total(c);
        }
    }
    double log_sum = 0.0;
    bool any_zero = false;
    for (std::size_t n = 0; n < max_n; ++n) {
        const double p = totals[n] == 0 ? 0.0 : static_cast<double>(hits[n]) / static_cast<double>(totals[n]);
        out.precisions.push_back(p);
        if (p == 0.0) any_zero = true;
        else log_sum += std::log(p);
    }
    if (out.candidate_length == 0) {
        out.brevity_penalty = 0.0;
    } else {
        const double r = static_cast<double>(out.reference_length);
        const double c = static_cast<double>(out.candidate_length);
        out.brevity_penalty = std::min(1.0, std::exp(1.0 - r / c));
    }
    out.bleu = any_zero ? 0.0 : out.brevity_penalty * std::exp(log_sum / static_cast<double>(max_n));
    return out;
}

CorpusScores score_corpus(const std::string& system, std::span<const Tokens> candidates,
                          std::span<const Tokens> references) {
    CorpusScores s;
    s.system = system;
    s.count = candidates.size();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        s.rouge1 += rouge_n(candidates[i], references[i], 1).f1;
        s.rouge2 += rouge_n(candidates[i], references[i], 2).f1;
        s.rougeL += rouge_l(candidates[i], references[i]).f1;
    }
    if (s.count > 0) {
        s.rouge1 /= static_cast<double>(s.count);
        s.rouge2 /= static_cast<double>(s.count);
        s.rougeL /= static_cast<double>(s.count);
    }
    s.bleu = bleu(candidates, references);
    return s;
}

Tokens lead_sentence(std::span<const std::string> document) {
    static const std::vector<std::string> delimiters{"。", "！", "？", ".", "!", "?"};
    Tokens out;
    for (const std::string& t : document) {
        out.push_back(t);
        const bool ends = std::any_of(delimiters.begin(), delimiters.end(), [&](const std::string& d) {
            return t.size() >= d.size() && t.compare(t.size() - d.size(), d.size(), d) == 0;
        });
        if (ends) break;
    }
    return out;
}

namespace {

void fill_scores(ExampleResult& r) {
    r.rouge1 = rouge_n(r.generated, r.reference, 1);
    r.rouge2 = rouge_n(r.generated, r.reference, 2);
    r.rougeL = rouge_l(r.generated, r.reference);
}

void add_system(EvaluationReport& report, const std::string& name, Tokens ExampleResult::*field) {
    std::vector<Tokens> cands, refs;
    for (const ExampleResult& r : report.examples) {
        cands.push_back(r.*field);
        refs.push_back(r.reference);
    }
    report.systems.push_back(score_corpus(name, cands, refs));
}

}  // namespace

EvaluationReport evaluate(const DahgModel& model, std::span<const Pair> test, const TfIdfIndex& index,
                          const BeamConfig& beam) {
    EvaluationReport report;
    for (const Pair& p : test) {
        Pair query = p;
        query.headline.clear();
        const Pair& proto = index.retrieve_prototype(query);
        ExampleResult r;
        r.id = p.id;
        r.reference = p.headline;
        r.generated = model.generate_headline(p, proto, beam);
        r.lead = lead_sentence(p.document);
        r.prototype = proto.headline;
        r.prototype_id = proto.id;
        fill_scores(r);
        report.examples.push_back(std::move(r));
    }
    add_system(report, "DAHG", &ExampleResult::generated);
    add_system(report, "Lead", &ExampleResult::lead);
    add_system(report, "Proto", &ExampleResult::prototype);
    return report;
}

EvaluationReport score_outputs(std::span<const Pair> references, std::span<const Pair> outputs,
                               const std::string& system) {
    std::unordered_map<std::string, const Pair*> by_id;
    for (const Pair& o : outputs) {
        if (!by_id.emplace(o.id, &o).second) throw Error("duplicate output id " + o.id);
    }
    EvaluationReport report;
    for (const Pair& ref : references) {
        const auto it = by_id.find(ref.id);
        if (it == by_id.end()) throw Error("no output for id " + ref.id);
        ExampleResult r;
        r.id = ref.id;
        r.reference = ref.headline;
        r.generated = it->second->headline;
        r.lead = lead_sentence(ref.document);
        fill_scores(r);
        report.examples.push_back(std::move(r));
    }
    add_system(report, system, &ExampleResult::generated);
    return report;
}

std::vector<Pair> load_outputs(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::vector<Pair> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto where = path.string() + ":" + std::to_string(line_no) + ": ";
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(where + "invalid JSON");
        }
        if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("headline")) {
            throw Error(where + "expected {id, headline}");
        }
        Pair p;
        p.id = j["id"].get<std::string>();
        const auto& h = j["headline"];
        if (h.is_string()) {
            const std::string text = h.get<std::string>();
            if (text.find_first_not_of(" \t\r\n") != std::string::npos) p.headline = tokenize(text);
        } else if (h.is_array()) {
            for (const auto& t : h) {
                if (!t.is_string()) throw Error(where + "headline tokens must be strings");
                p.headline.push_back(t.get<std::string>());
            }
        } else {
            throw Error(where + "headline must be a string or an array");
        }
        out.push_back(std::move(p));
    }
    return out;
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

void write_report(const EvaluationReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream csv(dir / "per_example.csv");
    if (!csv) throw Error("cannot write " + (dir / "per_example.csv").string());
    csv.precision(17);
    csv << "id,generated,reference,rouge1_p,rouge1_r,rouge1_f,rouge2_p,rouge2_r,rouge2_f,rougeL_p,rougeL_r,rougeL_f\n";
    for (const ExampleResult& r : report.examples) {
        csv << csv_field(r.id) << ',' << csv_field(join_tokens(r.generated)) << ','
            << csv_field(join_tokens(r.reference));
        for (const Prf* m : {&r.rouge1, &r.rouge2, &r.rougeL}) {
            csv << ',' << m->precision << ',' << m->recall << ',' << m->f1;
        }
        csv << '\n';
    }

    nlohmann::json summary = nlohmann::json::object();
    summary["examples"] = report.examples.size();
    nlohmann::json systems = nlohmann::json::array();
    for (const CorpusScores& s : report.systems) {
        systems.push_back({{"system", s.system},
                           {"count", s.count},
                           {"rouge1", s.rouge1},
                           {"rouge2", s.rouge2},
                           {"rougeL", s.rougeL},
                           {"bleu", s.bleu.bleu},
                           {"bleu_precisions", s.bleu.precisions},
                           {"brevity_penalty", s.bleu.brevity_penalty}});
    }
    summary["systems"] = systems;
    std::ofstream js(dir / "summary.json");
    if (!js) throw Error("cannot write " + (dir / "summary.json").string());
    js << summary.dump(2) << '\n';
}

}  // namespace dahg
