// dahg: build-index | train | generate | evaluate | inspect-latent

#include <charconv>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "dahg/config.hpp"
#include "dahg/corpus.hpp"
#include "dahg/error.hpp"
#include "dahg/evaluation.hpp"
#include "dahg/retrieval.hpp"
#include "dahg/training.hpp"

namespace fs = std::filesystem;
using namespace dahg;

namespace {

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

struct BeamFlags {
    std::optional<std::size_t> beam, min_len, max_len;

    void add(CLI::App* cmd) {
        cmd->add_option("--beam", beam, "beam size");
        cmd->add_option("--min-len,--min_len", min_len, "minimum headline length");
        cmd->add_option("--max-len,--max_len", max_len, "maximum headline length");
    }
    BeamConfig resolve(const BeamConfig& base) const {
        BeamConfig b = base;
        if (beam) b.beam = *beam;
        if (min_len) b.min_len = *min_len;
        if (max_len) b.max_len = *max_len;
        if (b.beam == 0 || b.max_len == 0 || b.min_len > b.max_len) throw Error("invalid beam settings");
        return b;
    }
};

std::ostream* open_output(const std::string& path, std::ofstream& file) {
    if (path.empty() || path == "-") return &std::cout;
    if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
    file.open(path);
    if (!file) throw Error("cannot write " + path);
    return &file;
}

// ---- commands ----------------------------------------------------------------------

void build_index(const std::string& corpus, const std::string& output) {
    const TfIdfIndex index = TfIdfIndex::build(load_corpus(corpus));
    index.save(output);
    std::cout << "indexed " << index.size() << " pairs, " << index.term_count() << " terms -> " << output << '\n';
}

void train(const std::string& config_path, const std::map<std::string, std::string>& overrides, bool resume) {
    Config cfg;
    fs::path config_dir;
    if (!config_path.empty()) {
        cfg = Config::load(config_path);
        config_dir = fs::path(config_path).parent_path();
        // a relative corpus path in the file is relative to the file
        if (cfg.contains("train_corpus") && fs::path(cfg.get("train_corpus")).is_relative()) {
            cfg.set("train_corpus", (config_dir / cfg.get("train_corpus")).string());
        }
    }
    for (const auto& [k, v] : overrides) cfg.set(k, v);
    const TrainConfig tc = TrainConfig::from_config(cfg);
    if (tc.train_corpus.empty()) throw Error("no training corpus (set train_corpus)");
    std::vector<Pair> corpus = load_corpus(tc.train_corpus);

    std::unique_ptr<Trainer> trainer;
    if (resume && fs::exists(fs::path(tc.checkpoint_dir) / "latest")) {
        trainer = Trainer::resume(tc.checkpoint_dir, std::move(corpus));
        trainer->set_steps(tc.steps);
    } else {
        trainer = std::make_unique<Trainer>(tc, std::move(corpus));
    }
    StepMetrics last;
    run_training(*trainer, [&](const StepMetrics& m) { last = m; });
    std::cout << "step " << trainer->step() << " L_G " << format_double(last.terms.generator_total) << " L_D "
              << format_double(last.terms.discriminator_total) << " L_seq " << format_double(last.terms.sequence)
              << " -> " << resolve_checkpoint(tc.checkpoint_dir).string() << '\n';
}

Pair hide_headline(const Pair& p) {
    Pair q = p;
    q.headline.clear();
    return q;
}

void generate(const std::string& model_path, const std::string& input, const std::string& index_path,
              const BeamFlags& flags, const std::string& output) {
    TrainConfig tc;
    const auto model = load_model(model_path, &tc);
    const TfIdfIndex index = TfIdfIndex::load(index_path);
    const BeamConfig beam = flags.resolve(tc.beam);
    const std::vector<Pair> docs = load_corpus(input, false);
    std::ofstream file;
    std::ostream& out = *open_output(output, file);
    for (const Pair& d : docs) {
        const Pair& proto = index.retrieve_prototype(hide_headline(d));
        const Tokens headline = model->generate_headline(d, proto, beam);
        out << nlohmann::json{{"id", d.id}, {"headline", join_tokens(headline)}}.dump() << '\n';
    }
}

void print_summary(const EvaluationReport& report) {
    for (const CorpusScores& s : report.systems) {
        std::cout << s.system << ": BLEU " << format_double(s.bleu.bleu) << " R-1 " << format_double(s.rouge1)
                  << " R-2 " << format_double(s.rouge2) << " R-L " << format_double(s.rougeL) << '\n';
    }
}

void evaluate_cmd(const std::string& model_path, const std::string& test_path, const std::string& index_path,
                  const std::string& hypotheses, const BeamFlags& flags, const std::string& output_dir) {
    const std::vector<Pair> test = load_corpus(test_path);
    EvaluationReport report;
    if (!hypotheses.empty()) {
        report = score_outputs(test, load_outputs(hypotheses));
    } else {
        if (model_path.empty() || index_path.empty()) throw Error("evaluate needs --model and --index, or --hypotheses");
        TrainConfig tc;
        const auto model = load_model(model_path, &tc);
        const TfIdfIndex index = TfIdfIndex::load(index_path);
        report = evaluate(*model, test, index, flags.resolve(tc.beam));
    }
    write_report(report, output_dir);
    print_summary(report);
}

void inspect_latent(const std::string& model_path, const std::string& input, const std::string& output) {
    const auto model = load_model(model_path);
    const std::vector<Pair> pairs = load_corpus(input);
    std::ofstream file;
    std::ostream& out = *open_output(output, file);
    const std::size_t z = model->config().latent;
    out << "id,attractive";
    for (std::size_t i = 0; i < z; ++i) out << ",mu_c_" << i;
    for (std::size_t i = 0; i < z; ++i) out << ",mu_s_" << i;
    out << '\n';
    constexpr std::size_t kChunk = 64;
    for (std::size_t begin = 0; begin < pairs.size(); begin += kChunk) {
        const std::size_t end = std::min(pairs.size(), begin + kChunk);
        std::vector<std::vector<int>> ids;
        for (std::size_t i = begin; i < end; ++i) {
            std::vector<int> row;
            for (const std::string& t : pairs[i].headline) {
                if (row.size() == model->limits().proto) break;
                row.push_back(model->vocab().id(t));
            }
            ids.push_back(std::move(row));
        }
        const auto [mu_c, mu_s] = model->latent_means(pad_sequences(ids, model->limits().proto));
        for (std::size_t i = begin; i < end; ++i) {
            out << pairs[i].id << ',' << (pairs[i].attractive ? 1 : 0);
            for (std::size_t k = 0; k < z; ++k) out << ',' << format_double(mu_c(i - begin, k));
            for (std::size_t k = 0; k < z; ++k) out << ',' << format_double(mu_s(i - begin, k));
            out << '\n';
        }
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Disentanglement-based attractive headline generator"};
    app.require_subcommand(1);
    std::optional<std::uint64_t> seed;

    auto* idx = app.add_subcommand("build-index", "build the TF-IDF prototype index of a training corpus");
    std::string idx_corpus, idx_output;
    idx->add_option("--corpus", idx_corpus, "training corpus JSONL")->required()->check(CLI::ExistingFile);
    idx->add_option("--output", idx_output, "index file to write")->required();
    idx->add_option("--seed", seed, "random seed (unused; accepted for uniformity)");

    auto* tr = app.add_subcommand("train", "train a model");
    std::string tr_config;
    bool tr_resume = false;
    std::map<std::string, std::string> tr_overrides;
    std::map<std::string, std::string> tr_values;
    tr->add_option("--config", tr_config, "key=value config file")->check(CLI::ExistingFile);
    tr->add_flag("--resume", tr_resume, "continue from the latest checkpoint in checkpoint_dir");
    for (const std::string& key : TrainConfig::keys()) {
        std::string names = "--" + key;
        std::string dashed = key;
        std::replace(dashed.begin(), dashed.end(), '_', '-');
        if (dashed != key) names += ",--" + dashed;
        tr->add_option(names, tr_values[key], "override config key " + key);
    }

    auto* gen = app.add_subcommand("generate", "generate headlines for documents");
    std::string gen_model, gen_input, gen_index, gen_output;
    BeamFlags gen_beam;
    gen->add_option("--model", gen_model, "checkpoint file or directory")->required();
    gen->add_option("--input", gen_input, "documents JSONL")->required()->check(CLI::ExistingFile);
    gen->add_option("--index", gen_index, "prototype index")->required()->check(CLI::ExistingFile);
    gen->add_option("--output", gen_output, "output JSONL (default stdout)");
    gen->add_option("--seed", seed, "random seed");
    gen_beam.add(gen);

    auto* ev = app.add_subcommand("evaluate", "score generated headlines with ROUGE and BLEU");
    std::string ev_model, ev_test, ev_index, ev_hyp, ev_out = "evaluation";
    BeamFlags ev_beam;
    ev->add_option("--model", ev_model, "checkpoint file or directory");
    ev->add_option("--test", ev_test, "test corpus JSONL")->required()->check(CLI::ExistingFile);
    ev->add_option("--index", ev_index, "prototype index built on the training corpus");
    ev->add_option("--hypotheses", ev_hyp, "score these outputs instead of decoding")->check(CLI::ExistingFile);
    ev->add_option("--output-dir,--output_dir", ev_out, "directory for per_example.csv and summary.json");
    ev->add_option("--seed", seed, "random seed");
    ev_beam.add(ev);

    auto* il = app.add_subcommand("inspect-latent", "dump content and style latent means as CSV");
    std::string il_model, il_input, il_output;
    il->add_option("--model", il_model, "checkpoint file or directory")->required();
    il->add_option("--input", il_input, "corpus JSONL")->required()->check(CLI::ExistingFile);
    il->add_option("--output", il_output, "CSV path (default stdout)");
    il->add_option("--seed", seed, "random seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "dahg: error: " << e.what() << '\n';
        return 2;
    }

    try {
        if (idx->parsed()) {
            build_index(idx_corpus, idx_output);
        } else if (tr->parsed()) {
            for (const auto& [key, value] : tr_values) {
                if (tr->count("--" + key) > 0) tr_overrides[key] = value;
            }
            train(tr_config, tr_overrides, tr_resume);
        } else if (gen->parsed()) {
            generate(gen_model, gen_input, gen_index, gen_beam, gen_output);
        } else if (ev->parsed()) {
            evaluate_cmd(ev_model, ev_test, ev_index, ev_hyp, ev_beam, ev_out);
        } else if (il->parsed()) {
            inspect_latent(il_model, il_input, il_output);
        }
    } catch (const std::exception& e) {
        std::cerr << "dahg: error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
