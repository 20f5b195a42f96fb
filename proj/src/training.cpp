#include "dahg/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "dahg/error.hpp"

namespace dahg {

namespace {

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

// One configuration key bound to a TrainConfig member.
struct Field {
    const char* key;
    std::size_t& (*size)(TrainConfig&) = nullptr;
    std::uint64_t& (*u64)(TrainConfig&) = nullptr;
    double& (*real)(TrainConfig&) = nullptr;
    bool& (*flag)(TrainConfig&) = nullptr;
    std::string& (*text)(TrainConfig&) = nullptr;
};

Field size_field(const char* key, std::size_t& (*f)(TrainConfig&)) { return Field{key, f}; }
Field real_field(const char* key, double& (*f)(TrainConfig&)) { return Field{key, nullptr, nullptr, f}; }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> t;
        t.push_back(Field{"seed", nullptr, [](TrainConfig& c) -> std::uint64_t& { return c.seed; }});
        t.push_back(size_field("batch_size", [](TrainConfig& c) -> std::size_t& { return c.batch_size; }));
        t.push_back(real_field("lr", [](TrainConfig& c) -> double& { return c.lr; }));
        t.push_back(size_field("kl_anneal_batches", [](TrainConfig& c) -> std::size_t& { return c.kl_anneal_batches; }));
        t.push_back(real_field("clip_norm", [](TrainConfig& c) -> double& { return c.clip_norm; }));
        t.push_back(real_field("init_std", [](TrainConfig& c) -> double& { return c.init_std; }));
        t.push_back(size_field("vocab_cap", [](TrainConfig& c) -> std::size_t& { return c.vocab_cap; }));
        t.push_back(size_field("steps", [](TrainConfig& c) -> std::size_t& { return c.steps; }));
        t.push_back(size_field("checkpoint_every", [](TrainConfig& c) -> std::size_t& { return c.checkpoint_every; }));
        t.push_back(size_field("doc_limit", [](TrainConfig& c) -> std::size_t& { return c.limits.doc; }));
        t.push_back(size_field("proto_limit", [](TrainConfig& c) -> std::size_t& { return c.limits.proto; }));
        t.push_back(size_field("target_limit", [](TrainConfig& c) -> std::size_t& { return c.limits.target; }));
        t.push_back(size_field("embedding_dim", [](TrainConfig& c) -> std::size_t& { return c.model.embedding; }));
        t.push_back(size_field("hidden_dim", [](TrainConfig& c) -> std::size_t& { return c.model.hidden; }));
        t.push_back(size_field("latent_dim", [](TrainConfig& c) -> std::size_t& { return c.model.latent; }));
        t.push_back(size_field("decoder_hidden_dim", [](TrainConfig& c) -> std::size_t& { return c.model.decoder_hidden; }));
        t.push_back(size_field("hops", [](TrainConfig& c) -> std::size_t& { return c.model.hops; }));
        t.push_back(real_field("keep_prob", [](TrainConfig& c) -> double& { return c.model.keep_prob; }));
        t.push_back(Field{"sigmoid_gate", nullptr, nullptr, nullptr, [](TrainConfig& c) -> bool& { return c.model.sigmoid_gate; }});
        t.push_back(real_field("lambda_kl_content", [](TrainConfig& c) -> double& { return c.weights.kl_content; }));
        t.push_back(real_field("lambda_kl_style", [](TrainConfig& c) -> double& { return c.weights.kl_style; }));
        t.push_back(real_field("weight_reconstruction", [](TrainConfig& c) -> double& { return c.weights.reconstruction; }));
        t.push_back(real_field("weight_bow", [](TrainConfig& c) -> double& { return c.weights.bow; }));
        t.push_back(real_field("weight_style_classifier", [](TrainConfig& c) -> double& { return c.weights.style_classifier; }));
        t.push_back(real_field("weight_content_classifier", [](TrainConfig& c) -> double& { return c.weights.content_classifier; }));
        t.push_back(real_field("weight_style_generator", [](TrainConfig& c) -> double& { return c.weights.style_generator; }));
        t.push_back(real_field("weight_content_generator", [](TrainConfig& c) -> double& { return c.weights.content_generator; }));
        t.push_back(real_field("weight_sequence", [](TrainConfig& c) -> double& { return c.weights.sequence; }));
        t.push_back(size_field("beam", [](TrainConfig& c) -> std::size_t& { return c.beam.beam; }));
        t.push_back(size_field("min_len", [](TrainConfig& c) -> std::size_t& { return c.beam.min_len; }));
        t.push_back(size_field("max_len", [](TrainConfig& c) -> std::size_t& { return c.beam.max_len; }));
        t.push_back(Field{"train_corpus", nullptr, nullptr, nullptr, nullptr, [](TrainConfig& c) -> std::string& { return c.train_corpus; }});
        t.push_back(Field{"checkpoint_dir", nullptr, nullptr, nullptr, nullptr, [](TrainConfig& c) -> std::string& { return c.checkpoint_dir; }});
        t.push_back(Field{"metrics_log", nullptr, nullptr, nullptr, nullptr, [](TrainConfig& c) -> std::string& { return c.metrics_log; }});
        return t;
    }();
    return table;
}

}  // namespace

TrainConfig TrainConfig::from_config(const Config& cfg) {
    TrainConfig out;
    for (const auto& [key, value] : cfg.values()) {
        const auto it = std::find_if(fields().begin(), fields().end(), [&](const Field& f) { return key == f.key; });
        if (it == fields().end()) throw Error("unknown config key " + key);
        if (it->size) it->size(out) = cfg.get_size(key);
        if (it->u64) it->u64(out) = cfg.get_u64(key);
        if (it->real) it->real(out) = cfg.get_double(key);
        if (it->flag) it->flag(out) = cfg.get_bool(key);
        if (it->text) it->text(out) = value;
    }
    out.validate();
    return out;
}

Config TrainConfig::to_config() const {
    Config cfg;
    TrainConfig copy = *this;
    for (const Field& f : fields()) {
        if (f.size) cfg.set(f.key, std::to_string(f.size(copy)));
        if (f.u64) cfg.set(f.key, std::to_string(f.u64(copy)));
        if (f.real) cfg.set(f.key, format_double(f.real(copy)));
        if (f.flag) cfg.set(f.key, f.flag(copy) ? "true" : "false");
        if (f.text) cfg.set(f.key, f.text(copy));
    }
    return cfg;
}

std::vector<std::string> TrainConfig::keys() {
    std::vector<std::string> out;
    for (const Field& f : fields()) out.emplace_back(f.key);
    return out;
}

void TrainConfig::validate() const {
    auto need = [](bool ok, const char* what) {
        if (!ok) throw Error(std::string("invalid config: ") + what);
    };
    need(batch_size > 0, "batch_size must be positive");
    need(lr > 0.0, "lr must be positive");
    need(init_std > 0.0, "init_std must be positive");
    need(vocab_cap >= 5, "vocab_cap must be at least 5");
    need(limits.doc > 0 && limits.proto > 0 && limits.target > 0, "length limits must be positive");
    need(model.embedding > 0 && model.hidden > 0 && model.latent > 0 && model.decoder_hidden > 0,
         "dimensions must be positive");
    need(model.hops > 0, "hops must be positive");
    need(model.keep_prob > 0.0 && model.keep_prob <= 1.0, "keep_prob must be in (0, 1]");
    need(beam.beam > 0 && beam.max_len > 0 && beam.min_len <= beam.max_len, "beam settings");
}

double kl_anneal(std::size_t step, std::size_t horizon) {
    if (horizon == 0) return 1.0;
    return std::min(static_cast<double>(step) / static_cast<double>(horizon), 1.0);
}

// ---- Adam -------------------------------------------------------------------------

double Adam::step(const std::vector<Parameter*>& params, double clip_norm) {
    double sq = 0.0;
    for (const Parameter* p : params) sq += p->grad.squared_norm();
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw Error("non-finite gradient norm");
    const double scale = clip_norm > 0.0 && norm > clip_norm ? clip_norm / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (Parameter* p : params) {
        Moments& mo = moments_[p->name];
        if (mo.m.size() != p->value.size()) {
            mo.m = Tensor(p->value.rows(), p->value.cols());
            mo.v = Tensor(p->value.rows(), p->value.cols());
        }
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double g = p->grad[i] * scale;
            mo.m[i] = beta1_ * mo.m[i] + (1.0 - beta1_) * g;
            mo.v[i] = beta2_ * mo.v[i] + (1.0 - beta2_) * g * g;
            p->value[i] -= lr_ * (mo.m[i] / bc1) / (std::sqrt(mo.v[i] / bc2) + eps_);
        }
    }
    return norm;
}

void Adam::restore(std::uint64_t t, std::unordered_map<std::string, Moments> moments) {
    t_ = t;
    moments_ = std::move(moments);
}

// ---- Trainer ----------------------------------------------------------------------

Trainer::Trainer(TrainConfig config, std::vector<Pair> corpus)
    : Trainer(config, corpus, Vocabulary::build(corpus, config.vocab_cap)) {}

Trainer::Trainer(TrainConfig config, std::vector<Pair> corpus, Vocabulary vocab)
    : config_(std::move(config)),
      index_(TfIdfIndex::build(std::move(corpus))),
      generator_opt_(config_.lr),
      discriminator_opt_(config_.lr),
      rng_(config_.seed) {
    config_.validate();
    if (index_.size() < 2) throw Error("training needs at least two pairs");
    model_ = std::make_unique<DahgModel>(config_.model, std::move(vocab), config_.limits);
    init_gaussian(model_->params(), config_.init_std, rng_);
    for (std::size_t i = 0; i < index_.size(); ++i) {
        prototype_.push_back(index_.retrieve_prototype_index(index_.pair(i)));
        similar_.push_back(index_.retrieve_similar_index(index_.pair(prototype_.back())));
    }
    order_.resize(index_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    shuffle();
}

void Trainer::shuffle() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
}

TrainingExample Trainer::example(std::size_t i) {
    TrainingExample ex;
    ex.pair = &index_.pair(i);
    ex.prototype = &index_.pair(prototype_.at(i));
    ex.similar = &index_.pair(similar_.at(i));
    const Negatives neg = index_.sample_negatives(*ex.prototype, rng_);
    ex.negative = neg.document;
    ex.attractive = neg.attractive;
    ex.unattractive = neg.unattractive;
    return ex;
}

Batch Trainer::next_batch() {
    std::vector<TrainingExample> examples;
    for (std::size_t k = 0; k < config_.batch_size; ++k) {
        if (cursor_ == order_.size()) shuffle();
        examples.push_back(example(order_[cursor_++]));
    }
    return make_batch(examples, model_->vocab(), config_.limits);
}

StepMetrics Trainer::train_step(const Batch& batch, const std::function<void()>& after_discriminator) {
    ParameterStore& store = model_->params();
    StepMetrics out;
    ag::Tape tape;
    const BatchEncoding enc = model_->encode_batch(tape, batch, &rng_);

    ag::Var ld = model_->discriminator_loss(tape, enc, out.terms);
    store.zero_grad();
    tape.backward(ld);
    out.discriminator_grad_norm = discriminator_opt_.step(store.group(ParamGroup::discriminator), config_.clip_norm);
    if (after_discriminator) after_discriminator();

    // The generator side is built after the update, so L_S^g and L_C^g see the new discriminators.
    ag::Var lg = model_->generator_loss(tape, enc, batch, kl_anneal(step_, config_.kl_anneal_batches), config_.weights,
                                        out.terms);
    store.zero_grad();
    tape.backward(lg);
    out.generator_grad_norm = generator_opt_.step(store.group(ParamGroup::generator), config_.clip_norm);
    store.zero_grad();

    out.step = ++step_;
    return out;
}

StepMetrics Trainer::train_step() { return train_step(next_batch()); }

LossTerms Trainer::evaluate_losses(const Batch& batch, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    ag::Tape tape(false);
    const BatchEncoding enc = model_->encode_batch(tape, batch, &rng);
    LossTerms terms;
    model_->discriminator_loss(tape, enc, terms);
    model_->generator_loss(tape, enc, batch, kl_anneal(step_, config_.kl_anneal_batches), config_.weights, terms);
    return terms;
}

// ---- checkpoint encoding ---------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'D', 'A', 'H', 'G', 'C', 'K', 'P', 'T'};

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

class Writer {
  public:
    void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
    void u32(std::uint32_t v) { raw(&v, sizeof v); }
    void u64(std::uint64_t v) { raw(&v, sizeof v); }
    void str(std::string_view s) {
        u64(s.size());
        raw(s.data(), s.size());
    }
    void tensor(const Tensor& t) {
        u64(t.rows());
        u64(t.cols());
        raw(t.data(), t.size() * sizeof(double));
    }
    const std::string& bytes() const { return buf_; }

  private:
    std::string buf_;
};

class Reader {
  public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}
    void raw(void* p, std::size_t n) {
        if (n > bytes_.size() - pos_) throw Error("checkpoint is truncated");
        std::memcpy(p, bytes_.data() + pos_, n);
        pos_ += n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        raw(&v, sizeof v);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        raw(&v, sizeof v);
        return v;
    }
    std::string str() {
        const std::uint64_t n = u64();
        if (n > bytes_.size() - pos_) throw Error("checkpoint is truncated");
        std::string s(bytes_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    Tensor tensor() {
        const std::uint64_t rows = u64();
        const std::uint64_t cols = u64();
        if (cols != 0 && rows > (bytes_.size() - pos_) / sizeof(double) / cols) throw Error("checkpoint is truncated");
        Tensor t(rows, cols);
        raw(t.data(), t.size() * sizeof(double));
        return t;
    }
    bool done() const { return pos_ == bytes_.size(); }

  private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

void write_file_atomic(const std::filesystem::path& file, const std::string& bytes) {
    const std::filesystem::path tmp = file.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("cannot write " + tmp.string());
    }
    std::filesystem::rename(tmp, file);
}

std::string read_file(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error("cannot open " + file.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

void Trainer::save_checkpoint(const std::filesystem::path& file) const {
    Writer w;
    w.raw(kMagic, sizeof kMagic);
    w.u32(kCheckpointVersion);
    w.str(config_.to_config().to_string());
    w.u64(model_->vocab().size());
    for (const std::string& t : model_->vocab().tokens()) w.str(t);
    w.u64(step_);
    std::ostringstream rng_state;
    rng_state << rng_;
    w.str(rng_state.str());
    w.u64(order_.size());
    for (std::size_t i : order_) w.u64(i);
    w.u64(cursor_);
    w.u64(generator_opt_.steps());
    w.u64(discriminator_opt_.steps());
    const std::vector<Parameter*> params = model_->params().all();
    w.u64(params.size());
    for (const Parameter* p : params) {
        const Adam& opt = p->group == ParamGroup::generator ? generator_opt_ : discriminator_opt_;
        const auto it = opt.moments().find(p->name);
        const Tensor zeros(p->value.rows(), p->value.cols());
        w.str(p->name);
        w.u32(p->group == ParamGroup::generator ? 0 : 1);
        w.tensor(p->value);
        w.tensor(it != opt.moments().end() ? it->second.m : zeros);
        w.tensor(it != opt.moments().end() ? it->second.v : zeros);
    }
    std::string bytes = w.bytes();
    const std::uint64_t sum = fnv1a(bytes);
    bytes.append(reinterpret_cast<const char*>(&sum), sizeof sum);
    write_file_atomic(file, bytes);
}

Checkpoint read_checkpoint(const std::filesystem::path& file) {
    const std::string bytes = read_file(file);
    if (bytes.size() < sizeof kMagic + 4 + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw Error("not a checkpoint: " + file.string());
    }
    std::uint32_t version = 0;
    std::memcpy(&version, bytes.data() + sizeof kMagic, sizeof version);
    if (version != kCheckpointVersion) {
        throw Error("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
    }
    const std::string_view body(bytes.data(), bytes.size() - 8);
    std::uint64_t stored = 0;
    std::memcpy(&stored, bytes.data() + body.size(), sizeof stored);
    if (fnv1a(body) != stored) throw Error("checkpoint checksum mismatch: " + file.string());

    Reader r(body.substr(sizeof kMagic + 4));
    Checkpoint ck;
    ck.config = TrainConfig::from_config(Config::parse(r.str()));
    std::vector<std::string> tokens(r.u64());
    for (std::string& t : tokens) t = r.str();
    ck.vocab = Vocabulary::from_tokens(std::move(tokens));
    ck.step = r.u64();
    ck.rng_state = r.str();
    ck.order.resize(r.u64());
    for (std::size_t& i : ck.order) i = r.u64();
    ck.cursor = r.u64();
    ck.generator_steps = r.u64();
    ck.discriminator_steps = r.u64();
    ck.params.resize(r.u64());
    for (Checkpoint::Param& p : ck.params) {
        p.name = r.str();
        const std::uint32_t g = r.u32();
        if (g > 1) throw Error("checkpoint has an unknown parameter group");
        p.group = g == 0 ? ParamGroup::generator : ParamGroup::discriminator;
        p.value = r.tensor();
        p.m = r.tensor();
        p.v = r.tensor();
    }
    if (!r.done()) throw Error("checkpoint has trailing data");
    return ck;
}

namespace {

void copy_params(const Checkpoint& ck, ParameterStore& store) {
    if (ck.params.size() != store.size()) throw Error("checkpoint does not match the model architecture");
    for (const Checkpoint::Param& p : ck.params) {
        if (!store.contains(p.name)) throw Error("checkpoint parameter " + p.name + " is not in the model");
        const Parameter& dst = store.get(p.name);
        if (dst.value.rows() != p.value.rows() || dst.value.cols() != p.value.cols() || dst.group != p.group) {
            throw Error("checkpoint parameter " + p.name + " has the wrong shape");
        }
    }
    for (const Checkpoint::Param& p : ck.params) store.get(p.name).value = p.value;
}

}  // namespace

std::unique_ptr<Trainer> Trainer::resume(const std::filesystem::path& checkpoint, std::vector<Pair> corpus) {
    const Checkpoint ck = read_checkpoint(resolve_checkpoint(checkpoint));
    std::unique_ptr<Trainer> t(new Trainer(ck.config, std::move(corpus), ck.vocab));
    if (ck.order.size() != t->order_.size() || ck.cursor > ck.order.size()) {
        throw Error("checkpoint was trained on a different corpus");
    }
    copy_params(ck, t->model_->params());
    std::unordered_map<std::string, Adam::Moments> gen, disc;
    for (const Checkpoint::Param& p : ck.params) {
        (p.group == ParamGroup::generator ? gen : disc)[p.name] = {p.m, p.v};
    }
    t->generator_opt_.restore(ck.generator_steps, std::move(gen));
    t->discriminator_opt_.restore(ck.discriminator_steps, std::move(disc));
    std::istringstream rng_state(ck.rng_state);
    rng_state >> t->rng_;
    if (!rng_state) throw Error("checkpoint rng state is malformed");
    t->order_ = ck.order;
    t->cursor_ = ck.cursor;
    t->step_ = ck.step;
    return t;
}

std::filesystem::path resolve_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw Error("checkpoint not found: " + path.string());
    if (!std::filesystem::is_directory(path)) return path;
    std::string name = read_file(path / "latest");
    while (!name.empty() && (name.back() == '\n' || name.back() == '\r' || name.back() == ' ')) name.pop_back();
    if (name.empty()) throw Error("empty latest pointer in " + path.string());
    return path / name;
}

std::unique_ptr<DahgModel> load_model(const std::filesystem::path& path, TrainConfig* config) {
    const Checkpoint ck = read_checkpoint(resolve_checkpoint(path));
    auto model = std::make_unique<DahgModel>(ck.config.model, ck.vocab, ck.config.limits);
    copy_params(ck, model->params());
    if (config != nullptr) *config = ck.config;
    return model;
}

std::filesystem::path write_checkpoint_dir(const Trainer& trainer, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const std::string name = "ckpt-" + std::to_string(trainer.step()) + ".bin";
    trainer.save_checkpoint(dir / name);
    write_file_atomic(dir / "latest", name + "\n");
    return dir / name;
}

// ---- metric log --------------------------------------------------------------------

MetricLog::MetricLog(const std::filesystem::path& path, bool append)
    : jsonl_(path.extension() == ".jsonl"), header_done_(append) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw Error("cannot write metric log " + path.string());
}

void MetricLog::write(const StepMetrics& m) {
    auto fields = m.terms.fields();
    fields.emplace_back("discriminator_grad_norm", m.discriminator_grad_norm);
    fields.emplace_back("generator_grad_norm", m.generator_grad_norm);
    if (jsonl_) {
        out_ << "{\"step\":" << m.step;
        for (const auto& [k, v] : fields) out_ << ",\"" << k << "\":" << format_double(v);
        out_ << "}\n";
    } else {
        if (!header_done_) {
            out_ << "step";
            for (const auto& f : fields) out_ << ',' << f.first;
            out_ << '\n';
            header_done_ = true;
        }
        out_ << m.step;
        for (const auto& f : fields) out_ << ',' << format_double(f.second);
        out_ << '\n';
    }
    out_.flush();
}

void run_training(Trainer& trainer, const std::function<void(const StepMetrics&)>& on_step) {
    const TrainConfig& cfg = trainer.config();
    std::unique_ptr<MetricLog> log;
    if (!cfg.metrics_log.empty()) log = std::make_unique<MetricLog>(cfg.metrics_log, trainer.step() > 0);
    bool saved = false;
    while (trainer.step() < cfg.steps) {
        const StepMetrics m = trainer.train_step();
        if (log) log->write(m);
        if (on_step) on_step(m);
        saved = false;
        if (cfg.checkpoint_every > 0 && m.step % cfg.checkpoint_every == 0 && !cfg.checkpoint_dir.empty()) {
            write_checkpoint_dir(trainer, cfg.checkpoint_dir);
            saved = true;
        }
    }
    if (!saved && !cfg.checkpoint_dir.empty()) write_checkpoint_dir(trainer, cfg.checkpoint_dir);
}

}  // namespace dahg
