#include "dahg/model.hpp"

#include <cmath>

#include "dahg/error.hpp"

namespace dahg {

std::vector<std::pair<std::string, double>> LossTerms::fields() const {
    return {
        {"kl_weight", kl_weight},
        {"generator_total", generator_total},
        {"discriminator_total", discriminator_total},
        {"vae", vae},
        {"reconstruction", reconstruction},
        {"kl_content", kl_content},
        {"kl_style", kl_style},
        {"bow", bow},
        {"style_classifier", style_classifier},
        {"content_classifier", content_classifier},
        {"style_generator", style_generator},
        {"content_generator", content_generator},
        {"style_discriminator", style_discriminator},
        {"content_discriminator", content_discriminator},
        {"sequence", sequence},
        {"style_classifier_accuracy", style_classifier_accuracy},
        {"content_classifier_accuracy", content_classifier_accuracy},
        {"style_discriminator_accuracy", style_discriminator_accuracy},
        {"content_discriminator_accuracy", content_discriminator_accuracy},
        {"clamped_targets", static_cast<double>(clamped_targets)},
    };
}

DahgModel::DahgModel(const ModelConfig& config, Vocabulary vocab, BatchLimits limits)
    : config_(config), vocab_(std::move(vocab)), limits_(limits) {
    if (config.embedding == 0 || config.hidden == 0 || config.latent == 0 || config.decoder_hidden == 0) {
        throw Error("model dimensions must be positive");
    }
    if (config.hops == 0) throw Error("hop count must be at least 1");
    if (!(config.keep_prob > 0.0 && config.keep_prob <= 1.0)) throw Error("keep_prob must be in (0, 1]");
    const std::size_t v = vocab_.size();
    const std::size_t state = 2 * config.hidden;
    embedding_ = Embedding(store_, v, config.embedding);
    doc_encoder_ = BiLstmEncoder(store_, "doc_encoder", config.embedding, config.hidden);
    headline_encoder_ = BiLstmEncoder(store_, "headline_encoder", config.embedding, config.hidden);
    features_ = FeatureExtractor(store_, {v, config.embedding, state, config.latent, config.decoder_hidden});
    features_.set_keep_prob(config.keep_prob);
    // style: classifier over headlines, discriminator over documents; content the reverse
    style_space_ = SpaceConstraint(store_, "style", config.latent, state, state);
    content_space_ = SpaceConstraint(store_, "content", config.latent, state, state);
    polisher_ = Polisher(store_, state, config.latent);
    polisher_.set_sigmoid_gate(config.sigmoid_gate);
    generator_ = HeadlineGenerator(store_, {v, config.embedding, state, config.latent, config.decoder_hidden});
}

SourceMemory DahgModel::make_memory(const EncoderStates& doc, const PolishState& polish, const Batch& batch) const {
    SourceMemory m;
    m.doc_states = doc.states;
    m.polished_states = polish.hops.back();
    m.mask = doc.mask;
    m.steps = doc.steps;
    m.extended_ids = batch.doc_extended;
    m.width = vocab_.size() + batch.max_oov;
    return m;
}

BatchEncoding DahgModel::encode_batch(ag::Tape& tape, const Batch& batch, std::mt19937_64* rng) const {
    const std::size_t b = batch.size;
    BatchEncoding enc;

    const PaddedIds* doc_blocks[] = {&batch.doc, &batch.proto_doc, &batch.similar_doc, &batch.negative_doc};
    const PaddedIds docs = stack_padded(doc_blocks);
    const EncoderStates d = doc_encoder_.encode(tape, embedding_, docs);
    const std::size_t t = docs.steps;
    enc.doc.states = ag::slice_rows(d.states, 0, b * t);
    enc.doc.pooled = ag::slice_rows(d.pooled, 0, b);
    enc.doc.mask = batch.doc.mask;
    enc.doc.steps = t;
    enc.proto_doc = ag::slice_rows(d.pooled, b, b);
    enc.similar_doc = ag::slice_rows(d.pooled, 2 * b, b);
    enc.negative_doc = ag::slice_rows(d.pooled, 3 * b, b);

    const PaddedIds* head_blocks[] = {&batch.proto_headline, &batch.attractive_headline, &batch.unattractive_headline};
    const PaddedIds heads = stack_padded(head_blocks);
    const EncoderStates h = headline_encoder_.encode(tape, embedding_, heads);
    enc.proto_headline = ag::slice_rows(h.pooled, 0, b);
    enc.attractive = ag::slice_rows(h.pooled, b, b);
    enc.unattractive = ag::slice_rows(h.pooled, 2 * b, b);

    std::tie(enc.content, enc.style) = features_.encode(tape, enc.proto_headline, rng);
    enc.polish = polisher_.polish(tape, enc.doc.states, enc.doc.mask, t, enc.content.sample, config_.hops);
    enc.memory = make_memory(enc.doc, enc.polish, batch);
    enc.init = generator_.init(tape, enc.doc.pooled);
    enc.style_proj = generator_.project_style(tape, enc.style.sample);
    return enc;
}

BatchEncoding DahgModel::encode_inference(ag::Tape& tape, const Batch& batch) const {
    BatchEncoding enc;
    enc.doc = doc_encoder_.encode(tape, embedding_, batch.doc);
    enc.proto_headline = headline_encoder_.encode(tape, embedding_, batch.proto_headline).pooled;
    std::tie(enc.content, enc.style) = features_.encode(tape, enc.proto_headline, nullptr);
    enc.polish = polisher_.polish(tape, enc.doc.states, enc.doc.mask, enc.doc.steps, enc.content.sample, config_.hops);
    enc.memory = make_memory(enc.doc, enc.polish, batch);
    enc.init = generator_.init(tape, enc.doc.pooled);
    enc.style_proj = generator_.project_style(tape, enc.style.sample);
    return enc;
}

ag::Var DahgModel::discriminator_loss(ag::Tape& tape, const BatchEncoding& enc, LossTerms& terms) const {
    PairLoss style = style_space_.discriminator_loss(tape, tape.detach(enc.style.sample), tape.detach(enc.proto_doc),
                                                     tape.detach(enc.negative_doc));
    PairLoss content = content_space_.discriminator_loss(tape, tape.detach(enc.content.sample),
                                                         tape.detach(enc.attractive), tape.detach(enc.unattractive));
    terms.style_discriminator = style.loss.item();
    terms.content_discriminator = content.loss.item();
    terms.style_discriminator_accuracy = style.accuracy;
    terms.content_discriminator_accuracy = content.accuracy;
    ag::Var total = ag::add(style.loss, content.loss);
    terms.discriminator_total = total.item();
    if (!std::isfinite(terms.style_discriminator)) throw Error("non-finite loss in style_discriminator");
    if (!std::isfinite(terms.content_discriminator)) throw Error("non-finite loss in content_discriminator");
    return total;
}

namespace {

double checked(ag::Var v, const char* name) {
    const double x = v.item();
    if (!std::isfinite(x)) throw Error(std::string("non-finite loss in ") + name);
    return x;
}

}  // namespace

ag::Var DahgModel::generator_loss(ag::Tape& tape, const BatchEncoding& enc, const Batch& batch, double kl_weight,
                                  const LossWeights& w, LossTerms& terms) const {
    const ag::Var c = enc.content.sample;
    const ag::Var s = enc.style.sample;

    ag::Var rec = features_.reconstruct(tape, embedding_, c, s, batch.proto_headline);
    ag::Var kl_c = kl_to_standard_normal(enc.content.mu, enc.content.logvar);
    ag::Var kl_s = kl_to_standard_normal(enc.style.mu, enc.style.logvar);
    ag::Var bow = features_.bow_loss(tape, c, s, batch.proto_headline);

    PairLoss style_cls = style_space_.classifier_loss(tape, s, enc.attractive, enc.unattractive);
    ag::Var style_gen = style_space_.generator_loss(tape, s, enc.proto_doc);
    PairLoss content_cls = content_space_.classifier_loss(tape, c, enc.proto_doc, enc.similar_doc);
    ag::Var content_gen = content_space_.generator_loss(tape, c, enc.attractive);

    SequenceLossStats stats;
    ag::Var seq = teacher_forced_loss(tape, generator_, embedding_, enc.memory, enc.style_proj, enc.init, batch, &stats);

    terms.kl_weight = kl_weight;
    terms.reconstruction = checked(rec, "reconstruction");
    terms.kl_content = checked(kl_c, "kl_content");
    terms.kl_style = checked(kl_s, "kl_style");
    terms.bow = checked(bow, "bow");
    terms.style_classifier = checked(style_cls.loss, "style_classifier");
    terms.content_classifier = checked(content_cls.loss, "content_classifier");
    terms.style_generator = checked(style_gen, "style_generator");
    terms.content_generator = checked(content_gen, "content_generator");
    terms.sequence = checked(seq, "sequence");
    terms.style_classifier_accuracy = style_cls.accuracy;
    terms.content_classifier_accuracy = content_cls.accuracy;
    terms.clamped_targets = stats.clamped;

    ag::Var vae = ag::add(ag::add(ag::scale(rec, w.reconstruction), ag::scale(bow, w.bow)),
                          ag::add(ag::scale(kl_c, kl_weight * w.kl_content), ag::scale(kl_s, kl_weight * w.kl_style)));
    ag::Var constraints = ag::add(
        ag::add(ag::scale(style_cls.loss, w.style_classifier), ag::scale(content_cls.loss, w.content_classifier)),
        ag::add(ag::scale(style_gen, w.style_generator), ag::scale(content_gen, w.content_generator)));
    ag::Var total = ag::add(ag::add(vae, constraints), ag::scale(seq, w.sequence));
    terms.vae = vae.item();
    terms.generator_total = checked(total, "generator_total");
    return total;
}

std::pair<Tensor, Tensor> DahgModel::latent_means(const PaddedIds& headlines) const {
    ag::Tape tape(false);
    const EncoderStates h = headline_encoder_.encode(tape, embedding_, headlines);
    auto [c, s] = features_.encode(tape, h.pooled, nullptr);
    return {c.mu.value(), s.mu.value()};
}

std::vector<Hypothesis> DahgModel::search(const Batch& batch, const BeamConfig& beam) const {
    ag::Tape tape(false);
    const BatchEncoding enc = encode_inference(tape, batch);
    DecoderBeamModel model(tape, generator_, embedding_, enc.memory, enc.style_proj, enc.init);
    return beam_search(model, beam);
}

std::vector<Hypothesis> DahgModel::generate(const Pair& document, const Pair& prototype, const BeamConfig& beam) const {
    const Pair* d[] = {&document};
    const Pair* p[] = {&prototype};
    return search(make_inference_batch(d, p, vocab_, limits_), beam);
}

Tokens DahgModel::generate_headline(const Pair& document, const Pair& prototype, const BeamConfig& beam) const {
    const Pair* d[] = {&document};
    const Pair* p[] = {&prototype};
    const Batch batch = make_inference_batch(d, p, vocab_, limits_);
    const std::vector<Hypothesis> hyps = search(batch, beam);
    if (hyps.empty()) return {};
    return decode_extended(hyps.front().tokens, vocab_, batch.doc_oovs[0]);
}

}  // namespace dahg
