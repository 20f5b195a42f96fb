#include "dahg/disentangle.hpp"

#include <algorithm>
#include <cmath>

#include "dahg/error.hpp"

namespace dahg {

LatentSpace reparameterize(ag::Tape& tape, ag::Var mu, ag::Var logvar, const Tensor& noise) {
    if (!noise.same_shape(mu.value())) throw Error("noise shape does not match the latent");
    LatentSpace z;
    z.mu = mu;
    z.logvar = logvar;
    z.noise = noise;
    ag::Var stddev = ag::exp(ag::scale(logvar, 0.5));
    z.sample = ag::add(mu, ag::mul(stddev, tape.constant(noise)));
    return z;
}

LatentSpace reparameterize(ag::Tape& tape, ag::Var mu, ag::Var logvar, std::mt19937_64* rng) {
    if (rng == nullptr) {
        LatentSpace z;
        z.mu = mu;
        z.logvar = logvar;
        z.sample = mu;
        z.noise = Tensor(mu.rows(), mu.cols());
        return z;
    }
    return reparameterize(tape, mu, logvar, standard_normal(mu.rows(), mu.cols(), *rng));
}

ag::Var kl_to_standard_normal(ag::Var mu, ag::Var logvar) {
    // 0.5 * (mu^2 + exp(lv) - 1 - lv), summed over dims, averaged over rows
    ag::Var terms = ag::sub(ag::add(ag::square(mu), ag::exp(logvar)), ag::add_scalar(logvar, 1.0));
    return ag::scale(ag::sum(terms), 0.5 / static_cast<double>(mu.rows()));
}

double kl_to_standard_normal(std::span<const double> mu, std::span<const double> logvar) {
    if (mu.size() != logvar.size()) throw Error("mu and logvar differ in size");
    double s = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) s += mu[i] * mu[i] + std::exp(logvar[i]) - 1.0 - logvar[i];
    return 0.5 * s;
}

ag::Var masked_nll(ag::Var log_probs, std::span<const int> targets, std::span<const double> weights) {
    if (targets.size() != log_probs.rows() || weights.size() != targets.size()) {
        throw Error("masked_nll target/weight length mismatch");
    }
    double total = 0.0;
    for (double w : weights) total += w;
    if (total <= 0.0) throw Error("masked_nll over zero tokens");
    Tensor w(weights.size(), 1);
    for (std::size_t i = 0; i < weights.size(); ++i) w[i] = -weights[i] / total;
    return ag::weighted_sum(ag::pick(log_probs, targets), w);
}

// ---- FeatureExtractor ----------------------------------------------------------------

FeatureExtractor::FeatureExtractor(ParameterStore& store, const FeatureExtractorDims& d)
    : content_mu_(Linear::create(store, "vae.content_mu", d.headline_state, d.latent)),
      content_logvar_(Linear::create(store, "vae.content_logvar", d.headline_state, d.latent)),
      style_mu_(Linear::create(store, "vae.style_mu", d.headline_state, d.latent)),
      style_logvar_(Linear::create(store, "vae.style_logvar", d.headline_state, d.latent)),
      rec_bridge_(Linear::create(store, "vae.rec_bridge", 2 * d.latent, d.decoder_hidden)),
      rec_lstm_(LstmLayer::create(store, "vae.rec_lstm", d.embedding, d.decoder_hidden)),
      rec_out_(Linear::create(store, "vae.rec_out", d.decoder_hidden, d.vocab)),
      bow_(Linear::create(store, "vae.bow", 2 * d.latent, d.vocab)) {}

ag::Var FeatureExtractor::dropout(ag::Tape& tape, ag::Var x, std::mt19937_64* rng) const {
    if (rng == nullptr || keep_prob_ >= 1.0) return x;
    std::bernoulli_distribution keep(keep_prob_);
    Tensor m(x.rows(), x.cols());
    for (double& v : m.flat()) v = keep(*rng) ? 1.0 / keep_prob_ : 0.0;
    return ag::mul(x, tape.constant(std::move(m)));
}

std::pair<LatentSpace, LatentSpace> FeatureExtractor::encode(ag::Tape& tape, ag::Var pooled, std::mt19937_64* rng) const {
    ag::Var h = dropout(tape, pooled, rng);
    LatentSpace c = reparameterize(tape, content_mu_(tape, h), content_logvar_(tape, h), rng);
    LatentSpace s = reparameterize(tape, style_mu_(tape, h), style_logvar_(tape, h), rng);
    return {std::move(c), std::move(s)};
}

LatentSpace FeatureExtractor::encode_content(ag::Tape& tape, ag::Var pooled, std::mt19937_64* rng) const {
    ag::Var h = dropout(tape, pooled, rng);
    return reparameterize(tape, content_mu_(tape, h), content_logvar_(tape, h), rng);
}

LatentSpace FeatureExtractor::encode_style(ag::Tape& tape, ag::Var pooled, std::mt19937_64* rng) const {
    ag::Var h = dropout(tape, pooled, rng);
    return reparameterize(tape, style_mu_(tape, h), style_logvar_(tape, h), rng);
}

namespace {

// Teacher-forcing inputs (START + tokens) and targets (tokens + STOP) of a
// padded headline block, one step longer than the block.
struct ShiftedTargets {
    PaddedIds inputs;
    std::vector<int> targets;
    std::vector<double> weights;
};

ShiftedTargets shift(const PaddedIds& h) {
    std::vector<std::vector<int>> in;
    ShiftedTargets out;
    const std::size_t steps = h.steps + 1;
    out.targets.assign(h.rows * steps, Vocabulary::kPad);
    out.weights.assign(h.rows * steps, 0.0);
    for (std::size_t r = 0; r < h.rows; ++r) {
        std::vector<int> seq{Vocabulary::kStart};
        for (std::size_t t = 0; t < h.lengths[r]; ++t) {
            const int id = h.ids[r * h.steps + t];
            seq.push_back(id);
            out.targets[r * steps + t] = id;
            out.weights[r * steps + t] = 1.0;
        }
        out.targets[r * steps + h.lengths[r]] = Vocabulary::kStop;
        out.weights[r * steps + h.lengths[r]] = 1.0;
        in.push_back(std::move(seq));
    }
    out.inputs = pad_sequences(in, steps);
    return out;
}

}  // namespace

ag::Var FeatureExtractor::reconstruction_log_probs(ag::Tape& tape, const Embedding& embedding, ag::Var c, ag::Var s,
                                                   const PaddedIds& headline) const {
    const ShiftedTargets st = shift(headline);
    const PaddedIds& in = st.inputs;
    const std::size_t hidden = rec_lstm_.hidden();
    const std::size_t active = *std::max_element(in.lengths.begin(), in.lengths.end());

    ag::Var proj = rec_lstm_.project(tape, embedding.lookup(tape, in.ids));
    ag::Var zeros = tape.constant(Tensor(in.rows, hidden));
    ag::Var h = rec_bridge_(tape, ag::concat_cols({c, s}));
    ag::Var cell = zeros;
    std::vector<ag::Var> outs(in.steps, zeros);
    for (std::size_t t = 0; t < active; ++t) {
        const Tensor m = in.column_mask(t);
        ag::Var hc = rec_lstm_.step(tape, ag::seq_step(proj, in.steps, t), h, cell);
        ag::Var h_new = ag::slice_cols(hc, 0, hidden);
        outs[t] = h_new;
        h = ag::blend_mask(h_new, h, m);
        cell = ag::blend_mask(ag::slice_cols(hc, hidden, hidden), cell, m);
    }
    return ag::log_softmax(rec_out_(tape, ag::stack_steps(outs)));
}

ag::Var FeatureExtractor::reconstruct(ag::Tape& tape, const Embedding& embedding, ag::Var c, ag::Var s,
                                      const PaddedIds& headline) const {
    const ShiftedTargets st = shift(headline);
    return masked_nll(reconstruction_log_probs(tape, embedding, c, s, headline), st.targets, st.weights);
}

ag::Var FeatureExtractor::bow_log_probs(ag::Tape& tape, ag::Var c, ag::Var s) const {
    return ag::log_softmax(bow_(tape, ag::concat_cols({c, s})));
}

ag::Var FeatureExtractor::bow_loss(ag::Tape& tape, ag::Var c, ag::Var s, const PaddedIds& headline) const {
    ag::Var logp = bow_log_probs(tape, c, s);
    Tensor counts(logp.rows(), logp.cols());
    double total = 0.0;
    for (std::size_t r = 0; r < headline.rows; ++r) {
        for (std::size_t t = 0; t < headline.lengths[r]; ++t) {
            counts(r, static_cast<std::size_t>(headline.ids[r * headline.steps + t])) += 1.0;
            total += 1.0;
        }
    }
    if (total == 0.0) throw Error("bag-of-words loss over an empty headline batch");
    for (double& v : counts.flat()) v = -v / total;
    return ag::weighted_sum(logp, counts);
}

// ---- constraints -----------------------------------------------------------------

PairScorer::PairScorer(ParameterStore& store, const std::string& name, std::size_t latent, std::size_t candidate,
                       ParamGroup group)
    : linear_(Linear::create(store, name, latent + candidate, 2, group)) {}

ag::Var PairScorer::log_probs(ag::Tape& tape, ag::Var latent, ag::Var candidate) const {
    return ag::log_softmax(linear_(tape, ag::concat_cols({latent, candidate})));
}

PairLoss pair_loss(ag::Var pos, ag::Var neg) {
    const std::size_t batch = pos.rows();
    Tensor w_pos(batch, 2), w_neg(batch, 2);
    std::size_t correct = 0;
    for (std::size_t b = 0; b < batch; ++b) {
        w_pos(b, 0) = -1.0 / static_cast<double>(batch);
        w_neg(b, 1) = -1.0 / static_cast<double>(batch);
        if (pos.value()(b, 0) > pos.value()(b, 1)) ++correct;
        if (neg.value()(b, 1) > neg.value()(b, 0)) ++correct;
    }
    PairLoss out;
    out.loss = ag::add(ag::weighted_sum(pos, w_pos), ag::weighted_sum(neg, w_neg));
    out.accuracy = static_cast<double>(correct) / static_cast<double>(2 * batch);
    return out;
}

ag::Var fooling_loss(ag::Var pos) {
    Tensor w(pos.rows(), 2);
    for (std::size_t b = 0; b < pos.rows(); ++b) w(b, 1) = -1.0 / static_cast<double>(pos.rows());
    return ag::weighted_sum(pos, w);
}

SpaceConstraint::SpaceConstraint(ParameterStore& store, const std::string& name, std::size_t latent,
                                 std::size_t classifier_candidate, std::size_t discriminator_candidate)
    : classifier_(store, name + ".classifier", latent, classifier_candidate, ParamGroup::generator),
      discriminator_(store, name + ".discriminator", latent, discriminator_candidate, ParamGroup::discriminator) {}

PairLoss SpaceConstraint::classifier_loss(ag::Tape& tape, ag::Var latent, ag::Var pos, ag::Var neg) const {
    return pair_loss(classifier_.log_probs(tape, latent, pos), classifier_.log_probs(tape, latent, neg));
}

PairLoss SpaceConstraint::discriminator_loss(ag::Tape& tape, ag::Var latent, ag::Var pos, ag::Var neg) const {
    return pair_loss(discriminator_.log_probs(tape, latent, pos), discriminator_.log_probs(tape, latent, neg));
}

ag::Var SpaceConstraint::generator_loss(ag::Tape& tape, ag::Var latent, ag::Var pos) const {
    return fooling_loss(discriminator_.log_probs(tape, latent, pos));
}

namespace {

AdversarialLosses constraint(ag::Tape& tape, const SpaceConstraint& sc, ag::Var latent, ag::Var cls_pos,
                             ag::Var cls_neg, ag::Var disc_pos, ag::Var disc_neg) {
    AdversarialLosses out;
    PairLoss cls = sc.classifier_loss(tape, latent, cls_pos, cls_neg);
    out.classifier = cls.loss;
    out.classifier_accuracy = cls.accuracy;
    PairLoss disc = sc.discriminator_loss(tape, tape.detach(latent), tape.detach(disc_pos), tape.detach(disc_neg));
    out.discriminator = disc.loss;
    out.discriminator_accuracy = disc.accuracy;
    out.generator = sc.generator_loss(tape, latent, disc_pos);
    return out;
}

}  // namespace

AdversarialLosses style_constraint(ag::Tape& tape, const SpaceConstraint& c, ag::Var style, ag::Var attractive,
                                   ag::Var unattractive, ag::Var proto_doc, ag::Var random_doc) {
    return constraint(tape, c, style, attractive, unattractive, proto_doc, random_doc);
}

AdversarialLosses content_constraint(ag::Tape& tape, const SpaceConstraint& c, ag::Var content, ag::Var proto_doc,
                                     ag::Var similar_doc, ag::Var attractive, ag::Var unattractive) {
    return constraint(tape, c, content, proto_doc, similar_doc, attractive, unattractive);
}

}  // namespace dahg
