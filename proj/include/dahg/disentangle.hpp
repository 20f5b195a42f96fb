#pragma once

// VAE feature extractor that splits a prototype headline into a content latent
// c and a style latent s, plus the classifier/discriminator constraints that
// keep style out of c and content out of s.

#include <cstddef>
#include <random>
#include <span>

#include "dahg/corpus.hpp"
#include "dahg/encoders.hpp"
#include "dahg/layers.hpp"

namespace dahg {

// Diagonal Gaussian posterior and the draw taken from it.
struct LatentSpace {
    ag::Var mu;      // [B x Z]
    ag::Var logvar;  // [B x Z]
    ag::Var sample;  // mu + exp(logvar / 2) * noise
    Tensor noise;    // the standard-normal draw; all zeros in inference mode
};

// Reparameterised draw. A null rng means inference mode (sample == mu).
LatentSpace reparameterize(ag::Tape& tape, ag::Var mu, ag::Var logvar, std::mt19937_64* rng);
LatentSpace reparameterize(ag::Tape& tape, ag::Var mu, ag::Var logvar, const Tensor& noise);

// Batch mean of 0.5 * sum_i (mu_i^2 + exp(logvar_i) - 1 - logvar_i).
ag::Var kl_to_standard_normal(ag::Var mu, ag::Var logvar);
// Single-row closed form.
double kl_to_standard_normal(std::span<const double> mu, std::span<const double> logvar);

// Mean token negative log-likelihood: rows of `log_probs` are distributions,
// `targets[r]` the gold column and `weights[r]` 1 for real tokens, 0 for PAD.
ag::Var masked_nll(ag::Var log_probs, std::span<const int> targets, std::span<const double> weights);

struct FeatureExtractorDims {
    std::size_t vocab = 0;
    std::size_t embedding = 0;
    std::size_t headline_state = 0;  // 2H of Bi-RNN_Y
    std::size_t latent = 0;
    std::size_t decoder_hidden = 0;
};

class FeatureExtractor {
  public:
    FeatureExtractor() = default;
    FeatureExtractor(ParameterStore& store, const FeatureExtractorDims& dims);

    // Dropout with this keep probability is applied to the pooled headline
    // representation when a rng is supplied (training mode).
    void set_keep_prob(double keep) { keep_prob_ = keep; }

    LatentSpace encode_content(ag::Tape& tape, ag::Var pooled_headline, std::mt19937_64* rng) const;
    LatentSpace encode_style(ag::Tape& tape, ag::Var pooled_headline, std::mt19937_64* rng) const;
    // Both heads with one shared dropout mask on the pooled headline state.
    std::pair<LatentSpace, LatentSpace> encode(ag::Tape& tape, ag::Var pooled_headline, std::mt19937_64* rng) const;

    // Teacher-forced reconstruction of `headline` (+ STOP) from [c; s] through
    // an affine bridge into a single-layer LSTM; returns the mean token NLL.
    ag::Var reconstruct(ag::Tape& tape, const Embedding& embedding, ag::Var c, ag::Var s,
                        const PaddedIds& headline) const;
    // Token log-probabilities of the reconstruction decoder, [(B*(T+1)) x V].
    ag::Var reconstruction_log_probs(ag::Tape& tape, const Embedding& embedding, ag::Var c, ag::Var s,
                                     const PaddedIds& headline) const;

    // Bag-of-words loss: one distribution from [c; s] scores every non-PAD
    // headline token; mean NLL over those tokens.
    ag::Var bow_loss(ag::Tape& tape, ag::Var c, ag::Var s, const PaddedIds& headline) const;
    ag::Var bow_log_probs(ag::Tape& tape, ag::Var c, ag::Var s) const;

    const Linear& reconstruction_output() const { return rec_out_; }
    const Linear& bow_output() const { return bow_; }

  private:
    ag::Var dropout(ag::Tape& tape, ag::Var x, std::mt19937_64* rng) const;

    Linear content_mu_, content_logvar_, style_mu_, style_logvar_;
    Linear rec_bridge_;
    LstmLayer rec_lstm_;
    Linear rec_out_;
    Linear bow_;
    double keep_prob_ = 1.0;
};

// Two-way softmax scorer over [latent; candidate]: column 0 is "matches",
// column 1 is "does not match".
class PairScorer {
  public:
    PairScorer() = default;
    PairScorer(ParameterStore& store, const std::string& name, std::size_t latent, std::size_t candidate,
               ParamGroup group);

    // log of (p_match, 1 - p_match) per row, [B x 2].
    ag::Var log_probs(ag::Tape& tape, ag::Var latent, ag::Var candidate) const;
    const Linear& linear() const { return linear_; }

  private:
    Linear linear_;
};

struct AdversarialLosses {
    ag::Var classifier;     // L_Cs / L_Cc
    ag::Var discriminator;  // L_S^d / L_C^d
    ag::Var generator;      // L_S^g / L_C^g
    double classifier_accuracy = 0.0;
    double discriminator_accuracy = 0.0;
};

// -log p(pos) - log(1 - p(neg)), batch mean; accuracy counts p(pos) > 0.5 and
// p(neg) < 0.5 over both candidates.
struct PairLoss {
    ag::Var loss;
    double accuracy = 0.0;
};
PairLoss pair_loss(ag::Var log_probs_positive, ag::Var log_probs_negative);
// -log(1 - p(pos)), batch mean.
ag::Var fooling_loss(ag::Var log_probs_positive);

// The paired classifier (generator side) and discriminator (adversary) of one
// latent space.
class SpaceConstraint {
  public:
    SpaceConstraint() = default;
    SpaceConstraint(ParameterStore& store, const std::string& name, std::size_t latent,
                    std::size_t classifier_candidate, std::size_t discriminator_candidate);

    // Classifier picks `cls_positive` over `cls_negative`.
    PairLoss classifier_loss(ag::Tape& tape, ag::Var latent, ag::Var cls_positive, ag::Var cls_negative) const;
    // Discriminator loss (train the adversary) on detached inputs.
    PairLoss discriminator_loss(ag::Tape& tape, ag::Var latent, ag::Var disc_positive, ag::Var disc_negative) const;
    // The latent's side of the game: push the discriminator to reject the positive.
    ag::Var generator_loss(ag::Tape& tape, ag::Var latent, ag::Var disc_positive) const;

    const PairScorer& classifier() const { return classifier_; }
    const PairScorer& discriminator() const { return discriminator_; }

  private:
    PairScorer classifier_;
    PairScorer discriminator_;
};

// Style space: classifier over s matches attractive Y^a against unattractive
// Y^n; the discriminator tries to tell the prototype document X^r from a
// random document X^q given s.
AdversarialLosses style_constraint(ag::Tape& tape, const SpaceConstraint& c, ag::Var style, ag::Var attractive,
                                   ag::Var unattractive, ag::Var proto_doc, ag::Var random_doc);

// Content space: classifier over c picks X^r against its most similar document
// X^s; the discriminator tries to recover the style label (Y^a vs Y^n) from c.
AdversarialLosses content_constraint(ag::Tape& tape, const SpaceConstraint& c, ag::Var content, ag::Var proto_doc,
                                     ag::Var similar_doc, ag::Var attractive, ag::Var unattractive);

}  // namespace dahg
