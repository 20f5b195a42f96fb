#pragma once

// The full DAHG network: shared embedding, document and headline encoders,
// VAE feature extractor with its two space constraints, highlight polisher and
// headline generator, plus the loss assembly used by training.

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "dahg/corpus.hpp"
#include "dahg/disentangle.hpp"
#include "dahg/encoders.hpp"
#include "dahg/generator.hpp"
#include "dahg/polish.hpp"

namespace dahg {

struct ModelConfig {
    std::size_t embedding = 64;
    std::size_t hidden = 64;          // per direction; document/headline states are 2x this
    std::size_t latent = 32;
    std::size_t decoder_hidden = 64;  // generator and reconstruction LSTMs
    std::size_t hops = 2;
    double keep_prob = 0.8;
    bool sigmoid_gate = false;
};

// Multipliers on the terms of L_G. The KL weights are further scaled by the
// annealing schedule.
struct LossWeights {
    double kl_content = 1.0;
    double kl_style = 1.0;
    double reconstruction = 1.0;
    double bow = 1.0;
    double style_classifier = 1.0;
    double content_classifier = 1.0;
    double style_generator = 1.0;
    double content_generator = 1.0;
    double sequence = 1.0;
};

// Scalar values of every loss component of one batch.
struct LossTerms {
    double reconstruction = 0.0;
    double kl_content = 0.0;
    double kl_style = 0.0;
    double bow = 0.0;
    double vae = 0.0;  // reconstruction + annealed KLs + bow
    double style_classifier = 0.0;
    double content_classifier = 0.0;
    double style_generator = 0.0;
    double content_generator = 0.0;
    double style_discriminator = 0.0;
    double content_discriminator = 0.0;
    double sequence = 0.0;
    double generator_total = 0.0;
    double discriminator_total = 0.0;
    double style_classifier_accuracy = 0.0;
    double content_classifier_accuracy = 0.0;
    double style_discriminator_accuracy = 0.0;
    double content_discriminator_accuracy = 0.0;
    double kl_weight = 0.0;
    std::size_t clamped_targets = 0;

    // (name, value) in a fixed order for logging.
    std::vector<std::pair<std::string, double>> fields() const;
};

// Everything the encoders produce for a training batch.
struct BatchEncoding {
    EncoderStates doc;          // X^d
    ag::Var proto_doc;          // pooled X^r
    ag::Var similar_doc;        // pooled X^s
    ag::Var negative_doc;       // pooled X^q
    ag::Var proto_headline;     // pooled Y^r
    ag::Var attractive;         // pooled Y^a
    ag::Var unattractive;       // pooled Y^n
    LatentSpace content;
    LatentSpace style;
    PolishState polish;
    SourceMemory memory;
    DecoderState init;
    ag::Var style_proj;
};

class DahgModel {
  public:
    DahgModel(const ModelConfig& config, Vocabulary vocab, BatchLimits limits);
    DahgModel(const DahgModel&) = delete;
    DahgModel& operator=(const DahgModel&) = delete;

    const ModelConfig& config() const { return config_; }
    const Vocabulary& vocab() const { return vocab_; }
    const BatchLimits& limits() const { return limits_; }
    ParameterStore& params() { return store_; }
    const ParameterStore& params() const { return store_; }

    const Embedding& embedding() const { return embedding_; }
    const BiLstmEncoder& doc_encoder() const { return doc_encoder_; }
    const BiLstmEncoder& headline_encoder() const { return headline_encoder_; }
    const FeatureExtractor& features() const { return features_; }
    const SpaceConstraint& style_space() const { return style_space_; }
    const SpaceConstraint& content_space() const { return content_space_; }
    const Polisher& polisher() const { return polisher_; }
    const HeadlineGenerator& generator() const { return generator_; }

    // Training forward pass through encoders, latents, polish and decoder init.
    // rng drives dropout and the latent draws; null means inference behaviour.
    BatchEncoding encode_batch(ag::Tape& tape, const Batch& batch, std::mt19937_64* rng) const;

    // L_D = L_S^d + L_C^d on detached inputs.
    ag::Var discriminator_loss(ag::Tape& tape, const BatchEncoding& enc, LossTerms& terms) const;

    // L_G = L_VAE + L_Cs + L_Cc + L_S^g + L_C^g + L_seq, each scaled by `weights`.
    // Throws naming the first non-finite component.
    ag::Var generator_loss(ag::Tape& tape, const BatchEncoding& enc, const Batch& batch, double kl_weight,
                           const LossWeights& weights, LossTerms& terms) const;

    // Inference encoding of an inference batch (documents + prototype headlines).
    BatchEncoding encode_inference(ag::Tape& tape, const Batch& batch) const;

    // (mu_c, mu_s) of headlines, [B x Z] each.
    std::pair<Tensor, Tensor> latent_means(const PaddedIds& headlines) const;

    // Beam search for one document given its prototype.
    std::vector<Hypothesis> generate(const Pair& document, const Pair& prototype, const BeamConfig& beam) const;
    // Best hypothesis as tokens, OOV ids resolved through the document's OOV list.
    Tokens generate_headline(const Pair& document, const Pair& prototype, const BeamConfig& beam) const;

  private:
    std::vector<Hypothesis> search(const Batch& batch, const BeamConfig& beam) const;
    SourceMemory make_memory(const EncoderStates& doc, const PolishState& polish, const Batch& batch) const;

    ModelConfig config_;
    Vocabulary vocab_;
    BatchLimits limits_;
    ParameterStore store_;
    Embedding embedding_;
    BiLstmEncoder doc_encoder_;
    BiLstmEncoder headline_encoder_;
    FeatureExtractor features_;
    SpaceConstraint style_space_;
    SpaceConstraint content_space_;
    Polisher polisher_;
    HeadlineGenerator generator_;
};

}  // namespace dahg
