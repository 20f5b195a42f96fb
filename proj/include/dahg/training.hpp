#pragma once

// Alternating discriminator/generator optimisation with KL annealing, metric
// logging and checkpoints.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "dahg/config.hpp"
#include "dahg/model.hpp"
#include "dahg/retrieval.hpp"

namespace dahg {

struct TrainConfig {
    std::uint64_t seed = 1;
    std::size_t batch_size = 64;
    double lr = 1e-3;
    std::size_t kl_anneal_batches = 10000;
    double clip_norm = 2.0;
    double init_std = 0.02;
    std::size_t vocab_cap = 100000;
    std::size_t steps = 1000;
    std::size_t checkpoint_every = 0;  // 0: only at the end
    BatchLimits limits;
    ModelConfig model;
    LossWeights weights;
    BeamConfig beam;
    std::string train_corpus;
    std::string checkpoint_dir = "checkpoints";
    std::string metrics_log = "metrics.csv";

    // Every key of to_config() is accepted; unknown keys are an error.
    static TrainConfig from_config(const Config& cfg);
    Config to_config() const;
    static std::vector<std::string> keys();
    void validate() const;
};

// min(step / horizon, 1); a horizon of 0 means no annealing.
double kl_anneal(std::size_t step, std::size_t horizon);

// Adam over one parameter group with global-norm gradient clipping.
class Adam {
  public:
    Adam() = default;
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // Returns the gradient norm before clipping. clip_norm <= 0 disables clipping.
    double step(const std::vector<Parameter*>& params, double clip_norm);

    std::uint64_t steps() const { return t_; }

    struct Moments {
        Tensor m;
        Tensor v;
    };
    const std::unordered_map<std::string, Moments>& moments() const { return moments_; }
    void restore(std::uint64_t t, std::unordered_map<std::string, Moments> moments);

  private:
    double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::uint64_t t_ = 0;
    std::unordered_map<std::string, Moments> moments_;
};

struct StepMetrics {
    std::size_t step = 0;  // 1-based index of the completed step
    LossTerms terms;
    double discriminator_grad_norm = 0.0;
    double generator_grad_norm = 0.0;
};

class Trainer {
  public:
    // Builds the vocabulary and the retrieval index from the corpus, then
    // initialises the model from the seed.
    Trainer(TrainConfig config, std::vector<Pair> corpus);

    const TrainConfig& config() const { return config_; }
    DahgModel& model() { return *model_; }
    const DahgModel& model() const { return *model_; }
    const TfIdfIndex& index() const { return index_; }
    std::size_t step() const { return step_; }
    // Changes the total step budget (resumed runs).
    void set_steps(std::size_t steps) { config_.steps = steps; }

    // Resolved retrieval links of an indexed pair, negatives drawn from the trainer rng.
    TrainingExample example(std::size_t index_position);
    // Next batch in the shuffled epoch order.
    Batch next_batch();

    // One discriminator update on L_D followed by one generator update on L_G.
    // after_discriminator runs between the two updates.
    StepMetrics train_step(const Batch& batch, const std::function<void()>& after_discriminator = {});
    StepMetrics train_step();

    // L_G and L_D of a batch at the current parameters without updating them.
    // Uses a private rng seeded from `seed` for dropout and latent draws.
    LossTerms evaluate_losses(const Batch& batch, std::uint64_t seed) const;

    void save_checkpoint(const std::filesystem::path& file) const;
    // Restores parameters, optimizer moments, step, rng and data order. The
    // corpus must be the one the checkpoint was trained on.
    static std::unique_ptr<Trainer> resume(const std::filesystem::path& checkpoint, std::vector<Pair> corpus);

  private:
    Trainer(TrainConfig config, std::vector<Pair> corpus, Vocabulary vocab);
    void shuffle();

    TrainConfig config_;
    TfIdfIndex index_;
    std::unique_ptr<DahgModel> model_;
    std::vector<std::size_t> prototype_;  // per index position
    std::vector<std::size_t> similar_;
    Adam generator_opt_;
    Adam discriminator_opt_;
    std::mt19937_64 rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::size_t step_ = 0;
};

// ---- checkpoints -------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

// A checkpoint file decoded into memory.
struct Checkpoint {
    TrainConfig config;
    Vocabulary vocab;
    std::uint64_t step = 0;
    std::string rng_state;
    std::vector<std::size_t> order;
    std::uint64_t cursor = 0;
    struct Param {
        std::string name;
        ParamGroup group = ParamGroup::generator;
        Tensor value;
        Tensor m;
        Tensor v;
    };
    std::vector<Param> params;
    std::uint64_t generator_steps = 0;
    std::uint64_t discriminator_steps = 0;
};

// Throws on bad magic, version mismatch, truncation or checksum failure.
Checkpoint read_checkpoint(const std::filesystem::path& file);
// A file path, or a checkpoint directory whose `latest` file names the newest checkpoint.
std::filesystem::path resolve_checkpoint(const std::filesystem::path& path);
// The trained model alone, for generation and evaluation.
std::unique_ptr<DahgModel> load_model(const std::filesystem::path& path, TrainConfig* config = nullptr);

// Writes ckpt-<step>.bin into `dir` and points `latest` at it.
std::filesystem::path write_checkpoint_dir(const Trainer& trainer, const std::filesystem::path& dir);

// ---- metric logging --------------------------------------------------------------

// CSV with a header row, or JSONL when the path ends in ".jsonl".
class MetricLog {
  public:
    // append keeps existing rows (resumed runs) and skips the header.
    explicit MetricLog(const std::filesystem::path& path, bool append = false);
    void write(const StepMetrics& m);

  private:
    std::ofstream out_;
    bool jsonl_ = false;
    bool header_done_ = false;
};

// Runs config.steps - trainer.step() further steps, logging every step and
// checkpointing every checkpoint_every steps and at the end.
void run_training(Trainer& trainer, const std::function<void(const StepMetrics&)>& on_step = {});

}  // namespace dahg
