#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "dagan/config.hpp"
#include "dagan/data.hpp"
#include "dagan/discriminator.hpp"
#include "dagan/generator.hpp"
#include "dagan/metrics.hpp"
#include "dagan/objectives.hpp"

namespace dagan::trainer {

// base_lr * (1 - iter / max_iter)^power. Throws std::out_of_range unless
// 0 <= iter <= max_iter.
double poly_lr(int64_t iter, int64_t max_iter, double base_lr, double power = 0.9);

// Seeds torch and switches deterministic kernels on when requested.
void seed_everything(uint64_t seed, bool deterministic);

// Owns both networks, their Adam optimizers, the sampling RNG and the counters
// of one experiment. Training mutates this object only through the step
// functions below.
class Trainer {
public:
    explicit Trainer(const ExperimentConfig& config);

    const ExperimentConfig& config() const { return config_; }
    generator::DANet& generator() { return generator_; }
    discriminator::Discriminator& discriminator() { return discriminator_; }

    // One Algorithm-1 iteration on `batch`: m_steps rounds of a generator
    // update followed (for the adversarial variant) by a discriminator update,
    // at the poly learning rate of the current schedule position. Throws
    // NumericError when any loss is non-finite.
    objectives::LossReport train_step(const data::Batch& batch);

    // Generator half-step with the discriminator frozen: supervised BCE + Dice
    // over the four decoder levels plus adv_weight * L_G when adversarial.
    // `fake` receives the detached final probability map.
    objectives::LossReport generator_step(const data::Batch& batch, torch::Tensor* fake = nullptr);

    // Discriminator half-step with the generator frozen. Returns the
    // adversarial loss before the update.
    double discriminator_step(const data::Batch& batch, const torch::Tensor& fake);

    // Next shuffled, augmented batch; reshuffles after every pass.
    data::Batch next_batch(const std::vector<data::BiTemporalSample>& samples, bool augment = true);

    // Eval-mode, no-grad forward.
    generator::ChangePrediction predict(const torch::Tensor& image_t1, const torch::Tensor& image_t2);

    // Final probability map for an arbitrarily large square pair: tiles of
    // tile_size are predicted independently and stitched back.
    torch::Tensor predict_image(const torch::Tensor& image_t1, const torch::Tensor& image_t2);

    // Tallies final-map predictions against masks; optionally per image.
    metrics::ConfusionMatrix confusion(const std::vector<data::BiTemporalSample>& samples,
                                       std::vector<metrics::ImageTally>* per_image = nullptr);
    metrics::MetricReport evaluate(const std::vector<data::BiTemporalSample>& samples);

    // Schedule position inside the current training phase.
    int64_t schedule_iteration() const { return schedule_iteration_; }
    void start_phase() { schedule_iteration_ = 0; }
    int64_t iteration() const { return iteration_; }
    double current_lr() const;

    double best_f1() const { return best_f1_; }
    void set_best_f1(double f1) { best_f1_ = f1; }

    void save(const std::filesystem::path& path);
    void save_to(std::ostream& stream);
    void load_from(std::istream& stream);
    // Refuses (ConfigError) when the checkpoint's fingerprint differs from this
    // trainer's configuration.
    void load(const std::filesystem::path& path);
    static Trainer from_checkpoint(const std::filesystem::path& path);

    std::string rng_state() const;

private:
    void set_lr(double lr);
    void set_requires_grad(torch::nn::Module& module, bool flag);
    objectives::SupervisedTerms supervised(const generator::ChangePrediction& pred, const torch::Tensor& mask) const;

    ExperimentConfig config_;
    generator::DANet generator_{nullptr};
    discriminator::Discriminator discriminator_{nullptr};
    std::unique_ptr<torch::optim::Adam> optim_g_;
    std::unique_ptr<torch::optim::Adam> optim_d_;
    std::mt19937_64 rng_;
    std::vector<size_t> order_;
    size_t cursor_ = 0;
    int64_t iteration_ = 0;
    int64_t schedule_iteration_ = 0;
    double best_f1_ = -1.0;
};

enum class ConfusionDirection { balanced, fp_heavy, fn_heavy };
std::string to_string(ConfusionDirection direction);
ConfusionDirection dominant_direction(const metrics::ConfusionMatrix& cm);

struct SelfTrainingResult {
    std::vector<data::BiTemporalSample> samples;  // originals followed by pseudo-labelled additions
    int64_t added = 0;
    ConfusionDirection direction = ConfusionDirection::balanced;
    double binarize_threshold = 0.5;
};

// One self-training round. The confusion direction shifts the binarization
// threshold of pseudo labels (up when false positives dominate, down when false
// negatives do). A training tile is added with its predicted mask when its
// score exceeds tau: the discriminator's probability for the adversarial
// variant, the prediction's mean confidence |2p - 1| otherwise.
SelfTrainingResult self_training_round(Trainer& trainer, const std::vector<data::BiTemporalSample>& train,
                                       const metrics::ConfusionMatrix& validation, double tau, int64_t round);

struct ExperimentResult {
    metrics::MetricReport report;  // best checkpoint on the evaluation split
    std::string report_json;
    int64_t generator_parameters = 0;
    int64_t discriminator_parameters = 0;
    int64_t iterations = 0;
    int64_t pseudo_labelled = 0;
    std::filesystem::path checkpoint;
};

struct ExperimentIO {
    std::optional<std::filesystem::path> out_dir;  // checkpoint + logs when set
    std::function<void(const std::string&)> log;   // progress lines
};

// Train, self-train, retrain (continuing from the current weights). Evaluates
// on `val` (or `train` when `val` is empty) once per pass or every eval_every
// iterations, keeps the best-F1 state and restores it at the end.
ExperimentResult run_experiment(Trainer& trainer, std::vector<data::BiTemporalSample> train,
                                const std::vector<data::BiTemporalSample>& val, const ExperimentIO& io = {});

}  // namespace dagan::trainer
