#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "meta/data.hpp"
#include "meta/model.hpp"

namespace meta {

// Literal: (1/T) sum_t sum_p (1 - Y_tp) P_tp, i.e. one minus the true-class
// probability. Nll: -(1/T) sum_t ln(P_t,true + 1e-12).
enum class LossMode { Literal, Nll };

std::string_view loss_mode_name(LossMode mode);
LossMode parse_loss_mode(std::string_view name);

struct LossWeights {
  double alpha = 1.0;  // migration term
  double beta = 1.0;   // rating term
  void validate() const;
};

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 1024;
  std::size_t epochs = 300;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 7;
  LossMode loss_mode = LossMode::Literal;
  LossWeights weights;
  double clip_norm = 0.0;  // global gradient-norm clip, 0 disables

  AdamConfig adam() const { return {learning_rate, beta1, beta2, epsilon}; }
  void validate() const;
};

// Labels of a batch laid out as B consecutive T-row blocks. Class index -1
// marks a sample without a label; each label is replicated over its T rows.
struct LabelBatch {
  std::size_t seq_len = 1;
  std::vector<int> migration;
  std::vector<int> rating;
  std::vector<char> has_lag;

  std::size_t size() const { return migration.size(); }
  // (B*T) x classes one-hot matrix; rows of unlabeled samples are zero.
  Tensor one_hot_migration() const;
  Tensor one_hot_rating(std::size_t classes) const;
};

inline constexpr double kNllFloor = 1e-12;

// Reconstruction error of one T x D sample.
Tensor loss_envision(const Tensor& reconstruction, const Tensor& target);
// Batch mean over samples with has_lag set; 0 when none has one.
Tensor loss_envision(const Tensor& reconstruction, const Tensor& target, std::span<const char> has_lag,
                     std::size_t seq_len);

// Single sample against a one-hot T x C target. Throws DistributionError if a
// row of probs does not sum to 1 within 1e-6.
Tensor loss_migration(const Tensor& probs, const Tensor& one_hot, LossMode mode);
Tensor loss_rating(const Tensor& probs, const Tensor& one_hot, LossMode mode);
// Batch mean over labeled samples (label >= 0); 0 when none is labeled.
Tensor loss_classification(const Tensor& probs, std::span<const int> labels, std::size_t seq_len,
                           LossMode mode);

struct ObjectiveTerms {
  Tensor total;
  double envision = 0.0;
  double migration = 0.0;
  double rating = 0.0;
  std::size_t lagged = 0;
  std::size_t labeled = 0;
};

// L_A + alpha L_M + beta L_R. A term whose weight is zero is left out of the
// graph entirely, so its head receives no gradient.
ObjectiveTerms objective(const ForwardOutput& out, const LabelBatch& labels, const LossWeights& weights,
                         LossMode mode);

struct AdamState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::size_t step = 0;
};

// One bias-corrected Adam update over `params`. Missing gradients count as
// zero. A non-finite gradient aborts the step before any parameter changes and
// throws NonFiniteGradientError naming the group.
void adam_step(std::span<const NamedParam> params, AdamState& state, const AdamConfig& config);

// Scales all gradients so their joint L2 norm is at most max_norm. Returns
// the norm before scaling.
double clip_gradients(std::span<const NamedParam> params, double max_norm);

struct EpochLoss {
  std::size_t epoch = 0;
  double envision = 0.0;
  double migration = 0.0;
  double rating = 0.0;
  double objective = 0.0;
};

struct TrainResult {
  MetaParams params;
  std::vector<EpochLoss> history;
  std::size_t optimizer_steps = 0;
  std::size_t samples_used = 0;
};

// Batches one set of samples into tensors.
struct SampleBatch {
  Tensor x;
  std::optional<Tensor> x_lag;  // absent when no sample in the batch has one
  LabelBatch labels;
};
SampleBatch make_batch(std::span<const CompanySample> samples, std::span<const std::size_t> indices,
                       const ModelConfig& config);

using EpochCallback = std::function<void(const EpochLoss&)>;

// Trains from a fresh seeded initialisation, or from a copy of `warm_start`.
// Samples with neither a lag window nor a label carry no signal and are
// skipped; the last partial batch is kept. Throws ConfigError when nothing is
// left to train on.
TrainResult train(std::span<const CompanySample> samples, const ModelConfig& model_config,
                  const TrainConfig& train_config, const MetaParams* warm_start = nullptr,
                  const EpochCallback& on_epoch = {});

void write_loss_history(const std::filesystem::path& path, std::span<const EpochLoss> history);

struct SamplePrediction {
  Migration migration = Migration::Unchanged;
  int rating = 0;
  std::vector<double> migration_probs;
  std::vector<double> rating_probs;
};

std::vector<SamplePrediction> predict(const MetaParams& params, std::span<const CompanySample> samples,
                                      std::size_t batch_size = 1024);

// Flattened-window MLP (T*D -> hidden -> 3) trained on the migration label
// only. Reference point for the multi-task comparisons.
struct MlpBaseline {
  std::size_t hidden = 64;
  Tensor w1, b1, w2, b2;

  static MlpBaseline initialize(std::size_t inputs, std::size_t hidden, std::uint64_t seed);
  Tensor forward(const Tensor& flat_x) const;
  std::vector<NamedParam> named() const;
};

MlpBaseline train_mlp_baseline(std::span<const CompanySample> samples, std::size_t hidden,
                               const TrainConfig& config);
std::vector<Migration> predict_mlp_baseline(const MlpBaseline& model, std::span<const CompanySample> samples);

}  // namespace meta
