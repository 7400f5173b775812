#include "meta/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "meta/errors.hpp"

namespace meta {

std::string_view loss_mode_name(LossMode mode) { return mode == LossMode::Literal ? "literal" : "nll"; }

LossMode parse_loss_mode(std::string_view name) {
  if (name == "literal") return LossMode::Literal;
  if (name == "nll") return LossMode::Nll;
  throw ConfigError("unknown loss mode '" + std::string(name) + "' (expected literal or nll)");
}

void LossWeights::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("loss weights alpha and beta must be >= 0");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (clip_norm < 0.0) throw ConfigError("clip_norm must be >= 0");
  weights.validate();
}

namespace {

Tensor one_hot_rows(std::span<const int> labels, std::size_t seq_len, std::size_t classes) {
  std::vector<double> values(labels.size() * seq_len * classes, 0.0);
  for (std::size_t s = 0; s < labels.size(); ++s) {
    if (labels[s] < 0) continue;
    if (static_cast<std::size_t>(labels[s]) >= classes) {
      throw ScaleError("label " + std::to_string(labels[s]) + " outside " + std::to_string(classes) + " classes");
    }
    for (std::size_t t = 0; t < seq_len; ++t) values[(s * seq_len + t) * classes + static_cast<std::size_t>(labels[s])] = 1.0;
  }
  return Tensor::from({labels.size() * seq_len, classes}, std::move(values));
}

void check_distribution_rows(const Tensor& probs) {
  const std::size_t width = probs.dim(1);
  auto v = probs.values();
  for (std::size_t r = 0; r < probs.dim(0); ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) total += v[r * width + j];
    if (std::abs(total - 1.0) > 1e-6) {
      throw DistributionError("probability row " + std::to_string(r) + " sums to " + std::to_string(total));
    }
  }
}

// Sum over rows of weight_r * loss_r, with the per-row loss selected by mode.
// Rows with a zero weight contribute nothing.
Tensor weighted_class_loss(const Tensor& probs, const Tensor& one_hot, std::span<const double> row_weight,
                           LossMode mode) {
  if (probs.rank() != 2 || probs.shape() != one_hot.shape()) {
    throw DimensionError("classification loss: probabilities " + shape_string(probs.shape()) +
                         " vs targets " + shape_string(one_hot.shape()));
  }
  check_distribution_rows(probs);
  const std::size_t width = probs.dim(1);
  auto y = one_hot.values();
  std::vector<double> coeff(probs.numel());
  for (std::size_t r = 0; r < probs.dim(0); ++r)
    for (std::size_t j = 0; j < width; ++j) {
      const double yv = y[r * width + j];
      coeff[r * width + j] = row_weight[r] * (mode == LossMode::Literal ? 1.0 - yv : yv);
    }
  const Tensor weights = Tensor::from(probs.shape(), std::move(coeff));
  if (mode == LossMode::Literal) return sum(mul(probs, weights));
  return scale(sum(mul(log(add_scalar(probs, kNllFloor)), weights)), -1.0);
}

}  // namespace

Tensor LabelBatch::one_hot_migration() const { return one_hot_rows(migration, seq_len, kMigrationClasses); }

Tensor LabelBatch::one_hot_rating(std::size_t classes) const { return one_hot_rows(rating, seq_len, classes); }

Tensor loss_envision(const Tensor& reconstruction, const Tensor& target) {
  if (reconstruction.shape() != target.shape()) {
    throw DimensionError("loss_envision: " + shape_string(reconstruction.shape()) + " vs " +
                         shape_string(target.shape()));
  }
  const Tensor diff = subtract(reconstruction, target);
  return mean_all(mul(diff, diff));
}

Tensor loss_envision(const Tensor& reconstruction, const Tensor& target, std::span<const char> has_lag,
                     std::size_t seq_len) {
  if (reconstruction.shape() != target.shape() || reconstruction.rank() != 2 ||
      reconstruction.dim(0) != has_lag.size() * seq_len) {
    throw DimensionError("loss_envision: " + shape_string(reconstruction.shape()) + " vs " +
                         shape_string(target.shape()) + " for " + std::to_string(has_lag.size()) + " samples");
  }
  const std::size_t lagged = static_cast<std::size_t>(std::count(has_lag.begin(), has_lag.end(), 1));
  if (lagged == 0) return Tensor::scalar(0.0);
  const std::size_t width = reconstruction.dim(1);
  // Per-sample (1/T)(1/D) sum, averaged over lagged samples.
  const double w = 1.0 / static_cast<double>(lagged * seq_len * width);
  std::vector<double> mask(reconstruction.numel(), 0.0);
  for (std::size_t s = 0; s < has_lag.size(); ++s) {
    if (!has_lag[s]) continue;
    std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(s * seq_len * width), seq_len * width, w);
  }
  const Tensor diff = subtract(reconstruction, target);
  return sum(mul(mul(diff, diff), Tensor::from(reconstruction.shape(), std::move(mask))));
}

Tensor loss_migration(const Tensor& probs, const Tensor& one_hot, LossMode mode) {
  std::vector<double> w(probs.rank() == 2 ? probs.dim(0) : 0, 0.0);
  std::fill(w.begin(), w.end(), w.empty() ? 0.0 : 1.0 / static_cast<double>(w.size()));
  return weighted_class_loss(probs, one_hot, w, mode);
}

Tensor loss_rating(const Tensor& probs, const Tensor& one_hot, LossMode mode) {
  return loss_migration(probs, one_hot, mode);
}

Tensor loss_classification(const Tensor& probs, std::span<const int> labels, std::size_t seq_len,
                           LossMode mode) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size() * seq_len) {
    throw DimensionError("loss_classification: probabilities " + shape_string(probs.shape()) + " for " +
                         std::to_string(labels.size()) + " samples of length " + std::to_string(seq_len));
  }
  const std::size_t labeled = static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(), [](int l) { return l >= 0; }));
  if (labeled == 0) return Tensor::scalar(0.0);
  std::vector<double> row_weight(probs.dim(0), 0.0);
  const double w = 1.0 / static_cast<double>(labeled * seq_len);
  for (std::size_t s = 0; s < labels.size(); ++s)
    if (labels[s] >= 0) std::fill_n(row_weight.begin() + static_cast<std::ptrdiff_t>(s * seq_len), seq_len, w);
  return weighted_class_loss(probs, one_hot_rows(labels, seq_len, probs.dim(1)), row_weight, mode);
}

ObjectiveTerms objective(const ForwardOutput& out, const LabelBatch& labels, const LossWeights& weights,
                         LossMode mode) {
  weights.validate();
  ObjectiveTerms terms;
  terms.lagged = static_cast<std::size_t>(std::count(labels.has_lag.begin(), labels.has_lag.end(), 1));
  terms.labeled = static_cast<std::size_t>(
      std::count_if(labels.migration.begin(), labels.migration.end(), [](int l) { return l >= 0; }));

  Tensor total = Tensor::scalar(0.0);
  if (terms.lagged > 0) {
    if (!out.reconstruction.defined() || !out.lag_target) {
      throw std::logic_error("objective: lagged samples present but no reconstruction was computed");
    }
    const Tensor la = loss_envision(out.reconstruction, *out.lag_target, labels.has_lag, labels.seq_len);
    terms.envision = la.item();
    total = la;
  }
  if (terms.labeled > 0) {
    const Tensor lm = loss_classification(out.migration, labels.migration, labels.seq_len, mode);
    const Tensor lr = loss_classification(out.rating, labels.rating, labels.seq_len, mode);
    terms.migration = lm.item();
    terms.rating = lr.item();
    if (weights.alpha != 0.0) total = add(total, scale(lm, weights.alpha));
    if (weights.beta != 0.0) total = add(total, scale(lr, weights.beta));
  }
  terms.total = total;
  return terms;
}

void adam_step(std::span<const NamedParam> params, AdamState& state, const AdamConfig& config) {
  if (state.first_moment.size() != params.size()) {
    state.first_moment.assign(params.size(), {});
    state.second_moment.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.first_moment[i].assign(params[i].tensor.numel(), 0.0);
      state.second_moment[i].assign(params[i].tensor.numel(), 0.0);
    }
  }
  for (const auto& p : params) {
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NonFiniteGradientError(std::string(group_name(p.group)), p.name);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor tensor = params[i].tensor;
    auto values = tensor.mutable_values();
    auto grad = tensor.grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j];
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      values[j] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

double clip_gradients(std::span<const NamedParam> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (const auto& p : params) {
      // Gradient buffers live in the node; scale them in place.
      auto& grad = p.tensor.node()->grad;
      for (double& g : grad) g *= factor;
    }
  }
  return norm;
}

SampleBatch make_batch(std::span<const CompanySample> samples, std::span<const std::size_t> indices,
                       const ModelConfig& config) {
  const std::size_t T = config.seq_len, D = config.input_dim;
  SampleBatch batch;
  batch.labels.seq_len = T;
  std::vector<double> x, lag;
  x.reserve(indices.size() * T * D);
  bool any_lag = false;
  for (std::size_t idx : indices) {
    const auto& s = samples[idx];
    if (s.seq_len != T || s.input_dim != D) {
      throw DimensionError("sample " + s.company_id + "@" + s.as_of.iso() + " is " + std::to_string(s.seq_len) +
                           "x" + std::to_string(s.input_dim) + ", model expects " + std::to_string(T) + "x" +
                           std::to_string(D));
    }
    any_lag = any_lag || s.x_lag.has_value();
  }
  if (any_lag) lag.reserve(indices.size() * T * D);
  for (std::size_t idx : indices) {
    const auto& s = samples[idx];
    x.insert(x.end(), s.x.begin(), s.x.end());
    if (any_lag) {
      if (s.x_lag) lag.insert(lag.end(), s.x_lag->begin(), s.x_lag->end());
      else lag.insert(lag.end(), T * D, 0.0);
    }
    batch.labels.has_lag.push_back(s.x_lag ? 1 : 0);
    batch.labels.migration.push_back(s.migration_label ? static_cast<int>(*s.migration_label) : -1);
    batch.labels.rating.push_back(s.rating_label ? *s.rating_label : -1);
  }
  batch.x = Tensor::from({indices.size() * T, D}, std::move(x));
  if (any_lag) batch.x_lag = Tensor::from({indices.size() * T, D}, std::move(lag));
  return batch;
}

TrainResult train(std::span<const CompanySample> samples, const ModelConfig& model_config,
                  const TrainConfig& train_config, const MetaParams* warm_start, const EpochCallback& on_epoch) {
  model_config.validate();
  train_config.validate();
  if (samples.empty()) throw ConfigError("train: empty dataset");

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].x_lag || samples[i].labeled()) order.push_back(i);
  if (order.empty()) throw ConfigError("train: no sample carries a lag window or a label");

  if (warm_start && !(warm_start->config == model_config)) {
    throw ConfigError("train: warm-start parameters were built for a different model config");
  }
  TrainResult result{warm_start ? warm_start->clone() : MetaParams::initialize(model_config, train_config.seed),
                     {}, 0, order.size()};
  MetaParams& params = result.params;
  const std::vector<NamedParam> named = params.named();
  AdamState state;
  const AdamConfig adam = train_config.adam();
  // Separate stream from the initialiser so shuffling does not shift weights.
  std::mt19937_64 rng(train_config.seed ^ 0x9e3779b97f4a7c15ULL);

  for (std::size_t epoch = 1; epoch <= train_config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum_obj = 0.0, sum_la = 0.0, sum_lm = 0.0, sum_lr = 0.0;
    std::size_t n_obj = 0, n_la = 0, n_lab = 0;
    for (std::size_t start = 0; start < order.size(); start += train_config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + train_config.batch_size);
      const std::span<const std::size_t> chunk(order.data() + start, stop - start);
      SampleBatch batch = make_batch(samples, chunk, model_config);
      const bool reconstruct = batch.x_lag.has_value();
      const ForwardOutput out = forward(params, batch.x, batch.x_lag, reconstruct);
      const ObjectiveTerms terms = objective(out, batch.labels, train_config.weights, train_config.loss_mode);

      backward(terms.total);
      if (train_config.clip_norm > 0.0) clip_gradients(named, train_config.clip_norm);
      adam_step(named, state, adam);
      params.zero_grad();
      ++result.optimizer_steps;

      sum_obj += terms.total.item() * static_cast<double>(chunk.size());
      n_obj += chunk.size();
      sum_la += terms.envision * static_cast<double>(terms.lagged);
      n_la += terms.lagged;
      sum_lm += terms.migration * static_cast<double>(terms.labeled);
      sum_lr += terms.rating * static_cast<double>(terms.labeled);
      n_lab += terms.labeled;
    }
    EpochLoss loss;
    loss.epoch = epoch;
    loss.objective = sum_obj / static_cast<double>(n_obj);
    loss.envision = n_la ? sum_la / static_cast<double>(n_la) : 0.0;
    loss.migration = n_lab ? sum_lm / static_cast<double>(n_lab) : 0.0;
    loss.rating = n_lab ? sum_lr / static_cast<double>(n_lab) : 0.0;
    result.history.push_back(loss);
    if (on_epoch) on_epoch(loss);
  }
  return result;
}

void write_loss_history(const std::filesystem::path& path, std::span<const EpochLoss> history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "epoch,L_A,L_M,L_R,objective\n";
  for (const auto& h : history) {
    out << h.epoch << ',' << format_number(h.envision) << ',' << format_number(h.migration) << ','
        << format_number(h.rating) << ',' << format_number(h.objective) << '\n';
  }
}

std::vector<SamplePrediction> predict(const MetaParams& params, std::span<const CompanySample> samples,
                                      std::size_t batch_size) {
  std::vector<SamplePrediction> out;
  out.reserve(samples.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t stop = std::min(samples.size(), start + batch_size);
    idx.resize(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    const SampleBatch batch = make_batch(samples, idx, params.config);
    const ForwardOutput fwd = forward(params, batch.x, std::nullopt, false);
    for (std::size_t s = 0; s < idx.size(); ++s) {
      SamplePrediction p;
      p.migration_probs = readout_rows(fwd.migration, s, params.config);
      p.rating_probs = readout_rows(fwd.rating, s, params.config);
      p.migration = static_cast<Migration>(argmax(p.migration_probs));
      p.rating = static_cast<int>(argmax(p.rating_probs));
      out.push_back(std::move(p));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// MLP baseline

MlpBaseline MlpBaseline::initialize(std::size_t inputs, std::size_t hidden, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uniform = [&rng](std::size_t fan_in, std::size_t count) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(count);
    for (double& x : v) x = dist(rng);
    return v;
  };
  MlpBaseline m;
  m.hidden = hidden;
  m.w1 = Tensor::from({inputs, hidden}, uniform(inputs, inputs * hidden), true);
  m.b1 = Tensor::zeros({hidden}, true);
  m.w2 = Tensor::from({hidden, kMigrationClasses}, uniform(hidden, hidden * kMigrationClasses), true);
  m.b2 = Tensor::zeros({kMigrationClasses}, true);
  return m;
}

Tensor MlpBaseline::forward(const Tensor& flat_x) const {
  return softmax_rows(add(matmul(relu(add(matmul(flat_x, w1), b1)), w2), b2));
}

std::vector<NamedParam> MlpBaseline::named() const {
  return {{"mlp.w1", ParamGroup::Prediction, w1},
          {"mlp.b1", ParamGroup::Prediction, b1},
          {"mlp.w2", ParamGroup::Prediction, w2},
          {"mlp.b2", ParamGroup::Prediction, b2}};
}

namespace {

Tensor flat_inputs(std::span<const CompanySample> samples, std::span<const std::size_t> idx) {
  const std::size_t width = samples[idx[0]].x.size();
  std::vector<double> v;
  v.reserve(idx.size() * width);
  for (std::size_t i : idx) v.insert(v.end(), samples[i].x.begin(), samples[i].x.end());
  return Tensor::from({idx.size(), width}, std::move(v));
}

}  // namespace

MlpBaseline train_mlp_baseline(std::span<const CompanySample> samples, std::size_t hidden,
                               const TrainConfig& config) {
  config.validate();
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].labeled()) order.push_back(i);
  if (order.empty()) throw ConfigError("baseline: no labeled samples");
  MlpBaseline model = MlpBaseline::initialize(samples[order[0]].x.size(), hidden, config.seed);
  const auto named = model.named();
  AdamState state;
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> chunk(order.data() + start, stop - start);
      std::vector<int> labels;
      for (std::size_t i : chunk) labels.push_back(static_cast<int>(*samples[i].migration_label));
      const Tensor loss = loss_classification(model.forward(flat_inputs(samples, chunk)), labels, 1, config.loss_mode);
      backward(loss);
      adam_step(named, state, config.adam());
      for (auto p : named) p.tensor.zero_grad();
    }
  }
  return model;
}

std::vector<Migration> predict_mlp_baseline(const MlpBaseline& model, std::span<const CompanySample> samples) {
  std::vector<Migration> out;
  if (samples.empty()) return out;
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  const Tensor probs = model.forward(flat_inputs(samples, idx));
  for (std::size_t s = 0; s < samples.size(); ++s) {
    auto row = probs.values().subspan(s * kMigrationClasses, kMigrationClasses);
    out.push_back(static_cast<Migration>(argmax(row)));
  }
  return out;
}

}  // namespace meta
