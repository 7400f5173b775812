#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "meta/errors.hpp"
#include "meta/model.hpp"
#include "meta/training.hpp"
#include "support.hpp"

using namespace meta;
using meta::testing::max_gradient_error;
using meta::testing::random_tensor;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t, std::size_t row0 = 0, std::size_t rows = 0) {
  if (rows == 0) rows = t.dim(0);
  Mat m(rows, std::vector<double>(t.dim(1)));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < t.dim(1); ++c) m[r][c] = t.at(row0 + r, c);
  return m;
}

Mat mm(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

Mat plus(const Mat& a, const Mat& b) {
  Mat c = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) c[i][j] += b[i][j];
  return c;
}

Mat layer_norm_ref(const Mat& x, const Tensor& gain, const Tensor& bias) {
  Mat y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double mean = 0.0;
    for (double v : x[i]) mean += v;
    mean /= static_cast<double>(x[i].size());
    double var = 0.0;
    for (double v : x[i]) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x[i].size());
    for (std::size_t j = 0; j < x[i].size(); ++j)
      y[i][j] = gain.values()[j] * (x[i][j] - mean) / std::sqrt(var + 1e-5) + bias.values()[j];
  }
  return y;
}

// softmax(Q K^T / sqrt(dk)) V written out entry by entry.
Mat attention_ref(const Mat& q, const Mat& k, const Mat& v) {
  const std::size_t T = q.size(), dk = q[0].size();
  Mat out(T, std::vector<double>(v[0].size(), 0.0));
  for (std::size_t i = 0; i < T; ++i) {
    std::vector<double> s(T);
    double mx = -1e300;
    for (std::size_t j = 0; j < T; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < dk; ++c) dot += q[i][c] * k[j][c];
      s[j] = dot / std::sqrt(static_cast<double>(dk));
      mx = std::max(mx, s[j]);
    }
    double z = 0.0;
    for (double& e : s) z += (e = std::exp(e - mx));
    for (std::size_t j = 0; j < T; ++j)
      for (std::size_t c = 0; c < v[0].size(); ++c) out[i][c] += s[j] / z * v[j][c];
  }
  return out;
}

Mat mha_ref(const Mat& h, const AttentionParams& p) {
  Mat concat(h.size());
  for (std::size_t i = 0; i < p.query.size(); ++i) {
    const Mat head = attention_ref(mm(h, to_mat(p.query[i])), mm(h, to_mat(p.key[i])), mm(h, to_mat(p.value[i])));
    for (std::size_t r = 0; r < h.size(); ++r) concat[r].insert(concat[r].end(), head[r].begin(), head[r].end());
  }
  return mm(concat, to_mat(p.output));
}

Mat block_ref(const Mat& h, const BlockParams& b) {
  const Mat e = layer_norm_ref(plus(h, mha_ref(h, b.attention)), b.norm1_gain, b.norm1_bias);
  return layer_norm_ref(plus(e, mm(e, to_mat(b.feed_forward))), b.norm2_gain, b.norm2_bias);
}

void expect_close(const Mat& expect, const Tensor& got, std::size_t row0, double tol) {
  for (std::size_t r = 0; r < expect.size(); ++r)
    for (std::size_t c = 0; c < expect[r].size(); ++c) EXPECT_NEAR(got.at(row0 + r, c), expect[r][c], tol);
}

ModelConfig tiny() {
  ModelConfig c;
  c.seq_len = 2;
  c.input_dim = 3;
  c.model_dim = 8;
  c.num_heads = 2;
  c.common_dim = 4;
  return c;
}

ModelConfig small() {
  ModelConfig c;
  c.seq_len = 4;
  c.input_dim = 6;
  c.model_dim = 8;
  c.num_heads = 2;
  c.common_dim = 5;
  return c;
}

}  // namespace

TEST(ModelConfig, ValidatesHeadDivisibility) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  c.num_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.model_dim = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelConfig, DefaultDimensions) {
  const ModelConfig c;
  EXPECT_EQ(c.model_dim, 256u);
  EXPECT_EQ(c.num_heads, 4u);
  EXPECT_EQ(c.head_dim(), 64u);
  EXPECT_EQ(c.input_dim, 70u);
  EXPECT_EQ(c.num_migration_classes, 3u);
  EXPECT_EQ(c.num_rating_classes, 14u);
}

TEST(PositionalEncoding, KnownValues) {
  const auto pe = positional_encoding(3, 4);
  EXPECT_DOUBLE_EQ(pe.at(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(pe.at(0, 1), 1.0);
  EXPECT_NEAR(pe.at(1, 0), std::sin(1.0), 1e-15);
  EXPECT_NEAR(pe.at(1, 1), std::cos(1.0), 1e-15);
  EXPECT_NEAR(pe.at(2, 2), std::sin(2.0 / 100.0), 1e-15);  // 10000^(2/4) = 100
  EXPECT_NEAR(pe.at(2, 3), std::cos(2.0 / 100.0), 1e-15);
}

TEST(Parameters, CountMatchesTensorsAndIgnoresHeadCount) {
  for (std::size_t heads : {1u, 2u, 4u, 8u}) {
    ModelConfig c;
    c.num_heads = heads;
    EXPECT_EQ(parameter_count(c), parameter_count(ModelConfig{}));
    if (heads <= 2) EXPECT_EQ(MetaParams::initialize(c, 1).parameter_count(), parameter_count(c));
  }
}

TEST(Parameters, InitialisationIsSeededAndBounded) {
  const auto a = MetaParams::initialize(small(), 5);
  const auto b = MetaParams::initialize(small(), 5);
  const auto c = MetaParams::initialize(small(), 6);
  const auto na = a.named(), nb = b.named(), nc = c.named();
  bool any_diff = false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    EXPECT_EQ(na[i].name, nb[i].name);
    const auto va = na[i].tensor.values();
    EXPECT_TRUE(std::equal(va.begin(), va.end(), nb[i].tensor.values().begin()));
    if (!std::equal(va.begin(), va.end(), nc[i].tensor.values().begin())) any_diff = true;
    if (na[i].tensor.rank() == 2) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(na[i].tensor.dim(0)));
      for (double v : va) EXPECT_LE(std::abs(v), bound);
    }
  }
  EXPECT_TRUE(any_diff);
}

TEST(Parameters, GroupsPartitionTheParameterSet) {
  const auto p = MetaParams::initialize(small(), 1);
  std::size_t enc = 0, dec = 0, pred = 0;
  for (const auto& n : p.named()) {
    (n.group == ParamGroup::Encoder ? enc : n.group == ParamGroup::Decoder ? dec : pred) += n.tensor.numel();
  }
  EXPECT_EQ(enc + dec + pred, p.parameter_count());
  EXPECT_EQ(pred, 8u * 5u + 5u * 3u + 5u * 14u);
}

TEST(Attention, MatchesStraightLineReferencePerSample) {
  std::mt19937_64 rng(21);
  const auto p = MetaParams::initialize(small(), 3);
  const auto h = random_tensor({3 * 4, 8}, rng, false);
  const auto out = multi_head_attention(h, p.encoder.attention, 4);
  for (std::size_t s = 0; s < 3; ++s) expect_close(mha_ref(to_mat(h, s * 4, 4), p.encoder.attention), out, s * 4, 1e-12);
}

TEST(Attention, SingleStepSequenceReturnsValueProjection) {
  // With T = 1 the attention weights are exactly 1.
  std::mt19937_64 rng(22);
  auto c = small();
  c.seq_len = 1;
  const auto p = MetaParams::initialize(c, 3);
  const auto h = random_tensor({1, 8}, rng, false);
  const auto out = multi_head_attention(h, p.encoder.attention, 1);
  Mat concat(1);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto v = mm(to_mat(h), to_mat(p.encoder.attention.value[i]));
    concat[0].insert(concat[0].end(), v[0].begin(), v[0].end());
  }
  expect_close(mm(concat, to_mat(p.encoder.attention.output)), out, 0, 1e-12);
}

TEST(Encoder, MatchesStraightLineReference) {
  std::mt19937_64 rng(23);
  auto p = MetaParams::initialize(small(), 4);
  // Non-trivial layer-norm parameters.
  for (auto* t : {&p.encoder.norm1_gain, &p.encoder.norm2_gain}) t->mutable_values()[1] = 1.7;
  for (auto* t : {&p.encoder.norm1_bias, &p.encoder.norm2_bias}) t->mutable_values()[2] = -0.3;
  const auto x = random_tensor({2 * 4, 6}, rng, false);
  const auto [h, none] = encode_inputs(p.config, x, std::nullopt);
  const auto z = encoder_block(matmul(h, p.input_proj), p);
  const auto pe = to_mat(positional_encoding(4, 6));
  for (std::size_t s = 0; s < 2; ++s) {
    const Mat hs = plus(to_mat(x, s * 4, 4), pe);
    expect_close(block_ref(mm(hs, to_mat(p.input_proj)), p.encoder), z, s * 4, 1e-12);
  }
}

TEST(Decoder, MatchesStraightLineReference) {
  std::mt19937_64 rng(24);
  const auto p = MetaParams::initialize(small(), 5);
  const auto z = random_tensor({4, 8}, rng, false);
  const auto a = decoder_block(z, p);
  ASSERT_EQ(a.shape(), (Shape{4, 6}));
  expect_close(mm(block_ref(to_mat(z), p.decoder), to_mat(p.output_proj)), a, 0, 1e-12);
}

TEST(Heads, ProduceDistributionsFromReluEmbedding) {
  std::mt19937_64 rng(25);
  const auto p = MetaParams::initialize(small(), 6);
  const auto z = random_tensor({4, 8}, rng, false);
  const auto heads = predict_heads(z, p);
  for (double v : heads.common.values()) EXPECT_GE(v, 0.0);
  for (std::size_t r = 0; r < 4; ++r) {
    double m = 0, q = 0;
    for (std::size_t c = 0; c < 3; ++c) m += heads.migration.at(r, c);
    for (std::size_t c = 0; c < 14; ++c) q += heads.rating.at(r, c);
    EXPECT_NEAR(m, 1.0, 1e-12);
    EXPECT_NEAR(q, 1.0, 1e-12);
  }
}

TEST(Forward, BatchRowsEqualPerSampleRuns) {
  std::mt19937_64 rng(26);
  const auto p = MetaParams::initialize(small(), 7);
  const auto x = random_tensor({3 * 4, 6}, rng, false);
  const auto batched = forward(p, x, std::nullopt, false);
  for (std::size_t s = 0; s < 3; ++s) {
    std::vector<double> xs(x.values().begin() + s * 24, x.values().begin() + (s + 1) * 24);
    const auto single = forward(p, Tensor::from({4, 6}, xs), std::nullopt, false);
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(batched.migration.at(s * 4 + r, c), single.migration.at(r, c), 1e-12);
  }
}

TEST(Forward, PredictionsIgnoreLaggedInput) {
  std::mt19937_64 rng(27);
  const auto p = MetaParams::initialize(small(), 8);
  const auto x = random_tensor({4, 6}, rng, false);
  const auto lag1 = random_tensor({4, 6}, rng, false);
  const auto lag2 = random_tensor({4, 6}, rng, false);
  const auto a = forward(p, x, lag1, true);
  const auto b = forward(p, x, lag2, true);
  EXPECT_TRUE(std::equal(a.migration.values().begin(), a.migration.values().end(), b.migration.values().begin()));
  EXPECT_TRUE(std::equal(a.rating.values().begin(), a.rating.values().end(), b.rating.values().begin()));
  EXPECT_EQ(a.reconstruction.shape(), (Shape{4, 6}));
}

TEST(Forward, RejectsWrongInputWidth) {
  const auto p = MetaParams::initialize(small(), 9);
  EXPECT_THROW(forward(p, Tensor::zeros({4, 5}), std::nullopt, false), DimensionError);
  EXPECT_THROW(forward(p, Tensor::zeros({5, 6}), std::nullopt, false), DimensionError);
}

TEST(Readout, LastStepAndMean) {
  auto c = tiny();
  const auto probs = Tensor::from({4, 3}, {0.2, 0.3, 0.5, 0.6, 0.3, 0.1, 0.1, 0.1, 0.8, 0.3, 0.3, 0.4});
  EXPECT_EQ(readout_rows(probs, 0, c), (std::vector<double>{0.6, 0.3, 0.1}));
  c.readout = Readout::MeanOverSteps;
  const auto m = readout_rows(probs, 1, c);
  EXPECT_NEAR(m[0], 0.2, 1e-15);
  EXPECT_NEAR(m[2], 0.6, 1e-15);
  const double tie[] = {0.4, 0.4, 0.2};
  EXPECT_EQ(argmax(tie), 0u);
}

TEST(Checkpoint, RoundTripsExactly) {
  const auto p = MetaParams::initialize(small(), 10);
  const auto path = std::filesystem::temp_directory_path() / "meta_model_roundtrip.ckpt";
  save_checkpoint(p, path);
  const auto q = load_checkpoint(path);
  EXPECT_EQ(q.config, p.config);
  const auto np = p.named(), nq = q.named();
  ASSERT_EQ(np.size(), nq.size());
  for (std::size_t i = 0; i < np.size(); ++i) {
    EXPECT_EQ(np[i].name, nq[i].name);
    EXPECT_EQ(np[i].tensor.shape(), nq[i].tensor.shape());
    const auto a = np[i].tensor.values();
    EXPECT_TRUE(std::equal(a.begin(), a.end(), nq[i].tensor.values().begin()));
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsGarbage) {
  const auto path = std::filesystem::temp_directory_path() / "meta_model_garbage.ckpt";
  { std::ofstream(path) << "not a checkpoint\n"; }
  EXPECT_ANY_THROW(load_checkpoint(path));
  std::filesystem::remove(path);
  EXPECT_ANY_THROW(load_checkpoint(path));
}

TEST(Clone, SharesNoStorage) {
  auto p = MetaParams::initialize(small(), 11);
  const auto q = p.clone();
  p.input_proj.mutable_values()[0] += 1.0;
  EXPECT_NE(p.input_proj.values()[0], q.input_proj.values()[0]);
}

// End-to-end: every parameter of the full objective on the tiny config.
class ObjectiveGradient : public ::testing::TestWithParam<LossMode> {};

TEST_P(ObjectiveGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(31);
  auto p = MetaParams::initialize(tiny(), 12);
  const auto x = random_tensor({2 * 2, 3}, rng, false);
  const auto lag = random_tensor({2 * 2, 3}, rng, false);
  LabelBatch labels;
  labels.seq_len = 2;
  labels.migration = {2, 0};
  labels.rating = {9, 3};
  labels.has_lag = {1, 1};
  std::vector<Tensor> leaves;
  for (const auto& n : p.named()) leaves.push_back(n.tensor);
  const double err = max_gradient_error(leaves, [&] {
    return objective(forward(p, x, lag, true), labels, {0.7, 1.3}, GetParam()).total;
  });
  EXPECT_LT(err, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(LossModes, ObjectiveGradient, ::testing::Values(LossMode::Literal, LossMode::Nll));
