#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "meta/tensor.hpp"

namespace meta {

// How a T-row prediction is reduced to the per-sample output.
enum class Readout { LastStep, MeanOverSteps };

struct ModelConfig {
  std::size_t seq_len = 4;
  std::size_t input_dim = 70;
  std::size_t model_dim = 256;
  std::size_t num_heads = 4;
  std::size_t common_dim = 64;
  std::size_t num_migration_classes = 3;
  std::size_t num_rating_classes = 14;
  Readout readout = Readout::LastStep;

  std::size_t head_dim() const { return num_heads == 0 ? 0 : model_dim / num_heads; }
  // Throws ConfigError when d is not divisible by h or any size is zero.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class ParamGroup { Encoder, Decoder, Prediction };
std::string_view group_name(ParamGroup group);

struct NamedParam {
  std::string name;
  ParamGroup group;
  Tensor tensor;
};

struct AttentionParams {
  std::vector<Tensor> query;  // h maps, each d x d_k
  std::vector<Tensor> key;
  std::vector<Tensor> value;
  Tensor output;  // d x d
};

// One transformer block: self-attention and a position-wise map, each with a
// residual connection followed by layer normalisation.
struct BlockParams {
  AttentionParams attention;
  Tensor norm1_gain, norm1_bias;
  Tensor feed_forward;  // d x d
  Tensor norm2_gain, norm2_bias;
};

// Full trainable set. The encoder group holds the input projection and the
// encoder block, the decoder group its block plus the d -> D output map, and
// the prediction group the common embedding and both heads.
struct MetaParams {
  ModelConfig config;
  Tensor input_proj;  // D x d
  BlockParams encoder;
  BlockParams decoder;
  Tensor output_proj;  // d x D
  Tensor common;       // d x common_dim
  Tensor migration;    // common_dim x 3
  Tensor rating;       // common_dim x 14

  // Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]; layer-norm gains 1,
  // biases 0.
  static MetaParams initialize(const ModelConfig& config, std::uint64_t seed);

  std::vector<NamedParam> named() const;
  std::size_t parameter_count() const;
  // Deep copy; the result shares no storage with *this.
  MetaParams clone() const;
  void zero_grad();
};

// Count derived from the config alone.
std::size_t parameter_count(const ModelConfig& config);

// Sinusoidal encoding: even columns sin(pos / 10000^(2i/width)), odd columns
// the matching cos.
Tensor positional_encoding(std::size_t steps, std::size_t width);

// H = X + PE and, when given, H_lag = X_lag + PE. Inputs are T x D or a batch
// laid out as (B*T) x D with consecutive T-row blocks per sample.
std::pair<Tensor, std::optional<Tensor>> encode_inputs(const ModelConfig& config, const Tensor& x,
                                                       const std::optional<Tensor>& x_lag);

// Concat(head_1..head_h) * W_O with head_i = Attention(in W_Qi, in W_Ki, in W_Vi)
// computed independently per sample.
Tensor multi_head_attention(const Tensor& input, const AttentionParams& params, std::size_t seq_len);

// Z = LN(E~ + E~ W_F) with E~ = LN(H + MHA(H)).
Tensor transformer_block(const Tensor& input, const BlockParams& params, std::size_t seq_len);
Tensor encoder_block(const Tensor& projected, const MetaParams& params);
// Same block on Z followed by the d -> D output projection.
Tensor decoder_block(const Tensor& hidden, const MetaParams& params);

struct HeadOutput {
  Tensor common;     // C
  Tensor migration;  // M, rows are distributions over 3 classes
  Tensor rating;     // R, rows are distributions over 14 classes
};
HeadOutput predict_heads(const Tensor& hidden, const MetaParams& params);

struct ForwardOutput {
  Tensor hidden;          // Z
  Tensor reconstruction;  // A, undefined unless computed for training
  Tensor migration;       // M
  Tensor rating;          // R
  std::optional<Tensor> lag_target;  // H_lag
};

// Full pass. The decoder runs only when `with_reconstruction` is set; M and R
// never depend on x_lag.
ForwardOutput forward(const MetaParams& params, const Tensor& x, const std::optional<Tensor>& x_lag,
                      bool with_reconstruction);

// Per-sample class scores reduced from T rows according to the readout.
std::vector<double> readout_rows(const Tensor& probs, std::size_t sample, const ModelConfig& config);
// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> values);

// Text checkpoint: magic line, config, then one named tensor per block.
void save_checkpoint(const MetaParams& params, const std::filesystem::path& path);
MetaParams load_checkpoint(const std::filesystem::path& path);

}  // namespace meta
