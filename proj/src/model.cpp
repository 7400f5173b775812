#include "meta/model.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "meta/errors.hpp"

namespace meta {

void ModelConfig::validate() const {
  if (seq_len < 1 || input_dim < 1) throw ConfigError("seq_len and input_dim must be >= 1");
  if (model_dim < 2) throw ConfigError("model_dim must be >= 2");
  if (num_heads < 1 || model_dim % num_heads != 0) {
    throw ConfigError("model_dim " + std::to_string(model_dim) + " is not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  if (common_dim < 1 || num_migration_classes < 1 || num_rating_classes < 1) {
    throw ConfigError("head widths must be >= 1");
  }
}

std::string_view group_name(ParamGroup group) {
  switch (group) {
    case ParamGroup::Encoder:
      return "encoder";
    case ParamGroup::Decoder:
      return "decoder";
    case ParamGroup::Prediction:
      return "prediction";
  }
  return "unknown";
}

namespace {

Tensor uniform_weight(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(fan_in * fan_out);
  for (double& v : values) v = dist(rng);
  return Tensor::from({fan_in, fan_out}, std::move(values), true);
}

BlockParams init_block(const ModelConfig& c, std::mt19937_64& rng) {
  BlockParams block;
  const std::size_t d = c.model_dim, dk = c.head_dim();
  for (std::size_t i = 0; i < c.num_heads; ++i) {
    block.attention.query.push_back(uniform_weight(d, dk, rng));
    block.attention.key.push_back(uniform_weight(d, dk, rng));
    block.attention.value.push_back(uniform_weight(d, dk, rng));
  }
  block.attention.output = uniform_weight(d, d, rng);
  block.norm1_gain = Tensor::full({d}, 1.0, true);
  block.norm1_bias = Tensor::zeros({d}, true);
  block.feed_forward = uniform_weight(d, d, rng);
  block.norm2_gain = Tensor::full({d}, 1.0, true);
  block.norm2_bias = Tensor::zeros({d}, true);
  return block;
}

void append_block(std::vector<NamedParam>& out, const std::string& prefix, ParamGroup group,
                  const BlockParams& b) {
  for (std::size_t i = 0; i < b.attention.query.size(); ++i) {
    out.push_back({prefix + ".attn.q." + std::to_string(i), group, b.attention.query[i]});
    out.push_back({prefix + ".attn.k." + std::to_string(i), group, b.attention.key[i]});
    out.push_back({prefix + ".attn.v." + std::to_string(i), group, b.attention.value[i]});
  }
  out.push_back({prefix + ".attn.o", group, b.attention.output});
  out.push_back({prefix + ".ln1.gain", group, b.norm1_gain});
  out.push_back({prefix + ".ln1.bias", group, b.norm1_bias});
  out.push_back({prefix + ".ff", group, b.feed_forward});
  out.push_back({prefix + ".ln2.gain", group, b.norm2_gain});
  out.push_back({prefix + ".ln2.bias", group, b.norm2_bias});
}

BlockParams clone_block(const BlockParams& b) {
  BlockParams out;
  for (std::size_t i = 0; i < b.attention.query.size(); ++i) {
    out.attention.query.push_back(b.attention.query[i].clone(true));
    out.attention.key.push_back(b.attention.key[i].clone(true));
    out.attention.value.push_back(b.attention.value[i].clone(true));
  }
  out.attention.output = b.attention.output.clone(true);
  out.norm1_gain = b.norm1_gain.clone(true);
  out.norm1_bias = b.norm1_bias.clone(true);
  out.feed_forward = b.feed_forward.clone(true);
  out.norm2_gain = b.norm2_gain.clone(true);
  out.norm2_bias = b.norm2_bias.clone(true);
  return out;
}

std::size_t batch_of(const Tensor& x, std::size_t seq_len, const char* what) {
  if (x.rank() != 2 || x.dim(0) % seq_len != 0) {
    throw DimensionError(std::string(what) + ": expected (B*" + std::to_string(seq_len) +
                         ") x width input, got " + shape_string(x.shape()));
  }
  return x.dim(0) / seq_len;
}

}  // namespace

MetaParams MetaParams::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  MetaParams p;
  p.config = config;
  p.input_proj = uniform_weight(config.input_dim, config.model_dim, rng);
  p.encoder = init_block(config, rng);
  p.decoder = init_block(config, rng);
  p.output_proj = uniform_weight(config.model_dim, config.input_dim, rng);
  p.common = uniform_weight(config.model_dim, config.common_dim, rng);
  p.migration = uniform_weight(config.common_dim, config.num_migration_classes, rng);
  p.rating = uniform_weight(config.common_dim, config.num_rating_classes, rng);
  return p;
}

std::vector<NamedParam> MetaParams::named() const {
  std::vector<NamedParam> out;
  out.push_back({"input_proj", ParamGroup::Encoder, input_proj});
  append_block(out, "enc", ParamGroup::Encoder, encoder);
  append_block(out, "dec", ParamGroup::Decoder, decoder);
  out.push_back({"dec.out_proj", ParamGroup::Decoder, output_proj});
  out.push_back({"head.common", ParamGroup::Prediction, common});
  out.push_back({"head.migration", ParamGroup::Prediction, migration});
  out.push_back({"head.rating", ParamGroup::Prediction, rating});
  return out;
}

std::size_t MetaParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : named()) n += p.tensor.numel();
  return n;
}

MetaParams MetaParams::clone() const {
  MetaParams out;
  out.config = config;
  out.input_proj = input_proj.clone(true);
  out.encoder = clone_block(encoder);
  out.decoder = clone_block(decoder);
  out.output_proj = output_proj.clone(true);
  out.common = common.clone(true);
  out.migration = migration.clone(true);
  out.rating = rating.clone(true);
  return out;
}

void MetaParams::zero_grad() {
  for (auto& p : named()) p.tensor.zero_grad();
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.model_dim;
  const std::size_t block = 3 * c.num_heads * d * c.head_dim() + d * d + d * d + 4 * d;
  return c.input_dim * d + 2 * block + d * c.input_dim + d * c.common_dim +
         c.common_dim * (c.num_migration_classes + c.num_rating_classes);
}

Tensor positional_encoding(std::size_t steps, std::size_t width) {
  std::vector<double> pe(steps * width);
  for (std::size_t pos = 0; pos < steps; ++pos) {
    for (std::size_t col = 0; col < width; ++col) {
      const std::size_t pair = col / 2;  // i in 2i / 2i+1
      const double freq = std::pow(10000.0, static_cast<double>(2 * pair) / static_cast<double>(width));
      const double angle = static_cast<double>(pos) / freq;
      pe[pos * width + col] = (col % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::from({steps, width}, std::move(pe));
}

std::pair<Tensor, std::optional<Tensor>> encode_inputs(const ModelConfig& config, const Tensor& x,
                                                       const std::optional<Tensor>& x_lag) {
  const std::size_t batch = batch_of(x, config.seq_len, "encode_inputs");
  if (x.dim(1) != config.input_dim) {
    throw DimensionError("encode_inputs: input width " + std::to_string(x.dim(1)) +
                         " does not match input_dim " + std::to_string(config.input_dim));
  }
  if (x_lag && x_lag->shape() != x.shape()) {
    throw DimensionError("encode_inputs: lagged input " + shape_string(x_lag->shape()) +
                         " does not match " + shape_string(x.shape()));
  }
  const Tensor pe = positional_encoding(config.seq_len, config.input_dim);
  std::vector<double> tiled;
  tiled.reserve(x.numel());
  for (std::size_t s = 0; s < batch; ++s) tiled.insert(tiled.end(), pe.values().begin(), pe.values().end());
  const Tensor pe_batch = Tensor::from(x.shape(), std::move(tiled));
  std::optional<Tensor> h_lag;
  if (x_lag) h_lag = add(*x_lag, pe_batch);
  return {add(x, pe_batch), h_lag};
}

Tensor multi_head_attention(const Tensor& input, const AttentionParams& params, std::size_t seq_len) {
  const std::size_t batch = batch_of(input, seq_len, "multi_head_attention");
  const std::size_t heads = params.query.size();
  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  for (std::size_t i = 0; i < heads; ++i) {
    const std::size_t dk = params.query[i].dim(1);
    const Shape per_sample{batch, seq_len, dk};
    const Tensor q = reshape(matmul(input, params.query[i]), per_sample);
    const Tensor k = reshape(matmul(input, params.key[i]), per_sample);
    const Tensor v = reshape(matmul(input, params.value[i]), per_sample);
    const Tensor scores = scale(bmm(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dk)));
    const Tensor head = bmm(softmax_rows(scores), v);
    outputs.push_back(reshape(head, {batch * seq_len, dk}));
  }
  return matmul(concat_last_dim(outputs), params.output);
}

Tensor transformer_block(const Tensor& input, const BlockParams& params, std::size_t seq_len) {
  const Tensor attended = multi_head_attention(input, params.attention, seq_len);
  const Tensor first = layer_norm(add(input, attended), params.norm1_gain, params.norm1_bias);
  return layer_norm(add(first, matmul(first, params.feed_forward)), params.norm2_gain, params.norm2_bias);
}

Tensor encoder_block(const Tensor& projected, const MetaParams& params) {
  return transformer_block(projected, params.encoder, params.config.seq_len);
}

Tensor decoder_block(const Tensor& hidden, const MetaParams& params) {
  return matmul(transformer_block(hidden, params.decoder, params.config.seq_len), params.output_proj);
}

HeadOutput predict_heads(const Tensor& hidden, const MetaParams& params) {
  HeadOutput out;
  out.common = relu(matmul(hidden, params.common));
  out.migration = softmax_rows(matmul(out.common, params.migration));
  out.rating = softmax_rows(matmul(out.common, params.rating));
  return out;
}

ForwardOutput forward(const MetaParams& params, const Tensor& x, const std::optional<Tensor>& x_lag,
                      bool with_reconstruction) {
  auto [h, h_lag] = encode_inputs(params.config, x, x_lag);
  ForwardOutput out;
  out.hidden = encoder_block(matmul(h, params.input_proj), params);
  if (with_reconstruction) out.reconstruction = decoder_block(out.hidden, params);
  HeadOutput heads = predict_heads(out.hidden, params);
  out.migration = heads.migration;
  out.rating = heads.rating;
  out.lag_target = std::move(h_lag);
  return out;
}

std::vector<double> readout_rows(const Tensor& probs, std::size_t sample, const ModelConfig& config) {
  const std::size_t width = probs.dim(1);
  const std::size_t first = sample * config.seq_len;
  auto values = probs.values();
  std::vector<double> out(width, 0.0);
  if (config.readout == Readout::LastStep) {
    const std::size_t row = first + config.seq_len - 1;
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(row * width), width, out.begin());
    return out;
  }
  for (std::size_t t = 0; t < config.seq_len; ++t)
    for (std::size_t j = 0; j < width; ++j) out[j] += values[(first + t) * width + j];
  for (double& v : out) v /= static_cast<double>(config.seq_len);
  return out;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::string_view kMagic = "META-CHECKPOINT";
constexpr int kCheckpointVersion = 1;

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

void save_checkpoint(const MetaParams& params, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write checkpoint " + path.string());
  const ModelConfig& c = params.config;
  out << kMagic << " v" << kCheckpointVersion << "\n";
  out << "config seq_len=" << c.seq_len << " input_dim=" << c.input_dim << " model_dim=" << c.model_dim
      << " num_heads=" << c.num_heads << " common_dim=" << c.common_dim
      << " migration_classes=" << c.num_migration_classes << " rating_classes=" << c.num_rating_classes
      << " readout=" << (c.readout == Readout::LastStep ? "last" : "mean") << "\n";
  for (const auto& p : params.named()) {
    out << "tensor " << p.name << " " << group_name(p.group) << " " << p.tensor.rank();
    for (std::size_t d : p.tensor.shape()) out << " " << d;
    out << "\n";
    bool first = true;
    for (double v : p.tensor.values()) {
      out << (first ? "" : " ") << format_double(v);
      first = false;
    }
    out << "\n";
  }
  out << "end\n";
  if (!out) throw InputError("failed writing checkpoint " + path.string());
}

MetaParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != std::string(kMagic) + " v" + std::to_string(kCheckpointVersion)) {
    throw InputError("not a version " + std::to_string(kCheckpointVersion) + " checkpoint: " + path.string());
  }
  if (!std::getline(in, line) || line.rfind("config ", 0) != 0) {
    throw InputError("checkpoint missing config line: " + path.string());
  }
  std::map<std::string, std::string> kv;
  {
    std::istringstream fields(line.substr(7));
    std::string field;
    while (fields >> field) {
      const auto eq = field.find('=');
      if (eq != std::string::npos) kv[field.substr(0, eq)] = field.substr(eq + 1);
    }
  }
  auto get = [&](const char* key) -> std::size_t {
    auto it = kv.find(key);
    if (it == kv.end()) throw InputError(std::string("checkpoint config lacks ") + key);
    return static_cast<std::size_t>(std::stoull(it->second));
  };
  ModelConfig c;
  c.seq_len = get("seq_len");
  c.input_dim = get("input_dim");
  c.model_dim = get("model_dim");
  c.num_heads = get("num_heads");
  c.common_dim = get("common_dim");
  c.num_migration_classes = get("migration_classes");
  c.num_rating_classes = get("rating_classes");
  c.readout = kv["readout"] == "mean" ? Readout::MeanOverSteps : Readout::LastStep;

  MetaParams params = MetaParams::initialize(c, 0);
  std::map<std::string, Tensor> by_name;
  for (auto& p : params.named()) by_name.emplace(p.name, p.tensor);

  std::size_t loaded = 0;
  while (std::getline(in, line) && line != "end") {
    std::istringstream header(line);
    std::string tag, name, group;
    std::size_t rank = 0;
    header >> tag >> name >> group >> rank;
    Shape shape(rank);
    for (auto& d : shape) header >> d;
    auto it = by_name.find(name);
    if (tag != "tensor" || it == by_name.end()) throw InputError("unexpected checkpoint entry: " + line);
    if (it->second.shape() != shape) {
      throw InputError("checkpoint tensor " + name + " has shape " + shape_string(shape) + ", expected " +
                       shape_string(it->second.shape()));
    }
    if (!std::getline(in, line)) throw InputError("truncated checkpoint at " + name);
    auto dst = it->second.mutable_values();
    const char* cur = line.data();
    const char* end = line.data() + line.size();
    for (double& v : dst) {
      while (cur < end && *cur == ' ') ++cur;
      auto [ptr, ec] = std::from_chars(cur, end, v);
      if (ec != std::errc{}) throw InputError("bad value in checkpoint tensor " + name);
      cur = ptr;
    }
    ++loaded;
  }
  if (loaded != by_name.size()) {
    throw InputError("checkpoint holds " + std::to_string(loaded) + " of " + std::to_string(by_name.size()) +
                     " tensors");
  }
  return params;
}

}  // namespace meta
