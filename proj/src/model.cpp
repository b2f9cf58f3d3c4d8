// SPDX-License-Identifier: Apache-2.0
#include "gcrnn/model.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "gcrnn/errors.hpp"
#include "gcrnn/ops.hpp"

namespace gcrnn {

const char* task_mode_name(TaskMode mode) { return mode == TaskMode::sed ? "sed" : "tagging"; }

TaskMode parse_task_mode(std::string_view name) {
  if (name == "tagging") return TaskMode::tagging;
  if (name == "sed") return TaskMode::sed;
  throw ConfigError("unknown mode '" + std::string(name) + "' (tagging|sed)");
}

const char* pooling_name(Pooling pooling) {
  return pooling == Pooling::mean ? "mean" : "attention";
}

Pooling parse_pooling(std::string_view name) {
  if (name == "attention") return Pooling::attention;
  if (name == "mean") return Pooling::mean;
  throw ConfigError("unknown pooling '" + std::string(name) + "' (attention|mean)");
}

std::size_t ModelConfig::output_frames() const {
  std::size_t t = n_frames;
  for (std::size_t i = 0; i < n_blocks; ++i) t /= pool_time();
  return t;
}

std::size_t ModelConfig::output_bins() const {
  std::size_t f = n_bins;
  for (std::size_t i = 0; i < n_blocks; ++i) f /= pool_freq();
  return f;
}

void ModelConfig::validate() const {
  if (n_classes == 0 || filters == 0 || hidden == 0 || n_blocks == 0) {
    throw ConfigError("model: classes, filters, hidden and blocks must be positive");
  }
  if (kernel % 2 == 0) throw ConfigError("model: kernel size must be odd");
  if (!class_names.empty() && class_names.size() != n_classes) {
    throw ConfigError("model: " + std::to_string(class_names.size()) + " class names for " +
                      std::to_string(n_classes) + " classes");
  }
  std::size_t t = n_frames, f = n_bins;
  for (std::size_t i = 0; i < n_blocks; ++i) {
    if (t < pool_time() || f < pool_freq()) {
      throw ConfigError("model: input " + std::to_string(n_frames) + "x" + std::to_string(n_bins) +
                        " too small for " + std::to_string(n_blocks) + " pooling blocks");
    }
    t /= pool_time();
    f /= pool_freq();
  }
}

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "n_classes=" << n_classes << "\n"
     << "n_frames=" << n_frames << "\n"
     << "n_bins=" << n_bins << "\n"
     << "filters=" << filters << "\n"
     << "kernel=" << kernel << "\n"
     << "n_blocks=" << n_blocks << "\n"
     << "hidden=" << hidden << "\n"
     << "mode=" << task_mode_name(mode) << "\n"
     << "feature=" << feature_kind_name(feature) << "\n"
     << "classes=";
  for (std::size_t i = 0; i < class_names.size(); ++i) os << (i ? "," : "") << class_names[i];
  os << "\n";
  return os.str();
}

ModelConfig ModelConfig::parse(const std::string& text) {
  ModelConfig c;
  std::istringstream is(text);
  std::string line;
  auto to_size = [](const std::string& key, const std::string& v) {
    try {
      return static_cast<std::size_t>(std::stoull(v));
    } catch (const std::exception&) {
      throw FormatError("model config: bad value '" + v + "' for " + key);
    }
  };
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("model config: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "n_classes") c.n_classes = to_size(key, value);
    else if (key == "n_frames") c.n_frames = to_size(key, value);
    else if (key == "n_bins") c.n_bins = to_size(key, value);
    else if (key == "filters") c.filters = to_size(key, value);
    else if (key == "kernel") c.kernel = to_size(key, value);
    else if (key == "n_blocks") c.n_blocks = to_size(key, value);
    else if (key == "hidden") c.hidden = to_size(key, value);
    else if (key == "mode") c.mode = parse_task_mode(value);
    else if (key == "feature") c.feature = parse_feature_kind(value);
    else if (key == "classes") {
      c.class_names.clear();
      std::istringstream names(value);
      std::string name;
      while (std::getline(names, name, ',')) c.class_names.push_back(name);
    } else {
      throw FormatError("model config: unknown key '" + key + "'");
    }
  }
  return c;
}

std::uint64_t ModelConfig::hash() const {
  ModelConfig arch = *this;
  arch.class_names.clear();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : arch.serialize()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    out.emplace_back(p + "linear_filters", &blocks[i].linear_filters);
    out.emplace_back(p + "linear_bias", &blocks[i].linear_bias);
    out.emplace_back(p + "gate_filters", &blocks[i].gate_filters);
    out.emplace_back(p + "gate_bias", &blocks[i].gate_bias);
  }
  for (auto [dir, cell] : {std::pair{"fwd", &rnn.forward}, std::pair{"bwd", &rnn.backward}}) {
    const std::string p = std::string("rnn.") + dir + ".";
    out.emplace_back(p + "input_weights", &cell->input_weights);
    out.emplace_back(p + "recurrent_weights", &cell->recurrent_weights);
    out.emplace_back(p + "bias", &cell->bias);
  }
  out.emplace_back("cls_head.weights", &cls_head.weights);
  out.emplace_back("cls_head.bias", &cls_head.bias);
  out.emplace_back("loc_head.weights", &loc_head.weights);
  out.emplace_back("loc_head.bias", &loc_head.bias);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<ModelParams*>(this)->named()) out.emplace_back(name, t);
  return out;
}

std::vector<Tensor*> ModelParams::tensors() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named()) n += t->size();
  return n;
}

namespace {

Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ModelParams p;
  p.config = config;
  const std::size_t k = config.kernel;
  std::size_t cin = 1;
  for (std::size_t i = 0; i < config.n_blocks; ++i) {
    GatedConvBlock b;
    const std::size_t fan_in = k * k * cin, fan_out = k * k * config.filters;
    b.linear_filters = glorot({k, k, cin, config.filters}, fan_in, fan_out, rng);
    b.linear_bias = Tensor::zeros({config.filters});
    b.gate_filters = glorot({k, k, cin, config.filters}, fan_in, fan_out, rng);
    b.gate_bias = Tensor::zeros({config.filters});
    b.pool_time = config.pool_time();
    b.pool_freq = config.pool_freq();
    p.blocks.push_back(std::move(b));
    cin = config.filters;
  }
  const std::size_t D = config.rnn_input(), H = config.hidden;
  for (GruCell* cell : {&p.rnn.forward, &p.rnn.backward}) {
    cell->input_weights = glorot({D, 3 * H}, D, 3 * H, rng);
    cell->recurrent_weights = glorot({H, 3 * H}, H, 3 * H, rng);
    cell->bias = Tensor::zeros({3 * H});
  }
  for (DenseHead* head : {&p.cls_head, &p.loc_head}) {
    head->weights = glorot({2 * H, config.n_classes}, 2 * H, config.n_classes, rng);
    head->bias = Tensor::zeros({config.n_classes});
  }
  return p;
}

Var glu_block(Var x, Var linear_filters, Var linear_bias, Var gate_filters, Var gate_bias,
              std::size_t pool_time, std::size_t pool_freq) {
  Var lin = conv2d(x, linear_filters, linear_bias);
  Var gate = sigmoid(conv2d(x, gate_filters, gate_bias));
  return max_pool2d(elementwise_mul(lin, gate), pool_time, pool_freq);
}

Tensor glu_block_forward(const Tensor& x, const GatedConvBlock& block) {
  Graph g;
  Var y = glu_block(g.constant(x), g.constant(block.linear_filters), g.constant(block.linear_bias),
                    g.constant(block.gate_filters), g.constant(block.gate_bias), block.pool_time,
                    block.pool_freq);
  return y.value();
}

Var bigru(Var x, const std::vector<Var>& forward_cell, const std::vector<Var>& backward_cell) {
  Var fwd = gru_sequence(x, forward_cell.at(0), forward_cell.at(1), forward_cell.at(2));
  Var bwd = reverse_rows(
      gru_sequence(reverse_rows(x), backward_cell.at(0), backward_cell.at(1), backward_cell.at(2)));
  return concat_columns(fwd, bwd);
}

Tensor bigru_forward(const Tensor& x, const BiGruLayer& rnn) {
  Graph g;
  auto cell = [&g](const GruCell& c) {
    return std::vector<Var>{g.constant(c.input_weights), g.constant(c.recurrent_weights),
                            g.constant(c.bias)};
  };
  return bigru(g.constant(x), cell(rnn.forward), cell(rnn.backward)).value();
}

namespace {

void check_finite(Var v, const std::string& layer) {
  if (!v.value().all_finite()) {
    throw TrainingError("forward: non-finite activation in layer " + layer);
  }
}

}  // namespace

ForwardVars forward_graph(Graph& graph, const Tensor& features, const ModelParams& params,
                          Pooling pooling, bool trainable) {
  const ModelConfig& cfg = params.config;
  if (features.rank() != 2 || features.dim(0) != cfg.n_frames || features.dim(1) != cfg.n_bins) {
    throw DimensionError("forward: features " + shape_string(features.shape()) +
                         " do not match model input [" + std::to_string(cfg.n_frames) + "x" +
                         std::to_string(cfg.n_bins) + "]");
  }
  ForwardVars out;
  for (const auto& [name, t] : params.named()) {
    out.params.push_back(trainable ? graph.parameter(*t) : graph.constant(*t));
  }
  std::size_t next = 0;
  auto take = [&]() { return out.params.at(next++); };

  Var x = graph.constant(features.reshaped({cfg.n_frames, cfg.n_bins, 1}));
  for (std::size_t i = 0; i < params.blocks.size(); ++i) {
    Var w = take(), b = take(), v = take(), c = take();
    x = glu_block(x, w, b, v, c, params.blocks[i].pool_time, params.blocks[i].pool_freq);
    check_finite(x, "block" + std::to_string(i));
  }
  const std::size_t t_out = x.shape()[0];
  x = reshape(x, {t_out, x.shape()[1] * x.shape()[2]});

  std::vector<Var> fwd{take(), take(), take()};
  std::vector<Var> bwd{take(), take(), take()};
  Var h = bigru(x, fwd, bwd);
  check_finite(h, "rnn");

  Var cls_w = take(), cls_b = take(), loc_w = take(), loc_b = take();
  out.classification = sigmoid(linear(h, cls_w, cls_b));
  check_finite(out.classification, "cls_head");
  out.localization = softmax_over_classes(linear(h, loc_w, loc_b));
  check_finite(out.localization, "loc_head");
  out.combined = elementwise_mul(out.classification, out.localization);
  if (pooling == Pooling::attention) {
    out.clip_output = divide(sum_over_time(out.combined), sum_over_time(out.localization));
  } else {
    out.clip_output = mean_over_time(out.classification);
  }
  check_finite(out.clip_output, "pooling");
  return out;
}

FramePosteriors forward(const Tensor& features, const ModelParams& params, Pooling pooling) {
  Graph g;
  ForwardVars v = forward_graph(g, features, params, pooling, false);
  return FramePosteriors{v.classification.value(), v.localization.value(), v.combined.value(),
                         v.clip_output.value()};
}

FramePosteriors forward(const FeatureChunk& chunk, const ModelParams& params, Pooling pooling) {
  if (chunk.kind != params.config.feature) {
    throw ValidationError(std::string("forward: model expects ") +
                          feature_kind_name(params.config.feature) + " features, got " +
                          feature_kind_name(chunk.kind));
  }
  return forward(chunk.values, params, pooling);
}

}  // namespace gcrnn
