#include "homotion/model.hpp"

#include <cmath>
#include <random>
#include <set>

#include "homotion/errors.hpp"
#include "homotion/hash.hpp"
#include "homotion/io.hpp"
#include "homotion/tensor/checkpoint.hpp"

namespace homotion::model {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace homotion::tensor;

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kNoDescriptor: return "no_descriptor";
    case Variant::kBase: return "base";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  if (name == "full") return Variant::kFull;
  if (name == "no_descriptor") return Variant::kNoDescriptor;
  if (name == "base") return Variant::kBase;
  throw ConfigError("unknown variant '" + name + "' (expected full, no_descriptor or base)");
}

std::size_t ModelConfig::object_input_channels() const {
  if (!uses_descriptor()) return 9;
  return 9 + (full_broadcast ? descriptor_size : descriptor_size / num_keypoints);
}

void ModelConfig::validate() const {
  if (input_frames == 0 || output_frames == 0) throw ConfigError("input_frames and output_frames must be positive");
  if (num_keypoints == 0) throw ConfigError("num_keypoints must be positive");
  if (descriptor_size != num_keypoints * 5 * 6) {
    throw ConfigError("descriptor_size must be num_keypoints * 30, got " + std::to_string(descriptor_size));
  }
  if (temporal_kernel % 2 == 0) throw ConfigError("temporal_kernel must be odd");
  if (human_channels.empty() || trunk_channels.empty()) throw ConfigError("channel lists must not be empty");
  for (auto c : human_channels) if (c == 0) throw ConfigError("channel counts must be positive");
  for (auto c : trunk_channels) if (c == 0) throw ConfigError("channel counts must be positive");
  if (object_channels == 0 || head_channels == 0 || fusion_features == 0) {
    throw ConfigError("channel counts must be positive");
  }
  if (!(position_scale > 0) || !(output_scale > 0) || !(rotation_scale >= 0)) {
    throw ConfigError("scales must be positive");
  }
  if (!(lambda_object >= 0) || !(lambda_human >= 0)) throw ConfigError("loss weights must be non-negative");
  if (!(bn_momentum > 0) || bn_momentum > 1) throw ConfigError("bn_momentum must be in (0, 1]");
  graphs::validate(skeleton);
}

json to_json(const ModelConfig& c) {
  return {{"variant", variant_name(c.variant)},
          {"input_frames", c.input_frames},
          {"output_frames", c.output_frames},
          {"num_keypoints", c.num_keypoints},
          {"descriptor_size", c.descriptor_size},
          {"human_channels", c.human_channels},
          {"object_channels", c.object_channels},
          {"trunk_channels", c.trunk_channels},
          {"head_channels", c.head_channels},
          {"fusion_features", c.fusion_features},
          {"temporal_kernel", c.temporal_kernel},
          {"full_broadcast", c.full_broadcast},
          {"position_scale", c.position_scale},
          {"output_scale", c.output_scale},
          {"rotation_scale", c.rotation_scale},
          {"lambda_object", c.lambda_object},
          {"lambda_human", c.lambda_human},
          {"bn_momentum", c.bn_momentum},
          {"seed", c.seed},
          {"skeleton", graphs::to_json(c.skeleton)}};
}

ModelConfig model_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("model config must be an object");
  const json defaults = to_json(ModelConfig{});
  for (const auto& [k, _] : j.items()) {
    if (!defaults.contains(k)) throw ConfigError("unknown model option '" + k + "'");
  }
  ModelConfig c;
  try {
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
    c.input_frames = j.value("input_frames", c.input_frames);
    c.output_frames = j.value("output_frames", c.output_frames);
    c.num_keypoints = j.value("num_keypoints", c.num_keypoints);
    c.descriptor_size = j.value("descriptor_size", c.descriptor_size);
    c.human_channels = j.value("human_channels", c.human_channels);
    c.object_channels = j.value("object_channels", c.object_channels);
    c.trunk_channels = j.value("trunk_channels", c.trunk_channels);
    c.head_channels = j.value("head_channels", c.head_channels);
    c.fusion_features = j.value("fusion_features", c.fusion_features);
    c.temporal_kernel = j.value("temporal_kernel", c.temporal_kernel);
    c.full_broadcast = j.value("full_broadcast", c.full_broadcast);
    c.position_scale = j.value("position_scale", c.position_scale);
    c.output_scale = j.value("output_scale", c.output_scale);
    c.rotation_scale = j.value("rotation_scale", c.rotation_scale);
    c.lambda_object = j.value("lambda_object", c.lambda_object);
    c.lambda_human = j.value("lambda_human", c.lambda_human);
    c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
    c.seed = j.value("seed", c.seed);
    if (j.contains("skeleton")) c.skeleton = graphs::skeleton_from_json(j.at("skeleton"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  } catch (const GraphError& e) {
    throw ConfigError(std::string("model config skeleton: ") + e.what());
  }
  c.validate();
  return c;
}

std::string config_hash(const ModelConfig& cfg) { return hex64(fnv1a64(to_json(cfg).dump())); }

Batch make_batch(const std::vector<const dataset::InteractionWindow*>& windows,
                 const dataset::DescriptorRegistry* descriptors, const ModelConfig& cfg) {
  const std::size_t B = windows.size();
  const std::size_t T = cfg.input_frames;
  const std::size_t K = cfg.output_frames;
  const std::size_t N = cfg.num_joints();
  const std::size_t M = cfg.num_keypoints;
  const std::size_t D = cfg.descriptor_size;
  if (B == 0) throw DataError("empty batch");
  if (cfg.uses_descriptor() && descriptors == nullptr) {
    throw ConfigError(std::string("variant ") + variant_name(cfg.variant) + " needs object descriptors");
  }
  Batch batch;
  batch.size = B;
  batch.skeleton = Tensor({3, B, T, N});
  batch.keypoints = Tensor({3, B, T, M});
  batch.descriptor = Tensor({B, D});
  batch.target_human = Tensor({B, K, N, 3});
  batch.target_delta = Tensor({B, K, 6});
  batch.target_motion = Tensor({B, K});
  batch.target_keypoints = Tensor({B, K, M, 3});
  for (std::size_t b = 0; b < B; ++b) {
    const auto& w = *windows[b];
    if (w.input_frames() != T || w.target_frames() != K) {
      throw DimensionError("window " + w.id + " has " + std::to_string(w.input_frames()) + "+" +
                           std::to_string(w.target_frames()) + " frames, model expects " + std::to_string(T) + "+" +
                           std::to_string(K));
    }
    for (std::size_t t = 0; t < T + K; ++t) {
      const auto& f = w.frames[t];
      if (f.skeleton.size() != N || f.object_keypoints.size() != M) {
        throw DimensionError("window " + w.id + ": expected " + std::to_string(N) + " joints and " +
                             std::to_string(M) + " keypoints");
      }
      for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t n = 0; n < N; ++n) {
          if (t < T) batch.skeleton[((c * B + b) * T + t) * N + n] = f.skeleton[n](c);
          else batch.target_human[((b * K + t - T) * N + n) * 3 + c] = f.skeleton[n](c);
        }
        for (std::size_t m = 0; m < M; ++m) {
          if (t < T) batch.keypoints[((c * B + b) * T + t) * M + m] = f.object_keypoints[m](c);
          else batch.target_keypoints[((b * K + t - T) * M + m) * 3 + c] = f.object_keypoints[m](c);
        }
      }
    }
    for (std::size_t d = 0; d < K; ++d) {
      for (std::size_t c = 0; c < 3; ++c) {
        batch.target_delta[(b * K + d) * 6 + c] = w.labels.deltas[d].translation(c);
        batch.target_delta[(b * K + d) * 6 + 3 + c] = w.labels.deltas[d].rotation(c);
      }
      batch.target_motion[b * K + d] = w.labels.motion[d];
    }
    if (cfg.uses_descriptor()) {
      const auto& values = descriptors->at(w.object_id).values;
      if (values.size() != D) throw DimensionError("descriptor for " + w.object_id + " has wrong size");
      std::copy(values.begin(), values.end(), batch.descriptor.data().begin() + b * D);
    }
  }
  return batch;
}

namespace {

Tensor uniform_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor::uniform(std::move(shape), -k, k, rng).set_requires_grad();
}

Tensor param(Shape shape, double fill) { return Tensor(std::move(shape), fill).set_requires_grad(); }

BatchNormState bn_state(std::size_t c) { return {Tensor({c}, 0.0), Tensor({c}, 1.0)}; }

STGConv make_stgconv(std::size_t cin, std::size_t cout, std::size_t partitions, std::size_t taps,
                     std::mt19937_64& rng) {
  STGConv p;
  p.spatial_weight = uniform_init({cout, partitions * cin}, partitions * cin, rng);
  p.spatial_bias = uniform_init({cout}, partitions * cin, rng);
  p.bn1_gamma = param({cout}, 1.0);
  p.bn1_beta = param({cout}, 0.0);
  p.temporal_weight = uniform_init({cout, cout, taps}, cout * taps, rng);
  p.temporal_bias = uniform_init({cout}, cout * taps, rng);
  p.bn2_gamma = param({cout}, 1.0);
  p.bn2_beta = param({cout}, 0.0);
  p.bn1 = bn_state(cout);
  p.bn2 = bn_state(cout);
  p.residual = cin == cout;
  return p;
}

Linear make_linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return {uniform_init({in, out}, in, rng), uniform_init({out}, in, rng)};
}

PointConv make_pointconv(std::size_t cin, std::size_t cout, std::mt19937_64& rng) {
  PointConv p;
  p.weight = uniform_init({cout, cin}, cin, rng);
  p.bias = uniform_init({cout}, cin, rng);
  p.bn_gamma = param({cout}, 1.0);
  p.bn_beta = param({cout}, 0.0);
  p.bn = bn_state(cout);
  return p;
}

std::vector<Tensor> transposed_partitions(const graphs::PartitionedAdjacency& adj) {
  std::vector<Tensor> out;
  for (const auto& a : adj.partitions) {
    const auto n = static_cast<std::size_t>(a.rows());
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) t[j * n + i] = a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    out.push_back(t);
  }
  return out;
}

void add_block(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix, const STGConv& p) {
  out.emplace_back(prefix + ".spatial.weight", p.spatial_weight);
  out.emplace_back(prefix + ".spatial.bias", p.spatial_bias);
  out.emplace_back(prefix + ".bn1.gamma", p.bn1_gamma);
  out.emplace_back(prefix + ".bn1.beta", p.bn1_beta);
  out.emplace_back(prefix + ".temporal.weight", p.temporal_weight);
  out.emplace_back(prefix + ".temporal.bias", p.temporal_bias);
  out.emplace_back(prefix + ".bn2.gamma", p.bn2_gamma);
  out.emplace_back(prefix + ".bn2.beta", p.bn2_beta);
}

void add_block_buffers(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                       const STGConv& p) {
  out.emplace_back(prefix + ".bn1.running_mean", p.bn1.running_mean);
  out.emplace_back(prefix + ".bn1.running_var", p.bn1.running_var);
  out.emplace_back(prefix + ".bn2.running_mean", p.bn2.running_mean);
  out.emplace_back(prefix + ".bn2.running_var", p.bn2.running_var);
}

}  // namespace

HOGCNModel::HOGCNModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  human_graph_ = transposed_partitions(graphs::build_human_graph(cfg_.skeleton));
  fusion_graph_ = transposed_partitions(graphs::build_fusion_graph(cfg_.skeleton, cfg_.num_keypoints).second);
  const std::size_t P = human_graph_.size();
  const std::size_t G = cfg_.temporal_kernel;
  std::mt19937_64 rng(cfg_.seed);

  std::size_t c = 3;
  for (auto out : cfg_.human_channels) {
    human_blocks_.push_back(make_stgconv(c, out, P, G, rng));
    c = out;
  }
  const std::size_t human_out = c;
  if (cfg_.uses_objects()) object_conv_ = make_pointconv(cfg_.object_input_channels(), cfg_.object_channels, rng);
  if (cfg_.uses_objects() && cfg_.object_channels != human_out) {
    throw ConfigError("object_channels must equal the last human branch channel count");
  }
  for (auto out : cfg_.trunk_channels) {
    trunk_blocks_.push_back(make_stgconv(c, out, P, G, rng));
    c = out;
  }
  const std::size_t trunk_out = c;
  const std::size_t V = trunk_nodes();
  const std::size_t F = cfg_.fusion_features;
  if (cfg_.uses_descriptor()) {
    gate_conv_.weight = uniform_init({cfg_.descriptor_size, trunk_out}, trunk_out, rng);
    gate_conv_.bias = uniform_init({cfg_.descriptor_size}, trunk_out, rng);
  }
  fuse_spatial_ = make_linear(trunk_out * V, F, rng);
  fuse_temporal_ = make_linear(trunk_out * cfg_.input_frames, F, rng);
  const std::size_t head_in = 2 * F + (cfg_.uses_descriptor() ? cfg_.descriptor_size : 0);
  object_fc_ = make_linear(head_in, cfg_.output_frames * 7, rng);
  head_blocks_.push_back(make_stgconv(trunk_out, cfg_.head_channels, P, G, rng));
  head_blocks_.push_back(make_stgconv(cfg_.head_channels, cfg_.output_frames, P, G, rng));
  human_fc_ = make_linear(cfg_.input_frames * V, cfg_.num_joints() * 3, rng);
}

std::size_t HOGCNModel::trunk_nodes() const {
  return cfg_.num_joints() + (cfg_.uses_objects() ? cfg_.num_keypoints : 0);
}

std::vector<std::pair<std::string, Tensor>> HOGCNModel::parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < human_blocks_.size(); ++i) add_block(out, "human." + std::to_string(i), human_blocks_[i]);
  if (cfg_.uses_objects()) {
    out.emplace_back("object.weight", object_conv_.weight);
    out.emplace_back("object.bias", object_conv_.bias);
    out.emplace_back("object.bn.gamma", object_conv_.bn_gamma);
    out.emplace_back("object.bn.beta", object_conv_.bn_beta);
  }
  for (std::size_t i = 0; i < trunk_blocks_.size(); ++i) add_block(out, "trunk." + std::to_string(i), trunk_blocks_[i]);
  if (cfg_.uses_descriptor()) {
    out.emplace_back("gate.weight", gate_conv_.weight);
    out.emplace_back("gate.bias", gate_conv_.bias);
  }
  out.emplace_back("fuse_spatial.weight", fuse_spatial_.weight);
  out.emplace_back("fuse_spatial.bias", fuse_spatial_.bias);
  out.emplace_back("fuse_temporal.weight", fuse_temporal_.weight);
  out.emplace_back("fuse_temporal.bias", fuse_temporal_.bias);
  out.emplace_back("object_fc.weight", object_fc_.weight);
  out.emplace_back("object_fc.bias", object_fc_.bias);
  for (std::size_t i = 0; i < head_blocks_.size(); ++i) add_block(out, "head." + std::to_string(i), head_blocks_[i]);
  out.emplace_back("human_fc.weight", human_fc_.weight);
  out.emplace_back("human_fc.bias", human_fc_.bias);
  return out;
}

std::vector<std::pair<std::string, Tensor>> HOGCNModel::buffers() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < human_blocks_.size(); ++i) {
    add_block_buffers(out, "human." + std::to_string(i), human_blocks_[i]);
  }
  if (cfg_.uses_objects()) {
    out.emplace_back("object.bn.running_mean", object_conv_.bn.running_mean);
    out.emplace_back("object.bn.running_var", object_conv_.bn.running_var);
  }
  for (std::size_t i = 0; i < trunk_blocks_.size(); ++i) {
    add_block_buffers(out, "trunk." + std::to_string(i), trunk_blocks_[i]);
  }
  for (std::size_t i = 0; i < head_blocks_.size(); ++i) {
    add_block_buffers(out, "head." + std::to_string(i), head_blocks_[i]);
  }
  return out;
}

std::size_t HOGCNModel::num_parameters() const {
  std::size_t n = 0;
  for (const auto& [_, t] : parameters()) n += t.numel();
  return n;
}

STGConv& HOGCNModel::block(const std::string& name) {
  const auto dot = name.find('.');
  const std::string group = name.substr(0, dot);
  const std::size_t i = dot == std::string::npos ? 0 : std::stoul(name.substr(dot + 1));
  std::vector<STGConv>* blocks = group == "human" ? &human_blocks_
                                 : group == "trunk" ? &trunk_blocks_
                                 : group == "head"  ? &head_blocks_
                                                    : nullptr;
  if (!blocks || i >= blocks->size()) throw ContractError("no block named " + name);
  return (*blocks)[i];
}

Linear& HOGCNModel::linear(const std::string& name) {
  if (name == "fuse_spatial") return fuse_spatial_;
  if (name == "fuse_temporal") return fuse_temporal_;
  if (name == "object_fc") return object_fc_;
  if (name == "human_fc") return human_fc_;
  throw ContractError("no linear layer named " + name);
}

Tensor HOGCNModel::batch_norm(const Tensor& x, const Tensor& g, const Tensor& b, BatchNormState& s) const {
  return tensor::batch_norm(x, g, b, s, training_, cfg_.bn_momentum);
}

Tensor HOGCNModel::stgconv(const Tensor& x, const STGConv& p, const std::vector<Tensor>& adjacency) const {
  const std::size_t cin = x.size(0);
  const std::size_t B = x.size(1);
  const std::size_t T = x.size(2);
  const std::size_t V = x.size(3);
  if (V != adjacency[0].size(0)) {
    throw DimensionError("feature has " + std::to_string(V) + " nodes, graph has " +
                         std::to_string(adjacency[0].size(0)));
  }
  const std::size_t cout = p.spatial_bias.numel();
  const Tensor rows = reshape(x, {cin * B * T, V});
  std::vector<Tensor> parts;
  for (const auto& a : adjacency) parts.push_back(reshape(matmul(rows, a), {cin, B * T * V}));
  Tensor y = matmul(p.spatial_weight, concat(parts, 0)) + reshape(p.spatial_bias, {cout, 1});
  y = reshape(y, {cout, B, T, V});
  BatchNormState s1 = p.bn1;
  y = relu(batch_norm(y, p.bn1_gamma, p.bn1_beta, s1));
  y = tensor::temporal_conv(y, p.temporal_weight, p.temporal_bias);
  BatchNormState s2 = p.bn2;
  y = batch_norm(y, p.bn2_gamma, p.bn2_beta, s2);
  if (p.residual) y = y + x;
  return relu(y);
}

Tensor HOGCNModel::pointconv(const Tensor& x, const PointConv& p) const {
  const std::size_t cin = x.size(0);
  const std::size_t cout = p.bias.numel();
  Shape out_shape = x.shape();
  out_shape[0] = cout;
  Tensor y = matmul(p.weight, reshape(x, {cin, x.numel() / cin})) + reshape(p.bias, {cout, 1});
  y = reshape(y, out_shape);
  if (!p.bn_gamma.defined()) return y;
  BatchNormState s = p.bn;
  return relu(batch_norm(y, p.bn_gamma, p.bn_beta, s));
}

Tensor HOGCNModel::apply_linear(const Tensor& x, const Linear& p) const { return matmul(x, p.weight) + p.bias; }

Tensor HOGCNModel::human_branch(const Tensor& skeleton) const {
  Tensor x = skeleton;
  for (const auto& b : human_blocks_) x = stgconv(x, b, human_graph_);
  return x;
}

Tensor HOGCNModel::object_encoder(const Tensor& object_input) const {
  if (!cfg_.uses_objects()) throw ContractError("base variant has no object encoder");
  if (object_input.size(0) != cfg_.object_input_channels()) {
    throw DimensionError("object encoder expects " + std::to_string(cfg_.object_input_channels()) +
                         " channels, got " + to_string(object_input.shape()));
  }
  return pointconv(object_input, object_conv_);
}

Tensor HOGCNModel::fusion_trunk(const Tensor& human, const Tensor& object) const {
  Tensor x = object.defined() ? concat({human, object}, 3) : human;
  for (const auto& b : trunk_blocks_) x = stgconv(x, b, trunk_graph());
  return x;
}

Tensor HOGCNModel::weighting(const Tensor& trunk) const {
  if (!cfg_.uses_descriptor()) throw ContractError("only the full variant weights the descriptor");
  const Tensor pooled = mean_pool(pointconv(trunk, gate_conv_), {2, 3});  // [D, B]
  return sigmoid(transpose(pooled));
}

Tensor HOGCNModel::st_fusion(const Tensor& trunk) const {
  const std::size_t C = trunk.size(0);
  const std::size_t B = trunk.size(1);
  const std::size_t T = trunk.size(2);
  const std::size_t V = trunk.size(3);
  const Tensor over_time = reshape(permute(mean_pool(trunk, {2}), {1, 0, 2}), {B, C * V});
  const Tensor over_nodes = reshape(permute(mean_pool(trunk, {3}), {1, 0, 2}), {B, C * T});
  return concat({apply_linear(over_time, fuse_spatial_), apply_linear(over_nodes, fuse_temporal_)}, 1);
}

Tensor HOGCNModel::object_head(const Tensor& fused) const {
  return reshape(apply_linear(fused, object_fc_), {fused.size(0), cfg_.output_frames, 7});
}

Tensor HOGCNModel::human_head(const Tensor& trunk) const {
  Tensor x = trunk;
  for (const auto& b : head_blocks_) x = stgconv(x, b, trunk_graph());
  const std::size_t K = x.size(0);
  const std::size_t B = x.size(1);
  const std::size_t TV = x.size(2) * x.size(3);
  return apply_linear(reshape(permute(x, {1, 0, 2, 3}), {B, K, TV}), human_fc_);
}

Tensor HOGCNModel::object_features(const Tensor& keypoints, const Tensor& skeleton, const Tensor& descriptor) const {
  const std::size_t B = keypoints.size(1);
  const std::size_t T = keypoints.size(2);
  const std::size_t M = keypoints.size(3);
  const std::size_t N = skeleton.size(3);
  const std::size_t C = cfg_.object_input_channels();
  const std::size_t slice = cfg_.descriptor_size / cfg_.num_keypoints;
  const std::size_t k = T - 1;
  const std::size_t hip = cfg_.skeleton.hip;
  const std::size_t lh = cfg_.skeleton.left_hand;
  const std::size_t rh = cfg_.skeleton.right_hand;
  const double inv = 1.0 / cfg_.position_scale;
  Tensor out({C, B, T, M});
  auto at = [&](std::size_t c, std::size_t b, std::size_t t, std::size_t m) -> double& {
    return out[((c * B + b) * T + t) * M + m];
  };
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t c = 0; c < 3; ++c) {
          const double centre = skeleton[((c * B + b) * T + k) * N + hip];
          const double p = keypoints[((c * B + b) * T + t) * M + m];
          at(c, b, t, m) = (p - centre) * inv;
          at(3 + c, b, t, m) = (p - skeleton[((c * B + b) * T + t) * N + lh]) * inv;
          at(6 + c, b, t, m) = (p - skeleton[((c * B + b) * T + t) * N + rh]) * inv;
        }
        if (!cfg_.uses_descriptor()) continue;
        const std::size_t first = cfg_.full_broadcast ? 0 : m * slice;
        for (std::size_t i = 0; i + 9 < C; ++i) at(9 + i, b, t, m) = descriptor[b * cfg_.descriptor_size + first + i];
      }
    }
  }
  return out;
}

Prediction HOGCNModel::forward(const Batch& batch) {
  const std::size_t B = batch.size;
  const std::size_t T = cfg_.input_frames;
  const std::size_t K = cfg_.output_frames;
  const std::size_t N = cfg_.num_joints();
  const std::size_t M = cfg_.num_keypoints;
  if (batch.skeleton.shape() != Shape{3, B, T, N}) {
    throw DimensionError("skeleton input " + to_string(batch.skeleton.shape()) + " does not match config");
  }
  const std::size_t k = T - 1;
  const std::size_t hip = cfg_.skeleton.hip;
  const double inv = 1.0 / cfg_.position_scale;

  Tensor human_in({3, B, T, N});
  Tensor last_pose({B, 1, N, 3});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t b = 0; b < B; ++b) {
      const double centre = batch.skeleton[((c * B + b) * T + k) * N + hip];
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t i = ((c * B + b) * T + t) * N + n;
          human_in[i] = (batch.skeleton[i] - centre) * inv;
        }
      }
      for (std::size_t n = 0; n < N; ++n) last_pose[(b * N + n) * 3 + c] = batch.skeleton[((c * B + b) * T + k) * N + n];
    }
  }

  Tensor human = human_branch(human_in);
  Tensor object;
  if (cfg_.uses_objects()) {
    if (batch.keypoints.shape() != Shape{3, B, T, M}) {
      throw DimensionError("keypoint input " + to_string(batch.keypoints.shape()) + " does not match config");
    }
    if (cfg_.uses_descriptor() && batch.descriptor.shape() != Shape{B, cfg_.descriptor_size}) {
      throw DimensionError("descriptor input " + to_string(batch.descriptor.shape()) + " does not match config");
    }
    object = object_encoder(object_features(batch.keypoints, batch.skeleton, batch.descriptor));
  }
  const Tensor trunk = fusion_trunk(human, object);
  Tensor fused = st_fusion(trunk);
  if (cfg_.uses_descriptor()) fused = concat({fused, weighting(trunk) * batch.descriptor}, 1);
  const Tensor head = object_head(fused);

  Prediction pred;
  Tensor unit({1, 1, 6});
  for (std::size_t c = 0; c < 6; ++c) unit[c] = c < 3 ? cfg_.output_scale : 1.0;
  pred.delta = narrow(head, 2, 0, 6) * unit;
  pred.motion_logit = reshape(narrow(head, 2, 6, 1), {B, K});
  pred.motion_prob = sigmoid(pred.motion_logit);
  pred.human = scale(reshape(human_head(trunk), {B, K, N, 3}), cfg_.output_scale) + last_pose;

  // Frame-K keypoints moved rigidly about their centroid.
  Tensor local({B, 1, M, 3});
  Tensor centre({B, 1, 1, 3});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < 3; ++c) {
      double sum = 0.0;
      for (std::size_t m = 0; m < M; ++m) sum += batch.keypoints[((c * B + b) * T + k) * M + m];
      const double mean = sum / static_cast<double>(M);
      centre[b * 3 + c] = mean;
      for (std::size_t m = 0; m < M; ++m) local[(b * M + m) * 3 + c] = batch.keypoints[((c * B + b) * T + k) * M + m] - mean;
    }
  }
  const Tensor rot = rodrigues(narrow(pred.delta, 2, 3, 3));
  const Tensor shift = reshape(narrow(pred.delta, 2, 0, 3), {B, K, 1, 3});
  pred.object_keypoints = matmul(local, transpose(rot)) + centre + shift;
  return pred;
}

LossTerms HOGCNModel::loss(const Prediction& pred, const Batch& batch) const {
  const std::size_t B = batch.size;
  const std::size_t K = cfg_.output_frames;
  Tensor unit({1, 1, 6});
  for (std::size_t c = 0; c < 6; ++c) unit[c] = c < 3 ? 1.0 : cfg_.rotation_scale;
  const Tensor motion = sum(l2norm(reshape(pred.motion_prob - batch.target_motion, {B, K, 1})));
  const Tensor delta = sum(l2norm((pred.delta - batch.target_delta) * unit));
  const Tensor kps = sum(l2norm(pred.object_keypoints - batch.target_keypoints));
  const Tensor human = sum(l2norm(pred.human - batch.target_human));
  const double inv_b = 1.0 / static_cast<double>(B);
  LossTerms out;
  out.total = scale(scale(motion + delta + kps, cfg_.lambda_object) + scale(human, cfg_.lambda_human), inv_b);
  out.motion = motion.item() * inv_b;
  out.delta = delta.item() * inv_b;
  out.keypoints = kps.item() * inv_b;
  out.human = human.item() * inv_b;
  return out;
}

void HOGCNModel::save(const fs::path& dir, const json& meta) const {
  std::vector<NamedArray> entries;
  for (const auto& [name, t] : parameters()) entries.push_back({name, t});
  for (const auto& [name, t] : buffers()) entries.push_back({name, t});
  json header_meta = meta;
  header_meta["model_config"] = to_json(cfg_);
  fs::create_directories(dir);
  save_checkpoint(dir / "model.ckpt", entries, header_meta, config_hash(cfg_));
  io::write_json(dir / "config.json", to_json(cfg_));
}

HOGCNModel HOGCNModel::load(const fs::path& dir) {
  const ModelConfig cfg = model_config_from_json(io::read_json(dir / "config.json"));
  HOGCNModel model(cfg);
  const Checkpoint ckpt = load_checkpoint(dir / "model.ckpt");
  if (ckpt.config_hash != config_hash(cfg)) {
    throw DataError("checkpoint " + (dir / "model.ckpt").string() + " was written for config " + ckpt.config_hash +
                    ", config.json hashes to " + config_hash(cfg));
  }
  auto restore = [&](const std::vector<std::pair<std::string, Tensor>>& list) {
    for (auto [name, t] : list) {
      const Tensor& src = ckpt.at(name);
      if (src.shape() != t.shape()) {
        throw DataError("checkpoint entry " + name + " has shape " + to_string(src.shape()) + ", expected " +
                        to_string(t.shape()));
      }
      std::copy(src.data().begin(), src.data().end(), t.data().begin());
    }
  };
  restore(model.parameters());
  restore(model.buffers());
  return model;
}

HOGCNModel HOGCNModel::permuted_joints(const std::vector<std::size_t>& order) const {
  ModelConfig cfg = cfg_;
  cfg.skeleton = graphs::permuted(cfg_.skeleton, order);
  HOGCNModel out(cfg);
  out.training_ = training_;
  const auto src_params = parameters();
  const auto dst_params = out.parameters();
  for (std::size_t i = 0; i < src_params.size(); ++i) {
    auto d = dst_params[i].second;
    const auto s = src_params[i].second.data();
    std::copy(s.begin(), s.end(), d.data().begin());
  }
  const auto src_buf = buffers();
  const auto dst_buf = out.buffers();
  for (std::size_t i = 0; i < src_buf.size(); ++i) {
    auto d = dst_buf[i].second;
    const auto s = src_buf[i].second.data();
    std::copy(s.begin(), s.end(), d.data().begin());
  }

  const std::size_t N = cfg_.num_joints();
  const std::size_t V = trunk_nodes();
  const std::size_t F = cfg_.fusion_features;
  auto permute_rows = [&](Tensor& dst, const Tensor& src, std::size_t groups, std::size_t cols) {
    for (std::size_t g = 0; g < groups; ++g) {
      for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t c = 0; c < cols; ++c) dst[(g * V + i) * cols + c] = src[(g * V + order[i]) * cols + c];
      }
    }
  };
  permute_rows(out.fuse_spatial_.weight, fuse_spatial_.weight, fuse_spatial_.weight.size(0) / V, F);
  const std::size_t T = cfg_.input_frames;
  Tensor rows = human_fc_.weight.clone();
  permute_rows(rows, human_fc_.weight, T, N * 3);
  for (std::size_t r = 0; r < T * V; ++r) {
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t c = 0; c < 3; ++c) out.human_fc_.weight[r * N * 3 + i * 3 + c] = rows[r * N * 3 + order[i] * 3 + c];
    }
  }
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t c = 0; c < 3; ++c) out.human_fc_.bias[i * 3 + c] = human_fc_.bias[order[i] * 3 + c];
  }
  return out;
}

}  // namespace homotion::model
