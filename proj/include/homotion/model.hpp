#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "homotion/dataset.hpp"
#include "homotion/graphs.hpp"
#include "homotion/tensor/ops.hpp"
#include "homotion/tensor/tensor.hpp"

namespace homotion::model {

using tensor::Tensor;

enum class Variant { kFull, kNoDescriptor, kBase };

const char* variant_name(Variant v);
Variant parse_variant(const std::string& name);

struct ModelConfig {
  Variant variant = Variant::kFull;
  std::size_t input_frames = 10;
  std::size_t output_frames = 10;
  std::size_t num_keypoints = 12;
  std::size_t descriptor_size = 360;
  std::vector<std::size_t> human_channels = {64, 64};
  std::size_t object_channels = 64;
  std::vector<std::size_t> trunk_channels = {128, 128};
  std::size_t head_channels = 128;
  std::size_t fusion_features = 64;  // per ST-fusion path
  std::size_t temporal_kernel = 5;
  bool full_broadcast = false;  // every node sees all descriptor entries
  double position_scale = 1000.0;  // mm per input unit
  double output_scale = 100.0;     // mm per output unit
  double rotation_scale = 100.0;   // mm per rad in the loss
  double lambda_object = 1.0;
  double lambda_human = 0.5;
  double bn_momentum = 0.1;
  std::uint64_t seed = 1;
  graphs::SkeletonTopology skeleton = graphs::default_skeleton();

  std::size_t num_joints() const { return skeleton.size(); }
  bool uses_objects() const { return variant != Variant::kBase; }
  bool uses_descriptor() const { return variant == Variant::kFull; }
  std::size_t object_input_channels() const;
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
// Strict: unknown keys are a ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j);
std::string config_hash(const ModelConfig& cfg);

// Network inputs and targets for B windows. Positions in mm.
struct Batch {
  std::size_t size = 0;
  Tensor skeleton;          // [3, B, T, N]
  Tensor keypoints;         // [3, B, T, M]
  Tensor descriptor;        // [B, D], meters and radians
  Tensor target_human;      // [B, K, N, 3]
  Tensor target_delta;      // [B, K, 6], mm and rad
  Tensor target_motion;     // [B, K]
  Tensor target_keypoints;  // [B, K, M, 3]
};

// The registry may be null for variants that ignore descriptors.
Batch make_batch(const std::vector<const dataset::InteractionWindow*>& windows,
                 const dataset::DescriptorRegistry* descriptors, const ModelConfig& cfg);

struct Prediction {
  Tensor human;             // [B, K, N, 3] mm
  Tensor delta;             // [B, K, 6] mm, rad
  Tensor motion_logit;      // [B, K]
  Tensor motion_prob;       // [B, K]
  Tensor object_keypoints;  // [B, K, M, 3] mm
};

struct LossTerms {
  Tensor total;
  double motion = 0.0;
  double delta = 0.0;
  double keypoints = 0.0;
  double human = 0.0;
};

// Parameters of one spatial-temporal graph convolution block.
struct STGConv {
  Tensor spatial_weight;  // [C_out, P * C_in]
  Tensor spatial_bias;    // [C_out]
  Tensor bn1_gamma, bn1_beta;
  Tensor temporal_weight;  // [C_out, C_out, G]
  Tensor temporal_bias;    // [C_out]
  Tensor bn2_gamma, bn2_beta;
  tensor::BatchNormState bn1, bn2;
  bool residual = false;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

// 1x1 convolution with batch norm.
struct PointConv {
  Tensor weight;  // [C_out, C_in]
  Tensor bias;    // [C_out]
  Tensor bn_gamma, bn_beta;
  tensor::BatchNormState bn;
};

class HOGCNModel {
 public:
  explicit HOGCNModel(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

  Prediction forward(const Batch& batch);
  LossTerms loss(const Prediction& pred, const Batch& batch) const;

  // Trainable parameters in a fixed order with stable names.
  std::vector<std::pair<std::string, Tensor>> parameters() const;
  // Running batch-norm statistics.
  std::vector<std::pair<std::string, Tensor>> buffers() const;
  std::size_t num_parameters() const;

  // Directory with model.ckpt and config.json.
  void save(const std::filesystem::path& dir, const nlohmann::json& meta = nlohmann::json::object()) const;
  static HOGCNModel load(const std::filesystem::path& dir);

  // A copy whose skeleton is relabelled by `order` (new joint i is old joint
  // order[i]), with node-indexed weights permuted to match.
  HOGCNModel permuted_joints(const std::vector<std::size_t>& order) const;

  // Blocks, exposed for testing. Feature tensors are [C, B, T, V].
  Tensor human_branch(const Tensor& skeleton) const;
  Tensor object_encoder(const Tensor& object_input) const;
  Tensor fusion_trunk(const Tensor& human, const Tensor& object) const;
  Tensor weighting(const Tensor& trunk) const;  // [B, D] gates in (0, 1)
  Tensor st_fusion(const Tensor& trunk) const;  // [B, 2F]
  Tensor object_head(const Tensor& fused) const;  // [B, K, 7]
  Tensor human_head(const Tensor& trunk) const;   // [B, K, N * 3]

  // Object encoder input [C_obj, B, T, M] built from normalized keypoints,
  // hands and the per-keypoint descriptor slices.
  Tensor object_features(const Tensor& keypoints, const Tensor& skeleton, const Tensor& descriptor) const;

  STGConv& block(const std::string& name);
  Linear& linear(const std::string& name);

 private:
  Tensor stgconv(const Tensor& x, const STGConv& p, const std::vector<Tensor>& adjacency) const;
  Tensor pointconv(const Tensor& x, const PointConv& p) const;
  Tensor apply_linear(const Tensor& x, const Linear& p) const;
  Tensor batch_norm(const Tensor& x, const Tensor& g, const Tensor& b, tensor::BatchNormState& s) const;
  const std::vector<Tensor>& trunk_graph() const { return cfg_.uses_objects() ? fusion_graph_ : human_graph_; }
  std::size_t trunk_nodes() const;

  ModelConfig cfg_;
  bool training_ = true;
  std::vector<Tensor> human_graph_;   // transposed partitions, [N, N]
  std::vector<Tensor> fusion_graph_;  // [N + M, N + M]
  std::vector<STGConv> human_blocks_;
  PointConv object_conv_;
  std::vector<STGConv> trunk_blocks_;
  PointConv gate_conv_;  // trunk -> descriptor gates, without batch norm
  Linear fuse_spatial_;
  Linear fuse_temporal_;
  Linear object_fc_;
  std::vector<STGConv> head_blocks_;
  Linear human_fc_;
};

}  // namespace homotion::model
