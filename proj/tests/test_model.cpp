#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include "homotion/errors.hpp"
#include "homotion/io.hpp"
#include "homotion/model.hpp"
#include "support/gradcheck.hpp"

using namespace homotion;
using namespace homotion::model;
using namespace homotion::tensor;

namespace {

struct Fixture {
  std::vector<dataset::InteractionWindow> windows;
  dataset::DescriptorRegistry registry;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture out;
    const auto base = rigidsim::load_model(std::string(HOMOTION_DATA_DIR) + "/models/chair.json");
    std::uint64_t seed = 1;
    for (const auto& [id, scale] : {std::pair{"chair_1", 1.0}, std::pair{"chair_2", 1.15}}) {
      const auto inst = dataset::make_instance(base, id, scale);
      out.registry.add(id, rigidsim::compute_descriptor(inst.model, rigidsim::SimConfig{}));
      for (auto t : {dataset::Template::kPush, dataset::Template::kRotateCw}) {
        auto v = dataset::synth_generate(t, inst, graphs::default_skeleton(), dataset::SynthConfig{}, seed++);
        v.id = std::string(id) + "_" + dataset::template_name(t);
        auto w = dataset::extract_windows(v, dataset::WindowConfig{});
        out.windows.insert(out.windows.end(), w.begin(), w.begin() + 2);
      }
    }
    return out;
  }();
  return f;
}

Batch batch_of(std::size_t n, const ModelConfig& cfg, std::size_t offset = 0) {
  std::vector<const dataset::InteractionWindow*> ptrs;
  for (std::size_t i = 0; i < n; ++i) ptrs.push_back(&fixture().windows[(offset + i) % fixture().windows.size()]);
  return make_batch(ptrs, &fixture().registry, cfg);
}

ModelConfig config(Variant v) {
  ModelConfig c;
  c.variant = v;
  return c;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void fill(Tensor t, double v) {
  for (auto& x : t.data()) x = v;
}

}  // namespace

TEST(ModelConfigTest, ChannelCountsFollowVariant) {
  EXPECT_EQ(config(Variant::kFull).object_input_channels(), 39u);
  EXPECT_EQ(config(Variant::kNoDescriptor).object_input_channels(), 9u);
  auto c = config(Variant::kFull);
  c.full_broadcast = true;
  EXPECT_EQ(c.object_input_channels(), 369u);
  c.descriptor_size = 300;
  EXPECT_THROW(c.validate(), ConfigError);
  c = config(Variant::kFull);
  c.temporal_kernel = 4;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelConfigTest, JsonRoundTripAndStrictKeys) {
  auto c = config(Variant::kNoDescriptor);
  c.seed = 42;
  const auto back = model_config_from_json(to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_NE(config_hash(back), config_hash(config(Variant::kFull)));
  EXPECT_THROW(model_config_from_json({{"chanels", 3}}), ConfigError);
  EXPECT_THROW(model_config_from_json({{"variant", "tiny"}}), ConfigError);
}

TEST(Forward, OutputShapes) {
  HOGCNModel m(config(Variant::kFull));
  const auto p = m.forward(batch_of(3, m.config()));
  EXPECT_EQ(p.human.shape(), (Shape{3, 10, 21, 3}));
  EXPECT_EQ(p.delta.shape(), (Shape{3, 10, 6}));
  EXPECT_EQ(p.motion_prob.shape(), (Shape{3, 10}));
  EXPECT_EQ(p.object_keypoints.shape(), (Shape{3, 10, 12, 3}));
  for (double v : p.motion_prob.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Forward, VariantRequiresDescriptors) {
  std::vector<const dataset::InteractionWindow*> ptrs = {&fixture().windows[0]};
  EXPECT_THROW(make_batch(ptrs, nullptr, config(Variant::kFull)), ConfigError);
  EXPECT_NO_THROW(make_batch(ptrs, nullptr, config(Variant::kNoDescriptor)));
}

TEST(HumanBranch, ZeroInputZeroBiasGivesZero) {
  HOGCNModel m(config(Variant::kFull));
  for (const char* name : {"human.0", "human.1"}) {
    fill(m.block(name).spatial_bias, 0.0);
    fill(m.block(name).temporal_bias, 0.0);
  }
  const Tensor out = m.human_branch(Tensor({3, 2, 10, 21}));
  EXPECT_EQ(out.shape(), (Shape{64, 2, 10, 21}));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(HumanBranch, JointRelabellingPermutesPredictions) {
  for (bool training : {true, false}) {
    HOGCNModel m(config(Variant::kFull));
    m.set_training(training);
    std::vector<std::size_t> order(21);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(5);
    std::shuffle(order.begin(), order.end(), rng);
    HOGCNModel p = m.permuted_joints(order);

    const Batch b = batch_of(2, m.config());
    Batch pb = b;
    pb.skeleton = Tensor({3, 2, 10, 21});
    pb.target_human = Tensor({2, 10, 21, 3});
    for (std::size_t r = 0; r < 3 * 2 * 10; ++r) {
      for (std::size_t i = 0; i < 21; ++i) pb.skeleton[r * 21 + i] = b.skeleton[r * 21 + order[i]];
    }
    const auto ref = m.forward(b);
    const auto got = p.forward(pb);
    double worst = 0.0;
    for (std::size_t r = 0; r < 2 * 10; ++r) {
      for (std::size_t i = 0; i < 21; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
          worst = std::max(worst, std::abs(got.human[(r * 21 + i) * 3 + c] - ref.human[(r * 21 + order[i]) * 3 + c]));
        }
      }
    }
    EXPECT_LT(worst, 1e-9);
    EXPECT_LT(max_abs_diff(got.delta, ref.delta), 1e-9);
    EXPECT_LT(max_abs_diff(got.motion_prob, ref.motion_prob), 1e-12);
  }
}

TEST(ObjectEncoder, HandDifferencesVanishAtHands) {
  HOGCNModel m(config(Variant::kFull));
  Batch b = batch_of(1, m.config());
  const auto& skel = m.config().skeleton;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t t = 0; t < 10; ++t) {
      const double v = b.keypoints[(c * 10 + t) * 12 + 4];
      b.skeleton[(c * 10 + t) * 21 + skel.left_hand] = v;
      b.skeleton[(c * 10 + t) * 21 + skel.right_hand] = v;
    }
  }
  const Tensor in = m.object_features(b.keypoints, b.skeleton, b.descriptor);
  EXPECT_EQ(in.shape(), (Shape{39, 1, 10, 12}));
  for (std::size_t c = 3; c < 9; ++c) {
    for (std::size_t t = 0; t < 10; ++t) EXPECT_EQ(in[(c * 10 + t) * 12 + 4], 0.0);
  }
  // Descriptor slice of keypoint 4 sits after the nine geometric channels.
  EXPECT_EQ(in[(9 * 10 + 3) * 12 + 4], b.descriptor[4 * 30]);
  EXPECT_EQ(in[(38 * 10 + 3) * 12 + 4], b.descriptor[4 * 30 + 29]);
}

TEST(ObjectEncoder, DescriptorChangesFullVariantOnly) {
  for (auto v : {Variant::kFull, Variant::kNoDescriptor}) {
    HOGCNModel m(config(v));
    m.set_training(false);
    Batch b = batch_of(2, m.config());
    const Tensor a = m.object_encoder(m.object_features(b.keypoints, b.skeleton, b.descriptor));
    for (auto& x : b.descriptor.data()) x = -3.0 * x + 0.01;
    const Tensor c = m.object_encoder(m.object_features(b.keypoints, b.skeleton, b.descriptor));
    EXPECT_EQ(bit_equal(a, c), v == Variant::kNoDescriptor);
  }
}

TEST(FusionTrunk, SelfPartitionOnlyIsolatesHumanRows) {
  HOGCNModel m(config(Variant::kFull));
  m.set_training(false);
  for (const char* name : {"trunk.0", "trunk.1"}) {
    auto& w = m.block(name).spatial_weight;
    const std::size_t cin = w.size(1) / 2;
    for (std::size_t r = 0; r < w.size(0); ++r) {
      for (std::size_t c = cin; c < 2 * cin; ++c) w[r * 2 * cin + c] = 0.0;
    }
  }
  std::mt19937_64 rng(2);
  const Tensor human = Tensor::normal({64, 2, 10, 21}, 1.0, rng);
  const Tensor obj_a = Tensor::normal({64, 2, 10, 12}, 1.0, rng);
  const Tensor obj_b = Tensor::normal({64, 2, 10, 12}, 1.0, rng);
  const Tensor a = m.fusion_trunk(human, obj_a);
  const Tensor b = m.fusion_trunk(human, obj_b);
  EXPECT_EQ(a.shape(), (Shape{128, 2, 10, 33}));
  EXPECT_TRUE(bit_equal(narrow(a, 3, 0, 21), narrow(b, 3, 0, 21)));
  EXPECT_FALSE(bit_equal(narrow(a, 3, 21, 12), narrow(b, 3, 21, 12)));
  // Each human row depends on its own node only.
  Tensor h2 = human.clone();
  for (std::size_t i = 0; i < 64 * 2 * 10; ++i) h2[i * 21 + 3] += 1.0;
  const Tensor c = m.fusion_trunk(h2, obj_a);
  for (std::size_t r = 0; r < 128 * 2 * 10; ++r) {
    for (std::size_t v = 0; v < 21; ++v) {
      if (v != 3) EXPECT_EQ(a[r * 33 + v], c[r * 33 + v]);
    }
  }
}

TEST(FusionTrunk, ObjectNodePermutationPermutesObjectRows) {
  HOGCNModel m(config(Variant::kFull));
  std::mt19937_64 rng(4);
  const Tensor human = Tensor::normal({64, 1, 10, 21}, 1.0, rng);
  const Tensor obj = Tensor::normal({64, 1, 10, 12}, 1.0, rng);
  std::vector<std::size_t> order(12);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  Tensor pobj({64, 1, 10, 12});
  for (std::size_t r = 0; r < 640; ++r) {
    for (std::size_t i = 0; i < 12; ++i) pobj[r * 12 + i] = obj[r * 12 + order[i]];
  }
  const Tensor a = m.fusion_trunk(human, obj);
  const Tensor b = m.fusion_trunk(human, pobj);
  double worst = 0.0;
  for (std::size_t r = 0; r < 1280; ++r) {
    for (std::size_t i = 0; i < 12; ++i) worst = std::max(worst, std::abs(b[r * 33 + 21 + i] - a[r * 33 + 21 + order[i]]));
    for (std::size_t i = 0; i < 21; ++i) worst = std::max(worst, std::abs(b[r * 33 + i] - a[r * 33 + i]));
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(WeightedPooling, ZeroActivationsGiveHalf) {
  HOGCNModel m(config(Variant::kFull));
  for (auto& [name, t] : m.parameters()) {
    if (name == "gate.bias") fill(t, 0.0);
  }
  const Tensor w = m.weighting(Tensor({128, 2, 10, 33}));
  EXPECT_EQ(w.shape(), (Shape{2, 360}));
  for (double v : w.data()) EXPECT_EQ(v, 0.5);
}

TEST(WeightedPooling, GatesStayStrictlyInsideUnitInterval) {
  HOGCNModel m(config(Variant::kFull));
  std::mt19937_64 rng(8);
  const Tensor w = m.weighting(Tensor::normal({128, 3, 10, 33}, 5.0, rng));
  const Batch b = batch_of(3, m.config());
  const Tensor g = w * b.descriptor;
  for (std::size_t i = 0; i < g.numel(); ++i) {
    EXPECT_GT(w[i], 0.0);
    EXPECT_LT(w[i], 1.0);
    EXPECT_LE(std::abs(g[i]), std::abs(b.descriptor[i]));
    if (b.descriptor[i] > 0) {
      EXPECT_GT(g[i], 0.0);
      EXPECT_LT(g[i], b.descriptor[i]);
    }
  }
  const Tensor z = w * Tensor({3, 360});
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
}

TEST(StFusion, ConstantTrunkDependsOnValueOnly) {
  HOGCNModel m(config(Variant::kFull));
  const Tensor a = m.st_fusion(Tensor({128, 2, 10, 33}, 0.7));
  EXPECT_EQ(a.shape(), (Shape{2, 128}));
  // Both samples see the same constant, so both rows agree.
  for (std::size_t i = 0; i < 128; ++i) EXPECT_EQ(a[i], a[128 + i]);
  const Tensor b = m.st_fusion(Tensor({128, 2, 10, 33}, -0.2));
  EXPECT_GT(max_abs_diff(a, b), 0.0);
}

TEST(StFusion, TimePermutationLeavesSpatialPathUnchanged) {
  HOGCNModel m(config(Variant::kFull));
  std::mt19937_64 rng(1);
  const Tensor x = Tensor::normal({128, 1, 10, 33}, 1.0, rng);
  Tensor y({128, 1, 10, 33});
  for (std::size_t c = 0; c < 128; ++c) {
    for (std::size_t t = 0; t < 10; ++t) {
      for (std::size_t v = 0; v < 33; ++v) y[(c * 10 + t) * 33 + v] = x[(c * 10 + (9 - t)) * 33 + v];
    }
  }
  const Tensor a = m.st_fusion(x);
  const Tensor b = m.st_fusion(y);
  EXPECT_LT(max_abs_diff(narrow(a, 1, 0, 64), narrow(b, 1, 0, 64)), 1e-12);
  EXPECT_GT(max_abs_diff(narrow(a, 1, 64, 64), narrow(b, 1, 64, 64)), 1e-6);
}

TEST(ObjectHead, ZeroWeightsGiveIdentityMotion) {
  HOGCNModel m(config(Variant::kFull));
  fill(m.linear("object_fc").weight, 0.0);
  fill(m.linear("object_fc").bias, 0.0);
  const Batch b = batch_of(2, m.config());
  const auto p = m.forward(b);
  EXPECT_EQ(m.object_head(Tensor({1, 488})).numel(), 70u);
  for (double v : p.delta.data()) EXPECT_EQ(v, 0.0);
  for (double v : p.motion_prob.data()) EXPECT_EQ(v, 0.5);
  for (std::size_t s = 0; s < 2; ++s) {
    for (std::size_t d = 0; d < 10; ++d) {
      for (std::size_t i = 0; i < 12; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
          EXPECT_NEAR(p.object_keypoints[((s * 10 + d) * 12 + i) * 3 + c], b.keypoints[((c * 2 + s) * 10 + 9) * 12 + i],
                      1e-9);
        }
      }
    }
  }
}

TEST(HumanHead, IdenticalChannelsGiveIdenticalPoses) {
  HOGCNModel m(config(Variant::kFull));
  auto& blk = m.block("head.1");
  const std::size_t cin = blk.spatial_weight.size(1);
  for (std::size_t k = 1; k < 10; ++k) {
    for (std::size_t c = 0; c < cin; ++c) blk.spatial_weight[k * cin + c] = blk.spatial_weight[c];
    blk.spatial_bias[k] = blk.spatial_bias[0];
    for (std::size_t j = 0; j < 10 * 5; ++j) blk.temporal_weight[k * 50 + j] = blk.temporal_weight[j];
    blk.temporal_bias[k] = blk.temporal_bias[0];
  }
  std::mt19937_64 rng(6);
  const Tensor out = m.human_head(Tensor::normal({128, 2, 10, 33}, 1.0, rng));
  EXPECT_EQ(out.shape(), (Shape{2, 10, 63}));
  for (std::size_t s = 0; s < 2; ++s) {
    for (std::size_t k = 1; k < 10; ++k) {
      for (std::size_t i = 0; i < 63; ++i) EXPECT_NEAR(out[(s * 10 + k) * 63 + i], out[s * 630 + i], 1e-12);
    }
  }
}

TEST(Forward, DerivedKeypointsAreRigid) {
  HOGCNModel m(config(Variant::kFull));
  fill(m.linear("object_fc").bias, 0.3);
  const Batch b = batch_of(2, m.config());
  const auto p = m.forward(b);
  for (std::size_t s = 0; s < 2; ++s) {
    auto ref = [&](std::size_t i) {
      return Vec3(b.keypoints[((0 * 2 + s) * 10 + 9) * 12 + i], b.keypoints[((1 * 2 + s) * 10 + 9) * 12 + i],
                  b.keypoints[((2 * 2 + s) * 10 + 9) * 12 + i]);
    };
    for (std::size_t d = 0; d < 10; ++d) {
      auto got = [&](std::size_t i) {
        const std::size_t o = ((s * 10 + d) * 12 + i) * 3;
        return Vec3(p.object_keypoints[o], p.object_keypoints[o + 1], p.object_keypoints[o + 2]);
      };
      for (std::size_t i = 0; i < 12; ++i) {
        for (std::size_t j = i + 1; j < 12; ++j) {
          EXPECT_NEAR((got(i) - got(j)).norm(), (ref(i) - ref(j)).norm(), 1e-9);
        }
      }
    }
  }
}

TEST(Variants, BaseIgnoresObjectInputs) {
  HOGCNModel m(config(Variant::kBase));
  EXPECT_EQ(m.num_parameters(), HOGCNModel(config(Variant::kBase)).num_parameters());
  Batch b = batch_of(2, m.config());
  m.set_training(false);
  const auto a = m.forward(b);
  std::mt19937_64 rng(3);
  b.keypoints = Tensor::normal(b.keypoints.shape(), 500.0, rng);
  b.descriptor = Tensor::normal(b.descriptor.shape(), 1.0, rng);
  const auto c = m.forward(b);
  EXPECT_TRUE(bit_equal(a.human, c.human));
  EXPECT_TRUE(bit_equal(a.delta, c.delta));
  EXPECT_TRUE(bit_equal(a.motion_prob, c.motion_prob));
}

TEST(Variants, NoDescriptorIgnoresDescriptor) {
  for (bool training : {true, false}) {
    HOGCNModel m(config(Variant::kNoDescriptor));
    m.set_training(training);
    Batch b = batch_of(2, m.config());
    const auto a = m.forward(b);
    std::mt19937_64 rng(3);
    b.descriptor = Tensor::normal(b.descriptor.shape(), 1.0, rng);
    const auto c = m.forward(b);
    EXPECT_TRUE(bit_equal(a.human, c.human));
    EXPECT_TRUE(bit_equal(a.delta, c.delta));
    EXPECT_TRUE(bit_equal(a.motion_prob, c.motion_prob));
    EXPECT_TRUE(bit_equal(a.object_keypoints, c.object_keypoints));
  }
}

TEST(Variants, FullVariantUsesDescriptor) {
  HOGCNModel m(config(Variant::kFull));
  m.set_training(false);
  Batch b = batch_of(2, m.config());
  const auto a = m.forward(b);
  for (auto& x : b.descriptor.data()) x *= 2.0;
  EXPECT_FALSE(bit_equal(a.delta, m.forward(b).delta));
}

TEST(Loss, PerfectPredictionIsZero) {
  HOGCNModel m(config(Variant::kFull));
  const Batch b = batch_of(2, m.config());
  Prediction p;
  p.human = b.target_human;
  p.delta = b.target_delta;
  p.motion_prob = b.target_motion;
  p.object_keypoints = b.target_keypoints;
  EXPECT_EQ(m.loss(p, b).total.item(), 0.0);
}

TEST(Loss, ZeroPredictionOfMovingLabelsCostsHalfPerFrame) {
  HOGCNModel m(config(Variant::kFull));
  Batch b;
  b.size = 1;
  b.target_human = Tensor({1, 10, 21, 3});
  b.target_delta = Tensor({1, 10, 6});
  b.target_motion = Tensor({1, 10}, 1.0);
  b.target_keypoints = Tensor({1, 10, 12, 3});
  Prediction p;
  p.human = Tensor({1, 10, 21, 3});
  p.delta = Tensor({1, 10, 6});
  p.motion_prob = sigmoid(Tensor({1, 10}));
  p.object_keypoints = Tensor({1, 10, 12, 3});
  const auto l = m.loss(p, b);
  EXPECT_DOUBLE_EQ(l.total.item(), 5.0);
  EXPECT_DOUBLE_EQ(l.motion, 5.0);
}

TEST(Loss, WeightsAndRotationScale) {
  HOGCNModel m(config(Variant::kFull));
  Batch b;
  b.size = 2;
  b.target_human = Tensor({2, 10, 21, 3});
  b.target_delta = Tensor({2, 10, 6});
  b.target_motion = Tensor({2, 10});
  b.target_keypoints = Tensor({2, 10, 12, 3});
  Prediction p;
  p.human = b.target_human.clone();
  p.human[0] = 3.0;
  p.human[1] = 4.0;  // one joint 5 mm off
  p.delta = b.target_delta.clone();
  p.delta[3] = 0.02;  // 0.02 rad -> 2 mm-equivalent
  p.motion_prob = b.target_motion;
  p.object_keypoints = b.target_keypoints;
  // (1.0 * 2 + 0.5 * 5) / 2
  EXPECT_NEAR(m.loss(p, b).total.item(), 2.25, 1e-12);
}

TEST(Gradients, LossMatchesFiniteDifferences) {
  for (auto v : {Variant::kFull, Variant::kNoDescriptor, Variant::kBase}) {
    HOGCNModel m(config(v));
    const Batch b = batch_of(2, m.config());
    std::vector<Tensor> params;
    for (const auto& [_, t] : m.parameters()) params.push_back(t);
    const auto r = homotion::testing::gradcheck([&] { return m.loss(m.forward(b), b).total; }, params, 1e-5, 24, 11);
    EXPECT_EQ(r.checked, 24u);
    EXPECT_LT(r.max_rel_error, 1e-4) << variant_name(v);
  }
}

TEST(Gradients, EveryParameterGroupReceivesGradient) {
  HOGCNModel m(config(Variant::kFull));
  const Batch b = batch_of(2, m.config());
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(m.loss(m.forward(b), b).total);
  }
  for (const auto& [name, t] : m.parameters()) {
    ASSERT_TRUE(t.has_grad()) << name;
    double norm = 0.0;
    for (double g : t.grad()) norm += g * g;
    EXPECT_GT(norm, 0.0) << name;
  }
}

TEST(Gradients, BlockSpotChecks) {
  HOGCNModel m(config(Variant::kFull));
  std::mt19937_64 rng(12);
  const Tensor trunk = Tensor::normal({128, 2, 10, 33}, 1.0, rng);
  const Tensor weights = Tensor::normal({2, 10, 63}, 1.0, rng);
  std::vector<Tensor> head_params;
  for (const auto& [name, t] : m.parameters()) {
    if (name.rfind("head.", 0) == 0 || name.rfind("human_fc", 0) == 0) head_params.push_back(t);
  }
  auto r = homotion::testing::gradcheck([&] { return sum(m.human_head(trunk) * weights); }, head_params, 1e-5, 20, 3);
  EXPECT_LT(r.max_rel_error, 1e-4);

  const Tensor fw = Tensor::normal({2, 128}, 1.0, rng);
  std::vector<Tensor> fusion_params = {trunk, m.linear("fuse_spatial").weight, m.linear("fuse_temporal").weight};
  r = homotion::testing::gradcheck([&] { return sum(m.st_fusion(trunk) * fw); }, fusion_params, 1e-5, 30, 4);
  EXPECT_LT(r.max_rel_error, 1e-4);

  const Tensor ow = Tensor::normal({2, 10, 7}, 1.0, rng);
  const Tensor fused = Tensor::normal({2, 488}, 1.0, rng);
  r = homotion::testing::gradcheck([&] { return sum(m.object_head(fused) * ow); }, {fused, m.linear("object_fc").weight}, 1e-5,
                         30, 5);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Checkpoint, RoundTripGivesBitIdenticalPredictions) {
  HOGCNModel m(config(Variant::kFull));
  const Batch b = batch_of(3, m.config());
  m.forward(b);  // move running statistics off their initial values
  m.set_training(false);
  const auto before = m.forward(b);
  const auto dir = std::filesystem::temp_directory_path() / "homotion_test_model_ckpt";
  std::filesystem::remove_all(dir);
  m.save(dir, {{"epoch", 3}});
  HOGCNModel loaded = HOGCNModel::load(dir);
  loaded.set_training(false);
  const auto after = loaded.forward(b);
  EXPECT_TRUE(bit_equal(before.human, after.human));
  EXPECT_TRUE(bit_equal(before.delta, after.delta));
  EXPECT_TRUE(bit_equal(before.motion_prob, after.motion_prob));
  EXPECT_TRUE(bit_equal(before.object_keypoints, after.object_keypoints));
}

TEST(Checkpoint, RejectsMismatchedConfig) {
  HOGCNModel m(config(Variant::kFull));
  const auto dir = std::filesystem::temp_directory_path() / "homotion_test_model_mismatch";
  std::filesystem::remove_all(dir);
  m.save(dir);
  auto j = to_json(m.config());
  j["seed"] = 99;
  io::write_json(dir / "config.json", j);
  EXPECT_THROW(HOGCNModel::load(dir), DataError);
}
