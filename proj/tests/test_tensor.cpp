#include <gtest/gtest.h>

#include <Eigen/Core>
#include <Eigen/LU>
#include <cmath>
#include <cstring>
#include <fstream>
#include <filesystem>
#include <numbers>
#include <random>

#include "homotion/errors.hpp"
#include "homotion/tensor/checkpoint.hpp"
#include "homotion/tensor/ops.hpp"
#include "support/gradcheck.hpp"

using namespace homotion;
using namespace homotion::tensor;
using homotion::testing::gradcheck;

namespace {

// Weighted sum so that every output coordinate gets a distinct cotangent.
Tensor weighted_sum(const Tensor& y, const Tensor& weights) { return sum(mul(y, weights)); }

Tensor random_tensor(Shape shape, std::mt19937_64& rng) { return Tensor::uniform(std::move(shape), -1.0, 1.0, rng); }

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor b({2, 2}, {3, 4, 5, 6});
  auto c = matmul(eye, b);
  EXPECT_EQ(c.shape(), (Shape{2, 2}));
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{3, 4, 5, 6}));
}

TEST(Matmul, RowTimesColumn) {
  auto c = matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4}));
  EXPECT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(c.item(), 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor({2, 3}), Tensor({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2, 3) x (2, 3)"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  auto a = random_tensor({4, 5}, rng);
  auto b = random_tensor({5, 3}, rng);
  auto r = gradcheck([&] { return sum(matmul(a, b)); }, {a, b});
  EXPECT_EQ(r.checked, 35u);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Matmul, BroadcastBatchGradient) {
  std::mt19937_64 rng(12);
  auto a = random_tensor({2, 1, 3, 4}, rng);
  auto b = random_tensor({3, 4, 2}, rng);
  auto w = random_tensor({2, 3, 3, 2}, rng);
  auto out = matmul(a, b);
  EXPECT_EQ(out.shape(), (Shape{2, 3, 3, 2}));
  auto r = gradcheck([&] { return weighted_sum(matmul(a, b), w); }, {a, b});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(TemporalConv, UnitKernelIsIdentity) {
  std::mt19937_64 rng(3);
  auto x = random_tensor({2, 10, 3}, rng);
  Tensor w({2, 2, 1}, {1, 0, 0, 1});
  auto y = temporal_conv(x, w, Tensor({2}));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(TemporalConv, ZeroPaddingCountsTaps) {
  Tensor x({1, 10, 3}, 1.0);
  Tensor w({1, 1, 3}, 1.0);
  auto y = temporal_conv(x, w, Tensor({1}));
  for (std::size_t t = 0; t < 10; ++t) {
    for (std::size_t v = 0; v < 3; ++v) {
      EXPECT_DOUBLE_EQ(y[t * 3 + v], (t == 0 || t == 9) ? 2.0 : 3.0);
    }
  }
}

TEST(TemporalConv, EvenKernelIsConfigError) {
  EXPECT_THROW(temporal_conv(Tensor({1, 4, 2}), Tensor({1, 1, 4}), Tensor({1})), ConfigError);
}

TEST(TemporalConv, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  auto x = random_tensor({2, 10, 4}, rng);
  auto w = random_tensor({3, 2, 5}, rng);
  auto b = random_tensor({3}, rng);
  auto c = random_tensor({3, 10, 4}, rng);
  auto r = gradcheck([&] { return weighted_sum(temporal_conv(x, w, b), c); }, {x, w, b});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(TemporalConv, BatchedSlicesAreIndependent) {
  std::mt19937_64 rng(6);
  auto x = random_tensor({2, 3, 10, 4}, rng);
  auto w = random_tensor({3, 2, 5}, rng);
  auto b = random_tensor({3}, rng);
  auto y = temporal_conv(x, w, b);
  auto slice = reshape(narrow(x, 1, 1, 1), {2, 10, 4});
  auto y1 = temporal_conv(slice, w, b);
  auto expect = reshape(narrow(y, 1, 1, 1), {3, 10, 4});
  for (std::size_t i = 0; i < y1.numel(); ++i) EXPECT_NEAR(y1[i], expect[i], 1e-14);
}

TEST(Elementwise, SigmoidOfZeroIsHalf) { EXPECT_DOUBLE_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5); }

TEST(Elementwise, MeanOfConstantIsConstant) { EXPECT_DOUBLE_EQ(mean_pool(Tensor({2, 3}, 7.0)).item(), 7.0); }

TEST(Elementwise, ReluGradientAwayFromZero) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  Tensor x({4, 6});
  for (auto& v : x.data()) v = sign(rng) ? mag(rng) : -mag(rng);
  auto c = random_tensor({4, 6}, rng);
  auto r = gradcheck([&] { return weighted_sum(relu(x), c); }, {x});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Elementwise, ReluSubgradientAtZeroIsZero) {
  Tensor x({1}, {0.0});
  x.set_requires_grad();
  Tape tape;
  TapeScope scope(tape);
  tape.backward(sum(relu(x)));
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Elementwise, BroadcastingAddMulSubGradients) {
  std::mt19937_64 rng(9);
  auto a = random_tensor({3, 1, 4}, rng);
  auto b = random_tensor({2, 4}, rng);
  auto s = random_tensor({1}, rng);
  auto c = random_tensor({3, 2, 4}, rng);
  auto r = gradcheck([&] { return weighted_sum(sub(mul(add(a, b), a), scale(mul(b, s), 0.7)), c); }, {a, b, s});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Elementwise, SigmoidGradient) {
  std::mt19937_64 rng(10);
  auto x = Tensor::uniform({5, 3}, -3.0, 3.0, rng);
  auto c = random_tensor({5, 3}, rng);
  EXPECT_LT(gradcheck([&] { return weighted_sum(sigmoid(x), c); }, {x}).max_rel_error, 1e-6);
}

TEST(Elementwise, ConcatMismatchIsDimensionError) {
  EXPECT_THROW(concat({Tensor({2, 3}), Tensor({3, 3})}, 1), DimensionError);
}

TEST(Elementwise, ConcatNarrowPermuteGradients) {
  std::mt19937_64 rng(13);
  auto a = random_tensor({2, 3, 4}, rng);
  auto b = random_tensor({2, 2, 4}, rng);
  auto c = random_tensor({4, 2, 2}, rng);
  auto r = gradcheck(
      [&] {
        auto cat = concat({a, b}, 1);                 // (2, 5, 4)
        auto cut = narrow(cat, 1, 1, 2);              // (2, 2, 4)
        return weighted_sum(permute(cut, {2, 0, 1}), c);  // (4, 2, 2)
      },
      {a, b});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Elementwise, ReductionAndBroadcastGradients) {
  std::mt19937_64 rng(14);
  auto x = random_tensor({3, 4, 5}, rng);
  auto c1 = random_tensor({4}, rng);
  auto c2 = random_tensor({3, 1, 5}, rng);
  auto c3 = random_tensor({3, 2, 4, 5}, rng);
  auto r = gradcheck(
      [&] {
        auto m = mean_pool(x, {0, 2});
        auto s = sum(x, {1}, true);
        auto bc = broadcast(x, 1, 2);
        auto bt = broadcast_to(m, {3, 4});
        return add(add(weighted_sum(m, c1), weighted_sum(s, c2)),
                   add(weighted_sum(bc, c3), sum(mul(bt, bt))));
      },
      {x});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Elementwise, L2NormGradient) {
  std::mt19937_64 rng(15);
  auto x = random_tensor({4, 3}, rng);
  auto c = random_tensor({4}, rng);
  EXPECT_LT(gradcheck([&] { return weighted_sum(l2norm(x), c); }, {x}).max_rel_error, 1e-6);
}

TEST(BatchNorm, TrainingGradientAndRunningStats) {
  std::mt19937_64 rng(16);
  auto x = random_tensor({3, 2, 5, 4}, rng);
  auto gamma = Tensor::uniform({3}, 0.5, 1.5, rng);
  auto beta = random_tensor({3}, rng);
  auto c = random_tensor({3, 2, 5, 4}, rng);
  BatchNormState state{Tensor({3}, 0.0), Tensor({3}, 1.0)};
  auto r = gradcheck([&] { return weighted_sum(batch_norm(x, gamma, beta, state, true), c); }, {x, gamma, beta});
  EXPECT_LT(r.max_rel_error, 1e-6);

  // Normalized channels have zero mean and unit (biased) variance.
  BatchNormState fresh{Tensor({3}, 0.0), Tensor({3}, 1.0)};
  NoGradScope ng;
  auto y = batch_norm(x, Tensor({3}, 1.0), Tensor({3}, 0.0), fresh, true, 0.1, 0.0);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 40; ++i) m += y[ch * 40 + i];
    m /= 40;
    for (std::size_t i = 0; i < 40; ++i) v += (y[ch * 40 + i] - m) * (y[ch * 40 + i] - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 40, 1.0, 1e-12);
    EXPECT_NE(fresh.running_mean[ch], 0.0);
  }
}

TEST(BatchNorm, EvaluationUsesFrozenStatistics) {
  BatchNormState state{Tensor({1}, {2.0}), Tensor({1}, {4.0})};
  auto y = batch_norm(Tensor({1, 2}, {2.0, 6.0}), Tensor({1}, 1.0), Tensor({1}, 0.0), state, false, 0.1, 0.0);
  EXPECT_DOUBLE_EQ(y[0], 0.0);
  EXPECT_DOUBLE_EQ(y[1], 2.0);
  EXPECT_DOUBLE_EQ(state.running_mean[0], 2.0);
}

TEST(Rodrigues, ZeroIsIdentity) {
  auto rot = rodrigues(Tensor({3}, 0.0));
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) EXPECT_EQ(rot[3 * i + j], i == j ? 1.0 : 0.0);
  }
}

TEST(Rodrigues, QuarterTurnAboutZ) {
  auto rot = rodrigues(Tensor({3}, {0.0, 0.0, std::numbers::pi / 2}));
  // R * (1, 0, 0) is the first column.
  EXPECT_NEAR(rot[0], 0.0, 1e-12);
  EXPECT_NEAR(rot[3], 1.0, 1e-12);
  EXPECT_NEAR(rot[6], 0.0, 1e-12);
}

TEST(Rodrigues, OrthogonalWithUnitDeterminant) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    auto r = random_tensor({3}, rng);
    const double n = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
    for (auto& v : r.data()) v *= 0.7 / n;
    auto m = rodrigues(r);
    Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>> rm(m.data().data());
    EXPECT_LT((rm * rm.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_NEAR(rm.determinant(), 1.0, 1e-10);
  }
}

TEST(Rodrigues, GradientIncludingSmallAngles) {
  std::mt19937_64 rng(18);
  auto r = random_tensor({4, 3}, rng);
  for (std::size_t i = 0; i < 3; ++i) r[i] *= 1e-6;  // first vector in the series branch
  auto c = random_tensor({4, 3, 3}, rng);
  EXPECT_LT(gradcheck([&] { return weighted_sum(rodrigues(r), c); }, {r}).max_rel_error, 1e-6);
}

TEST(Backward, SumGivesOnes) {
  Tensor x({3}, {1, 2, 3});
  x.set_requires_grad();
  Tape tape;
  TapeScope scope(tape);
  tape.backward(sum(x));
  for (int i = 0; i < 3; ++i) EXPECT_EQ(x.grad()[i], 1.0);
}

TEST(Backward, SquareGivesTwiceInput) {
  Tensor x({3}, {1, 2, 3});
  x.set_requires_grad();
  Tape tape;
  TapeScope scope(tape);
  tape.backward(sum(mul(x, x)));
  EXPECT_EQ(x.grad()[0], 2.0);
  EXPECT_EQ(x.grad()[1], 4.0);
  EXPECT_EQ(x.grad()[2], 6.0);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tensor x({3}, 1.0);
  x.set_requires_grad();
  Tape tape;
  TapeScope scope(tape);
  auto y = scale(x, 2.0);
  EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(Backward, EmptyTapeIsContractError) {
  Tape tape;
  EXPECT_THROW(tape.backward(Tensor::scalar(1.0)), ContractError);
}

TEST(Backward, GradientsAccumulateAcrossUses) {
  Tensor x({2}, {1.5, -2.0});
  x.set_requires_grad();
  Tape tape;
  TapeScope scope(tape);
  tape.backward(add(sum(x), sum(scale(x, 3.0))));
  EXPECT_EQ(x.grad()[0], 4.0);
  EXPECT_EQ(x.grad()[1], 4.0);
}

TEST(Backward, LinearityOfCombinedLosses) {
  std::mt19937_64 rng(19);
  auto x = random_tensor({6}, rng);
  auto f = [&] { return sum(mul(sigmoid(x), x)); };
  auto g = [&] { return sum(relu(scale(x, -2.0))); };
  auto grad_of = [&](const std::function<Tensor()>& fn) {
    x.set_requires_grad();
    x.zero_grad();
    Tape tape;
    TapeScope scope(tape);
    tape.backward(fn());
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  const double a = 0.37, b = -1.9;
  const auto gf = grad_of(f);
  const auto gg = grad_of(g);
  const auto gc = grad_of([&] { return add(scale(f(), a), scale(g(), b)); });
  for (std::size_t i = 0; i < gc.size(); ++i) EXPECT_NEAR(gc[i], a * gf[i] + b * gg[i], 1e-15);
}

TEST(Backward, TapeReplaysEachEntryOnce) {
  Tensor x({2}, {1.0, 2.0});
  x.set_requires_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    auto y = sum(mul(x, x));
    EXPECT_EQ(tape.size(), 2u);
    tape.backward(y);
  }
  EXPECT_EQ(x.grad()[1], 4.0);
  tape.clear();
  EXPECT_TRUE(tape.empty());
}

TEST(Backward, NoRecordingWithoutActiveTape) {
  Tensor x({2}, 1.0);
  x.set_requires_grad();
  auto y = sum(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Backward, DeterministicAcrossRuns) {
  auto run = [] {
    std::mt19937_64 rng(21);
    auto x = random_tensor({3, 4, 6}, rng);
    auto w = random_tensor({2, 3, 3}, rng);
    auto b = random_tensor({2}, rng);
    w.set_requires_grad();
    Tape tape;
    TapeScope scope(tape);
    auto y = temporal_conv(x, w, b);
    tape.backward(sum(mul(y, y)));
    return std::pair(std::vector<double>(y.data().begin(), y.data().end()),
                     std::vector<double>(w.grad().begin(), w.grad().end()));
  };
  EXPECT_EQ(run(), run());
}

TEST(Checkpoint, RoundTripIsBitExact) {
  std::mt19937_64 rng(22);
  std::vector<NamedArray> entries = {{"a.weight", random_tensor({3, 4}, rng)}, {"b", random_tensor({5}, rng)}};
  entries[1].value[0] = -0.0;
  entries[1].value[1] = 1e-310;
  const auto path = std::filesystem::temp_directory_path() / "homotion_ckpt_test.ckpt";
  save_checkpoint(path, entries, {{"note", "x"}}, "abc123");
  const auto ck = load_checkpoint(path);
  EXPECT_EQ(ck.config_hash, "abc123");
  EXPECT_EQ(ck.meta.at("note"), "x");
  ASSERT_EQ(ck.entries.size(), 2u);
  for (std::size_t e = 0; e < 2; ++e) {
    EXPECT_EQ(ck.entries[e].name, entries[e].name);
    EXPECT_EQ(ck.entries[e].value.shape(), entries[e].value.shape());
    EXPECT_EQ(std::memcmp(ck.entries[e].value.data().data(), entries[e].value.data().data(),
                          entries[e].value.numel() * sizeof(double)),
              0);
  }
  EXPECT_THROW(ck.at("missing"), DataError);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsForeignFile) {
  const auto path = std::filesystem::temp_directory_path() / "homotion_not_ckpt.bin";
  { std::ofstream(path) << "hello world, definitely not a checkpoint"; }
  EXPECT_THROW(load_checkpoint(path), DataError);
  std::filesystem::remove(path);
}
