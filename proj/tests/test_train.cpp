#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "sprnet/gradcheck_suite.hpp"
#include "sprnet/synth.hpp"
#include "test_util.hpp"

namespace sprnet {
namespace {

TEST(OpGradcheck, EveryRegisteredOpPasses) {
  ASSERT_GE(gradcheck_ops().size(), 20u);
  for (const auto& op : gradcheck_ops()) {
    const auto r = run_op_gradcheck(op, 15, 1e-5, 9);
    EXPECT_TRUE(r.passed) << op.name << " " << r.max_rel_error;
  }
}

TEST(NetworkGradcheck, MicroConfigWholeLoss) {
  // seed 1 puts one decoder relu input within eps of zero; any kink-free draw works
  const auto r = network_gradcheck(2, 1e-6, 1e-4);
  EXPECT_GT(r.positives, 0u);
  EXPECT_GT(r.mask_samples, 0u);
  EXPECT_EQ(r.report.coordinates, r.parameters);
  EXPECT_TRUE(r.report.passed) << r.report.max_rel_error << " at " << r.report.worst_index;
}

std::vector<PreparedSample<float>> micro_samples(const SprNet<float>& net, int count, const TrainConfig& tc) {
  SceneSpec spec;
  spec.image_size = 32;
  spec.min_size = 8;
  spec.max_size = 20;
  spec.max_instances = 2;
  std::vector<PreparedSample<float>> out;
  for (int i = 0; i < count; ++i) {
    const auto s = synth_scene(spec, std::uint64_t(i));
    out.push_back(prepare_sample<float>(net.anchors(), s.image, s.instances, tc));
  }
  return out;
}

TEST(TrainStep, ZeroLearningRateLeavesParametersUnchanged) {
  SprNet<float> net(micro_model_config(), 2);
  TrainConfig tc;
  tc.adam.lr = 0;
  const auto samples = micro_samples(net, 2, tc);
  std::vector<std::vector<float>> before;
  for (const auto& e : net.store().entries()) before.emplace_back(e.value.data().begin(), e.value.data().end());
  const auto m = train_step(net, {&samples[0], &samples[1]}, tc, 1);
  EXPECT_GT(m.grad_norm, 0);
  for (std::size_t i = 0; i < before.size(); ++i)
    EXPECT_TRUE(std::equal(before[i].begin(), before[i].end(), net.store().entries()[i].value.data().begin()))
        << net.store().entries()[i].name;
}

TEST(TrainStep, ClippedNormIsBounded) {
  SprNet<double> net(micro_model_config(), 3);
  TrainConfig tc;
  tc.clip = 1e-3;
  tc.adam.lr = 0;
  SceneSpec spec;
  spec.image_size = 32;
  spec.min_size = 8;
  spec.max_size = 20;
  const auto s = synth_scene(spec, 4);
  const auto sample = prepare_sample<double>(net.anchors(), s.image, s.instances, tc);
  const auto m = train_step(net, {&sample}, tc, 1);
  EXPECT_GT(m.grad_norm, tc.clip);
  double post = 0;
  for (const auto& e : net.store().entries())
    for (double g : e.value.grad()) post += g * g;
  EXPECT_NEAR(std::sqrt(post), tc.clip, 1e-12);
}

TEST(TrainStep, DivergenceIsReported) {
  SprNet<float> net(micro_model_config(), 4);
  TrainConfig tc;
  tc.divergence_limit = 1e-9;
  const auto samples = micro_samples(net, 1, tc);
  EXPECT_THROW(train_step(net, {&samples[0]}, tc, 1), DivergenceError);
}

TEST(Train, OverfitsTinySetWithFallingAverage) {
  SprNet<float> net(micro_model_config(), 5);
  TrainConfig tc;
  tc.adam.lr = 3e-3;
  tc.steps = 50;
  tc.mask_sampling.iou_thresh = 0.5;
  const auto samples = micro_samples(net, 2, tc);
  std::vector<double> totals;
  train<float>(net, samples, tc, [&](const StepMetrics& m) { totals.push_back(m.total); });
  ASSERT_EQ(totals.size(), 50u);
  auto avg = [&](std::size_t from) { return std::accumulate(totals.begin() + from, totals.begin() + from + 10, 0.0) / 10; };
  EXPECT_LT(avg(40), avg(0));
  EXPECT_LT(avg(40), 0.5 * avg(0));
}

TEST(Train, SameSeedSameTrajectory) {
  TrainConfig tc;
  tc.adam.lr = 1e-3;
  tc.steps = 5;
  std::vector<double> a, b;
  for (auto* out : {&a, &b}) {
    SprNet<float> net(micro_model_config(), 6);
    const auto samples = micro_samples(net, 3, tc);
    train<float>(net, samples, tc, [&](const StepMetrics& m) { out->push_back(m.total); });
  }
  EXPECT_EQ(a, b);
}

TEST(EpochSampler, VisitsEveryIndexOncePerEpoch) {
  EpochSampler s(7, 1);
  for (int epoch = 0; epoch < 3; ++epoch) {
    auto idx = s.next(7);
    std::sort(idx.begin(), idx.end());
    for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(idx[i], i);
  }
  EXPECT_THROW(EpochSampler(0, 1), Error);
}

TEST(MetricsCsv, HeaderAndLine) {
  EXPECT_STREQ(metrics_csv_header(), "step,L_cls,L_reg,L_mask,total,grad_norm");
  StepMetrics m;
  m.step = 3;
  m.total = 1.5;
  EXPECT_EQ(metrics_csv_line(m), "3,0,0,0,1.5,0");
}

}  // namespace
}  // namespace sprnet
