#include <gtest/gtest.h>

#include "lois/training.hpp"

using namespace lois;

namespace {

ModelDims tiny_dims() {
  ModelDims d;
  d.L = 6;
  d.n = 5;
  d.h = 4;
  d.gamma = 3;
  d.gamma_att = 2;
  d.heads = 2;
  d.m = 5;
  d.T = 3;
  return d;
}

Dataset labelled_data(const ModelDims& d, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  Dataset data;
  for (std::size_t i = 0; i < count; ++i) data.push_back({random_input(d, 1 + rng.below(4), 3, rng), rng.below(d.T)});
  return data;
}

bool same_params(const ModelParams& a, const ModelParams& b) {
  auto ta = a.tensors(), tb = b.tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i)
    if (ta[i].first != tb[i].first || *ta[i].second != *tb[i].second) return false;
  return true;
}

}  // namespace

TEST(Clip, GlobalNormRescales) {
  Mat a(1, 1), b(1, 1);
  a << 3.0;
  b << 4.0;
  const double norm = clip_gradients({{"a", &a}, {"b", &b}}, 0.25);
  EXPECT_DOUBLE_EQ(norm, 5.0);
  EXPECT_DOUBLE_EQ(a(0, 0), 0.15);
  EXPECT_DOUBLE_EQ(b(0, 0), 0.2);
}

TEST(Clip, BelowThresholdUntouched) {
  Mat a(1, 2);
  a << 0.1, -0.1;
  const Mat before = a;
  clip_gradients({{"a", &a}}, 0.25);
  EXPECT_EQ(a, before);
}

TEST(Clip, ElementwiseClamps) {
  Mat a(1, 3);
  a << 0.5, -0.1, -2.0;
  clip_gradients({{"a", &a}}, 0.25, ClipMode::Elementwise);
  EXPECT_EQ(a(0, 0), 0.25);
  EXPECT_EQ(a(0, 1), -0.1);
  EXPECT_EQ(a(0, 2), -0.25);
  EXPECT_THROW(clip_gradients({{"a", &a}}, 0.0), DomainError);
}

TEST(Sgd, MomentumAndWeightDecayByHand) {
  ModelParams p;
  p.inter.bc = Mat::Constant(1, 1, 1.0);
  ModelParams g = p.zeros_like();
  g.inter.bc(0, 0) = 0.5;
  OptimizerState s = make_optimizer(p);
  s.lr = 0.1;
  s.momentum = 0.9;
  s.weight_decay = 0.1;
  sgd_step(p, g, s);
  EXPECT_NEAR(p.inter.bc(0, 0), 0.94, 1e-15);
  sgd_step(p, g, s);
  // g' = 0.5 + 0.1·0.94, v = 0.9·0.6 + g', θ = 0.94 − 0.1·v
  EXPECT_NEAR(p.inter.bc(0, 0), 0.94 - 0.1 * (0.9 * 0.6 + 0.5 + 0.094), 1e-15);
  EXPECT_EQ(s.step, 2u);
}

TEST(Sgd, ZeroLearningRateIsIdentity) {
  auto p = init_params(tiny_dims(), ComposeOrder::IBQ, 1);
  const auto before = p;
  auto g = p;  // any non-zero gradient
  OptimizerState s = make_optimizer(p);
  s.lr = 0.0;
  for (int i = 0; i < 3; ++i) sgd_step(p, g, s);
  EXPECT_TRUE(same_params(p, before));
}

TEST(Warmup, LinearFromRatio) {
  EXPECT_DOUBLE_EQ(warmup(0, 10, 0.3, 1.0 / 3.0), 0.1);
  EXPECT_DOUBLE_EQ(warmup(5, 10, 0.3, 1.0 / 3.0), 0.2);
  EXPECT_DOUBLE_EQ(warmup(10, 10, 0.3, 1.0 / 3.0), 0.3);
  EXPECT_DOUBLE_EQ(warmup(500, 10, 0.3, 1.0 / 3.0), 0.3);
  EXPECT_DOUBLE_EQ(warmup(0, 4, 1.0, 2.0 / 3.0), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(warmup(2, 4, 1.0, 2.0 / 3.0), 2.0 / 3.0 + 1.0 / 6.0);
  EXPECT_DOUBLE_EQ(warmup(0, 0, 0.3, 1.0 / 3.0), 0.3);
}

TEST(Gradcheck, QuadraticIsExact) {
  Mat A(3, 3);
  A << 2.0, 0.5, 0.0, 0.5, 1.0, -0.3, 0.0, -0.3, 3.0;
  Mat x(3, 1);
  x << 0.4, -1.2, 0.7;
  auto loss = [&] { return 0.5 * (x.transpose() * A * x)(0, 0); };
  const Mat grad = A * x;
  auto r = check_gradients(loss, {{"x", &x}}, {&grad}, 1e-5, 1e-8);
  EXPECT_TRUE(r.passed) << r.worst();
  EXPECT_LE(r.worst(), 1e-8);
}

TEST(Gradcheck, CorruptedGradientFails) {
  auto p = init_params(tiny_dims(), ComposeOrder::IBQ, 3);
  Rng rng(3);
  auto in = random_input(p.dims, 3, 3, rng);
  const auto cache = forward(p, in);
  const auto lr = softmax_cross_entropy(cache.answer.logits, 1);
  auto g = backward(p, cache, lr.dlogits);
  Mat& gu = g.params.intra.block.U;
  Eigen::Index at = 0;
  Eigen::Map<Vec>(gu.data(), gu.size()).cwiseAbs().maxCoeff(&at);
  gu.data()[at] *= 1.001;
  auto wrt = p.tensors();
  std::vector<const Mat*> analytic;
  for (auto& [name, t] : g.params.tensors()) analytic.push_back(t);
  auto loss = [&] { return softmax_cross_entropy(forward(p, in).answer.logits, 1).loss; };
  auto r = check_gradients(loss, wrt, analytic, 1e-5, 1e-4);
  EXPECT_FALSE(r.passed);
  for (const auto& t : r.tensors) EXPECT_EQ(t.passed, t.name != "intra.U") << t.name;
}

TEST(Gradcheck, NonFiniteLossIsReported) {
  Mat x = Mat::Zero(1, 1);
  const Mat g = Mat::Zero(1, 1);
  auto r = check_gradients([] { return std::nan(""); }, {{"x", &x}}, {&g}, 1e-5, 1e-4);
  EXPECT_FALSE(r.passed);
  EXPECT_FALSE(r.diagnostic.empty());
}

TEST(Gradcheck, EveryOrderPasses) {
  for (auto order : kAllOrders)
    for (std::uint64_t seed = 0; seed < 2; ++seed) {
      auto r = gradcheck_model(tiny_dims(), order, 3, 4, seed);
      EXPECT_TRUE(r.passed) << order_name(order) << " seed " << seed << " worst " << r.worst();
    }
}

TEST(Gradcheck, PassesWithDropoutAndPadding) {
  ModelDims d = tiny_dims();
  d.mask_question_padding = true;
  auto p = init_params(d, ComposeOrder::IQB, 4);
  Rng rng(4);
  auto in = random_input(d, 3, 2, rng);
  in.q_valid = {true, true, true, false};
  auto r = gradcheck(p, in, 2, 1e-5, 1e-4, ForwardMode::training(0.3, 9));
  EXPECT_TRUE(r.passed) << r.worst();
  EXPECT_EQ(r.tensors.back().name, "input.q");
}

TEST(Gradcheck, EmptyInstanceView) {
  auto r = gradcheck_model(tiny_dims(), ComposeOrder::IBQ, 0, 3, 5);
  EXPECT_TRUE(r.passed) << r.worst();
}

TEST(Train, ZeroLearningRateKeepsInit) {
  TrainConfig c;
  c.dims = tiny_dims();
  c.lr = 0.0;
  c.epochs = 2;
  c.batch_size = 3;
  auto data = labelled_data(c.dims, 7, 1);
  auto r = train(data, c);
  EXPECT_TRUE(same_params(r.params, init_params(c.dims, c.order, c.seed)));
  ASSERT_EQ(r.log.size(), 2u);
  EXPECT_EQ(r.log[1].lr, 0.0);
  EXPECT_EQ(r.log[0].eval_loss, r.log[1].eval_loss);
}

TEST(Train, DeterministicAcrossThreadCounts) {
  TrainConfig c;
  c.dims = tiny_dims();
  c.lr = 0.05;
  c.epochs = 3;
  c.batch_size = 4;
  c.seed = 12;
  auto data = labelled_data(c.dims, 10, 2);
  auto a = train(data, c);
  auto b = train(data, c);
  c.threads = 3;
  auto t = train(data, c);
  EXPECT_TRUE(same_params(a.params, b.params));
  EXPECT_TRUE(same_params(a.params, t.params));
  for (std::size_t e = 0; e < a.log.size(); ++e) {
    EXPECT_EQ(a.log[e].train_loss, t.log[e].train_loss);
    EXPECT_EQ(a.log[e].eval_loss, t.log[e].eval_loss);
  }
  c.seed = 13;
  c.threads = 1;
  EXPECT_FALSE(same_params(a.params, train(data, c).params));
}

TEST(Train, WarmupLengthFollowsFraction) {
  TrainConfig c;
  c.dims = tiny_dims();
  c.lr = 0.3;
  c.epochs = 10;
  c.batch_size = 5;
  c.warmup_fraction = 0.5;  // 2 batches × 10 epochs → 10 warm-up steps
  auto data = labelled_data(c.dims, 10, 3);
  std::vector<double> lrs;
  auto r = train(data, c, [&](const EpochMetrics& m) { lrs.push_back(m.lr); });
  ASSERT_EQ(lrs.size(), 10u);
  // last step of epoch e is step 2e+1
  EXPECT_DOUBLE_EQ(lrs[0], warmup(1, 10, 0.3, 1.0 / 3.0));
  EXPECT_DOUBLE_EQ(lrs[3], warmup(7, 10, 0.3, 1.0 / 3.0));
  EXPECT_DOUBLE_EQ(lrs[5], 0.3);
  EXPECT_EQ(r.log.size(), 10u);
}

TEST(Train, RejectsBadInput) {
  TrainConfig c;
  c.dims = tiny_dims();
  EXPECT_THROW(train({}, c), DataError);
  auto data = labelled_data(c.dims, 2, 4);
  data[1].label = 3;
  EXPECT_THROW(train(data, c), DataError);
  c.batch_size = 0;
  EXPECT_THROW(train(labelled_data(c.dims, 2, 4), c), DomainError);
}

TEST(Evaluate, AccuracyAndPredictions) {
  auto p = init_params(tiny_dims(), ComposeOrder::IBQ, 6);
  auto data = labelled_data(p.dims, 6, 5);
  for (auto& s : data) s.label = forward(p, s.input).answer.predicted();
  auto e = evaluate(p, data);
  EXPECT_EQ(e.accuracy, 1.0);
  EXPECT_EQ(e.predictions.size(), 6u);
  EXPECT_GT(e.loss, 0.0);
}
