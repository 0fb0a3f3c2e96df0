#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "lear/edge_net.hpp"

using namespace lear;
using leartest::grad_check;
using leartest::GradCheckSpec;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.width = 64;
  cfg.height = 64;
  cfg.feat_channels = 8;
  cfg.hidden_channels = 8;
  cfg.edge_widths = {4, 6, 8, 10, 12};
  cfg.flow_widths = {6, 6, 8, 8, 8};
  cfg.flow_enc_channels = 4;
  cfg.head_channels = 6;
  return cfg;
}

TEST(EdgeForward, ShapeAndRangeContract) {
  const auto cfg = tiny_cfg();
  Graph<float> g;
  ModelWeights<float> w;
  Rng rng(1);
  init_edge_params(w, cfg, rng);
  ParamBank<float> bank(g, w, false);
  std::vector<float> dv(64 * 64);
  Rng vr(2);
  for (auto& v : dv) v = static_cast<float>(vr.uniform(0, 1));
  auto depth = g.constant(Shape::bchw(1, 1, 64, 64), dv);
  const auto out = edge_forward(bank, depth, cfg);
  EXPECT_EQ(out.fused.shape(), Shape::bchw(1, 1, 64, 64));
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(out.side[i].shape(), Shape::bchw(1, 1, 64, 64));
    // encoder resolutions (1, 1/2, 1/4, 1/8, 1/16)
    EXPECT_EQ(out.features[i].shape().h(), 64 >> i);
    EXPECT_EQ(out.features[i].shape().c(), cfg.edge_widths[i]);
    for (const float v : out.side[i].values()) {
      EXPECT_GE(v, 0.f);
      EXPECT_LE(v, 1.f);
    }
  }
}

TEST(EdgeForward, ZeroWeightsGiveHalfEverywhere) {
  const auto cfg = tiny_cfg();
  Graph<float> g;
  ModelWeights<float> w;
  Rng rng(3);
  init_edge_params(w, cfg, rng);
  for (auto& [name, p] : w.params) std::fill(p.values.begin(), p.values.end(), 0.f);
  ParamBank<float> bank(g, w, false);
  auto depth = g.full(Shape::bchw(1, 1, 64, 64), 0.5f);
  const auto out = edge_forward(bank, depth, cfg);
  for (const float v : out.fused.values()) EXPECT_FLOAT_EQ(v, 0.5f);
  for (int i = 0; i < 5; ++i)
    for (const float v : out.side[i].values()) EXPECT_FLOAT_EQ(v, 0.5f);
}

TEST(EdgeForward, IndivisibleExtentThrowsWithPadHint) {
  const auto cfg = tiny_cfg();
  Graph<float> g;
  ModelWeights<float> w;
  Rng rng(4);
  init_edge_params(w, cfg, rng);
  ParamBank<float> bank(g, w, false);
  auto depth = g.zeros(Shape::bchw(1, 1, 60, 64));
  try {
    edge_forward(bank, depth, cfg);
    FAIL() << "expected extent error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("pad"), std::string::npos);
  }
}

TEST(BalanceWeight, BoundaryAndCounts) {
  Image all_zero(10, 10);
  EXPECT_DOUBLE_EQ(balance_weight(all_zero), 1.0);

  Image half(10, 10);
  for (std::int64_t i = 0; i < 50; ++i) half.v[i] = 1.f;
  EXPECT_DOUBLE_EQ(balance_weight(half), 0.5);

  Image sparse(10, 10);
  for (std::int64_t i = 0; i < 10; ++i) sparse.v[i * 7 % 100] = 1.f;
  EXPECT_DOUBLE_EQ(balance_weight(sparse), 0.9);
}

TEST(BalanceWeight, RejectsNonBinary) {
  Image img(2, 2);
  img.v[0] = 0.5f;
  EXPECT_THROW(balance_weight(img), Error);
}

TEST(EdgeLoss, PerfectPredictionNearZero) {
  Graph<double> g;
  Rng rng(5);
  std::vector<double> gt(64);
  for (auto& v : gt) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
  auto gt_t = g.constant(Shape::bchw(1, 1, 8, 8), gt);
  auto pred = g.constant(Shape::bchw(1, 1, 8, 8), gt);
  EXPECT_LT(edge_loss(pred, gt_t).item(), 1e-5);
}

TEST(EdgeLoss, HalfPredictionOnAllZeroGt) {
  // w = 1 kills the non-edge term; the edge term is vacuous: loss = 0.
  Graph<double> g;
  auto gt = g.zeros(Shape::bchw(1, 1, 2, 2));
  auto pred = g.full(Shape::bchw(1, 1, 2, 2), 0.5);
  EXPECT_DOUBLE_EQ(edge_loss(pred, gt).item(), 0.0);
}

TEST(EdgeLoss, SinglePixelClosedForm) {
  Graph<double> g;
  auto gt = g.full(Shape::bchw(1, 1, 1, 1), 1.0);
  auto pred = g.full(Shape::bchw(1, 1, 1, 1), 0.5);
  EXPECT_DOUBLE_EQ(edge_loss_weighted(pred, gt, {0.0}).item(), 0.0);
  EXPECT_NEAR(edge_loss_weighted(pred, gt, {0.5}).item(), 0.5 * std::log(2.0), 1e-12);
}

TEST(EdgeLoss, NonNegativeAndZeroOnlyAtMatch) {
  Graph<double> g;
  Rng rng(6);
  std::vector<double> gt(36), pred(36);
  for (std::size_t i = 0; i < 36; ++i) {
    gt[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
    pred[i] = rng.uniform(0.05, 0.95);
  }
  auto gt_t = g.constant(Shape::bchw(1, 1, 6, 6), gt);
  auto pred_t = g.constant(Shape::bchw(1, 1, 6, 6), pred);
  EXPECT_GT(edge_loss(pred_t, gt_t).item(), 0.0);
}

TEST(EdgeLoss, ShapeMismatchThrows) {
  Graph<double> g;
  auto gt = g.zeros(Shape::bchw(1, 1, 4, 4));
  auto pred = g.zeros(Shape::bchw(1, 1, 4, 5));
  EXPECT_THROW(edge_loss(pred, gt), Error);
}

TEST(EdgeLoss, GradientWrtLogitsMatchesFiniteDifferences) {
  for (int inst = 0; inst < 20; ++inst) {
    GradCheckSpec spec;
    spec.shapes = {Shape::bchw(1, 1, 4, 5)};
    spec.build = [inst](Graph<double>& g, const std::vector<Tensor<double>>& in) {
      Rng grng(500 + inst);
      std::vector<double> gt(20);
      for (auto& v : gt) v = grng.uniform() < 0.35 ? 1.0 : 0.0;
      auto gt_t = g.constant(Shape::bchw(1, 1, 4, 5), gt);
      return edge_loss(sigmoid(in[0]), gt_t);
    };
    auto res = grad_check(600 + inst, spec);
    EXPECT_LT(res.max_rel_err, 1e-3) << "instance " << inst;
    EXPECT_GT(res.checked, 0);
  }
}

TEST(EdgeBranch, OverfitsOneSampleMonotonically) {
  // gradient descent on a single fixture raster decreases the loss for >= 50
  // steps
  const auto cfg = tiny_cfg();
  ModelWeights<double> w;
  Rng rng(7);
  init_edge_params(w, cfg, rng);
  std::vector<double> depth(64 * 64), gt(64 * 64, 0.0);
  Rng vr(8);
  for (std::int64_t y = 0; y < 64; ++y) {
    for (std::int64_t x = 0; x < 64; ++x) {
      depth[y * 64 + x] = (x < 32 ? 0.4 : 0.8) + 0.01 * vr.uniform();
      if (x == 31 || x == 32) gt[y * 64 + x] = 1.0;
    }
  }
  AdamState<double> st;
  double prev = 1e30;
  for (int step = 0; step < 55; ++step) {
    Graph<double> g;
    ParamBank<double> bank(g, w, true);
    auto depth_t = g.constant(Shape::bchw(1, 1, 64, 64), depth);
    auto gt_t = g.constant(Shape::bchw(1, 1, 64, 64), gt);
    const auto out = edge_forward(bank, depth_t, cfg);
    Tensor<double> loss = edge_loss(out.fused, gt_t);
    for (const auto& side : out.side) loss = add(loss, edge_loss(side, gt_t));
    loss = scale(loss, 1.0 / 6.0);
    const double now = loss.item();
    EXPECT_LT(now, prev + 1e-4) << "step " << step;  // non-increasing trend
    prev = now;
    g.backward(loss);
    adam_step(w, bank.grads(), st, 3e-3, 0.0);
  }
  EXPECT_LT(prev, 0.2);
}

}  // namespace
