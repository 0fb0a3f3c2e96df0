#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "lear/model.hpp"

using namespace lear;

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
  cfg.corr_levels = 4;
  cfg.corr_radius = 4;
  return cfg;
}

struct Rig {
  ModelConfig cfg;
  ModelWeights<double> weights;
  std::vector<double> depth, event;
};

Rig make_rig(std::uint64_t seed, ModelConfig cfg = tiny_cfg()) {
  Rig r;
  r.cfg = cfg;
  r.weights = init_model_weights<double>(cfg, seed);
  Rng rng(Rng::mix(seed, 1));
  r.depth.resize(static_cast<std::size_t>(cfg.height * cfg.width));
  r.event.resize(r.depth.size());
  for (auto& v : r.depth) v = rng.uniform(0, 1);
  for (auto& v : r.event) v = rng.uniform() < 0.1 ? rng.uniform(0.3, 1.0) : 0.0;
  return r;
}

ForwardOutputs<double> run_forward(Graph<double>& g, Rig& rig, int iters,
                                   bool trainable = false) {
  ParamBank<double> bank(g, rig.weights, trainable);
  auto depth = g.constant(Shape::bchw(1, 1, rig.cfg.height, rig.cfg.width), rig.depth);
  auto event = g.constant(Shape::bchw(1, 1, rig.cfg.height, rig.cfg.width), rig.event);
  return model_forward(bank, depth, event, rig.cfg, iters);
}

TEST(CffFuse, RestoresChannelCounts) {
  auto rig = make_rig(1);
  Graph<double> g;
  ParamBank<double> bank(g, rig.weights, false);
  auto f_ed = g.full(Shape::bchw(1, rig.cfg.edge_widths[1], 8, 8), 0.3);
  auto f_d = g.full(Shape::bchw(1, rig.cfg.flow_widths[1], 8, 8), -0.2);
  const auto out = cff_fuse(bank, 2, f_ed, f_d);
  EXPECT_EQ(out.edge.shape().c(), rig.cfg.edge_widths[1]);
  EXPECT_EQ(out.depth.shape().c(), rig.cfg.flow_widths[1]);
}

TEST(CffFuse, IdentityBypassExistsInWeightSpace) {
  auto rig = make_rig(2);
  const std::int64_t ce = rig.cfg.edge_widths[1], cd = rig.cfg.flow_widths[1];
  // edge conv = [I | 0], depth conv = [0 | I]
  {
    auto& p = rig.weights.at("cff.e2.w");
    std::fill(p.values.begin(), p.values.end(), 0.0);
    for (std::int64_t c = 0; c < ce; ++c) p.values[static_cast<std::size_t>(c * (ce + cd) + c)] = 1.0;
    auto& pb = rig.weights.at("cff.e2.b");
    (void)pb;
  }
  {
    auto& p = rig.weights.at("cff.d2.w");
    std::fill(p.values.begin(), p.values.end(), 0.0);
    for (std::int64_t c = 0; c < cd; ++c)
      p.values[static_cast<std::size_t>(c * (ce + cd) + ce + c)] = 1.0;
  }
  std::fill(rig.weights.at("cff.e2.b").values.begin(),
            rig.weights.at("cff.e2.b").values.end(), 0.0);
  std::fill(rig.weights.at("cff.d2.b").values.begin(),
            rig.weights.at("cff.d2.b").values.end(), 0.0);
  Graph<double> g;
  ParamBank<double> bank(g, rig.weights, false);
  Rng rng(3);
  std::vector<double> ev(static_cast<std::size_t>(ce * 64)), dv(static_cast<std::size_t>(cd * 64));
  for (auto& v : ev) v = rng.uniform(-1, 1);
  for (auto& v : dv) v = rng.uniform(-1, 1);
  auto f_ed = g.constant(Shape::bchw(1, ce, 8, 8), ev);
  auto f_d = g.constant(Shape::bchw(1, cd, 8, 8), dv);
  const auto out = cff_fuse(bank, 2, f_ed, f_d);
  for (std::size_t i = 0; i < ev.size(); ++i) EXPECT_DOUBLE_EQ(out.edge.values()[i], ev[i]);
  for (std::size_t i = 0; i < dv.size(); ++i) EXPECT_DOUBLE_EQ(out.depth.values()[i], dv[i]);
}

TEST(CffFuse, ZeroWeightsGiveZeroNotResidual) {
  auto rig = make_rig(4);
  for (const char* name : {"cff.e2.w", "cff.e2.b", "cff.d2.w", "cff.d2.b"}) {
    auto& p = rig.weights.at(name);
    std::fill(p.values.begin(), p.values.end(), 0.0);
  }
  Graph<double> g;
  ParamBank<double> bank(g, rig.weights, false);
  auto f_ed = g.full(Shape::bchw(1, rig.cfg.edge_widths[1], 8, 8), 0.9);
  auto f_d = g.full(Shape::bchw(1, rig.cfg.flow_widths[1], 8, 8), 0.7);
  const auto out = cff_fuse(bank, 2, f_ed, f_d);
  for (const double v : out.edge.values()) EXPECT_EQ(v, 0.0);
  for (const double v : out.depth.values()) EXPECT_EQ(v, 0.0);
}

TEST(IfrStep, ZeroFlowHeadKeepsFlow) {
  auto rig = make_rig(5);
  for (const char* name : {"ifr.head2.w", "ifr.head2.b"}) {
    auto& p = rig.weights.at(name);
    std::fill(p.values.begin(), p.values.end(), 0.0);
  }
  Graph<double> g;
  auto out = run_forward(g, rig, 3);
  for (const auto& f : out.flows_grid) {
    for (const double v : f.values()) EXPECT_EQ(v, 0.0);  // additive identity
  }
}

TEST(IfrStep, ChannelBookkeeping) {
  auto rig = make_rig(6);
  // F_C has levels*(2r+1)^2 channels; F_ED keeps the layer-4 edge width.
  EXPECT_EQ(rig.cfg.corr_channels(), 4 * 81);
  const auto& fuse = rig.weights.at("ifr.corr_fuse.w");
  EXPECT_EQ(fuse.shape.n(), rig.cfg.corr_channels());
  EXPECT_EQ(fuse.shape.c(), rig.cfg.corr_channels() + rig.cfg.edge4_channels());
  const auto& gru_w = rig.weights.at("ifr.edge_gru.update.w");
  EXPECT_EQ(gru_w.shape.n(), rig.cfg.edge4_channels() / 2);
}

TEST(Forward, SingleIterationProducesOnePair) {
  auto rig = make_rig(7);
  Graph<double> g;
  const auto out = run_forward(g, rig, 1);
  EXPECT_EQ(out.flows_full.size(), 1u);
  EXPECT_EQ(out.edges.size(), 1u);
}

TEST(Forward, PrefixDeterminism) {
  auto rig = make_rig(8);
  Graph<double> g1, g2;
  const auto a = run_forward(g1, rig, 4);
  const auto b = run_forward(g2, rig, 8);
  for (int n = 0; n < 4; ++n) {
    const auto va = a.flows_full[static_cast<std::size_t>(n)].values();
    const auto vb = b.flows_full[static_cast<std::size_t>(n)].values();
    ASSERT_EQ(va.size(), vb.size());
    for (std::size_t i = 0; i < va.size(); ++i) EXPECT_EQ(va[i], vb[i]);
    const auto ea = a.edges[static_cast<std::size_t>(n)].values();
    const auto eb = b.edges[static_cast<std::size_t>(n)].values();
    for (std::size_t i = 0; i < ea.size(); ++i) EXPECT_EQ(ea[i], eb[i]);
  }
}

TEST(Forward, RangeContracts) {
  auto rig = make_rig(9);
  Graph<double> g;
  const auto out = run_forward(g, rig, 3);
  for (const auto& p : out.edges) {
    for (const double v : p.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  for (const auto& f : out.flows_full) {
    for (const double v : f.values()) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Forward, FlowAdditivity) {
  // f^n - f^(n-1) must equal the flow-head output, i.e. consecutive 1/8-res
  // flows differ by a finite increment and repeated runs agree bit-exactly.
  auto rig = make_rig(10);
  Graph<double> g1, g2;
  const auto a = run_forward(g1, rig, 3);
  const auto b = run_forward(g2, rig, 3);
  for (int n = 0; n < 3; ++n) {
    const auto va = a.flows_grid[static_cast<std::size_t>(n)].values();
    const auto vb = b.flows_grid[static_cast<std::size_t>(n)].values();
    for (std::size_t i = 0; i < va.size(); ++i) EXPECT_EQ(va[i], vb[i]);
  }
}

TEST(Forward, AblatedFusionEqualsFusionFreePath) {
  // Force F_ED to zero (zero edge encoder), set the fusion convs to
  // identity-on-F_C, and compare against the use_cff=false/use_ifr=false
  // wiring: flows must agree bit-exactly.
  auto rig = make_rig(11);
  // zero edge encoder -> edge features are exactly zero
  for (int i = 1; i <= 5; ++i) {
    for (const std::string suffix : {".w", ".b"}) {
      auto& p = rig.weights.at("edge.enc" + std::to_string(i) + suffix);
      std::fill(p.values.begin(), p.values.end(), 0.0);
    }
  }
  // CFF depth convs pass depth through; edge convs pick the (zero) edge part
  for (int layer = 2; layer <= 4; ++layer) {
    const std::int64_t ce = rig.cfg.edge_widths[layer - 1];
    const std::int64_t cd = rig.cfg.flow_widths[layer - 1];
    auto& pd = rig.weights.at("cff.d" + std::to_string(layer) + ".w");
    std::fill(pd.values.begin(), pd.values.end(), 0.0);
    for (std::int64_t c = 0; c < cd; ++c)
      pd.values[static_cast<std::size_t>(c * (ce + cd) + ce + c)] = 1.0;
    auto& pe = rig.weights.at("cff.e" + std::to_string(layer) + ".w");
    std::fill(pe.values.begin(), pe.values.end(), 0.0);
    for (std::int64_t c = 0; c < ce; ++c)
      pe.values[static_cast<std::size_t>(c * (ce + cd) + c)] = 1.0;
    for (const std::string n : {"cff.e", "cff.d"}) {
      auto& pb = rig.weights.at(n + std::to_string(layer) + ".b");
      std::fill(pb.values.begin(), pb.values.end(), 0.0);
    }
  }
  // corr fusion = identity on the correlation channels
  {
    const std::int64_t cc = rig.cfg.corr_channels();
    const std::int64_t ci = cc + rig.cfg.edge4_channels();
    auto& p = rig.weights.at("ifr.corr_fuse.w");
    std::fill(p.values.begin(), p.values.end(), 0.0);
    for (std::int64_t c = 0; c < cc; ++c)
      p.values[static_cast<std::size_t>(c * ci + c)] = 1.0;
    auto& pb = rig.weights.at("ifr.corr_fuse.b");
    std::fill(pb.values.begin(), pb.values.end(), 0.0);
  }
  Graph<double> g_full, g_plain;
  auto fused_out = run_forward(g_full, rig, 4);
  Rig plain = rig;
  plain.cfg.use_cff = false;
  plain.cfg.use_ifr = false;
  auto plain_out = run_forward(g_plain, plain, 4);
  EXPECT_TRUE(plain_out.edges.empty());
  for (int n = 0; n < 4; ++n) {
    const auto va = fused_out.flows_full[static_cast<std::size_t>(n)].values();
    const auto vb = plain_out.flows_full[static_cast<std::size_t>(n)].values();
    ASSERT_EQ(va.size(), vb.size());
    for (std::size_t i = 0; i < va.size(); ++i) {
      ASSERT_EQ(va[i], vb[i]) << "iteration " << n << " element " << i;
    }
  }
}

Tensor<double> make_gt_like(Graph<double>& g, const ModelConfig& cfg, std::uint64_t seed,
                            Tensor<double>& mask_out, Tensor<double>& edge_out) {
  Rng rng(seed);
  const std::int64_t hw = cfg.height * cfg.width;
  std::vector<double> fgt(static_cast<std::size_t>(2 * hw)), mask(static_cast<std::size_t>(hw)),
      edge(static_cast<std::size_t>(hw));
  for (std::int64_t i = 0; i < hw; ++i) {
    const bool valid = rng.uniform() < 0.5;
    mask[static_cast<std::size_t>(i)] = valid ? 1.0 : 0.0;
    fgt[static_cast<std::size_t>(i)] = valid ? rng.uniform(-3, 3) : 0.0;
    fgt[static_cast<std::size_t>(hw + i)] = valid ? rng.uniform(-3, 3) : 0.0;
    edge[static_cast<std::size_t>(i)] = rng.uniform() < 0.2 ? 1.0 : 0.0;
  }
  mask_out = g.constant(Shape::bchw(1, 1, cfg.height, cfg.width), mask);
  edge_out = g.constant(Shape::bchw(1, 1, cfg.height, cfg.width), edge);
  return g.constant(Shape::bchw(1, 2, cfg.height, cfg.width), fgt);
}

TEST(TotalLoss, PerfectPredictionsNearZero) {
  auto rig = make_rig(12);
  Graph<double> g;
  auto out = run_forward(g, rig, 2);
  // ground truth = the model's own predictions, edge gt thresholded at 0.5
  const auto f_vals = out.flows_full[1].values();
  std::vector<double> fgt(f_vals.begin(), f_vals.end());
  const std::int64_t hw = rig.cfg.height * rig.cfg.width;
  std::vector<double> mask(static_cast<std::size_t>(hw), 1.0);
  // use both iterations' flows equal by zeroing the flow head: instead build
  // gt from the final flow and mask only pixels where both agree
  Graph<double> g2;
  auto out2 = run_forward(g2, rig, 2);
  const auto f1 = out2.flows_full[0].values();
  for (std::int64_t i = 0; i < hw; ++i) {
    const double d0 = f1[static_cast<std::size_t>(i)] - fgt[static_cast<std::size_t>(i)];
    const double d1 =
        f1[static_cast<std::size_t>(hw + i)] - fgt[static_cast<std::size_t>(hw + i)];
    if (std::abs(d0) > 1e-9 || std::abs(d1) > 1e-9) mask[static_cast<std::size_t>(i)] = 0.0;
  }
  // edge gt: make it match the HED fused and per-iteration maps only loosely;
  // here we instead verify the flow part vanishes and the edge part is finite
  auto f_gt = g2.constant(Shape::bchw(1, 2, rig.cfg.height, rig.cfg.width), fgt);
  auto m_t = g2.constant(Shape::bchw(1, 1, rig.cfg.height, rig.cfg.width), mask);
  std::vector<double> edge_gt(static_cast<std::size_t>(hw), 0.0);
  auto e_t = g2.constant(Shape::bchw(1, 1, rig.cfg.height, rig.cfg.width), edge_gt);
  const double with_beta0 = total_loss(out2, f_gt, m_t, e_t, 1.0, 0.0, 0.8).item();
  // flow term vanishes on the masked set; only the HED term remains
  Tensor<double> hed_only = edge_loss(out2.hed.fused, e_t);
  for (const auto& s : out2.hed.side) hed_only = add(hed_only, edge_loss(s, e_t));
  EXPECT_NEAR(with_beta0, hed_only.item() / 6.0, 1e-9);
}

TEST(TotalLoss, BetaZeroDropsEdgeIterTermAndDoublingBetaDoublesIt) {
  auto rig = make_rig(13);
  Graph<double> g;
  auto out = run_forward(g, rig, 3);
  Tensor<double> mask, edge;
  auto f_gt = make_gt_like(g, rig.cfg, 99, mask, edge);
  const double l0 = total_loss(out, f_gt, mask, edge, 1.0, 0.0, 0.8).item();
  const double l1 = total_loss(out, f_gt, mask, edge, 1.0, 100.0, 0.8).item();
  const double l2 = total_loss(out, f_gt, mask, edge, 1.0, 200.0, 0.8).item();
  EXPECT_NEAR(l2 - l1, l1 - l0, 1e-6 * std::max(1.0, std::abs(l1)));
  EXPECT_GT(l1, l0);
}

TEST(TotalLoss, GradientReachesEveryParameterGroup) {
  auto rig = make_rig(14);
  Graph<double> g;
  ParamBank<double> bank(g, rig.weights, true);
  auto depth = g.constant(Shape::bchw(1, 1, rig.cfg.height, rig.cfg.width), rig.depth);
  auto event = g.constant(Shape::bchw(1, 1, rig.cfg.height, rig.cfg.width), rig.event);
  auto out = model_forward(bank, depth, event, rig.cfg, 2);
  Tensor<double> mask, edge;
  auto f_gt = make_gt_like(g, rig.cfg, 123, mask, edge);
  auto loss = total_loss(out, f_gt, mask, edge, 1.0, 100.0, 0.8);
  g.backward(loss);
  const auto grads = bank.grads();
  // every parameter group (by prefix) must receive a nonzero gradient
  std::map<std::string, double> group_norm;
  for (const auto& [name, gvec] : grads) {
    if (name.rfind("meta.", 0) == 0) continue;
    const std::string group = name.substr(0, name.find('.'));
    double& acc = group_norm[group];
    for (const double v : gvec) acc += std::abs(v);
  }
  for (const auto& [group, norm] : group_norm) {
    EXPECT_GT(norm, 0.0) << "dead parameter group: " << group;
  }
}

TEST(ConfigMeta, EmbedExtractRoundTrip) {
  const auto cfg = tiny_cfg();
  auto w = init_model_weights<float>(cfg, 5);
  const auto back = extract_config(w);
  EXPECT_EQ(back.width, cfg.width);
  EXPECT_EQ(back.height, cfg.height);
  EXPECT_EQ(back.edge_widths, cfg.edge_widths);
  EXPECT_EQ(back.flow_widths, cfg.flow_widths);
  EXPECT_EQ(back.use_cff, cfg.use_cff);
  check_config_match(w, cfg);  // no throw
  ModelConfig other = cfg;
  other.feat_channels = 16;
  other.flow_widths[4] = 16;
  try {
    check_config_match(w, other);
    FAIL() << "expected mismatch";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("feat_channels"), std::string::npos);
  }
}

TEST(FullForward, GradientSpotCheck) {
  // small FD sanity check on the full network (the acceptance suite runs the
  // full 20-instance version)
  ModelConfig cfg = tiny_cfg();
  for (int inst = 0; inst < 2; ++inst) {
    auto weights = init_model_weights<double>(cfg, 100 + inst);
    Rng rng(200 + inst);
    const std::int64_t hw = cfg.height * cfg.width;
    std::vector<double> depth(static_cast<std::size_t>(hw)), event(depth.size());
    for (auto& v : depth) v = rng.uniform(0, 1);
    for (auto& v : event) v = rng.uniform() < 0.15 ? rng.uniform(0.2, 1.0) : 0.0;
    std::vector<double> fgt(static_cast<std::size_t>(2 * hw)), mask(static_cast<std::size_t>(hw)),
        edge(static_cast<std::size_t>(hw));
    for (std::int64_t i = 0; i < hw; ++i) {
      mask[static_cast<std::size_t>(i)] = rng.uniform() < 0.5 ? 1.0 : 0.0;
      fgt[static_cast<std::size_t>(i)] = rng.uniform(-2, 2);
      fgt[static_cast<std::size_t>(hw + i)] = rng.uniform(-2, 2);
      edge[static_cast<std::size_t>(i)] = rng.uniform() < 0.2 ? 1.0 : 0.0;
    }
    const auto eval = [&](ModelWeights<double>& w, bool want_grad,
                          std::map<std::string, std::vector<double>>* grads) {
      Graph<double> g;
      ParamBank<double> bank(g, w, want_grad);
      auto d_t = g.constant(Shape::bchw(1, 1, cfg.height, cfg.width), depth);
      auto e_t = g.constant(Shape::bchw(1, 1, cfg.height, cfg.width), event);
      auto out = model_forward(bank, d_t, e_t, cfg, 2);
      auto f_t = g.constant(Shape::bchw(1, 2, cfg.height, cfg.width), fgt);
      auto m_t = g.constant(Shape::bchw(1, 1, cfg.height, cfg.width), mask);
      auto eg_t = g.constant(Shape::bchw(1, 1, cfg.height, cfg.width), edge);
      auto loss = total_loss(out, f_t, m_t, eg_t, 1.0, 100.0, 0.8);
      const double v = loss.item();
      if (want_grad) {
        g.backward(loss);
        *grads = bank.grads();
      }
      return v;
    };
    std::map<std::string, std::vector<double>> grads;
    eval(weights, true, &grads);
    // probe a few parameters across groups
    Rng pick(300 + inst);
    int checked = 0;
    for (const char* name : {"ifr.gru.update.w", "cff.d3.w", "edge.enc2.w", "flow.enc4.w",
                             "ifr.head2.w", "event.enc1.w"}) {
      auto& p = weights.at(name);
      const std::size_t j = static_cast<std::size_t>(pick.uniform_int(p.values.size()));
      const double v0 = p.values[j];
      const double h = 1e-4;
      p.values[j] = v0 + h;
      const double fp = eval(weights, false, nullptr);
      p.values[j] = v0 - h;
      const double fm = eval(weights, false, nullptr);
      p.values[j] = v0;
      const double fd = (fp - fm) / (2 * h);
      const double an = grads.at(name)[j];
      EXPECT_LT(std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-3}), 1e-3)
          << name << "[" << j << "] inst " << inst;
      ++checked;
    }
    EXPECT_EQ(checked, 6);
  }
}

}  // namespace
