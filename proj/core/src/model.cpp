#include "lear/model.hpp"

#include <cmath>

namespace lear {

template <typename T>
CffOutputs<T> cff_fuse(ParamBank<T>& bank, int layer, const Tensor<T>& f_ed,
                       const Tensor<T>& f_d) {
  if (f_ed.shape().h() != f_d.shape().h() || f_ed.shape().w() != f_d.shape().w())
    throw Error("shape", "cff_fuse: extents " + f_ed.shape().str() + " vs " +
                             f_d.shape().str());
  auto cat = concat_c<T>({f_ed, f_d});
  CffOutputs<T> out;
  out.edge = bank_conv(bank, "cff.e" + std::to_string(layer), cat, 1, 0);
  out.depth = bank_conv(bank, "cff.d" + std::to_string(layer), cat, 1, 0);
  return out;
}

template <typename T>
IfrState<T> ifr_step(ParamBank<T>& bank, const IfrState<T>& state,
                     const CorrPyramid<T>& pyr, const ModelConfig& cfg) {
  Graph<T>& g = *state.flow.graph();
  auto f_c = lookup_corr(pyr, state.flow, cfg.corr_radius);
  Tensor<T> f_c_hat = f_c;
  if (cfg.use_ifr) {
    auto f_ed = concat_c<T>({state.c_ed, state.h_ed});
    f_c_hat = bank_conv(bank, "ifr.corr_fuse", concat_c<T>({f_c, f_ed}), 1, 0);
  }
  auto flow_emb = relu(bank_conv(bank, "ifr.flow_enc", state.flow, 1, 1));
  auto gru_in = concat_c<T>({f_c_hat, flow_emb, state.f_ctx});
  auto gru_w = bind_gru(bank, "ifr.gru");
  IfrState<T> next = state;
  next.hidden = conv_gru_step(state.hidden, gru_in, gru_w);
  auto head_mid = relu(bank_conv(bank, "ifr.head1", next.hidden, 1, 1));
  auto delta = bank_conv(bank, "ifr.head2", head_mid, 1, 1);
  next.flow = add(state.flow, delta);
  if (cfg.use_ifr) {
    const Shape fs = next.flow.shape();
    auto grid = coord_grid(g, fs.n(), fs.h(), fs.w());
    auto warped = bilinear_sample(state.f_ev, add(grid, next.flow));
    auto edge_gru_w = bind_gru(bank, "ifr.edge_gru");
    next.h_ed = conv_gru_step(state.h_ed, concat_c<T>({warped, state.c_ed}), edge_gru_w);
  }
  next.iteration = state.iteration + 1;
  return next;
}

template <typename T>
ForwardOutputs<T> model_forward(ParamBank<T>& bank, const Tensor<T>& depth_norm,
                                const Tensor<T>& event_img, const ModelConfig& cfg,
                                int n_iters) {
  cfg.validate();
  if (n_iters < 1) throw Error("config", "model_forward: n_iters must be >= 1");
  if (depth_norm.shape() != event_img.shape())
    throw Error("shape", "model_forward: depth " + depth_norm.shape().str() +
                             " vs event " + event_img.shape().str());
  Graph<T>& g = *depth_norm.graph();
  const Shape s = depth_norm.shape();
  const std::int64_t out_h = s.h(), out_w = s.w();

  // Stage 2: interleaved encoders; CFF exchanges features at layers 2..4.
  std::array<Tensor<T>, 5> edge_feats;
  std::array<Tensor<T>, 5> depth_feats;
  Tensor<T> e = depth_norm;
  Tensor<T> d = depth_norm;
  for (int layer = 0; layer < 5; ++layer) {
    e = edge_encoder_layer(bank, layer, e);
    d = flow_encoder_layer(bank, "flow", layer, d);
    if (cfg.use_cff && layer >= 1 && layer <= 3) {
      auto fused = cff_fuse(bank, layer + 1, e, d);
      e = fused.edge;
      d = fused.depth;
    }
    edge_feats[layer] = e;
    depth_feats[layer] = d;
  }

  ForwardOutputs<T> out;
  out.hed = edge_decode(bank, edge_feats, out_h, out_w);
  out.f_d = depth_feats[4];

  Tensor<T> ev = event_img;
  for (int layer = 0; layer < 5; ++layer)
    ev = flow_encoder_layer(bank, "event", layer, ev);
  out.f_ev = ev;

  auto ctx = encode_context(bank, depth_norm, cfg);
  auto pyr = build_corr_pyramid(out.f_d, out.f_ev, cfg.corr_levels);

  IfrState<T> state;
  state.f_ctx = ctx.f_ctx;
  state.hidden = ctx.h0;
  state.f_ev = out.f_ev;
  const std::int64_t half = cfg.edge4_channels() / 2;
  state.c_ed = relu(slice_c(edge_feats[3], 0, half));
  state.h_ed = tanh(slice_c(edge_feats[3], half, 2 * half));
  state.flow = g.zeros(Shape::bchw(s.n(), 2, s.h() / 8, s.w() / 8));

  for (int n = 0; n < n_iters; ++n) {
    state = ifr_step(bank, state, pyr, cfg);
    out.flows_grid.push_back(state.flow);
    out.flows_full.push_back(
        scale(upsample_bilinear(state.flow, out_h, out_w), T(8)));
    if (cfg.use_ifr) {
      auto f_ed_next = concat_c<T>({state.c_ed, state.h_ed});
      auto logit = bank_conv(bank, "edge.iter_dec", f_ed_next, 1, 0);
      out.edges.push_back(sigmoid(upsample_bilinear(logit, out_h, out_w)));
    }
  }
  return out;
}

template <typename T>
Tensor<T> total_loss(const ForwardOutputs<T>& out, const Tensor<T>& f_gt,
                     const Tensor<T>& mask, const Tensor<T>& edge_gt, double alpha,
                     double beta, double gamma) {
  if (out.flows_full.empty()) throw Error("loss", "total_loss: no flow predictions");
  Graph<T>& g = *f_gt.graph();
  const int n = static_cast<int>(out.flows_full.size());
  Tensor<T> loss = g.zeros(Shape::scalar());
  for (int i = 0; i < n; ++i) {
    const double w = alpha * std::pow(gamma, static_cast<double>(n - 1 - i));
    loss = add(loss, scale(flow_loss(out.flows_full[static_cast<std::size_t>(i)], f_gt, mask),
                           static_cast<T>(w)));
  }
  if (!out.edges.empty()) {
    Tensor<T> edge_term = g.zeros(Shape::scalar());
    for (const auto& p : out.edges) edge_term = add(edge_term, edge_loss(p, edge_gt));
    loss = add(loss, scale(edge_term,
                           static_cast<T>(beta / static_cast<double>(out.edges.size()))));
  }
  // Stage-2 HED supervision: fused plus the five side outputs, averaged.
  Tensor<T> hed_term = edge_loss(out.hed.fused, edge_gt);
  for (const auto& side : out.hed.side) hed_term = add(hed_term, edge_loss(side, edge_gt));
  loss = add(loss, scale(hed_term, static_cast<T>(1.0 / 6.0)));
  return loss;
}

template <typename T>
ModelWeights<T> init_model_weights(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelWeights<T> w;
  Rng rng(Rng::mix(seed, 0x11ea));
  init_edge_params(w, cfg, rng);
  init_flow_params(w, cfg, rng);
  for (int layer = 2; layer <= 4; ++layer) {
    const std::int64_t ce = cfg.edge_widths[layer - 1];
    const std::int64_t cd = cfg.flow_widths[layer - 1];
    init_conv_params(w, "cff.e" + std::to_string(layer), ce, ce + cd, 1, rng);
    init_conv_params(w, "cff.d" + std::to_string(layer), cd, ce + cd, 1, rng);
  }
  const std::int64_t corr_c = cfg.corr_channels();
  const std::int64_t edge4 = cfg.edge4_channels();
  init_conv_params(w, "ifr.corr_fuse", corr_c, corr_c + edge4, 1, rng);
  init_conv_params(w, "ifr.flow_enc", cfg.flow_enc_channels, 2, 3, rng);
  init_gru_params(w, "ifr.gru", cfg.hidden_channels,
                  corr_c + cfg.flow_enc_channels + cfg.hidden_channels, rng);
  init_conv_params(w, "ifr.head1", cfg.head_channels, cfg.hidden_channels, 3, rng);
  init_conv_params(w, "ifr.head2", 2, cfg.head_channels, 3, rng, /*gain=*/0.25);
  init_gru_params(w, "ifr.edge_gru", edge4 / 2, cfg.feat_channels + edge4 / 2, rng);
  init_conv_params(w, "edge.iter_dec", 1, edge4, 1, rng);
  embed_config(w, cfg);
  return w;
}

namespace {

constexpr int kMetaCount = 22;

std::vector<double> config_vector(const ModelConfig& cfg) {
  std::vector<double> v;
  v.push_back(static_cast<double>(cfg.width));
  v.push_back(static_cast<double>(cfg.height));
  v.push_back(static_cast<double>(cfg.feat_channels));
  v.push_back(static_cast<double>(cfg.hidden_channels));
  for (const auto c : cfg.edge_widths) v.push_back(static_cast<double>(c));
  for (const auto c : cfg.flow_widths) v.push_back(static_cast<double>(c));
  v.push_back(static_cast<double>(cfg.corr_levels));
  v.push_back(static_cast<double>(cfg.corr_radius));
  v.push_back(static_cast<double>(cfg.flow_enc_channels));
  v.push_back(static_cast<double>(cfg.head_channels));
  v.push_back(static_cast<double>(cfg.n_train_iters));
  v.push_back(static_cast<double>(cfg.n_test_iters));
  v.push_back(cfg.use_cff ? 1.0 : 0.0);
  v.push_back(cfg.use_ifr ? 1.0 : 0.0);
  return v;
}

const char* kMetaFields[kMetaCount] = {
    "width",          "height",         "feat_channels",  "hidden_channels",
    "edge_widths[0]", "edge_widths[1]", "edge_widths[2]", "edge_widths[3]",
    "edge_widths[4]", "flow_widths[0]", "flow_widths[1]", "flow_widths[2]",
    "flow_widths[3]", "flow_widths[4]", "corr_levels",    "corr_radius",
    "flow_enc_channels", "head_channels", "n_train_iters", "n_test_iters",
    "use_cff",        "use_ifr"};

}  // namespace

template <typename T>
void embed_config(ModelWeights<T>& w, const ModelConfig& cfg) {
  const auto v = config_vector(cfg);
  std::vector<T> tv(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) tv[i] = static_cast<T>(v[i]);
  if (w.has("meta.config")) w.params.erase("meta.config");
  w.add("meta.config", Shape{static_cast<std::int64_t>(v.size())}, std::move(tv));
}

template <typename T>
ModelConfig extract_config(const ModelWeights<T>& w) {
  const auto& p = w.at("meta.config");
  if (p.values.size() != kMetaCount)
    throw Error("format", "unexpected meta.config record size");
  const auto& v = p.values;
  ModelConfig cfg;
  int i = 0;
  cfg.width = static_cast<std::int64_t>(v[i++]);
  cfg.height = static_cast<std::int64_t>(v[i++]);
  cfg.feat_channels = static_cast<std::int64_t>(v[i++]);
  cfg.hidden_channels = static_cast<std::int64_t>(v[i++]);
  for (auto& c : cfg.edge_widths) c = static_cast<std::int64_t>(v[i++]);
  for (auto& c : cfg.flow_widths) c = static_cast<std::int64_t>(v[i++]);
  cfg.corr_levels = static_cast<int>(v[i++]);
  cfg.corr_radius = static_cast<int>(v[i++]);
  cfg.flow_enc_channels = static_cast<std::int64_t>(v[i++]);
  cfg.head_channels = static_cast<std::int64_t>(v[i++]);
  cfg.n_train_iters = static_cast<int>(v[i++]);
  cfg.n_test_iters = static_cast<int>(v[i++]);
  cfg.use_cff = v[i++] != T(0);
  cfg.use_ifr = v[i++] != T(0);
  return cfg;
}

template <typename T>
void check_config_match(const ModelWeights<T>& w, const ModelConfig& expected) {
  const auto stored = config_vector(extract_config<T>(w));
  const auto want = config_vector(expected);
  std::string mismatches;
  for (int i = 0; i < kMetaCount; ++i) {
    if (stored[static_cast<std::size_t>(i)] != want[static_cast<std::size_t>(i)]) {
      if (!mismatches.empty()) mismatches += ", ";
      mismatches += kMetaFields[i];
    }
  }
  if (!mismatches.empty())
    throw Error("config", "checkpoint configuration mismatch in: " + mismatches);
}

template <typename T>
ModelInputs<T> make_inputs(Graph<T>& g, const std::vector<const Sample*>& batch,
                           bool oracle_mask,
                           const std::vector<const Image*>* depth_masks) {
  if (batch.empty()) throw Error("shape", "make_inputs: empty batch");
  const std::int64_t b_n = static_cast<std::int64_t>(batch.size());
  const std::int64_t h = batch[0]->depth.height, w = batch[0]->depth.width;
  const std::int64_t hw = h * w;
  std::vector<T> depth(static_cast<std::size_t>(b_n * hw));
  std::vector<T> event(static_cast<std::size_t>(b_n * hw));
  std::vector<T> fgt(static_cast<std::size_t>(b_n * 2 * hw));
  std::vector<T> mask(static_cast<std::size_t>(b_n * hw));
  std::vector<T> edge(static_cast<std::size_t>(b_n * hw));
  for (std::int64_t b = 0; b < b_n; ++b) {
    const Sample& s = *batch[static_cast<std::size_t>(b)];
    if (s.depth.height != h || s.depth.width != w)
      throw Error("shape", "make_inputs: inconsistent raster extents in batch");
    std::vector<float> masked(s.depth.v);
    if (oracle_mask) {
      for (std::int64_t i = 0; i < hw; ++i)
        masked[static_cast<std::size_t>(i)] *= s.edge_gt.v[static_cast<std::size_t>(i)];
    }
    if (depth_masks != nullptr) {
      const Image& m = *(*depth_masks)[static_cast<std::size_t>(b)];
      for (std::int64_t i = 0; i < hw; ++i)
        masked[static_cast<std::size_t>(i)] *= m.v[static_cast<std::size_t>(i)];
    }
    float max_depth = 0.f;
    for (const float v : masked) max_depth = std::max(max_depth, v);
    const float inv = max_depth > 0.f ? 1.f / max_depth : 0.f;
    for (std::int64_t i = 0; i < hw; ++i) {
      depth[static_cast<std::size_t>(b * hw + i)] =
          static_cast<T>(masked[static_cast<std::size_t>(i)] * inv);
      event[static_cast<std::size_t>(b * hw + i)] =
          static_cast<T>(s.event_image.v[static_cast<std::size_t>(i)]);
      fgt[static_cast<std::size_t>((b * 2 + 0) * hw + i)] =
          static_cast<T>(s.flow_gt.dx[static_cast<std::size_t>(i)]);
      fgt[static_cast<std::size_t>((b * 2 + 1) * hw + i)] =
          static_cast<T>(s.flow_gt.dy[static_cast<std::size_t>(i)]);
      mask[static_cast<std::size_t>(b * hw + i)] =
          static_cast<T>(s.flow_gt.valid[static_cast<std::size_t>(i)]);
      edge[static_cast<std::size_t>(b * hw + i)] =
          static_cast<T>(s.edge_gt.v[static_cast<std::size_t>(i)]);
    }
  }
  ModelInputs<T> in;
  in.depth_norm = g.constant(Shape::bchw(b_n, 1, h, w), std::move(depth));
  in.event = g.constant(Shape::bchw(b_n, 1, h, w), std::move(event));
  in.f_gt = g.constant(Shape::bchw(b_n, 2, h, w), std::move(fgt));
  in.mask = g.constant(Shape::bchw(b_n, 1, h, w), std::move(mask));
  in.edge_gt = g.constant(Shape::bchw(b_n, 1, h, w), std::move(edge));
  return in;
}

#define LEAR_INSTANTIATE_MODEL(T)                                                      \
  template CffOutputs<T> cff_fuse(ParamBank<T>&, int, const Tensor<T>&,                \
                                  const Tensor<T>&);                                   \
  template IfrState<T> ifr_step(ParamBank<T>&, const IfrState<T>&,                     \
                                const CorrPyramid<T>&, const ModelConfig&);            \
  template ForwardOutputs<T> model_forward(ParamBank<T>&, const Tensor<T>&,            \
                                           const Tensor<T>&, const ModelConfig&, int); \
  template Tensor<T> total_loss(const ForwardOutputs<T>&, const Tensor<T>&,            \
                                const Tensor<T>&, const Tensor<T>&, double, double,    \
                                double);                                               \
  template ModelWeights<T> init_model_weights(const ModelConfig&, std::uint64_t);      \
  template void embed_config(ModelWeights<T>&, const ModelConfig&);                    \
  template ModelConfig extract_config(const ModelWeights<T>&);                         \
  template void check_config_match(const ModelWeights<T>&, const ModelConfig&);        \
  template ModelInputs<T> make_inputs(Graph<T>&, const std::vector<const Sample*>&,    \
                                      bool, const std::vector<const Image*>*);

LEAR_INSTANTIATE_MODEL(float)
LEAR_INSTANTIATE_MODEL(double)

}  // namespace lear
