#include "lear/edge_net.hpp"

namespace lear {

template <typename T>
Tensor<T> edge_encoder_layer(ParamBank<T>& bank, int layer, const Tensor<T>& x) {
  const int stride = layer == 0 ? 1 : 2;
  return relu(bank_conv(bank, "edge.enc" + std::to_string(layer + 1), x, stride, 1));
}

template <typename T>
EdgeForward<T> edge_decode(ParamBank<T>& bank, const std::array<Tensor<T>, 5>& features,
                           std::int64_t out_h, std::int64_t out_w) {
  EdgeForward<T> out;
  out.features = features;
  std::vector<Tensor<T>> logits;
  for (int i = 0; i < 5; ++i) {
    auto logit = bank_conv(bank, "edge.side" + std::to_string(i + 1), features[i], 1, 0);
    out.side_logits[i] = upsample_bilinear(logit, out_h, out_w);
    out.side[i] = sigmoid(out.side_logits[i]);
    logits.push_back(out.side_logits[i]);
  }
  out.fused_logit = bank_conv(bank, "edge.fuse", concat_c<T>(logits), 1, 0);
  out.fused = sigmoid(out.fused_logit);
  return out;
}

template <typename T>
EdgeForward<T> edge_forward(ParamBank<T>& bank, const Tensor<T>& depth_norm,
                            const ModelConfig& cfg) {
  cfg.validate();
  const Shape s = depth_norm.shape();
  if (s.h() % 16 != 0 || s.w() % 16 != 0)
    throw Error("shape", "edge_forward: extent " + s.str() +
                             " not divisible by 16; pad the input");
  std::array<Tensor<T>, 5> feats;
  Tensor<T> x = depth_norm;
  for (int i = 0; i < 5; ++i) {
    x = edge_encoder_layer(bank, i, x);
    feats[i] = x;
  }
  return edge_decode(bank, feats, s.h(), s.w());
}

double balance_weight(const Image& gt) {
  if (gt.pixels() == 0) throw Error("shape", "balance_weight: empty map");
  std::int64_t edge = 0;
  for (const float v : gt.v) {
    if (v != 0.f && v != 1.f) throw Error("edge", "balance_weight: map is not binary");
    edge += v == 1.f;
  }
  return static_cast<double>(gt.pixels() - edge) / static_cast<double>(gt.pixels());
}

namespace {

template <typename T>
Tensor<T> edge_loss_impl(const Tensor<T>& pred_prob, const Tensor<T>& gt_binary,
                         const std::vector<double>& w_per_image) {
  if (pred_prob.shape() != gt_binary.shape())
    throw Error("shape", "edge_loss: prediction " + pred_prob.shape().str() +
                             " vs ground truth " + gt_binary.shape().str());
  Graph<T>& g = *pred_prob.graph();
  const Shape s = pred_prob.shape();
  const std::int64_t b_n = s.n(), per_image = s.numel() / s.n();
  const auto gv = gt_binary.values();
  // Per-pixel class weights folded with the 1/(pixels*batch) mean reduction.
  std::vector<T> w_edge(gv.size()), w_non(gv.size());
  const double norm = 1.0 / static_cast<double>(per_image * b_n);
  for (std::int64_t b = 0; b < b_n; ++b) {
    const double w = w_per_image[static_cast<std::size_t>(b)];
    for (std::int64_t i = 0; i < per_image; ++i) {
      const std::size_t at = static_cast<std::size_t>(b * per_image + i);
      const double gt = static_cast<double>(gv[at]);
      w_edge[at] = static_cast<T>(w * gt * norm);
      w_non[at] = static_cast<T>((1.0 - w) * (1.0 - gt) * norm);
    }
  }
  auto p = clamp(pred_prob, static_cast<T>(1e-7), static_cast<T>(1.0 - 1e-7));
  auto term = add(mul(g.constant(s, std::move(w_edge)), log(p)),
                  mul(g.constant(s, std::move(w_non)), log(rsub_scalar(T(1), p))));
  return scale(sum_all(term), T(-1));
}

}  // namespace

template <typename T>
Tensor<T> edge_loss(const Tensor<T>& pred_prob, const Tensor<T>& gt_binary) {
  const Shape s = gt_binary.shape();
  const std::int64_t b_n = s.n(), per_image = s.numel() / s.n();
  const auto gv = gt_binary.values();
  std::vector<double> w(static_cast<std::size_t>(b_n));
  for (std::int64_t b = 0; b < b_n; ++b) {
    std::int64_t edge = 0;
    for (std::int64_t i = 0; i < per_image; ++i) {
      const T v = gv[static_cast<std::size_t>(b * per_image + i)];
      if (v != T(0) && v != T(1))
        throw Error("edge", "edge_loss: ground truth is not binary");
      edge += v == T(1);
    }
    w[static_cast<std::size_t>(b)] =
        static_cast<double>(per_image - edge) / static_cast<double>(per_image);
  }
  return edge_loss_impl(pred_prob, gt_binary, w);
}

template <typename T>
Tensor<T> edge_loss_weighted(const Tensor<T>& pred_prob, const Tensor<T>& gt_binary,
                             const std::vector<double>& w_per_image) {
  if (w_per_image.size() != static_cast<std::size_t>(gt_binary.shape().n()))
    throw Error("shape", "edge_loss_weighted: one weight per batch image required");
  return edge_loss_impl(pred_prob, gt_binary, w_per_image);
}

template <typename T>
void init_edge_params(ModelWeights<T>& w, const ModelConfig& cfg, Rng& rng) {
  std::int64_t ci = 1;
  for (int i = 0; i < 5; ++i) {
    init_conv_params(w, "edge.enc" + std::to_string(i + 1), cfg.edge_widths[i], ci, 3, rng);
    ci = cfg.edge_widths[i];
  }
  for (int i = 0; i < 5; ++i) {
    init_conv_params(w, "edge.side" + std::to_string(i + 1), 1, cfg.edge_widths[i], 1, rng);
  }
  init_conv_params(w, "edge.fuse", 1, 5, 1, rng);
}

#define LEAR_INSTANTIATE_EDGE(T)                                                        \
  template Tensor<T> edge_encoder_layer(ParamBank<T>&, int, const Tensor<T>&);          \
  template EdgeForward<T> edge_decode(ParamBank<T>&, const std::array<Tensor<T>, 5>&,   \
                                      std::int64_t, std::int64_t);                      \
  template EdgeForward<T> edge_forward(ParamBank<T>&, const Tensor<T>&,                 \
                                       const ModelConfig&);                             \
  template Tensor<T> edge_loss(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> edge_loss_weighted(const Tensor<T>&, const Tensor<T>&,             \
                                        const std::vector<double>&);                    \
  template void init_edge_params(ModelWeights<T>&, const ModelConfig&, Rng&);

LEAR_INSTANTIATE_EDGE(float)
LEAR_INSTANTIATE_EDGE(double)

}  // namespace lear
