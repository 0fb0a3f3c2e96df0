#pragma once

#include <array>

#include "lear/image.hpp"
#include "lear/net_config.hpp"
#include "lear/nn.hpp"

namespace lear {

// HED-style edge detector over the depth map: five encoder layers at
// resolutions (1, 1/2, 1/4, 1/8, 1/16), a 1x1-conv side output per layer
// (upsampled to input resolution) and a fused map from the concatenated side
// logits.
template <typename T>
struct EdgeForward {
  std::array<Tensor<T>, 5> features;     // encoder outputs (fused when CFF is on)
  std::array<Tensor<T>, 5> side_logits;  // full resolution, pre-sigmoid
  std::array<Tensor<T>, 5> side;         // sigmoid side outputs
  Tensor<T> fused_logit;
  Tensor<T> fused;
};

// One encoder layer: 3x3 conv + ReLU. Layer 0 keeps full resolution, layers
// 1..4 halve it.
template <typename T>
Tensor<T> edge_encoder_layer(ParamBank<T>& bank, int layer, const Tensor<T>& x);

// Side outputs + fusion from already-computed encoder features.
template <typename T>
EdgeForward<T> edge_decode(ParamBank<T>& bank, const std::array<Tensor<T>, 5>& features,
                           std::int64_t out_h, std::int64_t out_w);

// Full standalone pass (no cross-task fusion).
template <typename T>
EdgeForward<T> edge_forward(ParamBank<T>& bank, const Tensor<T>& depth_norm,
                            const ModelConfig& cfg);

// Class-balancing weight of Eq-style balanced cross-entropy: fraction of
// non-edge pixels in a binary ground-truth map.
double balance_weight(const Image& gt);

// Per-image class-balanced cross-entropy with mean reduction over pixels,
// averaged over the batch. `gt` must be binary; predictions are clamped to
// [1e-7, 1 - 1e-7].
template <typename T>
Tensor<T> edge_loss(const Tensor<T>& pred_prob, const Tensor<T>& gt_binary);

// Same loss with explicit per-image weights (test hook; edge_loss derives the
// weights from the ground truth).
template <typename T>
Tensor<T> edge_loss_weighted(const Tensor<T>& pred_prob, const Tensor<T>& gt_binary,
                             const std::vector<double>& w_per_image);

// Registers all edge-branch parameters.
template <typename T>
void init_edge_params(ModelWeights<T>& w, const ModelConfig& cfg, Rng& rng);

}  // namespace lear
