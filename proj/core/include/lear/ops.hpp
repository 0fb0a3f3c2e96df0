#pragma once

#include <vector>

#include "lear/tensor.hpp"

// Differentiable operations on Graph tensors. This is deliberately the
// minimal set the dual-task network needs: element-wise arithmetic, concat,
// conv, pooling, up/resampling, activations and plain reductions.
namespace lear {

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s);
// s - a, element-wise.
template <typename T>
Tensor<T> rsub_scalar(T s, const Tensor<T>& a);

template <typename T>
Tensor<T> relu(const Tensor<T>& a);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T>
Tensor<T> tanh(const Tensor<T>& a);
template <typename T>
Tensor<T> log(const Tensor<T>& a);
// sqrt with a guarded backward: gradient is 0 where the input is 0.
template <typename T>
Tensor<T> sqrt0(const Tensor<T>& a);
template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi);

template <typename T>
Tensor<T> concat_c(const std::vector<Tensor<T>>& parts);
template <typename T>
Tensor<T> slice_c(const Tensor<T>& a, std::int64_t c_begin, std::int64_t c_end);

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a);
template <typename T>
Tensor<T> mean_all(const Tensor<T>& a);
// Per-pixel sum over the channel axis: [B,C,H,W] -> [B,1,H,W].
template <typename T>
Tensor<T> sum_c(const Tensor<T>& a);

// 2D convolution, zero padding. input [B,Ci,H,W], kernel [Co,Ci,kH,kW],
// bias [Co] (pass a default-constructed Tensor for no bias).
// Output spatial extent: floor((H + 2*pad - kH)/stride) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, int stride, int padding);

// 2x2 average pooling, stride 2, floor semantics (a trailing odd row/column
// is dropped). The four summands are added in row-major order and scaled by
// 0.25; pyramid oracles rely on this exact order.
template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& a);

// Bilinear resize to (out_h, out_w) with half-pixel centers
// (src = (dst + 0.5) * in/out - 0.5) and border clamping.
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& a, std::int64_t out_h, std::int64_t out_w);

// Samples `field` [B,C,Hs,Ws] at per-pixel locations given by `coords`
// [B,2,H,W] (channel 0 = x, channel 1 = y, in source-pixel units).
// The sample is
//   v = (1-fy)*((1-fx)*v00 + fx*v01) + fy*((1-fx)*v10 + fx*v11)
// with out-of-bounds corners contributing 0. Differentiable in both inputs.
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& field, const Tensor<T>& coords);

// All-pairs feature correlation. f_d, f_ev: [B,C,H,W]. Output
// [B*H*W, 1, H, W]; entry (b*H*W + sy*W + sx, 0, ty, tx) is the channel dot
// product of f_d at (sy,sx) with f_ev at (ty,tx), summed in ascending channel
// order, then multiplied by 1/sqrt(C).
template <typename T>
Tensor<T> corr_allpairs(const Tensor<T>& f_d, const Tensor<T>& f_ev);

// Window lookup into one correlation pyramid level. `level` is
// [B*H*W, 1, Hl, Wl] (level `level_index` of the pyramid built on a H x W
// grid), `flow` is [B,2,H,W]. For each source pixel the (2r+1)^2 window
// centred at (pixel + flow)/2^level_index is sampled bilinearly with zero
// padding; output channel (dy+r)*(2r+1)+(dx+r) holds the (dy,dx) offset.
template <typename T>
Tensor<T> corr_lookup(const Tensor<T>& level, const Tensor<T>& flow, int radius,
                      int level_index);

// Constant [B,2,H,W] pixel-coordinate grid (x in channel 0, y in channel 1).
template <typename T>
Tensor<T> coord_grid(Graph<T>& g, std::int64_t b, std::int64_t h, std::int64_t w);

}  // namespace lear
