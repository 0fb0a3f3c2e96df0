#include "lear/ops.hpp"

#include <algorithm>
#include <cmath>

#include "lear/thread_pool.hpp"

// conv2d lives in its own translation unit so the hot kernels keep FMA
// contraction; the exact-arithmetic ops in ops.cpp are built without it.
namespace lear {
namespace {

template <typename T>
Graph<T>& graph_of(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.defined() || !b.defined()) throw Error("graph", "operation on undefined tensor");
  if (b.graph() != a.graph()) throw Error("graph", "tensors belong to different graphs");
  return *a.graph();
}

template <typename T>
bool needs(const Tensor<T>& a) {
  return a.graph()->node(a.id()).needs_grad;
}

template <typename T>
void check_rank4(const char* op, const Tensor<T>& a) {
  if (a.shape().rank != 4)
    throw Error("shape", std::string(op) + ": expected rank-4 tensor, got " + a.shape().str());
}

inline std::int64_t ceil_div_nonneg(std::int64_t a, std::int64_t s) {
  return a > 0 ? (a + s - 1) / s : 0;
}

template <typename T>
struct ConvDims {
  std::int64_t b, ci, h, w, co, kh, kw, ho, wo;
  int stride, pad;
};

template <typename T>
void conv2d_forward_kernel(const T* in, const T* wgt, const T* bias, T* out,
                           const ConvDims<T>& d) {
  const std::int64_t plane_count = d.b * d.co;
  parallel_for(plane_count, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t plane = lo; plane < hi; ++plane) {
      const std::int64_t b = plane / d.co;
      const std::int64_t oc = plane % d.co;
      T* out_plane = out + plane * d.ho * d.wo;
      const T bv = bias ? bias[oc] : T(0);
      std::fill_n(out_plane, d.ho * d.wo, bv);
      const T* w_oc = wgt + oc * d.ci * d.kh * d.kw;
      for (std::int64_t ic = 0; ic < d.ci; ++ic) {
        const T* in_plane = in + (b * d.ci + ic) * d.h * d.w;
        for (std::int64_t ky = 0; ky < d.kh; ++ky) {
          for (std::int64_t kx = 0; kx < d.kw; ++kx) {
            const T wv = w_oc[(ic * d.kh + ky) * d.kw + kx];
            if (wv == T(0)) continue;
            const std::int64_t ox_lo =
                std::max<std::int64_t>(0, ceil_div_nonneg(d.pad - kx, d.stride));
            const std::int64_t x_max = d.w - 1 + d.pad - kx;
            if (x_max < 0) continue;
            const std::int64_t ox_hi = std::min<std::int64_t>(d.wo - 1, x_max / d.stride);
            for (std::int64_t oy = 0; oy < d.ho; ++oy) {
              const std::int64_t iy = oy * d.stride + ky - d.pad;
              if (iy < 0 || iy >= d.h) continue;
              const T* in_row = in_plane + iy * d.w;
              T* out_row = out_plane + oy * d.wo;
              if (d.stride == 1) {
                const T* src = in_row + kx - d.pad;
                for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox)
                  out_row[ox] += wv * src[ox];
              } else {
                for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox)
                  out_row[ox] += wv * in_row[ox * d.stride + kx - d.pad];
              }
            }
          }
        }
      }
    }
  });
}

template <typename T>
void conv2d_backward_kernel(const T* in, const T* wgt, const T* gout, T* gin,
                            T* gwgt, T* gbias, const ConvDims<T>& d) {
  if (gin) {
    // One (b, ic) plane per task; no write collisions.
    parallel_for(d.b * d.ci, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t plane = lo; plane < hi; ++plane) {
        const std::int64_t b = plane / d.ci;
        const std::int64_t ic = plane % d.ci;
        T* gin_plane = gin + plane * d.h * d.w;
        for (std::int64_t oc = 0; oc < d.co; ++oc) {
          const T* gout_plane = gout + (b * d.co + oc) * d.ho * d.wo;
          const T* w_oc = wgt + oc * d.ci * d.kh * d.kw;
          for (std::int64_t ky = 0; ky < d.kh; ++ky) {
            for (std::int64_t kx = 0; kx < d.kw; ++kx) {
              const T wv = w_oc[(ic * d.kh + ky) * d.kw + kx];
              if (wv == T(0)) continue;
              const std::int64_t ox_lo =
                  std::max<std::int64_t>(0, ceil_div_nonneg(d.pad - kx, d.stride));
              const std::int64_t x_max = d.w - 1 + d.pad - kx;
              if (x_max < 0) continue;
              const std::int64_t ox_hi = std::min<std::int64_t>(d.wo - 1, x_max / d.stride);
              for (std::int64_t oy = 0; oy < d.ho; ++oy) {
                const std::int64_t iy = oy * d.stride + ky - d.pad;
                if (iy < 0 || iy >= d.h) continue;
                T* gin_row = gin_plane + iy * d.w;
                const T* gout_row = gout_plane + oy * d.wo;
                if (d.stride == 1) {
                  T* dst = gin_row + kx - d.pad;
                  for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox)
                    dst[ox] += wv * gout_row[ox];
                } else {
                  for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox)
                    gin_row[ox * d.stride + kx - d.pad] += wv * gout_row[ox];
                }
              }
            }
          }
        }
      }
    });
  }
  if (gwgt) {
    // One output channel per task owns its whole weight slice.
    parallel_for(d.co, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t oc = lo; oc < hi; ++oc) {
        T* gw_oc = gwgt + oc * d.ci * d.kh * d.kw;
        for (std::int64_t b = 0; b < d.b; ++b) {
          const T* gout_plane = gout + (b * d.co + oc) * d.ho * d.wo;
          for (std::int64_t ic = 0; ic < d.ci; ++ic) {
            const T* in_plane = in + (b * d.ci + ic) * d.h * d.w;
            for (std::int64_t ky = 0; ky < d.kh; ++ky) {
              for (std::int64_t kx = 0; kx < d.kw; ++kx) {
                const std::int64_t ox_lo =
                    std::max<std::int64_t>(0, ceil_div_nonneg(d.pad - kx, d.stride));
                const std::int64_t x_max = d.w - 1 + d.pad - kx;
                if (x_max < 0) continue;
                const std::int64_t ox_hi = std::min<std::int64_t>(d.wo - 1, x_max / d.stride);
                T acc = T(0);
                for (std::int64_t oy = 0; oy < d.ho; ++oy) {
                  const std::int64_t iy = oy * d.stride + ky - d.pad;
                  if (iy < 0 || iy >= d.h) continue;
                  const T* in_row = in_plane + iy * d.w;
                  const T* gout_row = gout_plane + oy * d.wo;
                  if (d.stride == 1) {
                    const T* src = in_row + kx - d.pad;
                    for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox)
                      acc += src[ox] * gout_row[ox];
                  } else {
                    for (std::int64_t ox = ox_lo; ox <= ox_hi; ++ox)
                      acc += in_row[ox * d.stride + kx - d.pad] * gout_row[ox];
                  }
                }
                gw_oc[(ic * d.kh + ky) * d.kw + kx] += acc;
              }
            }
          }
        }
      }
    });
  }
  if (gbias) {
    for (std::int64_t oc = 0; oc < d.co; ++oc) {
      T acc = T(0);
      for (std::int64_t b = 0; b < d.b; ++b) {
        const T* gout_plane = gout + (b * d.co + oc) * d.ho * d.wo;
        for (std::int64_t i = 0; i < d.ho * d.wo; ++i) acc += gout_plane[i];
      }
      gbias[oc] += acc;
    }
  }
}

// ---- GEMM path for stride-1 convolutions ----
// The refinement loop runs many convolutions over 1/8-resolution maps whose
// rows are a single vector wide; the direct kernel drowns in loop overhead
// there. Lowering to im2col + a register-tiled GEMM keeps the FMA units fed.

// C[M x N] += A[M x K] * B[K x N], all row-major.
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::int64_t m_n, std::int64_t k_n,
              std::int64_t n_n) {
  constexpr std::int64_t kMr = 4;
  constexpr std::int64_t kNr = 64;
  parallel_for((m_n + kMr - 1) / kMr, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t mt = lo; mt < hi; ++mt) {
      const std::int64_t m0 = mt * kMr;
      const std::int64_t mb = std::min(kMr, m_n - m0);
      for (std::int64_t n0 = 0; n0 < n_n; n0 += kNr) {
        const std::int64_t nb = std::min(kNr, n_n - n0);
        T acc[kMr][kNr];
        for (std::int64_t i = 0; i < mb; ++i)
          for (std::int64_t j = 0; j < nb; ++j) acc[i][j] = T(0);
        for (std::int64_t k = 0; k < k_n; ++k) {
          const T* b_row = b + k * n_n + n0;
          for (std::int64_t i = 0; i < mb; ++i) {
            const T av = a[(m0 + i) * k_n + k];
            if (av == T(0)) continue;
            T* acc_row = acc[i];
            for (std::int64_t j = 0; j < nb; ++j) acc_row[j] += av * b_row[j];
          }
        }
        for (std::int64_t i = 0; i < mb; ++i) {
          T* c_row = c + (m0 + i) * n_n + n0;
          for (std::int64_t j = 0; j < nb; ++j) c_row[j] += acc[i][j];
        }
      }
    }
  });
}

// C[M x K] += A[M x N] * B[K x N]^T (dot products over the shared N axis).
template <typename T>
void gemm_abt_acc(const T* a, const T* b, T* c, std::int64_t m_n, std::int64_t k_n,
                  std::int64_t n_n) {
  parallel_for(m_n, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t m = lo; m < hi; ++m) {
      const T* a_row = a + m * n_n;
      T* c_row = c + m * k_n;
      for (std::int64_t k = 0; k < k_n; ++k) {
        const T* b_row = b + k * n_n;
        T dot = T(0);
        for (std::int64_t j = 0; j < n_n; ++j) dot += a_row[j] * b_row[j];
        c_row[k] += dot;
      }
    }
  });
}

// Lowers one batch image to column form: cols[(ic*kh+ky)*kw+kx][oy*wo+ox] =
// in[ic][oy+ky-pad][ox+kx-pad] with zeros outside.
template <typename T>
void im2col(const T* in_plane0, const ConvDims<T>& d, T* cols) {
  const std::int64_t n_cols = d.ho * d.wo;
  for (std::int64_t ic = 0; ic < d.ci; ++ic) {
    const T* in_plane = in_plane0 + ic * d.h * d.w;
    for (std::int64_t ky = 0; ky < d.kh; ++ky) {
      for (std::int64_t kx = 0; kx < d.kw; ++kx) {
        T* col_row = cols + ((ic * d.kh + ky) * d.kw + kx) * n_cols;
        for (std::int64_t oy = 0; oy < d.ho; ++oy) {
          const std::int64_t iy = oy + ky - d.pad;
          T* dst = col_row + oy * d.wo;
          if (iy < 0 || iy >= d.h) {
            std::fill_n(dst, d.wo, T(0));
            continue;
          }
          const T* src = in_plane + iy * d.w + kx - d.pad;
          const std::int64_t x_lo = std::max<std::int64_t>(0, d.pad - kx);
          const std::int64_t x_hi = std::min(d.wo - 1, d.w - 1 + d.pad - kx);
          for (std::int64_t x = 0; x < x_lo; ++x) dst[x] = T(0);
          for (std::int64_t x = x_lo; x <= x_hi; ++x) dst[x] = src[x];
          for (std::int64_t x = x_hi + 1; x < d.wo; ++x) dst[x] = T(0);
        }
      }
    }
  }
}

// Scatter of column-form gradients back onto the input plane.
template <typename T>
void col2im_acc(const T* cols, const ConvDims<T>& d, T* gin_plane0) {
  const std::int64_t n_cols = d.ho * d.wo;
  parallel_for(d.ci, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t ic = lo; ic < hi; ++ic) {
      T* gin_plane = gin_plane0 + ic * d.h * d.w;
      for (std::int64_t ky = 0; ky < d.kh; ++ky) {
        for (std::int64_t kx = 0; kx < d.kw; ++kx) {
          const T* col_row = cols + ((ic * d.kh + ky) * d.kw + kx) * n_cols;
          for (std::int64_t oy = 0; oy < d.ho; ++oy) {
            const std::int64_t iy = oy + ky - d.pad;
            if (iy < 0 || iy >= d.h) continue;
            T* dst = gin_plane + iy * d.w + kx - d.pad;
            const std::int64_t x_lo = std::max<std::int64_t>(0, d.pad - kx);
            const std::int64_t x_hi = std::min(d.wo - 1, d.w - 1 + d.pad - kx);
            const T* src = col_row + oy * d.wo;
            for (std::int64_t x = x_lo; x <= x_hi; ++x) dst[x] += src[x];
          }
        }
      }
    }
  });
}

template <typename T>
bool is_pointwise(const ConvDims<T>& d) {
  return d.kh == 1 && d.kw == 1 && d.pad == 0;
}

template <typename T>
void conv2d_forward_gemm(const T* in, const T* wgt, const T* bias, T* out,
                         const ConvDims<T>& d) {
  const std::int64_t k_n = d.ci * d.kh * d.kw;
  const std::int64_t n_cols = d.ho * d.wo;
  std::vector<T> scratch;
  if (!is_pointwise(d)) scratch.resize(static_cast<std::size_t>(k_n * n_cols));
  for (std::int64_t b = 0; b < d.b; ++b) {
    const T* in_b = in + b * d.ci * d.h * d.w;
    const T* cols = in_b;
    if (!is_pointwise(d)) {
      im2col(in_b, d, scratch.data());
      cols = scratch.data();
    }
    T* out_b = out + b * d.co * n_cols;
    for (std::int64_t oc = 0; oc < d.co; ++oc)
      std::fill_n(out_b + oc * n_cols, n_cols, bias ? bias[oc] : T(0));
    gemm_acc(wgt, cols, out_b, d.co, k_n, n_cols);
  }
}

template <typename T>
void conv2d_backward_gemm(const T* in, const T* wgt, const T* gout, T* gin, T* gwgt,
                          T* gbias, const ConvDims<T>& d) {
  const std::int64_t k_n = d.ci * d.kh * d.kw;
  const std::int64_t n_cols = d.ho * d.wo;
  std::vector<T> cols_scratch, gcols, wgt_t;
  if (!is_pointwise(d) && (gin || gwgt)) {
    cols_scratch.resize(static_cast<std::size_t>(k_n * n_cols));
  }
  if (gin) {
    gcols.resize(static_cast<std::size_t>(k_n * n_cols));
    wgt_t.resize(static_cast<std::size_t>(k_n * d.co));
    for (std::int64_t oc = 0; oc < d.co; ++oc)
      for (std::int64_t k = 0; k < k_n; ++k) wgt_t[k * d.co + oc] = wgt[oc * k_n + k];
  }
  for (std::int64_t b = 0; b < d.b; ++b) {
    const T* gout_b = gout + b * d.co * n_cols;
    const T* in_b = in + b * d.ci * d.h * d.w;
    const T* cols = in_b;
    if (!is_pointwise(d) && (gwgt || gin)) {
      im2col(in_b, d, cols_scratch.data());
      cols = cols_scratch.data();
    }
    if (gwgt) {
      // gW[Co x K] += gout[Co x N] * cols[K x N]^T
      gemm_abt_acc(gout_b, cols, gwgt, d.co, k_n, n_cols);
    }
    if (gin) {
      std::fill(gcols.begin(), gcols.end(), T(0));
      // gcols[K x N] += W^T[K x Co] * gout[Co x N]
      gemm_acc(wgt_t.data(), gout_b, gcols.data(), k_n, d.co, n_cols);
      T* gin_b = gin + b * d.ci * d.h * d.w;
      if (is_pointwise(d)) {
        for (std::int64_t i = 0; i < d.ci * n_cols; ++i) gin_b[i] += gcols[static_cast<std::size_t>(i)];
      } else {
        col2im_acc(gcols.data(), d, gin_b);
      }
    }
  }
  if (gbias) {
    for (std::int64_t oc = 0; oc < d.co; ++oc) {
      T acc = T(0);
      for (std::int64_t b = 0; b < d.b; ++b) {
        const T* gout_plane = gout + (b * d.co + oc) * n_cols;
        for (std::int64_t i = 0; i < n_cols; ++i) acc += gout_plane[i];
      }
      gbias[oc] += acc;
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel,
                 const Tensor<T>& bias, int stride, int padding) {
  Graph<T>& g = graph_of(input, kernel);
  check_rank4("conv2d", input);
  check_rank4("conv2d", kernel);
  if (stride < 1) throw Error("shape", "conv2d: stride must be >= 1");
  if (padding < 0) throw Error("shape", "conv2d: padding must be >= 0");
  const Shape si = input.shape(), sk = kernel.shape();
  if (si.c() != sk.c()) {
    throw Error("shape", "conv2d: input channels of " + si.str() +
                             " do not match kernel " + sk.str());
  }
  ConvDims<T> d{si.n(), si.c(), si.h(), si.w(), sk.n(), sk.h(), sk.w(), 0, 0,
                stride, padding};
  d.ho = (si.h() + 2 * padding - sk.h()) / stride + 1;
  d.wo = (si.w() + 2 * padding - sk.w()) / stride + 1;
  if (d.ho < 1 || d.wo < 1) {
    throw Error("shape", "conv2d: kernel " + sk.str() + " larger than padded input " + si.str());
  }
  const T* bias_ptr = nullptr;
  std::int32_t ibias = -1;
  if (bias.defined()) {
    if (bias.graph() != &g) throw Error("graph", "conv2d: bias from another graph");
    if (bias.shape().numel() != sk.n()) {
      throw Error("shape", "conv2d: bias " + bias.shape().str() +
                               " does not match output channels of " + sk.str());
    }
    bias_ptr = bias.values().data();
    ibias = bias.id();
  }
  const Shape out_shape = Shape::bchw(d.b, d.co, d.ho, d.wo);
  std::vector<T> out(static_cast<std::size_t>(out_shape.numel()));
  const bool use_gemm = stride == 1;
  if (use_gemm) {
    conv2d_forward_gemm(input.values().data(), kernel.values().data(), bias_ptr,
                        out.data(), d);
  } else {
    conv2d_forward_kernel(input.values().data(), kernel.values().data(), bias_ptr,
                          out.data(), d);
  }
  const bool ng = needs(input) || needs(kernel) || (bias.defined() && needs(bias));
  const std::int32_t iin = input.id(), iker = kernel.id();
  std::function<void(Graph<T>&, std::int32_t)> back;
  if (ng) {
    back = [iin, iker, ibias, d, use_gemm](Graph<T>& g, std::int32_t self) {
      const T* gout = g.node(self).grad.data();
      if (use_gemm) {
        conv2d_backward_gemm(g.node(iin).val.data(), g.node(iker).val.data(), gout,
                             g.grad_ptr(iin), g.grad_ptr(iker),
                             ibias >= 0 ? g.grad_ptr(ibias) : nullptr, d);
      } else {
        conv2d_backward_kernel(g.node(iin).val.data(), g.node(iker).val.data(), gout,
                               g.grad_ptr(iin), g.grad_ptr(iker),
                               ibias >= 0 ? g.grad_ptr(ibias) : nullptr, d);
      }
    };
  }
  return g.wrap(g.add_node(out_shape, std::move(out), ng, std::move(back)));
}


template Tensor<float> conv2d(const Tensor<float>&, const Tensor<float>&,
                              const Tensor<float>&, int, int);
template Tensor<double> conv2d(const Tensor<double>&, const Tensor<double>&,
                               const Tensor<double>&, int, int);

}  // namespace lear
