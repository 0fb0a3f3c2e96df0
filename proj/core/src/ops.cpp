#include "lear/ops.hpp"

#include <algorithm>
#include <cmath>

#include "lear/thread_pool.hpp"

namespace lear {
namespace {

template <typename T>
Graph<T>& graph_of(const Tensor<T>& a) {
  if (!a.defined()) throw Error("graph", "operation on undefined tensor");
  return *a.graph();
}

template <typename T>
Graph<T>& graph_of(const Tensor<T>& a, const Tensor<T>& b) {
  Graph<T>& g = graph_of(a);
  if (b.graph() != &g) throw Error("graph", "tensors belong to different graphs");
  return g;
}

template <typename T>
bool needs(const Tensor<T>& a) {
  return a.graph()->node(a.id()).needs_grad;
}

template <typename T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw Error("shape", std::string(op) + ": shape mismatch " + a.shape().str() +
                             " vs " + b.shape().str());
  }
}

template <typename T>
void check_rank4(const char* op, const Tensor<T>& a) {
  if (a.shape().rank != 4)
    throw Error("shape", std::string(op) + ": expected rank-4 tensor, got " + a.shape().str());
}

// Generic element-wise binary op with per-element partials.
template <typename T, typename Fwd, typename Bwd>
Tensor<T> elementwise2(const char* name, const Tensor<T>& a, const Tensor<T>& b,
                       Fwd fwd, Bwd bwd) {
  Graph<T>& g = graph_of(a, b);
  check_same_shape(name, a, b);
  const auto va = a.values();
  const auto vb = b.values();
  std::vector<T> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(va[i], vb[i]);
  const bool ng = needs(a) || needs(b);
  const std::int32_t ia = a.id(), ib = b.id();
  std::function<void(Graph<T>&, std::int32_t)> back;
  if (ng) {
    back = [ia, ib, bwd](Graph<T>& g, std::int32_t self) {
      const auto& go = g.node(self).grad;
      const T* va = g.node(ia).val.data();
      const T* vb = g.node(ib).val.data();
      T* ga = g.grad_ptr(ia);
      T* gb = g.grad_ptr(ib);
      for (std::size_t i = 0; i < go.size(); ++i) {
        T da, db;
        bwd(va[i], vb[i], da, db);
        if (ga) ga[i] += go[i] * da;
        if (gb) gb[i] += go[i] * db;
      }
    };
  }
  return g.wrap(g.add_node(a.shape(), std::move(out), ng, std::move(back)));
}

// Element-wise unary op; backward receives (input value, output value).
template <typename T, typename Fwd, typename Bwd>
Tensor<T> elementwise1(const Tensor<T>& a, Fwd fwd, Bwd bwd) {
  Graph<T>& g = graph_of(a);
  const auto va = a.values();
  std::vector<T> out(va.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(va[i]);
  const bool ng = needs(a);
  const std::int32_t ia = a.id();
  std::function<void(Graph<T>&, std::int32_t)> back;
  if (ng) {
    back = [ia, bwd](Graph<T>& g, std::int32_t self) {
      const auto& go = g.node(self).grad;
      const auto& vo = g.node(self).val;
      const T* va = g.node(ia).val.data();
      T* ga = g.grad_ptr(ia);
      if (!ga) return;
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bwd(va[i], vo[i]);
    };
  }
  return g.wrap(g.add_node(a.shape(), std::move(out), ng, std::move(back)));
}

inline std::int64_t ceil_div_nonneg(std::int64_t a, std::int64_t s) {
  return a > 0 ? (a + s - 1) / s : 0;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise2<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T, T, T& da, T& db) { da = T(1); db = T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise2<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T, T& da, T& db) { da = T(1); db = T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise2<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T x, T y, T& da, T& db) { da = y; db = x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return elementwise1<T>(
      a, [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return elementwise1<T>(
      a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> rsub_scalar(T s, const Tensor<T>& a) {
  return elementwise1<T>(
      a, [s](T x) { return s - x; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return elementwise1<T>(
      a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return elementwise1<T>(
      a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return elementwise1<T>(
      a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return elementwise1<T>(
      a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> sqrt0(const Tensor<T>& a) {
  return elementwise1<T>(
      a, [](T x) { return std::sqrt(x); },
      [](T, T y) { return y > T(0) ? T(1) / (T(2) * y) : T(0); });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return elementwise1<T>(
      a, [lo, hi](T x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](T x, T) { return (x > lo && x < hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> concat_c(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw Error("shape", "concat_c: empty part list");
  Graph<T>& g = graph_of(parts[0]);
  check_rank4("concat_c", parts[0]);
  const Shape s0 = parts[0].shape();
  std::int64_t c_total = 0;
  bool ng = false;
  for (const auto& p : parts) {
    if (p.graph() != &g) throw Error("graph", "concat_c: tensors from different graphs");
    check_rank4("concat_c", p);
    const Shape s = p.shape();
    if (s.n() != s0.n() || s.h() != s0.h() || s.w() != s0.w()) {
      throw Error("shape", "concat_c: incompatible shapes " + s0.str() + " vs " + s.str());
    }
    c_total += s.c();
    ng = ng || needs(p);
  }
  const std::int64_t b_n = s0.n(), hw = s0.h() * s0.w();
  const Shape out_shape = Shape::bchw(b_n, c_total, s0.h(), s0.w());
  std::vector<T> out(static_cast<std::size_t>(out_shape.numel()));
  std::vector<std::int32_t> ids;
  std::vector<std::int64_t> chans;
  for (const auto& p : parts) {
    ids.push_back(p.id());
    chans.push_back(p.shape().c());
  }
  for (std::int64_t b = 0; b < b_n; ++b) {
    std::int64_t c_off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto vp = parts[k].values();
      const std::int64_t ck = chans[k];
      std::copy_n(vp.data() + b * ck * hw, ck * hw,
                  out.data() + (b * c_total + c_off) * hw);
      c_off += ck;
    }
  }
  std::function<void(Graph<T>&, std::int32_t)> back;
  if (ng) {
    back = [ids, chans, b_n, hw, c_total](Graph<T>& g, std::int32_t self) {
      const T* go = g.node(self).grad.data();
      for (std::int64_t b = 0; b < b_n; ++b) {
        std::int64_t c_off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          const std::int64_t ck = chans[k];
          if (T* gp = g.grad_ptr(ids[k])) {
            const T* src = go + (b * c_total + c_off) * hw;
            T* dst = gp + b * ck * hw;
            for (std::int64_t i = 0; i < ck * hw; ++i) dst[i] += src[i];
          }
          c_off += ck;
        }
      }
    };
  }
  return g.wrap(g.add_node(out_shape, std::move(out), ng, std::move(back)));
}

template <typename T>
Tensor<T> slice_c(const Tensor<T>& a, std::int64_t c_begin, std::int64_t c_end) {
  Graph<T>& g = graph_of(a);
  check_rank4("slice_c", a);
  const Shape s = a.shape();
  if (c_begin < 0 || c_end > s.c() || c_begin >= c_end) {
    throw Error("shape", "slice_c: invalid channel range [" + std::to_string(c_begin) +
                             "," + std::to_string(c_end) + ") for " + s.str());
  }
  const std::int64_t b_n = s.n(), hw = s.h() * s.w(), cs = c_end - c_begin;
  const Shape out_shape = Shape::bchw(b_n, cs, s.h(), s.w());
  std::vector<T> out(static_cast<std::size_t>(out_shape.numel()));
  const auto va = a.values();
  for (std::int64_t b = 0; b < b_n; ++b) {
    std::copy_n(va.data() + (b * s.c() + c_begin) * hw, cs * hw, out.data() + b * cs * hw);
  }
  const bool ng = needs(a);
  const std::int32_t ia = a.id();
  const std::int64_t c_in = s.c();
  std::function<void(Graph<T>&, std::int32_t)> back;
  if (ng) {
    back = [ia, c_begin, cs, b_n, hw, c_in](Graph<T>& g, std::int32_t self) {
      const T* go = g.node(self).grad.data();
      T* ga = g.grad_ptr(ia);
      if (!ga) return;
      for (std::int64_t b = 0; b < b_n; ++b) {
        const T* src = go + b * cs * hw;
        T* dst = ga + (b * c_in + c_begin) * hw;
        for (std::int64_t i = 0; i < cs * hw; ++i) dst[i] += src[i];
      }
    };
  }
  return g.wrap(g.add_node(out_shape, std::move(out), ng, std::move(back)));
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  Graph<T>& g = graph_of(a);
  const auto va = a.values();
  T acc = T(0);
  for (const T v : va) acc += v;
  const bool ng = needs(a);
  const std::int32_t ia = a.id();
  std::function<void(Graph<T>&, std::int32_t)> back;
  if (ng) {
    back = [ia](Graph<T>& g, std::int32_t self) {
      const T go = g.node(self).grad[0];
      T* ga = g.grad_ptr(ia);
      if (!ga) return;
      const std::size_t n = g.node(ia).val.size();
      for (std::size_t i = 0; i < n; ++i) ga[i] += go;
    };
  }
  return g.wrap(g.add_node(Shape::scalar(), {acc}, ng, std::move(back)));
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return scale(sum_all(a), T(1) / static_cast<T>(a.shape().numel()));
}

template <typename T>
Tensor<T> sum_c(const Tensor<T>& a) {
  Graph<T>& g = graph_of(a);
  check_rank4("sum_c", a);
  const Shape s = a.shape();
  const std::int64_t b_n = s.n(), c_n = s.c(), hw = s.h() * s.w();
  const Shape out_shape = Shape::bchw(b_n, 1, s.h(), s.w());
  std::vector<T> out(static_cast<std::size_t>(out_shape.numel()), T(0));
  const auto va = a.values();
  for (std::int64_t b = 0; b < b_n; ++b) {
    for (std::int64_t c = 0; c < c_n; ++c) {
      const T* src = va.data() + (b * c_n + c) * hw;
      T* dst = out.data() + b * hw;
      for (std::int64_t i = 0; i < hw; ++i) dst[i] += src[i];
    }
  }
  const bool ng = needs(a);
  const std::int32_t ia = a.id();
  std::function<void(Graph<T>&, std::int32_t)> back;
  if (ng) {
    back = [ia, b_n, c_n, hw](Graph<T>& g, std::int32_t self) {
      const T* go = g.node(self).grad.data();
      T* ga = g.grad_ptr(ia);
      if (!ga) return;
      for (std::int64_t b = 0; b < b_n; ++b) {
        for (std::int64_t c = 0; c < c_n; ++c) {
          const T* src = go + b * hw;
          T* dst = ga + (b * c_n + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) dst[i] += src[i];
        }
      }
    };
  }
  return g.wrap(g.add_node(out_shape, std::move(out), ng, std::move(back)));
}

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& a) {
  Graph<T>& g = graph_of(a);
  check_rank4("avg_pool2", a);
  const Shape s = a.shape();
  const std::int64_t ho = s.h() / 2, wo = s.w() / 2;
  if (ho < 1 || wo < 1) throw Error("shape", "avg_pool2: input too small: " + s.str());
  const Shape out_shape = Shape::bchw(s.n(), s.c(), ho, wo);
  std::vector<T> out(static_cast<std::size_t>(out_shape.numel()));
  const auto va = a.values();
  const std::int64_t planes = s.n() * s.c();
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* in_plane = va.data() + p * s.h() * s.w();
    T* out_plane = out.data() + p * ho * wo;
    for (std::int64_t y = 0; y < ho; ++y) {
      const T* r0 = in_plane + (2 * y) * s.w();
      const T* r1 = in_plane + (2 * y + 1) * s.w();
      for (std::int64_t x = 0; x < wo; ++x) {
        out_plane[y * wo + x] =
            (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]) * T(0.25);
      }
    }
  }
  const bool ng = needs(a);
  const std::int32_t ia = a.id();
  const std::int64_t h = s.h(), w = s.w();
  std::function<void(Graph<T>&, std::int32_t)> back;
  if (ng) {
    back = [ia, planes, ho, wo, h, w](Graph<T>& g, std::int32_t self) {
      const T* go = g.node(self).grad.data();
      T* ga = g.grad_ptr(ia);
      if (!ga) return;
      for (std::int64_t p = 0; p < planes; ++p) {
        const T* go_plane = go + p * ho * wo;
        T* ga_plane = ga + p * h * w;
        for (std::int64_t y = 0; y < ho; ++y) {
          for (std::int64_t x = 0; x < wo; ++x) {
            const T v = go_plane[y * wo + x] * T(0.25);
            ga_plane[(2 * y) * w + 2 * x] += v;
            ga_plane[(2 * y) * w + 2 * x + 1] += v;
            ga_plane[(2 * y + 1) * w + 2 * x] += v;
            ga_plane[(2 * y + 1) * w + 2 * x + 1] += v;
          }
        }
      }
    };
  }
  return g.wrap(g.add_node(out_shape, std::move(out), ng, std::move(back)));
}

namespace {

struct LerpIndex {
  std::int64_t i0, i1;
  double frac;
};

// Half-pixel-centre source coordinates with border clamping.
inline LerpIndex resize_index(std::int64_t dst, std::int64_t in_size, std::int64_t out_size) {
  const double src = (static_cast<double>(dst) + 0.5) *
                         (static_cast<double>(in_size) / static_cast<double>(out_size)) -
                     0.5;
  double floor_src = std::floor(src);
  double frac = src - floor_src;
  std::int64_t i0 = static_cast<std::int64_t>(floor_src);
  std::int64_t i1 = i0 + 1;
  if (i0 < 0) {
    i0 = 0;
    i1 = 0;
    frac = 0.0;
  }
  if (i1 >= in_size) {
    i1 = in_size - 1;
    if (i0 >= in_size) i0 = in_size - 1;
  }
  return {i0, i1, frac};
}

}  // namespace

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& a, std::int64_t out_h, std::int64_t out_w) {
  Graph<T>& g = graph_of(a);
  check_rank4("upsample_bilinear", a);
  const Shape s = a.shape();
  if (out_h < 1 || out_w < 1) throw Error("shape", "upsample_bilinear: bad output extent");
  std::vector<LerpIndex> xs(out_w), ys(out_h);
  for (std::int64_t x = 0; x < out_w; ++x) xs[x] = resize_index(x, s.w(), out_w);
  for (std::int64_t y = 0; y < out_h; ++y) ys[y] = resize_index(y, s.h(), out_h);
  const Shape out_shape = Shape::bchw(s.n(), s.c(), out_h, out_w);
  std::vector<T> out(static_cast<std::size_t>(out_shape.numel()));
  const auto va = a.values();
  const std::int64_t planes = s.n() * s.c();
  const std::int64_t h = s.h(), w = s.w();
  parallel_for(planes, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t p = lo; p < hi; ++p) {
      const T* in_plane = va.data() + p * h * w;
      T* out_plane = out.data() + p * out_h * out_w;
      for (std::int64_t y = 0; y < out_h; ++y) {
        const auto& iy = ys[y];
        const T fy = static_cast<T>(iy.frac);
        const T* r0 = in_plane + iy.i0 * w;
        const T* r1 = in_plane + iy.i1 * w;
        for (std::int64_t x = 0; x < out_w; ++x) {
          const auto& ix = xs[x];
          const T fx = static_cast<T>(ix.frac);
          const T top = (T(1) - fx) * r0[ix.i0] + fx * r0[ix.i1];
          const T bot = (T(1) - fx) * r1[ix.i0] + fx * r1[ix.i1];
          out_plane[y * out_w + x] = (T(1) - fy) * top + fy * bot;
        }
      }
    }
  });
  const bool ng = needs(a);
  const std::int32_t ia = a.id();
  std::function<void(Graph<T>&, std::int32_t)> back;
  if (ng) {
    back = [ia, xs, ys, planes, h, w, out_h, out_w](Graph<T>& g, std::int32_t self) {
      const T* go = g.node(self).grad.data();
      T* ga = g.grad_ptr(ia);
      if (!ga) return;
      parallel_for(planes, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t p = lo; p < hi; ++p) {
          const T* go_plane = go + p * out_h * out_w;
          T* ga_plane = ga + p * h * w;
          for (std::int64_t y = 0; y < out_h; ++y) {
            const auto& iy = ys[y];
            const T fy = static_cast<T>(iy.frac);
            for (std::int64_t x = 0; x < out_w; ++x) {
              const auto& ix = xs[x];
              const T fx = static_cast<T>(ix.frac);
              const T v = go_plane[y * out_w + x];
              ga_plane[iy.i0 * w + ix.i0] += v * (T(1) - fy) * (T(1) - fx);
              ga_plane[iy.i0 * w + ix.i1] += v * (T(1) - fy) * fx;
              ga_plane[iy.i1 * w + ix.i0] += v * fy * (T(1) - fx);
              ga_plane[iy.i1 * w + ix.i1] += v * fy * fx;
            }
          }
        }
      });
    };
  }
  return g.wrap(g.add_node(out_shape, std::move(out), ng, std::move(back)));
}

template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& field, const Tensor<T>& coords) {
  Graph<T>& g = graph_of(field, coords);
  check_rank4("bilinear_sample", field);
  check_rank4("bilinear_sample", coords);
  const Shape sf = field.shape(), sc = coords.shape();
  if (sc.c() != 2 || sc.n() != sf.n()) {
    throw Error("shape", "bilinear_sample: coords " + sc.str() +
                             " incompatible with field " + sf.str());
  }
  const std::int64_t b_n = sf.n(), c_n = sf.c(), hs = sf.h(), ws = sf.w();
  const std::int64_t ho = sc.h(), wo = sc.w();
  const Shape out_shape = Shape::bchw(b_n, c_n, ho, wo);
  std::vector<T> out(static_cast<std::size_t>(out_shape.numel()), T(0));
  const T* fv = field.values().data();
  const T* cv = coords.values().data();
  const std::int64_t out_hw = ho * wo, src_hw = hs * ws;
  parallel_for(b_n * ho, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t row = lo; row < hi; ++row) {
      const std::int64_t b = row / ho;
      const std::int64_t y = row % ho;
      const T* cx_row = cv + (b * 2 + 0) * out_hw + y * wo;
      const T* cy_row = cv + (b * 2 + 1) * out_hw + y * wo;
      for (std::int64_t x = 0; x < wo; ++x) {
        const T sx = cx_row[x], sy = cy_row[x];
        const std::int64_t x0 = static_cast<std::int64_t>(std::floor(sx));
        const std::int64_t y0 = static_cast<std::int64_t>(std::floor(sy));
        const T fx = sx - static_cast<T>(x0);
        const T fy = sy - static_cast<T>(y0);
        const bool x0_in = x0 >= 0 && x0 < ws, x1_in = x0 + 1 >= 0 && x0 + 1 < ws;
        const bool y0_in = y0 >= 0 && y0 < hs, y1_in = y0 + 1 >= 0 && y0 + 1 < hs;
        for (std::int64_t c = 0; c < c_n; ++c) {
          const T* plane = fv + (b * c_n + c) * src_hw;
          const T v00 = (x0_in && y0_in) ? plane[y0 * ws + x0] : T(0);
          const T v01 = (x1_in && y0_in) ? plane[y0 * ws + x0 + 1] : T(0);
          const T v10 = (x0_in && y1_in) ? plane[(y0 + 1) * ws + x0] : T(0);
          const T v11 = (x1_in && y1_in) ? plane[(y0 + 1) * ws + x0 + 1] : T(0);
          out[(b * c_n + c) * out_hw + y * wo + x] =
              (T(1) - fy) * ((T(1) - fx) * v00 + fx * v01) +
              fy * ((T(1) - fx) * v10 + fx * v11);
        }
      }
    }
  });
  const bool ng = needs(field) || needs(coords);
  const std::int32_t ifield = field.id(), icoords = coords.id();
  std::function<void(Graph<T>&, std::int32_t)> back;
  if (ng) {
    back = [ifield, icoords, b_n, c_n, hs, ws, ho, wo](Graph<T>& g, std::int32_t self) {
      const T* go = g.node(self).grad.data();
      const T* fv = g.node(ifield).val.data();
      const T* cv = g.node(icoords).val.data();
      T* gf = g.grad_ptr(ifield);
      T* gc = g.grad_ptr(icoords);
      const std::int64_t out_hw = ho * wo, src_hw = hs * ws;
      for (std::int64_t b = 0; b < b_n; ++b) {
        for (std::int64_t y = 0; y < ho; ++y) {
          for (std::int64_t x = 0; x < wo; ++x) {
            const T sx = cv[(b * 2 + 0) * out_hw + y * wo + x];
            const T sy = cv[(b * 2 + 1) * out_hw + y * wo + x];
            const std::int64_t x0 = static_cast<std::int64_t>(std::floor(sx));
            const std::int64_t y0 = static_cast<std::int64_t>(std::floor(sy));
            const T fx = sx - static_cast<T>(x0);
            const T fy = sy - static_cast<T>(y0);
            const bool x0_in = x0 >= 0 && x0 < ws, x1_in = x0 + 1 >= 0 && x0 + 1 < ws;
            const bool y0_in = y0 >= 0 && y0 < hs, y1_in = y0 + 1 >= 0 && y0 + 1 < hs;
            T dx_acc = T(0), dy_acc = T(0);
            for (std::int64_t c = 0; c < c_n; ++c) {
              const T* plane = fv + (b * c_n + c) * src_hw;
              const T v00 = (x0_in && y0_in) ? plane[y0 * ws + x0] : T(0);
              const T v01 = (x1_in && y0_in) ? plane[y0 * ws + x0 + 1] : T(0);
              const T v10 = (x0_in && y1_in) ? plane[(y0 + 1) * ws + x0] : T(0);
              const T v11 = (x1_in && y1_in) ? plane[(y0 + 1) * ws + x0 + 1] : T(0);
              const T gv = go[(b * c_n + c) * out_hw + y * wo + x];
              if (gf) {
                T* gplane = gf + (b * c_n + c) * src_hw;
                if (x0_in && y0_in) gplane[y0 * ws + x0] += gv * (T(1) - fy) * (T(1) - fx);
                if (x1_in && y0_in) gplane[y0 * ws + x0 + 1] += gv * (T(1) - fy) * fx;
                if (x0_in && y1_in) gplane[(y0 + 1) * ws + x0] += gv * fy * (T(1) - fx);
                if (x1_in && y1_in) gplane[(y0 + 1) * ws + x0 + 1] += gv * fy * fx;
              }
              if (gc) {
                dx_acc += gv * ((T(1) - fy) * (v01 - v00) + fy * (v11 - v10));
                dy_acc += gv * ((T(1) - fx) * (v10 - v00) + fx * (v11 - v01));
              }
            }
            if (gc) {
              gc[(b * 2 + 0) * out_hw + y * wo + x] += dx_acc;
              gc[(b * 2 + 1) * out_hw + y * wo + x] += dy_acc;
            }
          }
        }
      }
    };
  }
  return g.wrap(g.add_node(out_shape, std::move(out), ng, std::move(back)));
}

// ---------------------------------------------------------------------------
// correlation volume
// ---------------------------------------------------------------------------

namespace {

// [B,C,H,W] -> [B, H*W, C] so dot products run over contiguous memory.
template <typename T>
std::vector<T> to_pixel_major(const T* v, std::int64_t b_n, std::int64_t c_n,
                              std::int64_t hw) {
  std::vector<T> out(static_cast<std::size_t>(b_n * hw * c_n));
  for (std::int64_t b = 0; b < b_n; ++b) {
    for (std::int64_t c = 0; c < c_n; ++c) {
      const T* src = v + (b * c_n + c) * hw;
      T* dst = out.data() + b * hw * c_n + c;
      for (std::int64_t i = 0; i < hw; ++i) dst[i * c_n] = src[i];
    }
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> corr_allpairs(const Tensor<T>& f_d, const Tensor<T>& f_ev) {
  Graph<T>& g = graph_of(f_d, f_ev);
  check_same_shape("corr_allpairs", f_d, f_ev);
  check_rank4("corr_allpairs", f_d);
  const Shape s = f_d.shape();
  const std::int64_t b_n = s.n(), c_n = s.c(), h = s.h(), w = s.w(), hw = h * w;
  const T inv_sqrt_c = T(1) / static_cast<T>(std::sqrt(static_cast<double>(c_n)));
  const auto fd_pm = to_pixel_major(f_d.values().data(), b_n, c_n, hw);
  const auto fev_pm = to_pixel_major(f_ev.values().data(), b_n, c_n, hw);
  const Shape out_shape = Shape::bchw(b_n * hw, 1, h, w);
  std::vector<T> out(static_cast<std::size_t>(out_shape.numel()));
  parallel_for(b_n * hw, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t src = lo; src < hi; ++src) {
      const std::int64_t b = src / hw;
      const T* fd_px = fd_pm.data() + src * c_n;
      const T* fev_base = fev_pm.data() + b * hw * c_n;
      T* out_row = out.data() + src * hw;
      for (std::int64_t t = 0; t < hw; ++t) {
        const T* fev_px = fev_base + t * c_n;
        T acc = T(0);
        for (std::int64_t c = 0; c < c_n; ++c) acc += fd_px[c] * fev_px[c];
        out_row[t] = acc * inv_sqrt_c;
      }
    }
  });
  const bool ng = needs(f_d) || needs(f_ev);
  const std::int32_t ifd = f_d.id(), ifev = f_ev.id();
  std::function<void(Graph<T>&, std::int32_t)> back;
  if (ng) {
    back = [ifd, ifev, b_n, c_n, hw, inv_sqrt_c](Graph<T>& g, std::int32_t self) {
      const T* go = g.node(self).grad.data();
      const auto fd_pm = to_pixel_major(g.node(ifd).val.data(), b_n, c_n, hw);
      const auto fev_pm = to_pixel_major(g.node(ifev).val.data(), b_n, c_n, hw);
      T* gfd = g.grad_ptr(ifd);
      T* gfev = g.grad_ptr(ifev);
      if (gfd) {
        // d corr / d f_d: rows are independent per source pixel.
        std::vector<T> gfd_pm(static_cast<std::size_t>(b_n * hw * c_n), T(0));
        parallel_for(b_n * hw, [&](std::int64_t lo, std::int64_t hi) {
          for (std::int64_t src = lo; src < hi; ++src) {
            const std::int64_t b = src / hw;
            const T* go_row = go + src * hw;
            const T* fev_base = fev_pm.data() + b * hw * c_n;
            T* acc = gfd_pm.data() + src * c_n;
            for (std::int64_t t = 0; t < hw; ++t) {
              const T gv = go_row[t] * inv_sqrt_c;
              if (gv == T(0)) continue;
              const T* fev_px = fev_base + t * c_n;
              for (std::int64_t c = 0; c < c_n; ++c) acc[c] += gv * fev_px[c];
            }
          }
        });
        for (std::int64_t b = 0; b < b_n; ++b)
          for (std::int64_t c = 0; c < c_n; ++c)
            for (std::int64_t i = 0; i < hw; ++i)
              gfd[(b * c_n + c) * hw + i] += gfd_pm[(b * hw + i) * c_n + c];
      }
      if (gfev) {
        std::vector<T> gfev_pm(static_cast<std::size_t>(b_n * hw * c_n), T(0));
        for (std::int64_t b = 0; b < b_n; ++b) {
          for (std::int64_t s_px = 0; s_px < hw; ++s_px) {
            const std::int64_t src = b * hw + s_px;
            const T* go_row = go + src * hw;
            const T* fd_px = fd_pm.data() + src * c_n;
            for (std::int64_t t = 0; t < hw; ++t) {
              const T gv = go_row[t] * inv_sqrt_c;
              if (gv == T(0)) continue;
              T* acc = gfev_pm.data() + (b * hw + t) * c_n;
              for (std::int64_t c = 0; c < c_n; ++c) acc[c] += gv * fd_px[c];
            }
          }
        }
        for (std::int64_t b = 0; b < b_n; ++b)
          for (std::int64_t c = 0; c < c_n; ++c)
            for (std::int64_t i = 0; i < hw; ++i)
              gfev[(b * c_n + c) * hw + i] += gfev_pm[(b * hw + i) * c_n + c];
      }
    };
  }
  return g.wrap(g.add_node(out_shape, std::move(out), ng, std::move(back)));
}

template <typename T>
Tensor<T> corr_lookup(const Tensor<T>& level, const Tensor<T>& flow, int radius,
                      int level_index) {
  Graph<T>& g = graph_of(level, flow);
  check_rank4("corr_lookup", level);
  check_rank4("corr_lookup", flow);
  const Shape sl = level.shape(), sf = flow.shape();
  if (sf.c() != 2) throw Error("shape", "corr_lookup: flow must have 2 channels");
  const std::int64_t b_n = sf.n(), h = sf.h(), w = sf.w(), hw = h * w;
  if (sl.n() != b_n * hw || sl.c() != 1) {
    throw Error("shape", "corr_lookup: level " + sl.str() + " does not match flow grid " +
                             sf.str());
  }
  if (radius < 0) throw Error("shape", "corr_lookup: radius must be >= 0");
  const std::int64_t hl = sl.h(), wl = sl.w();
  const std::int64_t win = 2 * radius + 1;
  const std::int64_t c_out = win * win;
  const T inv_denom = T(1) / static_cast<T>(std::int64_t(1) << level_index);
  const Shape out_shape = Shape::bchw(b_n, c_out, h, w);
  std::vector<T> out(static_cast<std::size_t>(out_shape.numel()), T(0));
  const T* lv = level.values().data();
  const T* flv = flow.values().data();
  parallel_for(b_n * h, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t row = lo; row < hi; ++row) {
      const std::int64_t b = row / h;
      const std::int64_t sy = row % h;
      for (std::int64_t sx = 0; sx < w; ++sx) {
        const std::int64_t src = b * hw + sy * w + sx;
        const T* plane = lv + src * hl * wl;
        const T cx = (static_cast<T>(sx) + flv[(b * 2 + 0) * hw + sy * w + sx]) * inv_denom;
        const T cy = (static_cast<T>(sy) + flv[(b * 2 + 1) * hw + sy * w + sx]) * inv_denom;
        for (std::int64_t dy = -radius; dy <= radius; ++dy) {
          for (std::int64_t dx = -radius; dx <= radius; ++dx) {
            const T px = cx + static_cast<T>(dx);
            const T py = cy + static_cast<T>(dy);
            const std::int64_t x0 = static_cast<std::int64_t>(std::floor(px));
            const std::int64_t y0 = static_cast<std::int64_t>(std::floor(py));
            const T fx = px - static_cast<T>(x0);
            const T fy = py - static_cast<T>(y0);
            const bool x0_in = x0 >= 0 && x0 < wl, x1_in = x0 + 1 >= 0 && x0 + 1 < wl;
            const bool y0_in = y0 >= 0 && y0 < hl, y1_in = y0 + 1 >= 0 && y0 + 1 < hl;
            const T v00 = (x0_in && y0_in) ? plane[y0 * wl + x0] : T(0);
            const T v01 = (x1_in && y0_in) ? plane[y0 * wl + x0 + 1] : T(0);
            const T v10 = (x0_in && y1_in) ? plane[(y0 + 1) * wl + x0] : T(0);
            const T v11 = (x1_in && y1_in) ? plane[(y0 + 1) * wl + x0 + 1] : T(0);
            const std::int64_t oc = (dy + radius) * win + (dx + radius);
            out[(b * c_out + oc) * hw + sy * w + sx] =
                (T(1) - fy) * ((T(1) - fx) * v00 + fx * v01) +
                fy * ((T(1) - fx) * v10 + fx * v11);
          }
        }
      }
    }
  });
  const bool ng = needs(level) || needs(flow);
  const std::int32_t ilev = level.id(), iflow = flow.id();
  std::function<void(Graph<T>&, std::int32_t)> back;
  if (ng) {
    back = [ilev, iflow, b_n, h, w, hw, hl, wl, radius, win, c_out,
            inv_denom](Graph<T>& g, std::int32_t self) {
      const T* go = g.node(self).grad.data();
      const T* lv = g.node(ilev).val.data();
      const T* flv = g.node(iflow).val.data();
      T* gl = g.grad_ptr(ilev);
      T* gflow = g.grad_ptr(iflow);
      // Each source pixel owns its own level plane and flow entry, so the
      // scatter is collision-free across sources.
      parallel_for(b_n * h, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t row = lo; row < hi; ++row) {
          const std::int64_t b = row / h;
          const std::int64_t sy = row % h;
          for (std::int64_t sx = 0; sx < w; ++sx) {
            const std::int64_t src = b * hw + sy * w + sx;
            const T* plane = lv + src * hl * wl;
            T* gplane = gl ? gl + src * hl * wl : nullptr;
            const T cx =
                (static_cast<T>(sx) + flv[(b * 2 + 0) * hw + sy * w + sx]) * inv_denom;
            const T cy =
                (static_cast<T>(sy) + flv[(b * 2 + 1) * hw + sy * w + sx]) * inv_denom;
            T dx_acc = T(0), dy_acc = T(0);
            for (std::int64_t dy = -radius; dy <= radius; ++dy) {
              for (std::int64_t dx = -radius; dx <= radius; ++dx) {
                const std::int64_t oc = (dy + radius) * win + (dx + radius);
                const T gv = go[(b * c_out + oc) * hw + sy * w + sx];
                if (gv == T(0)) continue;
                const T px = cx + static_cast<T>(dx);
                const T py = cy + static_cast<T>(dy);
                const std::int64_t x0 = static_cast<std::int64_t>(std::floor(px));
                const std::int64_t y0 = static_cast<std::int64_t>(std::floor(py));
                const T fx = px - static_cast<T>(x0);
                const T fy = py - static_cast<T>(y0);
                const bool x0_in = x0 >= 0 && x0 < wl, x1_in = x0 + 1 >= 0 && x0 + 1 < wl;
                const bool y0_in = y0 >= 0 && y0 < hl, y1_in = y0 + 1 >= 0 && y0 + 1 < hl;
                const T v00 = (x0_in && y0_in) ? plane[y0 * wl + x0] : T(0);
                const T v01 = (x1_in && y0_in) ? plane[y0 * wl + x0 + 1] : T(0);
                const T v10 = (x0_in && y1_in) ? plane[(y0 + 1) * wl + x0] : T(0);
                const T v11 = (x1_in && y1_in) ? plane[(y0 + 1) * wl + x0 + 1] : T(0);
                if (gplane) {
                  if (x0_in && y0_in) gplane[y0 * wl + x0] += gv * (T(1) - fy) * (T(1) - fx);
                  if (x1_in && y0_in) gplane[y0 * wl + x0 + 1] += gv * (T(1) - fy) * fx;
                  if (x0_in && y1_in) gplane[(y0 + 1) * wl + x0] += gv * fy * (T(1) - fx);
                  if (x1_in && y1_in) gplane[(y0 + 1) * wl + x0 + 1] += gv * fy * fx;
                }
                if (gflow) {
                  dx_acc += gv * ((T(1) - fy) * (v01 - v00) + fy * (v11 - v10));
                  dy_acc += gv * ((T(1) - fx) * (v10 - v00) + fx * (v11 - v01));
                }
              }
            }
            if (gflow) {
              gflow[(b * 2 + 0) * hw + sy * w + sx] += dx_acc * inv_denom;
              gflow[(b * 2 + 1) * hw + sy * w + sx] += dy_acc * inv_denom;
            }
          }
        }
      });
    };
  }
  return g.wrap(g.add_node(out_shape, std::move(out), ng, std::move(back)));
}

template <typename T>
Tensor<T> coord_grid(Graph<T>& g, std::int64_t b, std::int64_t h, std::int64_t w) {
  const Shape s = Shape::bchw(b, 2, h, w);
  std::vector<T> v(static_cast<std::size_t>(s.numel()));
  const std::int64_t hw = h * w;
  for (std::int64_t bi = 0; bi < b; ++bi) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        v[(bi * 2 + 0) * hw + y * w + x] = static_cast<T>(x);
        v[(bi * 2 + 1) * hw + y * w + x] = static_cast<T>(y);
      }
    }
  }
  return g.constant(s, std::move(v));
}

// Explicit instantiations.
#define LEAR_INSTANTIATE_OPS(T)                                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> scale(const Tensor<T>&, T);                                         \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                    \
  template Tensor<T> rsub_scalar(T, const Tensor<T>&);                                   \
  template Tensor<T> relu(const Tensor<T>&);                                             \
  template Tensor<T> sigmoid(const Tensor<T>&);                                          \
  template Tensor<T> tanh(const Tensor<T>&);                                             \
  template Tensor<T> log(const Tensor<T>&);                                              \
  template Tensor<T> sqrt0(const Tensor<T>&);                                            \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                      \
  template Tensor<T> concat_c(const std::vector<Tensor<T>>&);                            \
  template Tensor<T> slice_c(const Tensor<T>&, std::int64_t, std::int64_t);              \
  template Tensor<T> sum_all(const Tensor<T>&);                                          \
  template Tensor<T> mean_all(const Tensor<T>&);                                         \
  template Tensor<T> sum_c(const Tensor<T>&);                                            \
  template Tensor<T> avg_pool2(const Tensor<T>&);                                        \
  template Tensor<T> upsample_bilinear(const Tensor<T>&, std::int64_t, std::int64_t);    \
  template Tensor<T> bilinear_sample(const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> corr_allpairs(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> corr_lookup(const Tensor<T>&, const Tensor<T>&, int, int);          \
  template Tensor<T> coord_grid(Graph<T>&, std::int64_t, std::int64_t, std::int64_t);

LEAR_INSTANTIATE_OPS(float)
LEAR_INSTANTIATE_OPS(double)

}  // namespace lear
