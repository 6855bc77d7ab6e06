#include <algorithm>
#include <cmath>
#include <sstream>

#include "op_util.hpp"

namespace tcaps {

using detail::Node;
using detail::parent_grad;
using detail::require_rank;
using detail::require_same_shape;

namespace {

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t length = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    fail(ErrorCode::shape, std::string(op) + ": axis " + std::to_string(axis) + " invalid for " +
                               shape_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(weight, 4, "conv2d", "weight");
  require_rank(bias, 1, "conv2d", "bias");
  if (stride == 0) fail(ErrorCode::invalid_argument, "conv2d: stride must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t f = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != c) {
    fail(ErrorCode::shape, "conv2d: input has " + std::to_string(c) + " channels but weight expects " +
                               std::to_string(weight.dim(1)));
  }
  if (bias.dim(0) != f) {
    fail(ErrorCode::shape, "conv2d: bias length " + std::to_string(bias.dim(0)) + " != filters " +
                               std::to_string(f));
  }
  if (h + 2 * padding < kh || w + 2 * padding < kw) {
    fail(ErrorCode::shape, "conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                               " larger than padded input " + shape_string(input.shape()));
  }
  const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
  const std::size_t ow = (w + 2 * padding - kw) / stride + 1;

  const auto x = input.values();
  const auto wt = weight.values();
  const auto b = bias.values();
  std::vector<Real> out(n * f * oh * ow);

  // Valid output range along one axis for kernel offset k.
  auto range = [stride, padding](std::size_t k, std::size_t in_len, std::size_t out_len) {
    // iy = oy*stride + k - padding must lie in [0, in_len)
    std::size_t lo = 0;
    if (k < padding) lo = (padding - k + stride - 1) / stride;
    std::size_t hi = 0;
    if (in_len + padding > k) hi = std::min(out_len, (in_len + padding - k - 1) / stride + 1);
    return std::pair{lo, std::max(lo, hi)};
  };

  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t fi = 0; fi < f; ++fi) {
      Real* o = &out[(in * f + fi) * oh * ow];
      std::fill(o, o + oh * ow, b[fi]);
      for (std::size_t ci = 0; ci < c; ++ci) {
        const Real* xp = &x[(in * c + ci) * h * w];
        const Real* wp = &wt[(fi * c + ci) * kh * kw];
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const auto [y0, y1] = range(ky, h, oh);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const auto [x0, x1] = range(kx, w, ow);
            const Real wv = wp[ky * kw + kx];
            for (std::size_t oy = y0; oy < y1; ++oy) {
              const Real* row = xp + (oy * stride + ky - padding) * w;
              Real* orow = o + oy * ow;
              for (std::size_t ox = x0; ox < x1; ++ox) {
                orow[ox] += wv * row[ox * stride + kx - padding];
              }
            }
          }
        }
      }
    }
  }

  return Tensor::make_result(
      "conv2d", {n, f, oh, ow}, std::move(out), {input, weight, bias},
      [=](Node& self) {
        const auto& g = self.grad;
        const auto& xv = self.parents[0]->values;
        const auto& wv = self.parents[1]->values;
        auto* gx = parent_grad(self, 0);
        auto* gw = parent_grad(self, 1);
        auto* gb = parent_grad(self, 2);
        for (std::size_t in = 0; in < n; ++in) {
          for (std::size_t fi = 0; fi < f; ++fi) {
            const Real* go = &g[(in * f + fi) * oh * ow];
            if (gb) {
              Real acc = 0;
              for (std::size_t k = 0; k < oh * ow; ++k) acc += go[k];
              (*gb)[fi] += acc;
            }
            for (std::size_t ci = 0; ci < c; ++ci) {
              const std::size_t xoff = (in * c + ci) * h * w;
              const std::size_t woff = (fi * c + ci) * kh * kw;
              for (std::size_t ky = 0; ky < kh; ++ky) {
                const auto [y0, y1] = range(ky, h, oh);
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const auto [x0, x1] = range(kx, w, ow);
                  const Real wval = wv[woff + ky * kw + kx];
                  Real acc = 0;
                  for (std::size_t oy = y0; oy < y1; ++oy) {
                    const std::size_t rowoff = xoff + (oy * stride + ky - padding) * w;
                    const Real* grow = go + oy * ow;
                    for (std::size_t ox = x0; ox < x1; ++ox) {
                      const std::size_t xi = rowoff + ox * stride + kx - padding;
                      acc += grow[ox] * xv[xi];
                      if (gx) (*gx)[xi] += grow[ox] * wval;
                    }
                  }
                  if (gw) (*gw)[woff + ky * kw + kx] += acc;
                }
              }
            }
          }
        }
      });
}

BatchNormState BatchNormState::for_channels(std::size_t channels) {
  BatchNormState s;
  s.running_mean.assign(channels, Real(0));
  s.running_var.assign(channels, Real(1));
  return s;
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, Mode mode) {
  require_rank(input, 4, "batch_norm", "input");
  require_rank(gamma, 1, "batch_norm", "gamma");
  require_rank(beta, 1, "batch_norm", "beta");
  const std::size_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  if (gamma.dim(0) != c || beta.dim(0) != c) {
    fail(ErrorCode::shape, "batch_norm: gamma/beta length must equal channels " + std::to_string(c));
  }
  if (state.running_mean.size() != c || state.running_var.size() != c) {
    fail(ErrorCode::shape, "batch_norm: running stats sized for " +
                               std::to_string(state.running_mean.size()) + " channels, input has " +
                               std::to_string(c));
  }
  if (!(state.eps > 0)) fail(ErrorCode::invalid_argument, "batch_norm: eps must be positive");
  const std::size_t m = n * plane;
  const auto x = input.values();
  const auto gm = gamma.values();
  const auto bt = beta.values();

  std::vector<Real> xhat(x.size());
  std::vector<Real> inv_std(c);
  for (std::size_t ci = 0; ci < c; ++ci) {
    Real mu, var;
    if (mode == Mode::train) {
      Real acc = 0;
      for (std::size_t in = 0; in < n; ++in) {
        const Real* p = &x[(in * c + ci) * plane];
        for (std::size_t k = 0; k < plane; ++k) acc += p[k];
      }
      mu = acc / Real(m);
      Real sq = 0;
      for (std::size_t in = 0; in < n; ++in) {
        const Real* p = &x[(in * c + ci) * plane];
        for (std::size_t k = 0; k < plane; ++k) sq += (p[k] - mu) * (p[k] - mu);
      }
      var = sq / Real(m);
      const Real unbiased = m > 1 ? sq / Real(m - 1) : var;
      state.running_mean[ci] = state.momentum * state.running_mean[ci] + (1 - state.momentum) * mu;
      state.running_var[ci] = state.momentum * state.running_var[ci] + (1 - state.momentum) * unbiased;
    } else {
      mu = state.running_mean[ci];
      var = state.running_var[ci];
    }
    inv_std[ci] = Real(1) / std::sqrt(var + state.eps);
    for (std::size_t in = 0; in < n; ++in) {
      const std::size_t off = (in * c + ci) * plane;
      for (std::size_t k = 0; k < plane; ++k) xhat[off + k] = (x[off + k] - mu) * inv_std[ci];
    }
  }
  std::vector<Real> out(x.size());
  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      const std::size_t off = (in * c + ci) * plane;
      for (std::size_t k = 0; k < plane; ++k) out[off + k] = gm[ci] * xhat[off + k] + bt[ci];
    }
  }

  const bool batch_stats = mode == Mode::train;
  return Tensor::make_result(
      "batch_norm", input.shape(), std::move(out), {input, gamma, beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const auto& g = self.grad;
        const auto& gmv = self.parents[1]->values;
        auto* gx = parent_grad(self, 0);
        auto* gg = parent_grad(self, 1);
        auto* gbt = parent_grad(self, 2);
        for (std::size_t ci = 0; ci < c; ++ci) {
          Real sum_g = 0, sum_gx = 0;
          for (std::size_t in = 0; in < n; ++in) {
            const std::size_t off = (in * c + ci) * plane;
            for (std::size_t k = 0; k < plane; ++k) {
              sum_g += g[off + k];
              sum_gx += g[off + k] * xhat[off + k];
            }
          }
          if (gg) (*gg)[ci] += sum_gx;
          if (gbt) (*gbt)[ci] += sum_g;
          if (!gx) continue;
          const Real k1 = gmv[ci] * inv_std[ci];
          for (std::size_t in = 0; in < n; ++in) {
            const std::size_t off = (in * c + ci) * plane;
            for (std::size_t k = 0; k < plane; ++k) {
              if (batch_stats) {
                (*gx)[off + k] += k1 * (g[off + k] - sum_g / Real(m) - xhat[off + k] * sum_gx / Real(m));
              } else {
                (*gx)[off + k] += k1 * g[off + k];
              }
            }
          }
        }
      });
}

Tensor leaky_relu(const Tensor& input, Real slope) {
  if (!(slope > 0 && slope < 1)) fail(ErrorCode::invalid_argument, "leaky_relu: slope must lie in (0,1)");
  const auto x = input.values();
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] >= 0 ? x[i] : slope * x[i];
  return Tensor::make_result("leaky_relu", input.shape(), std::move(out), {input}, [slope](Node& self) {
    auto* gx = parent_grad(self, 0);
    const auto& xv = self.parents[0]->values;
    for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += xv[i] >= 0 ? self.grad[i] : slope * self.grad[i];
  });
}

Tensor relu(const Tensor& input) {
  const auto x = input.values();
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0 ? x[i] : Real(0);
  return Tensor::make_result("relu", input.shape(), std::move(out), {input}, [](Node& self) {
    auto* gx = parent_grad(self, 0);
    const auto& xv = self.parents[0]->values;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] > 0) (*gx)[i] += self.grad[i];
    }
  });
}

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "dense", "input");
  require_rank(weight, 2, "dense", "weight");
  require_rank(bias, 1, "dense", "bias");
  const std::size_t n = input.dim(0), d = input.dim(1), e = weight.dim(1);
  if (weight.dim(0) != d) {
    fail(ErrorCode::shape, "dense: input " + shape_string(input.shape()) + " incompatible with weight " +
                               shape_string(weight.shape()));
  }
  if (bias.dim(0) != e) {
    fail(ErrorCode::shape, "dense: bias " + shape_string(bias.shape()) + " incompatible with weight " +
                               shape_string(weight.shape()));
  }
  const auto x = input.values();
  const auto w = weight.values();
  const auto b = bias.values();
  std::vector<Real> out(n * e);
  for (std::size_t i = 0; i < n; ++i) {
    Real* o = &out[i * e];
    std::copy(b.begin(), b.end(), o);
    for (std::size_t k = 0; k < d; ++k) {
      const Real xv = x[i * d + k];
      const Real* wr = &w[k * e];
      for (std::size_t j = 0; j < e; ++j) o[j] += xv * wr[j];
    }
  }
  return Tensor::make_result("dense", {n, e}, std::move(out), {input, weight, bias}, [=](Node& self) {
    const auto& g = self.grad;
    const auto& xv = self.parents[0]->values;
    const auto& wv = self.parents[1]->values;
    auto* gx = parent_grad(self, 0);
    auto* gw = parent_grad(self, 1);
    auto* gb = parent_grad(self, 2);
    for (std::size_t i = 0; i < n; ++i) {
      const Real* gr = &g[i * e];
      if (gb) {
        for (std::size_t j = 0; j < e; ++j) (*gb)[j] += gr[j];
      }
      for (std::size_t k = 0; k < d; ++k) {
        Real acc = 0;
        for (std::size_t j = 0; j < e; ++j) {
          acc += gr[j] * wv[k * e + j];
          if (gw) (*gw)[k * e + j] += xv[i * d + k] * gr[j];
        }
        if (gx) (*gx)[i * d + k] += acc;
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<Real> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return Tensor::make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<Real> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return Tensor::make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<Real> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return Tensor::make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& x = self.parents[0]->values;
    const auto& y = self.parents[1]->values;
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * y[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * x[i];
    }
  });
}

Tensor scale(const Tensor& a, Real factor) {
  const auto av = a.values();
  std::vector<Real> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return Tensor::make_result("scale", a.shape(), std::move(out), {a}, [factor](Node& self) {
    auto* g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * factor;
  });
}

Tensor add_scalar(const Tensor& a, Real value) {
  const auto av = a.values();
  std::vector<Real> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + value;
  return Tensor::make_result("add_scalar", a.shape(), std::move(out), {a}, [](Node& self) {
    auto* g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

Tensor reshape(const Tensor& t, Shape new_shape) {
  if (shape_numel(new_shape) != t.numel() || std::count(new_shape.begin(), new_shape.end(), 0u) > 0) {
    fail(ErrorCode::shape, "reshape: cannot view " + shape_string(t.shape()) + " as " +
                               shape_string(new_shape));
  }
  const auto v = t.values();
  return Tensor::make_result("reshape", std::move(new_shape), std::vector<Real>(v.begin(), v.end()), {t},
                             [](Node& self) {
                               auto* g = parent_grad(self, 0);
                               for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
                             });
}

Tensor l2_norm(const Tensor& t, std::size_t axis) {
  const auto s = split_axis(t.shape(), axis, "l2_norm");
  const auto x = t.values();
  std::vector<Real> out(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      Real acc = 0;
      for (std::size_t k = 0; k < s.length; ++k) {
        const Real v = x[(o * s.length + k) * s.inner + i];
        acc += v * v;
      }
      out[o * s.inner + i] = std::sqrt(acc);
    }
  }
  return Tensor::make_result("l2_norm", drop_axis(t.shape(), axis), std::move(out), {t}, [s](Node& self) {
    auto* g = parent_grad(self, 0);
    const auto& xv = self.parents[0]->values;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const Real nrm = self.values[o * s.inner + i];
        if (nrm == 0) continue;
        const Real go = self.grad[o * s.inner + i] / nrm;
        for (std::size_t k = 0; k < s.length; ++k) {
          const std::size_t idx = (o * s.length + k) * s.inner + i;
          (*g)[idx] += go * xv[idx];
        }
      }
    }
  });
}

Tensor softmax(const Tensor& t, std::size_t axis) {
  const auto s = split_axis(t.shape(), axis, "softmax");
  const auto x = t.values();
  std::vector<Real> out(x.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      auto idx = [&](std::size_t k) { return (o * s.length + k) * s.inner + i; };
      Real mx = x[idx(0)];
      for (std::size_t k = 1; k < s.length; ++k) mx = std::max(mx, x[idx(k)]);
      Real z = 0;
      for (std::size_t k = 0; k < s.length; ++k) {
        out[idx(k)] = std::exp(x[idx(k)] - mx);
        z += out[idx(k)];
      }
      for (std::size_t k = 0; k < s.length; ++k) out[idx(k)] /= z;
    }
  }
  return Tensor::make_result("softmax", t.shape(), std::move(out), {t}, [s](Node& self) {
    auto* g = parent_grad(self, 0);
    const auto& y = self.values;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        auto idx = [&](std::size_t k) { return (o * s.length + k) * s.inner + i; };
        Real dot = 0;
        for (std::size_t k = 0; k < s.length; ++k) dot += self.grad[idx(k)] * y[idx(k)];
        for (std::size_t k = 0; k < s.length; ++k) (*g)[idx(k)] += y[idx(k)] * (self.grad[idx(k)] - dot);
      }
    }
  });
}

Tensor reduce_sum(const Tensor& t, std::size_t axis) {
  const auto s = split_axis(t.shape(), axis, "reduce_sum");
  const auto x = t.values();
  std::vector<Real> out(s.outer * s.inner, Real(0));
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.length; ++k) {
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += x[(o * s.length + k) * s.inner + i];
    }
  }
  return Tensor::make_result("reduce_sum", drop_axis(t.shape(), axis), std::move(out), {t}, [s](Node& self) {
    auto* g = parent_grad(self, 0);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t k = 0; k < s.length; ++k) {
        for (std::size_t i = 0; i < s.inner; ++i) (*g)[(o * s.length + k) * s.inner + i] += self.grad[o * s.inner + i];
      }
    }
  });
}

Tensor sum(const Tensor& t) {
  Real acc = 0;
  for (auto v : t.values()) acc += v;
  return Tensor::make_result("sum", {1}, {acc}, {t}, [](Node& self) {
    auto* g = parent_grad(self, 0);
    for (auto& v : *g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& t) {
  Real acc = 0;
  for (auto v : t.values()) acc += v;
  const Real n = Real(t.numel());
  return Tensor::make_result("mean", {1}, {acc / n}, {t}, [n](Node& self) {
    auto* g = parent_grad(self, 0);
    for (auto& v : *g) v += self.grad[0] / n;
  });
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  if (t.rank() == 0 || begin >= end || end > t.dim(0)) {
    fail(ErrorCode::shape, "slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) +
                               ") invalid for " + shape_string(t.shape()));
  }
  const std::size_t row = t.numel() / t.dim(0);
  Shape shape = t.shape();
  shape[0] = end - begin;
  const auto v = t.values();
  std::vector<Real> out(v.begin() + begin * row, v.begin() + end * row);
  return Tensor::make_result("slice_rows", std::move(shape), std::move(out), {t}, [=](Node& self) {
    auto* g = parent_grad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[begin * row + i] += self.grad[i];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail(ErrorCode::invalid_argument, "concat_rows: no inputs");
  Shape shape = parts[0].shape();
  Shape tail(shape.begin() + 1, shape.end());
  std::size_t rows = 0;
  std::vector<Real> out;
  for (const auto& p : parts) {
    if (Shape(p.shape().begin() + 1, p.shape().end()) != tail) {
      fail(ErrorCode::shape, "concat_rows: trailing dims differ: " + shape_string(shape) + " vs " +
                                 shape_string(p.shape()));
    }
    rows += p.dim(0);
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  shape[0] = rows;
  return Tensor::make_result("concat_rows", std::move(shape), std::move(out), parts, [](Node& self) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      const std::size_t len = self.parents[p]->values.size();
      if (auto* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < len; ++i) (*g)[i] += self.grad[off + i];
      }
      off += len;
    }
  });
}

Tensor row_distance(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "row_distance", "a");
  require_same_shape(a, b, "row_distance");
  const std::size_t n = a.dim(0), e = a.dim(1);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<Real> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Real acc = 0;
    for (std::size_t j = 0; j < e; ++j) {
      const Real diff = av[i * e + j] - bv[i * e + j];
      acc += diff * diff;
    }
    out[i] = std::sqrt(acc);
  }
  return Tensor::make_result("row_distance", {n}, std::move(out), {a, b}, [n, e](Node& self) {
    const auto& x = self.parents[0]->values;
    const auto& y = self.parents[1]->values;
    auto* ga = parent_grad(self, 0);
    auto* gb = parent_grad(self, 1);
    for (std::size_t i = 0; i < n; ++i) {
      const Real d = self.values[i];
      if (d == 0) continue;
      const Real k = self.grad[i] / d;
      for (std::size_t j = 0; j < e; ++j) {
        const Real diff = x[i * e + j] - y[i * e + j];
        if (ga) (*ga)[i * e + j] += k * diff;
        if (gb) (*gb)[i * e + j] -= k * diff;
      }
    }
  });
}

}  // namespace tcaps
