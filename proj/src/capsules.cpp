#include "tcaps/capsules.hpp"

#include <cmath>

#include "op_util.hpp"

namespace tcaps {

using detail::Node;
using detail::parent_grad;
using detail::require_rank;

std::vector<Real> CapsuleTensor::activations() const {
  const std::size_t rows = batch() * count(), d = dim();
  const auto v = poses.values();
  std::vector<Real> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    Real acc = 0;
    for (std::size_t k = 0; k < d; ++k) acc += v[r * d + k] * v[r * d + k];
    out[r] = std::sqrt(acc);
  }
  return out;
}

Tensor squash(const Tensor& s) {
  if (s.rank() == 0) fail(ErrorCode::shape, "squash: tensor needs at least one axis");
  const std::size_t d = s.shape().back();
  const std::size_t rows = s.numel() / d;
  const auto x = s.values();
  std::vector<Real> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    Real sq = 0;
    for (std::size_t k = 0; k < d; ++k) sq += x[r * d + k] * x[r * d + k];
    const Real n = std::sqrt(sq);
    const Real f = n / (1 + sq);
    for (std::size_t k = 0; k < d; ++k) out[r * d + k] = x[r * d + k] * f;
  }
  return Tensor::make_result("squash", s.shape(), std::move(out), {s}, [rows, d](Node& self) {
    auto* g = parent_grad(self, 0);
    const auto& x = self.parents[0]->values;
    for (std::size_t r = 0; r < rows; ++r) {
      const Real* xr = &x[r * d];
      const Real* gr = &self.grad[r * d];
      Real sq = 0, sg = 0;
      for (std::size_t k = 0; k < d; ++k) {
        sq += xr[k] * xr[k];
        sg += xr[k] * gr[k];
      }
      const Real n = std::sqrt(sq);
      if (n == 0) continue;
      const Real f = n / (1 + sq);
      const Real df = (1 - sq) / ((1 + sq) * (1 + sq));
      const Real k2 = df / n * sg;
      for (std::size_t k = 0; k < d; ++k) (*g)[r * d + k] += f * gr[k] + k2 * xr[k];
    }
  });
}

Tensor arrange_capsules(const Tensor& projected, std::size_t channels, std::size_t dim) {
  require_rank(projected, 4, "primary_capsules", "projection output");
  const std::size_t n = projected.dim(0), c = projected.dim(1), h = projected.dim(2), w = projected.dim(3);
  if (channels == 0 || dim == 0 || c != channels * dim) {
    fail(ErrorCode::config, "primary_capsules: projection has " + std::to_string(c) +
                                " channels, expected channels*dim = " + std::to_string(channels) + "*" +
                                std::to_string(dim));
  }
  const std::size_t plane = h * w;
  const std::size_t caps = channels * plane;
  const auto x = projected.values();
  std::vector<Real> out(x.size());
  // out[n, ch*plane + p, d] = x[n, ch*dim + d, p]
  auto src = [=](std::size_t in, std::size_t ch, std::size_t p, std::size_t k) {
    return ((in * c) + ch * dim + k) * plane + p;
  };
  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t ch = 0; ch < channels; ++ch) {
      for (std::size_t p = 0; p < plane; ++p) {
        for (std::size_t k = 0; k < dim; ++k) {
          out[((in * caps) + ch * plane + p) * dim + k] = x[src(in, ch, p, k)];
        }
      }
    }
  }
  return Tensor::make_result("arrange_capsules", {n, caps, dim}, std::move(out), {projected}, [=](Node& self) {
    auto* g = parent_grad(self, 0);
    for (std::size_t in = 0; in < n; ++in) {
      for (std::size_t ch = 0; ch < channels; ++ch) {
        for (std::size_t p = 0; p < plane; ++p) {
          for (std::size_t k = 0; k < dim; ++k) {
            (*g)[src(in, ch, p, k)] += self.grad[((in * caps) + ch * plane + p) * dim + k];
          }
        }
      }
    }
  });
}

CapsuleTensor primary_capsules(const Tensor& projected, std::size_t channels, std::size_t dim) {
  return {squash(arrange_capsules(projected, channels, dim))};
}

Tensor compute_votes(const CapsuleTensor& primary, const ClassCapsuleParams& params) {
  const Tensor& poses = primary.poses;
  const Tensor& weight = params.weight;
  require_rank(poses, 3, "compute_votes", "poses");
  require_rank(weight, 4, "compute_votes", "weight");
  const std::size_t b = poses.dim(0), in = poses.dim(1), din = poses.dim(2);
  const std::size_t out = weight.dim(1), dout = weight.dim(3);
  if (weight.dim(0) != in || weight.dim(2) != din) {
    fail(ErrorCode::shape, "compute_votes: poses " + shape_string(poses.shape()) +
                               " incompatible with weight " + shape_string(weight.shape()));
  }
  const auto p = poses.values();
  const auto wv = weight.values();
  std::vector<Real> u(b * in * out * dout, Real(0));
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t i = 0; i < in; ++i) {
      const Real* pr = &p[(bi * in + i) * din];
      for (std::size_t j = 0; j < out; ++j) {
        Real* ur = &u[((bi * in + i) * out + j) * dout];
        const Real* wm = &wv[(i * out + j) * din * dout];
        for (std::size_t k = 0; k < din; ++k) {
          const Real pk = pr[k];
          for (std::size_t o = 0; o < dout; ++o) ur[o] += pk * wm[k * dout + o];
        }
      }
    }
  }
  return Tensor::make_result("compute_votes", {b, in, out, dout}, std::move(u), {poses, weight}, [=](Node& self) {
    const auto& g = self.grad;
    const auto& pv = self.parents[0]->values;
    const auto& w = self.parents[1]->values;
    auto* gp = parent_grad(self, 0);
    auto* gw = parent_grad(self, 1);
    for (std::size_t bi = 0; bi < b; ++bi) {
      for (std::size_t i = 0; i < in; ++i) {
        for (std::size_t j = 0; j < out; ++j) {
          const Real* gr = &g[((bi * in + i) * out + j) * dout];
          const std::size_t woff = (i * out + j) * din * dout;
          for (std::size_t k = 0; k < din; ++k) {
            const std::size_t pidx = (bi * in + i) * din + k;
            Real acc = 0;
            for (std::size_t o = 0; o < dout; ++o) {
              acc += gr[o] * w[woff + k * dout + o];
              if (gw) (*gw)[woff + k * dout + o] += pv[pidx] * gr[o];
            }
            if (gp) (*gp)[pidx] += acc;
          }
        }
      }
    }
  });
}

Tensor routing_weighted_sum(const Tensor& couplings, const Tensor& votes) {
  require_rank(couplings, 3, "routing_weighted_sum", "couplings");
  require_rank(votes, 4, "routing_weighted_sum", "votes");
  const std::size_t b = votes.dim(0), in = votes.dim(1), out = votes.dim(2), d = votes.dim(3);
  if (couplings.shape() != Shape{b, in, out}) {
    fail(ErrorCode::shape, "routing_weighted_sum: couplings " + shape_string(couplings.shape()) +
                               " do not match votes " + shape_string(votes.shape()));
  }
  const auto c = couplings.values();
  const auto u = votes.values();
  std::vector<Real> s(b * out * d, Real(0));
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t i = 0; i < in; ++i) {
      for (std::size_t j = 0; j < out; ++j) {
        const Real cij = c[(bi * in + i) * out + j];
        const Real* ur = &u[((bi * in + i) * out + j) * d];
        Real* sr = &s[(bi * out + j) * d];
        for (std::size_t k = 0; k < d; ++k) sr[k] += cij * ur[k];
      }
    }
  }
  return Tensor::make_result("routing_weighted_sum", {b, out, d}, std::move(s), {couplings, votes},
                             [=](Node& self) {
                               const auto& g = self.grad;
                               const auto& cv = self.parents[0]->values;
                               const auto& uv = self.parents[1]->values;
                               auto* gc = parent_grad(self, 0);
                               auto* gu = parent_grad(self, 1);
                               for (std::size_t bi = 0; bi < b; ++bi) {
                                 for (std::size_t i = 0; i < in; ++i) {
                                   for (std::size_t j = 0; j < out; ++j) {
                                     const std::size_t cidx = (bi * in + i) * out + j;
                                     const Real* gr = &g[(bi * out + j) * d];
                                     Real acc = 0;
                                     for (std::size_t k = 0; k < d; ++k) {
                                       acc += gr[k] * uv[cidx * d + k];
                                       if (gu) (*gu)[cidx * d + k] += cv[cidx] * gr[k];
                                     }
                                     if (gc) (*gc)[cidx] += acc;
                                   }
                                 }
                               }
                             });
}

Tensor routing_agreement(const Tensor& votes, const Tensor& outputs) {
  require_rank(votes, 4, "routing_agreement", "votes");
  require_rank(outputs, 3, "routing_agreement", "outputs");
  const std::size_t b = votes.dim(0), in = votes.dim(1), out = votes.dim(2), d = votes.dim(3);
  if (outputs.shape() != Shape{b, out, d}) {
    fail(ErrorCode::shape, "routing_agreement: outputs " + shape_string(outputs.shape()) +
                               " do not match votes " + shape_string(votes.shape()));
  }
  const auto u = votes.values();
  const auto v = outputs.values();
  std::vector<Real> a(b * in * out);
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t i = 0; i < in; ++i) {
      for (std::size_t j = 0; j < out; ++j) {
        const Real* ur = &u[((bi * in + i) * out + j) * d];
        const Real* vr = &v[(bi * out + j) * d];
        Real acc = 0;
        for (std::size_t k = 0; k < d; ++k) acc += ur[k] * vr[k];
        a[(bi * in + i) * out + j] = acc;
      }
    }
  }
  return Tensor::make_result("routing_agreement", {b, in, out}, std::move(a), {votes, outputs},
                             [=](Node& self) {
                               const auto& g = self.grad;
                               const auto& uv = self.parents[0]->values;
                               const auto& vv = self.parents[1]->values;
                               auto* gu = parent_grad(self, 0);
                               auto* gv = parent_grad(self, 1);
                               for (std::size_t bi = 0; bi < b; ++bi) {
                                 for (std::size_t i = 0; i < in; ++i) {
                                   for (std::size_t j = 0; j < out; ++j) {
                                     const std::size_t aidx = (bi * in + i) * out + j;
                                     const std::size_t voff = (bi * out + j) * d;
                                     for (std::size_t k = 0; k < d; ++k) {
                                       if (gu) (*gu)[aidx * d + k] += g[aidx] * vv[voff + k];
                                       if (gv) (*gv)[voff + k] += g[aidx] * uv[aidx * d + k];
                                     }
                                   }
                                 }
                               }
                             });
}

CapsuleTensor dynamic_routing(const Tensor& votes, std::size_t iterations, RoutingTrace* trace) {
  if (iterations < 1) fail(ErrorCode::invalid_argument, "dynamic_routing: iterations must be >= 1");
  require_rank(votes, 4, "dynamic_routing", "votes");
  const std::size_t b = votes.dim(0), in = votes.dim(1), out = votes.dim(2);
  Tensor logits = Tensor::zeros({b, in, out});
  Tensor outputs;
  for (std::size_t it = 0; it < iterations; ++it) {
    Tensor couplings = softmax(logits, 2);
    if (trace) {
      trace->logits.push_back(logits);
      trace->couplings.push_back(couplings);
    }
    outputs = squash(routing_weighted_sum(couplings, votes));
    if (it + 1 < iterations) logits = add(logits, routing_agreement(votes, outputs));
  }
  return {outputs};
}

std::vector<std::size_t> argmax_capsules(const CapsuleTensor& caps) {
  const auto act = caps.activations();
  const std::size_t n = caps.batch(), c = caps.count();
  std::vector<std::size_t> best(n, 0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 1; j < c; ++j) {
      if (act[r * c + j] > act[r * c + best[r]]) best[r] = j;
    }
  }
  return best;
}

Tensor normalize_capsules(const Tensor& poses) {
  if (poses.rank() == 0) fail(ErrorCode::shape, "normalize_capsules: tensor needs at least one axis");
  const std::size_t d = poses.shape().back();
  const std::size_t rows = poses.numel() / d;
  const auto x = poses.values();
  std::vector<Real> out(x.size(), Real(0));
  for (std::size_t r = 0; r < rows; ++r) {
    Real sq = 0;
    for (std::size_t k = 0; k < d; ++k) sq += x[r * d + k] * x[r * d + k];
    const Real n = std::sqrt(sq);
    if (n == 0) continue;
    for (std::size_t k = 0; k < d; ++k) out[r * d + k] = x[r * d + k] / n;
  }
  return Tensor::make_result("normalize_capsules", poses.shape(), std::move(out), {poses}, [rows, d](Node& self) {
    auto* g = parent_grad(self, 0);
    const auto& x = self.parents[0]->values;
    for (std::size_t r = 0; r < rows; ++r) {
      Real sq = 0;
      for (std::size_t k = 0; k < d; ++k) sq += x[r * d + k] * x[r * d + k];
      const Real n = std::sqrt(sq);
      if (n == 0) continue;
      const Real* y = &self.values[r * d];
      const Real* gr = &self.grad[r * d];
      Real yg = 0;
      for (std::size_t k = 0; k < d; ++k) yg += y[k] * gr[k];
      for (std::size_t k = 0; k < d; ++k) (*g)[r * d + k] += (gr[k] - y[k] * yg) / n;
    }
  });
}

Tensor mask_capsules(const Tensor& poses, std::span<const std::size_t> selected) {
  require_rank(poses, 3, "mask_capsules", "poses");
  const std::size_t b = poses.dim(0), c = poses.dim(1), d = poses.dim(2);
  if (selected.size() != b) {
    fail(ErrorCode::shape, "mask_capsules: " + std::to_string(selected.size()) + " selections for batch " +
                               std::to_string(b));
  }
  for (std::size_t r = 0; r < b; ++r) {
    if (selected[r] >= c) {
      fail(ErrorCode::invalid_argument, "mask_capsules: label " + std::to_string(selected[r]) +
                                            " out of range [0," + std::to_string(c) + ")");
    }
  }
  const auto x = poses.values();
  std::vector<Real> out(x.size(), Real(0));
  std::vector<std::size_t> sel(selected.begin(), selected.end());
  for (std::size_t r = 0; r < b; ++r) {
    const std::size_t off = (r * c + sel[r]) * d;
    for (std::size_t k = 0; k < d; ++k) out[off + k] = x[off + k];
  }
  return Tensor::make_result("mask_capsules", poses.shape(), std::move(out), {poses},
                             [b, c, d, sel = std::move(sel)](Node& self) {
                               auto* g = parent_grad(self, 0);
                               for (std::size_t r = 0; r < b; ++r) {
                                 const std::size_t off = (r * c + sel[r]) * d;
                                 for (std::size_t k = 0; k < d; ++k) (*g)[off + k] += self.grad[off + k];
                               }
                             });
}

Tensor embed(const CapsuleTensor& caps, std::span<const std::size_t> selected) {
  Tensor masked = mask_capsules(normalize_capsules(caps.poses), selected);
  return reshape(masked, {caps.batch(), caps.count() * caps.dim()});
}

Tensor embed_with_labels(const CapsuleTensor& caps, std::span<const std::size_t> labels) {
  return embed(caps, labels);
}

Tensor embed_with_argmax(const CapsuleTensor& caps) {
  const auto selected = argmax_capsules(caps);
  return embed(caps, selected);
}

}  // namespace tcaps
