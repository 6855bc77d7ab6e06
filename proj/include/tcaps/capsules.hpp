#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tcaps/tensor.hpp"

namespace tcaps {

// Batch of capsule sets. poses has shape [batch, capsules, dim]; the
// activation of a capsule is the Euclidean norm of its pose.
struct CapsuleTensor {
  Tensor poses;

  std::size_t batch() const { return poses.dim(0); }
  std::size_t count() const { return poses.dim(1); }
  std::size_t dim() const { return poses.dim(2); }
  // [batch * count], row-major.
  std::vector<Real> activations() const;
};

// v = s * |s| / (1 + |s|^2) along the last axis, i.e. direction of s with
// norm |s|^2 / (1 + |s|^2). The zero vector maps to zero with zero gradient.
Tensor squash(const Tensor& s);

// [N, channels*dim, H, W] -> [N, channels*H*W, dim]. Capsule (ch, y, x)
// takes its components from channels ch*dim .. ch*dim+dim-1 at pixel (y, x).
Tensor arrange_capsules(const Tensor& projected, std::size_t channels, std::size_t dim);

// arrange_capsules followed by squash.
CapsuleTensor primary_capsules(const Tensor& projected, std::size_t channels, std::size_t dim);

struct ClassCapsuleParams {
  Tensor weight;  // [in_caps, out_caps, in_dim, out_dim]

  std::size_t in_caps() const { return weight.dim(0); }
  std::size_t out_caps() const { return weight.dim(1); }
  std::size_t in_dim() const { return weight.dim(2); }
  std::size_t out_dim() const { return weight.dim(3); }
};

// votes[b,i,j,:] = poses[b,i,:] * W[i,j]  ->  [batch, in, out, out_dim]
Tensor compute_votes(const CapsuleTensor& primary, const ClassCapsuleParams& params);

// couplings [B,I,J], votes [B,I,J,D] -> [B,J,D], sum_i c_ij * u_ij.
Tensor routing_weighted_sum(const Tensor& couplings, const Tensor& votes);
// votes [B,I,J,D], outputs [B,J,D] -> [B,I,J], u_ij . v_j.
Tensor routing_agreement(const Tensor& votes, const Tensor& outputs);

// Per-iteration snapshots, filled when a trace is passed to dynamic_routing.
struct RoutingTrace {
  std::vector<Tensor> logits;     // logits used at the start of each iteration
  std::vector<Tensor> couplings;  // softmax of those logits over the out axis
};

// Routing-by-agreement. Logits start at zero on every call, every iteration
// recomputes couplings, and gradients flow through all iterations.
CapsuleTensor dynamic_routing(const Tensor& votes, std::size_t iterations,
                              RoutingTrace* trace = nullptr);

// Index of the capsule with the largest activation per batch row; ties go to
// the smaller index.
std::vector<std::size_t> argmax_capsules(const CapsuleTensor& caps);

// Each pose divided by its norm; zero poses stay zero.
Tensor normalize_capsules(const Tensor& poses);

// Zeroes every capsule except selected[b] in row b.
Tensor mask_capsules(const Tensor& poses, std::span<const std::size_t> selected);

// Normalize, keep only the selected capsule, flatten to [batch, count*dim].
Tensor embed(const CapsuleTensor& caps, std::span<const std::size_t> selected);
Tensor embed_with_labels(const CapsuleTensor& caps, std::span<const std::size_t> labels);
Tensor embed_with_argmax(const CapsuleTensor& caps);

}  // namespace tcaps
