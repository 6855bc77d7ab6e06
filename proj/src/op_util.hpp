#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "tcaps/error.hpp"
#include "tcaps/tensor.hpp"

namespace tcaps::detail {

inline void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* name) {
  if (t.rank() != rank) {
    std::ostringstream msg;
    msg << op << ": " << name << " must have rank " << rank << ", got " << shape_string(t.shape());
    fail(ErrorCode::shape, msg.str());
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorCode::shape, std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                               shape_string(b.shape()));
  }
}

// Grad buffer of parent `i`, or nullptr when that parent needs no gradient.
inline std::vector<Real>* parent_grad(Node& self, std::size_t i) {
  auto& p = self.parents[i];
  return p->requires_grad ? &p->grad_buffer() : nullptr;
}

}  // namespace tcaps::detail
