#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <functional>
#include <string>
#include <unistd.h>
#include <vector>

#include "tcaps/rng.hpp"
#include "tcaps/tensor.hpp"

namespace tcaps::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("tcaps-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string str() const { return path_.string(); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::string& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

inline Tensor random_tensor(Rng& rng, Shape shape, bool requires_grad = true, Real lo = -1, Real hi = 1) {
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = Real(rng.uniform(lo, hi));
  return Tensor::from_values(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<Real> random_values(Rng& rng, std::size_t n, Real lo = -1, Real hi = 1) {
  std::vector<Real> v(n);
  for (auto& x : v) x = Real(rng.uniform(lo, hi));
  return v;
}

// Contracts an arbitrary output with fixed random weights so every output
// element contributes a distinct amount to the scalar.
inline Tensor probe(const Tensor& out, std::uint64_t seed) {
  Rng rng(seed, 0xC0FFEE);
  Tensor w = random_tensor(rng, out.shape(), false);
  return sum(mul(out, w));
}

struct GradReport {
  double max_rel = 0;
  std::size_t checked = 0;
  std::string worst;
};

// |AD - FD| / max(1, |FD|).
inline double rel_error(double analytic, double numeric) {
  return std::fabs(analytic - numeric) / std::max(1.0, std::fabs(numeric));
}

inline void note(GradReport& r, double err, const std::string& where) {
  ++r.checked;
  if (err > r.max_rel) {
    r.max_rel = err;
    r.worst = where;
  }
}

// Central differences on coordinates of each leaf. `per_leaf` caps how many
// coordinates are sampled per leaf (0 = all of them).
inline GradReport gradcheck(const std::function<Tensor()>& loss_fn, std::vector<Tensor> leaves, double h = 1e-5,
                            std::size_t per_leaf = 0, std::uint64_t sample_seed = 1) {
  for (auto& l : leaves) l.zero_grad();
  Tensor loss = loss_fn();
  backward(loss);
  GradReport rep;
  Rng rng(sample_seed, 0x5A3F);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor leaf = leaves[li];
    const std::vector<Real> analytic(leaf.grad().begin(), leaf.grad().end());
    std::vector<std::size_t> coords(leaf.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (per_leaf && per_leaf < coords.size()) {
      rng.shuffle(coords.begin(), coords.end());
      coords.resize(per_leaf);
    }
    auto vals = leaf.mutable_values();
    for (auto i : coords) {
      const Real saved = vals[i];
      vals[i] = saved + Real(h);
      const double up = loss_fn().item();
      vals[i] = saved - Real(h);
      const double down = loss_fn().item();
      vals[i] = saved;
      const double numeric = (up - down) / (2 * h);
      note(rep, rel_error(analytic[i], numeric), "leaf " + std::to_string(li) + "[" + std::to_string(i) + "]");
    }
  }
  return rep;
}

}  // namespace tcaps::test
