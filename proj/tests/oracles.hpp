#pragma once

// Straight-line scalar reimplementations used as references. Nothing here
// calls into the library under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

namespace tcaps::oracle {

using Vec = std::vector<double>;

inline double norm(const Vec& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline Vec squash(const Vec& s) {
  const double n = norm(s);
  Vec out(s.size(), 0.0);
  if (n == 0) return out;
  const double f = n / (1 + n * n);
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i] * f;
  return out;
}

struct RoutingResult {
  std::vector<Vec> v;                               // [out][dim]
  std::vector<std::vector<std::vector<double>>> c;  // [iteration][in][out]
};

// u[i][j] is the vote of input i for output j.
inline RoutingResult routing(const std::vector<std::vector<Vec>>& u, int iterations) {
  const std::size_t in = u.size(), out = u[0].size(), dim = u[0][0].size();
  std::vector<std::vector<double>> b(in, std::vector<double>(out, 0.0));
  RoutingResult r;
  for (int it = 0; it < iterations; ++it) {
    std::vector<std::vector<double>> c(in, std::vector<double>(out));
    for (std::size_t i = 0; i < in; ++i) {
      double mx = b[i][0];
      for (std::size_t j = 1; j < out; ++j) mx = std::max(mx, b[i][j]);
      double z = 0;
      for (std::size_t j = 0; j < out; ++j) z += std::exp(b[i][j] - mx);
      for (std::size_t j = 0; j < out; ++j) c[i][j] = std::exp(b[i][j] - mx) / z;
    }
    r.c.push_back(c);
    r.v.assign(out, Vec(dim, 0.0));
    for (std::size_t j = 0; j < out; ++j) {
      Vec s(dim, 0.0);
      for (std::size_t i = 0; i < in; ++i)
        for (std::size_t d = 0; d < dim; ++d) s[d] += c[i][j] * u[i][j][d];
      r.v[j] = squash(s);
    }
    if (it + 1 < iterations) {
      for (std::size_t i = 0; i < in; ++i)
        for (std::size_t j = 0; j < out; ++j) {
          double a = 0;
          for (std::size_t d = 0; d < dim; ++d) a += u[i][j][d] * r.v[j][d];
          b[i][j] += a;
        }
    }
  }
  return r;
}

inline double distance(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

inline double triplet_loss(const std::vector<Vec>& a, const std::vector<Vec>& p, const std::vector<Vec>& n,
                           double margin) {
  double total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = distance(a[i], p[i]) - distance(a[i], n[i]) + margin;
    total += t > 0 ? t : 0;
  }
  return total / double(a.size());
}

inline double squared_distance(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// Exhaustive scan over candidates of a different category. Squared distance
// keeps ties decided before any rounding from the square root.
inline std::optional<std::size_t> hard_negative(const Vec& anchor, const std::vector<Vec>& candidates,
                                                const std::vector<std::uint64_t>& cats, std::uint64_t anchor_cat) {
  std::optional<std::size_t> best;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (cats[i] == anchor_cat) continue;
    const double d = squared_distance(anchor, candidates[i]);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

struct Entry {
  std::uint64_t id;
  std::uint64_t item;
  Vec v;
};

// Full sort of (distance, id) pairs.
inline std::vector<std::pair<std::uint64_t, double>> ranking(const std::vector<Entry>& gallery, const Vec& q,
                                                             std::optional<std::uint64_t> exclude = std::nullopt) {
  std::vector<std::pair<std::uint64_t, double>> r;
  for (const auto& g : gallery) {
    if (exclude && g.id == *exclude) continue;
    r.push_back({g.id, distance(q, g.v)});
  }
  std::sort(r.begin(), r.end(), [](const auto& x, const auto& y) {
    return x.second < y.second || (x.second == y.second && x.first < y.first);
  });
  return r;
}

inline std::vector<double> recall(const std::vector<Entry>& gallery, const std::vector<Entry>& queries,
                                  const std::vector<std::size_t>& ks) {
  std::vector<double> out;
  for (auto k : ks) {
    std::size_t hits = 0;
    for (const auto& q : queries) {
      const auto r = ranking(gallery, q.v, q.id);
      std::size_t limit = std::min(k, r.size());
      for (std::size_t i = 0; i < limit; ++i) {
        const auto it = std::find_if(gallery.begin(), gallery.end(), [&](const Entry& e) { return e.id == r[i].first; });
        if (it->item == q.item) {
          ++hits;
          break;
        }
      }
    }
    out.push_back(double(hits) / double(queries.size()));
  }
  return out;
}

}  // namespace tcaps::oracle
