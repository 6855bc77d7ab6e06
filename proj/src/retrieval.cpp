#include "tcaps/retrieval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tcaps/data.hpp"
#include "tcaps/error.hpp"

namespace tcaps {

namespace {

void append_double(std::string& out, double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, ptr);
}

template <typename T>
T parse_number(std::string_view s, std::size_t line, const char* what) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    fail(ErrorCode::format, "embeddings line " + std::to_string(line) + ": invalid " + what + " '" +
                                std::string(s) + "'");
  }
  return v;
}

bool ranks_before(double da, std::uint64_t ia, double db, std::uint64_t ib) {
  return da < db || (da == db && ia < ib);
}

}  // namespace

std::string format_embeddings(const std::vector<EmbeddingRecord>& records) {
  std::string out = "# tcaps embeddings v1\n";
  for (const auto& r : records) {
    out += std::to_string(r.image_id);
    out += '\t';
    out += std::to_string(r.item_id);
    out += '\t';
    out += std::to_string(r.category_id);
    out += '\t';
    for (std::size_t i = 0; i < r.vector.size(); ++i) {
      if (i) out += ' ';
      append_double(out, r.vector[i]);
    }
    out += '\n';
  }
  return out;
}

std::vector<EmbeddingRecord> parse_embeddings(const std::string& text) {
  std::vector<EmbeddingRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    for (int i = 0; i < 3; ++i) {
      const auto tab = rest.find('\t');
      if (tab == std::string_view::npos) {
        fail(ErrorCode::format, "embeddings line " + std::to_string(lineno) + ": expected 4 tab-separated fields");
      }
      fields.push_back(rest.substr(0, tab));
      rest.remove_prefix(tab + 1);
    }
    EmbeddingRecord r;
    r.image_id = parse_number<std::uint64_t>(fields[0], lineno, "image_id");
    r.item_id = parse_number<std::uint64_t>(fields[1], lineno, "item_id");
    r.category_id = parse_number<std::uint64_t>(fields[2], lineno, "category_id");
    while (!rest.empty()) {
      const auto sp = rest.find(' ');
      r.vector.push_back(parse_number<double>(rest.substr(0, sp), lineno, "vector component"));
      if (sp == std::string_view::npos) break;
      rest.remove_prefix(sp + 1);
    }
    if (r.vector.empty()) fail(ErrorCode::format, "embeddings line " + std::to_string(lineno) + ": empty vector");
    if (!out.empty() && out.front().vector.size() != r.vector.size()) {
      fail(ErrorCode::format, "embeddings line " + std::to_string(lineno) + ": vector length " +
                                  std::to_string(r.vector.size()) + " differs from " +
                                  std::to_string(out.front().vector.size()));
    }
    out.push_back(std::move(r));
  }
  return out;
}

void save_embeddings(const std::vector<EmbeddingRecord>& records, const std::string& path) {
  write_file_atomic(path, format_embeddings(records));
}

std::vector<EmbeddingRecord> load_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open embeddings '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_embeddings(ss.str());
}

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

GalleryIndex GalleryIndex::build(std::vector<EmbeddingRecord> records) {
  GalleryIndex index;
  std::set<std::uint64_t> ids;
  for (const auto& r : records) {
    if (!ids.insert(r.image_id).second) {
      fail(ErrorCode::invalid_argument, "gallery: duplicate image_id " + std::to_string(r.image_id));
    }
    if (r.vector.empty()) fail(ErrorCode::invalid_argument, "gallery: empty vector for image " + std::to_string(r.image_id));
    if (r.vector.size() != records.front().vector.size()) {
      fail(ErrorCode::shape, "gallery: image " + std::to_string(r.image_id) + " has vector length " +
                                 std::to_string(r.vector.size()) + ", expected " +
                                 std::to_string(records.front().vector.size()));
    }
    for (double v : r.vector) {
      if (!std::isfinite(v)) fail(ErrorCode::numeric, "gallery: non-finite value in image " + std::to_string(r.image_id));
    }
  }
  index.dim_ = records.empty() ? 0 : records.front().vector.size();
  index.records_ = std::move(records);
  return index;
}

void GalleryIndex::check_query(std::span<const double> vector, std::size_t k) const {
  if (records_.empty()) fail(ErrorCode::invalid_argument, "query on empty gallery");
  if (k == 0) fail(ErrorCode::invalid_argument, "query: K must be >= 1");
  if (vector.size() != dim_) {
    fail(ErrorCode::shape, "query: vector length " + std::to_string(vector.size()) + " but gallery dim " +
                               std::to_string(dim_));
  }
}

std::vector<Hit> GalleryIndex::query(std::span<const double> vector, std::size_t k) const {
  return query_excluding(vector, k, std::nullopt);
}

std::vector<Hit> GalleryIndex::query_excluding(std::span<const double> vector, std::size_t k,
                                               std::optional<std::uint64_t> exclude) const {
  check_query(vector, k);
  std::vector<Hit> hits;
  hits.reserve(records_.size());
  for (const auto& r : records_) {
    if (exclude && r.image_id == *exclude) continue;
    hits.push_back({r.image_id, euclidean_distance(vector, r.vector)});
  }
  auto order = [](const Hit& a, const Hit& b) { return ranks_before(a.distance, a.image_id, b.distance, b.image_id); };
  const std::size_t n = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(n), hits.end(), order);
  hits.resize(n);
  return hits;
}

std::vector<std::size_t> default_recall_ks() { return {1, 10, 20, 30, 40, 50}; }

RecallReport recall_at_k(const GalleryIndex& index, const std::vector<EmbeddingRecord>& queries,
                         std::vector<std::size_t> ks, bool exclude_self) {
  if (queries.empty()) fail(ErrorCode::invalid_argument, "recall_at_k: empty query set");
  if (index.empty()) fail(ErrorCode::invalid_argument, "recall_at_k: empty gallery");
  if (ks.empty()) fail(ErrorCode::invalid_argument, "recall_at_k: no K values");
  for (auto k : ks) {
    if (k == 0) fail(ErrorCode::invalid_argument, "recall_at_k: K must be >= 1");
  }
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());

  RecallReport rep;
  rep.ks = ks;
  rep.query_count = queries.size();
  const auto& gallery = index.records();
  std::vector<double> dist(gallery.size());
  for (const auto& q : queries) {
    if (q.vector.size() != index.dim()) {
      fail(ErrorCode::shape, "recall_at_k: query " + std::to_string(q.image_id) + " has vector length " +
                                 std::to_string(q.vector.size()) + ", gallery dim " + std::to_string(index.dim()));
    }
    std::optional<std::size_t> best;
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      if (exclude_self && gallery[g].image_id == q.image_id) continue;
      dist[g] = euclidean_distance(q.vector, gallery[g].vector);
      if (gallery[g].item_id != q.item_id) continue;
      if (!best || ranks_before(dist[g], gallery[g].image_id, dist[*best], gallery[*best].image_id)) best = g;
    }
    rep.query_ids.push_back(q.image_id);
    if (!best) {
      ++rep.unmatched_queries;
      rep.first_hit_rank.push_back(std::nullopt);
      continue;
    }
    std::size_t rank = 1;
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      if (exclude_self && gallery[g].image_id == q.image_id) continue;
      if (ranks_before(dist[g], gallery[g].image_id, dist[*best], gallery[*best].image_id)) ++rank;
    }
    rep.first_hit_rank.push_back(rank);
  }
  for (auto k : ks) {
    std::size_t hits = 0;
    for (const auto& r : rep.first_hit_rank) hits += (r && *r <= k) ? 1 : 0;
    rep.recall.push_back(double(hits) / double(rep.query_count));
  }
  return rep;
}

std::string recall_report_to_json(const RecallReport& report, int indent) {
  nlohmann::json recall = nlohmann::json::object();
  for (std::size_t i = 0; i < report.ks.size(); ++i) recall[std::to_string(report.ks[i])] = report.recall[i];
  nlohmann::json ranks = nlohmann::json::array();
  for (std::size_t i = 0; i < report.first_hit_rank.size(); ++i) {
    const auto& r = report.first_hit_rank[i];
    ranks.push_back({{"image_id", report.query_ids[i]}, {"first_hit_rank", r ? nlohmann::json(*r) : nlohmann::json(nullptr)}});
  }
  nlohmann::json j = {{"ks", report.ks},
                      {"recall", recall},
                      {"query_count", report.query_count},
                      {"unmatched_queries", report.unmatched_queries},
                      {"queries", ranks}};
  return j.dump(indent);
}

std::string format_recall_table(const RecallReport& report) {
  std::ostringstream out;
  out << std::left << std::setw(8) << "K" << std::right << std::setw(10) << "recall" << '\n';
  for (std::size_t i = 0; i < report.ks.size(); ++i) {
    out << std::left << std::setw(8) << report.ks[i] << std::right << std::setw(10) << std::fixed
        << std::setprecision(4) << report.recall[i] << '\n';
  }
  out << "queries: " << report.query_count << ", unmatched: " << report.unmatched_queries << '\n';
  return out.str();
}

}  // namespace tcaps
