#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tcaps {

struct EmbeddingRecord {
  std::uint64_t image_id = 0;
  std::uint64_t item_id = 0;
  std::uint64_t category_id = 0;
  std::vector<double> vector;

  bool operator==(const EmbeddingRecord&) const = default;
};

// Line-delimited text, one record per line; see docs/formats.md.
std::string format_embeddings(const std::vector<EmbeddingRecord>& records);
std::vector<EmbeddingRecord> parse_embeddings(const std::string& text);
void save_embeddings(const std::vector<EmbeddingRecord>& records, const std::string& path);
std::vector<EmbeddingRecord> load_embeddings(const std::string& path);

struct Hit {
  std::uint64_t image_id = 0;
  double distance = 0;

  bool operator==(const Hit&) const = default;
};

// Exact Euclidean index. Immutable after construction, safe to query from
// several threads.
class GalleryIndex {
 public:
  // Throws on duplicate image ids, ragged vectors or non-finite values.
  static GalleryIndex build(std::vector<EmbeddingRecord> records);

  std::size_t size() const { return records_.size(); }
  std::size_t dim() const { return dim_; }
  bool empty() const { return records_.empty(); }
  const std::vector<EmbeddingRecord>& records() const { return records_; }

  // Ascending distance, ties by ascending image id, length min(k, size).
  std::vector<Hit> query(std::span<const double> vector, std::size_t k) const;

  // Same ranking with one image id left out (a query never retrieves itself).
  std::vector<Hit> query_excluding(std::span<const double> vector, std::size_t k,
                                   std::optional<std::uint64_t> exclude) const;

 private:
  void check_query(std::span<const double> vector, std::size_t k) const;

  std::vector<EmbeddingRecord> records_;
  std::size_t dim_ = 0;
};

double euclidean_distance(std::span<const double> a, std::span<const double> b);

struct RecallReport {
  std::vector<std::size_t> ks;
  std::vector<double> recall;  // per K, hits / queries
  std::size_t query_count = 0;
  std::size_t unmatched_queries = 0;  // queries whose item has no gallery image
  // 1-based rank of the first same-item gallery image per query.
  std::vector<std::optional<std::size_t>> first_hit_rank;
  std::vector<std::uint64_t> query_ids;

  bool operator==(const RecallReport&) const = default;
};

std::vector<std::size_t> default_recall_ks();

// A query hits at K when a gallery image with its item id ranks in the top K.
// Gallery records sharing the query's image id are skipped unless
// exclude_self is false (used when the gallery is the query set itself).
RecallReport recall_at_k(const GalleryIndex& index, const std::vector<EmbeddingRecord>& queries,
                         std::vector<std::size_t> ks = default_recall_ks(), bool exclude_self = true);

std::string recall_report_to_json(const RecallReport& report, int indent = 2);
std::string format_recall_table(const RecallReport& report);

}  // namespace tcaps
