#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tcaps/tensor.hpp"

namespace tcaps {

enum class Split { train, query, gallery };

const char* split_name(Split s);
Split parse_split(const std::string& token);

struct ManifestRecord {
  std::string image_path;  // as written in the manifest (relative to its directory unless absolute)
  std::uint64_t image_id = 0;
  std::uint64_t item_id = 0;
  std::uint64_t category_id = 0;
  Split split = Split::train;

  bool operator==(const ManifestRecord&) const = default;
};

struct Manifest {
  std::string base_dir;  // directory relative paths resolve against
  std::vector<ManifestRecord> records;

  std::string resolve(const ManifestRecord& r) const;
  std::vector<ManifestRecord> split(Split s) const;
};

// Parses and validates a manifest; see docs/formats.md. Errors carry the
// offending line number.
Manifest parse_manifest(const std::string& text, const std::string& base_dir);
Manifest load_manifest(const std::string& path);
std::string format_manifest(const std::vector<ManifestRecord>& records);
void save_manifest(const std::vector<ManifestRecord>& records, const std::string& path);

// 8-bit RGB raster, row-major, interleaved.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;
};

// Binary (P6) or ASCII (P3) portable pixmap, or P5/P2 graymap, maxval <= 255.
Image read_pnm(const std::string& path);
Image decode_pnm(const std::string& bytes);
std::string encode_ppm(const Image& image);
void write_ppm(const Image& image, const std::string& path);

// Nearest-neighbour resample: source index floor(dst * src_len / dst_len).
Image resize_nearest(const Image& image, std::size_t width, std::size_t height);

// [3, H, W] with values in [0, 1].
Tensor image_to_tensor(const Image& image);
Tensor load_image(const std::string& path, std::size_t height, std::size_t width);

// Images of one split stacked as [N, 3, H, W] in manifest order.
struct ImageBatch {
  Tensor images;
  std::vector<std::uint64_t> image_ids;
  std::vector<std::uint64_t> item_ids;
  std::vector<std::uint64_t> category_ids;
};

ImageBatch load_images(const Manifest& manifest, const std::vector<ManifestRecord>& records,
                       std::size_t height, std::size_t width);

struct SynthParams {
  std::size_t items = 20;
  std::size_t views_per_item = 4;
  std::size_t categories = 4;
  std::size_t resolution = 32;
  std::uint64_t seed = 7;
};

// Writes images/ and manifest.tsv under out_dir and returns the manifest path.
// Item i belongs to category i % categories; the category fixes the shape,
// the item fixes colour and size, and every view jitters position, rotation
// and scale. View 0 goes to query, view 1 to gallery, the rest to train.
std::string generate_synthetic(const SynthParams& params, const std::string& out_dir);

// The same dataset in memory (records plus rendered images, manifest order).
struct SynthDataset {
  std::vector<ManifestRecord> records;
  std::vector<Image> images;
};
SynthDataset render_synthetic(const SynthParams& params);

// Writes `contents` to a sibling temp file then renames it over `path`.
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace tcaps
