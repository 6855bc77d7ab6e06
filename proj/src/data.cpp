#include "tcaps/data.hpp"

#include <unistd.h>

#include <cctype>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "tcaps/error.hpp"

namespace tcaps {

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifestHeader = "image_id\titem_id\tcategory_id\tsplit\tpath";

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string line_error(std::size_t line, const std::string& msg) {
  return "manifest line " + std::to_string(line) + ": " + msg;
}

std::uint64_t parse_id(const std::string& field, const char* name, std::size_t line) {
  std::uint64_t v = 0;
  const char* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (field.empty() || ec != std::errc() || ptr != end) {
    fail(ErrorCode::format, line_error(line, std::string("invalid ") + name + " '" + field + "'"));
  }
  return v;
}

std::string unescape_path(const std::string& s, std::size_t line) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out += s[i];
      continue;
    }
    if (i + 1 >= s.size()) fail(ErrorCode::format, line_error(line, "dangling backslash in path"));
    const char c = s[++i];
    if (c == '\\') {
      out += '\\';
    } else if (c == 't') {
      out += '\t';
    } else if (c == 'n') {
      out += '\n';
    } else {
      fail(ErrorCode::format, line_error(line, std::string("unknown escape \\") + c + " in path"));
    }
  }
  return out;
}

std::string escape_path(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '\\') {
      out += "\\\\";
    } else if (c == '\t') {
      out += "\\t";
    } else if (c == '\n') {
      out += "\\n";
    } else {
      out += c;
    }
  }
  return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::query: return "query";
    case Split::gallery: return "gallery";
  }
  return "train";
}

Split parse_split(const std::string& token) {
  if (token == "train") return Split::train;
  if (token == "query") return Split::query;
  if (token == "gallery") return Split::gallery;
  fail(ErrorCode::format, "unknown split '" + token + "' (expected train, query or gallery)");
}

std::string Manifest::resolve(const ManifestRecord& r) const {
  fs::path p(r.image_path);
  if (p.is_absolute() || base_dir.empty()) return p.string();
  return (fs::path(base_dir) / p).string();
}

std::vector<ManifestRecord> Manifest::split(Split s) const {
  std::vector<ManifestRecord> out;
  for (const auto& r : records) {
    if (r.split == s) out.push_back(r);
  }
  return out;
}

Manifest parse_manifest(const std::string& text, const std::string& base_dir) {
  Manifest m;
  m.base_dir = base_dir;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  std::map<std::uint64_t, std::size_t> id_line;
  std::map<std::uint64_t, std::uint64_t> item_category;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != kManifestHeader) {
        fail(ErrorCode::format, line_error(lineno, "expected header '" + std::string(kManifestHeader) +
                                                       "' (tab separated)"));
      }
      header_seen = true;
      continue;
    }
    const auto fields = split_tabs(line);
    if (fields.size() != 5) {
      fail(ErrorCode::format, line_error(lineno, "expected 5 tab-separated fields, found " +
                                                     std::to_string(fields.size())));
    }
    ManifestRecord r;
    r.image_id = parse_id(fields[0], "image_id", lineno);
    r.item_id = parse_id(fields[1], "item_id", lineno);
    r.category_id = parse_id(fields[2], "category_id", lineno);
    try {
      r.split = parse_split(fields[3]);
    } catch (const Error& e) {
      fail(ErrorCode::format, line_error(lineno, e.what()));
    }
    r.image_path = unescape_path(fields[4], lineno);
    if (r.image_path.empty()) fail(ErrorCode::format, line_error(lineno, "empty path"));
    if (auto [it, fresh] = id_line.emplace(r.image_id, lineno); !fresh) {
      fail(ErrorCode::format, line_error(lineno, "duplicate image_id " + std::to_string(r.image_id) +
                                                     " (first on line " + std::to_string(it->second) + ")"));
    }
    if (auto [it, fresh] = item_category.emplace(r.item_id, r.category_id); !fresh && it->second != r.category_id) {
      fail(ErrorCode::format, line_error(lineno, "item " + std::to_string(r.item_id) + " has category " +
                                                     std::to_string(r.category_id) + " but earlier category " +
                                                     std::to_string(it->second)));
    }
    m.records.push_back(std::move(r));
  }
  if (m.records.empty()) fail(ErrorCode::format, "manifest: no records");

  std::set<std::uint64_t> gallery_items;
  std::set<std::string> gallery_paths;
  for (const auto& r : m.records) {
    if (r.split == Split::gallery) {
      gallery_items.insert(r.item_id);
      gallery_paths.insert(m.resolve(r));
    }
  }
  for (const auto& r : m.records) {
    if (r.split != Split::query) continue;
    if (!gallery_items.count(r.item_id)) {
      fail(ErrorCode::format, "manifest: query image " + std::to_string(r.image_id) + " has item " +
                                  std::to_string(r.item_id) + " with no gallery image");
    }
    if (gallery_paths.count(m.resolve(r))) {
      fail(ErrorCode::format, "manifest: image '" + r.image_path + "' is in both query and gallery");
    }
  }
  return m;
}

Manifest load_manifest(const std::string& path) {
  const auto text = read_file(path);
  return parse_manifest(text, fs::path(path).parent_path().string());
}

std::string format_manifest(const std::vector<ManifestRecord>& records) {
  std::ostringstream out;
  out << "# tcaps manifest v1\n" << kManifestHeader << '\n';
  for (const auto& r : records) {
    out << r.image_id << '\t' << r.item_id << '\t' << r.category_id << '\t' << split_name(r.split) << '\t'
        << escape_path(r.image_path) << '\n';
  }
  return out.str();
}

void save_manifest(const std::vector<ManifestRecord>& records, const std::string& path) {
  write_file_atomic(path, format_manifest(records));
}

// ---------------------------------------------------------------------------

Image decode_pnm(const std::string& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&](const char* what) {
    skip_space();
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(bytes.data() + pos, bytes.data() + bytes.size(), v);
    if (ec != std::errc()) fail(ErrorCode::format, std::string("pnm: cannot read ") + what);
    pos = static_cast<std::size_t>(ptr - bytes.data());
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P') fail(ErrorCode::format, "pnm: missing magic number");
  const char kind = bytes[1];
  if (kind != '2' && kind != '3' && kind != '5' && kind != '6') {
    fail(ErrorCode::format, std::string("pnm: unsupported variant P") + kind);
  }
  pos = 2;
  Image img;
  img.width = read_uint("width");
  img.height = read_uint("height");
  const std::size_t maxval = read_uint("maxval");
  if (img.width == 0 || img.height == 0) fail(ErrorCode::format, "pnm: zero image size");
  if (maxval == 0 || maxval > 255) fail(ErrorCode::format, "pnm: maxval must be in [1,255]");
  const bool color = kind == '3' || kind == '6';
  const std::size_t samples = img.width * img.height * (color ? 3 : 1);
  std::vector<std::size_t> raw(samples);
  if (kind == '5' || kind == '6') {
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
      fail(ErrorCode::format, "pnm: missing separator before raster");
    }
    ++pos;
    if (bytes.size() - pos < samples) fail(ErrorCode::format, "pnm: truncated raster");
    for (std::size_t i = 0; i < samples; ++i) raw[i] = static_cast<unsigned char>(bytes[pos + i]);
  } else {
    for (std::size_t i = 0; i < samples; ++i) raw[i] = read_uint("sample");
  }
  img.rgb.resize(img.width * img.height * 3);
  for (std::size_t p = 0; p < img.width * img.height; ++p) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const std::size_t v = raw[color ? p * 3 + ch : p];
      if (v > maxval) fail(ErrorCode::format, "pnm: sample exceeds maxval");
      img.rgb[p * 3 + ch] = static_cast<std::uint8_t>((v * 255 + maxval / 2) / maxval);
    }
  }
  return img;
}

Image read_pnm(const std::string& path) {
  try {
    return decode_pnm(read_file(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::format) fail(ErrorCode::format, "'" + path + "': " + e.what());
    throw;
  }
}

std::string encode_ppm(const Image& image) {
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.rgb.data()), image.rgb.size());
  return out;
}

void write_ppm(const Image& image, const std::string& path) { write_file_atomic(path, encode_ppm(image)); }

Image resize_nearest(const Image& image, std::size_t width, std::size_t height) {
  if (width == 0 || height == 0) fail(ErrorCode::invalid_argument, "resize: target size must be positive");
  if (width == image.width && height == image.height) return image;
  Image out;
  out.width = width;
  out.height = height;
  out.rgb.resize(width * height * 3);
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = y * image.height / height;
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t sx = x * image.width / width;
      for (std::size_t ch = 0; ch < 3; ++ch) out.rgb[(y * width + x) * 3 + ch] = image.rgb[(sy * image.width + sx) * 3 + ch];
    }
  }
  return out;
}

Tensor image_to_tensor(const Image& image) {
  const std::size_t plane = image.width * image.height;
  std::vector<Real> v(3 * plane);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t ch = 0; ch < 3; ++ch) v[ch * plane + p] = Real(image.rgb[p * 3 + ch]) / Real(255);
  }
  return Tensor::from_values({3, image.height, image.width}, std::move(v));
}

Tensor load_image(const std::string& path, std::size_t height, std::size_t width) {
  return image_to_tensor(resize_nearest(read_pnm(path), width, height));
}

ImageBatch load_images(const Manifest& manifest, const std::vector<ManifestRecord>& records, std::size_t height,
                       std::size_t width) {
  if (records.empty()) fail(ErrorCode::invalid_argument, "load_images: no records");
  ImageBatch batch;
  std::vector<Real> all;
  all.reserve(records.size() * 3 * height * width);
  for (const auto& r : records) {
    const Tensor t = load_image(manifest.resolve(r), height, width);
    all.insert(all.end(), t.values().begin(), t.values().end());
    batch.image_ids.push_back(r.image_id);
    batch.item_ids.push_back(r.item_id);
    batch.category_ids.push_back(r.category_id);
  }
  batch.images = Tensor::from_values({records.size(), 3, height, width}, std::move(all));
  return batch;
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write '" + tmp + "'");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      std::remove(tmp.c_str());
      fail(ErrorCode::io, "write failed for '" + tmp + "'");
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    std::remove(tmp.c_str());
    fail(ErrorCode::io, "cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
  }
}

}  // namespace tcaps
