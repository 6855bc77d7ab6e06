#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>

#include "tcaps/data.hpp"
#include "tcaps/error.hpp"
#include "tcaps/rng.hpp"

namespace tcaps {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kShapeCount = 8;

struct ItemStyle {
  std::size_t shape = 0;
  std::size_t stripes = 0;  // extra variation once categories outnumber shapes
  double rgb[3] = {0, 0, 0};
  double size = 0.6;
};

void hsv_to_rgb(double h, double s, double v, double out[3]) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1 - std::fabs(std::fmod(hp, 2.0) - 1));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  const double m = v - c;
  out[0] = r + m;
  out[1] = g + m;
  out[2] = b + m;
}

// Point (x, y) in the shape's canonical frame, extent roughly [-1, 1].
bool inside(std::size_t shape, double x, double y) {
  const double ax = std::fabs(x), ay = std::fabs(y);
  const double r2 = x * x + y * y;
  switch (shape) {
    case 0: return r2 <= 1.0;                                          // disk
    case 1: return ax <= 0.82 && ay <= 0.82;                           // square
    case 2: {                                                          // triangle, apex up
      if (y < -0.7 || y > 0.95) return false;
      const double half = (0.95 - y) / 1.65 * 0.95;
      return ax <= half;
    }
    case 3: return (ax <= 0.3 && ay <= 0.95) || (ay <= 0.3 && ax <= 0.95);  // plus
    case 4: return r2 <= 1.0 && r2 >= 0.36;                                  // ring
    case 5: return ax + ay <= 1.0;                                           // diamond
    case 6: return ax <= 0.95 && ay <= 0.4;                                  // bar
    default: return (x >= -0.8 && x <= -0.2 && ay <= 0.9) || (y >= 0.3 && y <= 0.9 && ax <= 0.8);  // T-ish
  }
}

ItemStyle item_style(const SynthParams& p, std::size_t item) {
  ItemStyle s;
  const std::size_t cat = item % p.categories;
  const std::size_t rank = item / p.categories;
  const std::size_t per_cat = (p.items + p.categories - 1 - cat) / p.categories;
  s.shape = cat % kShapeCount;
  s.stripes = cat / kShapeCount;
  Rng rng(p.seed, 0x1000 + item);
  // Hues spread evenly inside a category so items of one shape stay apart.
  const double hue = (double(rank) + 0.5) / double(per_cat) + 0.11 * double(cat) + rng.uniform(-0.03, 0.03);
  hsv_to_rgb(hue, rng.uniform(0.7, 1.0), rng.uniform(0.75, 1.0), s.rgb);
  s.size = rng.uniform(0.5, 0.78);
  return s;
}

Image render_view(const SynthParams& p, const ItemStyle& style, Rng& rng) {
  const std::size_t res = p.resolution;
  const double tx = rng.uniform(-0.036, 0.036);
  const double ty = rng.uniform(-0.036, 0.036);
  const double angle = rng.uniform(-7.5, 7.5) * std::numbers::pi / 180.0;
  const double scale = style.size * (1 + rng.uniform(-0.036, 0.036));
  const double ca = std::cos(angle), sa = std::sin(angle);
  Image img;
  img.width = img.height = res;
  img.rgb.resize(res * res * 3);
  constexpr int kSuper = 2;
  for (std::size_t py = 0; py < res; ++py) {
    for (std::size_t px = 0; px < res; ++px) {
      int hits = 0;
      double shade = 0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double u = (double(px) + (sx + 0.5) / kSuper) / double(res) * 2.0 - 1.0 - tx;
          const double v = 1.0 - (double(py) + (sy + 0.5) / kSuper) / double(res) * 2.0 - ty;
          const double x = (ca * u + sa * v) / scale;
          const double y = (-sa * u + ca * v) / scale;
          if (inside(style.shape, x, y)) {
            ++hits;
            const bool dark = style.stripes > 0 && static_cast<long>(std::floor((y + 1.0) * 2.0 * double(style.stripes + 1))) % 2;
            shade += dark ? 0.55 : 1.0;
          }
        }
      }
      const double cover = double(hits) / (kSuper * kSuper);
      const double tone = hits ? shade / hits : 1.0;
      for (int ch = 0; ch < 3; ++ch) {
        const double bg = 0.1 + rng.uniform(-0.03, 0.03);
        const double val = (1.0 - cover) * bg + cover * style.rgb[ch] * tone;
        img.rgb[(py * res + px) * 3 + ch] =
            static_cast<std::uint8_t>(std::lround(std::clamp(val, 0.0, 1.0) * 255.0));
      }
    }
  }
  return img;
}

std::string image_name(std::size_t item, std::size_t view) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "images/item%04zu_view%02zu.ppm", item, view);
  return buf;
}

}  // namespace

SynthDataset render_synthetic(const SynthParams& p) {
  if (p.categories < 2) fail(ErrorCode::invalid_argument, "synth: need at least 2 categories");
  if (p.items < p.categories) fail(ErrorCode::invalid_argument, "synth: need at least as many items as categories");
  if (p.views_per_item < 2) fail(ErrorCode::invalid_argument, "synth: need at least 2 views per item");
  if (p.resolution < 8) fail(ErrorCode::invalid_argument, "synth: resolution must be at least 8");
  SynthDataset ds;
  for (std::size_t item = 0; item < p.items; ++item) {
    const ItemStyle style = item_style(p, item);
    for (std::size_t view = 0; view < p.views_per_item; ++view) {
      const std::uint64_t image_id = item * p.views_per_item + view;
      Rng rng(p.seed, 0x100000 + image_id);
      ds.images.push_back(render_view(p, style, rng));
      ManifestRecord r;
      r.image_path = image_name(item, view);
      r.image_id = image_id;
      r.item_id = item;
      r.category_id = item % p.categories;
      r.split = view == 0 ? Split::query : view == 1 ? Split::gallery : Split::train;
      ds.records.push_back(r);
    }
  }
  return ds;
}

std::string generate_synthetic(const SynthParams& p, const std::string& out_dir) {
  const SynthDataset ds = render_synthetic(p);
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec) fail(ErrorCode::io, "cannot create '" + out_dir + "/images': " + ec.message());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    write_ppm(ds.images[i], (fs::path(out_dir) / ds.records[i].image_path).string());
  }
  const std::string manifest = (fs::path(out_dir) / "manifest.tsv").string();
  save_manifest(ds.records, manifest);
  return manifest;
}

}  // namespace tcaps
