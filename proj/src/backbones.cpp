#include "tcaps/backbones.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "tcaps/error.hpp"
#include "tcaps/rng.hpp"

namespace tcaps {

using json = nlohmann::json;

namespace {

const char* shortcut_name(ShortcutMode m) {
  switch (m) {
    case ShortcutMode::automatic: return "auto";
    case ShortcutMode::identity: return "identity";
    case ShortcutMode::projection: return "projection";
  }
  return "auto";
}

ShortcutMode parse_shortcut(const std::string& s) {
  if (s == "auto") return ShortcutMode::automatic;
  if (s == "identity") return ShortcutMode::identity;
  if (s == "projection") return ShortcutMode::projection;
  fail(ErrorCode::config, "unknown shortcut mode '" + s + "' (expected auto, identity or projection)");
}

// Reads a key, rejecting anything not listed in `allowed` so typos surface.
class Reader {
 public:
  Reader(const json& j, std::string where, std::initializer_list<const char*> allowed) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) fail(ErrorCode::config, where_ + ": expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || it.key() == a;
      if (!ok) fail(ErrorCode::config, where_ + ": unknown key '" + it.key() + "'");
    }
  }

  template <typename T>
  void get(const char* key, T& out) const {
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      fail(ErrorCode::config, where_ + "." + key + ": " + e.what());
    }
  }

  std::size_t get_count(const char* key, std::size_t fallback) const {
    if (!j_.contains(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_number_unsigned()) fail(ErrorCode::config, where_ + "." + key + ": expected a non-negative integer");
    return v.get<std::size_t>();
  }

  const json& raw() const { return j_; }

 private:
  const json& j_;
  std::string where_;
};

json layer_json(const LayerSpec& l) {
  return {{"filters", l.filters}, {"kernel", l.kernel}, {"stride", l.stride}, {"padding", l.padding}};
}

void validate(const NetworkConfig& cfg) {
  const auto& b = cfg.backbone;
  auto bad = [](const std::string& m) { fail(ErrorCode::config, m); };
  if (b.input_channels == 0 || b.input_height == 0 || b.input_width == 0) bad("backbone input dims must be positive");
  if (!(b.leaky_slope > 0 && b.leaky_slope < 1)) bad("backbone.leaky_slope must lie in (0,1)");
  if (b.layers.empty()) bad("backbone.layers must contain at least one convolution");
  for (std::size_t i = 0; i < b.layers.size(); ++i) {
    const auto& l = b.layers[i];
    if (l.filters == 0 || l.kernel == 0 || l.stride == 0) {
      bad("backbone layer " + std::to_string(i) + ": filters, kernel and stride must be positive");
    }
  }
  if (b.kind == BackboneKind::sc && !b.blocks.empty()) bad("sc backbone must not contain residual blocks");
  if (b.kind == BackboneKind::rc && b.blocks.empty()) bad("rc backbone needs at least one residual block");
  for (std::size_t i = 0; i < b.blocks.size(); ++i) {
    const auto& blk = b.blocks[i];
    if (blk.filters == 0 || blk.kernel == 0 || blk.stride == 0 || blk.kernel % 2 == 0) {
      bad("residual block " + std::to_string(i) + ": filters/stride must be positive and kernel odd");
    }
  }
  const auto& p = cfg.primary;
  if (p.channels == 0 || p.dim == 0 || p.kernel == 0 || p.stride == 0) bad("primary capsule parameters must be positive");
  if (cfg.capsule_dim == 0) bad("capsule_dim must be positive");
  if (cfg.num_classes == 0) bad("num_classes must be >= 1");
  if (cfg.routing_iterations == 0) bad("routing_iterations must be >= 1");
  if (!(cfg.bn_eps > 0)) bad("bn_eps must be positive");
  if (!(cfg.bn_momentum >= 0 && cfg.bn_momentum < 1)) bad("bn_momentum must lie in [0,1)");
}

}  // namespace

std::string network_config_to_json(const NetworkConfig& cfg, int indent) {
  const auto& b = cfg.backbone;
  json layers = json::array();
  for (const auto& l : b.layers) layers.push_back(layer_json(l));
  json blocks = json::array();
  for (const auto& blk : b.blocks) {
    blocks.push_back({{"filters", blk.filters},
                      {"kernel", blk.kernel},
                      {"stride", blk.stride},
                      {"shortcut", shortcut_name(blk.shortcut)}});
  }
  json backbone = {{"kind", b.kind == BackboneKind::sc ? "sc" : "rc"},
                   {"input_channels", b.input_channels},
                   {"input_height", b.input_height},
                   {"input_width", b.input_width},
                   {"leaky_slope", b.leaky_slope},
                   {"batch_norm", b.batch_norm},
                   {"layers", layers}};
  if (b.kind == BackboneKind::rc) backbone["blocks"] = blocks;
  json j = {{"name", cfg.name},
            {"backbone", backbone},
            {"primary",
             {{"channels", cfg.primary.channels},
              {"dim", cfg.primary.dim},
              {"kernel", cfg.primary.kernel},
              {"stride", cfg.primary.stride},
              {"padding", cfg.primary.padding}}},
            {"capsule_dim", cfg.capsule_dim},
            {"num_classes", cfg.num_classes},
            {"routing_iterations", cfg.routing_iterations},
            {"bn_momentum", cfg.bn_momentum},
            {"bn_eps", cfg.bn_eps},
            {"capsule_init_std", cfg.capsule_init_std}};
  return j.dump(indent);
}

NetworkConfig network_config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::config, std::string("network config is not valid JSON: ") + e.what());
  }
  NetworkConfig cfg;
  Reader top(j, "config", {"name", "backbone", "primary", "capsule_dim", "num_classes", "routing_iterations",
                           "bn_momentum", "bn_eps", "capsule_init_std"});
  top.get("name", cfg.name);
  if (!j.contains("backbone")) fail(ErrorCode::config, "config: missing 'backbone'");
  {
    Reader r(j["backbone"], "backbone",
             {"kind", "input_channels", "input_height", "input_width", "leaky_slope", "batch_norm", "layers", "blocks"});
    auto& b = cfg.backbone;
    std::string kind = "sc";
    r.get("kind", kind);
    if (kind == "sc") {
      b.kind = BackboneKind::sc;
    } else if (kind == "rc") {
      b.kind = BackboneKind::rc;
    } else {
      fail(ErrorCode::config, "backbone.kind: expected 'sc' or 'rc', got '" + kind + "'");
    }
    b.input_channels = r.get_count("input_channels", b.input_channels);
    b.input_height = r.get_count("input_height", b.input_height);
    b.input_width = r.get_count("input_width", b.input_width);
    r.get("leaky_slope", b.leaky_slope);
    r.get("batch_norm", b.batch_norm);
    if (r.raw().contains("layers")) {
      const auto& arr = r.raw()["layers"];
      if (!arr.is_array()) fail(ErrorCode::config, "backbone.layers: expected an array");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        Reader lr(arr[i], "backbone.layers[" + std::to_string(i) + "]", {"filters", "kernel", "stride", "padding"});
        LayerSpec l;
        l.filters = lr.get_count("filters", 0);
        l.kernel = lr.get_count("kernel", l.kernel);
        l.stride = lr.get_count("stride", l.stride);
        l.padding = lr.get_count("padding", l.kernel / 2);
        b.layers.push_back(l);
      }
    }
    if (r.raw().contains("blocks")) {
      const auto& arr = r.raw()["blocks"];
      if (!arr.is_array()) fail(ErrorCode::config, "backbone.blocks: expected an array");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        Reader br(arr[i], "backbone.blocks[" + std::to_string(i) + "]", {"filters", "kernel", "stride", "shortcut"});
        ResidualBlockSpec blk;
        blk.filters = br.get_count("filters", 0);
        blk.kernel = br.get_count("kernel", blk.kernel);
        blk.stride = br.get_count("stride", blk.stride);
        std::string sc = "auto";
        br.get("shortcut", sc);
        blk.shortcut = parse_shortcut(sc);
        b.blocks.push_back(blk);
      }
    }
  }
  if (j.contains("primary")) {
    Reader r(j["primary"], "primary", {"channels", "dim", "kernel", "stride", "padding"});
    auto& p = cfg.primary;
    p.channels = r.get_count("channels", p.channels);
    p.dim = r.get_count("dim", p.dim);
    p.kernel = r.get_count("kernel", p.kernel);
    p.stride = r.get_count("stride", p.stride);
    p.padding = r.get_count("padding", p.padding);
  }
  cfg.capsule_dim = top.get_count("capsule_dim", cfg.capsule_dim);
  cfg.num_classes = top.get_count("num_classes", cfg.num_classes);
  cfg.routing_iterations = top.get_count("routing_iterations", cfg.routing_iterations);
  top.get("bn_momentum", cfg.bn_momentum);
  top.get("bn_eps", cfg.bn_eps);
  top.get("capsule_init_std", cfg.capsule_init_std);
  validate(cfg);
  return cfg;
}

NetworkConfig load_network_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open network config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return network_config_from_json(ss.str());
}

std::vector<std::string> builtin_config_names() { return {"sc-tiny", "rc-tiny", "sc-full", "rc-full"}; }

NetworkConfig builtin_config(std::string_view name) {
  NetworkConfig cfg;
  cfg.name = std::string(name);
  auto& b = cfg.backbone;
  if (name == "sc-tiny" || name == "rc-tiny") {
    b.input_height = b.input_width = 32;
    cfg.num_classes = 4;
    cfg.primary = {8, 16, 3, 2, 1};
    if (name == "sc-tiny") {
      b.kind = BackboneKind::sc;
      b.layers = {{16, 5, 2, 2}, {32, 3, 2, 1}, {32, 3, 2, 1}};
    } else {
      b.kind = BackboneKind::rc;
      b.layers = {{16, 5, 2, 2}};
      b.blocks = {{32, 3, 2, ShortcutMode::automatic}};
      cfg.primary = {8, 16, 3, 4, 1};
    }
  } else if (name == "sc-full" || name == "rc-full") {
    b.input_height = b.input_width = 224;
    cfg.num_classes = 16;
    cfg.primary = {32, 16, 3, 2, 1};
    if (name == "sc-full") {
      b.kind = BackboneKind::sc;
      b.layers = {{32, 5, 2, 2}, {64, 3, 2, 1}, {96, 3, 2, 1}, {128, 3, 2, 1}, {192, 3, 2, 1}, {256, 3, 2, 1}};
    } else {
      b.kind = BackboneKind::rc;
      b.layers = {{32, 5, 2, 2}};
      b.blocks = {{64, 3, 2, ShortcutMode::automatic},
                  {128, 3, 2, ShortcutMode::automatic},
                  {192, 3, 2, ShortcutMode::automatic},
                  {224, 3, 2, ShortcutMode::automatic},
                  {256, 3, 2, ShortcutMode::automatic}};
    }
  } else {
    fail(ErrorCode::config, "unknown architecture '" + std::string(name) +
                                "' (expected sc-tiny, rc-tiny, sc-full or rc-full)");
  }
  return cfg;
}

NetworkConfig resolve_network_config(const std::string& name_or_path) {
  for (const auto& n : builtin_config_names()) {
    if (n == name_or_path) return builtin_config(n);
  }
  return load_network_config(name_or_path);
}

// ---------------------------------------------------------------------------

namespace {

struct Planner {
  std::size_t channels, height, width;
  std::vector<LayerInfo>* table;

  void add(std::string name, std::string kind, Shape out, std::size_t params) {
    table->push_back({table->size(), std::move(name), std::move(kind), std::move(out), params});
  }

  // Output spatial size of a convolution, or a config error naming the layer.
  std::pair<std::size_t, std::size_t> conv_out(const std::string& name, std::size_t h, std::size_t w,
                                               std::size_t k, std::size_t s, std::size_t p) const {
    if (h + 2 * p < k || w + 2 * p < k) {
      fail(ErrorCode::config, "layer " + std::to_string(table->size()) + " (" + name + "): kernel " +
                                  std::to_string(k) + " exceeds padded input " + std::to_string(h) + "x" +
                                  std::to_string(w));
    }
    return {(h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1};
  }
};

Tensor init_normal(Shape shape, double stddev, Rng& rng) {
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = Real(rng.normal() * stddev);
  return Tensor::from_values(std::move(shape), std::move(v), true);
}

}  // namespace

Network Network::build(const NetworkConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Network net;
  net.config_ = cfg;
  const auto& b = cfg.backbone;
  Planner plan{b.input_channels, b.input_height, b.input_width, &net.layers_};
  std::uint64_t stream = 0;

  auto make_conv = [&](const std::string& name, std::size_t in_c, std::size_t out_c, std::size_t k,
                       std::size_t stride, std::size_t pad, bool bn, bool act, std::size_t h,
                       std::size_t w) -> std::pair<ConvUnit, std::pair<std::size_t, std::size_t>> {
    ConvUnit u;
    u.name = name;
    const auto hw = plan.conv_out(name, h, w, k, stride, pad);
    Rng rng(seed, stream++);
    u.weight = init_normal({out_c, in_c, k, k}, std::sqrt(2.0 / double(in_c * k * k)), rng);
    u.bias = Tensor::zeros({out_c}, true);
    u.stride = stride;
    u.padding = pad;
    plan.add(name, "conv", {out_c, hw.first, hw.second}, out_c * in_c * k * k + out_c);
    if (bn) {
      u.has_bn = true;
      u.gamma = Tensor::full({out_c}, Real(1), true);
      u.beta = Tensor::zeros({out_c}, true);
      u.bn = BatchNormState::for_channels(out_c);
      u.bn.momentum = Real(cfg.bn_momentum);
      u.bn.eps = Real(cfg.bn_eps);
      plan.add(name + ".bn", "batch_norm", {out_c, hw.first, hw.second}, 2 * out_c);
    }
    if (act) {
      u.activate = true;
      plan.add(name + ".act", "leaky_relu", {out_c, hw.first, hw.second}, 0);
    }
    return {std::move(u), hw};
  };

  std::size_t c = b.input_channels, h = b.input_height, w = b.input_width;
  for (std::size_t i = 0; i < b.layers.size(); ++i) {
    const auto& l = b.layers[i];
    auto [unit, hw] = make_conv("stem." + std::to_string(i), c, l.filters, l.kernel, l.stride, l.padding,
                                b.batch_norm, true, h, w);
    net.stack_.push_back(std::move(unit));
    c = l.filters;
    std::tie(h, w) = hw;
  }
  for (std::size_t i = 0; i < b.blocks.size(); ++i) {
    const auto& blk = b.blocks[i];
    const std::string name = "block." + std::to_string(i);
    const std::size_t pad = blk.kernel / 2;
    ResidualUnit r;
    r.name = name;
    auto [first, hw1] = make_conv(name + ".conv1", c, blk.filters, blk.kernel, blk.stride, pad, b.batch_norm, true, h, w);
    auto [second, hw2] = make_conv(name + ".conv2", blk.filters, blk.filters, blk.kernel, 1, pad, b.batch_norm, false,
                                   hw1.first, hw1.second);
    r.first = std::move(first);
    r.second = std::move(second);
    const Shape branch{blk.filters, hw2.first, hw2.second};
    const Shape input{c, h, w};
    const bool mismatch = branch != input;
    if (blk.shortcut == ShortcutMode::identity && mismatch) {
      fail(ErrorCode::config, "residual join at " + name + " (layer " + std::to_string(net.layers_.size()) +
                                  "): branch " + shape_string(branch) + " vs identity shortcut " +
                                  shape_string(input) + "; use shortcut 'auto' or 'projection'");
    }
    if (blk.shortcut == ShortcutMode::projection || (blk.shortcut == ShortcutMode::automatic && mismatch)) {
      auto [proj, hwp] = make_conv(name + ".shortcut", c, blk.filters, 1, blk.stride, 0, b.batch_norm, false, h, w);
      if (Shape{blk.filters, hwp.first, hwp.second} != branch) {
        fail(ErrorCode::config, "residual join at " + name + ": projection " +
                                    shape_string({blk.filters, hwp.first, hwp.second}) + " vs branch " +
                                    shape_string(branch));
      }
      r.projection = std::move(proj);
    }
    plan.add(name + ".add", "residual_add", branch, 0);
    plan.add(name + ".act", "leaky_relu", branch, 0);
    net.blocks_.push_back(std::move(r));
    c = blk.filters;
    h = hw2.first;
    w = hw2.second;
  }

  const auto& p = cfg.primary;
  auto [proj, hwp] = make_conv("primary", c, p.channels * p.dim, p.kernel, p.stride, p.padding, false, false, h, w);
  net.projection_ = std::move(proj);
  const std::size_t in_caps = p.channels * hwp.first * hwp.second;
  plan.add("primary.capsules", "primary_capsules", {in_caps, p.dim}, 0);

  const double std_w = cfg.capsule_init_std > 0 ? cfg.capsule_init_std : 1.0 / std::sqrt(double(in_caps));
  Rng rng(seed, stream++);
  net.class_caps_.weight = init_normal({in_caps, cfg.num_classes, p.dim, cfg.capsule_dim}, std_w, rng);
  plan.add("class_capsules", "class_capsules", {cfg.num_classes, cfg.capsule_dim},
           in_caps * cfg.num_classes * p.dim * cfg.capsule_dim);
  return net;
}

Tensor Network::run(ConvUnit& unit, const Tensor& x, Mode mode) const {
  Tensor y = conv2d(x, unit.weight, unit.bias, unit.stride, unit.padding);
  if (unit.has_bn) y = batch_norm(y, unit.gamma, unit.beta, unit.bn, mode);
  if (unit.activate) y = leaky_relu(y, Real(config_.backbone.leaky_slope));
  return y;
}

void Network::check_input(const Tensor& images) const {
  const auto& b = config_.backbone;
  if (images.rank() != 4 || images.dim(1) != b.input_channels || images.dim(2) != b.input_height ||
      images.dim(3) != b.input_width) {
    fail(ErrorCode::shape, "network '" + config_.name + "' expects images [N," + std::to_string(b.input_channels) +
                               "," + std::to_string(b.input_height) + "," + std::to_string(b.input_width) +
                               "], got " + shape_string(images.shape()));
  }
}

Tensor Network::features(const Tensor& images, Mode mode) {
  check_input(images);
  Tensor x = images;
  for (auto& unit : stack_) x = run(unit, x, mode);
  for (auto& blk : blocks_) {
    Tensor branch = run(blk.second, run(blk.first, x, mode), mode);
    Tensor shortcut = blk.projection ? run(*blk.projection, x, mode) : x;
    x = leaky_relu(add(branch, shortcut), Real(config_.backbone.leaky_slope));
  }
  return x;
}

CapsuleTensor Network::forward(const Tensor& images, Mode mode) {
  Tensor projected = run(projection_, features(images, mode), mode);
  CapsuleTensor primary = primary_capsules(projected, config_.primary.channels, config_.primary.dim);
  Tensor votes = compute_votes(primary, class_caps_);
  return dynamic_routing(votes, config_.routing_iterations);
}

std::vector<NamedTensor> Network::parameters() const {
  std::vector<NamedTensor> out;
  auto push = [&](const ConvUnit& u) {
    out.push_back({u.name + ".weight", u.weight});
    out.push_back({u.name + ".bias", u.bias});
    if (u.has_bn) {
      out.push_back({u.name + ".bn.gamma", u.gamma});
      out.push_back({u.name + ".bn.beta", u.beta});
    }
  };
  for (const auto& u : stack_) push(u);
  for (const auto& blk : blocks_) {
    push(blk.first);
    push(blk.second);
    if (blk.projection) push(*blk.projection);
  }
  push(projection_);
  out.push_back({"class_capsules.weight", class_caps_.weight});
  return out;
}

std::vector<NamedBuffer> Network::buffers() {
  std::vector<NamedBuffer> out;
  auto push = [&](ConvUnit& u) {
    if (!u.has_bn) return;
    out.push_back({u.name + ".bn.running_mean", &u.bn.running_mean});
    out.push_back({u.name + ".bn.running_var", &u.bn.running_var});
  };
  for (auto& u : stack_) push(u);
  for (auto& blk : blocks_) {
    push(blk.first);
    push(blk.second);
    if (blk.projection) push(*blk.projection);
  }
  return out;
}

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

void Network::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

std::string format_layer_table(const Network& net) {
  std::ostringstream out;
  out << std::left << std::setw(4) << "#" << std::setw(24) << "layer" << std::setw(18) << "kind" << std::setw(16)
      << "output" << std::right << std::setw(12) << "params" << '\n';
  for (const auto& l : net.layer_table()) {
    out << std::left << std::setw(4) << l.index << std::setw(24) << l.name << std::setw(18) << l.kind << std::setw(16)
        << shape_string(l.output) << std::right << std::setw(12) << l.params << '\n';
  }
  out << "total parameters: " << net.param_count() << '\n';
  return out.str();
}

}  // namespace tcaps
