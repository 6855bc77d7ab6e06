#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tcaps/capsules.hpp"
#include "tcaps/tensor.hpp"

namespace tcaps {

enum class BackboneKind { sc, rc };

enum class ShortcutMode {
  automatic,   // identity when shapes agree, 1x1 projection otherwise
  identity,    // never project; a shape mismatch is a build error
  projection,  // always project
};

struct LayerSpec {
  std::size_t filters = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;

  bool operator==(const LayerSpec&) const = default;
};

// Two kernel x kernel convolutions (padding kernel/2) joined with a shortcut.
// The first convolution carries the stride.
struct ResidualBlockSpec {
  std::size_t filters = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  ShortcutMode shortcut = ShortcutMode::automatic;

  bool operator==(const ResidualBlockSpec&) const = default;
};

struct BackboneConfig {
  BackboneKind kind = BackboneKind::sc;
  std::vector<LayerSpec> layers;          // plain conv stack (the RC stem)
  std::vector<ResidualBlockSpec> blocks;  // RC only
  std::size_t input_channels = 3;
  std::size_t input_height = 32;
  std::size_t input_width = 32;
  double leaky_slope = 0.01;
  bool batch_norm = true;

  bool operator==(const BackboneConfig&) const = default;
};

struct PrimaryCapsConfig {
  std::size_t channels = 32;
  std::size_t dim = 16;
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t padding = 1;

  bool operator==(const PrimaryCapsConfig&) const = default;
};

struct NetworkConfig {
  std::string name;
  BackboneConfig backbone;
  PrimaryCapsConfig primary;
  std::size_t capsule_dim = 16;
  std::size_t num_classes = 4;
  std::size_t routing_iterations = 3;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;
  // Std of the class-capsule transforms at init; <= 0 selects 1/sqrt(in_caps).
  double capsule_init_std = 0.0;

  bool operator==(const NetworkConfig&) const = default;
};

// JSON form; see docs/config.md. Keys are emitted sorted so the text is
// canonical for a given config.
std::string network_config_to_json(const NetworkConfig& cfg, int indent = 2);
NetworkConfig network_config_from_json(std::string_view text);
NetworkConfig load_network_config(const std::string& path);

// sc-tiny, rc-tiny, sc-full, rc-full.
std::vector<std::string> builtin_config_names();
NetworkConfig builtin_config(std::string_view name);

// Loads a builtin by name, otherwise treats the argument as a JSON path.
NetworkConfig resolve_network_config(const std::string& name_or_path);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct NamedBuffer {
  std::string name;
  std::vector<Real>* values;
};

struct LayerInfo {
  std::size_t index = 0;
  std::string name;
  std::string kind;  // conv, batch_norm, leaky_relu, residual_add, primary_capsules, class_capsules
  Shape output;      // per-sample output shape
  std::size_t params = 0;
};

class Network {
 public:
  // Validates the config (shape inference through every layer) and draws
  // initial weights from `seed`. Throws Error(config) naming the layer.
  static Network build(const NetworkConfig& cfg, std::uint64_t seed);

  // images [N, C, H, W] -> class capsules [N, num_classes, capsule_dim].
  CapsuleTensor forward(const Tensor& images, Mode mode);
  // Backbone output only, [N, C', H', W'].
  Tensor features(const Tensor& images, Mode mode);

  const NetworkConfig& config() const { return config_; }
  std::vector<NamedTensor> parameters() const;
  std::vector<NamedBuffer> buffers();
  std::size_t param_count() const;
  const std::vector<LayerInfo>& layer_table() const { return layers_; }
  void zero_grad();

 private:
  struct ConvUnit {
    std::string name;
    Tensor weight, bias, gamma, beta;
    BatchNormState bn;
    bool has_bn = false;
    bool activate = false;
    std::size_t stride = 1, padding = 0;
  };
  struct ResidualUnit {
    std::string name;
    ConvUnit first, second;
    std::optional<ConvUnit> projection;
  };

  Network() = default;
  Tensor run(ConvUnit& unit, const Tensor& x, Mode mode) const;
  void check_input(const Tensor& images) const;

  NetworkConfig config_;
  std::vector<ConvUnit> stack_;
  std::vector<ResidualUnit> blocks_;
  ConvUnit projection_;
  ClassCapsuleParams class_caps_;
  std::vector<LayerInfo> layers_;
};

std::string format_layer_table(const Network& net);

}  // namespace tcaps
