#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>
#include <zlib.h>

#include "tcaps/error.hpp"
#include "tcaps/training.hpp"

namespace tcaps {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'T', 'C', 'A', 'P', 'S', 'C', 'K', 'P'};

enum Section : std::uint8_t { param = 0, buffer = 1, moment1 = 2, moment2 = 3 };

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_ += s;
  }
  void tensor(Section sec, const std::string& name, const Shape& shape, std::span<const Real> vals) {
    pod<std::uint8_t>(sec);
    str(name);
    pod<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) pod<std::uint64_t>(d);
    for (Real v : vals) pod<double>(double(v));
  }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(std::string_view data) : data_(data) {}
  template <typename T>
  T pod(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(const char* what) {
    const auto n = pod<std::uint64_t>(what);
    need(n, what);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::uint64_t n, const char* what) const {
    if (n > data_.size() - pos_) fail(ErrorCode::format, std::string("checkpoint truncated while reading ") + what);
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

struct StoredTensor {
  Shape shape;
  std::vector<double> values;
};

std::uint32_t crc32_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

struct Parsed {
  NetworkConfig net;
  TrainingState state;
  std::uint8_t optimizer_kind = 0;
  std::map<std::pair<int, std::string>, StoredTensor> tensors;
};

Parsed parse(const std::string& bytes) {
  constexpr std::size_t kHeader = sizeof kMagic + 4;
  const std::size_t probe = std::min(bytes.size(), sizeof kMagic);
  if (std::memcmp(bytes.data(), kMagic, probe) != 0 || bytes.empty()) {
    fail(ErrorCode::format, "not a tcaps checkpoint (bad magic)");
  }
  if (bytes.size() < kHeader + 4) {
    fail(ErrorCode::checksum, "checkpoint truncated (" + std::to_string(bytes.size()) + " bytes)");
  }
  Reader head(std::string_view(bytes).substr(sizeof kMagic, 4));
  const auto version = head.pod<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    fail(ErrorCode::version, "checkpoint version " + std::to_string(version) + " found, expected " +
                                 std::to_string(kCheckpointVersion));
  }
  const std::string_view body(bytes.data(), bytes.size() - 4);
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  if (crc32_of(body) != stored_crc) fail(ErrorCode::checksum, "checkpoint checksum mismatch; the file is corrupt");

  Reader in(body.substr(kHeader));
  Parsed p;
  const auto digest = in.pod<std::uint64_t>("config digest");
  p.net = network_config_from_json(in.str("network config"));
  if (config_digest(p.net) != digest) fail(ErrorCode::format, "checkpoint config digest does not match its config");
  p.state.config = train_config_from_json(in.str("train config"));
  p.state.epoch = in.pod<std::uint64_t>("epoch");
  p.state.optimizer.step = in.pod<std::uint64_t>("optimizer step");
  p.optimizer_kind = in.pod<std::uint8_t>("optimizer kind");
  if (p.optimizer_kind != (p.state.config.optimizer == OptimizerKind::adam ? 1 : 0)) {
    fail(ErrorCode::format, "checkpoint optimizer tag disagrees with its train config");
  }
  const auto count = in.pod<std::uint64_t>("tensor count");
  for (std::uint64_t t = 0; t < count; ++t) {
    const auto sec = in.pod<std::uint8_t>("section");
    if (sec > moment2) fail(ErrorCode::format, "checkpoint: unknown tensor section " + std::to_string(sec));
    std::string name = in.str("tensor name");
    StoredTensor st;
    const auto rank = in.pod<std::uint32_t>("rank");
    if (rank > 8) fail(ErrorCode::format, "checkpoint: tensor '" + name + "' has implausible rank");
    std::size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      st.shape.push_back(in.pod<std::uint64_t>("dims"));
      n *= st.shape.back();
    }
    st.values.reserve(n);
    for (std::size_t i = 0; i < n; ++i) st.values.push_back(in.pod<double>("tensor values"));
    if (!p.tensors.emplace(std::make_pair(int(sec), name), std::move(st)).second) {
      fail(ErrorCode::format, "checkpoint: duplicate tensor '" + name + "'");
    }
  }
  if (!in.done()) fail(ErrorCode::format, "checkpoint has trailing bytes");
  return p;
}

const StoredTensor& find(const Parsed& p, Section sec, const std::string& name, const Shape& shape) {
  auto it = p.tensors.find({int(sec), name});
  if (it == p.tensors.end()) fail(ErrorCode::format, "checkpoint is missing tensor '" + name + "'");
  if (it->second.shape != shape) {
    fail(ErrorCode::shape, "checkpoint tensor '" + name + "' has shape " + shape_string(it->second.shape) +
                               ", network expects " + shape_string(shape));
  }
  return it->second;
}

LoadedCheckpoint materialize(const Parsed& p) {
  LoadedCheckpoint out{Network::build(p.net, 0), p.state};
  Network& net = out.network;
  const auto params = net.parameters();
  std::size_t expected = params.size();
  for (const auto& np : params) {
    const auto& st = find(p, param, np.name, np.tensor.shape());
    Tensor t = np.tensor;
    auto w = t.mutable_values();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = Real(st.values[i]);
  }
  for (const auto& b : net.buffers()) {
    const auto& st = find(p, buffer, b.name, Shape{b.values->size()});
    for (std::size_t i = 0; i < b.values->size(); ++i) (*b.values)[i] = Real(st.values[i]);
    ++expected;
  }
  const bool has_moments = p.state.optimizer.step > 0;
  if (has_moments) {
    for (const auto& np : params) {
      const Shape flat{np.tensor.numel()};
      const auto& m = find(p, moment1, np.name, flat);
      out.state.optimizer.first_moment.emplace_back(m.values.begin(), m.values.end());
      ++expected;
      if (p.state.config.optimizer == OptimizerKind::adam) {
        const auto& v = find(p, moment2, np.name, flat);
        out.state.optimizer.second_moment.emplace_back(v.values.begin(), v.values.end());
        ++expected;
      }
    }
  }
  if (expected != p.tensors.size()) fail(ErrorCode::format, "checkpoint holds tensors the network does not use");
  return out;
}

std::string read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::uint64_t config_digest(const NetworkConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : network_config_to_json(cfg, -1)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string serialize_checkpoint(Network& net, const TrainingState& state) {
  Writer w;
  w.bytes().append(kMagic, sizeof kMagic);
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.pod<std::uint64_t>(config_digest(net.config()));
  w.str(network_config_to_json(net.config(), -1));
  w.str(train_config_to_json(state.config, -1));
  w.pod<std::uint64_t>(state.epoch);
  w.pod<std::uint64_t>(state.optimizer.step);
  w.pod<std::uint8_t>(state.config.optimizer == OptimizerKind::adam ? 1 : 0);

  const auto params = net.parameters();
  auto buffers = net.buffers();
  const bool has_moments = state.optimizer.step > 0;
  if (has_moments && state.optimizer.first_moment.size() != params.size()) {
    fail(ErrorCode::internal, "optimizer state does not match the network's parameters");
  }
  std::uint64_t count = params.size() + buffers.size();
  if (has_moments) count += state.optimizer.first_moment.size() + state.optimizer.second_moment.size();
  w.pod<std::uint64_t>(count);
  for (const auto& p : params) w.tensor(param, p.name, p.tensor.shape(), p.tensor.values());
  for (const auto& b : buffers) w.tensor(buffer, b.name, Shape{b.values->size()}, *b.values);
  if (has_moments) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& m = state.optimizer.first_moment[i];
      w.tensor(moment1, params[i].name, Shape{m.size()}, m);
    }
    for (std::size_t i = 0; i < state.optimizer.second_moment.size(); ++i) {
      const auto& v = state.optimizer.second_moment[i];
      w.tensor(moment2, params[i].name, Shape{v.size()}, v);
    }
  }
  w.pod<std::uint32_t>(crc32_of(w.bytes()));
  return std::move(w.bytes());
}

void save_checkpoint(Network& net, const TrainingState& state, const std::string& path) {
  write_file_atomic(path, serialize_checkpoint(net, state));
}

LoadedCheckpoint deserialize_checkpoint(const std::string& bytes) { return materialize(parse(bytes)); }

LoadedCheckpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_all(path)); }

LoadedCheckpoint load_checkpoint(const std::string& path, const NetworkConfig& expected) {
  const Parsed p = parse(read_all(path));
  if (!(p.net == expected)) {
    const auto diff = nlohmann::json::diff(nlohmann::json::parse(network_config_to_json(expected, -1)),
                                           nlohmann::json::parse(network_config_to_json(p.net, -1)));
    std::string msg = "checkpoint config differs from the expected config:";
    for (const auto& d : diff) {
      msg += "\n  " + d.value("op", std::string()) + " " + d.value("path", std::string());
      if (d.contains("value")) msg += " = " + d["value"].dump();
    }
    fail(ErrorCode::config, msg);
  }
  return materialize(p);
}

std::size_t checkpoint_param_scalars(const std::string& bytes) {
  const Parsed p = parse(bytes);
  std::size_t n = 0;
  for (const auto& [key, st] : p.tensors) {
    if (key.first == param) n += st.values.size();
  }
  return n;
}

}  // namespace tcaps
