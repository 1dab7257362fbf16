#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "u3d/errors.hpp"
#include "u3d/kv.hpp"
#include "u3d/nn/train.hpp"
#include "u3d/volume_io.hpp"

// Checkpoint container: "U3DC" | u32 count | count x (u16 name length | name |
// VOL1 record). A `<file>.manifest` text file carries the configuration.

namespace u3d::nn {

inline std::string format_extents(const std::array<std::size_t, 3>& e) {
  return std::to_string(e[0]) + "x" + std::to_string(e[1]) + "x" + std::to_string(e[2]);
}

inline std::array<std::size_t, 3> parse_extents(std::string_view s) {
  std::array<std::size_t, 3> e{};
  std::size_t axis = 0, pos = 0;
  while (true) {
    const auto end = s.find('x', pos);
    if (axis == 3) throw FormatError("expected WxHxD, got '" + std::string(s) + "'");
    e[axis++] = parse_number<std::size_t>(s.substr(pos, end == std::string_view::npos ? end : end - pos), "extent");
    if (end == std::string_view::npos) break;
    pos = end + 1;
  }
  if (axis != 3) throw FormatError("expected WxHxD, got '" + std::string(s) + "'");
  for (auto v : e) {
    if (v == 0) throw FormatError("extents must be positive: '" + std::string(s) + "'");
  }
  return e;
}

inline std::string format_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::vector<std::size_t> parse_list(std::string_view s) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto end = s.find(',', pos);
    out.push_back(parse_number<std::size_t>(s.substr(pos, end == std::string_view::npos ? std::string_view::npos
                                                                                         : end - pos),
                                            "list entry"));
    if (end == std::string_view::npos) break;
    pos = end + 1;
  }
  return out;
}

inline void write_model_config(KeyValues& kv, const ModelConfig& mc) {
  kv.set("input", format_extents(mc.input));
  kv.set("conv_filters", format_list(mc.conv_filters));
  kv.set("fc_width", mc.fc_width);
  kv.set("dropout1", mc.dropout[0]);
  kv.set("dropout2", mc.dropout[1]);
  kv.set("classes", mc.classes);
}

inline ModelConfig read_model_config(const KeyValues& kv) {
  ModelConfig mc;
  mc.input = parse_extents(kv.get("input"));
  mc.conv_filters = parse_list(kv.get("conv_filters"));
  mc.fc_width = kv.get_size("fc_width");
  mc.dropout = {kv.get_double("dropout1"), kv.get_double("dropout2")};
  mc.classes = kv.get_size("classes");
  return mc;
}

inline std::filesystem::path manifest_path(const std::filesystem::path& checkpoint) {
  return std::filesystem::path(checkpoint.string() + ".manifest");
}

inline io::Bytes encode_checkpoint(const ModelState& st) {
  std::vector<std::pair<std::string, const TensorF*>> items;
  for (const auto& p : st.network.parameters()) items.emplace_back(p.name, &p.value);
  for (const auto& b : st.network.buffers()) items.emplace_back(b.name, &b.value);
  const auto& vel = st.optimizer.velocity();
  for (std::size_t i = 0; i < vel.size(); ++i) {
    items.emplace_back(st.network.parameters()[i].name + ".velocity", &vel[i]);
  }
  io::Bytes out{'U', '3', 'D', 'C'};
  io::append_le(out, static_cast<std::uint32_t>(items.size()));
  for (const auto& [name, t] : items) {
    io::append_le(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    const io::Bytes blob = encode_vol1(*t);
    out.insert(out.end(), blob.begin(), blob.end());
  }
  return out;
}

/// Writes the tensor container and its manifest. `extra` entries (stats
/// reference, preprocessing flags) are appended to the manifest.
inline void save_checkpoint(const std::filesystem::path& path, const ModelState& st, const KeyValues& extra = {}) {
  io::write_file(path, encode_checkpoint(st));
  KeyValues kv;
  write_model_config(kv, st.network.config());
  kv.set("learning_rate", st.optimizer.learning_rate());
  kv.set("momentum", st.optimizer.momentum());
  kv.set("seed", st.seed);
  kv.set("epoch", st.epochs_done);
  for (const auto& [k, v] : extra.entries()) kv.set(k, v);
  kv.save(manifest_path(path));
}

inline ModelState load_checkpoint(const std::filesystem::path& path, KeyValues* manifest_out = nullptr) {
  const KeyValues kv = KeyValues::load(manifest_path(path));
  ModelState st{Network<float>(read_model_config(kv)),
                SgdMomentum<float>(kv.get_double("learning_rate"), kv.get_double("momentum")), kv.get_u64("seed"),
                kv.get_size("epoch")};
  const io::Bytes bytes = io::read_file(path);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "U3DC", 4) != 0) throw FormatError("not a checkpoint container");
  const auto count = io::load<std::uint32_t>(bytes.data() + 4, false);
  std::size_t pos = 8;
  std::vector<std::pair<std::string, TensorF>> items;
  for (std::uint32_t i = 0; i < count; ++i) {
    if (pos + 2 > bytes.size()) throw TruncationError("checkpoint truncated");
    const auto len = io::load<std::uint16_t>(bytes.data() + pos, false);
    pos += 2;
    if (pos + len > bytes.size()) throw TruncationError("checkpoint truncated");
    std::string name(reinterpret_cast<const char*>(bytes.data() + pos), len);
    pos += len;
    std::size_t used = 0;
    TensorF t = decode_vol1(std::span<const std::uint8_t>(bytes).subspan(pos), &used);
    pos += used;
    items.emplace_back(std::move(name), std::move(t));
  }
  auto take = [&](const std::string& name, TensorF& dst) {
    for (auto& [n, t] : items) {
      if (n == name) {
        if (t.shape() != dst.shape()) throw ShapeError("checkpoint tensor " + name + " has wrong shape");
        dst = std::move(t);
        return true;
      }
    }
    return false;
  };
  for (auto& p : st.network.parameters()) {
    if (!take(p.name, p.value)) throw FormatError("checkpoint lacks " + p.name);
  }
  for (auto& b : st.network.buffers()) {
    if (!take(b.name, b.value)) throw FormatError("checkpoint lacks " + b.name);
  }
  std::vector<TensorF> velocity;
  for (const auto& p : st.network.parameters()) {
    TensorF v(p.value.shape());
    if (!take(p.name + ".velocity", v)) {
      velocity.clear();
      break;
    }
    velocity.push_back(std::move(v));
  }
  st.optimizer.velocity() = std::move(velocity);
  if (manifest_out) *manifest_out = kv;
  return st;
}

}  // namespace u3d::nn
