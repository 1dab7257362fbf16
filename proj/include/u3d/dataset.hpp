#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "u3d/errors.hpp"
#include "u3d/kv.hpp"
#include "u3d/synthgen.hpp"
#include "u3d/tensor.hpp"
#include "u3d/volume_io.hpp"

// Data manifests: CSV "id,path,label", paths relative to the manifest's
// directory unless absolute.

namespace u3d {

struct ManifestEntry {
  std::string id;
  std::filesystem::path path;  ///< resolved against the manifest directory on read
  int label = 0;
};

namespace detail {
inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto c = line.find(',', start);
    out.push_back(line.substr(start, c == std::string_view::npos ? std::string_view::npos : c - start));
    if (c == std::string_view::npos) break;
    start = c + 1;
  }
  return out;
}
}  // namespace detail

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  std::string line;
  if (!std::getline(in, line)) throw FormatError("manifest " + path.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "id,path,label") throw FormatError("manifest header must be 'id,path,label'");
  std::vector<ManifestEntry> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != 3) throw FormatError("manifest row " + std::to_string(row) + " needs 3 fields");
    ManifestEntry e;
    e.id = std::string(f[0]);
    e.path = std::filesystem::path(std::string(f[1]));
    if (e.path.is_relative()) e.path = base / e.path;
    if (f[2] == "0") {
      e.label = 0;
    } else if (f[2] == "1") {
      e.label = 1;
    } else {
      throw FormatError("manifest row " + std::to_string(row) + ": label must be 0 or 1");
    }
    out.push_back(std::move(e));
  }
  if (out.empty()) throw EmptyInputError("manifest " + path.string() + " lists no volumes");
  return out;
}

/// Writes paths relative to the manifest directory when they lie below it.
inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  const auto base = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
  std::string text = "id,path,label\n";
  for (const auto& e : entries) {
    auto rel = e.path.lexically_proximate(base);
    if (rel.empty()) rel = e.path;
    text += e.id + ',' + rel.generic_string() + ',' + std::to_string(e.label) + '\n';
  }
  io::write_file(path, io::Bytes(text.begin(), text.end()));
}

inline bool has_suffix(const std::filesystem::path& p, std::string_view suffix) {
  const std::string s = p.string();
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// NIfTI (.nii, .nii.gz) or VOL1 (.vol1, read as raw HU) volume.
inline Volume load_volume(const std::filesystem::path& path, std::string id = {}) {
  if (id.empty()) id = path.stem().string();
  if (has_suffix(path, ".vol1")) {
    TensorF t = read_vol1(path);
    if (t.rank() != 3) throw UnsupportedRank("VOL1 volume must be rank 3, got " + shape_string(t.shape()));
    return Volume(std::move(t), VoxelUnits::HounsfieldUnits, std::move(id));
  }
  Volume v = read_nifti(path);
  v.source_id = std::move(id);
  return v;
}

/// Writes `spec.count` NIfTI files plus manifest.csv into `dir`.
inline std::vector<ManifestEntry> write_synthetic_dataset(const synth::SynthSpec& spec, const std::filesystem::path& dir,
                                                          NiftiType type = NiftiType::Int16) {
  spec.validate();
  std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < spec.count; ++i) {
    const synth::Sample s = synth::generate_one(spec, i);
    const auto file = dir / (s.volume.source_id + ".nii");
    write_nifti_fixture(s.volume, file, type);
    entries.push_back({s.volume.source_id, file, s.label});
  }
  write_manifest(dir / "manifest.csv", entries);
  return entries;
}

}  // namespace u3d
