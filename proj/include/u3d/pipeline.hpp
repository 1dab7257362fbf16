#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "u3d/errors.hpp"
#include "u3d/evalkit.hpp"
#include "u3d/kv.hpp"
#include "u3d/nn/checkpoint.hpp"
#include "u3d/nn/model.hpp"
#include "u3d/nn/train.hpp"
#include "u3d/preprocess.hpp"
#include "u3d/uniformize.hpp"

// End-to-end flow: uniformize -> normalize -> zero-center (train-fold mean)
// -> train -> score.

namespace u3d {

struct PipelineConfig {
  UniformizeSpec uniform;
  bool normalize = false;
  bool zero_center = false;
  HuWindow window;
  NormalizeMode normalize_mode = NormalizeMode::FixedWindow;
  nn::ModelConfig model;
  nn::TrainConfig train;

  /// Model input follows the uniformized shape.
  nn::ModelConfig model_for_input() const {
    nn::ModelConfig m = model;
    m.input = {uniform.width, uniform.height, uniform.depth};
    return m;
  }

  /// Uniformization and preprocessing settings only.
  void validate_preprocessing() const {
    uniform.validate();
    if (zero_center && !normalize) throw ConfigError("zero-centering requires normalization");
    if (!(window.lo < window.hi)) throw ConfigError("normalization window needs lo < hi");
  }

  void validate() const {
    validate_preprocessing();
    nn::stage_extents(model_for_input());
  }
};

/// Uniformized (and optionally normalized) volumes; the split-independent
/// part of the pipeline.
struct PreparedSet {
  std::vector<Volume> volumes;
  std::vector<int> labels;

  std::size_t size() const { return volumes.size(); }
};

inline Volume prepare_volume(const Volume& raw, const PipelineConfig& cfg) {
  Volume v = uniformize(raw, cfg.uniform).volume;
  if (cfg.normalize) v = normalize(std::move(v), cfg.window, cfg.normalize_mode);
  return v;
}

/// `load(i)` yields raw volume i; raw volumes are dropped once prepared.
template <typename Loader>
PreparedSet prepare(std::size_t count, Loader&& load, std::span<const int> labels, const PipelineConfig& cfg) {
  if (labels.size() != count) throw ShapeError("label count does not match volume count");
  cfg.validate_preprocessing();
  PreparedSet out;
  out.volumes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.volumes.push_back(prepare_volume(load(i), cfg));
  out.labels.assign(labels.begin(), labels.end());
  return out;
}

struct FoldResult {
  nn::TrainOutcome outcome;
  std::optional<DatasetStats> stats;
  eval::EvalReport report;
};

namespace detail {
inline nn::Dataset select(const PreparedSet& set, std::span<const std::size_t> idx, const std::optional<DatasetStats>& st) {
  nn::Dataset d;
  for (auto i : idx) {
    if (i >= set.size()) throw IndexError("sample index out of range");
    d.inputs.push_back(st ? zero_center(set.volumes[i], *st).tensor : set.volumes[i].tensor);
    d.labels.push_back(set.labels[i]);
  }
  return d;
}
}  // namespace detail

/// Zero-centering statistics of the given training indices, if enabled.
inline std::optional<DatasetStats> fit_fold_stats(const PreparedSet& set, std::span<const std::size_t> train,
                                                  const PipelineConfig& cfg) {
  if (!cfg.zero_center) return std::nullopt;
  std::vector<const Volume*> ptrs;
  for (auto i : train) {
    if (i >= set.size()) throw IndexError("sample index out of range");
    ptrs.push_back(&set.volumes[i]);
  }
  return fit_stats(std::span<const Volume* const>(ptrs), cfg.window);
}

inline nn::Dataset training_data(const PreparedSet& set, std::span<const std::size_t> idx,
                                 const std::optional<DatasetStats>& stats) {
  return detail::select(set, idx, stats);
}

inline eval::EvalReport score(nn::Network<float>& net, const PreparedSet& set, std::span<const std::size_t> idx,
                              const std::optional<DatasetStats>& stats) {
  const nn::Dataset d = detail::select(set, idx, stats);
  const auto scores = nn::predict(net, d.inputs);
  std::vector<eval::SampleScore> samples;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    samples.push_back({set.volumes[idx[k]].source_id, scores[k], set.labels[idx[k]]});
  }
  return eval::make_report(std::move(samples));
}

/// Fits statistics on `train` only, trains, and scores `test`.
inline FoldResult run_fold(const PreparedSet& set, std::span<const std::size_t> train,
                           std::span<const std::size_t> test, const PipelineConfig& cfg) {
  cfg.validate();
  auto stats = fit_fold_stats(set, train, cfg);
  FoldResult r{nn::train(training_data(set, train, stats), cfg.model_for_input(), cfg.train), std::move(stats), {}};
  r.report = score(r.outcome.state.network, set, test, r.stats);
  return r;
}

/// Repeated random splits; trial t trains with seed derive_seed(train.seed, t).
inline eval::CrossValResult cross_validate(const PreparedSet& set, const PipelineConfig& cfg, std::size_t trials,
                                           double fraction, std::uint64_t split_seed) {
  return eval::cross_validate(
      set.labels,
      [&](std::size_t t, const eval::Split& split) {
        PipelineConfig c = cfg;
        c.train.seed = derive_seed(cfg.train.seed, t);
        return run_fold(set, split.train, split.test, c).report;
      },
      trials, fraction, split_seed);
}

/// Run settings recorded next to a checkpoint so evaluation can replay them.
inline void write_pipeline_config(KeyValues& kv, const PipelineConfig& cfg) {
  kv.set("method", to_string(cfg.uniform.method));
  kv.set("target_shape", nn::format_extents({cfg.uniform.width, cfg.uniform.height, cfg.uniform.depth}));
  kv.set("normalize", cfg.normalize);
  kv.set("normalize_mode", cfg.normalize_mode == NormalizeMode::FixedWindow ? "fixed" : "minmax");
  kv.set("zero_center", cfg.zero_center);
  kv.set("batch_size", cfg.train.batch_size);
}

inline PipelineConfig read_pipeline_config(const KeyValues& kv) {
  PipelineConfig cfg;
  const auto m = parse_method(kv.get("method"));
  if (!m) throw FormatError("unknown method '" + kv.get("method") + "'");
  cfg.uniform.method = *m;
  const auto e = nn::parse_extents(kv.get("target_shape"));
  cfg.uniform.width = e[0];
  cfg.uniform.height = e[1];
  cfg.uniform.depth = e[2];
  cfg.normalize = kv.get_bool("normalize");
  cfg.normalize_mode = kv.get("normalize_mode") == "minmax" ? NormalizeMode::PerVolumeMinMax : NormalizeMode::FixedWindow;
  cfg.zero_center = kv.get_bool("zero_center");
  cfg.model = nn::read_model_config(kv);
  cfg.train.learning_rate = kv.get_double("learning_rate");
  cfg.train.momentum = kv.get_double("momentum");
  cfg.train.batch_size = kv.get_size("batch_size");
  cfg.train.seed = kv.get_u64("seed");
  return cfg;
}

}  // namespace u3d
