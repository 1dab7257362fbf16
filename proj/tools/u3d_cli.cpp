// u3d: synthesize, uniformize, train and evaluate volumetric classifiers.
//
// Exit codes: 0 ok, 1 runtime failure, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "u3d/u3d.hpp"

namespace fs = std::filesystem;
using namespace u3d;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::array<std::size_t, 2> parse_plane(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) throw UsageError("--plane expects WxH, got '" + s + "'");
  try {
    const auto w = parse_number<std::size_t>(std::string_view(s).substr(0, x));
    const auto h = parse_number<std::size_t>(std::string_view(s).substr(x + 1));
    if (w == 0 || h == 0) throw UsageError("--plane extents must be positive");
    return {w, h};
  } catch (const FormatError&) {
    throw UsageError("--plane expects WxH, got '" + s + "'");
  }
}

/// Flags shared by every command that runs the pipeline.
struct PipelineFlags {
  std::string method = "siz";
  std::size_t depth = 64;
  std::string plane = "128x128";
  bool normalize = false;
  bool zero_center = false;
  bool minmax = false;
  std::string filters = "64,64,128,256";
  std::size_t fc = 512;
  double dropout = -1.0;
  double lr = 1e-6;
  double momentum = 0.99;
  std::size_t batch = 2;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;

  void add_uniform(CLI::App* c) {
    c->add_option("--method", method, "sss | ess | siz")->capture_default_str();
    c->add_option("--depth", depth, "target depth N")->capture_default_str();
    c->add_option("--plane", plane, "target plane WxH")->capture_default_str();
  }
  void add_preprocess(CLI::App* c) {
    c->add_flag("--normalize", normalize, "window HU to [0, 1]");
    c->add_flag("--zero-center", zero_center, "subtract the training mean (requires --normalize)");
    c->add_flag("--minmax", minmax, "normalize by per-volume min/max instead of the HU window");
  }
  void add_training(CLI::App* c) {
    c->add_option("--filters", filters, "conv widths, comma separated")->capture_default_str();
    c->add_option("--fc", fc, "hidden dense width")->capture_default_str();
    c->add_option("--dropout", dropout, "rate for both dropout layers (default keeps p = sqrt(0.4))");
    c->add_option("--lr", lr, "learning rate")->capture_default_str();
    c->add_option("--momentum", momentum)->capture_default_str();
    c->add_option("--batch", batch)->capture_default_str();
    c->add_option("--epochs", epochs)->capture_default_str();
    c->add_option("--seed", seed)->capture_default_str();
  }

  /// `with_model` also checks that the network fits the target shape.
  PipelineConfig config(bool with_model = true) const {
    PipelineConfig cfg;
    const auto m = parse_method(method);
    if (!m) throw UsageError("--method must be sss, ess or siz");
    if (zero_center && !normalize) throw UsageError("--zero-center requires --normalize");
    const auto wh = parse_plane(plane);
    cfg.uniform = {*m, depth, wh[0], wh[1]};
    cfg.normalize = normalize;
    cfg.zero_center = zero_center;
    cfg.normalize_mode = minmax ? NormalizeMode::PerVolumeMinMax : NormalizeMode::FixedWindow;
    try {
      cfg.model.conv_filters = nn::parse_list(filters);
    } catch (const Error&) {
      throw UsageError("--filters expects a comma separated list, got '" + filters + "'");
    }
    cfg.model.fc_width = fc;
    if (dropout >= 0.0) cfg.model.dropout = {dropout, dropout};
    cfg.train.learning_rate = lr;
    cfg.train.momentum = momentum;
    cfg.train.batch_size = batch;
    cfg.train.epochs = epochs;
    cfg.train.seed = seed;
    try {
      if (with_model) {
        cfg.validate();
      } else {
        cfg.validate_preprocessing();
      }
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
    return cfg;
  }
};

struct Loaded {
  std::vector<ManifestEntry> entries;
  std::vector<int> labels;
};

Loaded load_manifest(const std::string& path) {
  Loaded l;
  l.entries = read_manifest(path);
  for (const auto& e : l.entries) l.labels.push_back(e.label);
  return l;
}

PreparedSet prepare_manifest(const Loaded& l, const PipelineConfig& cfg) {
  return prepare(
      l.entries.size(), [&](std::size_t i) { return load_volume(l.entries[i].path, l.entries[i].id); }, l.labels, cfg);
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

void write_volume(const fs::path& path, const Volume& v) {
  if (has_suffix(path, ".vol1")) {
    write_vol1(path, v.tensor);
  } else {
    write_nifti_fixture(v, path, NiftiType::Float32);
  }
}

void write_text(const fs::path& path, const std::string& text) { io::write_file(path, io::Bytes(text.begin(), text.end())); }

std::string summary_text(const eval::EvalReport& r) {
  return "n=" + std::to_string(r.samples.size()) + "\nacc=" + format_number(r.acc) + "\nauc=" + format_number(r.auc) +
         "\n";
}

// --- commands --------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::size_t count = 100;
  std::string plane = "64x64";
  std::size_t depth_min = 50, depth_max = 400;
  double tau = 0.002;
  double positive_fraction = 0.5;
  bool band = false;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
  synth::SynthSpec spec;
  spec.count = a.count;
  const auto wh = parse_plane(a.plane);
  spec.width = wh[0];
  spec.height = wh[1];
  spec.depth_min = a.depth_min;
  spec.depth_max = a.depth_max;
  spec.tau = a.tau;
  spec.positive_fraction = a.positive_fraction;
  spec.seed = a.seed;
  if (a.band) spec = synth::depth_localized_variant(spec);
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const auto entries = write_synthetic_dataset(spec, a.out);
  std::size_t pos = 0;
  for (const auto& e : entries) pos += e.label;
  std::cout << "wrote " << entries.size() << " volumes (" << pos << " positive) to " << a.out << "\n";
  return 0;
}

struct UniformizeArgs {
  std::string input, manifest, out;
};

int cmd_uniformize(const UniformizeArgs& a, const PipelineFlags& f) {
  const PipelineConfig cfg = f.config(false);
  if (a.input.empty() == a.manifest.empty()) throw UsageError("give exactly one of --input or --manifest");
  if (!a.input.empty()) {
    write_volume(a.out, prepare_volume(load_volume(a.input), cfg));
    return 0;
  }
  const Loaded l = load_manifest(a.manifest);
  fs::create_directories(a.out);
  std::vector<ManifestEntry> out;
  for (const auto& e : l.entries) {
    const fs::path file = fs::path(a.out) / (e.id + ".vol1");
    write_volume(file, prepare_volume(load_volume(e.path, e.id), cfg));
    out.push_back({e.id, file, e.label});
  }
  write_manifest(fs::path(a.out) / "manifest.csv", out);
  std::cout << "uniformized " << out.size() << " volumes to " << a.out << "\n";
  return 0;
}

int cmd_stats(const std::string& manifest, const std::string& out, PipelineFlags f) {
  f.normalize = true;
  f.zero_center = true;
  const PipelineConfig cfg = f.config(false);
  const PreparedSet set = prepare_manifest(load_manifest(manifest), cfg);
  const auto stats = fit_fold_stats(set, all_indices(set.size()), cfg);
  save_stats(out, *stats);
  std::cout << "dataset_mean=" << format_number(stats->dataset_mean) << " over " << stats->computed_over << " voxels\n";
  return 0;
}

int cmd_train(const std::string& manifest, const std::string& out, const PipelineFlags& f) {
  const PipelineConfig cfg = f.config();
  const PreparedSet set = prepare_manifest(load_manifest(manifest), cfg);
  const auto idx = all_indices(set.size());
  const auto stats = fit_fold_stats(set, idx, cfg);
  const auto outcome = nn::train(training_data(set, idx, stats), cfg.model_for_input(), cfg.train);
  std::string history = "epoch,loss,acc\n";
  for (const auto& h : outcome.history) {
    history += std::to_string(h.epoch) + ',' + format_number(h.loss) + ',' + format_number(h.accuracy) + '\n';
    std::cout << "epoch " << h.epoch << " loss " << h.loss << " acc " << h.accuracy << "\n";
  }
  KeyValues extra;
  write_pipeline_config(extra, cfg);
  if (stats) {
    const fs::path stats_path = out + ".stats";
    save_stats(stats_path, *stats);
    extra.set("stats", stats_path.filename().string());
  }
  nn::save_checkpoint(out, outcome.state, extra);
  write_text(out + ".history.csv", history);
  std::cout << "saved " << out << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest, const std::string& out) {
  KeyValues kv;
  nn::ModelState st = nn::load_checkpoint(checkpoint, &kv);
  const PipelineConfig cfg = read_pipeline_config(kv);
  std::optional<DatasetStats> stats;
  if (cfg.zero_center) stats = load_stats(fs::path(checkpoint).parent_path() / kv.get("stats"));
  const PreparedSet set = prepare_manifest(load_manifest(manifest), cfg);
  const auto report = score(st.network, set, all_indices(set.size()), stats);
  fs::create_directories(out);
  eval::export_scores(report, fs::path(out) / "scores.csv");
  if (!report.roc.empty()) eval::export_roc(report, fs::path(out) / "roc.csv");
  write_text(fs::path(out) / "summary.txt", summary_text(report));
  std::cout << summary_text(report);
  return 0;
}

int cmd_crossval(const std::string& manifest, const std::string& out, std::size_t trials, double fraction,
                 std::uint64_t split_seed, const PipelineFlags& f) {
  const PipelineConfig cfg = f.config();
  const PreparedSet set = prepare_manifest(load_manifest(manifest), cfg);
  const auto r = cross_validate(set, cfg, trials, fraction, split_seed);
  eval::export_crossval(r, out);
  std::cout << "acc " << r.mean_acc << " +- " << r.std_acc << "  auc " << r.mean_auc << " +- " << r.std_auc << "\n";
  return 0;
}

int cmd_params(const std::string& input, const PipelineFlags& f) {
  nn::ModelConfig mc;
  try {
    mc.input = nn::parse_extents(input);
    mc.conv_filters = nn::parse_list(f.filters);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  mc.fc_width = f.fc;
  try {
    std::cout << nn::count_parameters(mc) << "\n";
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  return 0;
}

int cmd_ablate(const std::string& manifest, const std::string& out, std::size_t trials, double fraction,
               std::uint64_t split_seed, PipelineFlags f) {
  const Loaded l = load_manifest(manifest);
  std::vector<Volume> raw;
  for (const auto& e : l.entries) raw.push_back(load_volume(e.path, e.id));
  std::string csv = "method,normalize,zero_center,acc_mean,acc_std,auc_mean,auc_std\n";
  const std::pair<bool, bool> settings[] = {{false, false}, {true, false}, {true, true}};
  for (const char* method : {"sss", "ess", "siz"}) {
    for (const auto& [norm, zc] : settings) {
      f.method = method;
      f.normalize = norm;
      f.zero_center = zc;
      const PipelineConfig cfg = f.config();
      const PreparedSet set = prepare(raw.size(), [&](std::size_t i) { return raw[i]; }, l.labels, cfg);
      const auto r = cross_validate(set, cfg, trials, fraction, split_seed);
      const std::string row = std::string(method) + ',' + (norm ? "1" : "0") + ',' + (zc ? "1" : "0") + ',' +
                              format_number(r.mean_acc) + ',' + format_number(r.std_acc) + ',' +
                              format_number(r.mean_auc) + ',' + format_number(r.std_auc);
      std::cout << row << "\n" << std::flush;
      csv += row + '\n';
    }
  }
  write_text(out, csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Volumetric uniformization and 3D CNN toolkit"};
  app.require_subcommand(1);
  std::size_t threads = 1;
  app.add_option("--threads", threads, "worker threads (results do not depend on it)")->capture_default_str();

  PipelineFlags flags;
  std::string manifest, out, checkpoint, input;
  std::size_t trials = 10;
  double fraction = 0.8;
  std::uint64_t split_seed = 0;
  auto add_threads = [&](CLI::App* c) { c->add_option("--threads", threads, "worker threads"); };
  auto add_split = [&](CLI::App* c) {
    c->add_option("--trials", trials)->capture_default_str();
    c->add_option("--fraction", fraction, "training share of each split")->capture_default_str();
    c->add_option("--split-seed", split_seed)->capture_default_str();
  };

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "write a synthetic NIfTI dataset and manifest");
  synth->add_option("--out", synth_args.out, "output directory")->required();
  synth->add_option("--count", synth_args.count)->capture_default_str();
  synth->add_option("--plane", synth_args.plane)->capture_default_str();
  synth->add_option("--depth-min", synth_args.depth_min)->capture_default_str();
  synth->add_option("--depth-max", synth_args.depth_max)->capture_default_str();
  synth->add_option("--tau", synth_args.tau, "lesion fraction threshold")->capture_default_str();
  synth->add_option("--positive-fraction", synth_args.positive_fraction)->capture_default_str();
  synth->add_flag("--band", synth_args.band, "confine positive lesions to the [0.35, 0.45] depth band");
  synth->add_option("--seed", synth_args.seed)->capture_default_str();
  add_threads(synth);

  UniformizeArgs uni_args;
  auto* uni = app.add_subcommand("uniformize", "resample volumes to a fixed shape");
  uni->add_option("--input", uni_args.input, "single volume (.nii, .nii.gz, .vol1)");
  uni->add_option("--manifest", uni_args.manifest, "dataset manifest");
  uni->add_option("--out", uni_args.out, "output file, or directory with --manifest")->required();
  flags.add_uniform(uni);
  uni->add_flag("--normalize", flags.normalize);
  add_threads(uni);

  auto* stats = app.add_subcommand("stats", "fit the zero-centering mean over a dataset");
  stats->add_option("--manifest", manifest)->required();
  stats->add_option("--out", out)->required();
  flags.add_uniform(stats);
  stats->add_flag("--minmax", flags.minmax);
  add_threads(stats);

  auto* train = app.add_subcommand("train", "train on every volume of a manifest");
  train->add_option("--manifest", manifest)->required();
  train->add_option("--out", out, "checkpoint path")->required();
  flags.add_uniform(train);
  flags.add_preprocess(train);
  flags.add_training(train);
  add_threads(train);

  auto* evalc = app.add_subcommand("eval", "score a manifest with a checkpoint");
  evalc->add_option("--checkpoint", checkpoint)->required();
  evalc->add_option("--manifest", manifest)->required();
  evalc->add_option("--out", out, "report directory")->required();
  add_threads(evalc);

  auto* cv = app.add_subcommand("crossval", "repeated random train/test splits");
  cv->add_option("--manifest", manifest)->required();
  cv->add_option("--out", out, "per-trial CSV")->required();
  flags.add_uniform(cv);
  flags.add_preprocess(cv);
  flags.add_training(cv);
  add_split(cv);
  add_threads(cv);

  auto* params = app.add_subcommand("params", "print the trainable parameter count");
  params->add_option("--input", input, "input extents WxHxD")->default_val("128x128x64");
  params->add_option("--filters", flags.filters)->capture_default_str();
  params->add_option("--fc", flags.fc)->capture_default_str();

  auto* ablate = app.add_subcommand("ablate", "cross-validate every method x preprocessing combination");
  ablate->add_option("--manifest", manifest)->required();
  ablate->add_option("--out", out, "result CSV")->required();
  flags.add_uniform(ablate);
  flags.add_training(ablate);
  ablate->add_flag("--minmax", flags.minmax);
  add_split(ablate);
  add_threads(ablate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    set_num_threads(threads);
    if (*synth) return cmd_synth(synth_args);
    if (*uni) return cmd_uniformize(uni_args, flags);
    if (*stats) return cmd_stats(manifest, out, flags);
    if (*train) return cmd_train(manifest, out, flags);
    if (*evalc) return cmd_eval(checkpoint, manifest, out);
    if (*cv) return cmd_crossval(manifest, out, trials, fraction, split_seed, flags);
    if (*params) return cmd_params(input, flags);
    if (*ablate) return cmd_ablate(manifest, out, trials, fraction, split_seed, flags);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
