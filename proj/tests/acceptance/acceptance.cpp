// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "spline_oracle.hpp"
#include "test_util.hpp"
#include "u3d/u3d.hpp"

using namespace u3d;
using namespace u3d::spline;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* title;
  double budget_s;  ///< wall-clock limit, 0 when none
  std::function<Outcome()> run;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

std::string join(const std::vector<double>& v, const char* f = "%.3f") {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + fmt(f, x);
  return s;
}

// 1 -------------------------------------------------------------------------
Outcome param_counts() {
  nn::ModelConfig a, b;
  a.input = {128, 128, 64};
  b.input = {128, 128, 128};
  const auto ca = nn::count_parameters(a), cb = nn::count_parameters(b);
  const auto built = nn::Network<float>(a).trainable_count();
  return {ca == 10658498 && cb == 29532866 && built == ca,
          "128x128x64 -> " + std::to_string(ca) + " (built " + std::to_string(built) + "), 128x128x128 -> " +
              std::to_string(cb)};
}

// 3 -------------------------------------------------------------------------
Outcome spline_suite() {
  Rng rng(31);
  double identity = 0, constant = 0, endpoint = 0, oracle_err = 0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t d = 2 + rng.below(60);
    const Volume v = testutil::random_volume(3, 2, d, 100 + t, -1.0, 1.0);
    const Volume same = zoom_axis_cubic(v, d);
    for (std::size_t i = 0; i < v.tensor.size(); ++i) identity = std::max(identity, double(std::abs(same.tensor[i] - v.tensor[i])));
    const std::size_t n = 1 + rng.below(80);
    const float c = static_cast<float>(rng.uniform(-1000.0, 1000.0));
    const Volume k = zoom_axis_cubic(Volume(TensorF({2, 2, d}, c), VoxelUnits::HounsfieldUnits), n);
    for (float f : k.tensor.data()) constant = std::max(constant, std::abs(double(f) - c) / std::max(1.0, std::abs(double(c))));
    const std::size_t m = 2 + rng.below(80);
    const Volume z = zoom_axis_cubic(v, m);
    for (std::size_t x = 0; x < 3; ++x) {
      for (std::size_t y = 0; y < 2; ++y) {
        endpoint = std::max({endpoint, double(std::abs(z(x, y, 0) - v(x, y, 0))), double(std::abs(z(x, y, m - 1) - v(x, y, d - 1)))});
      }
    }
  }
  std::size_t lines = 0;
  for (; lines < 250; ++lines) {
    const std::size_t d = 2 + rng.below(14), n = 1 + rng.below(24);
    std::vector<double> line(d);
    for (auto& x : line) x = rng.uniform(-1.0, 1.0);
    const auto want = oracle::zoom(line, n);
    const SplineLine sl = prefilter_cubic(line);
    for (std::size_t o = 0; o < n; ++o) oracle_err = std::max(oracle_err, std::abs(eval_cubic(sl, zoom_coordinate(o, d, n)) - want[o]));
  }
  const bool ok = identity <= 1e-6 && constant <= 1e-6 && endpoint <= 1e-6 && oracle_err <= 1e-8;
  return {ok, "identity " + fmt("%.1e", identity) + ", constant " + fmt("%.1e", constant) + ", endpoints " +
                  fmt("%.1e", endpoint) + ", oracle " + fmt("%.1e", oracle_err) + " over " + std::to_string(lines) +
                  " lines"};
}

// 4 -------------------------------------------------------------------------
Outcome gradient_check() {
  nn::ModelConfig mc;
  mc.input = {46, 46, 46};
  mc.conv_filters = {2, 3, 4, 5};
  mc.fc_width = 8;
  mc.dropout = {0.0, 0.0};
  nn::Network<double> net(mc, 3);
  Rng r(5);
  TensorD x({2, 1, 46, 46, 46});
  for (auto& v : x.data()) v = r.normal();
  const TensorD y = nn::one_hot<double>(std::vector<int>{0, 1}, 2);
  auto loss = [&] { return nn::mae_loss(net.forward(x, nn::Mode::Train), y); };
  const auto base = loss();
  net.backward(base.grad);
  const auto sig = net.activation_signature();
  std::vector<TensorD> grads;
  for (const auto& p : net.parameters()) grads.push_back(p.grad);
  double worst = 0.0;
  std::size_t checked = 0, skipped = 0;
  for (std::size_t pi = 0; pi < net.parameters().size(); ++pi) {
    auto& p = net.parameters()[pi];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double h = 1e-4, w = p.value[k];
      p.value[k] = w + h;
      const double up = loss().loss;
      const bool s1 = net.activation_signature() == sig;
      p.value[k] = w - h;
      const double down = loss().loss;
      const bool s2 = net.activation_signature() == sig;
      p.value[k] = w;
      // A perturbation that flips a ReLU, pool argmax or similar branch makes
      // the central difference straddle a kink; such entries are skipped.
      if (!s1 || !s2) {
        ++skipped;
        continue;
      }
      const double fd = (up - down) / (2 * h), an = grads[pi][k];
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
      ++checked;
    }
  }
  const bool ok = worst < 1e-3 && checked >= net.trainable_count() / 2;
  return {ok, "46^3 input, filters 2,3,4,5, fc 8, double: max rel err " + fmt("%.2e", worst) + " over " +
                  std::to_string(checked) + " params (" + std::to_string(skipped) + " at kinks skipped)"};
}

// 5 -------------------------------------------------------------------------
Outcome metric_exactness() {
  Rng rng(55);
  std::size_t mismatches = 0;
  double trap = 0.0;
  for (int c = 0; c < 1000; ++c) {
    const std::size_t n = 2 + rng.below(80);
    std::vector<double> s(n);
    std::vector<int> l(n);
    do {
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = std::floor(rng.uniform(0.0, 12.0)) / 12.0;
        l[i] = rng.bernoulli(0.5);
      }
    } while (std::count(l.begin(), l.end(), 1) == 0 || std::count(l.begin(), l.end(), 0) == 0);
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (l[i] == 1 && l[j] == 0) {
          pairs += 1.0;
          wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        }
      }
    }
    const double a = eval::auc(s, l);
    mismatches += a != wins / pairs;
    trap = std::max(trap, std::abs(eval::trapezoid_auc(eval::roc_curve(s, l)) - a));
  }
  return {mismatches == 0 && trap <= 1e-12,
          std::to_string(mismatches) + " rank/brute mismatches in 1000 cases, max trapezoid gap " + fmt("%.1e", trap)};
}

// 6 -------------------------------------------------------------------------
PipelineConfig c6_config(Method m, std::uint64_t seed) {
  PipelineConfig c;
  c.uniform = {m, 64, 64, 64};
  c.normalize = true;
  c.zero_center = true;
  c.model.conv_filters = {4, 4, 8, 8};
  c.model.fc_width = 64;
  c.train.learning_rate = 0.003;
  c.train.momentum = 0.9;
  c.train.batch_size = 2;
  c.train.epochs = 8;
  c.train.seed = seed;
  return c;
}

Outcome information_loss() {
  std::vector<double> siz_auc, sss_auc;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    synth::SynthSpec spec;
    spec.count = 200;
    spec.depth_min = spec.depth_max = 300;
    spec.seed = seed;
    spec = synth::depth_localized_variant(spec);
    const PipelineConfig siz = c6_config(Method::Siz, seed), sss = c6_config(Method::Sss, seed);
    PreparedSet a, b;
    for (std::size_t i = 0; i < spec.count; ++i) {
      const synth::Sample s = synth::generate_one(spec, i);
      a.volumes.push_back(prepare_volume(s.volume, siz));
      b.volumes.push_back(prepare_volume(s.volume, sss));
      a.labels.push_back(s.label);
    }
    b.labels = a.labels;
    const eval::Split split = eval::draw_split(a.labels, 0.8, seed, 0);
    siz_auc.push_back(run_fold(a, split.train, split.test, siz).report.auc);
    sss_auc.push_back(run_fold(b, split.train, split.test, sss).report.auc);
    std::printf("      seed %llu: SIZ AUC %.3f, SSS AUC %.3f\n", static_cast<unsigned long long>(seed), siz_auc.back(),
                sss_auc.back());
    std::fflush(stdout);
  }
  const double ms = median(siz_auc), mq = median(sss_auc);
  return {ms >= 0.85 && mq <= 0.65, "median AUC SIZ " + fmt("%.3f", ms) + " [" + join(siz_auc) + "], SSS " +
                                        fmt("%.3f", mq) + " [" + join(sss_auc) + "]"};
}

// 7 -------------------------------------------------------------------------
Outcome learning_sanity() {
  std::vector<double> reached;
  std::size_t ok = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    // Negatives carry no lesions; positives carry enough to sit far above tau.
    synth::SynthSpec spec;
    spec.count = 60;
    spec.depth_min = 50;
    spec.depth_max = 150;
    spec.lesions_min = 6;
    spec.lesions_max = 8;
    spec.seed = 100 + seed;
    PipelineConfig cfg = c6_config(Method::Siz, seed);
    cfg.train.epochs = 1;
    PreparedSet set;
    std::size_t lowest_margin_ok = 0;
    for (std::size_t i = 0; i < spec.count; ++i) {
      const synth::Sample s = synth::generate_one(spec, i);
      lowest_margin_ok += s.label == 0 ? s.lesion_fraction == 0.0 : s.lesion_fraction > 2 * spec.tau;
      set.volumes.push_back(prepare_volume(s.volume, cfg));
      set.labels.push_back(s.label);
    }
    std::vector<std::size_t> all(set.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto stats = fit_fold_stats(set, all, cfg);
    const nn::Dataset data = training_data(set, all, stats);
    nn::ModelState st{nn::Network<float>(cfg.model_for_input(), nn::stream_seed(seed, nn::SeedStream::Init)),
                      nn::SgdMomentum<float>(cfg.train.learning_rate, cfg.train.momentum), seed, 0};
    double epoch_hit = 0;
    for (std::size_t e = 1; e <= 30; ++e) {
      nn::train_epochs(st, data, cfg.train);
      if (score(st.network, set, all, stats).acc >= 0.95) {
        epoch_hit = static_cast<double>(e);
        break;
      }
    }
    reached.push_back(epoch_hit);
    ok += epoch_hit > 0 && lowest_margin_ok == spec.count;
  }
  return {ok == 3, std::to_string(ok) + "/3 seeds reach train ACC >= 0.95; epochs needed [" + join(reached, "%.0f") +
                       "] (0 = not within 30)"};
}

// 8 -------------------------------------------------------------------------
int shell(const std::string& args) {
  const std::string cmd = std::string(U3D_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  const auto b = io::read_file(p);
  return std::string(b.begin(), b.end());
}

Outcome determinism() {
  const auto root = testutil::scratch_dir("acceptance_determinism");
  const auto data = root / "data";
  if (shell("synth --out " + data.string() + " --count 12 --plane 32x32 --depth-min 40 --depth-max 90 --seed 8") != 0) {
    return {false, "synth failed"};
  }
  const std::string m = (data / "manifest.csv").string();
  const std::string model = " --plane 32x32 --depth 32 --filters 2,2 --fc 8 --lr 0.003 --momentum 0.9 --epochs 2 ";
  std::vector<std::string> artifacts;
  const char* threads[] = {"1", "1", "4"};
  for (std::size_t k = 0; k < 3; ++k) {
    const auto dir = root / ("run" + std::to_string(k));
    fs::create_directories(dir);
    const std::string t = std::string(" --threads ") + threads[k];
    const std::string ck = (dir / "m.ckpt").string();
    if (shell("train --manifest " + m + " --out " + ck + model + "--normalize --zero-center --seed 5" + t) != 0 ||
        shell("eval --checkpoint " + ck + " --manifest " + m + " --out " + (dir / "eval").string() + t) != 0 ||
        shell("crossval --manifest " + m + " --out " + (dir / "cv.csv").string() + model + "--trials 2" + t) != 0) {
      return {false, "a command failed in run " + std::to_string(k)};
    }
    artifacts.push_back(slurp(ck) + slurp(ck + ".manifest") + slurp(ck + ".stats") + slurp(ck + ".history.csv") +
                        slurp(dir / "eval" / "scores.csv") + slurp(dir / "eval" / "roc.csv") +
                        slurp(dir / "eval" / "summary.txt") + slurp(dir / "cv.csv"));
  }
  const bool runs = artifacts[0] == artifacts[1], thr = artifacts[0] == artifacts[2];
  return {runs && thr, std::string("checkpoint, stats, history, scores, ROC, cross-val: runs ") +
                           (runs ? "identical" : "DIFFER") + ", --threads 1 vs 4 " + (thr ? "identical" : "DIFFER") +
                           " (" + std::to_string(artifacts[0].size()) + " bytes)"};
}

// 9 -------------------------------------------------------------------------
Outcome io_round_trips() {
  Rng rng(99);
  const auto dir = testutil::scratch_dir("acceptance_io");
  std::size_t nifti_ok = 0, vol_ok = 0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t w = 1 + rng.below(40), h = 1 + rng.below(40), d = 1 + rng.below(40);
    TensorF t({w, h, d});
    for (auto& v : t.data()) v = static_cast<float>(rng.normal() * 500.0);
    t[0] = -0.0f;
    const Volume vol(t, VoxelUnits::HounsfieldUnits, "rt");
    write_nifti_fixture(vol, dir / "v.nii", NiftiType::Float32);
    const Volume back = read_nifti(dir / "v.nii");
    nifti_ok += std::memcmp(back.tensor.data().data(), t.data().data(), t.size() * sizeof(float)) == 0 &&
                back.tensor.shape() == t.shape();
    // VOL1 also carries other ranks.
    const std::size_t rank = 1 + rng.below(4);
    Shape s;
    for (std::size_t k = 0; k < rank; ++k) s.push_back(1 + rng.below(12));
    TensorF u(s);
    for (auto& v : u.data()) v = static_cast<float>(rng.normal());
    write_vol1(dir / "v.vol1", u);
    const TensorF ub = read_vol1(dir / "v.vol1");
    vol_ok += ub.shape() == u.shape() && std::memcmp(ub.data().data(), u.data().data(), u.size() * sizeof(float)) == 0;
  }
  return {nifti_ok == 50 && vol_ok == 50,
          "bit-exact NIfTI " + std::to_string(nifti_ok) + "/50, VOL1 " + std::to_string(vol_ok) + "/50"};
}

// 10 ------------------------------------------------------------------------
Outcome padding_rule() {
  const Volume v = testutil::random_volume(7, 5, 47, 10);
  UniformizeSpec spec;
  spec.method = Method::Ess;
  spec.depth = 64;
  spec.width = 7;
  spec.height = 5;
  const Volume out = uniformize(v, spec).volume;
  bool ok = out.depth() == 64;
  std::size_t same = 0;
  for (std::size_t z = 47; ok && z < 64; ++z) {
    bool eq = true;
    for (std::size_t x = 0; x < 7; ++x)
      for (std::size_t y = 0; y < 5; ++y) eq = eq && out(x, y, z) == v(x, y, 46);
    same += eq;
  }
  for (std::size_t z = 0; ok && z < 47; ++z) ok = out(3, 2, z) == v(3, 2, z);
  ok = ok && same == 17;
  return {ok, "output depth " + std::to_string(out.depth()) + ", " + std::to_string(same) +
                  "/17 trailing planes equal plane 46"};
}

}  // namespace

int main() {
  set_num_threads(std::max(1u, std::thread::hardware_concurrency()));
  std::vector<Criterion> list = {
      {1, "parameter counts", 1.0, param_counts},
      {3, "spline properties", 10.0, spline_suite},
      {4, "gradient fidelity", 60.0, gradient_check},
      {5, "metric exactness", 0.0, metric_exactness},
      {6, "information loss SIZ vs SSS", 900.0, information_loss},
      {7, "learning sanity", 600.0, learning_sanity},
      {8, "determinism", 0.0, determinism},
      {9, "I/O round trips", 5.0, io_round_trips},
      {10, "ESS padding", 0.0, padding_rule},
  };
  std::vector<std::string> lines(11);
  bool substitutes_pass = true;
  std::size_t failed = 0;
  for (auto& c : list) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string timing = fmt("%.2f s", s);
    if (c.budget_s > 0) {
      timing += fmt(" of %.0f s", c.budget_s);
      if (s >= c.budget_s) {
        o.pass = false;
        o.detail += "; over time budget";
      }
    }
    if (c.id >= 3 && c.id <= 8) substitutes_pass = substitutes_pass && o.pass;
    failed += !o.pass;
    lines[c.id] = std::string(o.pass ? "PASS" : "FAIL") + "  C" + std::to_string(c.id) + " " + c.title + ": " +
                  o.detail + " (" + timing + ")";
    std::printf("%s\n", lines[c.id].c_str());
    std::fflush(stdout);
  }
  lines[2] = std::string(substitutes_pass ? "PASS" : "FAIL") +
             "  C2 benchmark tables: restricted CT data unavailable, substituted by C3-C8 (" +
             (substitutes_pass ? "all pass" : "not all pass") + ")";
  failed += !substitutes_pass;
  std::printf("\n");
  for (std::size_t i = 1; i <= 10; ++i) std::printf("%s\n", lines[i].c_str());
  std::printf("%zu of 10 criteria failed\n", failed);
  return failed ? 1 : 0;
}
