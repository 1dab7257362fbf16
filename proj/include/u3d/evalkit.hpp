#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "u3d/errors.hpp"
#include "u3d/kv.hpp"
#include "u3d/random.hpp"

namespace u3d::eval {

struct SampleScore {
  std::string id;
  double score = 0.0;  ///< probability of the positive class
  int label = 0;
};

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

struct EvalReport {
  std::vector<SampleScore> samples;
  double auc = 0.0;
  double acc = 0.0;
  std::vector<RocPoint> roc;
};

namespace detail {
inline void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DomainError("scores and labels differ in length");
  if (scores.empty()) throw EmptyInputError("no samples to evaluate");
  for (int l : labels) {
    if (l != 0 && l != 1) throw DomainError("labels must be 0 or 1");
  }
}

inline std::pair<std::size_t, std::size_t> class_counts(std::span<const int> labels) {
  std::size_t pos = 0;
  for (int l : labels) pos += l == 1;
  return {pos, labels.size() - pos};
}
}  // namespace detail

/// Mann-Whitney AUC: P(score_pos > score_neg) with ties counted half.
inline double auc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_inputs(scores, labels);
  const auto [P, N] = detail::class_counts(labels);
  if (P == 0 || N == 0) throw DegenerateLabelsError("AUC needs both positive and negative samples");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the 1-based midrank, kept integral so the rank sum is exact.
  std::uint64_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t twice_mid = (i + 1) + j;  // 2 * (first + last) / 2 ranks
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) twice_rank_sum += twice_mid;
    }
    i = j;
  }
  const std::uint64_t twice_u = twice_rank_sum - static_cast<std::uint64_t>(P) * (P + 1);
  return static_cast<double>(twice_u) / 2.0 / (static_cast<double>(P) * static_cast<double>(N));
}

/// Fraction of samples with (score >= threshold) == label.
inline double accuracy(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5) {
  detail::check_inputs(scores, labels);
  std::size_t right = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) right += (scores[i] >= threshold ? 1 : 0) == labels[i];
  return static_cast<double>(right) / static_cast<double>(scores.size());
}

/// Threshold sweep, predicting positive when score >= threshold. Rows: +inf,
/// each distinct score in decreasing order, then -inf.
inline std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  detail::check_inputs(scores, labels);
  const auto [P, N] = detail::class_counts(labels);
  if (P == 0 || N == 0) throw DegenerateLabelsError("ROC needs both positive and negative samples");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<RocPoint> roc{{inf, 0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      (labels[order[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    roc.push_back({s, static_cast<double>(fp) / static_cast<double>(N), static_cast<double>(tp) / static_cast<double>(P)});
  }
  roc.push_back({-inf, 1.0, 1.0});
  return roc;
}

inline double trapezoid_auc(std::span<const RocPoint> roc) {
  double area = 0.0;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) / 2.0;
  }
  return area;
}

inline EvalReport make_report(std::vector<SampleScore> samples) {
  if (samples.empty()) throw EmptyInputError("empty evaluation set");
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& s : samples) {
    scores.push_back(s.score);
    labels.push_back(s.label);
  }
  EvalReport r;
  r.acc = accuracy(scores, labels);
  const auto [P, N] = detail::class_counts(labels);
  if (P > 0 && N > 0) {
    r.auc = auc(scores, labels);
    r.roc = roc_curve(scores, labels);
  } else {
    r.auc = std::numeric_limits<double>::quiet_NaN();
  }
  r.samples = std::move(samples);
  return r;
}

inline void export_roc(const EvalReport& report, const std::filesystem::path& path) {
  if (report.samples.empty() || report.roc.empty()) throw EmptyInputError("no ROC points to export");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "threshold,fpr,tpr\n";
  for (const auto& p : report.roc) {
    out << format_number(p.threshold) << ',' << format_number(p.fpr) << ',' << format_number(p.tpr) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::vector<RocPoint> import_roc(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "threshold,fpr,tpr") throw FormatError("ROC CSV header mismatch");
  std::vector<RocPoint> roc;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) throw FormatError("bad ROC row: " + line);
    roc.push_back({parse_number<double>(std::string_view(line).substr(0, c1)),
                   parse_number<double>(std::string_view(line).substr(c1 + 1, c2 - c1 - 1)),
                   parse_number<double>(std::string_view(line).substr(c2 + 1))});
  }
  return roc;
}

/// Per-sample scores as CSV: id,score,label.
inline void export_scores(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "id,score,label\n";
  for (const auto& s : report.samples) out << s.id << ',' << format_number(s.score) << ',' << s.label << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Repeated random train/test splits

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::size_t redraws = 0;
};

struct TrialResult {
  std::size_t trial = 0;
  Split split;
  EvalReport report;
};

struct CrossValResult {
  std::vector<TrialResult> trials;
  double mean_acc = 0.0, std_acc = 0.0;
  double mean_auc = 0.0, std_auc = 0.0;
};

inline std::size_t train_count(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

/// Seeded shuffle, first floor(fraction * n) indices train, the rest test.
/// Splits where either side lacks a class are redrawn from the same stream.
inline Split draw_split(std::span<const int> labels, double fraction, std::uint64_t seed, std::size_t trial,
                        std::size_t max_redraws = 100) {
  const std::size_t n = labels.size();
  if (n < 5) throw DomainError("cross-validation needs at least 5 samples");
  if (!(fraction > 0.0 && fraction < 1.0)) throw DomainError("split fraction must be in (0, 1)");
  const auto [P, N] = detail::class_counts(labels);
  if (P == 0 || N == 0) throw DegenerateLabelsError("cross-validation needs both classes");
  const std::size_t n_train = train_count(n, fraction);
  if (n_train == 0 || n_train == n) throw DomainError("split leaves an empty fold");
  Rng rng(derive_seed(seed, trial));
  std::vector<std::size_t> order(n);
  for (std::size_t attempt = 0; attempt <= max_redraws; ++attempt) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    Split s;
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    s.redraws = attempt;
    auto both = [&](const std::vector<std::size_t>& fold) {
      bool pos = false, neg = false;
      for (auto i : fold) (labels[i] == 1 ? pos : neg) = true;
      return pos && neg;
    };
    if (both(s.train) && both(s.test)) return s;
  }
  throw DegenerateLabelsError("no split with both classes in each fold after " + std::to_string(max_redraws) +
                              " redraws");
}

namespace detail {
inline std::pair<double, double> mean_pop_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}
}  // namespace detail

/// Runs `trials` independent splits. `run(trial, split)` trains on
/// split.train and returns the report for split.test; any per-fold
/// statistics must be fitted inside it on the train indices only.
template <typename Runner>
CrossValResult cross_validate(std::span<const int> labels, Runner&& run, std::size_t trials = 10,
                              double fraction = 0.8, std::uint64_t seed = 0) {
  if (trials == 0) throw DomainError("at least one trial is required");
  CrossValResult r;
  std::vector<double> accs, aucs;
  for (std::size_t t = 0; t < trials; ++t) {
    TrialResult tr{t, draw_split(labels, fraction, seed, t), {}};
    tr.report = run(t, tr.split);
    accs.push_back(tr.report.acc);
    aucs.push_back(tr.report.auc);
    r.trials.push_back(std::move(tr));
  }
  std::tie(r.mean_acc, r.std_acc) = detail::mean_pop_std(accs);
  std::tie(r.mean_auc, r.std_auc) = detail::mean_pop_std(aucs);
  return r;
}

inline void export_crossval(const CrossValResult& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "trial,acc,auc\n";
  for (const auto& t : r.trials) {
    out << t.trial << ',' << format_number(t.report.acc) << ',' << format_number(t.report.auc) << '\n';
  }
  out << "mean," << format_number(r.mean_acc) << ',' << format_number(r.mean_auc) << '\n';
  out << "std," << format_number(r.std_acc) << ',' << format_number(r.std_auc) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace u3d::eval
