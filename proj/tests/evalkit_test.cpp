#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "test_util.hpp"
#include "u3d/errors.hpp"
#include "u3d/evalkit.hpp"
#include "u3d/random.hpp"
#include "u3d/volume_io.hpp"

using namespace u3d;
using namespace u3d::eval;

namespace {

double brute_auc(const std::vector<double>& s, const std::vector<int>& l) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (l[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (l[j] != 0) continue;
      ++pairs;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return wins / static_cast<double>(pairs);
}

// Scores quantized to a coarse grid so ties are common.
void random_case(Rng& rng, std::size_t n, std::vector<double>& s, std::vector<int>& l) {
  s.assign(n, 0.0);
  l.assign(n, 0);
  do {
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::floor(rng.uniform(0.0, 10.0)) / 10.0;
      l[i] = rng.uniform(0.0, 1.0) < 0.5 ? 1 : 0;
    }
  } while (std::count(l.begin(), l.end(), 1) == 0 || std::count(l.begin(), l.end(), 0) == 0);
}

std::vector<SampleScore> samples(const std::vector<double>& s, const std::vector<int>& l) {
  std::vector<SampleScore> out;
  for (std::size_t i = 0; i < s.size(); ++i) out.push_back({"s" + std::to_string(i), s[i], l[i]});
  return out;
}

}  // namespace

TEST(Auc, PerfectSeparation) {
  EXPECT_EQ(auc(std::vector<double>{0.9, 0.8, 0.3, 0.2}, std::vector<int>{1, 1, 0, 0}), 1.0);
}

TEST(Auc, AllTiesIsHalf) { EXPECT_EQ(auc(std::vector<double>(6, 0.4), std::vector<int>{1, 0, 1, 0, 0, 1}), 0.5); }

TEST(Auc, TwentySampleCaseMatchesPairCount) {
  Rng rng(1);
  std::vector<double> s;
  std::vector<int> l;
  random_case(rng, 20, s, l);
  EXPECT_EQ(auc(s, l), brute_auc(s, l));
}

TEST(Auc, ThousandCasesExactAndTrapezoid) {
  Rng rng(2);
  std::vector<double> s;
  std::vector<int> l;
  for (int c = 0; c < 1000; ++c) {
    random_case(rng, 2 + c % 60, s, l);
    const double a = auc(s, l);
    ASSERT_EQ(a, brute_auc(s, l)) << "case " << c;
    ASSERT_NEAR(trapezoid_auc(roc_curve(s, l)), a, 1e-12) << "case " << c;
  }
}

TEST(Auc, MonotoneInvariance) {
  Rng rng(3);
  std::vector<double> s;
  std::vector<int> l;
  for (int c = 0; c < 50; ++c) {
    random_case(rng, 30, s, l);
    std::vector<double> t;
    for (double v : s) t.push_back(std::exp(3.0 * v) - 7.0);
    EXPECT_EQ(auc(s, l), auc(t, l));
  }
}

TEST(Auc, FlippedLabelsComplement) {
  Rng rng(4);
  std::vector<double> s;
  std::vector<int> l;
  for (int c = 0; c < 200; ++c) {
    random_case(rng, 25, s, l);
    std::vector<int> f;
    for (int v : l) f.push_back(1 - v);
    EXPECT_EQ(auc(s, l) + auc(s, f), 1.0);
  }
}

TEST(Auc, Rejections) {
  EXPECT_THROW(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), DegenerateLabelsError);
  EXPECT_THROW(auc(std::vector<double>{0.1}, std::vector<int>{1, 0}), DomainError);
  EXPECT_THROW(auc(std::vector<double>{}, std::vector<int>{}), EmptyInputError);
  EXPECT_THROW(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 2}), DomainError);
}

TEST(Accuracy, Examples) {
  const std::vector<int> l{1, 0, 1, 0};
  EXPECT_EQ(accuracy(std::vector<double>{0.9, 0.1, 0.8, 0.2}, l), 1.0);
  EXPECT_EQ(accuracy(std::vector<double>{0.1, 0.9, 0.2, 0.8}, l), 0.0);
  EXPECT_EQ(accuracy(std::vector<double>{0.9, 0.1, 0.8, 0.7}, l), 0.75);
  EXPECT_EQ(accuracy(std::vector<double>{0.5}, std::vector<int>{1}), 1.0);
  EXPECT_EQ(accuracy(std::vector<double>{0.5}, std::vector<int>{1}, 0.6), 0.0);
}

TEST(Roc, MonotoneWithEndpoints) {
  Rng rng(5);
  std::vector<double> s;
  std::vector<int> l;
  random_case(rng, 40, s, l);
  const auto roc = roc_curve(s, l);
  EXPECT_EQ(roc.front().fpr, 0.0);
  EXPECT_EQ(roc.front().tpr, 0.0);
  EXPECT_EQ(roc.back().fpr, 1.0);
  EXPECT_EQ(roc.back().tpr, 1.0);
  EXPECT_TRUE(std::isinf(roc.front().threshold) && roc.front().threshold > 0);
  EXPECT_TRUE(std::isinf(roc.back().threshold) && roc.back().threshold < 0);
  for (std::size_t i = 1; i < roc.size(); ++i) {
    EXPECT_GE(roc[i].fpr, roc[i - 1].fpr);
    EXPECT_GE(roc[i].tpr, roc[i - 1].tpr);
    EXPECT_LT(roc[i].threshold, roc[i - 1].threshold);
  }
  const std::set<double> distinct(s.begin(), s.end());
  EXPECT_EQ(roc.size(), distinct.size() + 2);
}

TEST(Roc, TwoSamplePerfectHasFourRows) {
  const auto report = make_report(samples({0.8, 0.3}, {1, 0}));
  const auto dir = testutil::scratch_dir("roc_two");
  export_roc(report, dir / "roc.csv");
  const auto back = import_roc(dir / "roc.csv");
  ASSERT_EQ(back.size(), 4u);
  EXPECT_EQ(back.front().fpr, 0.0);
  EXPECT_EQ(back.front().tpr, 0.0);
  EXPECT_EQ(back[1].fpr, 0.0);
  EXPECT_EQ(back[1].tpr, 1.0);
  EXPECT_EQ(back.back().fpr, 1.0);
  EXPECT_EQ(back.back().tpr, 1.0);
}

TEST(Roc, ExportImportReproducesAuc) {
  Rng rng(6);
  std::vector<double> s;
  std::vector<int> l;
  for (int c = 0; c < 20; ++c) {
    random_case(rng, 50, s, l);
    for (auto& v : s) v += rng.uniform(0.0, 1e-3);
    const auto report = make_report(samples(s, l));
    const auto dir = testutil::scratch_dir("roc_rt");
    export_roc(report, dir / "roc.csv");
    EXPECT_NEAR(trapezoid_auc(import_roc(dir / "roc.csv")), report.auc, 1e-9);
  }
}

TEST(Roc, EmptyReportRefused) {
  EXPECT_THROW(export_roc(EvalReport{}, testutil::scratch_dir("roc_empty") / "r.csv"), EmptyInputError);
  EXPECT_THROW(make_report({}), EmptyInputError);
}

TEST(Report, SingleClassHasNoAuc) {
  const auto r = make_report(samples({0.7, 0.2}, {1, 1}));
  EXPECT_TRUE(std::isnan(r.auc));
  EXPECT_EQ(r.acc, 0.5);
  EXPECT_TRUE(r.roc.empty());
}

TEST(Split, PaperSizedFolds) {
  std::vector<int> labels(218);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 3 == 0;
  const Split s = draw_split(labels, 0.8, 7, 0);
  EXPECT_EQ(s.train.size(), 174u);
  EXPECT_EQ(s.test.size(), 44u);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.test.begin(), s.test.end());
  EXPECT_EQ(all.size(), 218u);
}

TEST(Split, SeedsGiveDifferentFolds) {
  std::vector<int> labels(50);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 2;
  const Split a = draw_split(labels, 0.8, 1, 0), b = draw_split(labels, 0.8, 2, 0);
  EXPECT_NE(std::set<std::size_t>(a.test.begin(), a.test.end()), std::set<std::size_t>(b.test.begin(), b.test.end()));
  const Split a2 = draw_split(labels, 0.8, 1, 0);
  EXPECT_EQ(a.train, a2.train);
  EXPECT_EQ(a.test, a2.test);
  EXPECT_NE(draw_split(labels, 0.8, 1, 1).test, a.test);
}

TEST(Split, RedrawsUntilBothClassesPresent) {
  // One positive among ten: a test fold of two usually lacks it.
  std::vector<int> labels(10, 0);
  labels[3] = 1;
  labels[7] = 1;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Split s = draw_split(labels, 0.8, seed, 0);
    int pos_test = 0, pos_train = 0;
    for (auto i : s.test) pos_test += labels[i];
    for (auto i : s.train) pos_train += labels[i];
    EXPECT_EQ(pos_test, 1);
    EXPECT_EQ(pos_train, 1);
  }
  std::vector<int> hopeless(10, 0);
  hopeless[0] = 1;
  EXPECT_THROW(draw_split(hopeless, 0.8, 0, 0), DegenerateLabelsError);
}

TEST(Split, Rejections) {
  EXPECT_THROW(draw_split(std::vector<int>{0, 1, 0, 1}, 0.8, 0, 0), DomainError);
  EXPECT_THROW(draw_split(std::vector<int>{0, 0, 0, 0, 0}, 0.8, 0, 0), DegenerateLabelsError);
  EXPECT_THROW(draw_split(std::vector<int>{0, 1, 0, 1, 0}, 1.0, 0, 0), DomainError);
}

TEST(CrossVal, SingleTrialHasZeroStd) {
  std::vector<int> labels(20);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 2;
  auto stub = [&](std::size_t, const Split& sp) {
    std::vector<SampleScore> s;
    for (auto i : sp.test) s.push_back({std::to_string(i), i % 4 == 1 ? 0.9 : 0.1, labels[i]});
    return make_report(s);
  };
  const auto r = cross_validate(labels, stub, 1, 0.8, 3);
  ASSERT_EQ(r.trials.size(), 1u);
  EXPECT_EQ(r.mean_acc, r.trials[0].report.acc);
  EXPECT_EQ(r.std_acc, 0.0);
  EXPECT_EQ(r.std_auc, 0.0);
}

TEST(CrossVal, ReproducibleAndPopulationStd) {
  std::vector<int> labels(30);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 3 == 0;
  auto stub = [&](std::size_t t, const Split& sp) {
    std::vector<SampleScore> s;
    for (auto i : sp.test) s.push_back({std::to_string(i), std::fmod(0.37 * static_cast<double>(i + t), 1.0), labels[i]});
    return make_report(s);
  };
  const auto a = cross_validate(labels, stub, 10, 0.8, 11);
  const auto b = cross_validate(labels, stub, 10, 0.8, 11);
  ASSERT_EQ(a.trials.size(), 10u);
  double mean = 0.0, var = 0.0;
  for (std::size_t t = 0; t < 10; ++t) {
    EXPECT_EQ(a.trials[t].split.test, b.trials[t].split.test);
    EXPECT_EQ(a.trials[t].report.acc, b.trials[t].report.acc);
    EXPECT_EQ(a.trials[t].split.test.size(), 6u);
    mean += a.trials[t].report.acc / 10.0;
  }
  for (const auto& t : a.trials) var += (t.report.acc - mean) * (t.report.acc - mean) / 10.0;
  EXPECT_NEAR(a.mean_acc, mean, 1e-12);
  EXPECT_NEAR(a.std_acc, std::sqrt(var), 1e-12);
  EXPECT_THROW(cross_validate(labels, stub, 0, 0.8, 11), DomainError);
}

TEST(CrossVal, ExportTable) {
  std::vector<int> labels(10);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 2;
  auto stub = [&](std::size_t, const Split& sp) {
    std::vector<SampleScore> s;
    for (auto i : sp.test) s.push_back({std::to_string(i), labels[i] ? 0.8 : 0.2, labels[i]});
    return make_report(s);
  };
  const auto dir = testutil::scratch_dir("cv_table");
  export_crossval(cross_validate(labels, stub, 3, 0.8, 1), dir / "cv.csv");
  const auto bytes = io::read_file(dir / "cv.csv");
  const std::string text(bytes.begin(), bytes.end());
  EXPECT_EQ(text.rfind("trial,acc,auc\n0,1,1\n1,1,1\n2,1,1\nmean,1,1\nstd,0,0\n", 0), 0u) << text;
}
