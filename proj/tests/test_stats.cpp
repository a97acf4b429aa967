#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "sleeprad/error.hpp"
#include "sleeprad/stats.hpp"

using namespace sleeprad;
using stats::Pair;

namespace {

std::vector<Pair> pairs_of(std::initializer_list<std::pair<double, double>> values) {
  std::vector<Pair> out;
  int i = 0;
  for (auto [a, b] : values) out.push_back({"s" + std::to_string(i++), a, b});
  return out;
}

std::vector<Pair> swapped(std::vector<Pair> p) {
  for (auto& x : p) std::swap(x.a, x.b);
  return p;
}

stats::ConfusionMatrix matrix(std::initializer_list<std::initializer_list<std::size_t>> rows) {
  stats::ConfusionMatrix cm(rows.size());
  std::size_t r = 0;
  for (const auto& row : rows) {
    std::size_t c = 0;
    for (std::size_t v : row) cm.at(r, c++) = v;
    ++r;
  }
  return cm;
}

}  // namespace

TEST_CASE("ICC(A,1)") {
  SUBCASE("identical raters") {
    const auto r = stats::icc_a1(pairs_of({{1, 1}, {4, 4}, {9, 9}, {2, 2}}));
    CHECK(r.value == doctest::Approx(1.0));
    CHECK(r.ci.lower <= 1.0);
    CHECK(r.ci.upper == doctest::Approx(1.0));
  }
  SUBCASE("hand-computed ANOVA") {
    // MSR 2, MSC 1.5, MSE 0 -> 2 / (2 + (2/3) * 1.5)
    const auto r = stats::icc_a1(pairs_of({{1, 2}, {2, 3}, {3, 4}}));
    CHECK(r.ms_rows == doctest::Approx(2.0));
    CHECK(r.ms_cols == doctest::Approx(1.5));
    CHECK(r.ms_error == doctest::Approx(0.0));
    CHECK(r.value == doctest::Approx(2.0 / 3.0));
  }
  SUBCASE("a constant offset is penalized") {
    const auto r = stats::icc_a1(pairs_of({{0, 10}, {0.5, 10.5}, {1, 11}, {0.2, 10.2}, {0.8, 10.8}}));
    CHECK(r.value < 0.5);
  }
  SUBCASE("symmetric in the raters with an ordered interval") {
    const auto p = pairs_of({{3, 2.5}, {7, 8}, {1, 1.5}, {12, 10}, {5, 5.5}, {9, 9.5}});
    const auto r = stats::icc_a1(p);
    CHECK(stats::icc_a1(swapped(p)).value == doctest::Approx(r.value));
    CHECK(r.ci.lower <= r.value);
    CHECK(r.value <= r.ci.upper);
    const auto boot = stats::icc_bootstrap_ci(p, 3, 500);
    CHECK(boot.lower <= boot.upper);
    CHECK(boot.lower == stats::icc_bootstrap_ci(p, 3, 500).lower);
  }
  SUBCASE("bad input") {
    CHECK_THROWS_AS(stats::icc_a1(pairs_of({{1, 2}})), DataError);
    CHECK_THROWS_AS(stats::icc_a1(pairs_of({{1, 2}, {NAN, 3}})), DataError);
  }
}

TEST_CASE("Bland-Altman limits") {
  const auto flat = stats::bland_altman(pairs_of({{1, 2}, {3, 4}}));
  CHECK(flat.bias == doctest::Approx(-1.0));
  CHECK(flat.sd == doctest::Approx(0.0));
  CHECK(flat.loa_low == doctest::Approx(-1.0));
  CHECK(flat.loa_high == doctest::Approx(-1.0));

  const auto p = pairs_of({{3, 2}, {5, 6.5}, {1, 1}, {8, 6}, {4, 4.5}});
  const auto ba = stats::bland_altman(p);
  CHECK((ba.loa_low + ba.loa_high) / 2 == doctest::Approx(ba.bias).epsilon(1e-12));
  CHECK(ba.loa_high - ba.bias == doctest::Approx(1.96 * ba.sd));
  CHECK(ba.fraction_within == doctest::Approx(1.0));
  const auto rev = stats::bland_altman(swapped(p));
  CHECK(rev.bias == doctest::Approx(-ba.bias));
  CHECK(rev.loa_low == doctest::Approx(-ba.loa_high));
}

TEST_CASE("proportion intervals") {
  SUBCASE("Wald reproduces the published rows") {
    const auto a = stats::proportion_interval(0.818, 175);
    CHECK(100 * a.lower == doctest::Approx(76.1).epsilon(0.001));
    CHECK(100 * a.upper == doctest::Approx(87.5).epsilon(0.001));
    const auto b = stats::proportion_interval(0.905, 106);
    CHECK(100 * b.lower == doctest::Approx(84.9).epsilon(0.001));
    CHECK(100 * b.upper == doctest::Approx(96.1).epsilon(0.001));
    const auto c = stats::proportion_interval(0.897, 39);
    CHECK(100 * c.lower == doctest::Approx(80.2).epsilon(0.001));
    CHECK(100 * c.upper == doctest::Approx(99.3).epsilon(0.001));
  }
  SUBCASE("clamping") {
    const auto all = stats::proportion_interval(1.0, 5);
    CHECK(all.upper == 1.0);
    CHECK(stats::proportion_interval(0.02, 10).lower == 0.0);
  }
  SUBCASE("Wilson") {
    const auto w = stats::proportion_interval(0.5, 10, stats::CiMethod::Wilson);
    CHECK(w.lower == doctest::Approx(0.2366).epsilon(1e-3));
    CHECK(w.upper == doctest::Approx(0.7634).epsilon(1e-3));
    const auto z = stats::proportion_interval(0.0, 20, stats::CiMethod::Wilson);
    CHECK(z.lower == doctest::Approx(0.0));
    CHECK(z.upper == doctest::Approx(0.1611).epsilon(1e-3));
  }
  SUBCASE("sensitivity and specificity from counts") {
    const auto s = stats::sens_spec_ci(45, 5, 30, 10);
    CHECK(s.sensitivity.value == doctest::Approx(0.9));
    CHECK(s.sensitivity.n == 50);
    CHECK(s.specificity.value == doctest::Approx(0.75));
    CHECK(s.specificity.ci.lower < 0.75);
  }
}

TEST_CASE("ROC and AUC") {
  SUBCASE("perfect separation") {
    const std::vector<double> s = {0.1, 0.2, 0.3, 0.7, 0.8, 0.9};
    const std::vector<std::uint8_t> y = {0, 0, 0, 1, 1, 1};
    const auto r = stats::roc_auc(s, y);
    CHECK(r.auc == doctest::Approx(1.0));
    CHECK(r.curve.front().fpr == 0.0);
    CHECK(r.curve.front().tpr == 0.0);
    CHECK(r.curve.back().fpr == 1.0);
    CHECK(r.curve.back().tpr == 1.0);
  }
  SUBCASE("all ties") {
    const std::vector<double> s(6, 0.4);
    const std::vector<std::uint8_t> y = {0, 1, 0, 1, 0, 1};
    CHECK(stats::roc_auc(s, y).auc == doctest::Approx(0.5));
  }
  SUBCASE("pair enumeration") {
    // Positives {0.8, 0.4, 0.6}, negatives {0.5, 0.4, 0.1}: 7.5 of 9 pairs ordered.
    const std::vector<double> s = {0.8, 0.5, 0.4, 0.4, 0.6, 0.1};
    const std::vector<std::uint8_t> y = {1, 0, 1, 0, 1, 0};
    const auto r = stats::roc_auc(s, y);
    CHECK(r.auc == doctest::Approx(7.5 / 9.0));
    CHECK(r.ci.lower <= r.auc);
    CHECK(r.auc <= r.ci.upper);
  }
  SUBCASE("negated scores complement the area") {
    const std::vector<double> s = {0.3, 0.9, 0.1, 0.75, 0.6, 0.2, 0.55};
    const std::vector<double> neg = {-0.3, -0.9, -0.1, -0.75, -0.6, -0.2, -0.55};
    const std::vector<std::uint8_t> y = {0, 1, 0, 0, 1, 1, 1};
    CHECK(stats::roc_auc(s, y).auc + stats::roc_auc(neg, y).auc == doctest::Approx(1.0));
  }
  SUBCASE("one class only") {
    const std::vector<double> s = {0.1, 0.2};
    const std::vector<std::uint8_t> y = {1, 1};
    CHECK_THROWS_AS(stats::roc_auc(s, y), DataError);
  }
}

TEST_CASE("confusion metrics and macro means") {
  stats::ConfusionMatrix eye(3);
  for (std::size_t c = 0; c < 3; ++c) eye.at(c, c) = 10;
  CHECK(stats::confusion_metrics(eye).accuracy == doctest::Approx(1.0));

  const auto m = stats::confusion_metrics(matrix({{45, 5}, {5, 45}}));
  CHECK(m.accuracy == doctest::Approx(0.9));
  CHECK(m.recall[0] == doctest::Approx(0.9));
  CHECK(m.recall[1] == doctest::Approx(0.9));
  CHECK(m.macro_precision == doctest::Approx(0.9));

  const auto gap = stats::confusion_metrics(matrix({{8, 2, 0}, {1, 9, 0}, {0, 0, 0}}));
  CHECK(std::isnan(gap.recall[2]));
  CHECK(gap.macro_recall == doctest::Approx((0.8 + 0.9) / 2));

  const std::vector<double> published = {88.9, 96.7};
  CHECK(std::round(10 * stats::macro_mean(published)) / 10 == doctest::Approx(92.8));

  auto sum = matrix({{1, 0}, {0, 1}});
  sum += matrix({{2, 1}, {0, 3}});
  CHECK(sum.total() == 8);
  CHECK(sum.at(0, 0) == 3);
}

TEST_CASE("Cohen's kappa") {
  CHECK(stats::cohen_kappa(matrix({{10, 0, 0}, {0, 4, 0}, {0, 0, 7}})) == doctest::Approx(1.0));
  CHECK(stats::cohen_kappa(matrix({{45, 5}, {5, 45}})) == doctest::Approx(0.8));
  CHECK(stats::cohen_kappa(matrix({{50, 0}, {50, 0}})) == doctest::Approx(0.0));
  // Rows proportional to the column marginals.
  CHECK(stats::cohen_kappa(matrix({{6, 4}, {12, 8}})) == doctest::Approx(0.0));
  CHECK_THROWS_AS(stats::cohen_kappa(stats::ConfusionMatrix(2)), DataError);
}

TEST_CASE("grouped k-fold assignment") {
  SUBCASE("eight subjects into four folds") {
    std::vector<std::string> ids;
    std::vector<int> labels;
    for (int i = 0; i < 8; ++i) {
      ids.push_back("s" + std::to_string(i));
      labels.push_back(i % 2);
    }
    const auto folds = stats::grouped_kfold(ids, labels, 4, 1);
    std::map<std::size_t, int> sizes;
    for (auto f : folds) ++sizes[f];
    CHECK(sizes.size() == 4);
    for (auto [f, n] : sizes) CHECK(n == 2);
    CHECK(folds == stats::grouped_kfold(ids, labels, 4, 1));
    CHECK_THROWS_AS(stats::grouped_kfold(ids, labels, 1, 1), ConfigError);
    CHECK_THROWS_AS(stats::grouped_kfold(ids, labels, 9, 1), ConfigError);
  }
  SUBCASE("repeated rows of a subject stay together") {
    const std::vector<std::string> ids = {"a", "b", "a", "c", "d", "b"};
    const std::vector<int> labels = {0, 1, 0, 1, 0, 1};
    const auto folds = stats::grouped_kfold(ids, labels, 2, 5);
    CHECK(folds[0] == folds[2]);
    CHECK(folds[1] == folds[5]);
  }
  SUBCASE("stratification over the clinical class sizes") {
    std::vector<std::string> ids;
    std::vector<int> labels;
    const int sizes[] = {106, 105, 31, 39};
    for (int c = 0; c < 4; ++c) {
      for (int i = 0; i < sizes[c]; ++i) {
        ids.push_back("c" + std::to_string(c) + "_" + std::to_string(i));
        labels.push_back(c);
      }
    }
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto folds = stats::grouped_kfold(ids, labels, 4, seed);
      std::array<int, 4> severe{}, total{};
      for (std::size_t i = 0; i < folds.size(); ++i) {
        ++total[folds[i]];
        severe[folds[i]] += labels[i] >= 2;
      }
      for (int f = 0; f < 4; ++f) {
        CHECK(severe[f] >= 7);
        CHECK(std::abs(total[f] - 281 / 4) <= 1);
      }
    }
  }
}

TEST_CASE("descriptive summary") {
  const std::vector<double> five = {4, 1, 5, 2, 3};
  const auto s = stats::describe(five);
  CHECK(s.median == 3.0);
  CHECK(s.p25 == 2.0);
  CHECK(s.p75 == 4.0);
  CHECK(s.mean == 3.0);
  CHECK(s.sd == doctest::Approx(std::sqrt(2.5)));

  const std::vector<double> one = {7.5};
  const auto t = stats::describe(one);
  CHECK(t.median == 7.5);
  CHECK(t.p25 == 7.5);
  CHECK(t.p75 == 7.5);
  CHECK_THROWS_AS(stats::describe({}), EmptyInputError);
}
