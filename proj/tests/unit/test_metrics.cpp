#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "d2l/metrics/metrics.hpp"

using namespace d2l;

namespace {

AccuracyMatrix two_tasks(double a, double b) {
  AccuracyMatrix m(2);
  m.at(1, 2) = a;
  m.at(2, 2) = b;
  m.at(2, 1) = 0.1;
  return m;
}

}  // namespace

TEST(Faa, PerfectIsOne) {
  AccuracyMatrix m(3);
  for (std::size_t i = 1; i <= 3; ++i) m.at(i, 3) = 1.0;
  const std::vector<std::size_t> n = {40, 10, 10};
  EXPECT_DOUBLE_EQ(faa(m, n), 1.0);
}

TEST(Faa, EqualTasksAverage) {
  const std::vector<std::size_t> n = {20, 20};
  EXPECT_NEAR(faa(two_tasks(0.5, 0.3), n), 0.4, 1e-15);
}

TEST(Faa, UnionEqualsWeightedMean) {
  // Per-sample correctness flags; FAA from per-task accuracies must equal the union count.
  Rng rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t T = 2 + rng.below(5);
    AccuracyMatrix m(T);
    std::vector<std::size_t> n(T);
    std::size_t correct = 0, total = 0;
    for (std::size_t i = 1; i <= T; ++i) {
      n[i - 1] = 1 + rng.below(200);
      std::size_t c = 0;
      for (std::size_t k = 0; k < n[i - 1]; ++k) c += rng.uniform() < 0.6;
      m.at(i, T) = static_cast<double>(c) / static_cast<double>(n[i - 1]);
      correct += c;
      total += n[i - 1];
    }
    EXPECT_NEAR(faa(m, n), static_cast<double>(correct) / static_cast<double>(total), 1e-12);
  }
}

TEST(Faa, RandomHeadIsChance) {
  Rng rng(8);
  const std::size_t m = 16, per = 500;
  AccuracyMatrix a(1);
  std::size_t hit = 0;
  for (std::size_t c = 0; c < m; ++c)
    for (std::size_t k = 0; k < per; ++k) hit += rng.below(m) == c;
  a.at(1, 1) = static_cast<double>(hit) / static_cast<double>(m * per);
  const std::vector<std::size_t> n = {m * per};
  const double sigma = std::sqrt((1.0 / m) * (1 - 1.0 / m) / static_cast<double>(m * per));
  EXPECT_NEAR(faa(a, n), 1.0 / m, 4 * sigma);
}

TEST(Faa, Preconditions) {
  AccuracyMatrix m(2);
  m.at(1, 2) = 0.5;
  const std::vector<std::size_t> n = {10, 10};
  EXPECT_THROW(faa(m, n), PreconditionError);
  const std::vector<std::size_t> short_n = {10};
  EXPECT_THROW(faa(two_tasks(0.1, 0.2), short_n), PreconditionError);
  EXPECT_THROW(m.at(3, 0), PreconditionError);
}

TEST(Fwt, Arithmetic) {
  AccuracyMatrix m(3);
  m.at(2, 1) = 0.4;
  m.at(3, 2) = 0.3;
  const std::vector<double> rnd = {0.0, 0.0, 0.2, 0.25};
  EXPECT_NEAR(fwt(m, rnd), 0.125, 1e-15);
}

TEST(Fwt, ZeroWhenEqualToBaseline) {
  AccuracyMatrix m(4);
  std::vector<double> rnd(5, 0.0);
  for (std::size_t t = 2; t <= 4; ++t) m.at(t, t - 1) = rnd[t] = 0.07 * static_cast<double>(t);
  EXPECT_EQ(fwt(m, rnd), 0.0);
  AccuracyMatrix one(1);
  const std::vector<double> r1 = {0.0, 0.0};
  EXPECT_THROW(fwt(one, r1), PreconditionError);
}

TEST(Matrix, CsvAndEquality) {
  AccuracyMatrix m(2);
  m.at(1, 0) = 0.125;
  m.at(1, 1) = 0.5;
  std::ostringstream os;
  m.write_csv(os);
  EXPECT_EQ(os.str(), "task,after_0,after_1,after_2\n1,0.125,0.5,\n2,,,\n");
  std::istringstream is(os.str());
  EXPECT_TRUE(AccuracyMatrix::read_csv(is) == m);
  AccuracyMatrix k = m;
  EXPECT_TRUE(k == m);
  k.at(2, 2) = 0.0;
  EXPECT_FALSE(k == m);
}

TEST(Summary, SampleStd) {
  const std::vector<double> v = {1, 2, 3, 4, 5};
  const auto s = summarize(v);
  EXPECT_DOUBLE_EQ(s.mean, 3.0);
  EXPECT_NEAR(s.stddev, std::sqrt(2.5), 1e-15);
  EXPECT_EQ(s.n, 5u);
  EXPECT_EQ(format_summary(s, 2), "3.00 ± 1.58");
  const std::vector<double> one = {0.7};
  EXPECT_EQ(summarize(one).stddev, 0.0);
}

TEST(Results, CsvRoundTripAndAggregate) {
  std::vector<ResultRow> rows;
  for (std::uint64_t s = 0; s < 5; ++s) {
    rows.push_back({"er", 200, s, 0.3 + 0.01 * static_cast<double>(s), -0.02, 0, 0.0});
    rows.push_back({"er+d2l", 200, s, 0.35, 0.01 * static_cast<double>(s), 1, 0.25});
  }
  std::stringstream ss;
  write_results_csv(ss, rows);
  const auto back = read_results_csv(ss);
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].method, rows[i].method);
    EXPECT_EQ(back[i].seed, rows[i].seed);
    EXPECT_EQ(back[i].faa, rows[i].faa);
    EXPECT_EQ(back[i].leak_fraction, rows[i].leak_fraction);
  }
  const auto agg = aggregate(back);
  ASSERT_EQ(agg.size(), 2u);
  EXPECT_EQ(agg[0].method, "er");
  EXPECT_NEAR(agg[0].faa.mean, 0.32, 1e-12);
  EXPECT_EQ(agg[1].faa.stddev, 0.0);
  std::ostringstream text;
  write_aggregate_text(text, agg);
  EXPECT_NE(text.str().find("mean ± standard deviation over 5 runs"), std::string::npos);

  std::istringstream bad("method,buffer\n");
  EXPECT_THROW(read_results_csv(bad), Error);
  std::istringstream bad_row(std::string(kResultsHeader) + "\ner,200,x,1,1,0,0\n");
  EXPECT_THROW(read_results_csv(bad_row), Error);
}

TEST(Leaks, NoReplacementsIsZero) {
  Rng rng(1);
  NetworkShape shape;
  Network joint(shape, rng);
  const auto r = count_leaks({}, {}, joint);
  EXPECT_EQ(r.leaks, 0u);
  EXPECT_EQ(r.fraction, 0.0);
}

TEST(Leaks, ConstructedPositiveIsDetected) {
  const TaskStream stream = make_benchmark({.num_classes = 8, .post_tasks = 2, .samples_per_class = 60, .seed = 4});
  Rng rng(2);
  const Network joint = train_joint_classifier(stream.all_train(), stream.num_classes(), {}, rng);
  const SampleSet test = stream.all_test();

  // Dream 7 is a copy of class 6's test images; dream 9 copies class 1.
  auto class_rows = [&](std::size_t c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < test.size(); ++i)
      if (test.labels[i] == c) idx.push_back(i);
    return test.images.gather_rows(idx);
  };
  std::map<std::size_t, Tensor> samples;
  samples[7] = class_rows(6);
  samples[9] = class_rows(1);
  EXPECT_EQ(majority_class(joint, samples[7]), 6u);

  const std::vector<Replacement> reps = {{2, 6, 10, 7}, {3, 5, 11, 9}};
  const auto r = count_leaks(reps, samples, joint);
  EXPECT_EQ(r.replacements, 2u);
  EXPECT_EQ(r.leaks, 1u);
  EXPECT_DOUBLE_EQ(r.fraction, 0.5);
  EXPECT_GE(r.fraction, 0.0);
  EXPECT_LE(r.fraction, 1.0);

  const std::vector<Replacement> missing = {{2, 6, 10, 42}};
  EXPECT_THROW(count_leaks(missing, samples, joint), PreconditionError);
}

TEST(Plot, SvgIsStandalone) {
  const auto path = std::filesystem::temp_directory_path() / "d2l_metrics_plot.svg";
  const std::vector<Series> s = {{"er", {0.9, 0.5, 0.4}}, {"er+d2l", {0.9, 0.6, 0.45}}};
  write_accuracy_svg(path, s, "per-task accuracy");
  std::ifstream f(path);
  std::stringstream ss;
  ss << f.rdbuf();
  EXPECT_EQ(ss.str().rfind("<?xml", 0), 0u);
  EXPECT_NE(ss.str().find("</svg>"), std::string::npos);
  EXPECT_NE(ss.str().find("er+d2l"), std::string::npos);
  std::filesystem::remove(path);
}
