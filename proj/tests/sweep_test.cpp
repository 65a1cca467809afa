#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "stcvae/reports.hpp"
#include "stcvae/sweep.hpp"

using namespace stcvae;

namespace {

SweepConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_sweep_config(in);
}

SweepRecord record(std::size_t n, std::size_t factor, std::size_t cap, double elbo, std::size_t repeat = 0) {
  SweepRecord r;
  r.spec.dimension = n;
  r.spec.grouping_factor = factor;
  r.spec.grouping_coefficient = normalize_coefficient(factor, n);
  r.spec.capacity = cap;
  r.spec.repeat = repeat;
  r.final_elbo = elbo;
  r.objective = "stcvae";
  return r;
}

// Independent oracle for a 3x3 linear system: Cramer's rule.
std::array<double, 3> cramer(const std::array<std::array<double, 3>, 3>& m, const std::array<double, 3>& r) {
  auto det = [](const std::array<std::array<double, 3>, 3>& a) {
    return a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
           a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
  };
  const double d = det(m);
  std::array<double, 3> out{};
  for (int k = 0; k < 3; ++k) {
    auto mk = m;
    for (int i = 0; i < 3; ++i) mk[i][k] = r[i];
    out[k] = det(mk) / d;
  }
  return out;
}

SweepConfig tiny_config() {
  return parse(
      "dimensions = 4\n"
      "capacities = 16\n"
      "betas = 2.0\n"
      "repeats = 2\n"
      "iterations = 40\n"
      "batch_size = 16\n"
      "learning_rate = 0.005\n"
      "seed = 3\n");
}

}  // namespace

// ---- configuration ---------------------------------------------------------

TEST(SweepConfigParse, ReadsEveryKindOfValue) {
  const SweepConfig c = parse(
      "# desk sweep\n"
      "dimensions = 6, 8\n"
      "capacities=64,128  # inline comment\n"
      "betas = 1.5, 4\n"
      "repeats = 2\n"
      "iterations = 10\n"
      "objective = hfvae\n"
      "gamma = 0.5\n"
      "activation = relu\n"
      "likelihood = gaussian\n"
      "\n");
  EXPECT_EQ(c.dimensions, (std::vector<std::size_t>{6, 8}));
  EXPECT_EQ(c.capacities, (std::vector<std::size_t>{64, 128}));
  EXPECT_EQ(c.betas, (std::vector<double>{1.5, 4.0}));
  EXPECT_EQ(c.repeats, 2u);
  EXPECT_EQ(c.objective, Objective::kHfvae);
  EXPECT_EQ(c.activation, Activation::kRelu);
  EXPECT_EQ(c.likelihood, Likelihood::kGaussianFixedVariance);
  EXPECT_DOUBLE_EQ(c.epsilon, 1e-3);
  EXPECT_DOUBLE_EQ(c.delta, 1e-2);
}

TEST(SweepConfigParse, DefaultsAndPaperProtocol) {
  SweepConfig c = parse("");
  EXPECT_EQ(c.dimensions, paper_dimensions());
  EXPECT_EQ(c.iterations, 2000u);
  EXPECT_EQ(c.repeats, 3u);
  c.apply_paper_protocol();
  EXPECT_EQ(c.iterations, 20000u);
  EXPECT_EQ(c.repeats, 20u);
}

TEST(SweepConfigParse, RejectsBadInput) {
  EXPECT_THROW(parse("colour = red\n"), ConfigError);
  EXPECT_THROW(parse("betas =\n"), ConfigError);
  EXPECT_THROW(parse("betas = 1.0,,2.0\n"), ConfigError);
  EXPECT_THROW(parse("repeats = 0\n"), ConfigError);
  EXPECT_THROW(parse("repeats = -1\n"), ConfigError);
  EXPECT_THROW(parse("dimensions = 1\n"), ConfigError);
  EXPECT_THROW(parse("beta = 4\n"), ConfigError);
  EXPECT_THROW(parse("betas = four\n"), ConfigError);
  EXPECT_THROW(parse("repeats = 2\nrepeats = 3\n"), ConfigError);
  EXPECT_THROW(parse("just text\n"), ConfigError);
  EXPECT_THROW(parse("objective = vae\n"), ConfigError);
  try {
    parse("iterations = 5\nlearning_rat = 0.1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("learning_rat"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

// ---- grid ------------------------------------------------------------------

TEST(ExpandGrid, DimensionTwelveGivesFiveTrials) {
  const auto trials = expand_grid(parse("dimensions = 12\ncapacities = 64\nbetas = 4\nrepeats = 1\n"));
  ASSERT_EQ(trials.size(), 5u);
  const std::vector<std::size_t> factors{1, 2, 3, 4, 6};
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(trials[k].grouping_factor, factors[k]);
    EXPECT_EQ(trials[k].index, k);
    EXPECT_DOUBLE_EQ(trials[k].grouping_coefficient, normalize_coefficient(factors[k], 12));
  }
}

TEST(ExpandGrid, RepeatsMultiplyAndSeedsAreShared) {
  const auto trials = expand_grid(parse("dimensions = 12\ncapacities = 64\nbetas = 4\nrepeats = 20\n"));
  EXPECT_EQ(trials.size(), 100u);
  // Same repeat under different factors shares its seed, different repeats do not.
  EXPECT_EQ(trials[0].seed, trials[20].seed);
  EXPECT_NE(trials[0].seed, trials[1].seed);
  EXPECT_EQ(expand_grid(parse("repeats = 2\n")).size(), expand_grid(parse("repeats = 1\n")).size() * 2);
}

TEST(ReferenceCoefficient, DefaultDimensionList) {
  EXPECT_NEAR(reference_coefficient(paper_dimensions()), kReferenceCoefficient, 1e-3);
}

// ---- trajectory ------------------------------------------------------------

TEST(BestElboTrajectory, RecoversPlantedMaximum) {
  std::vector<SweepRecord> recs;
  // Capacity 64: planted best at factor 2 of n=6 (coefficient 2/3).
  // Capacity 128: planted best at factor 1 (coefficient 1/3).
  for (std::size_t rep = 0; rep < 3; ++rep) {
    for (std::size_t f : {1, 2, 3}) {
      recs.push_back(record(6, f, 64, (f == 2 ? -10.0 : -20.0) + rep, rep));
      recs.push_back(record(6, f, 128, (f == 1 ? -5.0 : -9.0) - rep, rep));
    }
  }
  const Trajectory t = best_elbo_trajectory(recs);
  ASSERT_EQ(t.points.size(), 2u);
  EXPECT_DOUBLE_EQ(t.points[0].best_coefficient, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(t.points[0].best_mean_elbo, -9.0);
  EXPECT_DOUBLE_EQ(t.points[1].best_coefficient, 1.0 / 3.0);
  EXPECT_EQ(t.points[1].capacity_index, 1u);
}

TEST(BestElboTrajectory, TiesGoToSmallerCoefficient) {
  std::vector<SweepRecord> recs{record(6, 3, 64, -1.0), record(6, 2, 64, -1.0), record(6, 1, 64, -1.0)};
  EXPECT_DOUBLE_EQ(best_elbo_trajectory(recs).points[0].best_coefficient, 1.0 / 3.0);
}

TEST(BestElboTrajectory, AveragesDimensionsSharingACoefficient) {
  // Coefficient 1/2 appears for n=4 (factor 1) and n=8 (factor 2).
  std::vector<SweepRecord> recs{record(4, 1, 64, -10.0), record(8, 2, 64, -2.0), record(8, 1, 64, -5.0),
                                record(8, 4, 64, -7.0)};
  const auto p = best_elbo_trajectory(recs).points.at(0);
  EXPECT_DOUBLE_EQ(p.coefficient_elbo.at(0.5), -6.0);
  EXPECT_DOUBLE_EQ(p.best_coefficient, 0.25);
}

TEST(BestElboTrajectory, InvariantUnderShiftAndMonotoneMaps) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  for (int t = 0; t < 50; ++t) {
    std::vector<SweepRecord> recs;
    for (std::size_t cap : {32, 64, 128})
      for (std::size_t f : {1, 2, 3, 4, 6}) recs.push_back(record(12, f, cap, -50.0 + 5.0 * normal(rng)));
    const Trajectory base = best_elbo_trajectory(recs);
    auto shifted = recs, mapped = recs;
    for (auto& r : shifted) r.final_elbo += 123.5;
    for (auto& r : mapped) r.final_elbo = std::exp(r.final_elbo / 10.0);
    const Trajectory a = best_elbo_trajectory(shifted), b = best_elbo_trajectory(mapped);
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_EQ(a.points[k].best_coefficient, base.points[k].best_coefficient);
      EXPECT_EQ(b.points[k].best_coefficient, base.points[k].best_coefficient);
    }
  }
}

TEST(BestElboTrajectory, SkipsFailedRecordsAndWarnsOnEmptyCapacity) {
  std::vector<SweepRecord> recs{record(6, 1, 64, -10.0), record(6, 2, 64, 100.0), record(6, 1, 128, -1.0)};
  recs[1].ok = false;
  recs[2].ok = false;
  const Trajectory t = best_elbo_trajectory(recs);
  ASSERT_EQ(t.points.size(), 1u);
  EXPECT_DOUBLE_EQ(t.points[0].best_coefficient, 1.0 / 3.0);
  ASSERT_EQ(t.warnings.size(), 1u);
  EXPECT_NE(t.warnings[0].find("128"), std::string::npos);
}

// ---- quadratic fit ---------------------------------------------------------

TEST(FitQuadratic, ExactParabolaAndLine) {
  const auto p = fit_quadratic({{-1, 1}, {0, 0}, {1, 1}, {2, 4}, {3, 9}});
  EXPECT_NEAR(p.a, 1.0, 1e-10);
  EXPECT_NEAR(p.b, 0.0, 1e-10);
  EXPECT_NEAR(p.c, 0.0, 1e-10);
  EXPECT_NEAR(p.residual_rms, 0.0, 1e-10);
  const auto l = fit_quadratic({{0, 1}, {1, 3}, {2, 5}, {4, 9}});
  EXPECT_NEAR(l.a, 0.0, 1e-10);
  EXPECT_NEAR(l.b, 2.0, 1e-10);
}

TEST(FitQuadratic, NoisyParabolaMatchesCramerOracle) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> noise(0.0, 0.05);
  const double a = 0.3, b = -1.2, c = 0.7;
  std::vector<std::pair<double, double>> pts;
  for (int i = 0; i < 30; ++i) {
    const double x = -2.0 + 0.2 * i;
    pts.emplace_back(x, a * x * x + b * x + c + noise(rng));
  }
  const TrajectoryFit fit = fit_quadratic(pts);

  std::array<std::array<double, 3>, 3> m{};
  std::array<double, 3> r{};
  for (const auto& [x, y] : pts) {
    const double basis[3] = {x * x, x, 1.0};
    for (int i = 0; i < 3; ++i) {
      r[i] += basis[i] * y;
      for (int j = 0; j < 3; ++j) m[i][j] += basis[i] * basis[j];
    }
  }
  const auto oracle = cramer(m, r);
  EXPECT_NEAR(fit.a, oracle[0], 1e-10);
  EXPECT_NEAR(fit.b, oracle[1], 1e-10);
  EXPECT_NEAR(fit.c, oracle[2], 1e-10);
  EXPECT_LT(fit.residual_rms, 0.05 * 1.5);
  EXPECT_LT(std::abs(fit.a - a), 3.0 * fit.standard_errors[0]);
  EXPECT_LT(std::abs(fit.b - b), 3.0 * fit.standard_errors[1]);
  EXPECT_LT(std::abs(fit.c - c), 3.0 * fit.standard_errors[2]);
}

TEST(FitQuadratic, RejectsTooFewOrDegeneratePoints) {
  EXPECT_THROW(fit_quadratic({{0, 1}, {1, 2}}), std::invalid_argument);
  EXPECT_THROW(fit_quadratic({{1, 1}, {1, 2}, {1, 3}}), std::invalid_argument);
  EXPECT_THROW(fit_quadratic({{1, 1}, {2, 2}, {1, 3}, {2, 0}}), std::invalid_argument);
  EXPECT_TRUE(std::isnan(fit_quadratic({{0, 0}, {1, 1}, {2, 4}}).standard_errors[0]));
}

// ---- reports ---------------------------------------------------------------

TEST(RecordsCsv, RoundTripWithQuoting) {
  std::vector<SweepRecord> recs{record(6, 1, 64, -12.25), record(6, 2, 64, -11.0)};
  recs[0].entropies = {1.5, -0.25, 0.1};
  recs[0].binned_entropies = {2.0, 1.0, 0.5};
  recs[0].mig = 0.125;
  recs[1].ok = false;
  recs[1].error = "non-finite loss, \"decoder\" layer\n2";
  recs[1].spec.index = 1;
  recs[1].wall_time = 0.1;
  std::stringstream ss;
  write_records_csv(ss, recs);
  const std::string text = ss.str();
  EXPECT_EQ(text.substr(0, 6), "trial,");
  EXPECT_NE(text.find("\"non-finite loss, \"\"decoder\"\" layer\n2\""), std::string::npos);
  EXPECT_NE(text.find(",beta-tcvae,"), std::string::npos);

  const auto back = read_records_csv(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].entropies, recs[0].entropies);
  EXPECT_EQ(back[0].final_elbo, -12.25);
  EXPECT_TRUE(back[0].is_reference());
  EXPECT_FALSE(back[1].ok);
  EXPECT_EQ(back[1].error, recs[1].error);
  EXPECT_EQ(back[1].wall_time, 0.1);
  EXPECT_TRUE(std::isnan(back[1].mig));
}

TEST(RecordsCsv, RejectsMalformedFiles) {
  std::stringstream bad_header("a,b\r\n");
  EXPECT_THROW(read_records_csv(bad_header), FormatError);
  std::stringstream unterminated("\"abc");
  EXPECT_THROW(parse_csv(unterminated), FormatError);
}

TEST(EmitReports, WritesAllThreeFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "stcvae_emit_reports_test";
  std::filesystem::remove_all(dir);
  std::vector<SweepRecord> recs;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  for (std::size_t cap : {32, 64, 128, 256})
    for (std::size_t f : {1, 2, 3}) recs.push_back(record(6, f, cap, -30.0 + normal(rng)));
  for (std::size_t k = 0; k < recs.size(); ++k) recs[k].spec.index = k;
  const ReportFiles files = emit_reports(recs, dir, ReportSettings{});

  std::ifstream csv(files.records_csv);
  std::size_t lines = 0;
  for (std::string line; std::getline(csv, line);) ++lines;
  EXPECT_EQ(lines, recs.size() + 1);

  std::ifstream js(files.summary_json);
  const auto j = nlohmann::json::parse(js);
  const auto fit = fit_trajectory(best_elbo_trajectory(recs));
  ASSERT_TRUE(fit.has_value());
  EXPECT_EQ(j["fit"]["a"].get<double>(), fit->a);
  EXPECT_EQ(j["fit"]["b"].get<double>(), fit->b);
  EXPECT_EQ(j["fit"]["c"].get<double>(), fit->c);
  EXPECT_EQ(j["trajectory"].size(), 4u);
  EXPECT_EQ(j["reference"]["coefficient"].get<double>(), 0.178);

  std::ifstream svg(files.trajectory_svg);
  const std::string s((std::istreambuf_iterator<char>(svg)), std::istreambuf_iterator<char>());
  EXPECT_NE(s.find("<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\""), std::string::npos);
  EXPECT_NE(s.find("data-coefficient=\"0.17799999999999999\""), std::string::npos);
  EXPECT_NE(s.find("id=\"fit\""), std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST(EmitReports, SingleCapacityHasNoFit) {
  const std::vector<SweepRecord> recs{record(6, 1, 64, -3.0), record(6, 2, 64, -2.0)};
  const Trajectory t = best_elbo_trajectory(recs);
  std::string why;
  EXPECT_FALSE(fit_trajectory(t, &why).has_value());
  EXPECT_NE(why.find("3 points"), std::string::npos);
  const auto j = summary_json(recs, t, std::nullopt, why, ReportSettings{});
  EXPECT_TRUE(j["fit"].is_null());
  EXPECT_NE(trajectory_svg(t, std::nullopt).find("id=\"reference\""), std::string::npos);
}

// ---- trials ----------------------------------------------------------------

TEST(RunTrial, DeterministicAndLabelled) {
  const SweepConfig config = tiny_config();
  const PreparedData data = prepare_data(load_dataset(config), config);
  EXPECT_EQ(data.train.size() + data.holdout.size(), 216u);
  const auto trials = expand_grid(config);
  ASSERT_EQ(trials.size(), 4u);  // factors {1, 2} x 2 repeats
  const SweepRecord a = run_trial(trials[0], config, data);
  const SweepRecord b = run_trial(trials[0], config, data);
  ASSERT_TRUE(a.ok) << a.error;
  EXPECT_EQ(a.final_elbo, b.final_elbo);
  EXPECT_EQ(a.mig, b.mig);
  EXPECT_EQ(a.entropies, b.entropies);
  EXPECT_TRUE(a.is_reference());
  EXPECT_GT(a.final_elbo, a.initial_elbo);
  EXPECT_EQ(a.entropies.size(), 4u);
  EXPECT_GE(a.mig, 0.0);
  EXPECT_EQ(a.mig_report.mi_table.size(), 4u);
  EXPECT_FALSE(run_trial(trials[2], config, data).is_reference());
}

TEST(RunTrial, FaultsBecomeFailedRecords) {
  SweepConfig config = tiny_config();
  config.likelihood = Likelihood::kGaussianFixedVariance;
  FactorDataset ds = gen_dsprites_mini();
  for (double& v : ds.samples) v = std::numeric_limits<double>::quiet_NaN();
  const PreparedData data = prepare_data(ds, config);
  const SweepRecord r = run_trial(expand_grid(config)[0], config, data);
  EXPECT_FALSE(r.ok);
  EXPECT_NE(r.error.find("non-finite"), std::string::npos);
}

TEST(RunSweep, WorkerCountDoesNotChangeRecords) {
  const SweepConfig config = tiny_config();
  const PreparedData data = prepare_data(load_dataset(config), config);
  const auto trials = expand_grid(config);
  std::size_t seen = 0;
  const auto one = run_sweep(config, data, trials, 1, [&](const SweepRecord&) { ++seen; });
  const auto two = run_sweep(config, data, trials, 2);
  EXPECT_EQ(seen, trials.size());
  auto text = [](std::vector<SweepRecord> recs) {
    for (auto& r : recs) r.wall_time = 0.0;
    std::stringstream ss;
    write_records_csv(ss, recs);
    return ss.str();
  };
  EXPECT_EQ(text(one), text(two));
}
