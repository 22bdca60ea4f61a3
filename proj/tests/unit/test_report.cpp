#include <cmath>

#include <gtest/gtest.h>

#include "support/testkit.hpp"

using namespace steer;
using testkit::Gen;

namespace {

InteractionRecord adjudicated(std::uint64_t seq, int y) {
  InteractionRecord r;
  r.session_id = "s";
  r.t = static_cast<std::int64_t>(seq);
  r.seq = seq;
  r.request = Feedback::more();
  r.chosen = 0;
  r.reward = y;
  return r;
}

InteractionRecord step(const std::string& sid, std::int64_t t, std::uint64_t fp, int chosen = 1) {
  InteractionRecord r;
  r.session_id = sid;
  r.t = t;
  r.seq = static_cast<std::uint64_t>(t);
  r.state.stats.fingerprint = fp;
  r.chosen = chosen;
  r.request = Feedback::more();
  return r;
}

}  // namespace

TEST(SuccessCurve, AllWins) {
  std::vector<InteractionRecord> rs;
  for (int i = 0; i < 150; ++i) rs.push_back(adjudicated(i, 1));
  const auto c = success_curve(rs, 100);
  ASSERT_EQ(c.size(), 150u);
  for (const auto& p : c) EXPECT_EQ(p.rate, 1.0);
  EXPECT_EQ(c.back().window, 100u);
  EXPECT_EQ(c.front().window, 1u);
  EXPECT_EQ(c.back().hi, 1.0);
  EXPECT_LT(c.back().lo, 1.0);
}

TEST(SuccessCurve, AlternatingWithWilsonBounds) {
  std::vector<InteractionRecord> rs;
  for (int i = 0; i < 200; ++i) rs.push_back(adjudicated(i, i % 2 ? 1 : -1));
  InteractionRecord zero = adjudicated(500, 0);
  rs.push_back(zero);  // y = 0 is not adjudicated
  const auto c = success_curve(rs, 100);
  ASSERT_EQ(c.size(), 200u);
  const auto& p = c.back();
  EXPECT_EQ(p.rate, 0.5);
  // Wilson at n = 100, p = 0.5
  const double z = 1.959963984540054, n = 100;
  const double centre = (0.5 + z * z / (2 * n)) / (1 + z * z / n);
  const double half = z * std::sqrt(0.25 / n + z * z / (4 * n * n)) / (1 + z * z / n);
  EXPECT_NEAR(p.lo, centre - half, 1e-12);
  EXPECT_NEAR(p.hi, centre + half, 1e-12);
}

TEST(EntropySeries, UniformAndDirac) {
  std::vector<InteractionRecord> rs(2);
  rs[0].trace = DecisionTrace{uniform_vote(22)};
  rs[1].trace = DecisionTrace{dirac_vote(3, 22)};
  const auto e = entropy_series(rs);
  ASSERT_EQ(e.size(), 2u);
  EXPECT_NEAR(e[0].entropy, std::log(22.0), 1e-12);
  EXPECT_EQ(e[1].entropy, 0.0);
  EXPECT_NEAR(e[1].running_mean, std::log(22.0) / 2, 1e-12);
}

TEST(OpinionSeries, Values) {
  InteractionRecord r;
  AutouserVerdict v;
  v.s1 = 3;
  v.s2 = 5;
  v.global_success = 0.6;
  v.opinion_strength = opinion_strength(0.6, 0.6, compute_ell(5));
  r.verdict = v;
  std::vector<InteractionRecord> rs{r, InteractionRecord{}};
  const auto o = opinion_strength_series(rs);
  ASSERT_EQ(o.size(), 1u);
  EXPECT_EQ(o[0].ratio, 0.6);
  EXPECT_NEAR(o[0].strength, 1.0, 1e-12);
}

TEST(BlankBaseline, ExactMoments) {
  std::vector<InteractionRecord> rs;
  const double u[] = {2, 5, 4, 4};  // unique_named along one session
  for (int t = 0; t < 4; ++t) {
    auto r = step("s", t, t, t < 3 ? 0 : 1);
    r.state.stats.unique_named = static_cast<int>(u[t]);
    rs.push_back(r);
  }
  rs.push_back(step("other", 0, 9, 0));  // blank with no successor: skipped
  const auto b = blank_baseline(rs, 0);
  ASSERT_EQ(b.size(), 5u);
  EXPECT_EQ(b[2].criterion, "unique_named");
  EXPECT_EQ(b[2].n, 3u);
  // deltas {3, -1, 0}
  EXPECT_NEAR(b[2].mean, 2.0 / 3, 1e-12);
  EXPECT_NEAR(b[2].variance, (49.0 / 9 + 25.0 / 9 + 4.0 / 9) / 3, 1e-12);
  EXPECT_TRUE(blank_baseline(std::vector<InteractionRecord>{}, 0).empty());
}

TEST(CycleScan, Periods) {
  std::vector<InteractionRecord> rs{step("a", 0, 1), step("a", 1, 2), step("a", 2, 1),
                                    step("b", 0, 5), step("b", 1, 5), step("b", 2, 1)};
  const auto c = cycle_scan(rs);
  ASSERT_EQ(c.cycles.size(), 2u);
  EXPECT_EQ(c.periods.at(2), 1u);
  EXPECT_EQ(c.periods.at(1), 1u);
  EXPECT_EQ(c.cycles[0].session_id, "a");
  EXPECT_EQ(c.cycles[0].from_t, 0);
  EXPECT_EQ(c.cycles[0].to_t, 2);
}

TEST(WeightUsage, SumsAndOrdering) {
  const auto cat = build_catalog();
  std::vector<InteractionRecord> rs;
  Gen g(1);
  std::vector<std::size_t> uses(22, 0);
  for (int i = 0; i < 300; ++i) {
    auto r = adjudicated(i, g.integer(-1, 1));
    r.chosen = g.integer(0, 21);
    ++uses[*r.chosen];
    rs.push_back(r);
  }
  std::vector<WeightRow> w{{0, "uniform", "uniform", 0.5},
                           {1, "dirac", "dirac:blank", -2.0},
                           {2, "dirac", "dirac:depth_inc", 1.0}};
  const auto rep = weight_and_usage_report(rs, w, cat);
  EXPECT_EQ(rep.weights[0].weight, -2.0);
  EXPECT_EQ(rep.weights[2].weight, 0.5);
  std::size_t total = 0;
  for (const auto& u : rep.usage) {
    total += u.uses;
    EXPECT_EQ(u.uses, uses[u.op]);
    EXPECT_LE(u.successes, u.adjudicated);
  }
  EXPECT_EQ(total, rs.size());
  EXPECT_EQ(rep.usage[0].dirac_weight, -2.0);
  EXPECT_EQ(rep.usage[cat.index_of("depth_inc")].dirac_weight, 1.0);
  EXPECT_FALSE(rep.usage[1].dirac_weight);
}

TEST(Correlation, PearsonAgainstDirectFormula) {
  Gen g(2);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> a(22), b(22);
    for (auto& x : a) x = g.uniform();
    for (auto& x : b) x = g.uniform();
    double ma = 0, mb = 0;
    for (int k = 0; k < 22; ++k) ma += a[k] / 22, mb += b[k] / 22;
    double sab = 0, saa = 0, sbb = 0;
    for (int k = 0; k < 22; ++k) {
      sab += (a[k] - ma) * (b[k] - mb);
      saa += (a[k] - ma) * (a[k] - ma);
      sbb += (b[k] - mb) * (b[k] - mb);
    }
    EXPECT_NEAR(pearson(a, b), sab / std::sqrt(saa * sbb), 1e-12);
  }
  std::vector<InteractionRecord> rs{step("s", 0, 1), step("s", 1, 2)};
  rs[0].trace = DecisionTrace{{0.1, 0.2, 0.7}};
  rs[1].trace = DecisionTrace{{0.2, 0.4, 1.4}};
  rs[0].reward = 1;
  const auto c = dsamp_correlation(rs);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_NEAR(c[0].pearson, 1.0, 1e-12);
  EXPECT_EQ(c[0].reward, 1);
}

TEST(Report, StableUnderReplay) {
  const auto dir = testkit::scratch_dir("report_replay");
  EngineConfig cfg;
  cfg.seed = 3;
  cfg.autouser.max_adjustments = 15;
  cfg.log_dir = dir.string();
  std::vector<double> live_weights;
  double live_g = 0;
  {
    Engine e(cfg);
    e.run_bootstrap(3);
    live_weights = e.weights();
    live_g = e.history().global_success_rate();
  }
  const auto log = load_run(dir.string());
  const auto a = report_json(build_report(log, 50)).dump();
  const auto b = report_json(build_report(load_run(dir.string()), 50)).dump();
  EXPECT_EQ(a, b);
  const auto w = weights_from_log(log);
  ASSERT_EQ(w.size(), live_weights.size());
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_EQ(w[i].weight, live_weights[i]);
  HistoryConfig hc;
  const auto h = replay_history(log.records, hc);
  EXPECT_EQ(h.global_success_rate(), live_g);
  EXPECT_EQ(log.index.size(), 3u);

  write_report_csv(build_report(log, 50), dir / "report");
  for (const char* f : {"success_curve.csv", "summary.html"})
    EXPECT_TRUE(std::filesystem::exists(dir / "report" / f)) << f;
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_run((dir / "missing").string()), IoError);
}
