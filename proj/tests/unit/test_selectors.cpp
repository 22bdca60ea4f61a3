#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "support/testkit.hpp"

using namespace steer;
using testkit::Gen;

namespace {

std::vector<RankedRecord> ranked(std::initializer_list<std::pair<int, int>> op_reward) {
  std::vector<RankedRecord> out;
  std::size_t r = 0;
  for (auto [op, y] : op_reward) out.push_back({r, 0.0, op, y, ++r});
  return out;
}

// History over a small pool of states so equal distances are common.
History random_q_history(Gen& g, std::size_t n, std::size_t pool_size) {
  EnvConfig cfg;
  std::vector<SurrogateState> pool;
  for (std::size_t i = 0; i < pool_size; ++i) pool.push_back(make_state(g.params(cfg), cfg, 0, "q"));
  History h;
  std::size_t session = 0;
  while (h.size() < n) {
    const int len = g.integer(1, 8);
    for (int t = 0; t < len && h.size() < n; ++t) {
      InteractionRecord r;
      r.session_id = "s" + std::to_string(session);
      r.question_id = "q" + std::to_string(session);
      r.t = t;
      r.state = pool[g.rng.below(pool.size())];
      const auto idx = h.append_state(std::move(r));
      const auto kind = g.coin() ? FeedbackKind::more : FeedbackKind::less;
      h.set_request(idx, Feedback::of(kind), g.integer(0, 21));
      h.resolve_reward(idx, g.integer(-1, 1));
    }
    ++session;
  }
  return h;
}

SurrogateState random_state(Gen& g) {
  EnvConfig cfg;
  return make_state(g.params(cfg), cfg, 0, "q");
}

}  // namespace

TEST(BaseVotes, Shapes) {
  EXPECT_EQ(uniform_vote(4), (VoteDistribution{0.25, 0.25, 0.25, 0.25}));
  EXPECT_EQ(dirac_vote(2, 4), (VoteDistribution{0, 0, 1, 0}));
  EXPECT_THROW(dirac_vote(4, 4), std::invalid_argument);
  EXPECT_THROW(dirac_vote(-1, 4), std::invalid_argument);
  EXPECT_THROW(uniform_vote(0), std::invalid_argument);
}

TEST(BaseVotes, Applicability) {
  const auto cat = build_catalog();
  const int reallow = cat.index_of("reallow_for_more");
  const std::vector<int> set{reallow};
  const auto none_disallowed = testkit::toy_state({{"pa", 1}});
  const auto u = applicability_vote(set, none_disallowed, cat);
  EXPECT_EQ(u[reallow], 0.0);
  EXPECT_TRUE(is_distribution(u));
  const auto v = applicability_vote(set, testkit::toy_state({{"pa", 1}}, {"pb"}), cat);
  EXPECT_EQ(v, uniform_vote(22));
  const auto no_named = testkit::toy_state({});
  const std::vector<int> dis{cat.index_of("disallow_for_less")};
  const auto w = applicability_vote(dis, no_named, cat);
  EXPECT_EQ(w[dis[0]], 0.0);
  EXPECT_NEAR(w[0], 1.0 / 21, 1e-15);
  EXPECT_TRUE(is_distribution(w));
}

TEST(ProductVote, Examples) {
  const std::vector<double> a{0.5, 0.5, 0.0}, b{0.2, 0.6, 0.2};
  const auto v = product_vote(a, b);
  EXPECT_NEAR(v[0], 0.25, 1e-15);
  EXPECT_NEAR(v[1], 0.75, 1e-15);
  EXPECT_EQ(v[2], 0.0);
  EXPECT_EQ(product_vote(std::vector<double>{1, 0}, std::vector<double>{0, 1}),
            (VoteDistribution{0.5, 0.5}));
  EXPECT_THROW(product_vote(a, std::vector<double>{1.0}), std::invalid_argument);
}

TEST(ProductVote, UniformIsIdentity) {
  Gen g(1);
  for (int i = 0; i < 1000; ++i) {
    const auto k = static_cast<std::size_t>(g.integer(1, 30));
    const auto b = g.distribution(k);
    const auto v = product_vote(uniform_vote(k), b);
    for (std::size_t j = 0; j < k; ++j) EXPECT_NEAR(v[j], b[j], 1e-12);
  }
}

TEST(RankNeighbors, OrdersNearestFirst) {
  History h;
  const double xs[] = {0.1, 0.5, 0.3};
  for (int i = 0; i < 3; ++i) {
    InteractionRecord r;
    r.session_id = r.question_id = "s" + std::to_string(i);
    r.state.features[0] = xs[i];
    const auto idx = h.append_state(std::move(r));
    h.set_request(idx, Feedback::more(), i);
    h.resolve_reward(idx, 1);
  }
  // a non-matching record is excluded
  InteractionRecord other;
  other.session_id = other.question_id = "x";
  other.state.features[0] = 0.0;
  const auto idx = h.append_state(std::move(other));
  h.set_request(idx, Feedback::less(), 0);
  h.resolve_reward(idx, 1);

  SurrogateState here;
  const auto r = rank_neighbors(here, h, FeedbackKind::more,
                                [](const FeatureVector& a, const FeatureVector& b) {
                                  return single_feature_distance(a, b, 0);
                                });
  ASSERT_EQ(r.size(), 3u);
  std::map<std::size_t, std::size_t> rank_of;
  for (const auto& x : r) rank_of[x.record] = x.rank;
  EXPECT_EQ(rank_of[0], 1u);
  EXPECT_EQ(rank_of[1], 3u);
  EXPECT_EQ(rank_of[2], 2u);
  EXPECT_TRUE(rank_neighbors(here, History{}, FeedbackKind::more,
                             [](const FeatureVector&, const FeatureVector&) { return 0.0; })
                  .empty());
}

TEST(RankNeighbors, TiesGoToNewerRecord) {
  Gen g(2);
  const auto h = random_q_history(g, 60, 3);
  const auto here = random_state(g);
  const auto r = rank_neighbors(here, h, FeedbackKind::less,
                                [](const FeatureVector& a, const FeatureVector& b) {
                                  return single_feature_distance(a, b, feature::box_ranges);
                                });
  for (std::size_t i = 1; i < r.size(); ++i) {
    ASSERT_LE(r[i - 1].distance, r[i].distance);
    if (r[i - 1].distance == r[i].distance)
      EXPECT_GT(h.record(r[i - 1].record).seq, h.record(r[i].record).seq);
  }
}

TEST(SingleFeatureDistance, Basics) {
  FeatureVector a{}, b{};
  a[3] = 2.0;
  b[3] = 4.5;
  EXPECT_EQ(single_feature_distance(a, b, 3), 2.5);
  EXPECT_EQ(single_feature_distance(b, a, 3), 2.5);
  EXPECT_EQ(single_feature_distance(a, a, 3), 0.0);
  EXPECT_THROW(single_feature_distance(a, b, kNumFeatures), std::out_of_range);
}

TEST(Featurize, Standardize) {
  RunningMoments m;
  for (double x : {1.0, 2.0, 3.0}) m.add(x);
  EXPECT_NEAR(featurize_standardize(3.0, m), 1.0 / std::sqrt(2.0 / 3.0), 1e-12);
  EXPECT_NEAR(featurize_standardize(3.0, m), 1.2247, 1e-4);
  EXPECT_EQ(featurize_standardize(2.0, m), 0.0);

  RunningMoments flat;
  for (int i = 0; i < 5; ++i) flat.add(7.0);
  EXPECT_EQ(featurize_standardize(100.0, flat), 0.0);
  RunningMoments one;
  one.add(3.0);
  EXPECT_EQ(featurize_standardize(5.0, one), 0.0);
}

TEST(Featurize, StandardizeKeepsDistanceRatios) {
  Gen g(3);
  for (int i = 0; i < 1000; ++i) {
    RunningMoments m;
    for (int k = 0; k < 10; ++k) m.add(g.uniform(-5, 5));
    const double a = g.uniform(-5, 5), b = g.uniform(-5, 5), c = g.uniform(-5, 5);
    if (a == b) continue;
    const double raw = (c - a) / (b - a);
    const double fa = featurize_standardize(a, m), fb = featurize_standardize(b, m),
                 fc = featurize_standardize(c, m);
    EXPECT_NEAR((fc - fa) / (fb - fa), raw, 1e-6 * (1 + std::abs(raw)));
  }
}

TEST(Featurize, Ecdf) {
  Reservoir r(16, 1);
  EXPECT_EQ(featurize_ecdf(3.0, r), 0.5);
  for (double x : {1.0, 2.0, 2.0, 5.0}) r.insert(x);
  EXPECT_EQ(featurize_ecdf(2.0, r), 0.75);
  EXPECT_EQ(featurize_ecdf(0.5, r), 0.0);
  EXPECT_EQ(featurize_ecdf(5.0, r), 1.0);
}

TEST(Projection, UnitNormVectors) {
  const auto us = make_projection_vectors(8, 42);
  ASSERT_EQ(us.size(), 8u);
  for (const auto& u : us) {
    double n = 0;
    for (double x : u) {
      EXPECT_GE(x, 0.0);
      n += x * x;
    }
    EXPECT_NEAR(n, 1.0, 1e-12);
  }
  EXPECT_EQ(make_projection_vectors(8, 42), us);
  EXPECT_NE(make_projection_vectors(8, 43), us);
}

TEST(Projection, Distances) {
  Gen g(4);
  const auto h = random_q_history(g, 50, 10);
  const auto a = random_state(g), b = random_state(g);
  const auto u = make_projection_vectors(1, 1)[0];
  for (auto f : {Featurization::standardize, Featurization::ecdf}) {
    EXPECT_EQ(random_projection_distance(a.features, a.features, u, f, h), 0.0);
    EXPECT_EQ(random_projection_distance(a.features, b.features, u, f, h),
              random_projection_distance(b.features, a.features, u, f, h));
  }
  // axis vector: reduces to the featurized single-field difference
  ProjectionVector e{};
  e[feature::conjuncts] = 1.0;
  const auto& m = h.moments(feature::conjuncts);
  const double want = std::abs(featurize_standardize(a.features[feature::conjuncts], m) -
                               featurize_standardize(b.features[feature::conjuncts], m));
  EXPECT_NEAR(random_projection_distance(a.features, b.features, e, Featurization::standardize, h),
              want, 1e-12);
  if (m.stddev() > 0)
    EXPECT_NEAR(want * m.stddev(),
                single_feature_distance(a.features, b.features, feature::conjuncts), 1e-9);
}

TEST(Projection, HandFitThreeFieldToy) {
  History h;
  const double rows[3][3] = {{1, 10, 0}, {2, 20, 0}, {3, 60, 0}};
  for (int i = 0; i < 3; ++i) {
    InteractionRecord r;
    r.session_id = r.question_id = "s" + std::to_string(i);
    for (int j = 0; j < 3; ++j) r.state.features[j] = rows[i][j];
    h.append_state(std::move(r));
  }
  ProjectionVector u{};
  u[0] = 0.6;
  u[1] = 0.8;
  FeatureVector a{}, b{};
  a[0] = 1, a[1] = 10;
  b[0] = 3, b[1] = 60;
  // field 0: mean 2, std sqrt(2/3); field 1: mean 30, std sqrt(1400/3); field 2 degenerate
  const double s0 = std::sqrt(2.0 / 3.0), s1 = std::sqrt(1400.0 / 3.0);
  const double pa = 0.6 * (1 - 2) / s0 + 0.8 * (10 - 30) / s1;
  const double pb = 0.6 * (3 - 2) / s0 + 0.8 * (60 - 30) / s1;
  EXPECT_NEAR(random_projection_distance(a, b, u, Featurization::standardize, h),
              std::abs(pa - pb), 1e-12);
  // ecdf over {1,2,3} and {10,20,60}; field 2 all zeros so ecdf(0) = 1 on both sides
  EXPECT_NEAR(random_projection_distance(a, b, u, Featurization::ecdf, h),
              std::abs((0.6 / 3 + 0.8 / 3) - (0.6 + 0.8)), 1e-12);
}

TEST(HistoryInformedVote, Examples) {
  EXPECT_EQ(history_informed_vote({}, 0.811, 5), uniform_vote(5));
  const auto one = ranked({{2, 1}});
  EXPECT_EQ(history_informed_vote(one, 0.811, 5), dirac_vote(2, 5));

  // op0: +0.5 (rank 1) - 0.125 (rank 3); op1: +0.25 (rank 2)
  const auto three = ranked({{0, 1}, {1, 1}, {0, -1}});
  const double w0 = 0.5 - 0.125, w1 = 0.25;
  const auto v = history_informed_vote(three, 0.5, 2);
  EXPECT_NEAR(v[0], w0 / (w0 + w1), 1e-15);
  EXPECT_NEAR(v[1], w1 / (w0 + w1), 1e-15);
  EXPECT_NEAR(v[0], 0.6, 1e-15);

  EXPECT_EQ(history_informed_vote(ranked({{0, -1}, {1, 0}}), 0.5, 3), uniform_vote(3));
  EXPECT_THROW(history_informed_vote(one, 1.0, 5), std::invalid_argument);
}

TEST(HistoryInformedVote, MatchesDirectSum) {
  Gen g(5);
  for (int i = 0; i < 500; ++i) {
    const std::size_t k = static_cast<std::size_t>(g.integer(1, 22));
    const double alpha = g.uniform(0.05, 0.99);
    std::vector<RankedRecord> rs;
    const int n = g.integer(0, 40);
    for (int r = 1; r <= n; ++r)
      rs.push_back({0, 0.0, g.integer(0, static_cast<int>(k) - 1), g.integer(-1, 1),
                    static_cast<std::size_t>(r)});
    std::vector<double> w(k, 0.0);
    for (const auto& r : rs) w[r.op] += r.reward * std::pow(alpha, static_cast<double>(r.rank));
    double s = 0;
    for (auto& x : w) s += (x = std::max(0.0, x));
    const auto v = history_informed_vote(rs, alpha, k);
    ASSERT_TRUE(is_distribution(v));
    for (std::size_t j = 0; j < k; ++j)
      EXPECT_NEAR(v[j], s > 0 ? w[j] / s : 1.0 / k, 1e-12);
  }
}

TEST(KnnVote, Examples) {
  EXPECT_EQ(knn_vote(ranked({{4, 1}}), 10, 6), dirac_vote(4, 6));
  // op0: 1 win of 2; op1: 1 of 1; op2 only y=0
  const auto rs = ranked({{0, 1}, {1, 1}, {0, -1}, {2, 0}});
  const auto v = knn_vote(rs, 10, 3);
  EXPECT_NEAR(v[0], 0.5 / 1.5, 1e-15);
  EXPECT_NEAR(v[1], 1.0 / 1.5, 1e-15);
  EXPECT_EQ(v[2], 0.0);
  // z = 1 sees only rank 1
  EXPECT_EQ(knn_vote(rs, 1, 3), dirac_vote(0, 3));
  EXPECT_EQ(knn_vote(ranked({{0, -1}}), 3, 2), uniform_vote(2));
  EXPECT_THROW(knn_vote(rs, 0, 3), std::invalid_argument);
}

TEST(AlphaMass, TopRanksCarryRoughlyNinetyPercent) {
  for (auto [alpha, top, closed] :
       {std::tuple{0.811, 10, 0.8769}, std::tuple{0.896, 20, 0.8888}}) {
    const auto pw = alpha_powers(alpha, static_cast<std::size_t>(top) + 1);
    double head = 0;
    for (int r = 1; r <= top; ++r) head += pw[r];
    const double mass = head / (alpha / (1 - alpha));
    EXPECT_NEAR(mass, 1 - std::pow(alpha, top), 1e-9);
    EXPECT_NEAR(mass, closed, 1e-3);
    EXPECT_GE(mass, 0.85);
    EXPECT_LE(mass, 0.95);
  }
}

TEST(RankCap, Default) {
  EXPECT_EQ(rank_cap_for(0.896), 357u);
  EXPECT_LT(std::pow(0.896, 357), 1e-17);
  EXPECT_GE(std::pow(0.896, 356), 1e-17);
  const auto cat = build_catalog();
  EXPECT_EQ(rank_cap_for(build_selectors(cat)), 357u);
  SelectorConfig knn;
  knn.enable_knn = true;
  knn.knn_z = 500;
  EXPECT_EQ(rank_cap_for(build_selectors(cat, knn)), 500u);
}

TEST(Census, DefaultBuild) {
  const auto cat = build_catalog();
  const auto specs = build_selectors(cat);
  EXPECT_EQ(specs.size(), 845u);
  std::map<SelectorKind, int> by;
  std::set<std::string> names;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    EXPECT_EQ(specs[i].id, static_cast<int>(i));
    ++by[specs[i].kind];
    names.insert(specs[i].name);
  }
  EXPECT_EQ(names.size(), specs.size());
  EXPECT_EQ(by[SelectorKind::uniform], 1);
  EXPECT_EQ(by[SelectorKind::dirac], 22);
  EXPECT_EQ(by[SelectorKind::applicability], 4);
  EXPECT_EQ(by[SelectorKind::single_feature], 56);
  EXPECT_EQ(by[SelectorKind::random_projection], 32);
  EXPECT_EQ(by[SelectorKind::product], 378 + 352);
  EXPECT_EQ(by[SelectorKind::knn], 0);

  SelectorConfig with_knn;
  with_knn.enable_knn = true;
  EXPECT_EQ(build_selectors(cat, with_knn).size(), 845u + 28u);
}

TEST(VotingRounds, LayersAndDeadlock) {
  const auto cat = build_catalog();
  const auto specs = build_selectors(cat);
  std::vector<SelectorSpec> base;
  for (const auto& s : specs)
    if (s.depends_on.empty()) base.push_back(s);
  auto eval = [&](const SelectorSpec& s, std::span<const VoteDistribution> earlier) {
    if (s.kind == SelectorKind::product) {
      for (int d : s.depends_on) EXPECT_FALSE(earlier[d].empty());
      return product_vote(earlier[s.depends_on[0]], earlier[s.depends_on[1]]);
    }
    return s.kind == SelectorKind::dirac ? dirac_vote(s.op, 22) : uniform_vote(22);
  };
  EXPECT_EQ(run_voting_rounds(base, eval).rounds, 1u);
  const auto all = run_voting_rounds(specs, eval);
  EXPECT_EQ(all.rounds, 2u);
  for (const auto& v : all.votes) EXPECT_TRUE(is_distribution(v));

  std::vector<SelectorSpec> cyclic(2);
  cyclic[0].kind = cyclic[1].kind = SelectorKind::product;
  cyclic[0].depends_on = {1, 1};
  cyclic[1].depends_on = {0, 0};
  EXPECT_THROW(run_voting_rounds(cyclic, eval), DeadlockDetected);
}

TEST(Votes, EverySelectorEmitsDistributionOnRandomContexts) {
  const auto cat = build_catalog();
  SelectorConfig sc;
  sc.enable_knn = true;
  const auto specs = build_selectors(cat, sc);
  const auto proj = make_projection_vectors(sc.n_projections, 9);
  Gen g(6);
  for (int trial = 0; trial < 8; ++trial) {
    const auto h = random_q_history(g, static_cast<std::size_t>(g.integer(0, 120)), 6);
    const auto s = random_state(g);
    const auto aim = g.coin() ? FeedbackKind::more : FeedbackKind::less;
    NeighborIndex index(aim, proj, 1);
    index.sync(h);
    NeighborRanker ranker(index, h.q_index(aim), s.features, rank_cap_for(specs));
    VoteContext ctx{s, h, aim, cat, ranker};
    auto eval = [&](const SelectorSpec& spec, std::span<const VoteDistribution> earlier) {
      return evaluate_selector(spec, ctx, earlier);
    };
    const auto a = run_voting_rounds(specs, eval);
    const auto b = run_voting_rounds(specs, eval);
    for (std::size_t i = 0; i < specs.size(); ++i) {
      ASSERT_TRUE(is_distribution(a.votes[i])) << specs[i].name;
      ASSERT_EQ(a.votes[i], b.votes[i]);
    }
  }
}

// ---------------------------------------------------------------------------
// Neighbour index against the full-sort reference

namespace {

void expect_same(std::span<const RankedRecord> got, const std::vector<RankedRecord>& want,
                 std::size_t cap) {
  const std::size_t n = std::min(cap, want.size());
  ASSERT_EQ(got.size(), n);
  for (std::size_t i = 0; i < n; ++i) {
    ASSERT_EQ(got[i].record, want[i].record) << i;
    ASSERT_EQ(got[i].distance, want[i].distance) << i;
    ASSERT_EQ(got[i].rank, want[i].rank);
    ASSERT_EQ(got[i].op, want[i].op);
    ASSERT_EQ(got[i].reward, want[i].reward);
  }
}

}  // namespace

TEST(NeighborIndex, RefreshEveryStepMatchesReferenceExactly) {
  Gen g(7);
  const auto proj = make_projection_vectors(3, 5);
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t n = static_cast<std::size_t>(g.integer(1, 700));
    const auto h = random_q_history(g, n, static_cast<std::size_t>(g.integer(2, 40)));
    const auto aim = g.coin() ? FeedbackKind::more : FeedbackKind::less;
    NeighborIndex index(aim, proj, 1);
    index.sync(h);
    const auto here = random_state(g);
    const std::size_t cap = static_cast<std::size_t>(g.integer(1, 400));
    NeighborRanker ranker(index, h.q_index(aim), here.features, cap);
    for (std::size_t j = 0; j < kNumFeatures; ++j) {
      const auto want = rank_neighbors(here, h, aim, [&](const FeatureVector& a, const FeatureVector& b) {
        return single_feature_distance(a, b, j);
      });
      expect_same(ranker.single_feature(j), want, cap);
    }
    for (std::size_t p = 0; p < proj.size(); ++p)
      for (auto f : {Featurization::standardize, Featurization::ecdf}) {
        const auto want = rank_neighbors(here, h, aim, [&](const FeatureVector& a, const FeatureVector& b) {
          return random_projection_distance(a, b, proj[p], f, h);
        });
        expect_same(ranker.projection(p, f), want, cap);
      }
  }
}

TEST(NeighborIndex, IncrementalSyncMatchesSnapshotSort) {
  // grow the history in chunks, syncing between them, so tails and folds both occur
  Gen g(8);
  const auto proj = make_projection_vectors(2, 6);
  const auto full = random_q_history(g, 900, 25);
  for (std::size_t refresh : {std::size_t{64}, std::size_t{1000}}) {
    NeighborIndex index(FeedbackKind::more, proj, refresh);
    History h;
    std::size_t at = 0;
    while (at < full.size()) {
      const std::size_t step = static_cast<std::size_t>(g.integer(1, 300));
      while (at < full.size()) {
        auto r = full.record(at);
        const auto req = *r.request;
        const auto chosen = r.chosen;
        const auto y = r.reward;
        r.request.reset();
        r.chosen.reset();
        r.reward.reset();
        const auto idx = h.append_state(std::move(r));
        h.set_request(idx, req, chosen);
        h.resolve_reward(idx, y);
        ++at;
        if (g.coin(1.0 / static_cast<double>(step))) break;
      }
      index.sync(h);
      const auto& q = h.q_index(FeedbackKind::more);
      const auto here = random_state(g);
      const std::size_t cap = static_cast<std::size_t>(g.integer(1, 500));
      NeighborRanker ranker(index, q, here.features, cap);
      for (std::size_t key = 0; key < index.key_count(); ++key) {
        const double at_here = index.score_of(key, here.features);
        std::vector<RankedRecord> want;
        for (std::size_t pos = 0; pos < q.size(); ++pos) {
          FeatureVector v;
          for (std::size_t j = 0; j < kNumFeatures; ++j) v[j] = q.column(j)[pos];
          want.push_back({q.record(pos), std::abs(at_here - index.score_of(key, v)), q.op(pos),
                          q.reward(pos), 0});
        }
        std::sort(want.begin(), want.end(), [&](const RankedRecord& a, const RankedRecord& b) {
          if (a.distance != b.distance) return a.distance < b.distance;
          return h.record(a.record).seq > h.record(b.record).seq;
        });
        for (std::size_t i = 0; i < want.size(); ++i) want[i].rank = i + 1;
        const auto got = key < kNumFeatures
                             ? ranker.single_feature(key)
                             : ranker.projection((key - kNumFeatures) / 2,
                                                 static_cast<Featurization>((key - kNumFeatures) % 2));
        expect_same(got, want, cap);
      }
    }
  }
}
