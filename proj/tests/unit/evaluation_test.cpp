#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "cpf/errors.hpp"
#include "cpf/evaluation.hpp"
#include "support/oracles.hpp"
#include "support/toy_tables.hpp"

namespace cpf {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

ScoreTable two_by_two(std::vector<bool> unseen) {
  ScoreTable t;
  t.candidates = CandidateList({{0, 0}, {0, 1}, {1, 0}, {1, 1}});
  t.candidate_unseen = std::move(unseen);
  return t;
}

ScoreRow make_row(std::vector<double> comp, std::vector<double> attr, std::vector<double> obj,
                  Pair label, bool seen) {
  ScoreRow r;
  r.composition = std::move(comp);
  r.attribute = std::move(attr);
  r.object = std::move(obj);
  r.label = label;
  r.label_seen = seen;
  return r;
}

TEST(Aggregate, UniformTwoByTwo) {
  const ScoreTable t = two_by_two({false, false, true, true});
  const ScoreRow row = make_row({0.25, 0.25, 0.25, 0.25}, {0.5, 0.5}, {0.5, 0.5}, {0, 0}, true);
  for (double s : aggregate_scores(row, t.candidates)) EXPECT_EQ(s, 1.25);
}

TEST(Aggregate, SingleCandidate) {
  const ScoreRow row = make_row({1.0}, {0.3, 0.7}, {0.1, 0.2, 0.7}, {1, 2}, true);
  EXPECT_DOUBLE_EQ(aggregate_score(row, 0, {1, 2}), 1.0 + 0.7 + 0.7);
}

TEST(Aggregate, HandCaseMatchesEnumeration) {
  ScoreTable t = two_by_two({false, true, false, true});
  t.rows.push_back(make_row({0.1, 0.2, 0.3, 0.4}, {0.8, 0.2}, {0.35, 0.65}, {0, 1}, false));
  const auto scores = oracle::enumerate_scores(t.rows[0], t.candidates, 2, 2);
  // (0,0) 1.25, (0,1) 1.65, (1,0) 0.85, (1,1) 1.25
  EXPECT_NEAR(scores[1], 1.65, 1e-15);
  EXPECT_EQ(predict(t.rows[0], t, 0.0), 1u);
  EXPECT_EQ(predict(t.rows[0], t, 0.0), oracle::brute_predict(scores, t.candidate_unseen, 0.0));
}

TEST(Predict, Sentinels) {
  ScoreTable t = two_by_two({false, true, false, true});
  t.rows.push_back(make_row({0.7, 0.02, 0.2, 0.08}, {0.5, 0.5}, {0.9, 0.1}, {0, 0}, true));
  EXPECT_EQ(predict(t.rows[0], t, 0.0), 0u);
  EXPECT_EQ(predict(t.rows[0], t, kInf), 3u);
  EXPECT_EQ(predict(t.rows[0], t, -kInf), 0u);
  EXPECT_EQ(predict(t.rows[0], t, 10.0), 3u);
}

TEST(Predict, TiesGoToLowestIndex) {
  ScoreTable t = two_by_two({true, false, false, true});
  t.rows.push_back(make_row({0.25, 0.25, 0.25, 0.25}, {0.5, 0.5}, {0.5, 0.5}, {0, 0}, true));
  EXPECT_EQ(predict(t.rows[0], t, 0.0), 0u);
  EXPECT_EQ(predict(t.rows[0], t, -0.125), 1u);
}

TEST(Sweep, PerfectScores) {
  ScoreTable t = two_by_two({false, false, true, true});
  t.rows.push_back(make_row({0.97, 0.01, 0.01, 0.01}, {1, 0}, {1, 0}, {0, 0}, true));
  t.rows.push_back(make_row({0.01, 0.01, 0.01, 0.97}, {0, 1}, {0, 1}, {1, 1}, false));
  const EvalReport r = report_from_table(t, Setting::kClosedWorld);
  bool has_corner = false;
  for (const CurvePoint& p : r.curve) has_corner = has_corner || (p.seen == 1.0 && p.unseen == 1.0);
  EXPECT_TRUE(has_corner);
  EXPECT_DOUBLE_EQ(r.auc, 1.0);
  EXPECT_DOUBLE_EQ(r.best_hm, 1.0);
}

TEST(Sweep, NoUnseenCandidatesGivesFlatCurve) {
  ScoreTable t = two_by_two({false, false, false, false});
  t.rows.push_back(make_row({0.4, 0.3, 0.2, 0.1}, {0.5, 0.5}, {0.5, 0.5}, {0, 0}, true));
  t.rows.push_back(make_row({0.1, 0.6, 0.2, 0.1}, {0.5, 0.5}, {0.5, 0.5}, {1, 1}, true));
  const Sweep s = calibration_sweep(t);
  for (const CurvePoint& p : s.curve) {
    EXPECT_EQ(p.seen, s.curve.front().seen);
    EXPECT_EQ(p.unseen, s.curve.front().unseen);
  }
  EXPECT_TRUE(s.degenerate);
}

TEST(Sweep, FourImageTableMatchesBruteForce) {
  ScoreTable t = two_by_two({false, true, false, true});
  t.rows.push_back(make_row({0.4, 0.3, 0.2, 0.1}, {0.6, 0.4}, {0.5, 0.5}, {0, 0}, true));
  t.rows.push_back(make_row({0.3, 0.4, 0.2, 0.1}, {0.5, 0.5}, {0.45, 0.55}, {0, 1}, false));
  t.rows.push_back(make_row({0.1, 0.1, 0.5, 0.3}, {0.3, 0.7}, {0.6, 0.4}, {1, 0}, true));
  t.rows.push_back(make_row({0.2, 0.2, 0.2, 0.4}, {0.4, 0.6}, {0.7, 0.3}, {1, 1}, false));
  t.validate();
  const Sweep s = calibration_sweep(t);
  for (const CurvePoint& p : s.curve) {
    const oracle::BrutePoint b = oracle::brute_point(t, 2, 2, p.bias);
    EXPECT_EQ(p.seen, b.seen) << "bias " << p.bias;
    EXPECT_EQ(p.unseen, b.unseen) << "bias " << p.bias;
  }
  const oracle::BruteResult br = oracle::brute_evaluate(t, 2, 2);
  EXPECT_NEAR(auc(s.curve), br.auc, 1e-12);
  EXPECT_NEAR(best_hm(s.curve), br.best_hm, 1e-12);
}

TEST(Sweep, FixedGridOption) {
  Rng rng(3);
  const toy::ToyTable toy = toy::random_table(rng, 8, 6);
  SweepOptions opts;
  opts.bias_grid = 5;
  const Sweep s = calibration_sweep(toy.table, opts);
  EXPECT_LE(s.curve.size(), 7u);
  EXPECT_EQ(s.curve.front().bias, -kInf);
  EXPECT_EQ(s.curve.back().bias, kInf);
}

TEST(Auc, KnownCurves) {
  const std::vector<CurvePoint> corner{{0.0, 1.0, 1.0, 1.0}};
  EXPECT_DOUBLE_EQ(auc(corner), 1.0);
  const std::vector<CurvePoint> zero{{0.0, 0.3, 0.0, 0.0}, {1.0, 0.9, 0.0, 0.0}};
  EXPECT_EQ(auc(zero), 0.0);
  const std::vector<CurvePoint> three{{0, 0.0, 0.8, 0}, {0, 0.5, 0.5, 0}, {0, 1.0, 0.0, 0}};
  EXPECT_NEAR(auc(three), 0.45, 1e-15);
}

TEST(HarmonicMean, Values) {
  EXPECT_EQ(harmonic_mean(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(harmonic_mean(0.5, 1.0), 2.0 / 3.0);
}

TEST(Properties, MonotoneSwitchingAndBestHm) {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const toy::ToyTable toy = toy::random_table(rng, 8, 6);
    const Sweep s = calibration_sweep(toy.table);
    const double best = best_hm(s.curve);
    std::size_t prev = 0;
    for (const CurvePoint& p : s.curve) {
      std::size_t unseen_predictions = 0;
      for (const ScoreRow& row : toy.table.rows) {
        unseen_predictions += toy.table.candidate_unseen[predict(row, toy.table, p.bias)];
      }
      EXPECT_GE(unseen_predictions, prev) << "trial " << trial << " bias " << p.bias;
      prev = unseen_predictions;
      EXPECT_GE(best, p.hm);
    }
    const double a = auc(s.curve);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
}

TEST(Properties, ShiftInvarianceOfOneImage) {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    ScoreTable t = two_by_two({false, true, false, true});
    std::vector<double> comp(4);
    for (double& v : comp) v = static_cast<double>(rng.below(16)) / 16.0;
    t.rows.push_back(make_row(comp, {0.25, 0.75}, {0.5, 0.5}, {0, 0}, true));
    ScoreRow shifted = t.rows[0];
    for (double& v : shifted.composition) v += 1.0;
    for (double bias : {-kInf, -0.5, -0.125, 0.0, 0.0625, 0.25, 1.0, kInf}) {
      EXPECT_EQ(predict(t.rows[0], t, bias), predict(shifted, t, bias)) << bias;
    }
  }
}

TEST(ScoreTable, ValidateChecksShapesAndDistributions) {
  ScoreTable t = two_by_two({false, true, false, true});
  t.rows.push_back(make_row({0.5, 0.5, 0.1, 0.0}, {0.5, 0.5}, {0.5, 0.5}, {0, 0}, true));
  EXPECT_THROW(t.validate(), NumericError);
  t.rows[0].composition = {0.5, 0.5};
  EXPECT_THROW(t.validate(), DimensionError);
  t.rows[0].composition = {0.5, 0.5, 0.0, 0.0};
  t.candidate_unseen.pop_back();
  EXPECT_THROW(t.validate(), DimensionError);
}

TEST(Report, DegenerateWarningAndFormatting) {
  ScoreTable t = two_by_two({false, true, false, true});
  t.rows.push_back(make_row({0.4, 0.3, 0.2, 0.1}, {0.5, 0.5}, {0.5, 0.5}, {0, 0}, true));
  const EvalReport r = report_from_table(t, Setting::kClosedWorld);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("no unseen"), std::string::npos);
  const std::string text = r.serialize();
  EXPECT_NE(text.find("curve bias,seen,unseen,hm\n-inf,"), std::string::npos);
  EXPECT_NE(text.find("warning degenerate curve"), std::string::npos);
  EXPECT_EQ(r.summary_line().rfind("AUC ", 0), 0u);
}

struct ModelFixture {
  CompositionSpace space;
  CpfParams params;
  TextEmbeddings text;
  std::vector<FeatureBundle> images;
};

// Images carry random features and labels drawn independently of them.
ModelFixture random_model(std::uint64_t seed, std::size_t images, bool all_unseen_listed) {
  Rng rng(seed);
  ModelFixture f;
  const std::size_t M = 3, N = 4, D = 6, d = 5;
  for (std::size_t a = 0; a < M; ++a) f.space.attributes.push_back("a" + std::to_string(a));
  for (std::size_t o = 0; o < N; ++o) f.space.objects.push_back("o" + std::to_string(o));
  for (std::size_t a = 0; a < M; ++a) {
    for (std::size_t o = 0; o < N; ++o) {
      const Pair p{a, o};
      if ((a + o) % 2 == 0) {
        f.space.train_seen.push_back(p);
      } else if (all_unseen_listed || o != 3) {
        f.space.test_unseen.push_back(p);
      }
    }
  }
  f.space.test_seen = f.space.train_seen;
  f.space.validate();
  f.params = init_params({D, d, 2, d}, seed);
  f.text = toy::random_text(rng, M, N, d);
  const auto cands = f.space.closed_world_candidates();
  for (std::size_t i = 0; i < images; ++i) {
    const Pair p = cands[rng.below(cands.size())];
    f.images.push_back(toy::random_bundle(rng, D, 3, 2, p.attr, p.obj));
  }
  return f;
}

TEST(Evaluate, ClosedEqualsOpenWhenAllUnseenPairsAreListed) {
  const ModelFixture f = random_model(5, 60, true);
  const EvalReport cw = evaluate(f.images, f.params, f.text, f.space, Setting::kClosedWorld);
  const EvalReport ow = evaluate(f.images, f.params, f.text, f.space, Setting::kOpenWorld);
  EXPECT_EQ(cw.candidates, 12u);
  EXPECT_EQ(ow.candidates, 12u);
  ASSERT_EQ(cw.curve.size(), ow.curve.size());
  for (std::size_t i = 0; i < cw.curve.size(); ++i) {
    EXPECT_EQ(cw.curve[i].bias, ow.curve[i].bias);
    EXPECT_EQ(cw.curve[i].seen, ow.curve[i].seen);
    EXPECT_EQ(cw.curve[i].unseen, ow.curve[i].unseen);
  }
  EXPECT_EQ(cw.auc, ow.auc);
  EXPECT_EQ(cw.best_hm, ow.best_hm);
}

TEST(Evaluate, OpenWorldAddsUnlistedPairs) {
  const ModelFixture f = random_model(6, 10, false);
  EXPECT_EQ(evaluate(f.images, f.params, f.text, f.space, Setting::kClosedWorld).candidates, 10u);
  const EvalReport ow = evaluate(f.images, f.params, f.text, f.space, Setting::kOpenWorld);
  EXPECT_EQ(ow.candidates, 12u);
  EXPECT_EQ(ow.unseen_candidates, 6u);
}

TEST(Evaluate, ThreadCountDoesNotChangeRows) {
  const ModelFixture f = random_model(7, 40, true);
  const ScoreTable one = build_score_table(f.images, f.params, f.text, f.space, Setting::kOpenWorld, 1);
  const ScoreTable many = build_score_table(f.images, f.params, f.text, f.space, Setting::kOpenWorld, 3);
  ASSERT_EQ(one.rows.size(), many.rows.size());
  for (std::size_t i = 0; i < one.rows.size(); ++i) {
    EXPECT_EQ(one.rows[i].composition, many.rows[i].composition);
    EXPECT_EQ(one.rows[i].attribute, many.rows[i].attribute);
    EXPECT_EQ(one.rows[i].object, many.rows[i].object);
  }
}

TEST(Evaluate, LabelOutsideCandidatesNamesPair) {
  ModelFixture f = random_model(8, 5, false);
  f.images[0].attr = 0;
  f.images[0].obj = 3;  // (a0,o3) is neither seen nor listed as unseen
  try {
    evaluate(f.images, f.params, f.text, f.space, Setting::kClosedWorld);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("(a0,o3)"), std::string::npos) << e.what();
  }
}

TEST(Evaluate, UntrainedModelIsAtChance) {
  const ModelFixture f = random_model(9, 3000, true);
  const ScoreTable t = build_score_table(f.images, f.params, f.text, f.space, Setting::kClosedWorld);
  const std::size_t K = t.candidates.size();
  std::size_t seen_k = 0;
  for (bool u : t.candidate_unseen) seen_k += !u;
  const std::size_t unseen_k = K - seen_k;

  std::size_t n_seen = 0, n_unseen = 0, hit_seen = 0, hit_unseen = 0;
  std::size_t pred_seen_given_seen = 0, pred_unseen_given_unseen = 0;
  for (const ScoreRow& row : t.rows) {
    const std::size_t k = predict(row, t, 0.0);
    const bool hit = t.candidates[k] == row.label;
    if (row.label_seen) {
      ++n_seen;
      hit_seen += hit;
      pred_seen_given_seen += !t.candidate_unseen[k];
    } else {
      ++n_unseen;
      hit_unseen += hit;
      pred_unseen_given_unseen += t.candidate_unseen[k];
    }
  }
  const auto within_3_sigma = [](std::size_t hits, std::size_t n, double p) {
    const double sd = std::sqrt(static_cast<double>(n) * p * (1.0 - p));
    return std::abs(static_cast<double>(hits) - static_cast<double>(n) * p) <= 3.0 * sd;
  };
  const double p_seen = static_cast<double>(pred_seen_given_seen) / static_cast<double>(n_seen) /
                        static_cast<double>(seen_k);
  const double p_unseen = static_cast<double>(pred_unseen_given_unseen) /
                          static_cast<double>(n_unseen) / static_cast<double>(unseen_k);
  EXPECT_TRUE(within_3_sigma(hit_seen, n_seen, p_seen)) << hit_seen << "/" << n_seen;
  EXPECT_TRUE(within_3_sigma(hit_unseen, n_unseen, p_unseen)) << hit_unseen << "/" << n_unseen;
  EXPECT_TRUE(within_3_sigma(hit_seen + hit_unseen, t.rows.size(), 1.0 / static_cast<double>(K)));
}

}  // namespace
}  // namespace cpf
