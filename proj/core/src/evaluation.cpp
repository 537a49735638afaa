#include "cpf/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <thread>

#include "cpf/errors.hpp"

namespace cpf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_distribution(std::span<const double> p, const char* what) {
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw NumericError(std::string(what) + " probability is negative or NaN");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-8) {
    throw NumericError(std::string(what) + " probabilities sum to " + std::to_string(total));
  }
}

/// Best seen and best unseen candidate of one row (lowest index on ties).
struct GroupBest {
  std::optional<std::size_t> seen;
  std::optional<std::size_t> unseen;
};

GroupBest group_best(const std::vector<double>& scores, const std::vector<bool>& unseen) {
  GroupBest g;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto& slot = unseen[i] ? g.unseen : g.seen;
    if (!slot || scores[i] > scores[*slot]) slot = i;
  }
  return g;
}

std::size_t choose(const std::vector<double>& scores, const GroupBest& g, double bias) {
  if (!g.unseen) return *g.seen;
  if (!g.seen) return *g.unseen;
  if (bias == kInf) return *g.unseen;
  if (bias == -kInf) return *g.seen;
  const double u = scores[*g.unseen] + bias;
  const double s = scores[*g.seen];
  if (u > s) return *g.unseen;
  if (u < s) return *g.seen;
  return std::min(*g.seen, *g.unseen);
}

std::string format_double(double v) {
  if (v == kInf) return "inf";
  if (v == -kInf) return "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_scaled(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", 100.0 * v);
  return buf;
}

}  // namespace

void ScoreTable::validate() const {
  if (candidate_unseen.size() != candidates.size()) {
    throw DimensionError("score table: unseen flags do not match the candidate list");
  }
  for (const ScoreRow& r : rows) {
    if (r.composition.size() != candidates.size()) {
      throw DimensionError("score table: composition probabilities cover " +
                           std::to_string(r.composition.size()) + " of " +
                           std::to_string(candidates.size()) + " candidates");
    }
    check_distribution(r.composition, "composition");
    check_distribution(r.attribute, "attribute");
    check_distribution(r.object, "object");
  }
}

double aggregate_score(const ScoreRow& row, std::size_t index, Pair candidate) {
  return row.composition.at(index) + row.attribute.at(candidate.attr) +
         row.object.at(candidate.obj);
}

std::vector<double> aggregate_scores(const ScoreRow& row, const CandidateList& candidates) {
  std::vector<double> out(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    out[i] = aggregate_score(row, i, candidates[i]);
  }
  return out;
}

std::size_t predict(const ScoreRow& row, const ScoreTable& table, double bias) {
  const std::vector<double> scores = aggregate_scores(row, table.candidates);
  return choose(scores, group_best(scores, table.candidate_unseen), bias);
}

double harmonic_mean(double seen, double unseen) {
  return seen + unseen == 0.0 ? 0.0 : 2.0 * seen * unseen / (seen + unseen);
}

Sweep calibration_sweep(const ScoreTable& table, const SweepOptions& options) {
  struct Cached {
    std::vector<double> scores;
    GroupBest best;
    std::optional<std::size_t> label_index;
    bool label_seen;
  };
  std::vector<Cached> cache;
  cache.reserve(table.rows.size());
  std::vector<double> margins;
  std::size_t seen_images = 0;
  std::size_t unseen_images = 0;
  for (const ScoreRow& row : table.rows) {
    Cached c;
    c.scores = aggregate_scores(row, table.candidates);
    c.best = group_best(c.scores, table.candidate_unseen);
    c.label_index = table.candidates.index_of(row.label);
    c.label_seen = row.label_seen;
    if (c.best.seen && c.best.unseen) {
      margins.push_back(c.scores[*c.best.seen] - c.scores[*c.best.unseen]);
    }
    (row.label_seen ? seen_images : unseen_images) += 1;
    cache.push_back(std::move(c));
  }
  std::sort(margins.begin(), margins.end());
  margins.erase(std::unique(margins.begin(), margins.end()), margins.end());

  std::vector<double> grid{-kInf};
  if (options.bias_grid && !margins.empty()) {
    const std::size_t k = *options.bias_grid;
    const double lo = margins.front();
    const double hi = margins.back();
    for (std::size_t i = 0; i < k; ++i) {
      grid.push_back(k == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) /
                                            static_cast<double>(k - 1));
    }
  } else {
    // Margins plus the midpoints between them: predictions are constant
    // between consecutive margins, and a margin itself may resolve as a tie.
    for (std::size_t i = 0; i < margins.size(); ++i) {
      if (i > 0) grid.push_back(margins[i - 1] + (margins[i] - margins[i - 1]) / 2.0);
      grid.push_back(margins[i]);
    }
  }
  grid.push_back(kInf);

  Sweep sweep;
  sweep.degenerate = seen_images == 0 || unseen_images == 0;
  sweep.curve.reserve(grid.size());
  for (double bias : grid) {
    std::size_t seen_hits = 0;
    std::size_t unseen_hits = 0;
    for (const Cached& c : cache) {
      if (c.label_index && choose(c.scores, c.best, bias) == *c.label_index) {
        (c.label_seen ? seen_hits : unseen_hits) += 1;
      }
    }
    CurvePoint p;
    p.bias = bias;
    p.seen = seen_images == 0 ? 0.0 : static_cast<double>(seen_hits) / static_cast<double>(seen_images);
    p.unseen = unseen_images == 0
                   ? 0.0
                   : static_cast<double>(unseen_hits) / static_cast<double>(unseen_images);
    p.hm = harmonic_mean(p.seen, p.unseen);
    sweep.curve.push_back(p);
  }
  return sweep;
}

double auc(std::span<const CurvePoint> curve) {
  if (curve.empty()) return 0.0;
  std::vector<std::pair<double, double>> pts;
  pts.reserve(curve.size() + 2);
  double max_seen = 0.0;
  double max_unseen = 0.0;
  for (const CurvePoint& p : curve) {
    pts.emplace_back(p.seen, p.unseen);
    max_seen = std::max(max_seen, p.seen);
    max_unseen = std::max(max_unseen, p.unseen);
  }
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first < b.first : a.second > b.second;
  });
  pts.insert(pts.begin(), {0.0, max_unseen});
  pts.emplace_back(max_seen, 0.0);
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    area += (pts[i].first - pts[i - 1].first) * (pts[i].second + pts[i - 1].second) / 2.0;
  }
  return area;
}

double best_hm(std::span<const CurvePoint> curve) {
  double best = 0.0;
  for (const CurvePoint& p : curve) best = std::max(best, p.hm);
  return best;
}

std::string EvalReport::serialize() const {
  std::string out = "# cpf evaluation report\n";
  out += std::string("setting ") + to_string(setting) + "\n";
  out += "images " + std::to_string(images) + "\n";
  out += "seen_images " + std::to_string(seen_images) + "\n";
  out += "unseen_images " + std::to_string(unseen_images) + "\n";
  out += "candidates " + std::to_string(candidates) + "\n";
  out += "unseen_candidates " + std::to_string(unseen_candidates) + "\n";
  for (const auto& w : warnings) out += "warning " + w + "\n";
  out += "curve bias,seen,unseen,hm\n";
  for (const CurvePoint& p : curve) {
    out += format_double(p.bias) + "," + format_double(p.seen) + "," + format_double(p.unseen) +
           "," + format_double(p.hm) + "\n";
  }
  out += "summary AUC,HM,Seen,Unseen\n";
  out += format_scaled(auc) + "," + format_scaled(best_hm) + "," + format_scaled(best_seen) + "," +
         format_scaled(best_unseen) + "\n";
  return out;
}

std::string EvalReport::summary_line() const {
  return "AUC " + format_scaled(auc) + " HM " + format_scaled(best_hm) + " Seen " +
         format_scaled(best_seen) + " Unseen " + format_scaled(best_unseen);
}

EvalReport report_from_table(const ScoreTable& table, Setting setting,
                             const SweepOptions& options) {
  EvalReport r;
  r.setting = setting;
  r.images = table.rows.size();
  for (const ScoreRow& row : table.rows) (row.label_seen ? r.seen_images : r.unseen_images) += 1;
  r.candidates = table.candidates.size();
  r.unseen_candidates = static_cast<std::size_t>(
      std::count(table.candidate_unseen.begin(), table.candidate_unseen.end(), true));
  Sweep sweep = calibration_sweep(table, options);
  if (sweep.degenerate) {
    r.warnings.push_back(r.seen_images == 0 ? "degenerate curve: no seen test images"
                                            : "degenerate curve: no unseen test images");
  }
  r.curve = std::move(sweep.curve);
  r.auc = auc(r.curve);
  r.best_hm = best_hm(r.curve);
  for (const CurvePoint& p : r.curve) {
    r.best_seen = std::max(r.best_seen, p.seen);
    r.best_unseen = std::max(r.best_unseen, p.unseen);
  }
  return r;
}

ScoreTable build_score_table(std::span<const FeatureBundle> test_set, const CpfParams& params,
                             const TextEmbeddings& text, const CompositionSpace& space,
                             Setting setting, unsigned threads) {
  ScoreTable table;
  table.candidates = CandidateList::for_setting(space, setting);
  for (Pair p : table.candidates.pairs()) table.candidate_unseen.push_back(!space.is_seen(p));
  for (const FeatureBundle& s : test_set) {
    if (!table.candidates.index_of({s.attr, s.obj})) {
      throw DataError("test image '" + s.id + "' is labeled " + space.pair_name({s.attr, s.obj}) +
                      ", which is not a " + to_string(setting) + " candidate");
    }
  }

  const Scorer scorer(params, text, table.candidates);
  table.rows.resize(test_set.size());
  const auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const FeatureBundle& s = test_set[i];
      Probabilities p = scorer.score(s);
      ScoreRow& row = table.rows[i];
      row.composition = std::move(p.composition);
      row.attribute = std::move(p.attribute);
      row.object = std::move(p.object);
      row.label = {s.attr, s.obj};
      row.label_seen = space.is_seen(row.label);
    }
  };

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t n = test_set.size();
  const std::size_t workers = std::min<std::size_t>(threads, std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> failures(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(n, begin + chunk);
      if (begin >= end) break;
      pool.emplace_back([&, w, begin, end] {
        try {
          work(begin, end);
        } catch (...) {
          failures[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (const auto& f : failures) {
      if (f) std::rethrow_exception(f);
    }
  }
  return table;
}

EvalReport evaluate(std::span<const FeatureBundle> test_set, const CpfParams& params,
                    const TextEmbeddings& text, const CompositionSpace& space, Setting setting,
                    unsigned threads, const SweepOptions& options) {
  const ScoreTable table = build_score_table(test_set, params, text, space, setting, threads);
  return report_from_table(table, setting, options);
}

}  // namespace cpf
