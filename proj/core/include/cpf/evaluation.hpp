#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cpf/composition_space.hpp"
#include "cpf/features.hpp"
#include "cpf/model.hpp"

namespace cpf {

/// Probabilities for one test image.
struct ScoreRow {
  std::vector<double> composition;  // over ScoreTable::candidates
  std::vector<double> attribute;    // M
  std::vector<double> object;       // N
  Pair label;
  bool label_seen = false;
};

struct ScoreTable {
  CandidateList candidates;
  std::vector<bool> candidate_unseen;  // parallel to candidates
  std::vector<ScoreRow> rows;

  /// Throws DimensionError on size mismatches and NumericError when a
  /// probability vector does not sum to 1 within 1e-8.
  void validate() const;
};

/// p(c | x) + p(a | x, v_o) + p(o | x) for candidate `index` of the table.
double aggregate_score(const ScoreRow& row, std::size_t index, Pair candidate);

/// All candidates' additive scores for one row.
std::vector<double> aggregate_scores(const ScoreRow& row, const CandidateList& candidates);

/// Index of the best candidate after adding `bias` to every unseen
/// candidate. Ties go to the lowest index. An infinite bias restricts the
/// choice to the unseen (+inf) or seen (-inf) candidates when any exist.
std::size_t predict(const ScoreRow& row, const ScoreTable& table, double bias);

struct CurvePoint {
  double bias = 0.0;
  double seen = 0.0;    // accuracy over images whose label is seen
  double unseen = 0.0;  // accuracy over images whose label is unseen
  double hm = 0.0;
};

struct SweepOptions {
  /// When set, use this many evenly spaced biases between the smallest and
  /// largest margin instead of every distinct margin.
  std::optional<std::size_t> bias_grid;
};

struct Sweep {
  std::vector<CurvePoint> curve;  // in increasing bias order
  bool degenerate = false;        // only seen or only unseen images present
};

/// Biases at every distinct per-image margin (best seen score minus best
/// unseen score), the midpoints between consecutive margins and the
/// -inf/+inf sentinels; accuracies at each.
Sweep calibration_sweep(const ScoreTable& table, const SweepOptions& options = {});

double harmonic_mean(double seen, double unseen);

/// Trapezoidal area under unseen-vs-seen accuracy, extended to
/// (0, max unseen) and (max seen, 0). In [0, 1].
double auc(std::span<const CurvePoint> curve);

double best_hm(std::span<const CurvePoint> curve);

struct EvalReport {
  Setting setting = Setting::kClosedWorld;
  std::size_t images = 0;
  std::size_t seen_images = 0;
  std::size_t unseen_images = 0;
  std::size_t candidates = 0;
  std::size_t unseen_candidates = 0;
  std::vector<CurvePoint> curve;
  double auc = 0.0;
  double best_hm = 0.0;
  double best_seen = 0.0;    // seen accuracy at its favorable extreme
  double best_unseen = 0.0;  // unseen accuracy at its favorable extreme
  std::vector<std::string> warnings;

  /// Header, `bias,seen,unseen,hm` curve rows and the x100 summary.
  std::string serialize() const;
  /// `AUC HM Seen Unseen` scaled by 100, one line.
  std::string summary_line() const;
};

EvalReport report_from_table(const ScoreTable& table, Setting setting,
                             const SweepOptions& options = {});

/// Runs the model over `test_set` for the candidate list of `setting`.
/// Rows are computed on up to `threads` workers (0 = hardware concurrency)
/// and are identical for any thread count. Throws DataError naming the pair
/// when a label is not a candidate.
ScoreTable build_score_table(std::span<const FeatureBundle> test_set, const CpfParams& params,
                             const TextEmbeddings& text, const CompositionSpace& space,
                             Setting setting, unsigned threads = 1);

EvalReport evaluate(std::span<const FeatureBundle> test_set, const CpfParams& params,
                    const TextEmbeddings& text, const CompositionSpace& space, Setting setting,
                    unsigned threads = 1, const SweepOptions& options = {});

}  // namespace cpf
