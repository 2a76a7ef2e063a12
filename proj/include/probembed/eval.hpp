#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "probembed/embedding.hpp"

namespace probembed {

struct PairProtocol {
  struct Pair {
    std::size_t a = 0;
    std::size_t b = 0;
    bool same = false;
  };
  std::vector<Pair> pairs;
  /// Fold id per pair; empty when unfolded.
  std::vector<std::size_t> folds;
};

/// `k` contiguous folds of near-equal size over n pairs.
std::vector<std::size_t> contiguous_folds(std::size_t n, std::size_t k);

/// Balanced random positive and negative pairs over a labeled store.
PairProtocol make_pairs(const EmbeddingStore& store, std::size_t n_positive,
                        std::size_t n_negative, std::uint64_t seed);

struct ThresholdResult {
  double accuracy = 0.0;
  /// "same" is predicted when score >= threshold.
  double threshold = 0.0;
};

/// Threshold maximizing correct decisions; the lowest maximizer wins ties.
ThresholdResult best_threshold(std::span<const double> scores,
                               std::span<const std::uint8_t> same);

/// Unfolded: accuracy at the best threshold. Folded: each fold is scored at
/// the threshold chosen on the remaining folds, and the mean is returned.
double verification_accuracy(std::span<const double> scores,
                             std::span<const std::uint8_t> same,
                             std::span<const std::size_t> folds = {});

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

/// Operating points for every distinct score, from +inf down to the minimum.
std::vector<RocPoint> roc(std::span<const double> scores,
                          std::span<const std::uint8_t> same);

struct TprAtFpr {
  double tpr = 0.0;
  /// target_fpr is below the smallest positive false-positive rate the curve
  /// resolves; tpr is then the best zero-FPR operating point.
  bool below_resolution = false;
};

/// Linear interpolation on the upper envelope of the curve.
TprAtFpr tpr_at_fpr(std::span<const RocPoint> curve, double target_fpr);

/// Precision-weighted fusion: w_i = 1 / sigma2_i, mu = normalize(sum w mu),
/// sigma2 = 1 / sum w.
ProbEmbedding aggregate_template(std::span<const ProbEmbedding> members);

enum class RejectFilter { Add, Max };

struct RejectPoint {
  double ratio = 0.0;
  double accuracy = 0.0;
  std::size_t retained = 0;
};

struct RejectCurve {
  RejectFilter filter = RejectFilter::Max;
  std::vector<RejectPoint> points;
};

/// Drops the ceil(r n) pairs with the largest pair uncertainty (later index
/// first among ties) and re-scores the rest, for each ratio r.
RejectCurve reject_curve(std::span<const double> scores,
                         std::span<const std::pair<double, double>> pair_sigma2,
                         std::span<const std::uint8_t> same,
                         RejectFilter filter, std::span<const double> ratios);

struct ScoreHistogram {
  std::vector<double> edges;  // n_bins + 1
  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;

  /// sum_i min(pos_i / |pos|, neg_i / |neg|).
  double overlap() const;
};

ScoreHistogram score_histogram(std::span<const double> scores,
                               std::span<const std::uint8_t> same,
                               std::size_t n_bins);

/// Rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

void write_roc_csv(std::ostream& out, std::span<const RocPoint> curve);
void write_reject_csv(std::ostream& out, const RejectCurve& curve);
void write_histogram_csv(std::ostream& out, const ScoreHistogram& h);

}  // namespace probembed
