#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace probembed {

struct LossConfig {
  double lambda_c = 0.1;
  double lambda_id = 0.0001;
  double margin = 3.0;
  /// Triplet sets larger than this are uniformly subsampled.
  std::size_t triplet_cap = 10000;
  std::uint64_t triplet_seed = 0;
  /// Treat the batch-mean variance as a constant when differentiating L_C.
  bool stop_grad_sigma_avg = false;

  void validate() const;
};

/// Mini-batch of frozen means, log-variances s = ln sigma2 and identity labels.
struct LabeledBatch {
  std::size_t dim = 0;
  std::vector<double> mu;  // size() x dim, unit rows
  std::vector<double> s;
  std::vector<std::int64_t> labels;
  /// Source record of each row when drawn from a store.
  std::vector<std::size_t> records;

  std::size_t size() const { return s.size(); }
  std::span<const double> row(std::size_t i) const {
    return {mu.data() + i * dim, dim};
  }
  void validate() const;
};

struct LossTerm {
  double value = 0.0;
  std::vector<double> grad_s;
};

struct Triplet {
  std::size_t anchor, positive, negative;
  bool operator==(const Triplet&) const = default;
};

struct IdLossTerm {
  double value = 0.0;
  std::vector<double> grad_s;
  std::vector<double> grad_mu;  // size() x dim
  std::size_t n_triplets = 0;
};

struct LossReport {
  double l_s = 0.0;
  double l_c = 0.0;
  double l_id = 0.0;
  double total = 0.0;
  std::vector<double> grad_s;
  std::size_t n_positive_pairs = 0;
  std::size_t n_triplets = 0;
};

/// 2 - 2 cos for every pair of rows, size() x size().
std::vector<double> pair_sq_distance(const LabeledBatch& batch);

std::size_t count_positive_pairs(std::span<const std::int64_t> labels);

/// Every (anchor, positive, negative) with anchor != positive sharing a label
/// and negative carrying another; uniformly subsampled without replacement
/// down to `cap` when larger. Output is sorted and deterministic in `seed`.
std::vector<Triplet> build_triplets(std::span<const std::int64_t> labels,
                                    std::size_t cap, std::uint64_t seed);

/// Mean over positive pairs i < j of (2 - 2cos)/(sigma2_i + sigma2_j)
/// + ln(sigma2_i + sigma2_j).
LossTerm loss_s(const LabeledBatch& batch);

/// Mean |sigma2_i / sigma2_avg - 1| with sigma2_avg the batch mean.
LossTerm loss_c(const LabeledBatch& batch, bool stop_grad_sigma_avg = false);

/// Uncertainty-weighted triplet hinge over an explicit triplet set.
IdLossTerm loss_id(const LabeledBatch& batch, double margin,
                   std::span<const Triplet> triplets);
IdLossTerm loss_id(const LabeledBatch& batch, double margin,
                   std::size_t triplet_cap = 10000, std::uint64_t seed = 0);

/// L_S + lambda_c L_C + lambda_id L_Id with gradients w.r.t. s.
LossReport total_loss(const LabeledBatch& batch, const LossConfig& cfg);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::vector<double> analytic;
  std::vector<double> numeric;
  /// Coordinates within 10h of an |.| or hinge kink; not scored.
  std::vector<std::size_t> kink_coordinates;
};

/// Central differences of total_loss in every s_i (step h * max(1, |s_i|))
/// against the analytic gradient. Relative error uses a 1e-6 floor on the
/// denominator.
GradCheckResult grad_check(const LabeledBatch& batch, const LossConfig& cfg,
                           double h = 1e-5);

}  // namespace probembed
