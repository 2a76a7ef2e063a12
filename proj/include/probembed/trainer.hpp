#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <span>
#include <utility>
#include <vector>

#include "probembed/embedding.hpp"
#include "probembed/losses.hpp"
#include "probembed/rng.hpp"

namespace probembed {

// ---------------------------------------------------------------------------
// Multi-layer feature fusion

/// channels x height x width, channel-major.
struct FeatureMap {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  std::size_t numel() const { return channels * height * width; }
};

/// Intermediate maps t_1..t_4 plus the last convolution output.
struct FeatureStack {
  std::array<FeatureMap, 4> stages;
  FeatureMap last;
};

/// [GAP(t_1), GAP(t_2), GAP(t_3), GAP(t_4), flatten(t_last)].
std::vector<double> fuse_features(const FeatureStack& stack);

/// Stand-in backbone activations for a synthetic record. Stage 1 channel 0
/// carries the residual-norm quality proxy; every other pooled channel is a
/// random distractor. t_last is the mean vector as dim x 1 x 1.
FeatureStack synthetic_feature_stack(const ProbEmbedding& e,
                                     double residual_norm, Rng& rng);

/// Fused features for every record, row-major size() x F.
std::vector<double> synthetic_features(const EmbeddingStore& store,
                                       std::span<const double> residual_norm,
                                       std::uint64_t seed);
std::size_t synthetic_feature_dim(std::size_t embedding_dim);

// ---------------------------------------------------------------------------
// Uncertainty head: s = w2 . relu(w1^T G + b1) + b2, sigma2 = exp(s)

struct UncertaintyHead {
  std::size_t in = 0;      // F
  std::size_t hidden = 0;  // H
  std::vector<double> w1;  // F x H, row-major
  std::vector<double> b1;  // H
  std::vector<double> w2;  // H
  double b2 = 0.0;

  bool operator==(const UncertaintyHead&) const = default;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
UncertaintyHead init_head(std::size_t in, std::size_t hidden,
                          std::uint64_t seed);

double head_forward(const UncertaintyHead& head, std::span<const double> g);

struct HeadGradient {
  std::vector<double> w1, b1, w2;
  double b2 = 0.0;
};

/// Loss report and parameter gradients for a batch whose s values come from
/// the head. `features` is batch.size() x head.in; batch.s is overwritten.
std::pair<LossReport, HeadGradient> head_loss_gradient(
    const UncertaintyHead& head, std::span<const double> features,
    LabeledBatch& batch, const LossConfig& cfg);

// "PHED" | u32 version | u32 F | u32 H | f32 w1 (F*H) | b1 (H) | w2 (H) | b2
std::vector<std::uint8_t> encode_head(const UncertaintyHead& head);
UncertaintyHead decode_head(std::span<const std::uint8_t> bytes);
void save_head(const UncertaintyHead& head, const std::filesystem::path& path);
UncertaintyHead load_head(const std::filesystem::path& path);

/// Per-feature standardization fitted on training records.
struct FeatureScaler {
  std::vector<double> mean;
  std::vector<double> inv_std;

  static FeatureScaler fit(std::span<const double> features, std::size_t dim,
                           std::span<const std::size_t> rows);
  std::vector<double> apply(std::span<const double> features) const;

  std::string to_json() const;
  static FeatureScaler from_json(const std::string& text);
};

/// exp(head(scaler(G))) for every row.
std::vector<double> predict_sigma2(const UncertaintyHead& head,
                                   const FeatureScaler& scaler,
                                   std::span<const double> features);

// ---------------------------------------------------------------------------
// Sampling and training

/// P identities uniformly without replacement, then Q images of each.
/// Rows are identity-major; s starts at ln sigma2 of each record.
LabeledBatch sample_batch(const EmbeddingStore& store, std::size_t P,
                          std::size_t Q, Rng& rng,
                          std::span<const std::size_t> subset = {});

/// Per-identity split: round(frac * n_k) records of each identity go to the
/// held-out side, chosen uniformly. Both lists are sorted.
struct HoldoutSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> holdout;
};
HoldoutSplit split_holdout(const EmbeddingStore& store, double frac,
                           std::uint64_t seed);

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t identities_per_batch = 8;   // P
  std::size_t images_per_identity = 16;   // Q
  std::size_t hidden = 128;
  /// (first step, learning rate); empty selects the scaled default.
  std::vector<std::pair<std::size_t, double>> lr_schedule;
  double base_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;

  /// 0.01 until T/2, 0.001 until 3T/4, then 0.0001 (scaled by base_lr).
  std::vector<std::pair<std::size_t, double>> resolved_schedule() const;
  double lr_at(std::size_t step) const;
  void validate() const;
};

struct HistoryRow {
  std::size_t step = 0;
  double l_s = 0, l_c = 0, l_id = 0, total = 0;
  double sigma2_mean = 0, sigma2_std = 0;
};

struct TrainResult {
  UncertaintyHead initial;
  UncertaintyHead head;
  FeatureScaler scaler;
  std::vector<HistoryRow> history;
};

/// SGD with momentum over head parameters only; embedding means stay fixed.
/// Weight decay applies to w1 and w2, never to biases.
TrainResult train_head(const EmbeddingStore& store,
                       std::span<const double> features, std::size_t feature_dim,
                       std::span<const std::size_t> train_rows,
                       const TrainConfig& cfg, const LossConfig& loss_cfg);

void write_history_csv(std::ostream& out, std::span<const HistoryRow> rows);

/// Parameter update shared by the loop and its unit tests.
struct SgdState {
  HeadGradient velocity;
};
void sgd_step(UncertaintyHead& head, const HeadGradient& grad, SgdState& state,
              double lr, double momentum, double weight_decay);

}  // namespace probembed
