#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "probembed/embedding.hpp"

namespace probembed {

struct SynthConfig {
  std::size_t num_classes = 50;
  std::size_t per_class = 40;
  std::size_t dim = 64;
  double noise_low = 0.1;
  double noise_high = 1.5;
  std::uint64_t seed = 7;

  void validate() const;
};

/// Labeled Gaussian-perturbed class centers.
///
/// Records are class-major: record k * per_class + j is image j of class k,
/// labeled k. Every record starts with scalar sigma2 = 1.
struct SyntheticData {
  EmbeddingStore store;
  /// Per-record noise scale tau, the ground-truth quality.
  std::vector<double> noise;
  /// Per-record ||raw - center||, i.e. tau * ||g||.
  std::vector<double> residual_norm;
};

SyntheticData gen_synthetic(const SynthConfig& cfg);

}  // namespace probembed
