#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string_view>

#include "probembed/embedding.hpp"

namespace probembed {

enum class MetricKind : std::uint8_t {
  Cosine = 0,
  MlsD = 1,
  Mls1Full = 2,
  FastMls = 3,
};

std::string_view to_string(MetricKind kind);
std::optional<MetricKind> parse_metric(std::string_view name);

/// Whether `kind` can score embeddings stored with `mode`.
///
/// MlsD accepts scalar stores through the sigma2 / D broadcast; Cosine
/// ignores variances and accepts either mode.
bool metric_accepts(MetricKind kind, SigmaMode mode);

// Scalar reference implementations. All arithmetic is double precision and
// every metric is exactly symmetric in its arguments.

double cosine(const ProbEmbedding& a, const ProbEmbedding& b);

/// Mutual likelihood score over per-dimension variances:
///   -1/2 sum_l [ (mu_a,l - mu_b,l)^2 / t_l + ln t_l ] - (D/2) ln 2pi,
/// with t_l = sigma2_a,l + sigma2_b,l. A scalar variance is broadcast as
/// sigma2 / D to every dimension.
double mls_d(const ProbEmbedding& a, const ProbEmbedding& b);

/// Full log-likelihood of the 1-D uncertainty model at zero difference:
///   -(D/2) [ (2 - 2cos) / t + ln t ] + (D/2) ln D - (D/2) ln 2pi.
double mls_1_full(const ProbEmbedding& a, const ProbEmbedding& b);

/// -(2 - 2cos) / t - ln t with t = sigma2_a + sigma2_b.
double fast_mls(const ProbEmbedding& a, const ProbEmbedding& b);

double score(MetricKind kind, const ProbEmbedding& a, const ProbEmbedding& b);

/// fast_mls on precomputed parts; shared by the batched engine.
inline double fast_mls_from(double cos, double sigma2_sum) {
  return -(2.0 - 2.0 * cos) / sigma2_sum - std::log(sigma2_sum);
}

}  // namespace probembed
