#include "probembed/metrics.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "probembed/error.hpp"

namespace probembed {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // ln(2 pi)

void check_dims(const ProbEmbedding& a, const ProbEmbedding& b) {
  if (a.dim() != b.dim()) {
    throw Error(ErrorCode::DimMismatch, std::to_string(a.dim()) + " vs " +
                                            std::to_string(b.dim()));
  }
}

void require_scalar(const ProbEmbedding& a, const ProbEmbedding& b,
                    MetricKind kind) {
  if (a.sigma_mode() != SigmaMode::Scalar ||
      b.sigma_mode() != SigmaMode::Scalar) {
    throw Error(ErrorCode::MetricSigmaModeMismatch,
                std::string(to_string(kind)) + " needs scalar variances");
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// Variance of dimension l after the scalar -> per-dim broadcast.
double dim_sigma2(const ProbEmbedding& e, std::size_t l) {
  const auto s = e.sigma2();
  return e.sigma_mode() == SigmaMode::Scalar
             ? s[0] / static_cast<double>(e.dim())
             : s[l];
}

}  // namespace

std::string_view to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::Cosine: return "cosine";
    case MetricKind::MlsD: return "mls";
    case MetricKind::Mls1Full: return "mls1";
    case MetricKind::FastMls: return "fastmls";
  }
  return "unknown";
}

std::optional<MetricKind> parse_metric(std::string_view name) {
  if (name == "cosine") return MetricKind::Cosine;
  if (name == "mls") return MetricKind::MlsD;
  if (name == "mls1") return MetricKind::Mls1Full;
  if (name == "fastmls") return MetricKind::FastMls;
  return std::nullopt;
}

bool metric_accepts(MetricKind kind, SigmaMode mode) {
  switch (kind) {
    case MetricKind::Cosine:
    case MetricKind::MlsD:
      return true;
    case MetricKind::Mls1Full:
    case MetricKind::FastMls:
      return mode == SigmaMode::Scalar;
  }
  return false;
}

double cosine(const ProbEmbedding& a, const ProbEmbedding& b) {
  check_dims(a, b);
  return dot(a.mu(), b.mu());
}

double mls_d(const ProbEmbedding& a, const ProbEmbedding& b) {
  check_dims(a, b);
  const auto ma = a.mu();
  const auto mb = b.mu();
  double acc = 0.0;
  for (std::size_t l = 0; l < ma.size(); ++l) {
    const double diff = ma[l] - mb[l];
    const double t = dim_sigma2(a, l) + dim_sigma2(b, l);
    acc += diff * diff / t + std::log(t);
  }
  return -0.5 * acc - 0.5 * static_cast<double>(ma.size()) * kLog2Pi;
}

double mls_1_full(const ProbEmbedding& a, const ProbEmbedding& b) {
  check_dims(a, b);
  require_scalar(a, b, MetricKind::Mls1Full);
  const double half_d = 0.5 * static_cast<double>(a.dim());
  const double t = a.scalar_sigma2() + b.scalar_sigma2();
  const double c = dot(a.mu(), b.mu());
  return -half_d * ((2.0 - 2.0 * c) / t + std::log(t)) +
         half_d * std::log(static_cast<double>(a.dim())) - half_d * kLog2Pi;
}

double fast_mls(const ProbEmbedding& a, const ProbEmbedding& b) {
  check_dims(a, b);
  require_scalar(a, b, MetricKind::FastMls);
  return fast_mls_from(dot(a.mu(), b.mu()),
                       a.scalar_sigma2() + b.scalar_sigma2());
}

double score(MetricKind kind, const ProbEmbedding& a, const ProbEmbedding& b) {
  switch (kind) {
    case MetricKind::Cosine: return cosine(a, b);
    case MetricKind::MlsD: return mls_d(a, b);
    case MetricKind::Mls1Full: return mls_1_full(a, b);
    case MetricKind::FastMls: return fast_mls(a, b);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown metric");
}

}  // namespace probembed
