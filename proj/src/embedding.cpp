#include "probembed/embedding.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "probembed/error.hpp"

namespace probembed {

namespace {

std::vector<double> normalized(std::span<const double> v) {
  if (v.empty()) {
    throw Error(ErrorCode::InvalidArgument, "embedding dimension must be >= 1");
  }
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double norm = std::sqrt(sq);
  if (!(norm >= 1e-12) || !std::isfinite(norm)) {
    throw Error(ErrorCode::ZeroVector, "mean vector has norm " +
                                           std::to_string(norm));
  }
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= norm;
  return out;
}

void check_sigma(std::span<const double> sigma2) {
  for (double s : sigma2) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw Error(ErrorCode::NonPositiveSigma,
                  "variance must be positive and finite, got " +
                      std::to_string(s));
    }
  }
}

}  // namespace

ProbEmbedding ProbEmbedding::from_raw(std::vector<double> mu,
                                      std::vector<double> sigma2,
                                      SigmaMode mode) {
  ProbEmbedding e;
  e.mu_ = std::move(mu);
  e.sigma2_ = std::move(sigma2);
  e.mode_ = mode;
  return e;
}

ProbEmbedding make_embedding(std::span<const double> mu_raw, double sigma2) {
  check_sigma(std::span<const double>(&sigma2, 1));
  return ProbEmbedding::from_raw(normalized(mu_raw), {sigma2},
                                 SigmaMode::Scalar);
}

ProbEmbedding make_embedding(std::span<const double> mu_raw,
                             std::span<const double> sigma2) {
  if (sigma2.size() != mu_raw.size()) {
    throw Error(ErrorCode::DimMismatch,
                "per-dim variance length " + std::to_string(sigma2.size()) +
                    " != dim " + std::to_string(mu_raw.size()));
  }
  check_sigma(sigma2);
  return ProbEmbedding::from_raw(normalized(mu_raw),
                                 std::vector<double>(sigma2.begin(),
                                                     sigma2.end()),
                                 SigmaMode::PerDim);
}

EmbeddingStore::EmbeddingStore(std::size_t dim, SigmaMode mode)
    : dim_(dim), mode_(mode) {
  if (dim == 0) {
    throw Error(ErrorCode::InvalidArgument, "store dimension must be >= 1");
  }
}

void EmbeddingStore::add(ProbEmbedding embedding, std::int64_t label) {
  if (embedding.dim() != dim_) {
    throw Error(ErrorCode::DimMismatch,
                "record dim " + std::to_string(embedding.dim()) +
                    " != store dim " + std::to_string(dim_));
  }
  if (embedding.sigma_mode() != mode_) {
    throw Error(ErrorCode::MetricSigmaModeMismatch,
                "record sigma mode differs from store sigma mode");
  }
  records_.push_back({std::move(embedding), label});
}

const EmbeddingStore::Record& EmbeddingStore::at(std::size_t i) const {
  if (i >= records_.size()) {
    throw Error(ErrorCode::IndexOutOfRange,
                "record " + std::to_string(i) + " of " +
                    std::to_string(records_.size()));
  }
  return records_[i];
}

EmbeddingStore EmbeddingStore::with_scalar_sigma2(
    std::span<const double> sigma2) const {
  if (sigma2.size() != records_.size()) {
    throw Error(ErrorCode::InvalidArgument, "variance count != record count");
  }
  check_sigma(sigma2);
  EmbeddingStore out(dim_, SigmaMode::Scalar);
  out.records_.reserve(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto mu = records_[i].embedding.mu();
    out.records_.push_back(
        {ProbEmbedding::from_raw(std::vector<double>(mu.begin(), mu.end()),
                                 {sigma2[i]}, SigmaMode::Scalar),
         records_[i].label});
  }
  return out;
}

}  // namespace probembed
