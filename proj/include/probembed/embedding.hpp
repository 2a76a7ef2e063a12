#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace probembed {

enum class SigmaMode : std::uint8_t { Scalar = 0, PerDim = 1 };

/// Gaussian feature N(mu, sigma2 I): unit-norm mean plus variance.
///
/// sigma2 holds one value in scalar mode and dim() values in per-dim mode.
/// Construct through make_embedding so the mean is normalized.
class ProbEmbedding {
 public:
  ProbEmbedding() = default;

  std::size_t dim() const { return mu_.size(); }
  SigmaMode sigma_mode() const { return mode_; }
  std::span<const double> mu() const { return mu_; }
  std::span<const double> sigma2() const { return sigma2_; }

  /// Scalar variance. In per-dim mode this is the first component.
  double scalar_sigma2() const { return sigma2_.front(); }

  /// Stores already-validated values without renormalizing.
  static ProbEmbedding from_raw(std::vector<double> mu,
                                std::vector<double> sigma2, SigmaMode mode);

  bool operator==(const ProbEmbedding&) const = default;

 private:
  std::vector<double> mu_;
  std::vector<double> sigma2_;
  SigmaMode mode_ = SigmaMode::Scalar;
};

ProbEmbedding make_embedding(std::span<const double> mu_raw, double sigma2);
ProbEmbedding make_embedding(std::span<const double> mu_raw,
                             std::span<const double> sigma2);

/// Dim-homogeneous labeled collection of embeddings.
class EmbeddingStore {
 public:
  struct Record {
    ProbEmbedding embedding;
    std::int64_t label = 0;
    bool operator==(const Record&) const = default;
  };

  EmbeddingStore(std::size_t dim, SigmaMode mode);

  void add(ProbEmbedding embedding, std::int64_t label);

  std::size_t dim() const { return dim_; }
  SigmaMode sigma_mode() const { return mode_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  const Record& operator[](std::size_t i) const { return records_[i]; }
  const Record& at(std::size_t i) const;
  const std::vector<Record>& records() const { return records_; }

  std::int64_t label(std::size_t i) const { return records_[i].label; }
  const ProbEmbedding& embedding(std::size_t i) const {
    return records_[i].embedding;
  }

  /// Copy with scalar variances replaced; sigma2.size() must equal size().
  EmbeddingStore with_scalar_sigma2(std::span<const double> sigma2) const;

  bool operator==(const EmbeddingStore&) const = default;

 private:
  std::size_t dim_;
  SigmaMode mode_;
  std::vector<Record> records_;
};

}  // namespace probembed
