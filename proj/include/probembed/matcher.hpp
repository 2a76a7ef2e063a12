#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "probembed/embedding.hpp"
#include "probembed/metrics.hpp"

namespace probembed {

/// Dense gallery x probe score block, row-major, 32-bit.
struct ScoreMatrix {
  MetricKind metric = MetricKind::Cosine;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> scores;

  float at(std::size_t r, std::size_t c) const { return scores[r * cols + c]; }
};

struct MatchOptions {
  /// Gallery rows per work item; bounds the live GEMM block.
  std::size_t block_rows = 1024;
  unsigned threads = 1;
  /// Upper bound on rows * cols before AllocationFailure.
  std::size_t max_entries = std::size_t{1} << 30;
};

/// 1:1 protocol: out[k] = metric(store[i_k], store[j_k]), in double.
std::vector<double> score_pairs(
    const EmbeddingStore& store,
    std::span<const std::pair<std::size_t, std::size_t>> pairs,
    MetricKind metric, const MatchOptions& opts = {});

/// 1:N / N:N protocol.
///
/// Cosine and FastMls (and Mls1Full) share one sgemm per row block followed
/// by elementwise work. MlsD is evaluated pair by pair over dimensions.
ScoreMatrix match_matrix(const EmbeddingStore& gallery,
                         const EmbeddingStore& probe, MetricKind metric,
                         const MatchOptions& opts = {});

// "PSCR" | u32 version | u8 metric id | u32 rows | u32 cols | rows*cols f32
std::vector<std::uint8_t> encode_scores(const ScoreMatrix& m);
ScoreMatrix decode_scores(std::span<const std::uint8_t> bytes);
void save_scores(const ScoreMatrix& m, const std::filesystem::path& path);
ScoreMatrix load_scores(const std::filesystem::path& path);

struct BenchReport {
  MetricKind metric = MetricKind::Cosine;
  std::size_t n_gallery = 0;
  std::size_t n_probe = 0;
  std::size_t dim = 0;
  std::size_t repeats = 0;
  unsigned threads = 1;
  std::vector<double> wall_seconds;
  double median_seconds = 0.0;
  double matches_per_second = 0.0;
  double checksum = 0.0;

  std::string to_json() const;
};

/// Random unit-norm scalar-variance store used by the harness.
EmbeddingStore random_store(std::size_t n, std::size_t dim, std::uint64_t seed,
                            double sigma2_lo = 0.5, double sigma2_hi = 1.5);

/// Times match_matrix on random stores and reports the median of `repeats`.
BenchReport bench(MetricKind metric, std::size_t n_gallery,
                  std::size_t n_probe, std::size_t dim, std::size_t repeats,
                  std::uint64_t seed, const MatchOptions& opts = {});

}  // namespace probembed
