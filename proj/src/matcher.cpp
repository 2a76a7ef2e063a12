#include "probembed/matcher.hpp"

#include <cblas.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <thread>

#include <json.hpp>

#include "probembed/binary_io.hpp"
#include "probembed/error.hpp"
#include "probembed/rng.hpp"

namespace probembed {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr std::uint32_t kScoreFormatVersion = 1;

// Row-major copies of one store in the layouts the kernels want.
struct Packed {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<float> mu32;       // n x dim, GEMM operand
  std::vector<double> sigma2;    // n, scalar variances
  std::vector<double> mu64;      // n x dim, MlsD only
  std::vector<double> dim_var;   // n x dim, MlsD only (broadcast applied)
};

Packed pack(const EmbeddingStore& s, MetricKind metric, bool doubles = false) {
  Packed p;
  p.n = s.size();
  p.dim = s.dim();
  const bool per_pair = metric == MetricKind::MlsD || doubles;
  if (per_pair) {
    p.mu64.resize(p.n * p.dim);
    p.dim_var.resize(p.n * p.dim);
  } else {
    p.mu32.resize(p.n * p.dim);
    p.sigma2.resize(p.n);
  }
  const double d = static_cast<double>(p.dim);
  for (std::size_t i = 0; i < p.n; ++i) {
    const auto& e = s.embedding(i);
    const auto mu = e.mu();
    const auto var = e.sigma2();
    if (per_pair) {
      std::copy(mu.begin(), mu.end(), p.mu64.begin() + i * p.dim);
      for (std::size_t l = 0; l < p.dim; ++l) {
        p.dim_var[i * p.dim + l] =
            e.sigma_mode() == SigmaMode::Scalar ? var[0] / d : var[l];
      }
      if (doubles) p.sigma2.push_back(var[0]);
    } else {
      for (std::size_t l = 0; l < p.dim; ++l) {
        p.mu32[i * p.dim + l] = static_cast<float>(mu[l]);
      }
      p.sigma2[i] = var[0];
    }
  }
  return p;
}

void check_compat(const EmbeddingStore& s, MetricKind metric) {
  if (!metric_accepts(metric, s.sigma_mode())) {
    throw Error(ErrorCode::MetricSigmaModeMismatch,
                std::string(to_string(metric)) +
                    " requires scalar variances");
  }
}

double mls_d_row(const double* mu_a, const double* var_a, const double* mu_b,
                 const double* var_b, std::size_t dim) {
  double acc = 0.0;
  for (std::size_t l = 0; l < dim; ++l) {
    const double diff = mu_a[l] - mu_b[l];
    const double t = var_a[l] + var_b[l];
    acc += diff * diff / t + std::log(t);
  }
  return -0.5 * acc - 0.5 * static_cast<double>(dim) * kLog2Pi;
}

double dot64(const double* a, const double* b, std::size_t dim) {
  double acc = 0.0;
  for (std::size_t l = 0; l < dim; ++l) acc += a[l] * b[l];
  return acc;
}

double adjust(MetricKind metric, double cos, double sigma2_sum, double dim) {
  switch (metric) {
    case MetricKind::FastMls:
      return fast_mls_from(cos, sigma2_sum);
    case MetricKind::Mls1Full: {
      const double half_d = 0.5 * dim;
      return -half_d * ((2.0 - 2.0 * cos) / sigma2_sum + std::log(sigma2_sum)) +
             half_d * std::log(dim) - half_d * kLog2Pi;
    }
    default:
      return cos;
  }
}

// Runs work(item) for item in [0, n_items) on up to `threads` workers. Items
// write disjoint output, so joining is the only synchronization.
void parallel_for(std::size_t n_items, unsigned threads,
                  const std::function<void(std::size_t)>& work) {
  const unsigned workers =
      static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), n_items));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n_items; ++i) work(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n_items; i = next++) work(i);
    });
  }
}

void configure_blas(unsigned threads) {
  // Our workers already split the rows; nested BLAS threads would oversubscribe.
  if (threads > 1) openblas_set_num_threads(1);
}

}  // namespace

std::vector<double> score_pairs(
    const EmbeddingStore& store,
    std::span<const std::pair<std::size_t, std::size_t>> pairs,
    MetricKind metric, const MatchOptions& opts) {
  check_compat(store, metric);
  for (const auto& [i, j] : pairs) {
    if (i >= store.size() || j >= store.size()) {
      throw Error(ErrorCode::IndexOutOfRange,
                  "pair (" + std::to_string(i) + ", " + std::to_string(j) +
                      ") with " + std::to_string(store.size()) + " records");
    }
  }
  const Packed p = pack(store, metric, /*doubles=*/true);
  const std::size_t dim = p.dim;
  const double d = static_cast<double>(dim);
  std::vector<double> out(pairs.size());

  constexpr std::size_t kChunk = 4096;
  const std::size_t n_chunks = (pairs.size() + kChunk - 1) / kChunk;
  parallel_for(n_chunks, opts.threads, [&](std::size_t chunk) {
    const std::size_t end = std::min(pairs.size(), (chunk + 1) * kChunk);
    for (std::size_t k = chunk * kChunk; k < end; ++k) {
      const auto [i, j] = pairs[k];
      double v;
      if (metric == MetricKind::MlsD) {
        v = mls_d_row(&p.mu64[i * dim], &p.dim_var[i * dim], &p.mu64[j * dim],
                      &p.dim_var[j * dim], dim);
      } else {
        const double c = dot64(&p.mu64[i * dim], &p.mu64[j * dim], dim);
        v = adjust(metric, c, p.sigma2[i] + p.sigma2[j], d);
      }
      out[k] = v;
    }
  });
  return out;
}

ScoreMatrix match_matrix(const EmbeddingStore& gallery,
                         const EmbeddingStore& probe, MetricKind metric,
                         const MatchOptions& opts) {
  if (gallery.dim() != probe.dim()) {
    throw Error(ErrorCode::DimMismatch,
                "gallery dim " + std::to_string(gallery.dim()) +
                    " vs probe dim " + std::to_string(probe.dim()));
  }
  check_compat(gallery, metric);
  check_compat(probe, metric);
  const std::size_t rows = gallery.size();
  const std::size_t cols = probe.size();
  if (cols != 0 && rows > opts.max_entries / cols) {
    throw Error(ErrorCode::AllocationFailure,
                std::to_string(rows) + " x " + std::to_string(cols) +
                    " exceeds the cap of " + std::to_string(opts.max_entries) +
                    " entries");
  }
  if (opts.block_rows == 0) {
    throw Error(ErrorCode::InvalidConfig, "block_rows must be >= 1");
  }

  ScoreMatrix out{metric, rows, cols, {}};
  try {
    out.scores.resize(rows * cols);
  } catch (const std::bad_alloc&) {
    throw Error(ErrorCode::AllocationFailure,
                "cannot allocate " + std::to_string(rows * cols) + " scores");
  }
  if (rows == 0 || cols == 0) return out;

  const Packed g = pack(gallery, metric);
  const Packed p = pack(probe, metric);
  const std::size_t dim = g.dim;
  const double d = static_cast<double>(dim);
  const std::size_t n_blocks = (rows + opts.block_rows - 1) / opts.block_rows;
  configure_blas(opts.threads);

  parallel_for(n_blocks, opts.threads, [&](std::size_t block) {
    const std::size_t r0 = block * opts.block_rows;
    const std::size_t r1 = std::min(rows, r0 + opts.block_rows);
    float* c = out.scores.data() + r0 * cols;

    if (metric == MetricKind::MlsD) {
      for (std::size_t r = r0; r < r1; ++r) {
        const double* mu_g = &g.mu64[r * dim];
        const double* var_g = &g.dim_var[r * dim];
        for (std::size_t q = 0; q < cols; ++q) {
          c[(r - r0) * cols + q] = static_cast<float>(
              mls_d_row(mu_g, var_g, &p.mu64[q * dim], &p.dim_var[q * dim], dim));
        }
      }
      return;
    }

    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans,
                static_cast<blasint>(r1 - r0), static_cast<blasint>(cols),
                static_cast<blasint>(dim), 1.0f, &g.mu32[r0 * dim],
                static_cast<blasint>(dim), p.mu32.data(),
                static_cast<blasint>(dim), 0.0f, c, static_cast<blasint>(cols));
    if (metric == MetricKind::Cosine) return;

    for (std::size_t r = r0; r < r1; ++r) {
      const double sg = g.sigma2[r];
      float* row = c + (r - r0) * cols;
      for (std::size_t q = 0; q < cols; ++q) {
        row[q] = static_cast<float>(adjust(metric, row[q], sg + p.sigma2[q], d));
      }
    }
  });
  return out;
}

std::vector<std::uint8_t> encode_scores(const ScoreMatrix& m) {
  ByteWriter w;
  w.magic("PSCR");
  w.u32(kScoreFormatVersion);
  w.u8(static_cast<std::uint8_t>(m.metric));
  w.u32(static_cast<std::uint32_t>(m.rows));
  w.u32(static_cast<std::uint32_t>(m.cols));
  for (float v : m.scores) w.f32(v);
  return w.take();
}

ScoreMatrix decode_scores(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (!r.magic("PSCR")) throw Error(ErrorCode::BadMagic, "not a score file");
  const std::uint32_t version = r.u32();
  if (version != kScoreFormatVersion) {
    throw Error(ErrorCode::VersionMismatch,
                "score file version " + std::to_string(version));
  }
  const std::uint8_t id = r.u8();
  if (id > static_cast<std::uint8_t>(MetricKind::FastMls)) {
    throw Error(ErrorCode::IoError, "unknown metric id " + std::to_string(id));
  }
  ScoreMatrix m;
  m.metric = static_cast<MetricKind>(id);
  m.rows = r.u32();
  m.cols = r.u32();
  if (m.rows * m.cols > r.remaining() / 4) {
    throw Error(ErrorCode::TruncatedFile, "score payload shorter than header");
  }
  m.scores.resize(m.rows * m.cols);
  for (auto& v : m.scores) v = r.f32();
  return m;
}

void save_scores(const ScoreMatrix& m, const std::filesystem::path& path) {
  write_file(path, encode_scores(m));
}

ScoreMatrix load_scores(const std::filesystem::path& path) {
  return decode_scores(read_file(path));
}

std::string BenchReport::to_json() const {
  nlohmann::ordered_json j;
  j["metric"] = std::string(probembed::to_string(metric));
  j["n_gallery"] = n_gallery;
  j["n_probe"] = n_probe;
  j["dim"] = dim;
  j["repeats"] = repeats;
  j["threads"] = threads;
  j["wall_seconds"] = wall_seconds;
  j["median_seconds"] = median_seconds;
  j["matches_per_second"] = matches_per_second;
  j["checksum"] = checksum;
  return j.dump();
}

EmbeddingStore random_store(std::size_t n, std::size_t dim, std::uint64_t seed,
                            double sigma2_lo, double sigma2_hi) {
  Rng rng(seed);
  EmbeddingStore s(dim, SigmaMode::Scalar);
  std::vector<double> v(dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& x : v) x = rng.normal();
    s.add(make_embedding(v, rng.uniform(sigma2_lo, sigma2_hi)),
          static_cast<std::int64_t>(i));
  }
  return s;
}

BenchReport bench(MetricKind metric, std::size_t n_gallery,
                  std::size_t n_probe, std::size_t dim, std::size_t repeats,
                  std::uint64_t seed, const MatchOptions& opts) {
  if (n_gallery < 1 || n_probe < 1 || dim < 1) {
    throw Error(ErrorCode::InvalidConfig, "bench sizes must be >= 1");
  }
  if (repeats < 3) {
    throw Error(ErrorCode::InvalidConfig, "bench needs at least 3 repeats");
  }
  const EmbeddingStore gallery = random_store(n_gallery, dim, seed);
  const EmbeddingStore probe = random_store(n_probe, dim, seed + 1);

  BenchReport rep;
  rep.metric = metric;
  rep.n_gallery = n_gallery;
  rep.n_probe = n_probe;
  rep.dim = dim;
  rep.repeats = repeats;
  rep.threads = opts.threads;
  for (std::size_t k = 0; k < repeats; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    const ScoreMatrix m = match_matrix(gallery, probe, metric, opts);
    const auto t1 = std::chrono::steady_clock::now();
    double sum = 0.0;
    for (float v : m.scores) sum += v;
    rep.checksum = sum;
    rep.wall_seconds.push_back(
        std::max(std::chrono::duration<double>(t1 - t0).count(), 1e-9));
  }
  std::vector<double> sorted = rep.wall_seconds;
  std::sort(sorted.begin(), sorted.end());
  rep.median_seconds = sorted[sorted.size() / 2];
  if (sorted.size() % 2 == 0) {
    rep.median_seconds = 0.5 * (sorted[sorted.size() / 2 - 1] + rep.median_seconds);
  }
  rep.matches_per_second =
      static_cast<double>(n_gallery) * static_cast<double>(n_probe) /
      rep.median_seconds;
  return rep;
}

}  // namespace probembed
