// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "probembed/embedding.hpp"
#include "probembed/eval.hpp"
#include "probembed/losses.hpp"
#include "probembed/matcher.hpp"
#include "probembed/metrics.hpp"
#include "probembed/rng.hpp"
#include "probembed/store_io.hpp"
#include "probembed/synthetic.hpp"
#include "probembed/trainer.hpp"

using namespace probembed;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int id, const char* name, double limit_seconds,
               const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out = {false, std::string("exception: ") + e.what()};
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (limit_seconds > 0 && secs > limit_seconds) {
    out.pass = false;
    out.detail += "; over time budget " + std::to_string(limit_seconds) + " s";
  }
  if (!out.pass) ++failures;
  std::printf("[%s] %2d %s: %s (%.2f s)\n", out.pass ? "PASS" : "FAIL", id, name,
              out.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + num(v[i]);
  return s + "]";
}

std::vector<double> gaussian(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  for (auto& x : v) x = rng.normal();
  return v;
}

ProbEmbedding random_scalar(Rng& rng, std::size_t dim) {
  return make_embedding(gaussian(rng, dim), rng.uniform(0.05, 2.0));
}

LabeledBatch random_batch(Rng& rng, std::size_t identities, std::size_t per_id,
                          std::size_t dim) {
  LabeledBatch b;
  b.dim = dim;
  for (std::size_t k = 0; k < identities; ++k) {
    const auto center = gaussian(rng, dim);
    for (std::size_t q = 0; q < per_id; ++q) {
      auto v = center;
      for (auto& x : v) x += 0.8 * rng.normal();
      const auto e = make_embedding(v, 1.0);
      b.mu.insert(b.mu.end(), e.mu().begin(), e.mu().end());
      b.s.push_back(rng.uniform(-1.0, 1.0));
      b.labels.push_back(static_cast<std::int64_t>(k));
    }
  }
  return b;
}

std::vector<std::size_t> argsort(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  return idx;
}

// --- shared training runs -----------------------------------------------------

struct TrainedRun {
  SyntheticData data;
  std::vector<double> features;
  HoldoutSplit split;
  TrainResult result;
  std::vector<double> sigma2;  // predicted, every record
};

TrainedRun train_run(std::uint64_t seed, double lambda_c) {
  SynthConfig sc;
  sc.seed = seed;
  TrainedRun run{gen_synthetic(sc), {}, {}, {}, {}};
  run.features = synthetic_features(run.data.store, run.data.residual_norm, seed);
  const std::size_t F = synthetic_feature_dim(sc.dim);
  run.split = split_holdout(run.data.store, 0.25, seed);
  TrainConfig tc;
  tc.steps = 2000;
  tc.seed = seed;
  LossConfig lc;
  lc.lambda_c = lambda_c;
  run.result = train_head(run.data.store, run.features, F, run.split.train, tc, lc);
  run.sigma2 = predict_sigma2(run.result.head, run.result.scaler, run.features);
  return run;
}

std::map<std::pair<std::uint64_t, double>, TrainedRun> cache;

const TrainedRun& trained(std::uint64_t seed, double lambda_c) {
  const auto key = std::make_pair(seed, lambda_c);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, train_run(seed, lambda_c)).first;
  return it->second;
}

std::vector<double> heldout(const TrainedRun& r, const std::vector<double>& per_record) {
  std::vector<double> out;
  for (auto i : r.split.holdout) out.push_back(per_record[i]);
  return out;
}

double coeff_of_variation(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double sq = 0.0;
  for (double x : v) sq += (x - mean) * (x - mean);
  return std::sqrt(sq / static_cast<double>(v.size())) / mean;
}

}  // namespace

int main() {
  criterion(1, "metric reduction identity", 5.0, [] {
    Rng rng(101);
    double worst = 0.0;
    for (std::size_t dim : {1u, 2u, 64u, 256u}) {
      for (int i = 0; i < 10000; ++i) {
        const auto a = random_scalar(rng, dim);
        const auto b = random_scalar(rng, dim);
        worst = std::max(worst, std::abs(mls_1_full(a, b) - mls_d(a, b)));
      }
    }
    return Outcome{worst <= 1e-9, "max |mls1 - mls(sigma2/D)| = " + num(worst) +
                                      " over 4 x 10^4 pairs (limit 1e-9)"};
  });

  criterion(2, "rank equivalence", 5.0, [] {
    Rng rng(102);
    bool same = true;
    for (std::size_t dim : {2u, 64u, 256u}) {
      std::vector<double> fast, full;
      for (int i = 0; i < 10000; ++i) {
        const auto a = random_scalar(rng, dim);
        const auto b = random_scalar(rng, dim);
        fast.push_back(fast_mls(a, b));
        full.push_back(mls_1_full(a, b));
      }
      same = same && argsort(fast) == argsort(full);
    }
    return Outcome{same, same ? "identical argsort over 10^4 pairs at D = 2, 64, 256"
                              : "argsort differs"};
  });

  criterion(3, "batched/scalar equivalence", 30.0, [] {
    const auto g = random_store(1000, 64, 201);
    const auto p = random_store(1000, 64, 202);
    std::string detail;
    bool ok = true;
    for (auto metric : {MetricKind::Cosine, MetricKind::MlsD, MetricKind::Mls1Full,
                        MetricKind::FastMls}) {
      const auto m = match_matrix(g, p, metric);
      double worst = 0.0;
      for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 0; c < m.cols; ++c) {
          const double ref = score(metric, g.embedding(r), p.embedding(c));
          worst = std::max(worst, std::abs(static_cast<double>(m.at(r, c)) - ref));
        }
      }
      ok = ok && worst <= 1e-5;
      detail += std::string(detail.empty() ? "" : ", ") + std::string(to_string(metric)) +
                " " + num(worst);
    }
    return Outcome{ok, "max |batched - scalar| on 1000 x 1000 at D=64: " + detail +
                           " (limit 1e-5)"};
  });

  criterion(4, "runtime ordering 596 x 10090 at D=256", 300.0, [] {
    const auto cos = bench(MetricKind::Cosine, 596, 10090, 256, 3, 7);
    const auto fast = bench(MetricKind::FastMls, 596, 10090, 256, 3, 7);
    const auto mls = bench(MetricKind::MlsD, 596, 10090, 256, 3, 7);
    const double r1 = fast.median_seconds / cos.median_seconds;
    const double r2 = mls.median_seconds / fast.median_seconds;
    return Outcome{r1 <= 15.0 && r2 >= 5.0,
                   "median cosine " + num(cos.median_seconds) + " s, fastmls " +
                       num(fast.median_seconds) + " s, mls " + num(mls.median_seconds) +
                       " s; fastmls/cosine = " + num(r1) + " (<= 15), mls/fastmls = " +
                       num(r2) + " (>= 5)"};
  });

  criterion(5, "gradient correctness", 60.0, [] {
    Rng rng(105);
    double worst = 0.0;
    std::size_t excluded = 0;
    for (int k = 0; k < 5; ++k) {
      const auto batch = random_batch(rng, 4, 8, 16);
      const auto res = grad_check(batch, LossConfig{}, 1e-5);
      worst = std::max(worst, res.max_relative_error);
      excluded += res.kink_coordinates.size();
    }
    return Outcome{worst <= 1e-4, "max relative error " + num(worst) +
                                      " over 5 batches M=32 D=16 (limit 1e-4), " +
                                      std::to_string(excluded) + " kink coordinates excluded"};
  });

  criterion(6, "loss unit values", 5.0, [] {
    LabeledBatch lc;
    lc.s = {std::log(1.0), std::log(3.0)};
    const double v1 = loss_c(lc).value;
    lc.s = {0.3, 0.3, 0.3, 0.3};
    const double v2 = loss_c(lc).value;

    LabeledBatch tri;
    tri.dim = 2;
    tri.mu = {1, 0, 0, 1, 0, -1};
    tri.s = {0.0, 0.0, 0.0};
    tri.labels = {0, 0, 1};
    const std::vector<Triplet> t{{0, 1, 2}};
    const double v3 = loss_id(tri, 3.0, t).value;

    LabeledBatch ls;
    ls.dim = 2;
    ls.mu = {0.6, 0.8, 0.6, 0.8};
    ls.s = {std::log(0.5), std::log(0.5)};
    ls.labels = {1, 1};
    const double v4 = loss_s(ls).value;

    const bool ok = std::abs(v1 - 0.5) <= 1e-12 && std::abs(v2) <= 1e-12 &&
                    std::abs(v3 - 3.0) <= 1e-12 && std::abs(v4) <= 1e-12;
    return Outcome{ok, "L_C{1,3} = " + num(v1) + ", L_C(equal) = " + num(v2) +
                           ", equal-distance triplet = " + num(v3) +
                           ", L_S identical pair = " + num(v4)};
  });

  criterion(7, "L_C scale invariance", 5.0, [] {
    Rng rng(107);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
      LabeledBatch b;
      const std::size_t m = 2 + rng.index(127);
      for (std::size_t i = 0; i < m; ++i) b.s.push_back(rng.uniform(-3, 3));
      const double base = loss_c(b).value;
      for (double c : {0.1, 10.0}) {
        LabeledBatch scaled = b;
        for (auto& s : scaled.s) s = std::log(std::exp(s) * c);
        worst = std::max(worst, std::abs(loss_c(scaled).value - base));
      }
    }
    return Outcome{worst <= 1e-12, "max |change| = " + num(worst) +
                                       " over 1000 batches, c in {0.1, 10} (limit 1e-12)"};
  });

  criterion(8, "output constraint concentrates sigma2", 600.0, [] {
    std::vector<double> medians;
    for (double lambda : {0.0, 0.1, 1.0}) {
      std::vector<double> cv;
      for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const auto& r = trained(seed, lambda);
        cv.push_back(coeff_of_variation(heldout(r, r.sigma2)));
      }
      medians.push_back(median(cv));
    }
    const bool ok = medians[0] > medians[1] && medians[1] > medians[2];
    return Outcome{ok, "median std/mean of held-out sigma2 for lambda_C = 0, 0.1, 1: " +
                           list(medians) + " (must strictly decrease)"};
  });

  criterion(9, "uncertainty learns quality", 900.0, [] {
    std::vector<double> rho;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto& r = trained(seed, 0.1);
      rho.push_back(spearman(heldout(r, r.sigma2), heldout(r, r.data.noise)));
    }
    const double m = median(rho);
    // Unconstrained runs from criterion 8, for context only.
    std::vector<double> free_rho;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto& r = trained(seed, 0.0);
      free_rho.push_back(spearman(heldout(r, r.sigma2), heldout(r, r.data.noise)));
    }
    return Outcome{m >= 0.6, "held-out Spearman(sigma2, tau) per seed " + list(rho) +
                                 ", median " + num(m) + " (need >= 0.6); lambda_C = 0 gives " +
                                 list(free_rho)};
  });

  criterion(10, "risk-controlled gain", 600.0, [] {
    std::vector<double> acc0, acc2, cos0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto& r = trained(seed, 0.1);
      const auto store = r.data.store.with_scalar_sigma2(r.sigma2);
      EmbeddingStore sub(store.dim(), SigmaMode::Scalar);
      for (auto i : r.split.holdout) sub.add(store.at(i).embedding, store.at(i).label);
      const auto proto = make_pairs(sub, 1000, 1000, seed);
      std::vector<std::pair<std::size_t, std::size_t>> idx;
      std::vector<std::pair<double, double>> unc;
      std::vector<std::uint8_t> same;
      for (const auto& p : proto.pairs) {
        idx.emplace_back(p.a, p.b);
        unc.emplace_back(sub.embedding(p.a).scalar_sigma2(),
                         sub.embedding(p.b).scalar_sigma2());
        same.push_back(p.same);
      }
      const auto fast = score_pairs(sub, idx, MetricKind::FastMls);
      const auto cos = score_pairs(sub, idx, MetricKind::Cosine);
      const std::vector<double> ratios{0.0, 0.1, 0.2, 0.3};
      const auto curve = reject_curve(fast, unc, same, RejectFilter::Max, ratios);
      acc0.push_back(curve.points[0].accuracy);
      acc2.push_back(curve.points[2].accuracy);
      cos0.push_back(verification_accuracy(cos, same));
    }
    const double a0 = median(acc0), a2 = median(acc2), c0 = median(cos0);
    const bool ok = a2 >= a0 && a0 >= c0 - 0.005;
    return Outcome{ok, "median fastmls accuracy r=0 " + num(a0) + ", r=0.2 " + num(a2) +
                           "; cosine r=0 " + num(c0) +
                           " (need r=0.2 >= r=0 and fastmls >= cosine - 0.005)"};
  });

  criterion(11, "template fusion", 5.0, [] {
    Rng rng(111);
    bool ok = true;
    for (int trial = 0; trial < 1000; ++trial) {
      std::vector<ProbEmbedding> members;
      const std::size_t k = 1 + rng.index(8);
      double min_s2 = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < k; ++i) {
        members.push_back(random_scalar(rng, 32));
        min_s2 = std::min(min_s2, members.back().scalar_sigma2());
      }
      const auto fused = aggregate_template(members);
      ok = ok && fused.scalar_sigma2() <= min_s2;
      const std::vector<ProbEmbedding> one{members[0]};
      ok = ok && aggregate_template(one) == members[0];
    }
    return Outcome{ok, ok ? "fused sigma2 <= min member on 1000 templates; single member is identity"
                          : "property violated"};
  });

  criterion(12, "format round trips", 0.0, [] {
    Rng rng(112);
    std::size_t stores = 0, heads = 0;
    bool ok = true;
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t dim = 1 + rng.index(40);
      const auto mode = rng.index(2) ? SigmaMode::PerDim : SigmaMode::Scalar;
      EmbeddingStore s(dim, mode);
      const std::size_t n = rng.index(30);
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> var(mode == SigmaMode::Scalar ? 1 : dim);
        for (auto& v : var) v = rng.uniform(0.01, 5.0);
        s.add(mode == SigmaMode::Scalar ? make_embedding(gaussian(rng, dim), var[0])
                                        : make_embedding(gaussian(rng, dim), var),
              static_cast<std::int64_t>(rng.index(1000)) - 500);
      }
      const auto bytes = encode_store(s);
      ok = ok && encode_store(decode_store(bytes)) == bytes;
      ++stores;

      auto h = init_head(1 + rng.index(50), 1 + rng.index(20), rng.index(1u << 30));
      for (auto& b : h.b1) b = rng.normal();
      h.b2 = rng.normal();
      const auto hb = encode_head(h);
      ok = ok && encode_head(decode_head(hb)) == hb;
      ++heads;
    }
    return Outcome{ok, "encode(decode(bytes)) == bytes for " + std::to_string(stores) +
                           " stores and " + std::to_string(heads) + " head checkpoints"};
  });

  std::printf("%d of 12 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
