#include <gtest/gtest.h>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>
#include <set>
#include <vector>

#include "probembed/error.hpp"
#include "probembed/losses.hpp"
#include "test_util.hpp"

using namespace probembed;
using Big = boost::multiprecision::cpp_bin_float_50;

namespace {

LabeledBatch random_batch(Rng& rng, std::size_t identities, std::size_t per_id,
                          std::size_t dim, double s_spread = 1.0) {
  LabeledBatch b;
  b.dim = dim;
  for (std::size_t k = 0; k < identities; ++k) {
    const auto center = probembed::testing::gaussian_vector(rng, dim);
    for (std::size_t q = 0; q < per_id; ++q) {
      auto v = center;
      for (auto& x : v) x += 0.8 * rng.normal();
      const auto e = make_embedding(v, 1.0);
      b.mu.insert(b.mu.end(), e.mu().begin(), e.mu().end());
      b.s.push_back(rng.uniform(-s_spread, s_spread));
      b.labels.push_back(static_cast<std::int64_t>(k));
    }
  }
  return b;
}

Big sq_dist_big(const LabeledBatch& b, std::size_t i, std::size_t j) {
  Big c = 0;
  for (std::size_t l = 0; l < b.dim; ++l) c += Big(b.row(i)[l]) * Big(b.row(j)[l]);
  return 2 - 2 * c;
}

// Naive O(M^2) loop in 50-digit arithmetic.
double oracle_loss_s(const LabeledBatch& b) {
  Big sum = 0;
  std::size_t np = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    for (std::size_t j = i + 1; j < b.size(); ++j) {
      if (b.labels[i] != b.labels[j]) continue;
      const Big t = exp(Big(b.s[i])) + exp(Big(b.s[j]));
      sum += sq_dist_big(b, i, j) / t + log(t);
      ++np;
    }
  }
  return static_cast<double>(sum / np);
}

double oracle_loss_c(const std::vector<double>& s) {
  Big avg = 0;
  for (double v : s) avg += exp(Big(v));
  avg /= s.size();
  Big sum = 0;
  for (double v : s) sum += abs(exp(Big(v)) / avg - 1);
  return static_cast<double>(sum / s.size());
}

// Naive O(M^3) loop over valid (anchor, positive, negative) patterns.
double oracle_loss_id(const LabeledBatch& b, double margin) {
  Big sum = 0;
  std::size_t count = 0;
  const std::size_t m = b.size();
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t p = 0; p < m; ++p) {
      if (p == a || b.labels[p] != b.labels[a]) continue;
      for (std::size_t n = 0; n < m; ++n) {
        if (b.labels[n] == b.labels[a]) continue;
        const Big va = exp(Big(b.s[a]));
        const Big br = sq_dist_big(b, a, p) / (va + exp(Big(b.s[p]))) -
                       sq_dist_big(b, a, n) / (va + exp(Big(b.s[n]))) + margin;
        if (br > 0) sum += br;
        ++count;
      }
    }
  }
  return static_cast<double>(sum / count);
}

LabeledBatch two_identical(double sigma2) {
  LabeledBatch b;
  b.dim = 2;
  b.mu = {0.6, 0.8, 0.6, 0.8};
  b.s = {std::log(sigma2), std::log(sigma2)};
  b.labels = {1, 1};
  return b;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST(LossConfigTest, DefaultsMatchPublishedValues) {
  const LossConfig cfg;
  EXPECT_EQ(cfg.lambda_c, 0.1);
  EXPECT_EQ(cfg.lambda_id, 0.0001);
  EXPECT_EQ(cfg.margin, 3.0);
  EXPECT_FALSE(cfg.stop_grad_sigma_avg);
}

TEST(LossS, IdenticalPositivePairIsZero) {
  const auto term = loss_s(two_identical(0.5));
  EXPECT_NEAR(term.value, 0.0, 1e-12);
}

TEST(LossS, NoPositivePairs) {
  auto b = two_identical(0.5);
  b.labels = {1, 2};
  EXPECT_EQ(code_of([&] { loss_s(b); }), ErrorCode::NoPositivePairs);
}

TEST(LossS, MatchesBruteForce) {
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    auto b = random_batch(rng, 2, 2, 6);
    EXPECT_NEAR(loss_s(b).value, oracle_loss_s(b), 1e-13);
  }
  auto big = random_batch(rng, 8, 16, 16);
  EXPECT_NEAR(loss_s(big).value, oracle_loss_s(big), 1e-12);
}

TEST(LossS, UnitVarianceClosedForm) {
  Rng rng(2);
  auto b = random_batch(rng, 4, 5, 10);
  std::fill(b.s.begin(), b.s.end(), 0.0);
  double sum_d = 0.0;
  std::size_t np = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    for (std::size_t j = i + 1; j < b.size(); ++j) {
      if (b.labels[i] != b.labels[j]) continue;
      double c = 0.0;
      for (std::size_t l = 0; l < b.dim; ++l) c += b.row(i)[l] * b.row(j)[l];
      sum_d += 2.0 - 2.0 * c;
      ++np;
    }
  }
  EXPECT_NEAR(loss_s(b).value, sum_d / np / 2.0 + std::log(2.0), 1e-12);
}

TEST(LossC, Examples) {
  LabeledBatch b;
  b.s = {0.7, 0.7, 0.7};
  EXPECT_EQ(loss_c(b).value, 0.0);
  b.s = {std::log(1.0), std::log(3.0)};
  EXPECT_NEAR(loss_c(b).value, 0.5, 1e-12);
}

TEST(LossC, RandomValueAndGradientAgainstFiniteDifferences) {
  Rng rng(3);
  LabeledBatch b;
  for (int i = 0; i < 16; ++i) b.s.push_back(rng.uniform(-2, 2));
  const auto term = loss_c(b);
  EXPECT_NEAR(term.value, oracle_loss_c(b.s), 1e-13);
  for (std::size_t i = 0; i < b.s.size(); ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(b.s[i]));
    auto up = b.s, down = b.s;
    up[i] += h;
    down[i] -= h;
    const double fd = (oracle_loss_c(up) - oracle_loss_c(down)) / (2 * h);
    EXPECT_NEAR(term.grad_s[i], fd, 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST(LossC, BoundsAndScaleInvariance) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    LabeledBatch b;
    const std::size_t m = 1 + rng.index(40);
    for (std::size_t i = 0; i < m; ++i) b.s.push_back(rng.uniform(-5, 5));
    const double v = loss_c(b).value;
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 2.0 * (m - 1) / m + 1e-12);
    for (double c : {0.1, 10.0}) {
      LabeledBatch scaled = b;
      for (auto& s : scaled.s) s += std::log(c);
      EXPECT_NEAR(loss_c(scaled).value, v, 1e-12);
    }
  }
}

TEST(LossC, StopGradientDropsMeanCoupling) {
  LabeledBatch b;
  b.s = {std::log(1.0), std::log(3.0)};
  const auto full = loss_c(b, false);
  const auto stopped = loss_c(b, true);
  // With the mean frozen at 2: d/ds_i |r_i - 1| / M = sign * r_i / M.
  EXPECT_NEAR(stopped.grad_s[0], -0.5 / 2, 1e-15);
  EXPECT_NEAR(stopped.grad_s[1], 1.5 / 2, 1e-15);
  EXPECT_NE(full.grad_s[0], stopped.grad_s[0]);
  EXPECT_EQ(full.value, stopped.value);
}

TEST(LossId, EqualDistancesGiveMargin) {
  LabeledBatch b;
  b.dim = 2;
  // anchor (1,0), positive (0,1), negative (0,-1): both distances are 2.
  b.mu = {1, 0, 0, 1, 0, -1};
  b.s = {0.0, 0.0, 0.0};
  b.labels = {0, 0, 1};
  const std::vector<Triplet> t{{0, 1, 2}};
  EXPECT_NEAR(loss_id(b, 3.0, t).value, 3.0, 1e-12);
}

TEST(LossId, InactiveHingeContributesNothing) {
  LabeledBatch b;
  b.dim = 2;
  b.mu = {1, 0, 1, 0, -1, 0};  // positive coincides, negative is opposite
  b.s = {std::log(0.1), std::log(0.1), std::log(0.1)};
  b.labels = {0, 0, 1};
  const std::vector<Triplet> t{{0, 1, 2}};
  const auto term = loss_id(b, 3.0, t);  // bracket = 0 - 4/0.2 + 3 < 0
  EXPECT_EQ(term.value, 0.0);
  for (double g : term.grad_s) EXPECT_EQ(g, 0.0);
  for (double g : term.grad_mu) EXPECT_EQ(g, 0.0);
}

TEST(LossId, ExhaustiveMatchesTripleLoop) {
  Rng rng(5);
  auto b = random_batch(rng, 8, 16, 8, 0.3);
  const auto triplets = build_triplets(b.labels, 1'000'000, 0);
  EXPECT_EQ(triplets.size(), 128u * 15u * 112u);
  const auto term = loss_id(b, 3.0, triplets);
  EXPECT_NEAR(term.value, oracle_loss_id(b, 3.0), 1e-12);
}

TEST(LossId, GradientsAgainstFiniteDifferences) {
  Rng rng(6);
  auto b = random_batch(rng, 3, 4, 5, 0.5);
  const auto triplets = build_triplets(b.labels, 1000, 0);
  const double margin = 0.8;  // keeps a mix of active and inactive triplets
  const auto term = loss_id(b, margin, triplets);
  const double h = 1e-6;
  for (std::size_t i = 0; i < b.size(); ++i) {
    auto up = b, down = b;
    up.s[i] += h;
    down.s[i] -= h;
    const double fd = (loss_id(up, margin, triplets).value -
                       loss_id(down, margin, triplets).value) / (2 * h);
    EXPECT_NEAR(term.grad_s[i], fd, 1e-6);
  }
  for (std::size_t k = 0; k < b.mu.size(); ++k) {
    auto up = b, down = b;
    up.mu[k] += h;
    down.mu[k] -= h;
    const double fd = (loss_id(up, margin, triplets).value -
                       loss_id(down, margin, triplets).value) / (2 * h);
    EXPECT_NEAR(term.grad_mu[k], fd, 1e-6);
  }
}

TEST(LossId, NoTriplets) {
  EXPECT_EQ(code_of([] { loss_id(two_identical(1.0), 3.0); }), ErrorCode::NoTriplets);
}

TEST(Triplets, CapSubsampleIsUniformSubsetAndDeterministic) {
  std::vector<std::int64_t> labels;
  for (int k = 0; k < 8; ++k) {
    for (int q = 0; q < 16; ++q) labels.push_back(k);
  }
  const auto a = build_triplets(labels, 10000, 42);
  const auto b = build_triplets(labels, 10000, 42);
  const auto c = build_triplets(labels, 10000, 43);
  EXPECT_EQ(a.size(), 10000u);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  std::set<std::tuple<std::size_t, std::size_t, std::size_t>> seen;
  for (const auto& t : a) {
    EXPECT_NE(t.anchor, t.positive);
    EXPECT_EQ(labels[t.anchor], labels[t.positive]);
    EXPECT_NE(labels[t.anchor], labels[t.negative]);
    seen.insert({t.anchor, t.positive, t.negative});
  }
  EXPECT_EQ(seen.size(), a.size());
  // Anchors cover the whole batch roughly evenly (each owns 1/128 of the set).
  std::vector<int> per_anchor(128, 0);
  for (const auto& t : a) ++per_anchor[t.anchor];
  for (int n : per_anchor) {
    EXPECT_GT(n, 40);
    EXPECT_LT(n, 120);
  }
}

TEST(Triplets, UnevenClassSizes) {
  const std::vector<std::int64_t> labels{0, 0, 0, 1, 2, 2};
  const auto t = build_triplets(labels, 1000, 0);
  // anchors in class 0: 3 * 2 * 3; class 1 has no positive; class 2: 2 * 1 * 4
  EXPECT_EQ(t.size(), 18u + 8u);
}

TEST(TotalLoss, ZeroWeightsReduceToLossS) {
  Rng rng(7);
  auto b = random_batch(rng, 4, 4, 8);
  LossConfig cfg;
  cfg.lambda_c = 0.0;
  cfg.lambda_id = 0.0;
  const auto rep = total_loss(b, cfg);
  EXPECT_EQ(rep.total, rep.l_s);
  EXPECT_EQ(rep.grad_s, loss_s(b).grad_s);
}

TEST(TotalLoss, LinearComposition) {
  Rng rng(8);
  auto b = random_batch(rng, 4, 8, 16);
  const LossConfig cfg;
  const auto rep = total_loss(b, cfg);
  EXPECT_NEAR(rep.total, rep.l_s + 0.1 * rep.l_c + 0.0001 * rep.l_id, 1e-12);
  EXPECT_EQ(rep.n_positive_pairs, 4u * 28u);
  EXPECT_EQ(rep.n_triplets, 32u * 7u * 24u);
  EXPECT_NEAR(rep.l_c, loss_c(b).value, 1e-15);
}

TEST(TotalLoss, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    auto b = random_batch(rng, 4, 8, 16);
    const auto res = grad_check(b, LossConfig{}, 1e-5);
    EXPECT_LE(res.max_relative_error, 1e-4);
  }
}

TEST(GradCheck, SmoothIdenticalPair) {
  LossConfig cfg;
  cfg.lambda_c = 0.0;
  cfg.lambda_id = 0.0;
  const auto res = grad_check(two_identical(0.7), cfg, 1e-5);
  EXPECT_LT(res.max_relative_error, 1e-6);
  EXPECT_TRUE(res.kink_coordinates.empty());
}

TEST(GradCheck, RatioAtOneIsExcluded) {
  Rng rng(10);
  auto b = random_batch(rng, 2, 3, 4);
  // Choose s_5 so that sigma2_5 equals the mean of all six variances.
  double rest = 0.0;
  for (int i = 0; i < 5; ++i) rest += std::exp(b.s[i]);
  b.s[5] = std::log(rest / 5.0);
  const auto res = grad_check(b, LossConfig{}, 1e-5);
  EXPECT_EQ(res.kink_coordinates, std::vector<std::size_t>{5});
  EXPECT_LE(res.max_relative_error, 1e-4);
}

TEST(GradCheck, StopGradientVariant) {
  Rng rng(11);
  auto b = random_batch(rng, 4, 4, 8);
  LossConfig cfg;
  cfg.stop_grad_sigma_avg = true;
  // The analytic gradient no longer matches the full derivative.
  EXPECT_GT(grad_check(b, cfg, 1e-5).max_relative_error, 1e-3);
}
