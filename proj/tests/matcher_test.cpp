#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstring>
#include <vector>

#include <json.hpp>

#include "probembed/error.hpp"
#include "probembed/matcher.hpp"
#include "test_util.hpp"

using namespace probembed;

namespace {

constexpr MetricKind kAll[] = {MetricKind::Cosine, MetricKind::MlsD,
                               MetricKind::Mls1Full, MetricKind::FastMls};

double max_abs_vs_reference(const ScoreMatrix& m, const EmbeddingStore& g,
                            const EmbeddingStore& p) {
  double worst = 0.0;
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) {
      const double ref = score(m.metric, g.embedding(r), p.embedding(c));
      worst = std::max(worst, std::abs(static_cast<double>(m.at(r, c)) - ref));
    }
  }
  return worst;
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

TEST(ScorePairs, SelfPairFastMls) {
  EmbeddingStore s(4, SigmaMode::Scalar);
  s.add(make_embedding(std::vector<double>{1, 2, 3, 4}, 0.5), 0);
  const std::vector<std::pair<std::size_t, std::size_t>> pairs{{0, 0}};
  const auto out = score_pairs(s, pairs, MetricKind::FastMls);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_NEAR(out[0], 0.0, 1e-12);
}

TEST(ScorePairs, LfwScaleMatchesReference) {
  const auto store = random_store(12000, 256, 1);
  Rng rng(2);
  std::vector<std::pair<std::size_t, std::size_t>> pairs(6000);
  for (auto& [i, j] : pairs) {
    i = rng.index(store.size());
    j = rng.index(store.size());
  }
  for (auto metric : kAll) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto out = score_pairs(store, pairs, metric);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EXPECT_LT(secs, 1.0) << to_string(metric);
    double worst = 0.0;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const double ref = score(metric, store.embedding(pairs[k].first),
                               store.embedding(pairs[k].second));
      worst = std::max(worst, std::abs(out[k] - ref));
    }
    EXPECT_LE(worst, 1e-5) << to_string(metric);
  }
}

TEST(ScorePairs, Errors) {
  const auto store = random_store(3, 4, 0);
  const std::vector<std::pair<std::size_t, std::size_t>> bad{{0, 3}};
  EXPECT_EQ(code_of([&] { score_pairs(store, bad, MetricKind::Cosine); }),
            ErrorCode::IndexOutOfRange);
  EmbeddingStore per_dim(2, SigmaMode::PerDim);
  per_dim.add(make_embedding(std::vector<double>{1, 0}, std::vector<double>{1, 1}), 0);
  const std::vector<std::pair<std::size_t, std::size_t>> ok{{0, 0}};
  EXPECT_EQ(code_of([&] { score_pairs(per_dim, ok, MetricKind::FastMls); }),
            ErrorCode::MetricSigmaModeMismatch);
  EXPECT_NO_THROW(score_pairs(per_dim, ok, MetricKind::MlsD));
}

TEST(MatchMatrix, SingleRecordSelfScore) {
  EmbeddingStore s(3, SigmaMode::Scalar);
  s.add(make_embedding(std::vector<double>{0, 3, 4}, 0.5), 0);
  for (auto metric : kAll) {
    const auto m = match_matrix(s, s, metric);
    ASSERT_EQ(m.rows, 1u);
    ASSERT_EQ(m.cols, 1u);
    EXPECT_NEAR(m.at(0, 0), score(metric, s.embedding(0), s.embedding(0)), 1e-6);
  }
}

TEST(MatchMatrix, BatchedEqualsScalarReference) {
  const auto g = random_store(150, 64, 10);
  const auto p = random_store(170, 64, 11);
  for (auto metric : kAll) {
    const auto m = match_matrix(g, p, metric, {.block_rows = 64});
    EXPECT_EQ(m.metric, metric);
    EXPECT_LE(max_abs_vs_reference(m, g, p), 1e-5) << to_string(metric);
  }
  // 256-D for the metrics whose magnitudes stay O(1).
  const auto g256 = random_store(80, 256, 12);
  const auto p256 = random_store(90, 256, 13);
  for (auto metric : {MetricKind::Cosine, MetricKind::FastMls}) {
    EXPECT_LE(max_abs_vs_reference(match_matrix(g256, p256, metric), g256, p256), 1e-5);
  }
}

TEST(MatchMatrix, PerDimStoreMlsD) {
  Rng rng(6);
  EmbeddingStore g(16, SigmaMode::PerDim), p(16, SigmaMode::PerDim);
  for (int i = 0; i < 20; ++i) g.add(probembed::testing::random_per_dim(rng, 16), i);
  for (int i = 0; i < 25; ++i) p.add(probembed::testing::random_per_dim(rng, 16), i);
  const auto m = match_matrix(g, p, MetricKind::MlsD);
  EXPECT_LE(max_abs_vs_reference(m, g, p), 1e-5);
  EXPECT_NO_THROW(match_matrix(g, p, MetricKind::Cosine));
  EXPECT_EQ(code_of([&] { match_matrix(g, p, MetricKind::FastMls); }),
            ErrorCode::MetricSigmaModeMismatch);
}

TEST(MatchMatrix, TransposeConsistency) {
  const auto g = random_store(40, 32, 20);
  const auto p = random_store(55, 32, 21);
  for (auto metric : kAll) {
    const auto gp = match_matrix(g, p, metric, {.block_rows = 7});
    const auto pg = match_matrix(p, g, metric, {.block_rows = 7});
    for (std::size_t r = 0; r < gp.rows; ++r) {
      for (std::size_t c = 0; c < gp.cols; ++c) {
        EXPECT_NEAR(gp.at(r, c), pg.at(c, r), 1e-5);
      }
    }
  }
}

TEST(MatchMatrix, BitwiseStableAcrossRuns) {
  const auto g = random_store(100, 48, 30);
  const auto p = random_store(100, 48, 31);
  for (unsigned threads : {1u, 3u}) {
    for (auto metric : kAll) {
      const MatchOptions opts{.block_rows = 16, .threads = threads};
      const auto a = match_matrix(g, p, metric, opts);
      const auto b = match_matrix(g, p, metric, opts);
      ASSERT_EQ(a.scores.size(), b.scores.size());
      EXPECT_EQ(std::memcmp(a.scores.data(), b.scores.data(),
                            a.scores.size() * sizeof(float)),
                0);
    }
  }
}

TEST(MatchMatrix, Errors) {
  const auto g = random_store(10, 8, 1);
  const auto p = random_store(10, 9, 2);
  EXPECT_EQ(code_of([&] { match_matrix(g, p, MetricKind::Cosine); }),
            ErrorCode::DimMismatch);
  EXPECT_EQ(code_of([&] {
              match_matrix(g, g, MetricKind::Cosine, {.max_entries = 99});
            }),
            ErrorCode::AllocationFailure);
  EXPECT_NO_THROW(match_matrix(g, g, MetricKind::Cosine, {.max_entries = 100}));
}

TEST(ScoreFile, RoundTripAndErrors) {
  const auto g = random_store(7, 8, 1);
  const auto p = random_store(5, 8, 2);
  const auto m = match_matrix(g, p, MetricKind::FastMls);
  const auto bytes = encode_scores(m);
  ASSERT_EQ(bytes.size(), 4 + 4 + 1 + 4 + 4 + 7 * 5 * 4u);
  EXPECT_EQ(bytes[8], 3);  // FastMls id
  const auto back = decode_scores(bytes);
  EXPECT_EQ(back.rows, 7u);
  EXPECT_EQ(back.cols, 5u);
  EXPECT_EQ(back.metric, MetricKind::FastMls);
  EXPECT_EQ(back.scores, m.scores);
  EXPECT_EQ(encode_scores(back), bytes);

  auto bad = bytes;
  bad[1] = 'Q';
  EXPECT_EQ(code_of([&] { decode_scores(bad); }), ErrorCode::BadMagic);
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 1);
  EXPECT_EQ(code_of([&] { decode_scores(cut); }), ErrorCode::TruncatedFile);
}

TEST(Bench, TinyRunReportsPositiveTime) {
  const auto rep = bench(MetricKind::FastMls, 1, 1, 8, 3, 5);
  EXPECT_EQ(rep.wall_seconds.size(), 3u);
  EXPECT_GT(rep.median_seconds, 0.0);
  EXPECT_GT(rep.matches_per_second, 0.0);
  const auto j = nlohmann::json::parse(rep.to_json());
  EXPECT_EQ(j["metric"], "fastmls");
  EXPECT_EQ(j["repeats"], 3);
  EXPECT_EQ(code_of([] { bench(MetricKind::Cosine, 1, 1, 8, 2, 0); }),
            ErrorCode::InvalidConfig);
}

TEST(Bench, MedianOfRepeats) {
  const auto rep = bench(MetricKind::Cosine, 20, 30, 16, 5, 1);
  auto sorted = rep.wall_seconds;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(rep.median_seconds, sorted[2]);
}
