#include "probembed/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <string>

#include "probembed/error.hpp"
#include "probembed/format.hpp"
#include "probembed/rng.hpp"

namespace probembed {

namespace {

void check_parallel(std::size_t a, std::size_t b) {
  if (a != b) {
    throw Error(ErrorCode::InvalidArgument,
                "array lengths differ: " + std::to_string(a) + " vs " +
                    std::to_string(b));
  }
}

std::pair<std::size_t, std::size_t> class_counts(
    std::span<const std::uint8_t> same) {
  std::size_t pos = 0;
  for (auto s : same) pos += s ? 1 : 0;
  return {pos, same.size() - pos};
}

void require_both_classes(std::span<const std::uint8_t> same) {
  const auto [pos, neg] = class_counts(same);
  if (pos == 0 || neg == 0) {
    throw Error(ErrorCode::SingleClassInput,
                std::to_string(pos) + " positive and " + std::to_string(neg) +
                    " negative pairs");
  }
}

// Indices sorted by ascending score, stable in index.
std::vector<std::size_t> ascending(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return scores[x] < scores[y]; });
  return order;
}

}  // namespace

std::vector<std::size_t> contiguous_folds(std::size_t n, std::size_t k) {
  if (k == 0 || k > n) {
    throw Error(ErrorCode::InvalidConfig,
                "fold count must be in [1, " + std::to_string(n) + "]");
  }
  std::vector<std::size_t> folds(n);
  for (std::size_t i = 0; i < n; ++i) folds[i] = i * k / n;
  return folds;
}

PairProtocol make_pairs(const EmbeddingStore& store, std::size_t n_positive,
                        std::size_t n_negative, std::uint64_t seed) {
  std::map<std::int64_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < store.size(); ++i) members[store.label(i)].push_back(i);
  std::vector<const std::vector<std::size_t>*> multi;
  for (const auto& [label, idx] : members) {
    if (idx.size() >= 2) multi.push_back(&idx);
  }
  if ((n_positive > 0 && multi.empty()) || (n_negative > 0 && members.size() < 2)) {
    throw Error(ErrorCode::SingleClassInput,
                "store cannot supply the requested pair classes");
  }
  Rng rng(seed);
  PairProtocol p;
  p.pairs.reserve(n_positive + n_negative);
  for (std::size_t k = 0; k < n_positive; ++k) {
    const auto& idx = *multi[rng.index(multi.size())];
    const std::size_t x = rng.index(idx.size());
    std::size_t y = rng.index(idx.size() - 1);
    if (y >= x) ++y;
    p.pairs.push_back({idx[x], idx[y], true});
  }
  for (std::size_t k = 0; k < n_negative; ++k) {
    std::size_t a, b;
    do {
      a = rng.index(store.size());
      b = rng.index(store.size());
    } while (store.label(a) == store.label(b));
    p.pairs.push_back({a, b, false});
  }
  rng.shuffle(std::span<PairProtocol::Pair>(p.pairs));
  return p;
}

ThresholdResult best_threshold(std::span<const double> scores,
                               std::span<const std::uint8_t> same) {
  check_parallel(scores.size(), same.size());
  if (scores.size() < 2) {
    throw Error(ErrorCode::InvalidArgument, "need at least 2 scored pairs");
  }
  require_both_classes(same);
  const auto order = ascending(scores);
  const std::size_t n = scores.size();
  const auto [n_pos, n_neg] = class_counts(same);

  // Threshold at the k-th smallest distinct score: everything below it is
  // "different". Start with all "same" (threshold = min score).
  std::size_t neg_below = 0, pos_below = 0;
  std::size_t best_correct = 0;
  double best_thr = scores[order[0]];
  std::size_t k = 0;
  while (true) {
    const std::size_t correct = neg_below + (n_pos - pos_below);
    const double thr = k < n ? scores[order[k]] : std::numeric_limits<double>::infinity();
    if (correct > best_correct) {
      best_correct = correct;
      best_thr = thr;
    }
    if (k >= n) break;
    // Move past every pair tied at this score.
    const double v = scores[order[k]];
    while (k < n && scores[order[k]] == v) {
      (same[order[k]] ? pos_below : neg_below) += 1;
      ++k;
    }
  }
  (void)n_neg;
  return {static_cast<double>(best_correct) / static_cast<double>(n), best_thr};
}

double verification_accuracy(std::span<const double> scores,
                             std::span<const std::uint8_t> same,
                             std::span<const std::size_t> folds) {
  check_parallel(scores.size(), same.size());
  if (folds.empty()) return best_threshold(scores, same).accuracy;
  check_parallel(scores.size(), folds.size());
  require_both_classes(same);

  const std::size_t k = *std::max_element(folds.begin(), folds.end()) + 1;
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<double> train_s, test_s;
    std::vector<std::uint8_t> train_y, test_y;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (folds[i] == f) {
        test_s.push_back(scores[i]);
        test_y.push_back(same[i]);
      } else {
        train_s.push_back(scores[i]);
        train_y.push_back(same[i]);
      }
    }
    if (test_s.empty()) continue;
    const double thr = best_threshold(train_s, train_y).threshold;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test_s.size(); ++i) {
      correct += ((test_s[i] >= thr) == (test_y[i] != 0)) ? 1 : 0;
    }
    sum += static_cast<double>(correct) / static_cast<double>(test_s.size());
    ++used;
  }
  return sum / static_cast<double>(used);
}

std::vector<RocPoint> roc(std::span<const double> scores,
                          std::span<const std::uint8_t> same) {
  check_parallel(scores.size(), same.size());
  require_both_classes(same);
  const auto [n_pos, n_neg] = class_counts(same);
  auto order = ascending(scores);
  std::reverse(order.begin(), order.end());

  std::vector<RocPoint> curve{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  std::size_t tp = 0, fp = 0, k = 0;
  while (k < order.size()) {
    const double v = scores[order[k]];
    while (k < order.size() && scores[order[k]] == v) {
      (same[order[k]] ? tp : fp) += 1;
      ++k;
    }
    curve.push_back({v, static_cast<double>(fp) / static_cast<double>(n_neg),
                     static_cast<double>(tp) / static_cast<double>(n_pos)});
  }
  return curve;
}

TprAtFpr tpr_at_fpr(std::span<const RocPoint> curve, double target_fpr) {
  if (curve.empty()) {
    throw Error(ErrorCode::InvalidArgument, "empty ROC curve");
  }
  // Upper envelope: best tpr per distinct fpr; fpr is non-decreasing along
  // the curve so equal-fpr runs are adjacent.
  std::vector<std::pair<double, double>> env;
  for (const auto& p : curve) {
    if (!env.empty() && env.back().first == p.fpr) {
      env.back().second = std::max(env.back().second, p.tpr);
    } else {
      env.emplace_back(p.fpr, p.tpr);
    }
  }
  const double smallest_positive =
      env.size() > 1 ? env[1].first : (env[0].first > 0 ? env[0].first : 1.0);
  if (target_fpr < env.front().first ||
      (env.front().first == 0.0 && target_fpr < smallest_positive)) {
    return {env.front().second, true};
  }
  for (std::size_t i = 1; i < env.size(); ++i) {
    if (target_fpr <= env[i].first) {
      const auto [x0, y0] = env[i - 1];
      const auto [x1, y1] = env[i];
      const double w = (target_fpr - x0) / (x1 - x0);
      return {y0 + w * (y1 - y0), false};
    }
  }
  return {env.back().second, false};
}

ProbEmbedding aggregate_template(std::span<const ProbEmbedding> members) {
  if (members.empty()) {
    throw Error(ErrorCode::EmptyTemplate, "template has no members");
  }
  if (members.size() == 1) {
    if (members[0].sigma_mode() != SigmaMode::Scalar) {
      throw Error(ErrorCode::MetricSigmaModeMismatch,
                  "template fusion needs scalar variances");
    }
    return members[0];
  }
  const std::size_t dim = members.front().dim();
  std::vector<double> acc(dim, 0.0);
  double precision = 0.0;
  double min_sigma2 = std::numeric_limits<double>::infinity();
  for (const auto& m : members) {
    if (m.dim() != dim) {
      throw Error(ErrorCode::DimMismatch, "template members differ in dim");
    }
    if (m.sigma_mode() != SigmaMode::Scalar) {
      throw Error(ErrorCode::MetricSigmaModeMismatch,
                  "template fusion needs scalar variances");
    }
    const double w = 1.0 / m.scalar_sigma2();
    precision += w;
    min_sigma2 = std::min(min_sigma2, m.scalar_sigma2());
    const auto mu = m.mu();
    for (std::size_t l = 0; l < dim; ++l) acc[l] += w * mu[l];
  }
  for (auto& x : acc) x /= precision;
  // 1 / sum(w) can round one ulp above the smallest member.
  return make_embedding(acc, std::min(1.0 / precision, min_sigma2));
}

RejectCurve reject_curve(std::span<const double> scores,
                         std::span<const std::pair<double, double>> pair_sigma2,
                         std::span<const std::uint8_t> same,
                         RejectFilter filter, std::span<const double> ratios) {
  const std::size_t n = scores.size();
  check_parallel(n, pair_sigma2.size());
  check_parallel(n, same.size());
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    if (!(ratios[i] >= 0.0 && ratios[i] < 1.0) ||
        (i > 0 && !(ratios[i] > ratios[i - 1]))) {
      throw Error(ErrorCode::InvalidArgument,
                  "ratios must be strictly increasing in [0, 1)");
    }
  }

  std::vector<double> unc(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto [sa, sb] = pair_sigma2[i];
    unc[i] = filter == RejectFilter::Add ? sa + sb : std::max(sa, sb);
  }
  // Rejection order: most uncertain first; among ties the later index goes first.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return unc[x] != unc[y] ? unc[x] > unc[y] : x > y;
  });

  RejectCurve curve{filter, {}};
  std::vector<std::uint8_t> keep(n);
  for (double r : ratios) {
    // Guard r * n against representation error (0.3 * 10 = 3.0000000000000004).
    const double raw = r * static_cast<double>(n);
    const auto drop = static_cast<std::size_t>(std::ceil(raw - 1e-9 * std::max(1.0, raw)));
    std::fill(keep.begin(), keep.end(), 1);
    for (std::size_t k = 0; k < drop && k < n; ++k) keep[order[k]] = 0;

    std::vector<double> kept_s;
    std::vector<std::uint8_t> kept_y;
    for (std::size_t i = 0; i < n; ++i) {
      if (!keep[i]) continue;
      kept_s.push_back(scores[i]);
      kept_y.push_back(same[i]);
    }
    const auto [pos, neg] = class_counts(kept_y);
    if (kept_s.size() < 2 || pos == 0 || neg == 0) {
      throw Error(ErrorCode::AllPairsRejected,
                  "ratio " + std::to_string(r) + " leaves " +
                      std::to_string(kept_s.size()) + " pairs");
    }
    curve.points.push_back(
        {r, verification_accuracy(kept_s, kept_y), kept_s.size()});
  }
  return curve;
}

double ScoreHistogram::overlap() const {
  std::size_t np = 0, nn = 0;
  for (auto c : pos) np += c;
  for (auto c : neg) nn += c;
  if (np == 0 || nn == 0) return 0.0;
  double o = 0.0;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    o += std::min(static_cast<double>(pos[i]) / static_cast<double>(np),
                  static_cast<double>(neg[i]) / static_cast<double>(nn));
  }
  return o;
}

ScoreHistogram score_histogram(std::span<const double> scores,
                               std::span<const std::uint8_t> same,
                               std::size_t n_bins) {
  check_parallel(scores.size(), same.size());
  if (n_bins < 2) {
    throw Error(ErrorCode::InvalidArgument, "need at least 2 bins");
  }
  ScoreHistogram h{std::vector<double>(n_bins + 1),
                   std::vector<std::size_t>(n_bins, 0),
                   std::vector<std::size_t>(n_bins, 0)};
  if (scores.empty()) return h;
  const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
  const double lo = *lo_it, hi = *hi_it;
  const double width = (hi - lo) / static_cast<double>(n_bins);
  for (std::size_t b = 0; b <= n_bins; ++b) {
    h.edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(n_bins);
  }
  h.edges[n_bins] = hi;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    std::size_t b = 0;
    if (width > 0.0) {
      b = std::min(n_bins - 1,
                   static_cast<std::size_t>((scores[i] - lo) / width));
    }
    (same[i] ? h.pos : h.neg)[b] += 1;
  }
  return h;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  check_parallel(x.size(), y.size());
  if (x.size() < 2) {
    throw Error(ErrorCode::InvalidArgument, "need at least 2 samples");
  }
  auto ranks = [](std::span<const double> v) {
    const auto order = ascending(v);
    std::vector<double> r(v.size());
    for (std::size_t k = 0; k < order.size();) {
      std::size_t e = k;
      while (e + 1 < order.size() && v[order[e + 1]] == v[order[k]]) ++e;
      const double avg = 0.5 * static_cast<double>(k + e) + 1.0;
      for (std::size_t t = k; t <= e; ++t) r[order[t]] = avg;
      k = e + 1;
    }
    return r;
  };
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = rx[i] - mean, dy = ry[i] - mean;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

void write_roc_csv(std::ostream& out, std::span<const RocPoint> curve) {
  out << "threshold,fpr,tpr\n";
  for (const auto& p : curve) out << fmt(p.threshold) << ',' << fmt(p.fpr) << ',' << fmt(p.tpr) << '\n';
}

void write_reject_csv(std::ostream& out, const RejectCurve& curve) {
  out << "filter,ratio,retained,accuracy\n";
  const char* name = curve.filter == RejectFilter::Add ? "add" : "max";
  for (const auto& p : curve.points) {
    out << name << ',' << fmt(p.ratio) << ',' << p.retained << ',' << fmt(p.accuracy)
        << '\n';
  }
}

void write_histogram_csv(std::ostream& out, const ScoreHistogram& h) {
  out << "bin_lo,bin_hi,pos_count,neg_count\n";
  for (std::size_t b = 0; b < h.pos.size(); ++b) {
    out << fmt(h.edges[b]) << ',' << fmt(h.edges[b + 1]) << ',' << h.pos[b] << ','
        << h.neg[b] << '\n';
  }
}

}  // namespace probembed
