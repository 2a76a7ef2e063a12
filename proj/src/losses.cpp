#include "probembed/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <unordered_set>

#include "probembed/error.hpp"
#include "probembed/rng.hpp"

namespace probembed {

void LossConfig::validate() const {
  if (!(lambda_c >= 0.0) || !(lambda_id >= 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "loss weights must be nonnegative");
  }
  if (!(margin > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "margin must be positive");
  }
  if (triplet_cap == 0) {
    throw Error(ErrorCode::InvalidConfig, "triplet_cap must be >= 1");
  }
}

void LabeledBatch::validate() const {
  const std::size_t m = s.size();
  if (m < 2) {
    throw Error(ErrorCode::InvalidArgument, "batch needs at least 2 samples");
  }
  if (labels.size() != m || mu.size() != m * dim || dim == 0) {
    throw Error(ErrorCode::DimMismatch, "batch arrays disagree in size");
  }
  for (double v : s) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::DivergenceDetected, "non-finite log-variance");
    }
  }
}

std::vector<double> pair_sq_distance(const LabeledBatch& batch) {
  const std::size_t m = batch.size();
  std::vector<double> d(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const auto a = batch.row(i);
    for (std::size_t j = i + 1; j < m; ++j) {
      const auto b = batch.row(j);
      double c = 0.0;
      for (std::size_t l = 0; l < batch.dim; ++l) c += a[l] * b[l];
      d[i * m + j] = d[j * m + i] = 2.0 - 2.0 * c;
    }
  }
  return d;
}

std::size_t count_positive_pairs(std::span<const std::int64_t> labels) {
  std::map<std::int64_t, std::size_t> counts;
  for (auto y : labels) ++counts[y];
  std::size_t n = 0;
  for (const auto& [y, c] : counts) n += c * (c - 1) / 2;
  return n;
}

std::vector<Triplet> build_triplets(std::span<const std::int64_t> labels,
                                    std::size_t cap, std::uint64_t seed) {
  const std::size_t m = labels.size();
  std::map<std::int64_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < m; ++i) members[labels[i]].push_back(i);

  // Triplets are indexed anchor-major; anchor a owns (same - 1) * (m - same).
  std::vector<std::uint64_t> offset(m + 1, 0);
  for (std::size_t a = 0; a < m; ++a) {
    const std::uint64_t same = members[labels[a]].size();
    offset[a + 1] = offset[a] + (same - 1) * (m - same);
  }
  const std::uint64_t total = offset[m];
  if (total == 0) return {};

  std::vector<std::uint64_t> picks;
  if (total <= cap) {
    picks.resize(total);
    for (std::uint64_t k = 0; k < total; ++k) picks[k] = k;
  } else {
    // Floyd's algorithm: a uniform cap-subset of [0, total).
    Rng rng(seed);
    std::unordered_set<std::uint64_t> chosen;
    chosen.reserve(cap * 2);
    for (std::uint64_t j = total - cap; j < total; ++j) {
      const std::uint64_t t = rng.index(j + 1);
      chosen.insert(chosen.contains(t) ? j : t);
    }
    picks.assign(chosen.begin(), chosen.end());
    std::sort(picks.begin(), picks.end());
  }

  std::vector<Triplet> out;
  out.reserve(picks.size());
  std::size_t a = 0;
  for (std::uint64_t k : picks) {
    while (offset[a + 1] <= k) ++a;
    const auto& same = members[labels[a]];
    const std::uint64_t n_neg = m - same.size();
    const std::uint64_t local = k - offset[a];
    std::uint64_t p_rank = local / n_neg;
    std::uint64_t n_rank = local % n_neg;

    std::size_t positive = 0;
    for (std::size_t idx : same) {
      if (idx == a) continue;
      if (p_rank-- == 0) {
        positive = idx;
        break;
      }
    }
    // n_rank-th index whose label differs, walking in ascending order.
    std::size_t negative = 0;
    for (std::size_t idx = 0; idx < m; ++idx) {
      if (labels[idx] == labels[a]) continue;
      if (n_rank-- == 0) {
        negative = idx;
        break;
      }
    }
    out.push_back({a, positive, negative});
  }
  return out;
}

LossTerm loss_s(const LabeledBatch& batch) {
  batch.validate();
  const std::size_t m = batch.size();
  const std::size_t n_pos = count_positive_pairs(batch.labels);
  if (n_pos == 0) {
    throw Error(ErrorCode::NoPositivePairs, "batch has no same-label pair");
  }
  const auto dist = pair_sq_distance(batch);
  std::vector<double> var(m);
  for (std::size_t i = 0; i < m; ++i) var[i] = std::exp(batch.s[i]);

  LossTerm out{0.0, std::vector<double>(m, 0.0)};
  const double inv_np = 1.0 / static_cast<double>(n_pos);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      if (batch.labels[i] != batch.labels[j]) continue;
      const double t = var[i] + var[j];
      const double d = dist[i * m + j];
      out.value += d / t + std::log(t);
      // d/dt (d/t + ln t) = (t - d) / t^2; dt/ds_i = sigma2_i.
      const double dterm_dt = (t - d) / (t * t);
      out.grad_s[i] += dterm_dt * var[i];
      out.grad_s[j] += dterm_dt * var[j];
    }
  }
  out.value *= inv_np;
  for (auto& g : out.grad_s) g *= inv_np;
  return out;
}

LossTerm loss_c(const LabeledBatch& batch, bool stop_grad_sigma_avg) {
  const std::size_t m = batch.s.size();
  if (m == 0) {
    throw Error(ErrorCode::InvalidArgument, "empty batch");
  }
  std::vector<double> var(m);
  double avg = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    var[i] = std::exp(batch.s[i]);
    avg += var[i];
  }
  avg /= static_cast<double>(m);
  const double inv_m = 1.0 / static_cast<double>(m);

  LossTerm out{0.0, std::vector<double>(m, 0.0)};
  // sum_i sign_i * r_i, the coupling through the batch mean.
  double coupling = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double r = var[i] / avg;
    const double dev = r - 1.0;
    out.value += std::abs(dev);
    const double sign = dev > 0.0 ? 1.0 : (dev < 0.0 ? -1.0 : 0.0);
    out.grad_s[i] = sign * r;
    coupling += sign * r;
  }
  out.value *= inv_m;
  for (std::size_t k = 0; k < m; ++k) {
    double g = out.grad_s[k];
    if (!stop_grad_sigma_avg) g -= coupling * var[k] / (static_cast<double>(m) * avg);
    out.grad_s[k] = g * inv_m;
  }
  return out;
}

IdLossTerm loss_id(const LabeledBatch& batch, double margin,
                   std::span<const Triplet> triplets) {
  batch.validate();
  if (triplets.empty()) {
    throw Error(ErrorCode::NoTriplets, "batch has no valid triplet");
  }
  const std::size_t m = batch.size();
  const std::size_t dim = batch.dim;
  std::vector<double> var(m);
  for (std::size_t i = 0; i < m; ++i) var[i] = std::exp(batch.s[i]);

  auto sq_dist = [&](std::size_t i, std::size_t j) {
    const auto a = batch.row(i);
    const auto b = batch.row(j);
    double c = 0.0;
    for (std::size_t l = 0; l < dim; ++l) c += a[l] * b[l];
    return 2.0 - 2.0 * c;
  };

  IdLossTerm out;
  out.grad_s.assign(m, 0.0);
  out.grad_mu.assign(m * dim, 0.0);
  out.n_triplets = triplets.size();
  const double inv_t = 1.0 / static_cast<double>(triplets.size());

  for (const auto& [a, p, n] : triplets) {
    const double t_ap = var[a] + var[p];
    const double t_an = var[a] + var[n];
    const double d_ap = sq_dist(a, p);
    const double d_an = sq_dist(a, n);
    const double bracket = d_ap / t_ap - d_an / t_an + margin;
    if (bracket <= 0.0) continue;
    out.value += bracket;

    const double k_ap = d_ap / (t_ap * t_ap);
    const double k_an = d_an / (t_an * t_an);
    out.grad_s[a] += (-k_ap + k_an) * var[a] * inv_t;
    out.grad_s[p] += -k_ap * var[p] * inv_t;
    out.grad_s[n] += k_an * var[n] * inv_t;

    const auto mu_a = batch.row(a);
    const auto mu_p = batch.row(p);
    const auto mu_n = batch.row(n);
    for (std::size_t l = 0; l < dim; ++l) {
      out.grad_mu[a * dim + l] +=
          (-2.0 * mu_p[l] / t_ap + 2.0 * mu_n[l] / t_an) * inv_t;
      out.grad_mu[p * dim + l] += -2.0 * mu_a[l] / t_ap * inv_t;
      out.grad_mu[n * dim + l] += 2.0 * mu_a[l] / t_an * inv_t;
    }
  }
  out.value *= inv_t;
  return out;
}

IdLossTerm loss_id(const LabeledBatch& batch, double margin,
                   std::size_t triplet_cap, std::uint64_t seed) {
  const auto triplets = build_triplets(batch.labels, triplet_cap, seed);
  return loss_id(batch, margin, triplets);
}

LossReport total_loss(const LabeledBatch& batch, const LossConfig& cfg) {
  cfg.validate();
  batch.validate();
  const std::size_t m = batch.size();

  LossReport rep;
  const LossTerm ls = loss_s(batch);
  const LossTerm lc = loss_c(batch, cfg.stop_grad_sigma_avg);
  rep.l_s = ls.value;
  rep.l_c = lc.value;
  rep.n_positive_pairs = count_positive_pairs(batch.labels);
  rep.grad_s.assign(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    rep.grad_s[i] = ls.grad_s[i] + cfg.lambda_c * lc.grad_s[i];
  }

  const auto triplets =
      build_triplets(batch.labels, cfg.triplet_cap, cfg.triplet_seed);
  rep.n_triplets = triplets.size();
  if (cfg.lambda_id > 0.0 || !triplets.empty()) {
    const IdLossTerm lid = loss_id(batch, cfg.margin, triplets);
    rep.l_id = lid.value;
    for (std::size_t i = 0; i < m; ++i) {
      rep.grad_s[i] += cfg.lambda_id * lid.grad_s[i];
    }
  }
  rep.total = rep.l_s + cfg.lambda_c * rep.l_c + cfg.lambda_id * rep.l_id;
  if (!std::isfinite(rep.total)) {
    throw Error(ErrorCode::DivergenceDetected, "total loss is not finite");
  }
  return rep;
}

GradCheckResult grad_check(const LabeledBatch& batch, const LossConfig& cfg,
                           double h) {
  if (!(h > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "step h must be positive");
  }
  const std::size_t m = batch.size();
  GradCheckResult res;
  res.analytic = total_loss(batch, cfg).grad_s;
  res.numeric.assign(m, 0.0);

  const double kink_band = 10.0 * h;
  std::vector<bool> kink(m, false);
  {
    std::vector<double> var(m);
    double avg = 0.0;
    for (std::size_t i = 0; i < m; ++i) avg += (var[i] = std::exp(batch.s[i]));
    avg /= static_cast<double>(m);
    if (cfg.lambda_c > 0.0) {
      for (std::size_t i = 0; i < m; ++i) {
        if (std::abs(var[i] / avg - 1.0) < kink_band) kink[i] = true;
      }
    }
    if (cfg.lambda_id > 0.0) {
      const auto dist = pair_sq_distance(batch);
      for (const auto& [a, p, n] :
           build_triplets(batch.labels, cfg.triplet_cap, cfg.triplet_seed)) {
        const double bracket = dist[a * m + p] / (var[a] + var[p]) -
                               dist[a * m + n] / (var[a] + var[n]) + cfg.margin;
        if (std::abs(bracket) < kink_band) kink[a] = kink[p] = kink[n] = true;
      }
    }
  }

  LabeledBatch probe = batch;
  for (std::size_t i = 0; i < m; ++i) {
    const double step = h * std::max(1.0, std::abs(batch.s[i]));
    probe.s[i] = batch.s[i] + step;
    const double up = total_loss(probe, cfg).total;
    probe.s[i] = batch.s[i] - step;
    const double down = total_loss(probe, cfg).total;
    probe.s[i] = batch.s[i];
    res.numeric[i] = (up - down) / (2.0 * step);

    if (kink[i]) {
      res.kink_coordinates.push_back(i);
      continue;
    }
    const double a = res.analytic[i];
    const double n = res.numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), 1e-6});
    res.max_relative_error = std::max(res.max_relative_error, std::abs(a - n) / denom);
  }
  return res;
}

}  // namespace probembed
