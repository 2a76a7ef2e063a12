#include "probembed/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <string>

#include <json.hpp>

#include "probembed/error.hpp"
#include "probembed/format.hpp"

namespace probembed {

namespace {

constexpr std::size_t kStageChannels = 4;
constexpr std::size_t kStageSide = 2;

std::uint64_t mix(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

void check_map(const FeatureMap& m, const char* name) {
  if (m.channels == 0 || m.height == 0 || m.width == 0) {
    throw Error(ErrorCode::EmptyFeatureMap, std::string(name) + " is empty");
  }
  if (m.data.size() != m.numel()) {
    throw Error(ErrorCode::DimMismatch,
                std::string(name) + " data size disagrees with its shape");
  }
}

FeatureMap filled_map(std::size_t channels, std::span<const double> levels,
                      double jitter, Rng& rng) {
  FeatureMap m{channels, kStageSide, kStageSide, {}};
  m.data.reserve(m.numel());
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t k = 0; k < kStageSide * kStageSide; ++k) {
      m.data.push_back(levels[c] + jitter * rng.normal());
    }
  }
  return m;
}

}  // namespace

std::vector<double> fuse_features(const FeatureStack& stack) {
  static constexpr const char* kNames[] = {"t_1", "t_2", "t_3", "t_4"};
  std::vector<double> g;
  std::size_t total = stack.last.numel();
  for (const auto& t : stack.stages) total += t.channels;
  g.reserve(total);

  for (std::size_t i = 0; i < stack.stages.size(); ++i) {
    const auto& t = stack.stages[i];
    check_map(t, kNames[i]);
    const std::size_t area = t.height * t.width;
    for (std::size_t c = 0; c < t.channels; ++c) {
      double sum = 0.0;
      for (std::size_t k = 0; k < area; ++k) sum += t.data[c * area + k];
      g.push_back(sum / static_cast<double>(area));
    }
  }
  check_map(stack.last, "t_last");
  g.insert(g.end(), stack.last.data.begin(), stack.last.data.end());
  return g;
}

FeatureStack synthetic_feature_stack(const ProbEmbedding& e,
                                     double residual_norm, Rng& rng) {
  FeatureStack stack;
  std::array<double, kStageChannels> levels{};
  for (std::size_t i = 0; i < stack.stages.size(); ++i) {
    for (auto& v : levels) v = rng.normal();
    if (i == 0) {
      levels[0] = residual_norm / std::sqrt(static_cast<double>(e.dim()));
    }
    stack.stages[i] = filled_map(kStageChannels, levels, 0.05, rng);
  }
  const auto mu = e.mu();
  stack.last = FeatureMap{e.dim(), 1, 1, std::vector<double>(mu.begin(), mu.end())};
  return stack;
}

std::size_t synthetic_feature_dim(std::size_t embedding_dim) {
  return 4 * kStageChannels + embedding_dim;
}

std::vector<double> synthetic_features(const EmbeddingStore& store,
                                       std::span<const double> residual_norm,
                                       std::uint64_t seed) {
  if (residual_norm.size() != store.size()) {
    throw Error(ErrorCode::InvalidArgument,
                "residual count " + std::to_string(residual_norm.size()) +
                    " != record count " + std::to_string(store.size()));
  }
  Rng rng(seed);
  const std::size_t f = synthetic_feature_dim(store.dim());
  std::vector<double> out;
  out.reserve(store.size() * f);
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto g = fuse_features(
        synthetic_feature_stack(store.embedding(i), residual_norm[i], rng));
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

UncertaintyHead init_head(std::size_t in, std::size_t hidden,
                          std::uint64_t seed) {
  if (in == 0 || hidden == 0) {
    throw Error(ErrorCode::InvalidConfig, "head sizes must be >= 1");
  }
  Rng rng(seed);
  UncertaintyHead h{in, hidden, std::vector<double>(in * hidden),
                    std::vector<double>(hidden, 0.0), std::vector<double>(hidden),
                    0.0};
  const double r1 = 1.0 / std::sqrt(static_cast<double>(in));
  for (auto& w : h.w1) w = rng.uniform(-r1, r1);
  const double r2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (auto& w : h.w2) w = rng.uniform(-r2, r2);
  return h;
}

double head_forward(const UncertaintyHead& head, std::span<const double> g) {
  if (g.size() != head.in) {
    throw Error(ErrorCode::DimMismatch,
                "feature length " + std::to_string(g.size()) + " != head input " +
                    std::to_string(head.in));
  }
  double s = head.b2;
  for (std::size_t h = 0; h < head.hidden; ++h) {
    double z = head.b1[h];
    for (std::size_t f = 0; f < head.in; ++f) z += g[f] * head.w1[f * head.hidden + h];
    if (z > 0.0) s += head.w2[h] * z;
  }
  return s;
}

std::pair<LossReport, HeadGradient> head_loss_gradient(
    const UncertaintyHead& head, std::span<const double> features,
    LabeledBatch& batch, const LossConfig& cfg) {
  const std::size_t m = batch.size();
  const std::size_t F = head.in;
  const std::size_t H = head.hidden;
  if (features.size() != m * F) {
    throw Error(ErrorCode::DimMismatch, "feature block does not match batch");
  }

  std::vector<double> act(m * H);
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = &features[i * F];
    double s = head.b2;
    for (std::size_t h = 0; h < H; ++h) {
      double z = head.b1[h];
      for (std::size_t f = 0; f < F; ++f) z += x[f] * head.w1[f * H + h];
      act[i * H + h] = z > 0.0 ? z : 0.0;
      s += head.w2[h] * act[i * H + h];
    }
    batch.s[i] = s;
  }

  LossReport rep = total_loss(batch, cfg);

  HeadGradient g{std::vector<double>(F * H, 0.0), std::vector<double>(H, 0.0),
                 std::vector<double>(H, 0.0), 0.0};
  for (std::size_t i = 0; i < m; ++i) {
    const double ds = rep.grad_s[i];
    if (ds == 0.0) continue;
    g.b2 += ds;
    const double* x = &features[i * F];
    for (std::size_t h = 0; h < H; ++h) {
      const double a = act[i * H + h];
      g.w2[h] += ds * a;
      if (a <= 0.0) continue;
      const double dz = ds * head.w2[h];
      g.b1[h] += dz;
      for (std::size_t f = 0; f < F; ++f) g.w1[f * H + h] += dz * x[f];
    }
  }
  return {std::move(rep), std::move(g)};
}

FeatureScaler FeatureScaler::fit(std::span<const double> features,
                                 std::size_t dim,
                                 std::span<const std::size_t> rows) {
  if (rows.empty()) {
    throw Error(ErrorCode::InvalidArgument, "cannot fit a scaler on zero rows");
  }
  FeatureScaler sc{std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
  for (std::size_t r : rows) {
    for (std::size_t f = 0; f < dim; ++f) sc.mean[f] += features[r * dim + f];
  }
  const double n = static_cast<double>(rows.size());
  for (auto& v : sc.mean) v /= n;
  std::vector<double> var(dim, 0.0);
  for (std::size_t r : rows) {
    for (std::size_t f = 0; f < dim; ++f) {
      const double d = features[r * dim + f] - sc.mean[f];
      var[f] += d * d;
    }
  }
  for (std::size_t f = 0; f < dim; ++f) {
    const double sd = std::sqrt(var[f] / n);
    sc.inv_std[f] = sd > 1e-12 ? 1.0 / sd : 1.0;
  }
  return sc;
}

std::vector<double> FeatureScaler::apply(std::span<const double> features) const {
  const std::size_t dim = mean.size();
  std::vector<double> out(features.begin(), features.end());
  for (std::size_t k = 0; k < out.size(); ++k) {
    const std::size_t f = k % dim;
    out[k] = (out[k] - mean[f]) * inv_std[f];
  }
  return out;
}

std::string FeatureScaler::to_json() const {
  nlohmann::ordered_json j;
  j["mean"] = mean;
  j["inv_std"] = inv_std;
  return j.dump();
}

FeatureScaler FeatureScaler::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    FeatureScaler sc{j.at("mean").get<std::vector<double>>(),
                     j.at("inv_std").get<std::vector<double>>()};
    if (sc.mean.size() != sc.inv_std.size()) {
      throw Error(ErrorCode::DimMismatch, "scaler arrays differ in length");
    }
    return sc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::IoError, std::string("bad scaler json: ") + e.what());
  }
}

std::vector<double> predict_sigma2(const UncertaintyHead& head,
                                   const FeatureScaler& scaler,
                                   std::span<const double> features) {
  if (scaler.mean.size() != head.in || features.size() % head.in != 0) {
    throw Error(ErrorCode::DimMismatch, "features do not match head input");
  }
  const auto x = scaler.apply(features);
  const std::size_t n = features.size() / head.in;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(head_forward(
        head, std::span<const double>(x.data() + i * head.in, head.in)));
  }
  return out;
}

LabeledBatch sample_batch(const EmbeddingStore& store, std::size_t P,
                          std::size_t Q, Rng& rng,
                          std::span<const std::size_t> subset) {
  if (P == 0 || Q == 0) {
    throw Error(ErrorCode::InvalidConfig, "P and Q must be >= 1");
  }
  std::map<std::int64_t, std::vector<std::size_t>> members;
  if (subset.empty()) {
    for (std::size_t i = 0; i < store.size(); ++i) members[store.label(i)].push_back(i);
  } else {
    for (std::size_t i : subset) members[store.at(i).label].push_back(i);
  }
  if (members.size() < P) {
    throw Error(ErrorCode::InsufficientIdentities,
                std::to_string(members.size()) + " identities, need " +
                    std::to_string(P));
  }
  std::vector<std::int64_t> eligible;
  for (const auto& [label, idx] : members) {
    if (idx.size() >= Q) eligible.push_back(label);
  }
  if (eligible.size() < P) {
    throw Error(ErrorCode::InsufficientImages,
                std::to_string(eligible.size()) + " identities have >= " +
                    std::to_string(Q) + " images, need " + std::to_string(P));
  }
  rng.partial_shuffle(std::span<std::int64_t>(eligible), P);

  LabeledBatch b;
  b.dim = store.dim();
  b.mu.reserve(P * Q * b.dim);
  for (std::size_t k = 0; k < P; ++k) {
    auto idx = members[eligible[k]];
    rng.partial_shuffle(std::span<std::size_t>(idx), Q);
    for (std::size_t q = 0; q < Q; ++q) {
      const auto& e = store.embedding(idx[q]);
      b.mu.insert(b.mu.end(), e.mu().begin(), e.mu().end());
      b.s.push_back(std::log(e.scalar_sigma2()));
      b.labels.push_back(eligible[k]);
      b.records.push_back(idx[q]);
    }
  }
  return b;
}

HoldoutSplit split_holdout(const EmbeddingStore& store, double frac,
                           std::uint64_t seed) {
  if (!(frac >= 0.0 && frac < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "holdout fraction must be in [0, 1)");
  }
  std::map<std::int64_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < store.size(); ++i) members[store.label(i)].push_back(i);
  Rng rng(seed);
  HoldoutSplit split;
  for (auto& [label, idx] : members) {
    const auto k = static_cast<std::size_t>(std::llround(frac * idx.size()));
    rng.partial_shuffle(std::span<std::size_t>(idx), k);
    split.holdout.insert(split.holdout.end(), idx.begin(), idx.begin() + k);
    split.train.insert(split.train.end(), idx.begin() + k, idx.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.holdout.begin(), split.holdout.end());
  return split;
}

std::vector<std::pair<std::size_t, double>> TrainConfig::resolved_schedule() const {
  if (!lr_schedule.empty()) return lr_schedule;
  std::vector<std::pair<std::size_t, double>> s{{0, base_lr}};
  const std::size_t d1 = steps * 32 / 64;
  const std::size_t d2 = steps * 48 / 64;
  if (d1 > 0) s.emplace_back(d1, base_lr * 0.1);
  if (d2 > s.back().first) s.emplace_back(d2, base_lr * 0.01);
  return s;
}

double TrainConfig::lr_at(std::size_t step) const {
  double lr = 0.0;
  for (const auto& [start, value] : resolved_schedule()) {
    if (step >= start) lr = value;
  }
  return lr;
}

void TrainConfig::validate() const {
  if (identities_per_batch == 0 || images_per_identity == 0 || hidden == 0) {
    throw Error(ErrorCode::InvalidConfig, "batch and hidden sizes must be >= 1");
  }
  const auto sched = resolved_schedule();
  if (sched.front().first != 0) {
    throw Error(ErrorCode::InvalidConfig, "lr schedule must start at step 0");
  }
  for (std::size_t i = 1; i < sched.size(); ++i) {
    if (sched[i].first <= sched[i - 1].first) {
      throw Error(ErrorCode::InvalidConfig, "lr schedule steps must increase");
    }
  }
  for (const auto& [step, lr] : sched) {
    if (!(lr >= 0.0)) throw Error(ErrorCode::InvalidConfig, "negative lr");
  }
  if (!(momentum >= 0.0 && momentum < 1.0) || !(weight_decay >= 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "bad momentum or weight decay");
  }
}

void sgd_step(UncertaintyHead& head, const HeadGradient& grad, SgdState& state,
              double lr, double momentum, double weight_decay) {
  auto& v = state.velocity;
  if (v.w1.size() != head.w1.size()) {
    v = HeadGradient{std::vector<double>(head.w1.size(), 0.0),
                     std::vector<double>(head.b1.size(), 0.0),
                     std::vector<double>(head.w2.size(), 0.0), 0.0};
  }
  auto update = [&](std::vector<double>& w, const std::vector<double>& g,
                    std::vector<double>& vel, double wd) {
    for (std::size_t k = 0; k < w.size(); ++k) {
      vel[k] = momentum * vel[k] + g[k] + wd * w[k];
      w[k] -= lr * vel[k];
    }
  };
  update(head.w1, grad.w1, v.w1, weight_decay);
  update(head.w2, grad.w2, v.w2, weight_decay);
  update(head.b1, grad.b1, v.b1, 0.0);
  v.b2 = momentum * v.b2 + grad.b2;
  head.b2 -= lr * v.b2;
}

TrainResult train_head(const EmbeddingStore& store,
                       std::span<const double> features, std::size_t feature_dim,
                       std::span<const std::size_t> train_rows,
                       const TrainConfig& cfg, const LossConfig& loss_cfg) {
  cfg.validate();
  loss_cfg.validate();
  if (store.sigma_mode() != SigmaMode::Scalar) {
    throw Error(ErrorCode::MetricSigmaModeMismatch,
                "training uses scalar-variance stores");
  }
  if (features.size() != store.size() * feature_dim) {
    throw Error(ErrorCode::DimMismatch, "feature matrix does not match store");
  }
  std::vector<std::size_t> rows(train_rows.begin(), train_rows.end());
  if (rows.empty()) {
    rows.resize(store.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  }

  TrainResult res;
  res.scaler = FeatureScaler::fit(features, feature_dim, rows);
  res.initial = init_head(feature_dim, cfg.hidden, mix(cfg.seed ^ 0x68656164ull));
  res.head = res.initial;

  Rng rng(cfg.seed);
  SgdState state;
  LossConfig step_cfg = loss_cfg;
  const std::size_t P = cfg.identities_per_batch;
  const std::size_t Q = cfg.images_per_identity;
  std::vector<double> batch_features(P * Q * feature_dim);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    LabeledBatch batch = sample_batch(store, P, Q, rng, rows);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const std::size_t r = batch.records[i];
      for (std::size_t f = 0; f < feature_dim; ++f) {
        batch_features[i * feature_dim + f] =
            (features[r * feature_dim + f] - res.scaler.mean[f]) *
            res.scaler.inv_std[f];
      }
    }
    step_cfg.triplet_seed = mix(loss_cfg.triplet_seed ^ mix(cfg.seed + step));
    auto [rep, grad] = head_loss_gradient(res.head, batch_features, batch, step_cfg);

    double mean = 0.0, sq = 0.0;
    for (double s : batch.s) mean += std::exp(s);
    mean /= static_cast<double>(batch.size());
    for (double s : batch.s) sq += (std::exp(s) - mean) * (std::exp(s) - mean);
    res.history.push_back({step, rep.l_s, rep.l_c, rep.l_id, rep.total, mean,
                           std::sqrt(sq / static_cast<double>(batch.size()))});

    sgd_step(res.head, grad, state, cfg.lr_at(step), cfg.momentum,
             cfg.weight_decay);
    if (!std::isfinite(res.head.b2)) {
      throw Error(ErrorCode::DivergenceDetected,
                  "head parameters became non-finite at step " +
                      std::to_string(step));
    }
  }
  return res;
}

void write_history_csv(std::ostream& out, std::span<const HistoryRow> rows) {
  out << "step,l_s,l_c,l_id,total,sigma2_mean,sigma2_std\n";
  for (const auto& r : rows) {
    out << r.step << ',' << fmt(r.l_s) << ',' << fmt(r.l_c) << ',' << fmt(r.l_id)
        << ',' << fmt(r.total) << ',' << fmt(r.sigma2_mean) << ','
        << fmt(r.sigma2_std) << '\n';
  }
}

}  // namespace probembed
