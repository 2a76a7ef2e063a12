#include "probembed/synthetic.hpp"

#include <cmath>
#include <string>

#include "probembed/error.hpp"
#include "probembed/rng.hpp"

namespace probembed {

void SynthConfig::validate() const {
  if (num_classes < 2) {
    throw Error(ErrorCode::InvalidConfig, "num_classes must be >= 2");
  }
  if (per_class < 2) {
    throw Error(ErrorCode::InvalidConfig, "per_class must be >= 2");
  }
  if (dim < 1) {
    throw Error(ErrorCode::InvalidConfig, "dim must be >= 1");
  }
  if (!(noise_low >= 0.0) || !(noise_high >= noise_low) ||
      !std::isfinite(noise_high)) {
    throw Error(ErrorCode::InvalidConfig,
                "need 0 <= noise_low <= noise_high, got [" +
                    std::to_string(noise_low) + ", " +
                    std::to_string(noise_high) + "]");
  }
}

SyntheticData gen_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);

  std::vector<std::vector<double>> centers(cfg.num_classes,
                                           std::vector<double>(cfg.dim));
  for (auto& c : centers) {
    double sq = 0.0;
    do {
      sq = 0.0;
      for (auto& x : c) {
        x = rng.normal();
        sq += x * x;
      }
    } while (sq < 1e-24);
    const double norm = std::sqrt(sq);
    for (auto& x : c) x /= norm;
  }

  SyntheticData out{EmbeddingStore(cfg.dim, SigmaMode::Scalar), {}, {}};
  const std::size_t total = cfg.num_classes * cfg.per_class;
  out.noise.reserve(total);
  out.residual_norm.reserve(total);

  std::vector<double> raw(cfg.dim);
  for (std::size_t k = 0; k < cfg.num_classes; ++k) {
    for (std::size_t j = 0; j < cfg.per_class; ++j) {
      const double tau = rng.uniform(cfg.noise_low, cfg.noise_high);
      double g_sq = 0.0;
      for (std::size_t d = 0; d < cfg.dim; ++d) {
        const double g = rng.normal();
        g_sq += g * g;
        raw[d] = centers[k][d] + tau * g;
      }
      out.store.add(make_embedding(raw, 1.0), static_cast<std::int64_t>(k));
      out.noise.push_back(tau);
      out.residual_norm.push_back(tau * std::sqrt(g_sq));
    }
  }
  return out;
}

}  // namespace probembed
