#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "scafds/graph.hpp"
#include "scafds/rng.hpp"

namespace scafds::synthnet {

// Node latent order: log_assets, tier1, npl, lcr, fraud_rate, sar_rate.
inline constexpr int kLatentCount = graph::kNodeFeatureCount;

struct SynthConfig {
  int n_institutions = 1000;
  int n_edges = 20000;
  double label_percentile = 85.0;  // composite-score cut, percent
  double edge_noise_std = 0.02;
  std::uint64_t seed = 1;
  std::array<double, 3> composite_weights{1.0, 1.0, 1.0};  // over (sar, npl, fraud) z-scores
  double exposure_scale = 0.10;  // interbank exposure per unit of assets
  // Enforcement statistics (fraud_rate, sar_rate) are observed through a
  // persistent per-institution reporting bias of this size in z-units; the
  // biased features are re-normalized, so the latent signal is attenuated by
  // 1/sqrt(1+std^2). Regulatory ratios are observed exactly. Edge features
  // derive from the latent SAR rates, so the network carries sharper fraud
  // signal than any single institution's own filings.
  double report_bias_std = 2.0;

  void validate() const;
};

struct SynthNetwork {
  graph::InterbankGraph graph;  // z-scored observed features, labels set
  std::vector<std::array<double, kLatentCount>> latents;  // raw per-node draws
  std::array<double, kLatentCount> latent_mean{};
  std::array<double, kLatentCount> latent_std{};
  std::vector<double> composite;  // label score per node
};

// Window feature values for one edge: clip((sar_u+sar_v)/2 + noise, 0, 1),
// independent noise per window.
std::vector<double> edge_window_features(double sar_u, double sar_v, double noise_std,
                                         int n_windows, Rng& rng);

SynthNetwork generate_network_full(const SynthConfig& cfg);
graph::InterbankGraph generate_network(const SynthConfig& cfg);

// Quarterly snapshots; index 0 equals generate_network(cfg). Node latents
// random-walk with per-feature step drift·std0, so z-scored features satisfy
// Var(obs_q - obs_0) = q·drift². Labels stay frozen at snapshot 0.
std::vector<graph::InterbankGraph> generate_snapshots(const SynthConfig& cfg, int n_quarters,
                                                      double drift);

}  // namespace scafds::synthnet
