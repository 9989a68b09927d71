#include "scafds/synthnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scafds/errors.hpp"

namespace scafds::synthnet {

namespace {

constexpr int kWindowCount = 3;

double clip01(double x) { return std::min(1.0, std::max(0.0, x)); }

std::array<double, kLatentCount> draw_latents(Rng& rng) {
  std::array<double, kLatentCount> z;
  z[0] = std::log(2.0e9) + 1.6 * rng.normal();  // log total assets
  z[1] = rng.beta(8.0, 56.0);                   // tier1 capital ratio
  z[2] = rng.beta(2.0, 38.0);                   // NPL ratio
  z[3] = rng.beta(10.0, 6.0);                   // LCR proxy
  z[4] = rng.beta(1.5, 28.5);                   // fraud incidence rate
  z[5] = rng.beta(2.0, 18.0);                   // SAR filing rate
  return z;
}

// Nearest-rank percentile cut: value at 1-based index ceil(p·n/100).
double percentile_cut(std::vector<double> values, double percentile) {
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * n));
  rank = std::max<std::size_t>(1, std::min(values.size(), rank));
  return values[rank - 1];
}

// fraud_rate and sar_rate are reported through a persistent bias; these two
// observed features are re-normalized against the snapshot-0 population.
constexpr int kBiasedFeatures[2] = {4, 5};

struct SynthState {
  SynthNetwork net;
  std::vector<double> sar_raw;  // current raw SAR latents, edge-feature source
  std::array<std::vector<double>, 2> report_bias;
  std::array<double, 2> obs_mean{};  // snapshot-0 normalizers of the biased features
  std::array<double, 2> obs_std{};
};

SynthState build_base(const SynthConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(cfg.n_institutions);

  SynthState st;
  st.net.latents.resize(n);
  for (auto& z : st.net.latents) z = draw_latents(rng);
  for (auto& b : st.report_bias) b.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    st.report_bias[0][i] = rng.normal();
    st.report_bias[1][i] = rng.normal();
  }

  auto& mean = st.net.latent_mean;
  auto& stdev = st.net.latent_std;
  for (int k = 0; k < kLatentCount; ++k) {
    double m = 0.0;
    for (const auto& z : st.net.latents) m += z[static_cast<std::size_t>(k)];
    m /= static_cast<double>(n);
    double v = 0.0;
    for (const auto& z : st.net.latents) {
      const double d = z[static_cast<std::size_t>(k)] - m;
      v += d * d;
    }
    v /= static_cast<double>(n);
    mean[static_cast<std::size_t>(k)] = m;
    stdev[static_cast<std::size_t>(k)] = std::sqrt(v);
    if (stdev[static_cast<std::size_t>(k)] <= 0.0)
      throw NumericError("degenerate latent distribution");
  }

  auto z_score = [&](std::size_t node, int k) {
    return (st.net.latents[node][static_cast<std::size_t>(k)] -
            mean[static_cast<std::size_t>(k)]) /
           stdev[static_cast<std::size_t>(k)];
  };

  // Composite fraud risk: weighted z·|z| over (sar, npl, fraud) z-scores.
  st.net.composite.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double zs = z_score(i, 5), zn = z_score(i, 2), zf = z_score(i, 4);
    st.net.composite[i] = cfg.composite_weights[0] * zs * std::abs(zs) +
                          cfg.composite_weights[1] * zn * std::abs(zn) +
                          cfg.composite_weights[2] * zf * std::abs(zf);
  }
  const double cut = percentile_cut(st.net.composite, cfg.label_percentile);

  // Observed enforcement statistics: latent z-score plus the reporting bias,
  // re-normalized so the snapshot-0 population is exactly z-scored again.
  std::array<std::vector<double>, 2> observed;
  for (int b = 0; b < 2; ++b) {
    const int k = kBiasedFeatures[b];
    auto& y = observed[static_cast<std::size_t>(b)];
    y.resize(n);
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = z_score(i, k) + cfg.report_bias_std * st.report_bias[static_cast<std::size_t>(b)][i];
      m += y[i];
    }
    m /= static_cast<double>(n);
    double var = 0.0;
    for (const double v : y) var += (v - m) * (v - m);
    var /= static_cast<double>(n);
    if (var <= 0.0) throw NumericError("degenerate observed feature distribution");
    st.obs_mean[static_cast<std::size_t>(b)] = m;
    st.obs_std[static_cast<std::size_t>(b)] = std::sqrt(var);
    for (auto& v : y) v = (v - m) / st.obs_std[static_cast<std::size_t>(b)];
  }

  auto& g = st.net.graph;
  g.timestamp = 0;
  g.nodes.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& node = g.nodes[i];
    node.id = "B" + std::to_string(i);
    for (int k = 0; k < kLatentCount; ++k)
      node.features[static_cast<std::size_t>(k)] = z_score(i, k);
    node.features[4] = observed[0][i];
    node.features[5] = observed[1][i];
    node.label = st.net.composite[i] >= cut ? 1 : 0;
  }

  // Interbank exposure marginals proportional to assets; RAS runs on
  // sum-normalized marginals so the residual tolerance is scale-free.
  std::vector<double> marginal(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    marginal[i] = cfg.exposure_scale * std::exp(st.net.latents[i][0]);
    total += marginal[i];
  }
  std::vector<double> unit(n);
  for (std::size_t i = 0; i < n; ++i) unit[i] = marginal[i] / total;
  graph::RasOptions ras_opt;
  ras_opt.tol = 1e-12;
  ras_opt.max_iter = 5000;
  auto ras = graph::ras_estimate(unit, unit, ras_opt);

  // Top-k exposure cells become the directed edge set.
  struct Cell {
    double value;
    int src, dst;
  };
  std::vector<Cell> cells;
  cells.reserve(n * (n - 1));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) {
        const double v = ras.matrix[i * n + j];
        if (v > 0.0) cells.push_back({v, static_cast<int>(i), static_cast<int>(j)});
      }
  const auto k = std::min<std::size_t>(static_cast<std::size_t>(cfg.n_edges), cells.size());
  auto by_rank = [](const Cell& a, const Cell& b) {
    if (a.value != b.value) return a.value > b.value;
    if (a.src != b.src) return a.src < b.src;
    return a.dst < b.dst;
  };
  std::nth_element(cells.begin(), cells.begin() + static_cast<std::ptrdiff_t>(k), cells.end(),
                   by_rank);
  cells.resize(k);
  std::sort(cells.begin(), cells.end(), by_rank);

  st.sar_raw.resize(n);
  for (std::size_t i = 0; i < n; ++i) st.sar_raw[i] = st.net.latents[i][5];

  g.edges.reserve(k);
  for (const auto& c : cells) {
    graph::DirectedEdge e;
    e.src = c.src;
    e.dst = c.dst;
    e.exposure = c.value * total;
    e.edge_features = edge_window_features(st.sar_raw[static_cast<std::size_t>(c.src)],
                                           st.sar_raw[static_cast<std::size_t>(c.dst)],
                                           cfg.edge_noise_std, kWindowCount, rng);
    g.edges.push_back(std::move(e));
  }
  g.validate();
  return st;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_institutions < 2) throw ConfigError("n_institutions must be at least 2");
  if (n_edges < 1) throw ConfigError("n_edges must be positive");
  const auto cap =
      static_cast<long long>(n_institutions) * (static_cast<long long>(n_institutions) - 1);
  if (static_cast<long long>(n_edges) > cap)
    throw ConfigError("n_edges exceeds the zero-diagonal cell count");
  if (!(label_percentile > 0.0 && label_percentile < 100.0))
    throw ConfigError("label_percentile must lie in (0,100)");
  if (edge_noise_std < 0.0) throw ConfigError("edge_noise_std must be nonnegative");
  if (exposure_scale <= 0.0) throw ConfigError("exposure_scale must be positive");
  if (report_bias_std < 0.0) throw ConfigError("report_bias_std must be nonnegative");
}

std::vector<double> edge_window_features(double sar_u, double sar_v, double noise_std,
                                         int n_windows, Rng& rng) {
  std::vector<double> f(static_cast<std::size_t>(n_windows));
  const double base = 0.5 * (sar_u + sar_v);
  for (auto& x : f) x = clip01(base + noise_std * rng.normal());
  return f;
}

SynthNetwork generate_network_full(const SynthConfig& cfg) {
  Rng rng(cfg.seed);
  return build_base(cfg, rng).net;
}

graph::InterbankGraph generate_network(const SynthConfig& cfg) {
  return generate_network_full(cfg).graph;
}

std::vector<graph::InterbankGraph> generate_snapshots(const SynthConfig& cfg, int n_quarters,
                                                      double drift) {
  if (n_quarters < 1) throw DomainError("n_quarters must be at least 1");
  if (drift < 0.0) throw DomainError("drift must be nonnegative");
  Rng rng(cfg.seed);
  SynthState st = build_base(cfg, rng);

  std::vector<graph::InterbankGraph> out;
  out.reserve(static_cast<std::size_t>(n_quarters));
  out.push_back(st.net.graph);

  if (drift == 0.0) {
    for (int q = 1; q < n_quarters; ++q) {
      out.push_back(st.net.graph);
      out.back().timestamp = q;
    }
    return out;
  }

  const auto n = st.net.latents.size();
  auto latents = st.net.latents;
  graph::InterbankGraph g = st.net.graph;
  for (int q = 1; q < n_quarters; ++q) {
    for (std::size_t i = 0; i < n; ++i) {
      for (int k = 0; k < kLatentCount; ++k) {
        auto& z = latents[i][static_cast<std::size_t>(k)];
        z += drift * st.net.latent_std[static_cast<std::size_t>(k)] * rng.normal();
        if (k > 0) z = clip01(z);  // ratio/rate latents stay in range
      }
      for (int k = 0; k < kLatentCount; ++k)
        g.nodes[i].features[static_cast<std::size_t>(k)] =
            (latents[i][static_cast<std::size_t>(k)] -
             st.net.latent_mean[static_cast<std::size_t>(k)]) /
            st.net.latent_std[static_cast<std::size_t>(k)];
      // Reporting bias is persistent; normalizers stay frozen at snapshot 0.
      for (int b = 0; b < 2; ++b) {
        const auto k = static_cast<std::size_t>(kBiasedFeatures[b]);
        const auto bu = static_cast<std::size_t>(b);
        g.nodes[i].features[k] =
            (g.nodes[i].features[k] + cfg.report_bias_std * st.report_bias[bu][i] -
             st.obs_mean[bu]) /
            st.obs_std[bu];
      }
      st.sar_raw[i] = latents[i][5];
    }
    for (auto& e : g.edges) {
      e.exposure *= std::exp(drift * rng.normal());
      e.edge_features = edge_window_features(st.sar_raw[static_cast<std::size_t>(e.src)],
                                             st.sar_raw[static_cast<std::size_t>(e.dst)],
                                             cfg.edge_noise_std, kWindowCount, rng);
    }
    g.timestamp = q;
    out.push_back(g);
  }
  return out;
}

}  // namespace scafds::synthnet
