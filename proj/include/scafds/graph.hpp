#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "scafds/errors.hpp"

namespace scafds::graph {

inline constexpr int kNodeFeatureCount = 6;

// Feature order everywhere: total_assets, tier1, npl, lcr, fraud_rate, sar_rate.
struct InstitutionNode {
  std::string id;
  std::array<double, kNodeFeatureCount> features{};
  int label = -1;  // -1 = unlabeled
};

struct DirectedEdge {
  int src = -1;
  int dst = -1;
  double exposure = 0.0;
  std::vector<double> edge_features;  // co-occurrence value per window
};

struct InterbankGraph {
  std::vector<InstitutionNode> nodes;
  std::vector<DirectedEdge> edges;
  double timestamp = 0.0;

  int index_of(const std::string& id) const;  // -1 when absent
  // Checks endpoint ranges, forbids self-edges and duplicate (src,dst) pairs,
  // requires a uniform edge-feature arity. Throws ShapeError.
  void validate() const;
  double mean_edge_feature(std::size_t e) const;
};

enum class EdgeWeighting { exposure, cooccurrence_mean, unweighted };

struct PagerankOptions {
  double damping = 0.85;
  double tol = 1e-12;
  int max_iter = 500;
  EdgeWeighting weighting = EdgeWeighting::cooccurrence_mean;
};

// Damped random walk with uniform teleport; nodes with zero outgoing weight
// spread their mass uniformly. Result sums to 1. Throws ConvergenceError when
// max_iter is reached, DomainError on negative edge weights.
std::vector<double> pagerank(const InterbankGraph& g, const PagerankOptions& opt = {});

struct RasOptions {
  bool forbid_diagonal = true;
  double tol = 1e-10;
  int max_iter = 2000;
};

struct RasResult {
  std::vector<double> matrix;  // row-major rows x cols
  int rows = 0;
  int cols = 0;
  int iterations = 0;
  double residual = 0.0;
  std::vector<double> residual_history;  // one entry per completed iteration
};

// Alternating row/column scaling from a uniform seed; banned diagonal cells
// (square matrices only) are re-masked before every pass. Marginal sums must
// agree within 1e-6 relative (columns are then rescaled exactly). Throws
// InfeasibleError when the targets cannot be met, ConvergenceError otherwise
// on iteration exhaustion.
RasResult ras_estimate(const std::vector<double>& row_totals,
                       const std::vector<double>& col_totals, const RasOptions& opt = {});

// Permutes edge-feature vectors across edges (seeded); topology and exposures
// stay in place. The anti-leakage control for the ablation suite.
InterbankGraph shuffle_edge_features(const InterbankGraph& g, std::uint64_t seed);

// CSV round-trip. Nodes: id,total_assets,tier1,npl,lcr,fraud_rate,sar_rate[,label]
// Edges: src,dst,exposure,f90,f180,f365 (feature column count may vary; all
// columns after exposure are read as edge features).
void write_nodes_csv(const std::string& path, const InterbankGraph& g);
void write_edges_csv(const std::string& path, const InterbankGraph& g,
                     const std::vector<int>& windows = {90, 180, 365});
InterbankGraph read_graph_csv(const std::string& nodes_path, const std::string& edges_path);

// In-edge index lists per node, in edge order; shared by the model builders.
std::vector<std::vector<int>> in_edges(const InterbankGraph& g);

}  // namespace scafds::graph
