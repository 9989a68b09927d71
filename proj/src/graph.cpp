#include "scafds/graph.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "scafds/csv.hpp"
#include "scafds/rng.hpp"

namespace scafds::graph {

int InterbankGraph::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].id == id) return static_cast<int>(i);
  return -1;
}

void InterbankGraph::validate() const {
  const int n = static_cast<int>(nodes.size());
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(edges.size());
  std::size_t arity = edges.empty() ? 0 : edges[0].edge_features.size();
  for (const DirectedEdge& e : edges) {
    if (e.src < 0 || e.src >= n || e.dst < 0 || e.dst >= n)
      throw ShapeError("graph: edge endpoint out of range");
    if (e.src == e.dst) throw ShapeError("graph: self-edge " + nodes[e.src].id);
    const std::uint64_t key =
        (static_cast<std::uint64_t>(e.src) << 32) | static_cast<std::uint32_t>(e.dst);
    if (!seen.insert(key).second)
      throw ShapeError("graph: duplicate edge " + nodes[e.src].id + "->" + nodes[e.dst].id);
    if (e.edge_features.size() != arity)
      throw ShapeError("graph: inconsistent edge feature arity");
  }
}

double InterbankGraph::mean_edge_feature(std::size_t e) const {
  const auto& f = edges[e].edge_features;
  if (f.empty()) throw ShapeError("graph: edge has no co-occurrence features");
  double s = 0.0;
  for (double v : f) s += v;
  return s / static_cast<double>(f.size());
}

std::vector<std::vector<int>> in_edges(const InterbankGraph& g) {
  std::vector<std::vector<int>> in(g.nodes.size());
  for (std::size_t e = 0; e < g.edges.size(); ++e)
    in[static_cast<std::size_t>(g.edges[e].dst)].push_back(static_cast<int>(e));
  return in;
}

std::vector<double> pagerank(const InterbankGraph& g, const PagerankOptions& opt) {
  const std::size_t n = g.nodes.size();
  if (n == 0) throw ShapeError("pagerank: empty graph");
  if (!(opt.damping >= 0.0 && opt.damping < 1.0))
    throw DomainError("pagerank: damping must lie in [0, 1)");

  std::vector<double> w(g.edges.size());
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    switch (opt.weighting) {
      case EdgeWeighting::exposure: w[e] = g.edges[e].exposure; break;
      case EdgeWeighting::cooccurrence_mean: w[e] = g.mean_edge_feature(e); break;
      case EdgeWeighting::unweighted: w[e] = 1.0; break;
    }
    if (w[e] < 0.0) throw DomainError("pagerank: negative edge weight");
  }
  std::vector<double> out_weight(n, 0.0);
  for (std::size_t e = 0; e < g.edges.size(); ++e)
    out_weight[static_cast<std::size_t>(g.edges[e].src)] += w[e];

  const double d = opt.damping;
  std::vector<double> x(n, 1.0 / static_cast<double>(n));
  std::vector<double> next(n);
  for (int iter = 0; iter < opt.max_iter; ++iter) {
    double dangling = 0.0;
    for (std::size_t v = 0; v < n; ++v)
      if (out_weight[v] == 0.0) dangling += x[v];
    const double base = (1.0 - d) / static_cast<double>(n) +
                        d * dangling / static_cast<double>(n);
    std::fill(next.begin(), next.end(), base);
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
      if (w[e] == 0.0) continue;
      const auto s = static_cast<std::size_t>(g.edges[e].src);
      next[static_cast<std::size_t>(g.edges[e].dst)] += d * x[s] * w[e] / out_weight[s];
    }
    double diff = 0.0;
    for (std::size_t v = 0; v < n; ++v) diff += std::abs(next[v] - x[v]);
    x.swap(next);
    if (diff < opt.tol) return x;
  }
  throw ConvergenceError("pagerank: no convergence after " + std::to_string(opt.max_iter) +
                         " iterations");
}

RasResult ras_estimate(const std::vector<double>& row_totals,
                       const std::vector<double>& col_totals, const RasOptions& opt) {
  const int m = static_cast<int>(row_totals.size());
  const int n = static_cast<int>(col_totals.size());
  if (m == 0 || n == 0) throw ShapeError("ras_estimate: empty marginals");
  if (opt.forbid_diagonal && m != n)
    throw DomainError("ras_estimate: diagonal ban requires a square matrix");
  for (double v : row_totals)
    if (v < 0.0 || !std::isfinite(v)) throw DomainError("ras_estimate: bad row marginal");
  for (double v : col_totals)
    if (v < 0.0 || !std::isfinite(v)) throw DomainError("ras_estimate: bad column marginal");

  double rs = 0.0, cs = 0.0;
  for (double v : row_totals) rs += v;
  for (double v : col_totals) cs += v;
  if (std::abs(rs - cs) > 1e-6 * std::max({rs, cs, 1e-300}))
    throw InfeasibleError("ras_estimate: marginal sums differ beyond 1e-6 relative");

  RasResult res;
  res.rows = m;
  res.cols = n;
  res.matrix.assign(static_cast<std::size_t>(m) * n, 1.0);
  if (rs == 0.0) {  // all-zero targets: the zero matrix is exact
    std::fill(res.matrix.begin(), res.matrix.end(), 0.0);
    return res;
  }
  std::vector<double> cols(col_totals);
  const double cscale = rs / cs;
  for (double& v : cols) v *= cscale;

  auto cell = [&](int i, int j) -> double& {
    return res.matrix[static_cast<std::size_t>(i) * n + j];
  };
  auto mask_diagonal = [&] {
    if (!opt.forbid_diagonal) return;
    for (int i = 0; i < m; ++i) cell(i, i) = 0.0;
  };
  mask_diagonal();

  double prev_residual = std::numeric_limits<double>::infinity();
  int stall = 0;
  for (int iter = 1; iter <= opt.max_iter; ++iter) {
    mask_diagonal();
    for (int i = 0; i < m; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += cell(i, j);
      if (s == 0.0) {
        if (row_totals[static_cast<std::size_t>(i)] > 0.0)
          throw InfeasibleError("ras_estimate: row " + std::to_string(i) +
                                " has positive target but no admissible cells");
        continue;
      }
      const double f = row_totals[static_cast<std::size_t>(i)] / s;
      for (int j = 0; j < n; ++j) cell(i, j) *= f;
    }
    mask_diagonal();
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int i = 0; i < m; ++i) s += cell(i, j);
      if (s == 0.0) {
        if (cols[static_cast<std::size_t>(j)] > 0.0)
          throw InfeasibleError("ras_estimate: column " + std::to_string(j) +
                                " has positive target but no admissible cells");
        continue;
      }
      const double f = cols[static_cast<std::size_t>(j)] / s;
      for (int i = 0; i < m; ++i) cell(i, j) *= f;
    }
    double residual = 0.0;
    for (int i = 0; i < m; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += cell(i, j);
      residual = std::max(residual, std::abs(s - row_totals[static_cast<std::size_t>(i)]));
    }
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int i = 0; i < m; ++i) s += cell(i, j);
      residual = std::max(residual, std::abs(s - cols[static_cast<std::size_t>(j)]));
    }
    res.iterations = iter;
    res.residual = residual;
    res.residual_history.push_back(residual);
    if (residual <= opt.tol) return res;
    if (prev_residual - residual <= 1e-15 * std::max(1.0, residual)) {
      if (++stall >= 3)
        throw InfeasibleError("ras_estimate: residual stalled at " +
                              std::to_string(residual) + "; targets unreachable");
    } else {
      stall = 0;
    }
    prev_residual = residual;
  }
  throw ConvergenceError("ras_estimate: residual " + std::to_string(res.residual) +
                         " after " + std::to_string(opt.max_iter) + " iterations");
}

InterbankGraph shuffle_edge_features(const InterbankGraph& g, std::uint64_t seed) {
  InterbankGraph out = g;
  if (g.edges.size() < 2) return out;
  Rng rng(seed);
  const std::vector<int> perm = rng.permutation(static_cast<int>(g.edges.size()));
  for (std::size_t e = 0; e < g.edges.size(); ++e)
    out.edges[e].edge_features = g.edges[static_cast<std::size_t>(perm[e])].edge_features;
  return out;
}

void write_nodes_csv(const std::string& path, const InterbankGraph& g) {
  const bool with_labels =
      !g.nodes.empty() &&
      std::all_of(g.nodes.begin(), g.nodes.end(), [](const auto& n) { return n.label >= 0; });
  std::vector<std::string> lines;
  lines.reserve(g.nodes.size() + 1);
  std::string header = "id,total_assets,tier1,npl,lcr,fraud_rate,sar_rate";
  if (with_labels) header += ",label";
  lines.push_back(header);
  for (const auto& node : g.nodes) {
    std::string row = node.id;
    for (double f : node.features) row += "," + csv::format_double(f);
    if (with_labels) row += "," + std::to_string(node.label);
    lines.push_back(std::move(row));
  }
  csv::write_lines(path, lines);
}

void write_edges_csv(const std::string& path, const InterbankGraph& g,
                     const std::vector<int>& windows) {
  std::vector<std::string> lines;
  lines.reserve(g.edges.size() + 1);
  const std::size_t arity = g.edges.empty() ? windows.size() : g.edges[0].edge_features.size();
  std::string header = "src,dst,exposure";
  for (std::size_t k = 0; k < arity; ++k)
    header += ",f" + (k < windows.size() ? std::to_string(windows[k]) : std::to_string(k));
  lines.push_back(header);
  for (const auto& e : g.edges) {
    std::string row = g.nodes[static_cast<std::size_t>(e.src)].id + "," +
                      g.nodes[static_cast<std::size_t>(e.dst)].id + "," +
                      csv::format_double(e.exposure);
    for (double f : e.edge_features) row += "," + csv::format_double(f);
    lines.push_back(std::move(row));
  }
  csv::write_lines(path, lines);
}

InterbankGraph read_graph_csv(const std::string& nodes_path, const std::string& edges_path) {
  InterbankGraph g;
  const csv::Table nt = csv::read_table(nodes_path);
  const int id_col = csv::require_column(nt, "id");
  const char* feature_names[kNodeFeatureCount] = {"total_assets", "tier1", "npl",
                                                  "lcr",          "fraud_rate", "sar_rate"};
  int feat_cols[kNodeFeatureCount];
  for (int k = 0; k < kNodeFeatureCount; ++k)
    feat_cols[k] = csv::require_column(nt, feature_names[k]);
  const int label_col = csv::column(nt, "label");

  std::unordered_map<std::string, int> index;
  index.reserve(nt.rows.size());
  for (const auto& row : nt.rows) {
    InstitutionNode node;
    node.id = row[static_cast<std::size_t>(id_col)];
    for (int k = 0; k < kNodeFeatureCount; ++k)
      node.features[static_cast<std::size_t>(k)] =
          csv::parse_double(row[static_cast<std::size_t>(feat_cols[k])], nodes_path);
    if (label_col >= 0)
      node.label = static_cast<int>(csv::parse_long(row[static_cast<std::size_t>(label_col)],
                                                    nodes_path));
    if (!index.emplace(node.id, static_cast<int>(g.nodes.size())).second)
      throw IoError(nodes_path + ": duplicate institution id " + node.id);
    g.nodes.push_back(std::move(node));
  }

  const csv::Table et = csv::read_table(edges_path);
  const int src_col = csv::require_column(et, "src");
  const int dst_col = csv::require_column(et, "dst");
  const int exp_col = csv::require_column(et, "exposure");
  for (const auto& row : et.rows) {
    DirectedEdge e;
    const auto s = index.find(row[static_cast<std::size_t>(src_col)]);
    const auto d = index.find(row[static_cast<std::size_t>(dst_col)]);
    if (s == index.end() || d == index.end())
      throw IoError(edges_path + ": edge references unknown institution");
    e.src = s->second;
    e.dst = d->second;
    e.exposure = csv::parse_double(row[static_cast<std::size_t>(exp_col)], edges_path);
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (static_cast<int>(c) == src_col || static_cast<int>(c) == dst_col ||
          static_cast<int>(c) == exp_col)
        continue;
      e.edge_features.push_back(csv::parse_double(row[c], edges_path));
    }
    g.edges.push_back(std::move(e));
  }
  g.validate();
  return g;
}

}  // namespace scafds::graph
