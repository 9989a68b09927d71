#include "scafds/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "scafds/csv.hpp"
#include "scafds/errors.hpp"
#include "scafds/optim.hpp"
#include "scafds/rng.hpp"

namespace scafds::evalharness {

using num::AdamW;
using num::OptimConfig;
using num::Tape;
using num::Var;

namespace {

void check_binary_pair(const std::vector<double>& scores, const std::vector<double>& labels) {
  if (scores.size() != labels.size()) throw ShapeError("scores and labels must pair up");
  if (scores.empty()) throw DomainError("metrics need at least one sample");
  bool pos = false, neg = false;
  for (double y : labels) (y > 0.5 ? pos : neg) = true;
  if (!pos || !neg) throw DomainError("metric needs both classes present");
}

std::vector<std::size_t> order_desc(const std::vector<double>& scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

// midranks (1-based, ties averaged) of the values as given
std::vector<double> midranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size(), 0.0);
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double mid = 0.5 * double(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = mid;
    i = j + 1;
  }
  return rank;
}

}  // namespace

double auprc(const std::vector<double>& scores, const std::vector<double>& labels) {
  check_binary_pair(scores, labels);
  auto idx = order_desc(scores);
  double total_pos = 0.0;
  for (double y : labels) total_pos += y > 0.5 ? 1.0 : 0.0;

  double tp = 0.0, fp = 0.0, ap = 0.0, prev_recall = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) (labels[idx[k]] > 0.5 ? tp : fp) += 1.0;
    const double recall = tp / total_pos;
    const double precision = tp / (tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j + 1;
  }
  return ap;
}

double auroc(const std::vector<double>& scores, const std::vector<double>& labels) {
  check_binary_pair(scores, labels);
  auto rank = midranks(scores);
  double n1 = 0.0, sum_pos = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] > 0.5) {
      n1 += 1.0;
      sum_pos += rank[i];
    }
  const double n0 = double(labels.size()) - n1;
  const double u = sum_pos - n1 * (n1 + 1.0) / 2.0;
  return u / (n1 * n0);
}

namespace {

double f1_of(double tp, double fp, double fn) {
  const double denom = 2.0 * tp + fp + fn;
  return denom > 0.0 ? 2.0 * tp / denom : 0.0;
}

double f1_at(const std::vector<double>& scores, const std::vector<double>& labels, double t) {
  double tp = 0.0, fp = 0.0, fn = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool hat = scores[i] >= t;
    const bool y = labels[i] > 0.5;
    tp += (hat && y) ? 1.0 : 0.0;
    fp += (hat && !y) ? 1.0 : 0.0;
    fn += (!hat && y) ? 1.0 : 0.0;
  }
  return f1_of(tp, fp, fn);
}

}  // namespace

F1Result f1_at_validation_threshold(const std::vector<double>& val_scores,
                                    const std::vector<double>& val_labels,
                                    const std::vector<double>& test_scores,
                                    const std::vector<double>& test_labels) {
  check_binary_pair(val_scores, val_labels);
  check_binary_pair(test_scores, test_labels);

  std::vector<double> uniq = val_scores;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

  // descending sweep; strict improvement keeps the largest optimal threshold
  double best_f1 = -1.0;
  std::size_t best_j = 0;
  for (std::size_t jj = uniq.size(); jj-- > 0;) {
    const double f1 = f1_at(val_scores, val_labels, uniq[jj]);
    if (f1 > best_f1) {
      best_f1 = f1;
      best_j = jj;
    }
  }
  F1Result out;
  out.threshold = best_j > 0 ? 0.5 * (uniq[best_j - 1] + uniq[best_j]) : uniq[0];
  out.f1 = f1_at(test_scores, test_labels, out.threshold);
  return out;
}

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("paired samples must have equal length");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);

  WilcoxonResult r;
  if (d.empty()) {
    r.degenerate = true;
    r.exact = true;
    r.p_value = 1.0;
    return r;
  }
  r.n = static_cast<int>(d.size());
  if (r.n < 5) throw DomainError("signed-rank test needs at least 5 nonzero differences");

  std::vector<double> mag(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) mag[i] = std::abs(d[i]);
  auto rank = midranks(mag);
  double w_plus = 0.0, total = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    total += rank[i];
    if (d[i] > 0.0) w_plus += rank[i];
  }
  r.w_plus = w_plus;
  r.statistic = std::min(w_plus, total - w_plus);

  const int n = r.n;
  if (n <= 20) {
    // midranks are half-integers; doubling makes the subset sums exact ints
    std::vector<long long> r2(d.size());
    long long total2 = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      r2[i] = llround(2.0 * rank[i]);
      total2 += r2[i];
    }
    std::vector<unsigned long long> count(static_cast<std::size_t>(total2) + 1, 0);
    count[0] = 1;
    long long reach = 0;
    for (long long rr : r2) {
      for (long long s = reach; s >= 0; --s)
        if (count[s]) count[s + rr] += count[s];
      reach += rr;
    }
    const long long obs2 = llround(2.0 * w_plus);
    unsigned long long ge = 0, le = 0, denom = 0;
    for (long long s = 0; s <= total2; ++s) {
      denom += count[s];
      if (s >= obs2) ge += count[s];
      if (s <= obs2) le += count[s];
    }
    r.exact = true;
    r.p_value = std::min(1.0, 2.0 * double(std::min(ge, le)) / double(denom));
  } else {
    const double mu = double(n) * (n + 1.0) / 4.0;
    double sigma2 = double(n) * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
    // tie correction over groups of equal magnitudes
    std::vector<double> sorted_mag = mag;
    std::sort(sorted_mag.begin(), sorted_mag.end());
    std::size_t i = 0;
    while (i < sorted_mag.size()) {
      std::size_t j = i;
      while (j + 1 < sorted_mag.size() && sorted_mag[j + 1] == sorted_mag[i]) ++j;
      const double t = double(j - i + 1);
      sigma2 -= (t * t * t - t) / 48.0;
      i = j + 1;
    }
    double z = w_plus - mu;
    z -= z > 0.0 ? 0.5 : (z < 0.0 ? -0.5 : 0.0);  // continuity correction
    z /= std::sqrt(sigma2);
    r.exact = false;
    r.p_value = std::erfc(std::abs(z) / std::sqrt(2.0));
  }
  return r;
}

Split stratified_split(const std::vector<double>& labels, std::uint64_t seed, double val_frac,
                       double test_frac) {
  if (labels.empty()) throw DomainError("cannot split an empty label set");
  if (val_frac < 0.0 || test_frac < 0.0 || val_frac + test_frac >= 1.0)
    throw ConfigError("split fractions must be nonnegative and sum below 1");

  std::map<double, std::vector<int>> byclass;
  for (std::size_t i = 0; i < labels.size(); ++i)
    byclass[labels[i]].push_back(static_cast<int>(i));

  Split out;
  Rng rng(seed);
  for (auto& [label, members] : byclass) {
    (void)label;
    rng.shuffle(members);
    const auto n = static_cast<long long>(members.size());
    auto n_val = std::min<long long>(llround(val_frac * double(n)), n);
    auto n_test = std::min<long long>(llround(test_frac * double(n)), n - n_val);
    for (long long i = 0; i < n; ++i) {
      if (i < n_val)
        out.val.push_back(members[i]);
      else if (i < n_val + n_test)
        out.test.push_back(members[i]);
      else
        out.train.push_back(members[i]);
    }
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names = {"full",          "no_edge", "no_fusion",
                                                 "no_temporal",   "shuffled_edge",
                                                 "gcn",           "node_gat"};
  return names;
}

std::vector<graph::InterbankGraph> shuffle_variant_snapshots(
    const std::vector<graph::InterbankGraph>& snapshots, std::uint64_t seed) {
  std::vector<graph::InterbankGraph> out;
  out.reserve(snapshots.size());
  for (std::size_t q = 0; q < snapshots.size(); ++q)
    out.push_back(
        graph::shuffle_edge_features(snapshots[q], seed ^ (0x9e3779b97f4a7c15ULL * (q + 1))));
  return out;
}

namespace {

Var glorot(Tape& tape, int rows, int cols, Rng& rng) {
  const double lim = std::sqrt(6.0 / (rows + cols));
  std::vector<double> v(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
  for (auto& x : v) x = rng.uniform(-lim, lim);
  return tape.leaf({rows, cols}, std::move(v), true);
}

void run_train_loop(Tape& tape, Var loss, std::vector<Var>& params, double lr, double wd,
                    bool cosine, int epochs) {
  if (epochs <= 0) return;
  OptimConfig oc;
  oc.lr = lr;
  oc.weight_decay = wd;
  oc.cosine = cosine;
  oc.total_steps = epochs;
  AdamW opt(oc, params);
  double last_finite = std::numeric_limits<double>::quiet_NaN();
  for (int epoch = 0; epoch < epochs; ++epoch) {
    tape.replay();
    const double l = tape.scalar(loss);
    if (!std::isfinite(l)) {
      std::ostringstream msg;
      msg << "training diverged at epoch " << epoch << "; last finite loss " << last_finite;
      throw NumericError(msg.str());
    }
    last_finite = l;
    tape.zero_grad();
    tape.backward(loss);
    opt.step(tape);
  }
  tape.replay();
}

// Plain two-layer mean-aggregation network over snapshot-0 features: each
// layer averages the node with its in-neighbors, projects, and applies ELU.
// Ranked by its own sigmoid head; no edge features, attention, or fusion.
std::vector<double> gcn_scores(const graph::InterbankGraph& g, const std::vector<double>& labels,
                               const std::vector<int>& train_rows, const AblationConfig& config,
                               std::uint64_t seed) {
  const int n = static_cast<int>(g.nodes.size());
  const int d = graph::kNodeFeatureCount;

  std::vector<int> agg_src, agg_dst;
  std::vector<double> indeg(static_cast<std::size_t>(n), 0.0);
  for (const auto& e : g.edges) indeg[static_cast<std::size_t>(e.dst)] += 1.0;
  std::vector<double> w;
  for (const auto& e : g.edges) {
    agg_src.push_back(e.src);
    agg_dst.push_back(e.dst);
    w.push_back(1.0 / (indeg[static_cast<std::size_t>(e.dst)] + 1.0));
  }
  for (int v = 0; v < n; ++v) {
    agg_src.push_back(v);
    agg_dst.push_back(v);
    w.push_back(1.0 / (indeg[static_cast<std::size_t>(v)] + 1.0));
  }

  Tape tape;
  std::vector<double> xv(static_cast<std::size_t>(n) * d);
  for (int v = 0; v < n; ++v)
    for (int k = 0; k < d; ++k)
      xv[static_cast<std::size_t>(v) * d + k] = g.nodes[static_cast<std::size_t>(v)].features[k];
  Var x = tape.constant({n, d}, std::move(xv));
  const int n_mix = static_cast<int>(w.size());
  Var wmix = tape.constant({n_mix, 1}, std::move(w));

  Rng rng(seed);
  const int h = config.gcn_hidden;
  std::vector<Var> params;
  Var w1 = glorot(tape, d, h, rng);
  Var w2 = glorot(tape, h, h, rng);
  Var head = glorot(tape, h, 1, rng);
  Var bias = tape.leaf_scalar(0.0, true);
  params = {w1, w2, head, bias};

  auto aggregate = [&](Var hin) {
    return tape.segment_mix(hin, wmix, agg_src, agg_dst, n);
  };
  Var h1 = tape.elu(tape.matmul(aggregate(x), w1));
  Var h2 = tape.elu(tape.matmul(aggregate(h1), w2));
  Var prob = tape.sigmoid(tape.add_row_vec(tape.matmul(h2, head), bias));

  std::vector<double> wrow(labels.size(), 0.0);
  for (int rix : train_rows) wrow[static_cast<std::size_t>(rix)] = 1.0 / double(train_rows.size());
  Var loss = stgat::focal_loss(tape, prob, labels, wrow, config.h3.focal_gamma,
                               config.h3.focal_alpha);

  run_train_loop(tape, loss, params, config.h3.lr, config.h3.weight_decay, config.h3.cosine,
                 config.h3.epochs);
  return tape.at(prob).values;
}

std::vector<double> staged_scores(const std::vector<graph::InterbankGraph>& snaps,
                                  const std::vector<double>& labels, const Split& split,
                                  const stgat::PairSupervision& pairs,
                                  const std::vector<double>& prank, const AblationConfig& config,
                                  std::uint64_t seed, bool node_only, bool temporal,
                                  bool bilinear, bool systemic) {
  auto h3 = config.h3;
  h3.seed = seed;
  h3.gat.mode = node_only ? stgat::AttentionMode::node_only : stgat::AttentionMode::edge_aware;
  h3.temporal.enabled = temporal && config.h3.temporal.enabled;
  const bool pairs_on = !pairs.align_u.empty() || !pairs.contrast_u.empty();
  if (!pairs_on) {
    h3.align_weight = 0.0;
    h3.contrast_weight = 0.0;
  }
  auto m3 = stgat::build_stage3(snaps, labels, pairs, h3, split.train);
  stgat::train_stage3(m3);
  if (!systemic) return m3.probabilities();

  auto emb = m3.contagion_embeddings();
  std::vector<int> src, dst;
  for (const auto& e : snaps.front().edges) {
    src.push_back(e.src);
    dst.push_back(e.dst);
  }
  auto h5 = config.h5;
  h5.seed = seed;
  h5.include_tx = false;
  h5.bilinear = bilinear;
  auto m5 = fusion::build_stage5(emb, {}, src, dst, labels, pairs, h5, split.train);
  fusion::train_stage5(m5);
  auto sf = m5.forensic_scores();

  std::vector<double> scores(labels.size(), 0.0);
  for (std::size_t v = 0; v < scores.size(); ++v)
    scores[v] = fusion::systemic_risk_score({sf[v]}, {1.0}, config.gamma, prank[v]).value;
  return scores;
}

std::vector<double> gather(const std::vector<double>& v, const std::vector<int>& idx) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(v[static_cast<std::size_t>(i)]);
  return out;
}

RunResult evaluate_scores(const std::string& model, std::uint64_t seed,
                          const std::vector<double>& scores, const std::vector<double>& labels,
                          const Split& split) {
  RunResult rr;
  rr.model = model;
  rr.seed = seed;
  for (double s : scores)
    if (!std::isfinite(s)) {
      rr.failed = true;
      return rr;
    }
  const auto test_s = gather(scores, split.test);
  const auto test_y = gather(labels, split.test);
  rr.auprc = auprc(test_s, test_y);
  rr.auroc = auroc(test_s, test_y);
  auto f1 = f1_at_validation_threshold(gather(scores, split.val), gather(labels, split.val),
                                       test_s, test_y);
  rr.threshold = f1.threshold;
  rr.f1 = f1.f1;
  return rr;
}

}  // namespace

std::vector<RunResult> run_ablation_suite(const AblationConfig& config,
                                          const std::vector<std::uint64_t>& seeds,
                                          const std::vector<std::string>& models) {
  if (seeds.size() < 3) throw DomainError("the ablation suite needs at least 3 seeds");
  const auto& known = variant_names();
  for (const auto& m : models)
    if (std::find(known.begin(), known.end(), m) == known.end())
      throw ConfigError("unknown ablation variant: " + m);
  auto selected = [&](const std::string& name) {
    return models.empty() || std::find(models.begin(), models.end(), name) != models.end();
  };

  std::vector<RunResult> results;
  for (std::uint64_t seed : seeds) {
    auto net_cfg = config.net;
    net_cfg.seed = seed;
    auto snaps = synthnet::generate_snapshots(net_cfg, config.n_quarters, config.drift);

    const auto shuffled = shuffle_variant_snapshots(snaps, seed);

    std::vector<double> labels;
    for (const auto& node : snaps.front().nodes) labels.push_back(node.label);
    const auto split = stratified_split(labels, seed, config.val_frac, config.test_frac);
    const auto prank = graph::pagerank(snaps.front());
    const auto pairs =
        stgat::pairs_from_graph(snaps.front(), config.pair_threshold, config.n_contrast_pairs, seed);
    const auto pairs_shuffled = stgat::pairs_from_graph(shuffled.front(), config.pair_threshold,
                                                        config.n_contrast_pairs, seed);

    auto attempt = [&](const std::string& name, auto&& fn) {
      if (!selected(name)) return;
      RunResult rr;
      try {
        rr = evaluate_scores(name, seed, fn(), labels, split);
      } catch (const NumericError&) {
        rr.model = name;
        rr.seed = seed;
        rr.failed = true;
      }
      results.push_back(rr);
    };

    attempt("full", [&] {
      return staged_scores(snaps, labels, split, pairs, prank, config, seed, false, true, true,
                           true);
    });
    attempt("no_edge", [&] {
      return staged_scores(snaps, labels, split, stgat::PairSupervision{}, prank, config, seed,
                           true, true, true, true);
    });
    attempt("no_fusion", [&] {
      return staged_scores(snaps, labels, split, pairs, prank, config, seed, false, true, false,
                           true);
    });
    attempt("no_temporal", [&] {
      return staged_scores(snaps, labels, split, pairs, prank, config, seed, false, false, true,
                           true);
    });
    attempt("shuffled_edge", [&] {
      return staged_scores(shuffled, labels, split, pairs_shuffled, prank, config, seed, false,
                           true, true, true);
    });
    attempt("gcn", [&] { return gcn_scores(snaps.front(), labels, split.train, config, seed); });
    attempt("node_gat", [&] {
      return staged_scores(snaps, labels, split, stgat::PairSupervision{}, prank, config, seed,
                           true, false, true, false);
    });
  }
  return results;
}

std::vector<ModelSummary> summarize(const std::vector<RunResult>& results) {
  std::vector<ModelSummary> out;
  auto find = [&](const std::string& m) -> ModelSummary& {
    for (auto& s : out)
      if (s.model == m) return s;
    out.push_back({});
    out.back().model = m;
    return out.back();
  };
  std::map<std::string, std::vector<const RunResult*>> rows;
  for (const auto& r : results) {
    auto& s = find(r.model);
    s.n_runs += 1;
    if (r.failed)
      s.n_failed += 1;
    else
      rows[r.model].push_back(&r);
  }
  auto stat = [&](const std::vector<const RunResult*>& rs, double RunResult::* field) {
    MetricSummary m;
    if (rs.empty()) return m;
    for (auto* r : rs) m.mean += r->*field;
    m.mean /= double(rs.size());
    if (rs.size() > 1) {
      double acc = 0.0;
      for (auto* r : rs) acc += (r->*field - m.mean) * (r->*field - m.mean);
      m.sd = std::sqrt(acc / double(rs.size() - 1));
    }
    return m;
  };
  for (auto& s : out) {
    const auto& rs = rows[s.model];
    s.auprc = stat(rs, &RunResult::auprc);
    s.auroc = stat(rs, &RunResult::auroc);
    s.f1 = stat(rs, &RunResult::f1);
  }
  return out;
}

std::vector<PairwiseComparison> pairwise_wilcoxon(const std::vector<RunResult>& results) {
  std::vector<std::string> models;
  for (const auto& r : results)
    if (std::find(models.begin(), models.end(), r.model) == models.end())
      models.push_back(r.model);

  auto by_seed = [&](const std::string& m) {
    std::map<std::uint64_t, double> s;
    for (const auto& r : results)
      if (r.model == m && !r.failed) s[r.seed] = r.auprc;
    return s;
  };

  std::vector<PairwiseComparison> out;
  for (std::size_t i = 0; i < models.size(); ++i)
    for (std::size_t j = i + 1; j < models.size(); ++j) {
      PairwiseComparison pc;
      pc.model_a = models[i];
      pc.model_b = models[j];
      auto sa = by_seed(models[i]);
      auto sb = by_seed(models[j]);
      std::vector<double> a, b;
      for (const auto& [seed, v] : sa) {
        auto it = sb.find(seed);
        if (it != sb.end()) {
          a.push_back(v);
          b.push_back(it->second);
        }
      }
      try {
        pc.test = wilcoxon_signed_rank(a, b);
        pc.valid = true;
      } catch (const DomainError&) {
        pc.valid = false;
      }
      out.push_back(pc);
    }
  return out;
}

std::string format_table(const std::vector<RunResult>& results) {
  auto summaries = summarize(results);
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-14s %5s %7s %16s %16s %16s\n", "model", "runs", "failed",
                "auprc", "auroc", "f1");
  os << line;
  for (const auto& s : summaries) {
    auto cell = [](const MetricSummary& m) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.3f +/- %.3f", m.mean, m.sd);
      return std::string(buf);
    };
    std::snprintf(line, sizeof line, "%-14s %5d %7d %16s %16s %16s\n", s.model.c_str(), s.n_runs,
                  s.n_failed, cell(s.auprc).c_str(), cell(s.auroc).c_str(), cell(s.f1).c_str());
    os << line;
  }
  return os.str();
}

void write_results_csv(const std::string& path, const std::vector<RunResult>& results) {
  std::vector<std::string> lines = {"model,seed,auprc,auroc,f1,threshold,failed"};
  for (const auto& r : results)
    lines.push_back(r.model + "," + std::to_string(r.seed) + "," + csv::format_double(r.auprc) +
                    "," + csv::format_double(r.auroc) + "," + csv::format_double(r.f1) + "," +
                    csv::format_double(r.threshold) + "," + (r.failed ? "1" : "0"));
  csv::write_lines(path, lines);
}

}  // namespace scafds::evalharness
