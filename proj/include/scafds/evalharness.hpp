#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scafds/fusion.hpp"
#include "scafds/stgat.hpp"
#include "scafds/synthnet.hpp"

namespace scafds::evalharness {

// Area under the precision-recall curve by the average-precision (step)
// construction; equal scores are grouped so ties cannot inflate the area.
// Labels must contain both classes.
double auprc(const std::vector<double>& scores, const std::vector<double>& labels);

// Probability a random positive outranks a random negative, ties counting
// one half (midrank construction).
double auroc(const std::vector<double>& scores, const std::vector<double>& labels);

struct F1Result {
  double threshold = 0.0;
  double f1 = 0.0;  // on the test split, at the validation-optimal threshold
};

// Sweeps the unique validation scores for the F1-maximizing decision rule
// (predict positive at score >= threshold), reports the midpoint of the
// optimal gap, and applies it to the test split. Equal F1 resolves to the
// largest threshold.
F1Result f1_at_validation_threshold(const std::vector<double>& val_scores,
                                    const std::vector<double>& val_labels,
                                    const std::vector<double>& test_scores,
                                    const std::vector<double>& test_labels);

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  double w_plus = 0.0;
  double p_value = 1.0;  // two-sided
  int n = 0;             // pairs after dropping zero differences
  bool exact = false;    // enumeration (n <= 20) vs normal approximation
  bool degenerate = false;  // every difference was zero
};

// Paired two-sided signed-rank test. Exact sign enumeration for n <= 20,
// normal approximation with tie and continuity corrections above. Needs at
// least 5 nonzero differences unless all differences vanish, which returns
// the degenerate flag instead.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b);

struct Split {
  std::vector<int> train, val, test;
};

// Seeded 70/15/15 split stratified by label value: within each class the
// indices are shuffled and allocated val and test shares first.
Split stratified_split(const std::vector<double>& labels, std::uint64_t seed,
                       double val_frac = 0.15, double test_frac = 0.15);

struct RunResult {
  std::string model;
  std::uint64_t seed = 0;
  double auprc = 0.0, auroc = 0.0, f1 = 0.0;
  double threshold = 0.0;
  bool failed = false;  // training diverged; metrics are meaningless
};

// One experiment definition: the synthetic network, the stage hypers, and
// the institution-score assembly. Seeds in the runner override the seed
// fields here.
struct AblationConfig {
  synthnet::SynthConfig net;
  int n_quarters = 4;
  double drift = 0.05;
  stgat::Stage3Hyper h3;
  fusion::FusionHyper h5;
  double gamma = 10.0;  // pagerank weight inside the systemic score
  double pair_threshold = 0.05;
  int n_contrast_pairs = 200;
  double val_frac = 0.15, test_frac = 0.15;
  int gcn_hidden = 16;
};

// Canonical variant names, in emission order: "full", "no_edge",
// "no_fusion", "no_temporal", "shuffled_edge", "gcn", "node_gat".
const std::vector<std::string>& variant_names();

// Snapshot set for the shuffled_edge control: each quarter's edge features
// permuted under a per-quarter seed derived from the run seed.
std::vector<graph::InterbankGraph> shuffle_variant_snapshots(
    const std::vector<graph::InterbankGraph>& snapshots, std::uint64_t seed);

// Trains and scores every variant on identical per-seed splits. Variants of
// the staged pipeline are ranked by their systemic score; the two plain
// baselines are ranked by their own output probability. A diverging run
// marks its row failed and the suite continues. Needs at least 3 seeds.
// models empty = every variant; otherwise a subset of variant_names(),
// still emitted in canonical order.
std::vector<RunResult> run_ablation_suite(const AblationConfig& config,
                                          const std::vector<std::uint64_t>& seeds,
                                          const std::vector<std::string>& models = {});

struct MetricSummary {
  double mean = 0.0, sd = 0.0;
};

struct ModelSummary {
  std::string model;
  int n_runs = 0, n_failed = 0;
  MetricSummary auprc, auroc, f1;
};

// Per-model mean and sample standard deviation over non-failed rows, models
// in first-appearance order.
std::vector<ModelSummary> summarize(const std::vector<RunResult>& results);

struct PairwiseComparison {
  std::string model_a, model_b;
  WilcoxonResult test;   // on per-seed AUPRC pairs
  bool valid = false;    // false when too few shared non-failed seeds
};

// Signed-rank tests between every model pair, pairing rows by seed.
std::vector<PairwiseComparison> pairwise_wilcoxon(const std::vector<RunResult>& results);

// Fixed-width text table of summarize() plus a csv of the raw rows.
std::string format_table(const std::vector<RunResult>& results);
void write_results_csv(const std::string& path, const std::vector<RunResult>& results);

}  // namespace scafds::evalharness
