#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "scafds/evalharness.hpp"
#include "scafds/sargen.hpp"
#include "scafds/seqmodel.hpp"

namespace scafds::pipeline {

// Malformed invocation rather than a malformed artifact: empty model list,
// unknown subcommand argument. The entry point maps it to the usage code.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Process exit codes; 0 is success.
inline constexpr int kExitUsage = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumeric = 4;
inline constexpr int kExitState = 5;

int exit_code_for(const std::exception& e);

// SCAFDS_LOG: quiet|info|debug (or 0|1|2), default info. Log lines go to
// stderr so stdout stays parseable.
int log_level();
void log_line(int level, const std::string& msg);

// One document drives every command. The root seed feeds every stage; the
// per-stage seed fields are overwritten from it at run time.
struct PipelineConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  std::string ablation = "full";  // training variant, CLI spelling accepted

  synthnet::SynthConfig net;
  int n_quarters = 4;
  double drift = 0.05;

  int n_sequences = 300;
  int sequence_length = 32;
  int sequence_channels = 6;

  stgat::Stage3Hyper stage3;
  seqmodel::Stage4Hyper stage4;
  fusion::FusionHyper stage5;  // include_tx forced off: institution-level run
  double systemic_gamma = 10.0;
  double pair_threshold = 0.05;
  int n_contrast_pairs = 200;

  std::vector<std::uint64_t> eval_seeds{1, 2, 3, 4, 5};
  std::vector<std::string> models = evalharness::variant_names();
  double val_frac = 0.15, test_frac = 0.15;
  int gcn_hidden = 16;

  int top_k = 10;
  int shapley_permutations = 200;
  sargen::Thresholds thresholds;
};

// Accepts both CLI spellings (noedge, nofusion, notemporal, shuffled) and
// the canonical suite names (no_edge, ...). Throws UsageError.
std::string normalize_model_name(const std::string& name);

// Strict parse: unknown keys, wrong types, and out-of-range values are
// ConfigErrors naming the offending key. Absent keys keep their defaults.
PipelineConfig config_from_json(const std::string& text);
PipelineConfig read_config(const std::string& path);
std::string config_to_json(const PipelineConfig& config);

struct GenerateSummary {
  int n_nodes = 0;
  int n_edges = 0;
  double positive_rate = 0.0;
  std::vector<std::string> files;
};
// Synthetic network snapshots (per-quarter node/edge CSVs) plus a fraud
// event log derived from the labeled institutions.
GenerateSummary cmd_generate(const PipelineConfig& config);

struct TrainSummary {
  bool resumed = false;          // all three checkpoints were already present
  std::uint64_t state_hash = 0;  // FNV-1a over every trained parameter
  std::vector<std::string> files;
};
// Trains stages 3..5 on the generated artifacts under the configured
// ablation variant; writes checkpoints, loss curves, and institution scores.
// With all checkpoints present it reloads them instead of retraining.
TrainSummary cmd_train(const PipelineConfig& config);

struct EvaluateSummary {
  std::string table;  // fixed-width summary, one row per model
  std::vector<evalharness::RunResult> rows;
  std::vector<std::string> files;
};
// Runs the ablation suite over eval_seeds and the configured model list,
// writing the raw rows and the summary table (with signed-rank p-values
// against the first listed model when enough seeds are present).
EvaluateSummary cmd_evaluate(const PipelineConfig& config);

struct AttributeSummary {
  std::vector<std::string> case_ids;  // ranked by systemic score, descending
  std::vector<std::string> files;
};
// Loads the checkpoints, ranks institutions by systemic score, and writes a
// three-layer attribution record for each of the top_k cases.
AttributeSummary cmd_attribute(const PipelineConfig& config);

struct SarSummary {
  int n_reports = 0;
  sargen::GroundingRates rates;
  std::vector<std::string> files;
};
// Gates every attribution record through the thresholds and writes one
// report per case plus the pooled grounding-rate table.
SarSummary cmd_sar(const PipelineConfig& config);

}  // namespace scafds::pipeline
