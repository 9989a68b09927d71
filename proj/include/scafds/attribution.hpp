#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "scafds/fusion.hpp"
#include "scafds/seqmodel.hpp"

namespace scafds::attribution {

// Shapley output for one case. std_errors is empty in exact mode; in sampled
// mode base_value + sum(values) still equals model_output up to float
// summation, because every permutation's marginals telescope.
struct ShapleyResult {
  std::vector<double> values;
  std::vector<double> std_errors;
  double base_value = 0.0;    // model with every feature absent
  double model_output = 0.0;  // model with every feature present
};

// Batch coalition scorer: each row of keep is one coalition mask (1 = feature
// present, 0 = replaced by its reference), and the scorer returns one model
// output per row. Batching lets tape-backed models price an entire
// enumeration in a single replay instead of 2^n separate evaluations.
using CoalitionScorer =
    std::function<std::vector<double>(const std::vector<std::vector<int>>&)>;

// Exact Shapley values by full coalition enumeration (2^n scorer rows).
// n_features above max_features is refused: use shapley_sampled instead.
ShapleyResult shapley_exact_masks(const CoalitionScorer& model, int n_features,
                                  int max_features = 12);

// Permutation-sampling estimator with per-feature standard errors
// (sd of the marginal contributions / sqrt(n_permutations)).
// Requires n_permutations >= 100. Deterministic for a given seed.
ShapleyResult shapley_sampled_masks(const CoalitionScorer& model, int n_features,
                                    int n_permutations, std::uint64_t seed);

// Pointwise-model convenience forms: features absent from a coalition are
// replaced by the matching background entries before scoring.
ShapleyResult shapley_exact(const std::function<double(const std::vector<double>&)>& model,
                            const std::vector<double>& x, const std::vector<double>& background,
                            int max_features = 12);
ShapleyResult shapley_sampled(const std::function<double(const std::vector<double>&)>& model,
                              const std::vector<double>& x, const std::vector<double>& background,
                              int n_permutations, std::uint64_t seed);

// One directed counterparty edge of the case institution.
struct Counterparty {
  std::size_t id = 0;
  std::vector<double> embedding;
  double fco = 0.0;  // co-occurrence weight of the edge, carried for gating
};

struct EdgeContribution {
  std::size_t src = 0, dst = 0;
  double contribution = 0.0;  // w3 * c_src^T M c_dst
  double fco = 0.0;
};

// Per-edge decomposition of the coupling term: the amplification a case
// institution receives is a sum over its outgoing edges, so each edge owns
// exactly w3 * c_v^T M c_u of it.
std::vector<EdgeContribution> network_attribution(std::size_t v, const std::vector<double>& c_v,
                                                  const std::vector<Counterparty>& neighbors,
                                                  const fusion::FusionParams& params);

struct FeatureAttribution {
  std::string feature;
  double shapley = 0.0;
  double std_error = 0.0;  // zero in exact mode
};

// Three-layer forensic record for one case: channel Shapley values on the
// sequence scorer, per-edge coupling contributions, and the temporal
// attention profile (a simplex over the window's steps).
struct AttributionRecord {
  std::string case_id;
  std::vector<FeatureAttribution> layer1;
  std::vector<EdgeContribution> layer2;
  std::vector<double> layer3;
  double base_value = 0.0;
  double model_output = 0.0;
  bool sampled = false;  // layer1 came from the permutation estimator
};

// Which score layer 1 decomposes: the raw sequence score, or the fused
// forensic score with the case's network terms held fixed. The fused target
// is constant in the channels when the fusion head was trained without the
// transaction term, so every value degenerates to zero there.
enum class Layer1Target { tx_score, fused_score };

struct RecordOptions {
  Layer1Target target = Layer1Target::tx_score;
  int max_features = 12;     // channel count above this switches to sampling
  int n_permutations = 200;  // sampled mode only
  std::uint64_t seed = 1;
};

// Everything a record needs about one flagged case. background holds one
// reference value per channel (training medians); channel_names may be left
// empty for generated defaults.
struct CaseInputs {
  std::string case_id;
  seqmodel::TxSequence sequence;
  std::vector<std::string> channel_names;
  std::vector<double> background;
  std::size_t institution = 0;
  std::vector<double> embedding;  // c_v of the institution
  std::vector<Counterparty> counterparties;
};

// Assembles the full record from trained stage-4 and stage-5 models. Both
// models must have been through their training loops (a zero-epoch budget
// counts as trained at init). Exact layer-1 efficiency is verified to 1e-8.
AttributionRecord build_record(const CaseInputs& in, const seqmodel::Stage4Model& stage4,
                               const fusion::Stage5Model& stage5, const RecordOptions& opt = {});

// JSON round trip. The document layout is documented in the repository
// README under "Attribution records".
std::string record_to_json(const AttributionRecord& record);
AttributionRecord record_from_json(const std::string& text);
void write_record(const std::string& path, const AttributionRecord& record);
AttributionRecord read_record(const std::string& path);

}  // namespace scafds::attribution
