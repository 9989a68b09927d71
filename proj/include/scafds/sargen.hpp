#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "scafds/attribution.hpp"

namespace scafds::sargen {

// Assertion gates. tau1_percentile must lie in (0,100) and tau2 must be
// nonnegative. A negative tau3 (the default) derives 2/T from the case's own
// window length; an explicit tau3 must lie in (0,1). Windows shorter than
// three steps derive a tau3 of 1 or more, where no temporal assertion can
// pass.
struct Thresholds {
  double tau1_percentile = 70.0;
  double tau2 = 0.05;
  double tau3 = -1.0;
};

enum class AssertionKind { transaction_feature, counterparty_relationship, temporal_pattern };

// Pointer into the attribution record: layer (1..3), candidate index within
// the layer, and the gated magnitude (|shapley|, edge f, or alpha_t).
struct GroundingRef {
  int layer = 1;
  std::size_t index = 0;
  double value = 0.0;
};

struct SarAssertion {
  AssertionKind kind = AssertionKind::transaction_feature;
  std::string text;
  GroundingRef grounding;
  bool passed_threshold = false;
};

// Candidate partition for one case: emitted holds every assertion whose
// grounding value strictly exceeds its gate, suppressed holds the rest.
// The resolved gates are carried along for audit.
struct GateResult {
  std::vector<SarAssertion> emitted, suppressed;
  double tau1_cutoff = 0.0;  // nearest-rank percentile of |shapley| in the case
  double tau2 = 0.0;
  double tau3 = 0.0;
};

// One candidate per layer-1 feature, per layer-2 edge, and per layer-3 time
// step. Layer 1 gates on absolute Shapley magnitude against the case's own
// percentile cutoff; ten distinct features at the default percentile emit
// exactly three.
GateResult gate_assertions(const attribution::AttributionRecord& record,  //
                           const Thresholds& thresholds);

// Case facts the report copies verbatim. Empty fields are legal here and
// surface as a non-compliant report rather than an error.
struct CaseMetadata {
  std::string subject_id;
  std::string activity_type;
  std::vector<double> amounts;
  std::string date_start, date_end;
};

struct SarReport {
  std::string case_id;
  std::string subject_id;
  std::string activity_type;
  std::vector<double> amounts;
  std::string date_start, date_end;
  std::vector<std::string> description;     // emitted assertion texts only
  std::vector<SarAssertion> grounding_log;  // full gate log, both partitions
  bool compliant = false;  // all five required fields present and nonempty
};

SarReport render_report(const std::string& case_id, const CaseMetadata& meta,
                        const GateResult& gate);

// candidates/emitted tallies for one layer across a case set.
struct LayerRate {
  std::size_t candidates = 0, emitted = 0;
  bool applicable() const { return candidates > 0; }
  double rate() const { return applicable() ? double(emitted) / double(candidates) : 0.0; }
};

// Per-layer rates plus the candidate-weighted overall rate; layers without
// candidates are excluded from the overall tally.
struct GroundingRates {
  LayerRate layer1, layer2, layer3;
  double overall = 0.0;
  bool overall_applicable = false;
};

GroundingRates grounding_rate(const std::vector<GateResult>& cases);

// Exact-match rate over subject id, each amount slot, and the date range of
// paired (report, truth) cases. Reports generated by render_report score 1.0
// by construction; the metric exists to audit externally produced reports.
struct FactualAccuracy {
  std::size_t checked = 0, matched = 0;
  bool applicable = false;
  double rate = 0.0;
};

FactualAccuracy factual_accuracy(const std::vector<SarReport>& reports,
                                 const std::vector<CaseMetadata>& truth);

// JSON document per case; a small CSV table of the batch rates.
std::string report_to_json(const SarReport& report);
void write_report(const std::string& path, const SarReport& report);
void write_rates_csv(const std::string& path, const GroundingRates& rates);

}  // namespace scafds::sargen
