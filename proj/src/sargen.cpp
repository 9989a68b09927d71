#include "scafds/sargen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "scafds/csv.hpp"
#include "scafds/errors.hpp"

namespace scafds::sargen {

namespace {

std::string fixed4(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  return buf;
}

void check_thresholds(const Thresholds& t) {
  if (!(t.tau1_percentile > 0.0 && t.tau1_percentile < 100.0))
    throw ConfigError("tau1 percentile must lie strictly between 0 and 100");
  if (t.tau2 < 0.0) throw ConfigError("tau2 must be nonnegative");
  if (t.tau3 >= 0.0 && !(t.tau3 > 0.0 && t.tau3 < 1.0))
    throw ConfigError("an explicit tau3 must lie strictly between 0 and 1");
}

// nearest-rank percentile: smallest value with at least p percent of the
// sample at or below it
double nearest_rank(std::vector<double> values, double percentile) {
  const std::size_t n = values.size();
  std::sort(values.begin(), values.end());
  auto rank = static_cast<std::size_t>(std::ceil(percentile * double(n) / 100.0));
  rank = std::min(std::max<std::size_t>(rank, 1), n);
  return values[rank - 1];
}

}  // namespace

GateResult gate_assertions(const attribution::AttributionRecord& record,
                           const Thresholds& thresholds) {
  check_thresholds(thresholds);
  GateResult out;
  out.tau2 = thresholds.tau2;
  out.tau3 = thresholds.tau3 >= 0.0
                 ? thresholds.tau3
                 : (record.layer3.empty() ? 1.0 : 2.0 / double(record.layer3.size()));

  std::vector<double> magnitudes;
  magnitudes.reserve(record.layer1.size());
  for (const auto& f : record.layer1) magnitudes.push_back(std::abs(f.shapley));
  out.tau1_cutoff = magnitudes.empty() ? 0.0 : nearest_rank(magnitudes, thresholds.tau1_percentile);

  auto place = [&](SarAssertion a, double gate) {
    a.passed_threshold = a.grounding.value > gate;
    (a.passed_threshold ? out.emitted : out.suppressed).push_back(std::move(a));
  };

  for (std::size_t i = 0; i < record.layer1.size(); ++i) {
    const auto& f = record.layer1[i];
    SarAssertion a;
    a.kind = AssertionKind::transaction_feature;
    a.grounding = {1, i, std::abs(f.shapley)};
    a.text = "Feature " + f.feature + " contributed " + fixed4(f.shapley) +
             " to the transaction risk score (ref L1:" + std::to_string(i) + ").";
    place(std::move(a), out.tau1_cutoff);
  }
  for (std::size_t i = 0; i < record.layer2.size(); ++i) {
    const auto& e = record.layer2[i];
    SarAssertion a;
    a.kind = AssertionKind::counterparty_relationship;
    a.grounding = {2, i, e.fco};
    a.text = "Counterparty " + std::to_string(e.dst) + " relationship carries fraud co-occurrence " +
             fixed4(e.fco) + " with coupling contribution " + fixed4(e.contribution) +
             " (ref L2:" + std::to_string(i) + ").";
    place(std::move(a), out.tau2);
  }
  for (std::size_t t = 0; t < record.layer3.size(); ++t) {
    SarAssertion a;
    a.kind = AssertionKind::temporal_pattern;
    a.grounding = {3, t, record.layer3[t]};
    a.text = "Activity concentrates at window step " + std::to_string(t) +
             " with attention weight " + fixed4(record.layer3[t]) + " (ref L3:" +
             std::to_string(t) + ").";
    place(std::move(a), out.tau3);
  }
  return out;
}

SarReport render_report(const std::string& case_id, const CaseMetadata& meta,
                        const GateResult& gate) {
  SarReport r;
  r.case_id = case_id;
  r.subject_id = meta.subject_id;
  r.activity_type = meta.activity_type;
  r.amounts = meta.amounts;
  r.date_start = meta.date_start;
  r.date_end = meta.date_end;
  for (const auto& a : gate.emitted) r.description.push_back(a.text);
  r.grounding_log = gate.emitted;
  r.grounding_log.insert(r.grounding_log.end(), gate.suppressed.begin(), gate.suppressed.end());
  r.compliant = !r.subject_id.empty() && !r.activity_type.empty() && !r.amounts.empty() &&
                !r.date_start.empty() && !r.date_end.empty() && !r.description.empty();
  return r;
}

GroundingRates grounding_rate(const std::vector<GateResult>& cases) {
  if (cases.empty()) throw DomainError("grounding rate needs at least one case");
  GroundingRates g;
  auto tally = [&](const SarAssertion& a, bool emitted) {
    LayerRate* layer = a.grounding.layer == 1   ? &g.layer1
                       : a.grounding.layer == 2 ? &g.layer2
                                                : &g.layer3;
    layer->candidates += 1;
    if (emitted) layer->emitted += 1;
  };
  for (const auto& c : cases) {
    for (const auto& a : c.emitted) tally(a, true);
    for (const auto& a : c.suppressed) tally(a, false);
  }
  const std::size_t candidates = g.layer1.candidates + g.layer2.candidates + g.layer3.candidates;
  const std::size_t emitted = g.layer1.emitted + g.layer2.emitted + g.layer3.emitted;
  g.overall_applicable = candidates > 0;
  g.overall = g.overall_applicable ? double(emitted) / double(candidates) : 0.0;
  return g;
}

FactualAccuracy factual_accuracy(const std::vector<SarReport>& reports,
                                 const std::vector<CaseMetadata>& truth) {
  if (reports.size() != truth.size())
    throw ShapeError("reports and ground truth cases must pair up");
  FactualAccuracy acc;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    const auto& t = truth[i];
    acc.checked += 1;
    acc.matched += r.subject_id == t.subject_id ? 1 : 0;
    acc.checked += 1;
    acc.matched += (r.date_start == t.date_start && r.date_end == t.date_end) ? 1 : 0;
    const std::size_t slots = std::max(r.amounts.size(), t.amounts.size());
    for (std::size_t k = 0; k < slots; ++k) {
      acc.checked += 1;
      const bool both = k < r.amounts.size() && k < t.amounts.size();
      acc.matched += (both && r.amounts[k] == t.amounts[k]) ? 1 : 0;
    }
  }
  acc.applicable = acc.checked > 0;
  acc.rate = acc.applicable ? double(acc.matched) / double(acc.checked) : 0.0;
  return acc;
}

namespace {

const char* kind_name(AssertionKind k) {
  switch (k) {
    case AssertionKind::transaction_feature: return "transaction_feature";
    case AssertionKind::counterparty_relationship: return "counterparty_relationship";
    case AssertionKind::temporal_pattern: return "temporal_pattern";
  }
  return "unknown";
}

}  // namespace

std::string report_to_json(const SarReport& report) {
  nlohmann::json j;
  j["case_id"] = report.case_id;
  j["subject_id"] = report.subject_id;
  j["activity_type"] = report.activity_type;
  j["amounts"] = report.amounts;
  j["date_range"] = {{"start", report.date_start}, {"end", report.date_end}};
  j["description"] = report.description;
  j["grounding"] = nlohmann::json::array();
  for (const auto& a : report.grounding_log)
    j["grounding"].push_back({{"kind", kind_name(a.kind)},
                              {"layer", a.grounding.layer},
                              {"index", a.grounding.index},
                              {"value", a.grounding.value},
                              {"passed", a.passed_threshold},
                              {"text", a.text}});
  j["compliant"] = report.compliant;
  return j.dump(2);
}

void write_report(const std::string& path, const SarReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << report_to_json(report) << "\n";
  if (!out) throw IoError("failed writing " + path);
}

void write_rates_csv(const std::string& path, const GroundingRates& rates) {
  auto row = [](const std::string& name, const LayerRate& r) {
    return name + "," + std::to_string(r.candidates) + "," + std::to_string(r.emitted) + "," +
           (r.applicable() ? csv::format_double(r.rate()) : "na");
  };
  const std::size_t cand = rates.layer1.candidates + rates.layer2.candidates +
                           rates.layer3.candidates;
  const std::size_t emit = rates.layer1.emitted + rates.layer2.emitted + rates.layer3.emitted;
  std::vector<std::string> lines = {
      "layer,candidates,emitted,rate",
      row("layer1", rates.layer1),
      row("layer2", rates.layer2),
      row("layer3", rates.layer3),
      "overall," + std::to_string(cand) + "," + std::to_string(emit) + "," +
          (rates.overall_applicable ? csv::format_double(rates.overall) : "na"),
  };
  csv::write_lines(path, lines);
}

}  // namespace scafds::sargen
