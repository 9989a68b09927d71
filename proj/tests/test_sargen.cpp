#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "scafds/attribution.hpp"
#include "scafds/csv.hpp"
#include "scafds/errors.hpp"
#include "scafds/sargen.hpp"

using namespace scafds;
using attribution::AttributionRecord;
using sargen::AssertionKind;
using sargen::CaseMetadata;
using sargen::GateResult;
using sargen::Thresholds;

namespace {

AttributionRecord record_with(std::vector<double> shap, std::vector<double> fco,
                              std::vector<double> alpha) {
  AttributionRecord rec;
  rec.case_id = "case-1";
  for (std::size_t i = 0; i < shap.size(); ++i)
    rec.layer1.push_back({"ch-" + std::to_string(i), shap[i], 0.0});
  for (std::size_t i = 0; i < fco.size(); ++i)
    rec.layer2.push_back({0, i + 1, 0.1 * double(i + 1), fco[i]});
  rec.layer3 = std::move(alpha);
  return rec;
}

std::size_t count_kind(const std::vector<sargen::SarAssertion>& v, AssertionKind k) {
  std::size_t n = 0;
  for (const auto& a : v) n += a.kind == k ? 1 : 0;
  return n;
}

}  // namespace

TEST_CASE("ten distinct features at the default percentile emit exactly three") {
  auto rec = record_with({0.01, -0.02, 0.03, -0.04, 0.05, 0.06, -0.07, 0.08, 0.09, -0.10}, {}, {});
  auto gate = sargen::gate_assertions(rec, Thresholds{});
  CHECK(count_kind(gate.emitted, AssertionKind::transaction_feature) == 3);
  CHECK(count_kind(gate.suppressed, AssertionKind::transaction_feature) == 7);
  CHECK(gate.tau1_cutoff == doctest::Approx(0.07));  // 7th smallest magnitude

  // magnitude gating: the emitted three are the largest magnitudes,
  // regardless of sign
  for (const auto& a : gate.emitted) CHECK(a.grounding.value > 0.07);
  bool found_negative = false;
  for (const auto& a : gate.emitted)
    if (a.text.find("-0.1000") != std::string::npos) found_negative = true;
  CHECK(found_negative);
}

TEST_CASE("ties at the layer-1 cutoff are suppressed") {
  auto rec = record_with({0.5, 0.5, 0.5, 0.5}, {}, {});
  auto gate = sargen::gate_assertions(rec, Thresholds{});
  CHECK(gate.emitted.empty());
  CHECK(gate.suppressed.size() == 4);
}

TEST_CASE("layer-2 gate is strict on the edge co-occurrence value") {
  auto rec = record_with({}, {0.05, 0.0500000001, 0.04, 0.9}, {});
  auto gate = sargen::gate_assertions(rec, Thresholds{});
  REQUIRE(count_kind(gate.emitted, AssertionKind::counterparty_relationship) == 2);
  for (const auto& a : gate.emitted) CHECK(a.grounding.value > 0.05);
  // exact tau2 stays suppressed
  bool exact_suppressed = false;
  for (const auto& a : gate.suppressed)
    if (a.grounding.value == 0.05) exact_suppressed = true;
  CHECK(exact_suppressed);
}

TEST_CASE("layer-3 gate derives two-over-T from the record by default") {
  SUBCASE("uniform attention over 32 steps emits nothing") {
    auto rec = record_with({}, {}, std::vector<double>(32, 1.0 / 32.0));
    auto gate = sargen::gate_assertions(rec, Thresholds{});
    CHECK(gate.tau3 == doctest::Approx(2.0 / 32.0));
    CHECK(count_kind(gate.emitted, AssertionKind::temporal_pattern) == 0);
    CHECK(count_kind(gate.suppressed, AssertionKind::temporal_pattern) == 32);
  }
  SUBCASE("any sufficiently peaked attention emits at least one") {
    std::vector<double> alpha(32, 0.9 / 31.0);
    alpha[7] = 0.1;  // 0.1 > 2/32
    auto rec = record_with({}, {}, alpha);
    auto gate = sargen::gate_assertions(rec, Thresholds{});
    CHECK(count_kind(gate.emitted, AssertionKind::temporal_pattern) >= 1);
  }
  SUBCASE("short windows derive a gate no step can pass") {
    auto rec = record_with({}, {}, {0.6, 0.4});
    auto gate = sargen::gate_assertions(rec, Thresholds{});
    CHECK(gate.tau3 == doctest::Approx(1.0));
    CHECK(count_kind(gate.emitted, AssertionKind::temporal_pattern) == 0);
  }
  SUBCASE("an explicit tau3 overrides the derivation") {
    Thresholds t;
    t.tau3 = 0.01;
    auto rec = record_with({}, {}, std::vector<double>(32, 1.0 / 32.0));
    auto gate = sargen::gate_assertions(rec, t);
    CHECK(count_kind(gate.emitted, AssertionKind::temporal_pattern) == 32);
  }
}

TEST_CASE("gating partitions candidates and is sound and complete") {
  auto rec = record_with({0.2, -0.5, 0.01, 0.4}, {0.03, 0.6, 0.05}, {0.5, 0.3, 0.1, 0.1});
  auto gate = sargen::gate_assertions(rec, Thresholds{});
  CHECK(gate.emitted.size() + gate.suppressed.size() == 4 + 3 + 4);

  auto gate_of = [&](const sargen::SarAssertion& a) {
    return a.grounding.layer == 1 ? gate.tau1_cutoff : a.grounding.layer == 2 ? gate.tau2
                                                                              : gate.tau3;
  };
  for (const auto& a : gate.emitted) {
    CHECK(a.passed_threshold);
    CHECK(a.grounding.value > gate_of(a));
  }
  for (const auto& a : gate.suppressed) {
    CHECK_FALSE(a.passed_threshold);
    CHECK(a.grounding.value <= gate_of(a));
  }
}

TEST_CASE("threshold validation") {
  auto rec = record_with({0.1}, {}, {});
  Thresholds t;
  t.tau1_percentile = 0.0;
  CHECK_THROWS_AS(sargen::gate_assertions(rec, t), ConfigError);
  t.tau1_percentile = 100.0;
  CHECK_THROWS_AS(sargen::gate_assertions(rec, t), ConfigError);
  t = Thresholds{};
  t.tau2 = -0.1;
  CHECK_THROWS_AS(sargen::gate_assertions(rec, t), ConfigError);
  t = Thresholds{};
  t.tau3 = 1.5;
  CHECK_THROWS_AS(sargen::gate_assertions(rec, t), ConfigError);
  t.tau3 = 0.0;
  CHECK_THROWS_AS(sargen::gate_assertions(rec, t), ConfigError);
}

TEST_CASE("rendered reports carry the five fields and a compliance verdict") {
  auto rec = record_with({0.9, 0.01, 0.02, 0.03}, {0.5}, {0.7, 0.1, 0.1, 0.1});
  auto gate = sargen::gate_assertions(rec, Thresholds{});
  REQUIRE_FALSE(gate.emitted.empty());

  CaseMetadata meta;
  meta.subject_id = "bank-042";
  meta.activity_type = "structuring";
  meta.amounts = {12000.0, 9500.0};
  meta.date_start = "2025-01-03";
  meta.date_end = "2025-02-11";

  SUBCASE("all fields present is compliant") {
    auto rep = sargen::render_report("case-9", meta, gate);
    CHECK(rep.compliant);
    CHECK(rep.subject_id == "bank-042");
    CHECK(rep.description.size() == gate.emitted.size());
    // description holds only emitted texts, each with its grounding ref
    for (const auto& line : rep.description) CHECK(line.find("(ref L") != std::string::npos);
    CHECK(rep.grounding_log.size() == gate.emitted.size() + gate.suppressed.size());

    // byte-identical rerun
    auto again = sargen::render_report("case-9", meta, gate);
    CHECK(sargen::report_to_json(rep) == sargen::report_to_json(again));
  }
  SUBCASE("a missing date range flips compliance without erroring") {
    auto broken = meta;
    broken.date_end.clear();
    auto rep = sargen::render_report("case-9", broken, gate);
    CHECK_FALSE(rep.compliant);
  }
  SUBCASE("zero emitted assertions is a valid empty report") {
    GateResult none;
    none.suppressed = gate.emitted;
    auto rep = sargen::render_report("case-9", meta, none);
    CHECK(rep.description.empty());
    CHECK_FALSE(rep.compliant);
  }
}

TEST_CASE("grounding rates pool candidates per layer") {
  SUBCASE("every candidate passing gives ones everywhere") {
    auto rec = record_with({}, {0.5, 0.6}, {});
    auto gate = sargen::gate_assertions(rec, Thresholds{});
    auto rates = sargen::grounding_rate({gate});
    CHECK(rates.layer2.rate() == doctest::Approx(1.0));
    CHECK_FALSE(rates.layer1.applicable());
    CHECK_FALSE(rates.layer3.applicable());
    CHECK(rates.overall == doctest::Approx(1.0));
  }
  SUBCASE("the engineered three-layer fixture lands on 0.600 overall") {
    // layer1: 10 distinct -> 3 pass; layer2: 5 of 10 above tau2;
    // layer3: 10 steps all above an explicit tau3
    std::vector<double> shap;
    for (int i = 1; i <= 10; ++i) shap.push_back(0.01 * i);
    std::vector<double> fco = {0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10};
    std::vector<double> alpha(10, 0.1);
    Thresholds t;
    t.tau3 = 0.01;
    auto gate = sargen::gate_assertions(record_with(shap, fco, alpha), t);
    auto rates = sargen::grounding_rate({gate});
    CHECK(rates.layer1.rate() == doctest::Approx(0.300));
    CHECK(rates.layer2.rate() == doctest::Approx(0.500));
    CHECK(rates.layer3.rate() == doctest::Approx(1.000));
    CHECK(rates.overall == doctest::Approx(0.600));
  }
  SUBCASE("layers without candidates drop out of the overall mean") {
    std::vector<double> shap;
    for (int i = 1; i <= 10; ++i) shap.push_back(0.01 * i);
    Thresholds t;
    t.tau3 = 0.01;
    auto gate = sargen::gate_assertions(record_with(shap, {}, std::vector<double>(10, 0.1)), t);
    auto rates = sargen::grounding_rate({gate});
    CHECK_FALSE(rates.layer2.applicable());
    CHECK(rates.overall == doctest::Approx(13.0 / 20.0));
  }
  SUBCASE("an empty case list is refused") {
    CHECK_THROWS_AS(sargen::grounding_rate({}), DomainError);
  }
}

TEST_CASE("factual accuracy counts exact field matches") {
  CaseMetadata truth1{"bank-1", "wire", {100.0, 200.0, 300.0}, "2025-01-01", "2025-01-31"};
  CaseMetadata truth2{"bank-2", "cash", {50.0, 60.0, 70.0}, "2025-02-01", "2025-02-28"};
  auto rec = record_with({0.9, 0.01, 0.02, 0.03}, {}, {});
  auto gate = sargen::gate_assertions(rec, Thresholds{});

  SUBCASE("verbatim copies score one") {
    auto r1 = sargen::render_report("c1", truth1, gate);
    auto r2 = sargen::render_report("c2", truth2, gate);
    auto acc = sargen::factual_accuracy({r1, r2}, {truth1, truth2});
    CHECK(acc.applicable);
    CHECK(acc.rate == doctest::Approx(1.0));
    CHECK(acc.checked == 10);  // 2 x (subject + date range + 3 amounts)
  }
  SUBCASE("one corrupted amount in ten fields gives 0.9") {
    auto r1 = sargen::render_report("c1", truth1, gate);
    auto r2 = sargen::render_report("c2", truth2, gate);
    r2.amounts[1] = 61.0;
    auto acc = sargen::factual_accuracy({r1, r2}, {truth1, truth2});
    CHECK(acc.checked == 10);
    CHECK(acc.rate == doctest::Approx(0.9));
  }
  SUBCASE("an empty report set is not applicable") {
    auto acc = sargen::factual_accuracy({}, {});
    CHECK_FALSE(acc.applicable);
    CHECK_THROWS_AS(sargen::factual_accuracy({}, {truth1}), ShapeError);
  }
}

TEST_CASE("report json and rates csv round trip") {
  auto rec = record_with({0.9, 0.01, 0.02, 0.03}, {0.5}, {0.7, 0.1, 0.1, 0.1});
  auto gate = sargen::gate_assertions(rec, Thresholds{});
  CaseMetadata meta{"bank-7", "layering", {500.0}, "2025-03-01", "2025-03-02"};
  auto rep = sargen::render_report("case-3", meta, gate);

  auto j = nlohmann::json::parse(sargen::report_to_json(rep));
  CHECK(j.at("subject_id") == "bank-7");
  CHECK(j.at("activity_type") == "layering");
  CHECK(j.at("amounts").size() == 1);
  CHECK(j.at("date_range").at("start") == "2025-03-01");
  CHECK(j.at("description").size() == rep.description.size());
  CHECK(j.at("grounding").size() == rep.grounding_log.size());
  CHECK(j.at("compliant") == true);
  bool saw_passed_field = false;
  for (const auto& gref : j.at("grounding"))
    if (gref.contains("passed")) saw_passed_field = true;
  CHECK(saw_passed_field);

  auto path = std::filesystem::temp_directory_path() / "sar_report.json";
  sargen::write_report(path.string(), rep);
  auto text = nlohmann::json::parse(std::ifstream(path.string()));
  std::filesystem::remove(path);
  CHECK(text.at("case_id") == "case-3");

  auto rates = sargen::grounding_rate({gate});
  auto csv_path = std::filesystem::temp_directory_path() / "sar_rates.csv";
  sargen::write_rates_csv(csv_path.string(), rates);
  auto table = csv::read_table(csv_path.string());
  std::filesystem::remove(csv_path);
  REQUIRE(table.header.size() == 4);
  CHECK(table.rows.size() == 4);
  CHECK(table.rows[0][0] == "layer1");
  CHECK(table.rows[3][0] == "overall");

  // a layer with no candidates prints na
  auto lone = sargen::gate_assertions(record_with({0.5, 0.1, 0.2, 0.9}, {}, {}), Thresholds{});
  sargen::write_rates_csv(csv_path.string(), sargen::grounding_rate({lone}));
  auto t2 = csv::read_table(csv_path.string());
  std::filesystem::remove(csv_path);
  CHECK(t2.rows[1][3] == "na");
  CHECK(t2.rows[2][3] == "na");
}
