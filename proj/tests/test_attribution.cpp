#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "scafds/attribution.hpp"
#include "scafds/errors.hpp"
#include "scafds/fusion.hpp"
#include "scafds/rng.hpp"
#include "scafds/seqmodel.hpp"

using namespace scafds;
using attribution::AttributionRecord;
using attribution::CaseInputs;
using attribution::Counterparty;
using attribution::RecordOptions;
using attribution::ShapleyResult;

namespace {

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// 8-feature polynomial with interactions; exact shapley is the oracle for
// the permutation estimator.
double poly8(const std::vector<double>& x) {
  const std::vector<double> w = {0.5, -0.3, 0.8, 0.1, 0.0, 0.25, -0.6, 0.4};
  double s = 0.0;
  for (std::size_t i = 0; i < 8; ++i) s += w[i] * x[i];
  return s + 0.7 * x[0] * x[1] + 0.3 * x[2] * x[3] * x[4];
}

const std::vector<double> kX8 = {1.0, 2.0, -1.0, 0.5, 1.5, -2.0, 1.0, 0.8};
const std::vector<double> kBg8 = {0.1, -0.2, 0.3, 0.0, 0.5, 0.2, -0.1, 0.4};

}  // namespace

TEST_CASE("exact shapley collapses analytically on linear models") {
  const std::vector<double> w = {2.0, -1.5, 0.25, 3.0};
  auto model = [&](const std::vector<double>& x) {
    double s = 0.7;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x[i];
    return s;
  };
  const std::vector<double> x = {1.0, -2.0, 4.0, 0.5};

  SUBCASE("zero background gives w_i x_i") {
    auto r = attribution::shapley_exact(model, x, {0.0, 0.0, 0.0, 0.0});
    REQUIRE(r.values.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(r.values[i] == doctest::Approx(w[i] * x[i]).epsilon(1e-12));
    CHECK(r.base_value == doctest::Approx(0.7));
    CHECK(r.model_output == doctest::Approx(model(x)));
  }
  SUBCASE("general background gives w_i (x_i - b_i)") {
    const std::vector<double> b = {0.5, 1.0, -1.0, 2.0};
    auto r = attribution::shapley_exact(model, x, b);
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(r.values[i] == doctest::Approx(w[i] * (x[i] - b[i])).epsilon(1e-12));
    double total = r.base_value;
    for (double v : r.values) total += v;
    CHECK(total == doctest::Approx(r.model_output).epsilon(1e-12));
  }
}

TEST_CASE("exact shapley matches the four-coalition hand enumeration") {
  // f = 0.7 [x0 != x1] + 0.3 x0 at x=(1,1), background (0,0):
  // v{} = 0, v{0} = 1.0, v{1} = 0.7, v{0,1} = 0.3
  // phi_0 = (1.0 - 0) / 2 + (0.3 - 0.7) / 2 = 0.3, phi_1 = 0
  auto model = [](const std::vector<double>& x) {
    return 0.7 * (x[0] != x[1] ? 1.0 : 0.0) + 0.3 * x[0];
  };
  auto r = attribution::shapley_exact(model, {1.0, 1.0}, {0.0, 0.0});
  CHECK(r.values[0] == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(r.values[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.base_value == doctest::Approx(0.0));
  CHECK(r.model_output == doctest::Approx(0.3));

  // pure xor splits the cancellation evenly
  auto xor_model = [](const std::vector<double>& x) { return x[0] != x[1] ? 1.0 : 0.0; };
  auto rx = attribution::shapley_exact(xor_model, {1.0, 1.0}, {0.0, 0.0});
  CHECK(rx.values[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(rx.values[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("shapley axioms hold on constructed models") {
  SUBCASE("constant model earns zero everywhere") {
    auto model = [](const std::vector<double>&) { return 4.2; };
    auto r = attribution::shapley_exact(model, {1.0, 2.0, 3.0}, {0.0, 0.0, 0.0});
    for (double v : r.values) CHECK(v == doctest::Approx(0.0).epsilon(1e-14));
    auto rs = attribution::shapley_sampled(model, {1.0, 2.0, 3.0}, {0.0, 0.0, 0.0}, 100, 5);
    for (double v : rs.values) CHECK(v == 0.0);
    for (double e : rs.std_errors) CHECK(e == 0.0);
  }
  SUBCASE("symmetric features receive equal values") {
    auto model = [](const std::vector<double>& x) {
      return (x[0] + x[1]) * (x[0] + x[1]) + 0.5 * x[2];
    };
    auto r = attribution::shapley_exact(model, {1.5, 1.5, 2.0}, {0.0, 0.0, 1.0});
    CHECK(r.values[0] == doctest::Approx(r.values[1]).epsilon(1e-12));
  }
  SUBCASE("a feature the model ignores gets exactly zero") {
    auto model = [](const std::vector<double>& x) { return x[0] * x[0] - 2.0 * x[2]; };
    auto r = attribution::shapley_exact(model, {3.0, 7.0, 1.0}, {1.0, -4.0, 0.0});
    CHECK(r.values[1] == 0.0);
  }
}

TEST_CASE("exact shapley refuses feature counts above the enumeration cap") {
  auto model = [](const std::vector<double>& x) { return x[0]; };
  std::vector<double> x(13, 1.0), b(13, 0.0);
  CHECK_THROWS_AS(attribution::shapley_exact(model, x, b), DomainError);
  try {
    attribution::shapley_exact(model, x, b);
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("shapley_sampled") != std::string::npos);
  }
  CHECK_THROWS_AS(attribution::shapley_exact(model, {}, {}), DomainError);
  CHECK_THROWS_AS(attribution::shapley_exact(model, {1.0}, {0.0, 0.0}), ShapeError);
  CHECK_THROWS_AS(attribution::shapley_sampled(model, {1.0}, {0.0}, 99, 1), DomainError);
}

TEST_CASE("permutation estimator agrees with exact values within three standard errors") {
  auto exact = attribution::shapley_exact(poly8, kX8, kBg8);
  auto sampled = attribution::shapley_sampled(poly8, kX8, kBg8, 400, 11);
  REQUIRE(sampled.values.size() == 8);
  REQUIRE(sampled.std_errors.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    const double slack = 3.0 * sampled.std_errors[i] + 1e-12;
    INFO("feature ", i, " exact ", exact.values[i], " sampled ", sampled.values[i]);
    CHECK(std::abs(sampled.values[i] - exact.values[i]) <= slack);
  }

  // marginals telescope per permutation, so efficiency is exact even sampled
  double total = sampled.base_value;
  for (double v : sampled.values) total += v;
  CHECK(total == doctest::Approx(sampled.model_output).epsilon(1e-10));

  // seeded determinism
  auto again = attribution::shapley_sampled(poly8, kX8, kBg8, 400, 11);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(again.values[i] == sampled.values[i]);
    CHECK(again.std_errors[i] == sampled.std_errors[i]);
  }
}

TEST_CASE("standard errors shrink at the monte carlo rate") {
  auto narrow = attribution::shapley_sampled(poly8, kX8, kBg8, 200, 7);
  auto wide = attribution::shapley_sampled(poly8, kX8, kBg8, 800, 7);
  double mean_narrow = 0.0, mean_wide = 0.0;
  for (std::size_t i = 0; i < 8; ++i) {
    mean_narrow += narrow.std_errors[i];
    mean_wide += wide.std_errors[i];
  }
  REQUIRE(mean_wide > 0.0);
  const double ratio = mean_narrow / mean_wide;  // quadrupling shrinks by ~2
  INFO("se ratio ", ratio);
  CHECK(ratio > 1.6);
  CHECK(ratio < 2.5);
}

TEST_CASE("network attribution decomposes the coupling term per edge") {
  fusion::FusionParams p;
  p.bilinear = true;
  p.M = {{0.5, -0.2}, {0.1, 0.8}};
  p.w3 = 2.0;
  const std::vector<double> c_v = {1.0, -0.5};

  SUBCASE("zero M zeroes every contribution") {
    auto pz = p;
    pz.M = {{0.0, 0.0}, {0.0, 0.0}};
    auto out = attribution::network_attribution(
        3, c_v, {{4, {1.0, 1.0}, 0.2}, {5, {-2.0, 0.3}, 0.7}}, pz);
    REQUIRE(out.size() == 2);
    for (const auto& e : out) CHECK(e.contribution == 0.0);
    CHECK(out[0].src == 3);
    CHECK(out[0].dst == 4);
    CHECK(out[0].fco == doctest::Approx(0.2));
    CHECK(out[1].fco == doctest::Approx(0.7));
  }
  SUBCASE("a single counterparty owns the whole bilinear term") {
    const std::vector<double> c_u = {0.4, 1.2};
    auto out = attribution::network_attribution(0, c_v, {{9, c_u, 0.5}}, p);
    REQUIRE(out.size() == 1);
    CHECK(out[0].contribution ==
          doctest::Approx(p.w3 * fusion::bilinear_form(c_v, p, c_u)).epsilon(1e-14));
  }
  SUBCASE("three counterparties match hand evaluation and sum to the total") {
    std::vector<Counterparty> nbrs = {
        {1, {1.0, 0.0}, 0.1}, {2, {0.0, 1.0}, 0.2}, {7, {-1.0, 2.0}, 0.3}};
    auto out = attribution::network_attribution(0, c_v, nbrs, p);
    REQUIRE(out.size() == 3);
    // hand: c_v^T M = (1*0.5 - 0.5*0.1, 1*(-0.2) - 0.5*0.8) = (0.45, -0.6)
    CHECK(out[0].contribution == doctest::Approx(2.0 * 0.45).epsilon(1e-12));
    CHECK(out[1].contribution == doctest::Approx(2.0 * -0.6).epsilon(1e-12));
    CHECK(out[2].contribution == doctest::Approx(2.0 * (-0.45 - 1.2)).epsilon(1e-12));
    double total = 0.0, direct = 0.0;
    for (const auto& e : out) total += e.contribution;
    for (const auto& n : nbrs) direct += p.w3 * fusion::bilinear_form(c_v, p, n.embedding);
    CHECK(total == doctest::Approx(direct).epsilon(1e-12));
  }
  SUBCASE("additive mode uses the plain dot product") {
    auto pa = p;
    pa.bilinear = false;
    auto out = attribution::network_attribution(0, c_v, {{2, {3.0, 2.0}, 0.0}}, pa);
    CHECK(out[0].contribution == doctest::Approx(2.0 * (3.0 - 1.0)).epsilon(1e-12));
  }
}

namespace {

// embeddings, labels and institution-level scores for a six-node toy graph;
// models stay in the caller's frame because tapes must not move.
struct ToyGraph {
  std::vector<std::vector<double>> emb;
  std::vector<double> labels, s_tx;
  std::vector<int> src = {0, 1, 2, 3, 4, 5}, dst = {1, 2, 3, 4, 5, 0};
};

ToyGraph toy_graph() {
  ToyGraph tg;
  Rng rng(19);
  const int n = 6, g = 4;
  tg.emb.assign(n, std::vector<double>(g));
  tg.labels.resize(n);
  tg.s_tx.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < g; ++j) tg.emb[i][j] = rng.normal() + (i % 2 ? 0.8 : -0.8);
    tg.labels[i] = i % 2;
    tg.s_tx[i] = rng.uniform();
  }
  return tg;
}

seqmodel::Stage4Hyper small_h4() {
  seqmodel::Stage4Hyper h4;
  h4.hidden = 8;
  h4.att_dim = 8;
  h4.epochs = 5;
  h4.seed = 3;
  return h4;
}

fusion::FusionHyper small_h5(bool include_tx) {
  fusion::FusionHyper h5;
  h5.include_tx = include_tx;
  h5.epochs = 5;
  h5.seed = 19;
  return h5;
}

}  // namespace

TEST_CASE("attribution record assembles all three layers with their invariants") {
  auto seqs = seqmodel::generate_planted_sequences(20, 32, 6, 3);
  auto m4 = seqmodel::build_stage4(seqs, {}, small_h4());
  seqmodel::train_stage4(m4);
  auto tg = toy_graph();
  auto m5 = fusion::build_stage5(tg.emb, tg.s_tx, tg.src, tg.dst, tg.labels,
                                 stgat::PairSupervision{}, small_h5(true));
  fusion::train_stage5(m5);

  CaseInputs in;
  in.case_id = "case-7";
  in.sequence = seqs[1];  // planted class
  in.background.assign(6, 0.0);
  in.institution = 2;
  in.embedding = tg.emb[2];
  in.counterparties = {{3, tg.emb[3], 0.4}, {5, tg.emb[5], 0.1}};

  auto rec = attribution::build_record(in, m4, m5);
  CHECK(rec.case_id == "case-7");
  CHECK_FALSE(rec.sampled);

  REQUIRE(rec.layer1.size() == 6);
  CHECK(rec.layer1[0].feature == "ch-0");
  CHECK(rec.layer1[5].feature == "ch-5");
  double total = rec.base_value;
  for (const auto& f : rec.layer1) {
    total += f.shapley;
    CHECK(f.std_error == 0.0);
  }
  CHECK(std::abs(total - rec.model_output) < 1e-8);

  REQUIRE(rec.layer2.size() == 2);
  auto snap = m5.snapshot();
  CHECK(rec.layer2[0].contribution ==
        doctest::Approx(snap.w3 * fusion::bilinear_form(tg.emb[2], snap, tg.emb[3]))
            .epsilon(1e-12));

  REQUIRE(rec.layer3.size() == 32);
  double alpha_sum = 0.0;
  for (double a : rec.layer3) {
    CHECK(a >= 0.0);
    alpha_sum += a;
  }
  CHECK(alpha_sum == doctest::Approx(1.0).epsilon(1e-10));

  // layer 1 on the raw sequence score reproduces the stage-4 scorer
  auto tx = seqmodel::score_transaction(m4, in.sequence);
  CHECK(rec.model_output == doctest::Approx(tx.s_tx).epsilon(1e-12));

  SUBCASE("named channels replace the defaults") {
    in.channel_names = {"amount", "count", "velocity", "geo", "device", "hour"};
    auto named = attribution::build_record(in, m4, m5);
    CHECK(named.layer1[0].feature == "amount");
    CHECK(named.layer1[5].feature == "hour");
    in.channel_names = {"too", "short"};
    CHECK_THROWS_AS(attribution::build_record(in, m4, m5), ShapeError);
  }
  SUBCASE("no counterparties leaves layer 2 empty but the record valid") {
    in.counterparties.clear();
    auto lone = attribution::build_record(in, m4, m5);
    CHECK(lone.layer2.empty());
    CHECK(lone.layer3.size() == 32);
  }
  SUBCASE("fused target folds the fixed network terms into the score") {
    RecordOptions opt;
    opt.target = attribution::Layer1Target::fused_score;
    auto fused = attribution::build_record(in, m4, m5, opt);
    double coupling = 0.0;
    for (const auto& e : fused.layer2) coupling += e.contribution;
    double f_proj = snap.proj_b;
    for (std::size_t i = 0; i < in.embedding.size(); ++i)
      f_proj += snap.proj[i] * in.embedding[i];
    const double manual = sigmoid_ref(snap.w1 * tx.s_tx + snap.w2 * f_proj + coupling);
    CHECK(fused.model_output == doctest::Approx(manual).epsilon(1e-10));
    double ftotal = fused.base_value;
    for (const auto& f : fused.layer1) ftotal += f.shapley;
    CHECK(std::abs(ftotal - fused.model_output) < 1e-8);
  }
}

TEST_CASE("fused target degenerates to zero when fusion ignores the transaction term") {
  auto seqs = seqmodel::generate_planted_sequences(20, 32, 6, 3);
  auto m4 = seqmodel::build_stage4(seqs, {}, small_h4());
  seqmodel::train_stage4(m4);
  auto tg = toy_graph();
  auto m5 = fusion::build_stage5(tg.emb, {}, tg.src, tg.dst, tg.labels,
                                 stgat::PairSupervision{}, small_h5(false));
  fusion::train_stage5(m5);

  CaseInputs in;
  in.case_id = "flat";
  in.sequence = seqs[0];
  in.background.assign(6, 0.0);
  in.embedding = tg.emb[0];
  RecordOptions opt;
  opt.target = attribution::Layer1Target::fused_score;
  auto rec = attribution::build_record(in, m4, m5, opt);
  for (const auto& f : rec.layer1) CHECK(f.shapley == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(rec.base_value == doctest::Approx(rec.model_output).epsilon(1e-12));
}

TEST_CASE("untrained models are refused") {
  auto seqs = seqmodel::generate_planted_sequences(8, 8, 4, 1);
  seqmodel::Stage4Hyper h4;
  h4.hidden = 4;
  h4.att_dim = 4;
  h4.seed = 1;
  auto m4 = seqmodel::build_stage4(seqs, {}, h4);  // never trained

  Rng rng(2);
  std::vector<std::vector<double>> emb = {{0.1, 0.2}, {0.3, -0.1}};
  fusion::FusionHyper h5;
  h5.include_tx = false;
  h5.seed = 2;
  auto m5 = fusion::build_stage5(emb, {}, {0}, {1}, {0.0, 1.0}, stgat::PairSupervision{}, h5);

  CaseInputs in;
  in.sequence = seqs[0];
  in.background.assign(4, 0.0);
  in.embedding = emb[0];
  CHECK_THROWS_AS(attribution::build_record(in, m4, m5), StateError);

  seqmodel::train_stage4(m4);
  CHECK_THROWS_AS(attribution::build_record(in, m4, m5), StateError);  // stage 5 still raw

  fusion::train_stage5(m5);
  CHECK_NOTHROW(attribution::build_record(in, m4, m5));
}

TEST_CASE("records round trip through json") {
  AttributionRecord rec;
  rec.case_id = "acct-3#2";
  rec.base_value = 0.31;
  rec.model_output = 0.87;
  rec.sampled = true;
  rec.layer1 = {{"amount", 0.4, 0.02}, {"geo", -0.01, 0.005}};
  rec.layer2 = {{3, 9, 0.25, 0.6}};
  rec.layer3 = {0.1, 0.7, 0.2};

  auto text = attribution::record_to_json(rec);
  auto back = attribution::record_from_json(text);
  CHECK(back.case_id == rec.case_id);
  CHECK(back.base_value == rec.base_value);
  CHECK(back.model_output == rec.model_output);
  CHECK(back.sampled == rec.sampled);
  REQUIRE(back.layer1.size() == 2);
  CHECK(back.layer1[0].feature == "amount");
  CHECK(back.layer1[0].shapley == 0.4);
  CHECK(back.layer1[1].std_error == 0.005);
  REQUIRE(back.layer2.size() == 1);
  CHECK(back.layer2[0].src == 3);
  CHECK(back.layer2[0].dst == 9);
  CHECK(back.layer2[0].contribution == 0.25);
  CHECK(back.layer2[0].fco == 0.6);
  REQUIRE(back.layer3.size() == 3);
  CHECK(back.layer3[1] == 0.7);

  auto path = std::filesystem::temp_directory_path() / "attr_record.json";
  attribution::write_record(path.string(), rec);
  auto from_disk = attribution::read_record(path.string());
  std::filesystem::remove(path);
  CHECK(from_disk.case_id == rec.case_id);
  CHECK(from_disk.layer3.size() == 3);

  CHECK_THROWS_AS(attribution::record_from_json("not json"), IoError);
  CHECK_THROWS_AS(attribution::record_from_json("{\"case_id\": \"x\"}"), IoError);
}
