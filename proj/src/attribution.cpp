#include "scafds/attribution.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "scafds/errors.hpp"
#include "scafds/rng.hpp"

namespace scafds::attribution {

namespace {

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_feature_count(int n_features) {
  if (n_features <= 0) throw DomainError("shapley needs at least one feature");
}

std::vector<double> run_scorer(const CoalitionScorer& model,
                               const std::vector<std::vector<int>>& masks) {
  auto out = model(masks);
  if (out.size() != masks.size())
    throw ShapeError("coalition scorer returned " + std::to_string(out.size()) +
                     " scores for " + std::to_string(masks.size()) + " masks");
  return out;
}

CoalitionScorer pointwise_scorer(const std::function<double(const std::vector<double>&)>& model,
                                 const std::vector<double>& x,
                                 const std::vector<double>& background) {
  if (x.empty()) throw DomainError("shapley needs at least one feature");
  if (x.size() != background.size())
    throw ShapeError("background length does not match the instance");
  return [&model, x, background](const std::vector<std::vector<int>>& keep) {
    std::vector<double> out;
    out.reserve(keep.size());
    std::vector<double> pt(x.size());
    for (const auto& mask : keep) {
      for (std::size_t i = 0; i < x.size(); ++i) pt[i] = mask[i] ? x[i] : background[i];
      out.push_back(model(pt));
    }
    return out;
  };
}

}  // namespace

ShapleyResult shapley_exact_masks(const CoalitionScorer& model, int n_features,
                                  int max_features) {
  check_feature_count(n_features);
  if (n_features > max_features)
    throw DomainError("exact shapley enumerates 2^" + std::to_string(n_features) +
                      " coalitions, above the cap of " + std::to_string(max_features) +
                      "; use shapley_sampled");

  const int n = n_features;
  const std::size_t n_masks = std::size_t{1} << n;
  std::vector<std::vector<int>> masks(n_masks, std::vector<int>(n, 0));
  for (std::size_t m = 0; m < n_masks; ++m)
    for (int i = 0; i < n; ++i) masks[m][i] = (m >> i) & 1u ? 1 : 0;
  auto value = run_scorer(model, masks);

  // weight[s] = s!(n-1-s)!/n! over subsets of the other n-1 features
  std::vector<double> fact(n + 1, 1.0);
  for (int i = 1; i <= n; ++i) fact[i] = fact[i - 1] * i;
  std::vector<double> weight(n, 0.0);
  for (int s = 0; s < n; ++s) weight[s] = fact[s] * fact[n - 1 - s] / fact[n];

  ShapleyResult r;
  r.values.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    const std::size_t bit = std::size_t{1} << i;
    for (std::size_t m = 0; m < n_masks; ++m) {
      if (m & bit) continue;
      const int s = std::popcount(m);
      r.values[i] += weight[s] * (value[m | bit] - value[m]);
    }
  }
  r.base_value = value[0];
  r.model_output = value[n_masks - 1];
  return r;
}

ShapleyResult shapley_sampled_masks(const CoalitionScorer& model, int n_features,
                                    int n_permutations, std::uint64_t seed) {
  check_feature_count(n_features);
  if (n_permutations < 100)
    throw DomainError("permutation shapley needs at least 100 permutations");

  const int n = n_features;
  Rng rng(seed);
  std::vector<double> sum(n, 0.0), sum_sq(n, 0.0);
  double base = 0.0, full = 0.0;

  // evaluate whole permutations per batch; each contributes its n+1 prefixes
  const int per_batch = std::max<int>(1, 8192 / (n + 1));
  std::vector<std::vector<int>> perms;
  int done = 0;
  while (done < n_permutations) {
    const int take = std::min(per_batch, n_permutations - done);
    perms.clear();
    std::vector<std::vector<int>> masks;
    masks.reserve(static_cast<std::size_t>(take) * (n + 1));
    for (int p = 0; p < take; ++p) {
      perms.push_back(rng.permutation(n));
      std::vector<int> mask(n, 0);
      masks.push_back(mask);
      for (int j = 0; j < n; ++j) {
        mask[perms.back()[j]] = 1;
        masks.push_back(mask);
      }
    }
    auto value = run_scorer(model, masks);
    for (int p = 0; p < take; ++p) {
      const std::size_t at = static_cast<std::size_t>(p) * (n + 1);
      if (done + p == 0) base = value[at];
      full = value[at + n];
      for (int j = 0; j < n; ++j) {
        const double marginal = value[at + j + 1] - value[at + j];
        sum[perms[p][j]] += marginal;
        sum_sq[perms[p][j]] += marginal * marginal;
      }
    }
    done += take;
  }

  ShapleyResult r;
  r.values.assign(n, 0.0);
  r.std_errors.assign(n, 0.0);
  const double count = n_permutations;
  for (int i = 0; i < n; ++i) {
    r.values[i] = sum[i] / count;
    const double var = std::max(0.0, (sum_sq[i] - sum[i] * sum[i] / count) / (count - 1.0));
    r.std_errors[i] = std::sqrt(var / count);
  }
  r.base_value = base;
  r.model_output = full;
  return r;
}

ShapleyResult shapley_exact(const std::function<double(const std::vector<double>&)>& model,
                            const std::vector<double>& x, const std::vector<double>& background,
                            int max_features) {
  return shapley_exact_masks(pointwise_scorer(model, x, background),
                             static_cast<int>(x.size()), max_features);
}

ShapleyResult shapley_sampled(const std::function<double(const std::vector<double>&)>& model,
                              const std::vector<double>& x, const std::vector<double>& background,
                              int n_permutations, std::uint64_t seed) {
  return shapley_sampled_masks(pointwise_scorer(model, x, background),
                               static_cast<int>(x.size()), n_permutations, seed);
}

std::vector<EdgeContribution> network_attribution(std::size_t v, const std::vector<double>& c_v,
                                                  const std::vector<Counterparty>& neighbors,
                                                  const fusion::FusionParams& params) {
  std::vector<EdgeContribution> out;
  out.reserve(neighbors.size());
  for (const auto& nbr : neighbors) {
    EdgeContribution e;
    e.src = v;
    e.dst = nbr.id;
    e.contribution = params.w3 * fusion::bilinear_form(c_v, params, nbr.embedding);
    e.fco = nbr.fco;
    out.push_back(e);
  }
  return out;
}

namespace {

void check_trained(const char* stage, bool trained) {
  if (!trained)
    throw StateError(std::string(stage) + " has not been trained; run its training loop first");
}

}  // namespace

AttributionRecord build_record(const CaseInputs& in, const seqmodel::Stage4Model& stage4,
                               const fusion::Stage5Model& stage5, const RecordOptions& opt) {
  check_trained("stage 4 model", !stage4.loss_history.empty() || stage4.hyper.epochs == 0);
  check_trained("stage 5 model", !stage5.loss_history.empty() || stage5.hyper.epochs == 0);
  if (in.sequence.steps.empty()) throw DomainError("case sequence is empty");

  const int d = static_cast<int>(in.sequence.steps.front().size());
  if (!in.channel_names.empty() && static_cast<int>(in.channel_names.size()) != d)
    throw ShapeError("channel names do not match the sequence width");

  AttributionRecord rec;
  rec.case_id = in.case_id;

  auto snap = stage5.snapshot();
  rec.layer2 = network_attribution(in.institution, in.embedding, in.counterparties, snap);

  auto tx = seqmodel::score_transaction(stage4, in.sequence);
  rec.layer3 = tx.alpha;

  // the fused target holds the case's network terms fixed, so s_tx is the
  // only moving part of the logit
  double fixed_logit = 0.0;
  if (opt.target == Layer1Target::fused_score) {
    if (in.embedding.size() != snap.proj.size())
      throw ShapeError("embedding does not match the trained projection");
    double f_proj = snap.proj_b;
    for (std::size_t i = 0; i < in.embedding.size(); ++i)
      f_proj += snap.proj[i] * in.embedding[i];
    double coupling = 0.0;
    for (const auto& e : rec.layer2) coupling += e.contribution;
    fixed_logit = snap.w2 * f_proj + coupling;
  }
  const double w1 = snap.w1;
  auto scorer = [&](const std::vector<std::vector<int>>& keep) {
    auto s = seqmodel::score_channel_coalitions(stage4, in.sequence, keep, in.background);
    if (opt.target == Layer1Target::fused_score)
      for (auto& v : s) v = sigmoid_ref(w1 * v + fixed_logit);
    return s;
  };

  ShapleyResult shap;
  if (d <= opt.max_features) {
    shap = shapley_exact_masks(scorer, d, opt.max_features);
    double total = shap.base_value;
    for (double v : shap.values) total += v;
    if (std::abs(total - shap.model_output) > 1e-8)
      throw NumericError("attribution efficiency violated; the scorer is not deterministic");
  } else {
    shap = shapley_sampled_masks(scorer, d, opt.n_permutations, opt.seed);
    rec.sampled = true;
  }

  rec.layer1.resize(d);
  for (int i = 0; i < d; ++i) {
    rec.layer1[i].feature =
        in.channel_names.empty() ? "ch-" + std::to_string(i) : in.channel_names[i];
    rec.layer1[i].shapley = shap.values[i];
    rec.layer1[i].std_error = shap.std_errors.empty() ? 0.0 : shap.std_errors[i];
  }
  rec.base_value = shap.base_value;
  rec.model_output = shap.model_output;
  return rec;
}

std::string record_to_json(const AttributionRecord& record) {
  nlohmann::json j;
  j["case_id"] = record.case_id;
  j["base_value"] = record.base_value;
  j["model_output"] = record.model_output;
  j["sampled"] = record.sampled;
  j["layer1"] = nlohmann::json::array();
  for (const auto& f : record.layer1)
    j["layer1"].push_back(
        {{"feature", f.feature}, {"shapley", f.shapley}, {"std_error", f.std_error}});
  j["layer2"] = nlohmann::json::array();
  for (const auto& e : record.layer2)
    j["layer2"].push_back(
        {{"src", e.src}, {"dst", e.dst}, {"contribution", e.contribution}, {"fco", e.fco}});
  j["layer3"] = nlohmann::json::array();
  for (std::size_t t = 0; t < record.layer3.size(); ++t)
    j["layer3"].push_back({{"t", t}, {"alpha", record.layer3[t]}});
  return j.dump(2);
}

AttributionRecord record_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("attribution record is not valid json: ") + e.what());
  }
  AttributionRecord rec;
  try {
    rec.case_id = j.at("case_id").get<std::string>();
    rec.base_value = j.at("base_value").get<double>();
    rec.model_output = j.at("model_output").get<double>();
    rec.sampled = j.value("sampled", false);
    for (const auto& f : j.at("layer1")) {
      FeatureAttribution fa;
      fa.feature = f.at("feature").get<std::string>();
      fa.shapley = f.at("shapley").get<double>();
      fa.std_error = f.value("std_error", 0.0);
      rec.layer1.push_back(fa);
    }
    for (const auto& e : j.at("layer2")) {
      EdgeContribution ec;
      ec.src = e.at("src").get<std::size_t>();
      ec.dst = e.at("dst").get<std::size_t>();
      ec.contribution = e.at("contribution").get<double>();
      ec.fco = e.at("fco").get<double>();
      rec.layer2.push_back(ec);
    }
    rec.layer3.resize(j.at("layer3").size(), 0.0);
    for (const auto& a : j.at("layer3"))
      rec.layer3.at(a.at("t").get<std::size_t>()) = a.at("alpha").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("attribution record is missing fields: ") + e.what());
  }
  return rec;
}

void write_record(const std::string& path, const AttributionRecord& record) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << record_to_json(record) << "\n";
  if (!out) throw IoError("failed writing " + path);
}

AttributionRecord read_record(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return record_from_json(buf.str());
}

}  // namespace scafds::attribution
