#include "scafds/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "scafds/csv.hpp"
#include "scafds/errors.hpp"
#include "scafds/optim.hpp"

namespace scafds::fusion {

using num::AdamW;
using num::OptimConfig;

namespace {

Var glorot(Tape& tape, int rows, int cols, Rng& rng) {
  const double lim = std::sqrt(6.0 / (rows + cols));
  std::vector<double> v(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
  for (auto& x : v) x = rng.uniform(-lim, lim);
  return tape.leaf({rows, cols}, std::move(v), true);
}

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_pair_indices(const std::vector<int>& idx, int n, const char* what) {
  for (int i : idx)
    if (i < 0 || i >= n) throw DomainError(std::string(what) + " pair index out of range");
}

}  // namespace

double bilinear_form(const std::vector<double>& u, const FusionParams& p,
                     const std::vector<double>& v) {
  if (u.size() != v.size()) throw ShapeError("embedding lengths differ");
  if (!p.bilinear) {
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
    return s;
  }
  if (p.M.size() != u.size()) throw ShapeError("M does not match the embedding length");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (p.M[i].size() != v.size()) throw ShapeError("M does not match the embedding length");
    for (std::size_t j = 0; j < v.size(); ++j) s += u[i] * p.M[i][j] * v[j];
  }
  return s;
}

double forensic_score(double s_tx, const std::vector<double>& c_v, const std::vector<double>& c_u,
                      const FusionParams& p) {
  if (p.proj.size() != c_v.size()) throw ShapeError("projection does not match the embedding");
  double f_proj = p.proj_b;
  for (std::size_t i = 0; i < c_v.size(); ++i) f_proj += p.proj[i] * c_v[i];
  return sigmoid_ref(p.w1 * s_tx + p.w2 * f_proj + p.w3 * bilinear_form(c_v, p, c_u));
}

Var pair_bilinear(Tape& tape, Var c, Var M, const std::vector<int>& u,
                  const std::vector<int>& v) {
  Var cu = tape.gather_rows(c, u);
  Var cv = tape.gather_rows(c, v);
  if (M.id < 0) return tape.row_dot(cu, cv);
  return tape.row_dot(cu, tape.matmul(cv, tape.transpose(M)));
}

Var alignment_loss(Tape& tape, Var c, Var M, const PairSupervision& pairs) {
  if (pairs.align_u.empty()) return tape.constant_scalar(0.0);
  if (pairs.align_u.size() != pairs.align_v.size() ||
      pairs.align_u.size() != pairs.align_f.size())
    throw ShapeError("alignment pair lists must have one f per (u, v)");
  Var bil = pair_bilinear(tape, c, M, pairs.align_u, pairs.align_v);
  const int p = static_cast<int>(pairs.align_u.size());
  Var f = tape.constant({p, 1}, pairs.align_f);
  // floored at perfect alignment: scores beyond 1 earn no further credit,
  // otherwise inflating M without bound would push the loss to -inf
  return tape.mean(tape.mul(tape.leaky_relu(tape.add_const(tape.neg(bil), 1.0), 0.0), f));
}

Var contrastive_loss(Tape& tape, Var c, Var M, const PairSupervision& pairs) {
  if (pairs.contrast_u.empty()) return tape.constant_scalar(0.0);
  if (pairs.contrast_u.size() != pairs.contrast_v.size())
    throw ShapeError("contrast pair lists must have equal length");
  Var bil = pair_bilinear(tape, c, M, pairs.contrast_u, pairs.contrast_v);
  return tape.mean(tape.leaky_relu(tape.add_const(bil, -pairs.margin), 0.0));
}

Stage5Model build_stage5(const std::vector<std::vector<double>>& embeddings,
                         const std::vector<double>& s_tx, const std::vector<int>& edge_src,
                         const std::vector<int>& edge_dst, const std::vector<double>& labels,
                         const PairSupervision& pairs, const FusionHyper& hyper,
                         const std::vector<int>& train_rows) {
  if (embeddings.empty()) throw DomainError("need at least one institution embedding");
  const int n = static_cast<int>(embeddings.size());
  const int g = static_cast<int>(embeddings[0].size());
  if (g <= 0) throw ShapeError("embeddings must be nonempty vectors");
  for (const auto& row : embeddings)
    if (static_cast<int>(row.size()) != g) throw ShapeError("embedding widths differ");
  if (static_cast<int>(labels.size()) != n)
    throw ShapeError("label count does not match the institution count");
  if (!s_tx.empty() && static_cast<int>(s_tx.size()) != n)
    throw ShapeError("transaction score count does not match the institution count");
  if (edge_src.size() != edge_dst.size()) throw ShapeError("edge lists must have equal length");
  check_pair_indices(edge_src, n, "edge");
  check_pair_indices(edge_dst, n, "edge");
  check_pair_indices(pairs.align_u, n, "alignment");
  check_pair_indices(pairs.align_v, n, "alignment");
  check_pair_indices(pairs.contrast_u, n, "contrast");
  check_pair_indices(pairs.contrast_v, n, "contrast");
  for (int r : train_rows)
    if (r < 0 || r >= n) throw DomainError("training row index out of range");
  if (hyper.margin <= 0.0) throw ConfigError("margin must be positive");

  Stage5Model model;
  model.hyper = hyper;
  model.n = n;
  model.embed_dim = g;
  model.labels = labels;
  Tape& tape = model.tape;
  Rng rng(hyper.seed);

  model.M = Var{-1, nullptr};
  model.w1 = Var{-1, nullptr};
  if (hyper.bilinear) {
    // glorot shrunk by 1/G keeps the summed coupling term out of sigmoid
    // saturation at init; the scale is relearned through M and w3.
    model.M = glorot(tape, g, g, rng);
    auto& mv = tape.at(model.M).values;
    for (auto& x : mv) x /= g;
    model.params.push_back(model.M);
  }
  const bool with_tx = hyper.include_tx && !s_tx.empty();
  if (with_tx) {
    model.w1 = tape.leaf_scalar(1.0, true);
    model.params.push_back(model.w1);
  }
  model.w2 = tape.leaf_scalar(1.0, true);
  model.w3 = tape.leaf_scalar(0.1, true);
  model.proj = glorot(tape, g, 1, rng);
  model.proj_b = tape.leaf_scalar(0.0, true);
  model.params.push_back(model.w2);
  model.params.push_back(model.w3);
  model.params.push_back(model.proj);
  model.params.push_back(model.proj_b);

  std::vector<double> flat(static_cast<std::size_t>(n) * g);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < g; ++k)
      flat[static_cast<std::size_t>(i) * g + static_cast<std::size_t>(k)] =
          embeddings[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
  model.c = tape.constant({n, g}, std::move(flat));

  // coupling[v] = sum over edges v->u of c_v^T M c_u (dot in additive mode)
  Var coupling{-1, nullptr};
  if (edge_src.empty()) {
    coupling = tape.constant({n, 1}, std::vector<double>(static_cast<std::size_t>(n), 0.0));
  } else {
    const int m = static_cast<int>(edge_src.size());
    Var ones = tape.constant({m, 1}, std::vector<double>(static_cast<std::size_t>(m), 1.0));
    Var nbr_sum = tape.segment_mix(model.c, ones, edge_dst, edge_src, n);
    coupling = hyper.bilinear
                   ? tape.row_dot(model.c, tape.matmul(nbr_sum, tape.transpose(model.M)))
                   : tape.row_dot(model.c, nbr_sum);
  }

  Var f_proj = tape.add_row_vec(tape.matmul(model.c, model.proj), model.proj_b);
  Var logit = tape.add(tape.matmul(f_proj, model.w2), tape.matmul(coupling, model.w3));
  if (with_tx) {
    model.s_tx = tape.constant({n, 1}, s_tx);
    logit = tape.add(logit, tape.matmul(model.s_tx, model.w1));
  } else {
    model.s_tx = Var{-1, nullptr};
  }
  model.s_forensic = tape.sigmoid(logit);

  if (train_rows.empty()) {
    model.loss_focal = stgat::focal_loss(tape, model.s_forensic, labels, hyper.focal_gamma,
                                         hyper.focal_alpha);
  } else {
    std::vector<double> w(static_cast<std::size_t>(n), 0.0);
    for (int r : train_rows) w[static_cast<std::size_t>(r)] = 1.0 / train_rows.size();
    model.loss_focal = stgat::focal_loss(tape, model.s_forensic, labels, w, hyper.focal_gamma,
                                         hyper.focal_alpha);
  }
  PairSupervision scoped = pairs;
  scoped.margin = hyper.margin;
  model.loss_align = alignment_loss(tape, model.c, model.M, scoped);
  model.loss_contrast = contrastive_loss(tape, model.c, model.M, scoped);
  model.loss_fco = tape.add(model.loss_align, model.loss_contrast);
  model.loss_total = tape.add(model.loss_focal, tape.scale(model.loss_fco, hyper.lambda_fco));
  return model;
}

std::vector<double> Stage5Model::forensic_scores() {
  tape.replay();
  return tape.at(s_forensic).values;
}

FusionParams Stage5Model::snapshot() const {
  FusionParams p;
  p.bilinear = hyper.bilinear;
  p.margin = hyper.margin;
  p.tau_fco = hyper.tau_fco;
  const int g = embed_dim;
  p.M.assign(static_cast<std::size_t>(g), std::vector<double>(static_cast<std::size_t>(g), 0.0));
  if (hyper.bilinear) {
    const auto& mv = tape.at(M).values;
    for (int i = 0; i < g; ++i)
      for (int j = 0; j < g; ++j)
        p.M[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
            mv[static_cast<std::size_t>(i) * g + static_cast<std::size_t>(j)];
  } else {
    for (int i = 0; i < g; ++i) p.M[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = 1.0;
  }
  p.w1 = w1.id >= 0 ? tape.scalar(w1) : 0.0;
  p.w2 = tape.scalar(w2);
  p.w3 = tape.scalar(w3);
  p.proj = tape.at(proj).values;
  p.proj_b = tape.scalar(proj_b);
  return p;
}

void train_stage5(Stage5Model& model) {
  if (model.hyper.epochs <= 0) return;
  OptimConfig oc;
  oc.lr = model.hyper.lr;
  oc.weight_decay = model.hyper.weight_decay;
  oc.cosine = model.hyper.cosine;
  oc.total_steps = model.hyper.epochs;
  AdamW opt(oc, model.params);
  double last_finite = std::numeric_limits<double>::quiet_NaN();
  for (int epoch = 0; epoch < model.hyper.epochs; ++epoch) {
    model.tape.replay();
    const double loss = model.tape.scalar(model.loss_total);
    if (!std::isfinite(loss)) {
      std::ostringstream msg;
      msg << "training diverged at epoch " << epoch << "; last finite loss " << last_finite;
      throw NumericError(msg.str());
    }
    last_finite = loss;
    model.loss_history.push_back(loss);
    model.tape.zero_grad();
    model.tape.backward(model.loss_total);
    opt.step(model.tape);
  }
  model.tape.replay();
}

SystemicScore systemic_risk_score(const std::vector<double>& s_forensic, std::vector<double> beta,
                                  double gamma, double pagerank_v) {
  SystemicScore out;
  if (s_forensic.empty()) {
    out.no_evidence = true;
    out.value = sigmoid_ref(gamma * pagerank_v);
    return out;
  }
  if (beta.empty()) beta.assign(s_forensic.size(), 1.0 / s_forensic.size());
  if (beta.size() != s_forensic.size())
    throw ShapeError("beta weights must match the forensic score count");
  double total = 0.0;
  for (double b : beta) {
    if (b < 0.0) throw DomainError("beta weights must be nonnegative");
    total += b;
  }
  if (total <= 0.0) throw DomainError("beta weights must have positive mass");
  double acc = 0.0;
  for (std::size_t t = 0; t < beta.size(); ++t) acc += beta[t] / total * s_forensic[t];
  out.value = sigmoid_ref(acc + gamma * pagerank_v);
  return out;
}

std::vector<double> beta_from_attention(const std::vector<std::vector<double>>& alphas) {
  std::vector<double> peaks;
  peaks.reserve(alphas.size());
  for (const auto& row : alphas) {
    if (row.empty()) throw DomainError("attention rows must be nonempty");
    double peak = row[0];
    for (double a : row) peak = std::max(peak, a);
    peaks.push_back(peak);
  }
  if (peaks.empty()) return {};
  double mx = peaks[0];
  for (double p : peaks) mx = std::max(mx, p);
  double z = 0.0;
  for (double& p : peaks) {
    p = std::exp(p - mx);
    z += p;
  }
  for (double& p : peaks) p /= z;
  return peaks;
}

void write_scores_csv(const std::string& path, const std::vector<InstitutionScore>& rows) {
  std::vector<std::string> lines;
  lines.reserve(rows.size() + 1);
  lines.emplace_back("institution,S_v,s_forensic_mean,pagerank");
  for (const auto& r : rows)
    lines.push_back(r.institution + "," + csv::format_double(r.systemic) + "," +
                    csv::format_double(r.forensic_mean) + "," + csv::format_double(r.pagerank));
  csv::write_lines(path, lines);
}

std::string checkpoint_to_json(const Stage5Model& model) {
  nlohmann::json j;
  j["format"] = 1;
  j["seed"] = model.hyper.seed;
  j["embed_dim"] = model.embed_dim;
  nlohmann::json tensors = nlohmann::json::array();
  for (Var v : model.params) {
    const auto& t = model.tape.at(v);
    tensors.push_back({{"rows", t.shape.rows}, {"cols", t.shape.cols}, {"values", t.values}});
  }
  j["tensors"] = std::move(tensors);
  return j.dump();
}

void checkpoint_from_json(Stage5Model& model, const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw StateError(std::string("checkpoint parse failure: ") + e.what());
  }
  if (!j.contains("tensors") || !j["tensors"].is_array() ||
      j["tensors"].size() != model.params.size())
    throw StateError("checkpoint does not match the model's parameter list");
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const auto& entry = j["tensors"][i];
    const auto& t = model.tape.at(model.params[i]);
    if (entry["rows"].get<int>() != t.shape.rows || entry["cols"].get<int>() != t.shape.cols)
      throw StateError("checkpoint tensor shape mismatch at index " + std::to_string(i));
    auto values = entry["values"].get<std::vector<double>>();
    model.tape.fill(model.params[i], values);
  }
  model.tape.replay();
}

}  // namespace scafds::fusion
