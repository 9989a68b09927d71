#include "scafds/stgat.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "scafds/errors.hpp"
#include "scafds/optim.hpp"

namespace scafds::stgat {

using num::AdamW;
using num::OptimConfig;

namespace {

Var glorot(Tape& tape, int rows, int cols, Rng& rng) {
  const double lim = std::sqrt(6.0 / (rows + cols));
  std::vector<double> v(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
  for (auto& x : v) x = rng.uniform(-lim, lim);
  return tape.leaf({rows, cols}, std::move(v), true);
}

Var zeros_leaf(Tape& tape, int rows, int cols, bool requires_grad) {
  return tape.leaf({rows, cols},
                   std::vector<double>(static_cast<std::size_t>(rows) * cols, 0.0),
                   requires_grad);
}

struct HeadPass {
  Var H;      // projected node features [n x d]
  Var alpha;  // in-edge attention [m x 1]
};

HeadPass head_pass(Tape& tape, const GraphTopo& topo, Var h, Var e, Var W, Var a,
                   AttentionMode mode, double leaky_slope) {
  const int d = tape.at(W).shape.cols;
  if (tape.at(a).shape.cols != 1 || tape.at(a).shape.rows < 2 * d)
    throw ShapeError("attention vector must be [(2*head_dim + de) x 1]");
  HeadPass out;
  out.H = tape.matmul(h, W);
  Var a_dst = tape.slice_rows(a, 0, d);
  Var a_src = tape.slice_rows(a, d, 2 * d);
  Var score = tape.add(tape.gather_rows(tape.matmul(out.H, a_dst), topo.dst),
                       tape.gather_rows(tape.matmul(out.H, a_src), topo.src));
  if (mode == AttentionMode::edge_aware) {
    const int de = tape.at(a).shape.rows - 2 * d;
    if (de <= 0) throw ShapeError("edge_aware attention needs an edge slot in a");
    if (tape.at(e).shape.cols != de)
      throw ShapeError("edge feature width does not match the attention edge slot");
    Var a_edge = tape.slice_rows(a, 2 * d, 2 * d + de);
    score = tape.add(score, tape.matmul(e, a_edge));
  }
  score = tape.leaky_relu(score, leaky_slope);
  out.alpha = tape.segment_softmax(score, topo.dst, topo.n_nodes);
  return out;
}

void check_layer(const GatLayerVars& params) {
  if (params.W.empty() || params.W.size() != params.a.size())
    throw ShapeError("attention layer needs matching W and a per head");
}

}  // namespace

GraphTopo GraphTopo::from_graph(const graph::InterbankGraph& g) {
  GraphTopo t;
  t.n_nodes = static_cast<int>(g.nodes.size());
  t.src.reserve(g.edges.size());
  t.dst.reserve(g.edges.size());
  t.iso.assign(static_cast<std::size_t>(t.n_nodes), 1.0);
  for (const auto& e : g.edges) {
    t.src.push_back(e.src);
    t.dst.push_back(e.dst);
    t.iso[static_cast<std::size_t>(e.dst)] = 0.0;
  }
  return t;
}

std::vector<Var> attention_coefficients(Tape& tape, const GraphTopo& topo, Var h, Var e,
                                        const GatLayerVars& params, AttentionMode mode,
                                        double leaky_slope) {
  check_layer(params);
  std::vector<Var> alphas;
  alphas.reserve(params.W.size());
  for (std::size_t head = 0; head < params.W.size(); ++head)
    alphas.push_back(
        head_pass(tape, topo, h, e, params.W[head], params.a[head], mode, leaky_slope).alpha);
  return alphas;
}

Var gat_layer(Tape& tape, const GraphTopo& topo, Var h, Var e, const GatLayerVars& params,
              AttentionMode mode, double leaky_slope, Var dropout_mask,
              std::vector<Var>* alphas_out) {
  check_layer(params);
  Var iso = tape.constant({topo.n_nodes, 1}, std::vector<double>(topo.iso));
  std::vector<Var> heads;
  heads.reserve(params.W.size());
  for (std::size_t head = 0; head < params.W.size(); ++head) {
    HeadPass hp = head_pass(tape, topo, h, e, params.W[head], params.a[head], mode, leaky_slope);
    if (alphas_out) alphas_out->push_back(hp.alpha);
    Var mixed_alpha = dropout_mask.id >= 0 ? tape.mul(hp.alpha, dropout_mask) : hp.alpha;
    Var messages = tape.segment_mix(hp.H, mixed_alpha, topo.src, topo.dst, topo.n_nodes);
    // Nodes without in-edges keep their own projection.
    heads.push_back(tape.add(messages, tape.scale_rows(hp.H, iso)));
  }
  return tape.elu(tape.concat_cols(heads));
}

Var gat_forward(Tape& tape, const GraphTopo& topo, Var x, Var e,
                const std::vector<GatLayerVars>& params, const GatConfig& cfg,
                const std::vector<Var>& dropout_masks,
                std::vector<std::vector<Var>>* alphas_out) {
  if (cfg.diffusion_steps < 1) throw DomainError("diffusion_steps must be at least 1");
  const std::size_t needed =
      cfg.diffusion_steps == 1 ? 1 : (cfg.share_diffusion_weights ? 2 : cfg.diffusion_steps);
  if (params.size() != needed)
    throw ShapeError("expected " + std::to_string(needed) + " attention parameter sets");
  Var h = x;
  for (int step = 0; step < cfg.diffusion_steps; ++step) {
    const std::size_t pi =
        step == 0 ? 0 : (cfg.share_diffusion_weights ? 1 : static_cast<std::size_t>(step));
    Var mask = step < static_cast<int>(dropout_masks.size()) ? dropout_masks[static_cast<std::size_t>(step)]
                                                             : Var{};
    std::vector<Var> alphas;
    h = gat_layer(tape, topo, h, e, params[pi], cfg.mode, cfg.leaky_slope, mask,
                  alphas_out ? &alphas : nullptr);
    if (alphas_out) alphas_out->push_back(std::move(alphas));
  }
  return h;
}

Var temporal_aggregate(Tape& tape, const std::vector<Var>& snapshot_embeddings,
                       const std::vector<GruLayerVars>& layers) {
  if (snapshot_embeddings.empty()) throw DomainError("temporal aggregation needs >= 1 step");
  if (layers.empty()) throw DomainError("temporal aggregation needs >= 1 layer");
  const int n = tape.at(snapshot_embeddings[0]).shape.rows;
  for (const auto& s : snapshot_embeddings)
    if (tape.at(s).shape.rows != n) throw DomainError("inconsistent node sets across snapshots");

  std::vector<Var> seq = snapshot_embeddings;
  Var h{};
  for (const auto& L : layers) {
    const int hidden = tape.at(L.Ur).shape.rows;
    h = tape.constant({n, hidden},
                      std::vector<double>(static_cast<std::size_t>(n) * hidden, 0.0));
    std::vector<Var> next_seq;
    next_seq.reserve(seq.size());
    for (Var x : seq) {
      Var r = tape.sigmoid(
          tape.add_row_vec(tape.add(tape.matmul(x, L.Wr), tape.matmul(h, L.Ur)), L.br));
      Var z = tape.sigmoid(
          tape.add_row_vec(tape.add(tape.matmul(x, L.Wz), tape.matmul(h, L.Uz)), L.bz));
      Var cand = tape.tanh(tape.add_row_vec(
          tape.add(tape.matmul(x, L.Wn), tape.matmul(tape.mul(r, h), L.Un)), L.bn));
      h = tape.add(tape.mul(tape.add_const(tape.neg(z), 1.0), cand), tape.mul(z, h));
      next_seq.push_back(h);
    }
    seq = std::move(next_seq);
  }
  return h;
}

namespace {

// Per-sample focal terms [n x 1]: alpha_t (1-p_t)^gamma -log(max(p_t, 1e-12)).
Var focal_terms(Tape& tape, Var p, const std::vector<double>& y, double gamma, double alpha) {
  const auto& shape = tape.at(p).shape;
  if (shape.cols != 1 || static_cast<std::size_t>(shape.rows) != y.size())
    throw ShapeError("focal loss needs [n x 1] probabilities matching the labels");
  std::vector<double> sign(y.size()), offset(y.size()), at(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] != 0.0 && y[i] != 1.0) throw DomainError("labels must be binary");
    sign[i] = 2.0 * y[i] - 1.0;
    offset[i] = 1.0 - y[i];
    at[i] = y[i] == 1.0 ? alpha : 1.0 - alpha;
  }
  const int n = shape.rows;
  Var p_true = tape.add(tape.mul(p, tape.constant({n, 1}, std::move(sign))),
                        tape.constant({n, 1}, std::move(offset)));
  Var focus = tape.pow_const(tape.add_const(tape.neg(p_true), 1.0), gamma);
  Var nll = tape.neg(tape.log(tape.clamp_min(p_true, 1e-12)));
  return tape.mul(tape.constant({n, 1}, std::move(at)), tape.mul(focus, nll));
}

}  // namespace

Var focal_loss(Tape& tape, Var p, const std::vector<double>& y, double gamma, double alpha) {
  return tape.mean(focal_terms(tape, p, y, gamma, alpha));
}

Var focal_loss(Tape& tape, Var p, const std::vector<double>& y,
               const std::vector<double>& row_weight, double gamma, double alpha) {
  if (row_weight.size() != y.size())
    throw ShapeError("focal loss row weights must match the label count");
  double total = 0.0;
  for (double w : row_weight) {
    if (w < 0.0) throw DomainError("focal loss row weights must be nonnegative");
    total += w;
  }
  if (total <= 0.0) throw DomainError("focal loss row weights must not all be zero");
  const int n = static_cast<int>(y.size());
  Var w = tape.constant({n, 1}, std::vector<double>(row_weight.begin(), row_weight.end()));
  return tape.sum(tape.mul(w, focal_terms(tape, p, y, gamma, alpha)));
}

namespace {

Var cosine_rows(Tape& tape, Var cu, Var cv) {
  Var dots = tape.row_dot(cu, cv);
  Var nu = tape.clamp_min(tape.row_dot(cu, cu), 1e-12);
  Var nv = tape.clamp_min(tape.row_dot(cv, cv), 1e-12);
  return tape.mul(dots, tape.pow_const(tape.mul(nu, nv), -0.5));
}

}  // namespace

Var pair_alignment_loss(Tape& tape, Var c, const PairSupervision& pairs) {
  if (pairs.align_u.empty()) return tape.constant_scalar(0.0);
  Var cos = cosine_rows(tape, tape.gather_rows(c, pairs.align_u),
                        tape.gather_rows(c, pairs.align_v));
  const int p = static_cast<int>(pairs.align_f.size());
  Var f = tape.constant({p, 1}, std::vector<double>(pairs.align_f));
  return tape.mean(tape.mul(tape.add_const(tape.neg(cos), 1.0), f));
}

Var pair_contrast_loss(Tape& tape, Var c, const PairSupervision& pairs) {
  if (pairs.contrast_u.empty()) return tape.constant_scalar(0.0);
  Var cos = cosine_rows(tape, tape.gather_rows(c, pairs.contrast_u),
                        tape.gather_rows(c, pairs.contrast_v));
  return tape.mean(tape.leaky_relu(tape.add_const(cos, -pairs.margin), 0.0));
}

PairSupervision pairs_from_graph(const graph::InterbankGraph& g, double threshold,
                                 int n_contrast, std::uint64_t seed) {
  PairSupervision out;
  std::set<std::pair<int, int>> adjacent;
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    adjacent.emplace(g.edges[e].src, g.edges[e].dst);
    const double f = g.mean_edge_feature(e);
    if (f > threshold) {
      out.align_u.push_back(g.edges[e].src);
      out.align_v.push_back(g.edges[e].dst);
      out.align_f.push_back(f);
    }
  }
  Rng rng(seed);
  const int n = static_cast<int>(g.nodes.size());
  std::int64_t attempts = 0;
  const std::int64_t cap = 50LL * std::max(1, n_contrast);
  while (static_cast<int>(out.contrast_u.size()) < n_contrast && attempts++ < cap) {
    const int u = static_cast<int>(rng.uniform_int(0, n - 1));
    const int v = static_cast<int>(rng.uniform_int(0, n - 1));
    if (u == v || adjacent.count({u, v}) || adjacent.count({v, u})) continue;
    out.contrast_u.push_back(u);
    out.contrast_v.push_back(v);
  }
  return out;
}

Stage3Model build_stage3(const std::vector<graph::InterbankGraph>& snapshots,
                         const std::vector<double>& labels, const PairSupervision& pairs,
                         const Stage3Hyper& hyper, const std::vector<int>& train_rows) {
  if (snapshots.empty()) throw DomainError("need at least one snapshot");
  const auto n = snapshots[0].nodes.size();
  const auto m = snapshots[0].edges.size();
  if (labels.size() != n) throw ShapeError("label count does not match node count");
  for (int r : train_rows)
    if (r < 0 || static_cast<std::size_t>(r) >= n)
      throw DomainError("training row index out of range");
  for (const auto& g : snapshots) {
    if (g.nodes.size() != n || g.edges.size() != m)
      throw DomainError("snapshots must share one topology skeleton");
    for (std::size_t e = 0; e < m; ++e)
      if (g.edges[e].src != snapshots[0].edges[e].src ||
          g.edges[e].dst != snapshots[0].edges[e].dst)
        throw DomainError("snapshots must share one topology skeleton");
  }
  const int de = m > 0 ? static_cast<int>(snapshots[0].edges[0].edge_features.size()) : 1;

  Stage3Model model;
  model.hyper = hyper;
  model.topo = GraphTopo::from_graph(snapshots[0]);
  model.labels = labels;
  Tape& tape = model.tape;
  Rng rng(hyper.seed);

  const GatConfig& gc = hyper.gat;
  const int feat = graph::kNodeFeatureCount;
  const int width = gc.heads * gc.head_dim;
  const std::size_t n_sets =
      gc.diffusion_steps == 1 ? 1 : (gc.share_diffusion_weights ? 2 : static_cast<std::size_t>(gc.diffusion_steps));
  for (std::size_t s = 0; s < n_sets; ++s) {
    GatLayerVars layer;
    const int din = s == 0 ? feat : width;
    for (int h = 0; h < gc.heads; ++h) {
      layer.W.push_back(glorot(tape, din, gc.head_dim, rng));
      layer.a.push_back(glorot(tape, 2 * gc.head_dim + de, 1, rng));
      model.params.push_back(layer.W.back());
      model.params.push_back(layer.a.back());
    }
    model.gat_vars.push_back(std::move(layer));
  }
  if (hyper.temporal.enabled) {
    for (int l = 0; l < hyper.temporal.layers; ++l) {
      const int din = l == 0 ? width : hyper.temporal.hidden;
      const int g = hyper.temporal.hidden;
      GruLayerVars L;
      L.Wr = glorot(tape, din, g, rng);
      L.Wz = glorot(tape, din, g, rng);
      L.Wn = glorot(tape, din, g, rng);
      L.Ur = glorot(tape, g, g, rng);
      L.Uz = glorot(tape, g, g, rng);
      L.Un = glorot(tape, g, g, rng);
      L.br = zeros_leaf(tape, 1, g, true);
      L.bz = zeros_leaf(tape, 1, g, true);
      L.bn = zeros_leaf(tape, 1, g, true);
      for (Var v : {L.Wr, L.Wz, L.Wn, L.Ur, L.Uz, L.Un, L.br, L.bz, L.bn})
        model.params.push_back(v);
      model.gru_vars.push_back(L);
    }
    model.embed_dim = hyper.temporal.hidden;
  } else {
    model.embed_dim = width;
  }
  model.head_w = glorot(tape, model.embed_dim, 1, rng);
  model.head_b = zeros_leaf(tape, 1, 1, true);
  model.params.push_back(model.head_w);
  model.params.push_back(model.head_b);

  std::vector<Var> embeds;
  for (std::size_t q = 0; q < snapshots.size(); ++q) {
    const auto& g = snapshots[q];
    std::vector<double> xv(n * static_cast<std::size_t>(feat));
    for (std::size_t i = 0; i < n; ++i)
      for (int k = 0; k < feat; ++k)
        xv[i * static_cast<std::size_t>(feat) + static_cast<std::size_t>(k)] =
            g.nodes[i].features[static_cast<std::size_t>(k)];
    Var x = tape.constant({static_cast<int>(n), feat}, std::move(xv));
    std::vector<double> ev(m * static_cast<std::size_t>(de));
    for (std::size_t e = 0; e < m; ++e)
      for (int k = 0; k < de; ++k)
        ev[e * static_cast<std::size_t>(de) + static_cast<std::size_t>(k)] =
            g.edges[e].edge_features[static_cast<std::size_t>(k)];
    Var ef = tape.constant({static_cast<int>(m), de}, std::move(ev));
    model.x_leaves.push_back(x);
    model.e_leaves.push_back(ef);

    std::vector<Var> masks;
    for (int s = 0; s < gc.diffusion_steps; ++s) {
      Var mask = tape.constant({static_cast<int>(m), 1},
                               std::vector<double>(static_cast<std::size_t>(m), 1.0));
      masks.push_back(mask);
      model.dropout_masks.push_back(mask);
    }
    std::vector<std::vector<Var>> alphas;
    Var emb = gat_forward(tape, model.topo, x, ef, model.gat_vars, gc, masks, &alphas);
    if (q + 1 == snapshots.size()) model.last_alphas = std::move(alphas);
    embeds.push_back(emb);
  }
  model.contagion = hyper.temporal.enabled
                        ? temporal_aggregate(tape, embeds, model.gru_vars)
                        : embeds.back();
  model.prob = tape.sigmoid(tape.add_row_vec(tape.matmul(model.contagion, model.head_w),
                                             model.head_b));
  if (train_rows.empty()) {
    model.loss_focal = focal_loss(tape, model.prob, labels, hyper.focal_gamma, hyper.focal_alpha);
  } else {
    std::vector<double> w(n, 0.0);
    for (int r : train_rows) w[static_cast<std::size_t>(r)] = 1.0 / train_rows.size();
    model.loss_focal = focal_loss(tape, model.prob, labels, w, hyper.focal_gamma,
                                  hyper.focal_alpha);
  }
  model.loss_align = pair_alignment_loss(tape, model.contagion, pairs);
  model.loss_contrast = pair_contrast_loss(tape, model.contagion, pairs);
  model.loss_total = tape.add(model.loss_focal,
                              tape.add(tape.scale(model.loss_align, hyper.align_weight),
                                       tape.scale(model.loss_contrast, hyper.contrast_weight)));
  return model;
}

void Stage3Model::set_dropout(Rng& rng, bool training) {
  const double p = hyper.gat.dropout;
  for (Var mask : dropout_masks) {
    auto& t = tape.at(mask);
    if (!training || p <= 0.0) {
      std::fill(t.values.begin(), t.values.end(), 1.0);
    } else {
      const double keep = 1.0 - p;
      for (auto& v : t.values) v = rng.uniform() < keep ? 1.0 / keep : 0.0;
    }
  }
}

std::vector<double> Stage3Model::probabilities() {
  Rng unused(0);
  set_dropout(unused, false);
  tape.replay();
  return tape.at(prob).values;
}

std::vector<std::vector<double>> Stage3Model::contagion_embeddings() {
  Rng unused(0);
  set_dropout(unused, false);
  tape.replay();
  const auto& t = tape.at(contagion);
  std::vector<std::vector<double>> out(static_cast<std::size_t>(t.shape.rows));
  for (int i = 0; i < t.shape.rows; ++i)
    out[static_cast<std::size_t>(i)] =
        std::vector<double>(t.values.begin() + static_cast<std::ptrdiff_t>(i) * t.shape.cols,
                            t.values.begin() + static_cast<std::ptrdiff_t>(i + 1) * t.shape.cols);
  return out;
}

void train_stage3(Stage3Model& model) {
  if (model.hyper.epochs <= 0) return;
  OptimConfig oc;
  oc.lr = model.hyper.lr;
  oc.weight_decay = model.hyper.weight_decay;
  oc.cosine = model.hyper.cosine;
  oc.total_steps = model.hyper.epochs;
  AdamW opt(oc, model.params);
  Rng drop_rng(model.hyper.seed ^ 0x9e3779b97f4a7c15ULL);
  double last_finite = std::numeric_limits<double>::quiet_NaN();
  for (int epoch = 0; epoch < model.hyper.epochs; ++epoch) {
    model.set_dropout(drop_rng, true);
    model.tape.replay();
    const double loss = model.tape.scalar(model.loss_total);
    if (!std::isfinite(loss)) {
      std::ostringstream msg;
      msg << "training diverged at epoch " << epoch << "; last finite loss ";
      msg << last_finite;
      throw NumericError(msg.str());
    }
    last_finite = loss;
    model.loss_history.push_back(loss);
    model.tape.zero_grad();
    model.tape.backward(model.loss_total);
    opt.step(model.tape);
  }
  Rng unused(0);
  model.set_dropout(unused, false);
  model.tape.replay();
}

void feedback_update(std::vector<double>& alpha, std::size_t target, double eta, double delta) {
  if (alpha.empty()) throw DomainError("attention state is empty");
  if (target >= alpha.size()) throw DomainError("edge is not among the node's in-edges");
  if (eta < 0.0 || delta < 0.0) throw DomainError("update magnitudes must be nonnegative");
  alpha[target] += eta * delta;
  double sum = 0.0;
  for (double a : alpha) sum += a;
  if (sum <= 0.0) throw DomainError("attention state must have positive mass");
  for (auto& a : alpha) a /= sum;
}

double default_delta(double strength, double elapsed_days) {
  if (elapsed_days < 0.0) throw DomainError("elapsed_days must be nonnegative");
  return strength / (1.0 + elapsed_days / 30.0);
}

std::string checkpoint_to_json(const Stage3Model& model) {
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

void checkpoint_from_json(Stage3Model& model, const std::string& text) {
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

}  // namespace scafds::stgat
