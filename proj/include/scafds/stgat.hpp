#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scafds/graph.hpp"
#include "scafds/rng.hpp"
#include "scafds/tensor.hpp"

namespace scafds::stgat {

using num::Tape;
using num::Var;

enum class AttentionMode { edge_aware, node_only };

// Index arrays shared by every attention step on a fixed topology.
struct GraphTopo {
  int n_nodes = 0;
  std::vector<int> src;            // per edge
  std::vector<int> dst;            // per edge
  std::vector<double> iso;         // 1.0 for nodes with no in-edge, else 0.0
  static GraphTopo from_graph(const graph::InterbankGraph& g);
};

struct GatConfig {
  int heads = 4;
  int head_dim = 16;
  int diffusion_steps = 2;              // stacked attention propagation steps
  bool share_diffusion_weights = true;  // steps beyond the first reuse one parameter set
  AttentionMode mode = AttentionMode::edge_aware;
  double leaky_slope = 0.2;
  double dropout = 0.3;
};

struct TemporalConfig {
  int hidden = 32;
  int layers = 1;
  bool enabled = true;  // false: contagion embedding = last spatial embedding
};

// One attention step: per-head projection W [din x head_dim] and score
// vector a [(2·head_dim + de) x 1] split as [dst | src | edge] slots.
struct GatLayerVars {
  std::vector<Var> W;
  std::vector<Var> a;
};

struct GruLayerVars {
  Var Wr, Wz, Wn;  // input weights [din x hidden]
  Var Ur, Uz, Un;  // recurrent weights [hidden x hidden]
  Var br, bz, bn;  // biases [1 x hidden]
};

// Per-head in-edge attention, each entry an [m x 1] simplex per destination.
// h: [n x din] node features, e: [m x de] edge features (ignored in
// node_only mode). Hidden projections are recomputed internally; use
// gat_layer when the projected features are needed too.
std::vector<Var> attention_coefficients(Tape& tape, const GraphTopo& topo, Var h, Var e,
                                        const GatLayerVars& params, AttentionMode mode,
                                        double leaky_slope);

// One full attention step: concat over heads of attention-mixed messages,
// ELU applied. Isolated nodes pass through their own projection. dropout_mask
// is multiplied into every head's coefficients when valid ([m x 1], id >= 0).
Var gat_layer(Tape& tape, const GraphTopo& topo, Var h, Var e, const GatLayerVars& params,
              AttentionMode mode, double leaky_slope, Var dropout_mask,
              std::vector<Var>* alphas_out = nullptr);

// Stacked diffusion: layer 0 projects the raw features, later steps reuse
// params[1] when shared, params[step] otherwise.
Var gat_forward(Tape& tape, const GraphTopo& topo, Var x, Var e,
                const std::vector<GatLayerVars>& params, const GatConfig& cfg,
                const std::vector<Var>& dropout_masks = {},
                std::vector<std::vector<Var>>* alphas_out = nullptr);

// GRU over snapshot embeddings (batched over nodes), zero initial state.
// Returns the final hidden state of the last layer.
Var temporal_aggregate(Tape& tape, const std::vector<Var>& snapshot_embeddings,
                       const std::vector<GruLayerVars>& layers);

// Mean focal term over samples: -alpha_t (1-p_t)^gamma log(max(p_t, 1e-12)).
Var focal_loss(Tape& tape, Var p, const std::vector<double>& y, double gamma, double alpha);

// Weighted sum of the same per-sample terms; masking held-out rows is a
// weight of zero. Weights must be nonnegative with a positive total.
Var focal_loss(Tape& tape, Var p, const std::vector<double>& y,
               const std::vector<double>& row_weight, double gamma, double alpha);

// Pair supervision on embeddings c [n x d]: pulls cosine similarity of
// flagged pairs toward 1 weighted by f, pushes clean pairs below margin.
struct PairSupervision {
  std::vector<int> align_u, align_v;
  std::vector<double> align_f;  // co-occurrence weight per aligned pair
  std::vector<int> contrast_u, contrast_v;
  double margin = 0.5;
};
Var pair_alignment_loss(Tape& tape, Var c, const PairSupervision& pairs);
Var pair_contrast_loss(Tape& tape, Var c, const PairSupervision& pairs);

struct Stage3Hyper {
  GatConfig gat;
  TemporalConfig temporal;
  double lr = 3e-3;
  double weight_decay = 1e-4;
  bool cosine = true;
  int epochs = 40;
  double focal_gamma = 2.0;
  double focal_alpha = 0.75;
  double align_weight = 0.5;
  double contrast_weight = 0.5;
  double cooccur_threshold = 0.05;  // mean-f cut for aligned pairs
  std::uint64_t seed = 1;
};

// Assembled training graph over quarterly snapshots. The tape is built once;
// training replays it with mutated parameter and dropout leaves.
struct Stage3Model {
  Tape tape;
  GraphTopo topo;
  Stage3Hyper hyper;
  int embed_dim = 0;  // dim of c_v

  std::vector<Var> params;             // every trainable leaf
  std::vector<GatLayerVars> gat_vars;
  std::vector<GruLayerVars> gru_vars;
  Var head_w, head_b;

  std::vector<Var> x_leaves;           // per snapshot [n x feature]
  std::vector<Var> e_leaves;           // per snapshot [m x de]
  std::vector<Var> dropout_masks;      // one per attention step per snapshot
  std::vector<std::vector<Var>> last_alphas;  // last snapshot: [step][head] -> [m x 1]

  Var contagion;  // c_v [n x embed_dim]
  Var prob;       // p_v [n x 1]
  Var loss_focal, loss_align, loss_contrast, loss_total;

  std::vector<double> labels;
  std::vector<double> loss_history;

  void set_dropout(Rng& rng, bool training);
  std::vector<double> probabilities();        // replays with dropout off
  std::vector<std::vector<double>> contagion_embeddings();
};

// Pairs for supervision from a graph's edge features: aligned = edges with
// mean f above threshold, contrast = seeded random non-adjacent pairs.
PairSupervision pairs_from_graph(const graph::InterbankGraph& g, double threshold,
                                 int n_contrast, std::uint64_t seed);

// train_rows empty means every node contributes to the classification loss;
// otherwise the focal term is restricted to those rows (mean over them) so
// held-out nodes are scored but never fitted.
Stage3Model build_stage3(const std::vector<graph::InterbankGraph>& snapshots,
                         const std::vector<double>& labels, const PairSupervision& pairs,
                         const Stage3Hyper& hyper, const std::vector<int>& train_rows = {});

// Full-batch training; mutates model parameters in place, records the loss
// curve, throws NumericError carrying the last finite epoch on divergence.
void train_stage3(Stage3Model& model);

// In-edge attention update for one receiving node: bumps the target edge by
// eta*delta, then renormalizes the simplex.
void feedback_update(std::vector<double>& alpha, std::size_t target, double eta, double delta);

// Maps a disposition to an update magnitude: strength / (1 + elapsed_days/30).
double default_delta(double strength, double elapsed_days);

// Parameter checkpoint, bit-exact JSON round-trip.
std::string checkpoint_to_json(const Stage3Model& model);
void checkpoint_from_json(Stage3Model& model, const std::string& text);

}  // namespace scafds::stgat
