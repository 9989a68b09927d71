#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scafds/stgat.hpp"
#include "scafds/tensor.hpp"

namespace scafds::fusion {

using num::Tape;
using num::Var;
using stgat::PairSupervision;

// Trained stage-5 parameter snapshot in plain doubles; the attribution layer
// and single-pair scoring read these.
struct FusionParams {
  bool bilinear = true;                // false: additive dot coupling
  std::vector<std::vector<double>> M;  // [G][G]; identity when additive
  double w1 = 1.0, w2 = 1.0, w3 = 1.0;
  std::vector<double> proj;  // [G], affine scalar projection of c_v
  double proj_b = 0.0;
  double gamma = 0.0;
  double margin = 0.5;
  double tau_fco = 0.05;
};

// u^T M v, or plain dot in additive mode.
double bilinear_form(const std::vector<double>& u, const FusionParams& p,
                     const std::vector<double>& v);

// sigma(w1 s_tx + w2 proj.c_v + w3 coupling(c_v, c_u)) for one counterparty.
double forensic_score(double s_tx, const std::vector<double>& c_v, const std::vector<double>& c_u,
                      const FusionParams& p);

struct FusionHyper {
  bool bilinear = true;
  bool include_tx = true;  // institution-level runs without sequence data drop the term
  double lambda_fco = 1.0;
  double margin = 0.5;
  double tau_fco = 0.05;
  double focal_gamma = 2.0;
  double focal_alpha = 0.75;
  double lr = 3e-3;
  double weight_decay = 1e-4;
  bool cosine = true;
  int epochs = 300;
  std::uint64_t seed = 1;
};

// Batched fusion head over fixed embeddings: one forensic score per
// institution, coupling summed over its outgoing edges.
struct Stage5Model {
  Tape tape;
  FusionHyper hyper;
  int n = 0, embed_dim = 0;

  Var M, w1, w2, w3, proj, proj_b;  // M absent in additive mode, w1 absent without tx
  std::vector<Var> params;
  Var c;     // [n x G] constant embeddings
  Var s_tx;  // [n x 1] constant transaction scores, absent when dropped
  Var s_forensic;
  Var loss_focal, loss_align, loss_contrast, loss_fco, loss_total;

  std::vector<double> labels;
  std::vector<double> loss_history;

  std::vector<double> forensic_scores();  // replays, one value per institution
  FusionParams snapshot() const;
};

// Bilinear scores per pair row: (c[u] ^T M c[v]); dot product when M.id < 0.
Var pair_bilinear(Tape& tape, Var c, Var M, const std::vector<int>& u, const std::vector<int>& v);

// Mean over flagged pairs of (1 - c_u^T M c_v) * f; zero when no pair passed.
Var alignment_loss(Tape& tape, Var c, Var M, const PairSupervision& pairs);

// Mean hinge max(0, c_u^T M c_v - margin) over clean pairs; zero when empty.
Var contrastive_loss(Tape& tape, Var c, Var M, const PairSupervision& pairs);

Stage5Model build_stage5(const std::vector<std::vector<double>>& embeddings,
                         const std::vector<double>& s_tx, const std::vector<int>& edge_src,
                         const std::vector<int>& edge_dst, const std::vector<double>& labels,
                         const PairSupervision& pairs, const FusionHyper& hyper,
                         const std::vector<int>& train_rows = {});
void train_stage5(Stage5Model& model);

struct SystemicScore {
  double value = 0.0;
  bool no_evidence = false;  // no transaction terms contributed
};

// sigma(sum beta_t s_forensic_t + gamma * pagerank); beta empty = uniform,
// otherwise normalized to sum 1.
SystemicScore systemic_risk_score(const std::vector<double>& s_forensic, std::vector<double> beta,
                                  double gamma, double pagerank_v);

// Per-sequence weights from attention concentration: softmax over max_t
// alpha_t of each sequence. Empty input gives an empty vector.
std::vector<double> beta_from_attention(const std::vector<std::vector<double>>& alphas);

struct InstitutionScore {
  std::string institution;
  double systemic = 0.0;
  double forensic_mean = 0.0;
  double pagerank = 0.0;
};

void write_scores_csv(const std::string& path, const std::vector<InstitutionScore>& rows);

// Parameter checkpoint, bit-exact JSON round-trip.
std::string checkpoint_to_json(const Stage5Model& model);
void checkpoint_from_json(Stage5Model& model, const std::string& text);

}  // namespace scafds::fusion
