#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "scafds/rng.hpp"
#include "scafds/tensor.hpp"

namespace scafds::seqmodel {

using num::Tape;
using num::Var;

// Fixed-length encoded transaction sequence for one account window.
struct TxSequence {
  std::string account;
  std::vector<std::vector<double>> steps;  // [T][D]
  int label = 0;
};

struct LstmDirVars {
  Var Wi, Wf, Wo, Wg;  // input weights [D x H]
  Var Ui, Uf, Uo, Ug;  // recurrent weights [H x H]
  Var bi, bf, bo, bg;  // biases [1 x H]
};

// Per-step hidden states, forward and backward halves concatenated [N x 2H].
std::vector<Var> bilstm_forward(Tape& tape, const std::vector<Var>& x_steps,
                                const LstmDirVars& fwd, const LstmDirVars& bwd);

struct AttentionOut {
  Var alpha;  // [N x T], rows on the simplex
  Var z;      // [N x 2H] attention-weighted context
};
AttentionOut temporal_attention(Tape& tape, const std::vector<Var>& h_steps, Var W_h, Var b,
                                Var v);

struct Stage4Hyper {
  int hidden = 16;
  int att_dim = 16;
  double lr = 3e-3;
  double weight_decay = 1e-4;
  bool cosine = true;
  int epochs = 40;
  double focal_gamma = 2.0;
  double focal_alpha = 0.75;
  double dropout = 0.3;  // on the context vector during training
  std::uint64_t seed = 1;
};

// Batched scorer over a fixed sequence set. Training loss is masked to the
// training rows, so one replay scores every row without leaking labels.
struct Stage4Model {
  Tape tape;
  Stage4Hyper hyper;
  int t_len = 0, in_dim = 0, n_rows = 0;

  LstmDirVars fwd, bwd;
  Var att_W, att_b, att_v, out_w, out_b;
  std::vector<Var> params;

  std::vector<Var> x_leaves;  // per step [N x D]
  Var z_mask;                 // dropout mask [N x 2H]
  Var alpha;                  // [N x T]
  Var prob;                   // [N x 1]
  Var loss;

  std::vector<double> labels;
  std::vector<double> loss_history;

  void set_dropout(Rng& rng, bool training);
  std::vector<double> scores();                        // replays, dropout off
  std::vector<std::vector<double>> attention_weights();  // per row, length T
};

// train_rows empty = train on every row.
Stage4Model build_stage4(const std::vector<TxSequence>& dataset,
                         const std::vector<int>& train_rows, const Stage4Hyper& hyper);
void train_stage4(Stage4Model& model);

// Single-sequence scoring on a fresh tape from the trained parameter values.
struct TxScore {
  double s_tx = 0.0;
  std::vector<double> alpha;
};
TxScore score_transaction(const Stage4Model& model, const TxSequence& seq);

// Batch probe of the scorer as a function of input channels: one score per
// coalition row. keep[k][d] == 1 leaves channel d of the donor sequence
// intact; 0 replaces it with background[d] at every time step.
std::vector<double> score_channel_coalitions(const Stage4Model& model, const TxSequence& donor,
                                             const std::vector<std::vector<int>>& keep,
                                             const std::vector<double>& background);

// Separable toy set: label-1 sequences carry a planted burst pattern.
std::vector<TxSequence> generate_planted_sequences(int n_sequences, int t_len, int n_features,
                                                   std::uint64_t seed);

// Frequency-ranked integer codes; unseen categories map to code 0.
class CategoricalEncoder {
 public:
  void fit(const std::vector<std::string>& values);
  double code(const std::string& value) const;
  std::size_t vocabulary() const { return codes_.size(); }

 private:
  std::map<std::string, double> codes_;
};

struct IngestSchema {
  std::string account_col = "account";
  std::string time_col = "time";
  std::string label_col = "label";
  std::vector<std::string> numeric_cols{"amount"};
  std::vector<std::string> categorical_cols{"tx_type", "geo", "device"};
  int window = 32;
  int rolling_window = 5;  // trailing amount mean/std channels
};

struct IngestReport {
  std::vector<TxSequence> sequences;
  std::size_t rows_read = 0;
  std::size_t rows_skipped = 0;
  std::vector<double> medians;  // per numeric column, imputation values
};

IngestReport ingest_transactions_csv(const std::string& path, const IngestSchema& schema);

// Parameter checkpoint, bit-exact JSON round-trip.
std::string checkpoint_to_json(const Stage4Model& model);
void checkpoint_from_json(Stage4Model& model, const std::string& text);

}  // namespace scafds::seqmodel
