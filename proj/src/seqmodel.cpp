#include "scafds/seqmodel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "scafds/csv.hpp"
#include "scafds/errors.hpp"
#include "scafds/optim.hpp"
#include "scafds/stgat.hpp"

namespace scafds::seqmodel {

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
  return tape.leaf({rows, cols}, std::vector<double>(static_cast<std::size_t>(rows) * cols, 0.0),
                   requires_grad);
}

std::vector<Var> run_direction(Tape& tape, const std::vector<Var>& x_steps, const LstmDirVars& P,
                               bool reverse) {
  const int n = tape.at(x_steps[0]).shape.rows;
  const int h = tape.at(P.Ui).shape.rows;
  Var hprev = tape.constant({n, h}, std::vector<double>(static_cast<std::size_t>(n) * h, 0.0));
  Var cprev = tape.constant({n, h}, std::vector<double>(static_cast<std::size_t>(n) * h, 0.0));
  std::vector<Var> hs(x_steps.size());
  const int t_len = static_cast<int>(x_steps.size());
  for (int step = 0; step < t_len; ++step) {
    const int t = reverse ? t_len - 1 - step : step;
    Var x = x_steps[static_cast<std::size_t>(t)];
    auto gate = [&](Var W, Var U, Var b) {
      return tape.add_row_vec(tape.add(tape.matmul(x, W), tape.matmul(hprev, U)), b);
    };
    Var i = tape.sigmoid(gate(P.Wi, P.Ui, P.bi));
    Var f = tape.sigmoid(gate(P.Wf, P.Uf, P.bf));
    Var o = tape.sigmoid(gate(P.Wo, P.Uo, P.bo));
    Var g = tape.tanh(gate(P.Wg, P.Ug, P.bg));
    Var c = tape.add(tape.mul(f, cprev), tape.mul(i, g));
    Var hv = tape.mul(o, tape.tanh(c));
    hs[static_cast<std::size_t>(t)] = hv;
    hprev = hv;
    cprev = c;
  }
  return hs;
}

struct ForwardVars {
  LstmDirVars fwd, bwd;
  Var att_W, att_b, att_v, out_w, out_b;
};

struct ForwardOut {
  Var alpha;
  Var prob;
};

// z_mask.id < 0 skips the context dropout slot entirely.
ForwardOut forward_scores(Tape& tape, const std::vector<Var>& x_steps, const ForwardVars& v,
                          Var z_mask) {
  std::vector<Var> h = bilstm_forward(tape, x_steps, v.fwd, v.bwd);
  AttentionOut att = temporal_attention(tape, h, v.att_W, v.att_b, v.att_v);
  Var z = z_mask.id >= 0 ? tape.mul(att.z, z_mask) : att.z;
  ForwardOut out;
  out.alpha = att.alpha;
  out.prob = tape.sigmoid(tape.add_row_vec(tape.matmul(z, v.out_w), v.out_b));
  return out;
}

// Rebuilds the trained parameters as constants on a fresh tape.
ForwardVars freeze_vars(const Stage4Model& model, Tape& tape) {
  auto frozen = [&](Var src) {
    const auto& t = model.tape.at(src);
    return tape.constant(t.shape, t.values);
  };
  ForwardVars v;
  for (auto [dst, src] : std::initializer_list<std::pair<Var*, const Var*>>{
           {&v.fwd.Wi, &model.fwd.Wi}, {&v.fwd.Wf, &model.fwd.Wf}, {&v.fwd.Wo, &model.fwd.Wo},
           {&v.fwd.Wg, &model.fwd.Wg}, {&v.fwd.Ui, &model.fwd.Ui}, {&v.fwd.Uf, &model.fwd.Uf},
           {&v.fwd.Uo, &model.fwd.Uo}, {&v.fwd.Ug, &model.fwd.Ug}, {&v.fwd.bi, &model.fwd.bi},
           {&v.fwd.bf, &model.fwd.bf}, {&v.fwd.bo, &model.fwd.bo}, {&v.fwd.bg, &model.fwd.bg},
           {&v.bwd.Wi, &model.bwd.Wi}, {&v.bwd.Wf, &model.bwd.Wf}, {&v.bwd.Wo, &model.bwd.Wo},
           {&v.bwd.Wg, &model.bwd.Wg}, {&v.bwd.Ui, &model.bwd.Ui}, {&v.bwd.Uf, &model.bwd.Uf},
           {&v.bwd.Uo, &model.bwd.Uo}, {&v.bwd.Ug, &model.bwd.Ug}, {&v.bwd.bi, &model.bwd.bi},
           {&v.bwd.bf, &model.bwd.bf}, {&v.bwd.bo, &model.bwd.bo}, {&v.bwd.bg, &model.bwd.bg},
           {&v.att_W, &model.att_W}, {&v.att_b, &model.att_b}, {&v.att_v, &model.att_v},
           {&v.out_w, &model.out_w}, {&v.out_b, &model.out_b}})
    *dst = frozen(*src);
  return v;
}

void check_sequence_shape(const Stage4Model& model, const TxSequence& seq) {
  if (static_cast<int>(seq.steps.size()) != model.t_len)
    throw ShapeError("sequence length does not match the trained model");
  for (const auto& s : seq.steps)
    if (static_cast<int>(s.size()) != model.in_dim)
      throw ShapeError("sequence feature width does not match the trained model");
}

}  // namespace

std::vector<Var> bilstm_forward(Tape& tape, const std::vector<Var>& x_steps,
                                const LstmDirVars& fwd, const LstmDirVars& bwd) {
  if (x_steps.empty()) throw DomainError("sequence must have at least one step");
  const auto shape0 = tape.at(x_steps[0]).shape;
  for (Var x : x_steps)
    if (!(tape.at(x).shape == shape0))
      throw ShapeError("all sequence steps must share one [n x d] shape");
  std::vector<Var> hf = run_direction(tape, x_steps, fwd, false);
  std::vector<Var> hb = run_direction(tape, x_steps, bwd, true);
  std::vector<Var> out;
  out.reserve(x_steps.size());
  for (std::size_t t = 0; t < x_steps.size(); ++t) {
    const Var parts[] = {hf[t], hb[t]};
    out.push_back(tape.concat_cols(parts));
  }
  return out;
}

AttentionOut temporal_attention(Tape& tape, const std::vector<Var>& h_steps, Var W_h, Var b,
                                Var v) {
  if (h_steps.empty()) throw DomainError("attention needs at least one step");
  std::vector<Var> scores;
  scores.reserve(h_steps.size());
  for (Var h : h_steps)
    scores.push_back(tape.matmul(tape.tanh(tape.add_row_vec(tape.matmul(h, W_h), b)), v));
  AttentionOut out;
  out.alpha = tape.softmax_rows(tape.concat_cols(scores));
  Var z{-1, nullptr};
  for (std::size_t t = 0; t < h_steps.size(); ++t) {
    Var w_t = tape.slice_cols(out.alpha, static_cast<int>(t), static_cast<int>(t) + 1);
    Var part = tape.scale_rows(h_steps[t], w_t);
    z = t == 0 ? part : tape.add(z, part);
  }
  out.z = z;
  return out;
}

Stage4Model build_stage4(const std::vector<TxSequence>& dataset,
                         const std::vector<int>& train_rows, const Stage4Hyper& hyper) {
  if (dataset.empty()) throw DomainError("need at least one sequence");
  const int t_len = static_cast<int>(dataset[0].steps.size());
  if (t_len <= 0) throw DomainError("sequences must have at least one step");
  const int in_dim = static_cast<int>(dataset[0].steps[0].size());
  if (in_dim <= 0) throw DomainError("sequence steps must have at least one feature");
  for (const auto& s : dataset) {
    if (static_cast<int>(s.steps.size()) != t_len)
      throw ShapeError("all sequences must share one window length");
    for (const auto& step : s.steps)
      if (static_cast<int>(step.size()) != in_dim)
        throw ShapeError("all sequence steps must share one feature width");
  }
  const int n = static_cast<int>(dataset.size());
  for (int r : train_rows)
    if (r < 0 || r >= n) throw DomainError("training row index out of range");
  if (hyper.hidden <= 0 || hyper.att_dim <= 0) throw ConfigError("hidden sizes must be positive");

  Stage4Model model;
  model.hyper = hyper;
  model.t_len = t_len;
  model.in_dim = in_dim;
  model.n_rows = n;
  Tape& tape = model.tape;
  Rng rng(hyper.seed);

  const int H = hyper.hidden;
  auto dir_vars = [&](int din) {
    LstmDirVars d;
    d.Wi = glorot(tape, din, H, rng);
    d.Wf = glorot(tape, din, H, rng);
    d.Wo = glorot(tape, din, H, rng);
    d.Wg = glorot(tape, din, H, rng);
    d.Ui = glorot(tape, H, H, rng);
    d.Uf = glorot(tape, H, H, rng);
    d.Uo = glorot(tape, H, H, rng);
    d.Ug = glorot(tape, H, H, rng);
    d.bi = zeros_leaf(tape, 1, H, true);
    d.bf = zeros_leaf(tape, 1, H, true);
    d.bo = zeros_leaf(tape, 1, H, true);
    d.bg = zeros_leaf(tape, 1, H, true);
    for (Var v : {d.Wi, d.Wf, d.Wo, d.Wg, d.Ui, d.Uf, d.Uo, d.Ug, d.bi, d.bf, d.bo, d.bg})
      model.params.push_back(v);
    return d;
  };
  model.fwd = dir_vars(in_dim);
  model.bwd = dir_vars(in_dim);
  model.att_W = glorot(tape, 2 * H, hyper.att_dim, rng);
  model.att_b = zeros_leaf(tape, 1, hyper.att_dim, true);
  model.att_v = glorot(tape, hyper.att_dim, 1, rng);
  model.out_w = glorot(tape, 2 * H, 1, rng);
  model.out_b = zeros_leaf(tape, 1, 1, true);
  for (Var v : {model.att_W, model.att_b, model.att_v, model.out_w, model.out_b})
    model.params.push_back(v);

  for (int t = 0; t < t_len; ++t) {
    std::vector<double> xv(static_cast<std::size_t>(n) * in_dim);
    for (int i = 0; i < n; ++i)
      for (int d = 0; d < in_dim; ++d)
        xv[static_cast<std::size_t>(i) * in_dim + static_cast<std::size_t>(d)] =
            dataset[static_cast<std::size_t>(i)].steps[static_cast<std::size_t>(t)]
                   [static_cast<std::size_t>(d)];
    model.x_leaves.push_back(tape.constant({n, in_dim}, std::move(xv)));
  }
  model.z_mask =
      tape.constant({n, 2 * H}, std::vector<double>(static_cast<std::size_t>(n) * 2 * H, 1.0));

  ForwardVars fv{model.fwd, model.bwd, model.att_W, model.att_b, model.att_v, model.out_w,
                 model.out_b};
  ForwardOut fo = forward_scores(tape, model.x_leaves, fv, model.z_mask);
  model.alpha = fo.alpha;
  model.prob = fo.prob;

  model.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    model.labels[static_cast<std::size_t>(i)] =
        static_cast<double>(dataset[static_cast<std::size_t>(i)].label);
  if (train_rows.empty()) {
    model.loss = stgat::focal_loss(tape, model.prob, model.labels, hyper.focal_gamma,
                                   hyper.focal_alpha);
  } else {
    std::vector<double> w(static_cast<std::size_t>(n), 0.0);
    for (int r : train_rows) w[static_cast<std::size_t>(r)] = 1.0 / train_rows.size();
    model.loss = stgat::focal_loss(tape, model.prob, model.labels, w, hyper.focal_gamma,
                                   hyper.focal_alpha);
  }
  return model;
}

void Stage4Model::set_dropout(Rng& rng, bool training) {
  auto& t = tape.at(z_mask);
  const double p = hyper.dropout;
  if (!training || p <= 0.0) {
    std::fill(t.values.begin(), t.values.end(), 1.0);
  } else {
    const double keep = 1.0 - p;
    for (auto& v : t.values) v = rng.uniform() < keep ? 1.0 / keep : 0.0;
  }
}

std::vector<double> Stage4Model::scores() {
  Rng unused(0);
  set_dropout(unused, false);
  tape.replay();
  return tape.at(prob).values;
}

std::vector<std::vector<double>> Stage4Model::attention_weights() {
  Rng unused(0);
  set_dropout(unused, false);
  tape.replay();
  const auto& t = tape.at(alpha);
  std::vector<std::vector<double>> out(static_cast<std::size_t>(t.shape.rows));
  for (int i = 0; i < t.shape.rows; ++i)
    out[static_cast<std::size_t>(i)] =
        std::vector<double>(t.values.begin() + static_cast<std::ptrdiff_t>(i) * t.shape.cols,
                            t.values.begin() + static_cast<std::ptrdiff_t>(i + 1) * t.shape.cols);
  return out;
}

void train_stage4(Stage4Model& model) {
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
    const double loss = model.tape.scalar(model.loss);
    if (!std::isfinite(loss)) {
      std::ostringstream msg;
      msg << "training diverged at epoch " << epoch << "; last finite loss " << last_finite;
      throw NumericError(msg.str());
    }
    last_finite = loss;
    model.loss_history.push_back(loss);
    model.tape.zero_grad();
    model.tape.backward(model.loss);
    opt.step(model.tape);
  }
  Rng unused(0);
  model.set_dropout(unused, false);
  model.tape.replay();
}

TxScore score_transaction(const Stage4Model& model, const TxSequence& seq) {
  check_sequence_shape(model, seq);
  Tape tape;
  ForwardVars fv = freeze_vars(model, tape);
  std::vector<Var> xs;
  xs.reserve(seq.steps.size());
  for (const auto& step : seq.steps) xs.push_back(tape.constant({1, model.in_dim}, step));
  ForwardOut fo = forward_scores(tape, xs, fv, Var{-1, nullptr});
  TxScore out;
  out.s_tx = tape.at(fo.prob).values[0];
  out.alpha = tape.at(fo.alpha).values;
  return out;
}

std::vector<double> score_channel_coalitions(const Stage4Model& model, const TxSequence& donor,
                                             const std::vector<std::vector<int>>& keep,
                                             const std::vector<double>& background) {
  check_sequence_shape(model, donor);
  if (static_cast<int>(background.size()) != model.in_dim)
    throw ShapeError("background width does not match the model's feature width");
  for (const auto& row : keep)
    if (static_cast<int>(row.size()) != model.in_dim)
      throw ShapeError("coalition width does not match the model's feature width");
  if (keep.empty()) return {};
  const int n = static_cast<int>(keep.size());
  Tape tape;
  ForwardVars fv = freeze_vars(model, tape);
  std::vector<Var> xs;
  xs.reserve(donor.steps.size());
  for (const auto& step : donor.steps) {
    std::vector<double> xv(static_cast<std::size_t>(n) * model.in_dim);
    for (int i = 0; i < n; ++i)
      for (int d = 0; d < model.in_dim; ++d)
        xv[static_cast<std::size_t>(i) * model.in_dim + static_cast<std::size_t>(d)] =
            keep[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)] != 0
                ? step[static_cast<std::size_t>(d)]
                : background[static_cast<std::size_t>(d)];
    xs.push_back(tape.constant({n, model.in_dim}, std::move(xv)));
  }
  ForwardOut fo = forward_scores(tape, xs, fv, Var{-1, nullptr});
  return tape.at(fo.prob).values;
}

std::vector<TxSequence> generate_planted_sequences(int n_sequences, int t_len, int n_features,
                                                   std::uint64_t seed) {
  if (n_sequences < 2 || t_len < 2 || n_features < 1)
    throw DomainError("planted set needs >= 2 sequences, >= 2 steps, >= 1 feature");
  Rng rng(seed);
  std::vector<TxSequence> out;
  out.reserve(static_cast<std::size_t>(n_sequences));
  const int burst = std::min(6, t_len);
  for (int i = 0; i < n_sequences; ++i) {
    TxSequence s;
    s.account = "acct-" + std::to_string(i);
    s.label = i % 2;
    s.steps.assign(static_cast<std::size_t>(t_len),
                   std::vector<double>(static_cast<std::size_t>(n_features)));
    for (auto& step : s.steps)
      for (auto& v : step) v = rng.normal();
    if (s.label == 1) {
      const int start =
          static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(t_len - burst)));
      for (int t = start; t < start + burst; ++t) {
        auto& step = s.steps[static_cast<std::size_t>(t)];
        step[0] += 2.5;
        if (n_features > 1) step[1] += 2.0;
        if (n_features > 2) step[2] -= 2.0;
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

void CategoricalEncoder::fit(const std::vector<std::string>& values) {
  std::map<std::string, std::size_t> counts;
  for (const auto& v : values) ++counts[v];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  codes_.clear();
  for (std::size_t i = 0; i < ranked.size(); ++i)
    codes_[ranked[i].first] = static_cast<double>(i + 1);
}

double CategoricalEncoder::code(const std::string& value) const {
  auto it = codes_.find(value);
  return it == codes_.end() ? 0.0 : it->second;
}

IngestReport ingest_transactions_csv(const std::string& path, const IngestSchema& schema) {
  if (schema.window < 1) throw ConfigError("window length must be at least 1");
  if (schema.rolling_window < 1) throw ConfigError("rolling window must be at least 1");
  if (schema.numeric_cols.empty()) throw ConfigError("need at least one numeric column");
  csv::Table t = csv::read_table(path);
  IngestReport rep;
  const int c_account = csv::require_column(t, schema.account_col);
  const int c_time = csv::require_column(t, schema.time_col);
  const int c_label = csv::require_column(t, schema.label_col);
  std::vector<int> c_num, c_cat;
  for (const auto& name : schema.numeric_cols) c_num.push_back(csv::require_column(t, name));
  for (const auto& name : schema.categorical_cols) c_cat.push_back(csv::require_column(t, name));
  rep.rows_read = t.rows.size();
  if (t.rows.empty()) {
    rep.medians.assign(schema.numeric_cols.size(), 0.0);
    return rep;
  }

  struct Row {
    std::string account;
    double time = 0.0;
    int label = 0;
    std::vector<double> nums;  // NaN marks a missing cell
    std::vector<std::string> cats;
    std::size_t order = 0;
  };
  std::vector<Row> rows;
  rows.reserve(t.rows.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& cells = t.rows[r];
    Row row;
    row.account = cells[static_cast<std::size_t>(c_account)];
    row.order = r;
    try {
      row.time = csv::parse_double(cells[static_cast<std::size_t>(c_time)], path);
      const long long lab = csv::parse_long(cells[static_cast<std::size_t>(c_label)], path);
      if (lab != 0 && lab != 1) throw DomainError("label must be 0 or 1");
      row.label = static_cast<int>(lab);
      for (int c : c_num) {
        const auto& cell = cells[static_cast<std::size_t>(c)];
        row.nums.push_back(cell.empty() ? nan : csv::parse_double(cell, path));
      }
    } catch (const IoError&) {
      ++rep.rows_skipped;
      continue;
    } catch (const DomainError&) {
      ++rep.rows_skipped;
      continue;
    }
    if (row.account.empty()) {
      ++rep.rows_skipped;
      continue;
    }
    for (int c : c_cat) row.cats.push_back(cells[static_cast<std::size_t>(c)]);
    rows.push_back(std::move(row));
  }

  // Column medians over present values; lower-of-two convention on even counts.
  rep.medians.assign(schema.numeric_cols.size(), 0.0);
  for (std::size_t k = 0; k < schema.numeric_cols.size(); ++k) {
    std::vector<double> present;
    for (const auto& row : rows)
      if (!std::isnan(row.nums[k])) present.push_back(row.nums[k]);
    if (!present.empty()) {
      auto mid = present.begin() + (static_cast<std::ptrdiff_t>(present.size()) - 1) / 2;
      std::nth_element(present.begin(), mid, present.end());
      rep.medians[k] = *mid;
    }
  }

  std::vector<CategoricalEncoder> encoders(schema.categorical_cols.size());
  for (std::size_t k = 0; k < schema.categorical_cols.size(); ++k) {
    std::vector<std::string> values;
    values.reserve(rows.size());
    for (const auto& row : rows) values.push_back(row.cats[k]);
    encoders[k].fit(values);
  }

  std::map<std::string, std::vector<const Row*>> by_account;
  for (const auto& row : rows) by_account[row.account].push_back(&row);
  for (auto& [account, group] : by_account) {
    std::sort(group.begin(), group.end(), [](const Row* a, const Row* b) {
      if (a->time != b->time) return a->time < b->time;
      return a->order < b->order;
    });
    std::vector<std::vector<double>> feats;
    std::vector<int> labels;
    std::vector<double> amount_hist;
    for (const Row* row : group) {
      std::vector<double> f;
      for (std::size_t k = 0; k < row->nums.size(); ++k)
        f.push_back(std::isnan(row->nums[k]) ? rep.medians[k] : row->nums[k]);
      amount_hist.push_back(f[0]);
      const std::size_t lo =
          amount_hist.size() > static_cast<std::size_t>(schema.rolling_window)
              ? amount_hist.size() - static_cast<std::size_t>(schema.rolling_window)
              : 0;
      double mean = 0.0;
      for (std::size_t i = lo; i < amount_hist.size(); ++i) mean += amount_hist[i];
      mean /= static_cast<double>(amount_hist.size() - lo);
      double var = 0.0;
      for (std::size_t i = lo; i < amount_hist.size(); ++i)
        var += (amount_hist[i] - mean) * (amount_hist[i] - mean);
      var /= static_cast<double>(amount_hist.size() - lo);
      f.push_back(mean);
      f.push_back(std::sqrt(var));
      for (std::size_t k = 0; k < row->cats.size(); ++k)
        f.push_back(encoders[k].code(row->cats[k]));
      feats.push_back(std::move(f));
      labels.push_back(row->label);
    }
    const std::size_t w = static_cast<std::size_t>(schema.window);
    for (std::size_t start = 0; start + w <= feats.size(); start += w) {
      TxSequence seq;
      seq.account = account + "#" + std::to_string(start / w);
      seq.steps.assign(feats.begin() + static_cast<std::ptrdiff_t>(start),
                       feats.begin() + static_cast<std::ptrdiff_t>(start + w));
      seq.label = 0;
      for (std::size_t i = start; i < start + w; ++i)
        if (labels[i] == 1) seq.label = 1;
      rep.sequences.push_back(std::move(seq));
    }
  }
  return rep;
}

std::string checkpoint_to_json(const Stage4Model& model) {
  nlohmann::json j;
  j["format"] = 1;
  j["seed"] = model.hyper.seed;
  j["t_len"] = model.t_len;
  j["in_dim"] = model.in_dim;
  nlohmann::json tensors = nlohmann::json::array();
  for (Var v : model.params) {
    const auto& t = model.tape.at(v);
    tensors.push_back({{"rows", t.shape.rows}, {"cols", t.shape.cols}, {"values", t.values}});
  }
  j["tensors"] = std::move(tensors);
  return j.dump();
}

void checkpoint_from_json(Stage4Model& model, const std::string& text) {
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

}  // namespace scafds::seqmodel
