#include "scafds/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "scafds/attribution.hpp"
#include "scafds/cooccur.hpp"
#include "scafds/csv.hpp"
#include "scafds/errors.hpp"
#include "scafds/fusion.hpp"
#include "scafds/graph.hpp"
#include "scafds/rng.hpp"
#include "scafds/stgat.hpp"
#include "scafds/synthnet.hpp"

namespace scafds::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Salts keep the event log and the sequence corpus decorrelated from the
// network draw while still being functions of the one root seed.
constexpr std::uint64_t kEventSalt = 0x5eed0001u;
constexpr std::uint64_t kSequenceSalt = 0x5eed0002u;

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << text;
  if (!f) throw IoError("write failure on " + path);
}

// Consumed-key tracking so a typo in a config key fails loudly instead of
// silently keeping the default.
class StrictObject {
 public:
  StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be a JSON object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  const json& raw(const char* key) {
    consumed_.insert(key);
    return j_.at(key);
  }

  void get(const char* key, double& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_number()) throw ConfigError(path_ + "." + key + " must be a number");
    out = v.get<double>();
  }

  void get(const char* key, int& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_number_integer()) throw ConfigError(path_ + "." + key + " must be an integer");
    out = v.get<int>();
  }

  void get(const char* key, bool& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_boolean()) throw ConfigError(path_ + "." + key + " must be a boolean");
    out = v.get<bool>();
  }

  void get(const char* key, std::string& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_string()) throw ConfigError(path_ + "." + key + " must be a string");
    out = v.get<std::string>();
  }

  void get(const char* key, std::uint64_t& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() &&
                                   v.get<std::int64_t>() < 0))
      throw ConfigError(path_ + "." + key + " must be a non-negative integer");
    out = v.get<std::uint64_t>();
  }

  void get(const char* key, std::vector<std::uint64_t>& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_array()) throw ConfigError(path_ + "." + key + " must be an array");
    std::vector<std::uint64_t> parsed;
    for (const auto& item : v) {
      if (!item.is_number_integer() || (!item.is_number_unsigned() &&
                                        item.get<std::int64_t>() < 0))
        throw ConfigError(path_ + "." + key + " must hold non-negative integers");
      parsed.push_back(item.get<std::uint64_t>());
    }
    out = std::move(parsed);
  }

  void get(const char* key, std::vector<std::string>& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_array()) throw ConfigError(path_ + "." + key + " must be an array");
    std::vector<std::string> parsed;
    for (const auto& item : v) {
      if (!item.is_string()) throw ConfigError(path_ + "." + key + " must hold strings");
      parsed.push_back(item.get<std::string>());
    }
    out = std::move(parsed);
  }

  void get(const char* key, std::array<double, 3>& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_array() || v.size() != 3)
      throw ConfigError(path_ + "." + key + " must be an array of 3 numbers");
    for (std::size_t i = 0; i < 3; ++i) {
      if (!v[i].is_number()) throw ConfigError(path_ + "." + key + " must hold numbers");
      out[i] = v[i].get<double>();
    }
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!consumed_.count(item.key()))
        throw ConfigError(path_ + " has unknown key '" + item.key() + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> consumed_;
};

void require_positive(const char* key, int v) {
  if (v <= 0) throw ConfigError(std::string(key) + " must be positive");
}

// Per-variant training knobs. Baselines (gcn, node_gat) exist only inside
// the evaluation suite; asking the training pipeline for them is a usage
// mistake, not a config one.
struct VariantKnobs {
  bool node_only = false;
  bool temporal = true;
  bool bilinear = true;
  bool pairs = true;
  bool shuffle = false;
};

VariantKnobs knobs_for(const std::string& canonical) {
  VariantKnobs k;
  if (canonical == "full") return k;
  if (canonical == "no_edge") {
    k.node_only = true;
    k.pairs = false;
    return k;
  }
  if (canonical == "no_fusion") {
    k.bilinear = false;
    return k;
  }
  if (canonical == "no_temporal") {
    k.temporal = false;
    return k;
  }
  if (canonical == "shuffled_edge") {
    k.shuffle = true;
    return k;
  }
  throw UsageError("'" + canonical + "' is an evaluation baseline, not a trainable variant");
}

// Root seed overrides every stage seed so one integer pins the whole run.
PipelineConfig resolved(const PipelineConfig& in) {
  PipelineConfig c = in;
  c.net.seed = c.seed;
  c.stage3.seed = c.seed;
  c.stage4.seed = c.seed;
  c.stage5.seed = c.seed;
  c.stage5.include_tx = false;  // institution scores never carry a per-node s_tx
  return c;
}

struct OutPaths {
  fs::path root;
  explicit OutPaths(const std::string& out_dir) : root(out_dir) {}
  std::string nodes(int q) const { return (root / ("nodes_q" + std::to_string(q) + ".csv")).string(); }
  std::string edges(int q) const { return (root / ("edges_q" + std::to_string(q) + ".csv")).string(); }
  std::string events() const { return (root / "events.csv").string(); }
  std::string checkpoint(int stage) const {
    return (root / ("stage" + std::to_string(stage) + "_checkpoint.json")).string();
  }
  std::string loss(int stage) const {
    return (root / ("stage" + std::to_string(stage) + "_loss.csv")).string();
  }
  std::string scores() const { return (root / "scores.csv").string(); }
  std::string results() const { return (root / "results.csv").string(); }
  std::string results_table() const { return (root / "results_table.txt").string(); }
  fs::path records_dir() const { return root / "records"; }
  std::string record(const std::string& case_id) const {
    return (records_dir() / (case_id + ".json")).string();
  }
  std::string cases() const { return (root / "cases.csv").string(); }
  fs::path reports_dir() const { return root / "reports"; }
  std::string report(const std::string& case_id) const {
    return (reports_dir() / (case_id + ".json")).string();
  }
  std::string rates() const { return (root / "grounding_rates.csv").string(); }
  std::string manifest(const std::string& command) const {
    return (root / ("manifest_" + command + ".json")).string();
  }
};

// The manifest pins the command plus the fully resolved config so an output
// directory is self-describing and reruns are diffable.
void write_manifest(const PipelineConfig& cfg, const std::string& command,
                    std::vector<std::string>& files,
                    const std::vector<std::pair<std::string, std::string>>& extra = {}) {
  json m;
  m["command"] = command;
  m["config"] = json::parse(config_to_json(cfg));
  for (const auto& [k, v] : extra) m[k] = v;
  const OutPaths paths(cfg.out_dir);
  write_text(paths.manifest(command), m.dump(2) + "\n");
  files.push_back(paths.manifest(command));
}

void write_loss_csv(const std::string& path, const std::vector<double>& history) {
  std::vector<std::string> lines;
  lines.push_back("epoch,loss");
  for (std::size_t i = 0; i < history.size(); ++i)
    lines.push_back(std::to_string(i) + "," + csv::format_double(history[i]));
  csv::write_lines(path, lines);
}

std::vector<graph::InterbankGraph> load_snapshots(const PipelineConfig& cfg) {
  const OutPaths paths(cfg.out_dir);
  std::vector<graph::InterbankGraph> snaps;
  snaps.reserve(static_cast<std::size_t>(cfg.n_quarters));
  for (int q = 0; q < cfg.n_quarters; ++q)
    snaps.push_back(graph::read_graph_csv(paths.nodes(q), paths.edges(q)));
  return snaps;
}

std::vector<double> labels_of(const graph::InterbankGraph& g) {
  std::vector<double> labels;
  labels.reserve(g.nodes.size());
  for (const auto& node : g.nodes) {
    if (node.label != 0 && node.label != 1)
      throw DomainError("node " + node.id + " is unlabeled; regenerate the network");
    labels.push_back(static_cast<double>(node.label));
  }
  return labels;
}

void mix_bytes(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
}

template <typename Model>
void mix_params(std::uint64_t& h, const Model& model) {
  for (const auto v : model.params) {
    const auto& t = model.tape.at(v);
    for (const double d : t.values) mix_bytes(h, &d, sizeof d);
  }
}

std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Per-channel training median, the reference point layer-1 explanations
// compare each case against.
std::vector<double> background_from_sequences(const std::vector<seqmodel::TxSequence>& seqs,
                                              const std::vector<int>& train_rows) {
  if (seqs.empty()) throw DomainError("background needs at least one sequence");
  const std::size_t n_channels = seqs.front().steps.front().size();
  std::vector<double> background(n_channels, 0.0);
  for (std::size_t ch = 0; ch < n_channels; ++ch) {
    std::vector<double> values;
    for (const int r : train_rows)
      for (const auto& step : seqs[static_cast<std::size_t>(r)].steps) values.push_back(step[ch]);
    if (values.empty()) throw DomainError("background needs a nonempty training split");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    background[ch] =
        (n % 2 == 1) ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
  }
  return background;
}

// Largest three channel-0 readings of the case sequence stand in for the
// reported transaction amounts.
std::vector<double> case_amounts(const seqmodel::TxSequence& seq) {
  std::vector<double> amounts;
  amounts.reserve(seq.steps.size());
  for (const auto& step : seq.steps) amounts.push_back(step.front());
  std::sort(amounts.begin(), amounts.end(), std::greater<double>());
  if (amounts.size() > 3) amounts.resize(3);
  return amounts;
}

std::string format_rate(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

// Summary table with a signed-rank column against the baseline (first
// listed) model, paired by seed on AUPRC.
std::string comparison_table(const std::vector<evalharness::RunResult>& rows,
                             const std::string& baseline) {
  const auto summaries = evalharness::summarize(rows);
  const auto comps = evalharness::pairwise_wilcoxon(rows);
  const auto p_for = [&](const std::string& model) -> std::string {
    if (model == baseline) return "-";
    for (const auto& c : comps) {
      const bool hit = (c.model_a == baseline && c.model_b == model) ||
                       (c.model_a == model && c.model_b == baseline);
      if (!hit) continue;
      if (!c.valid) return "n/a";
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", c.test.p_value);
      return buf;
    }
    return "n/a";
  };

  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-14s %5s %7s %16s %16s %16s %10s\n", "model", "runs",
                "failed", "auprc", "auroc", "f1", ("p_vs_" + baseline).c_str());
  out += line;
  const auto cell = [](const evalharness::MetricSummary& m) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.3f +/- %.3f", m.mean, m.sd);
    return std::string(buf);
  };
  for (const auto& s : summaries) {
    std::snprintf(line, sizeof line, "%-14s %5d %7d %16s %16s %16s %10s\n", s.model.c_str(),
                  s.n_runs, s.n_failed, cell(s.auprc).c_str(), cell(s.auroc).c_str(),
                  cell(s.f1).c_str(), p_for(s.model).c_str());
    out += line;
  }
  return out;
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return kExitUsage;
  if (dynamic_cast<const IoError*>(&e)) return kExitIo;
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;  // + convergence, infeasible
  if (dynamic_cast<const StateError*>(&e)) return kExitState;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ShapeError*>(&e) ||
      dynamic_cast<const DomainError*>(&e))
    return kExitConfig;
  return kExitUsage;  // unclassified failures read as a bad invocation
}

int log_level() {
  const char* raw = std::getenv("SCAFDS_LOG");
  if (raw == nullptr) return 1;
  const std::string v = lower(raw);
  if (v == "quiet" || v == "0") return 0;
  if (v == "debug" || v == "2") return 2;
  return 1;
}

void log_line(int level, const std::string& msg) {
  if (level <= log_level()) std::fprintf(stderr, "%s\n", msg.c_str());
}

std::string normalize_model_name(const std::string& name) {
  std::string key;
  for (const char c : name)
    if (c != '_' && c != '-')
      key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (key == "full") return "full";
  if (key == "noedge") return "no_edge";
  if (key == "nofusion") return "no_fusion";
  if (key == "notemporal") return "no_temporal";
  if (key == "shuffled" || key == "shufflededge") return "shuffled_edge";
  if (key == "gcn") return "gcn";
  if (key == "nodegat") return "node_gat";
  throw UsageError("unknown model '" + name +
                   "'; expected full, no_edge, no_fusion, no_temporal, shuffled_edge, gcn, "
                   "or node_gat");
}

PipelineConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse failure: ") + e.what());
  }

  PipelineConfig c;
  StrictObject root(j, "config");
  root.get("seed", c.seed);
  root.get("out_dir", c.out_dir);
  root.get("ablation", c.ablation);

  if (root.has("network")) {
    StrictObject net(root.raw("network"), "network");
    net.get("n_institutions", c.net.n_institutions);
    net.get("n_edges", c.net.n_edges);
    net.get("label_percentile", c.net.label_percentile);
    net.get("edge_noise_std", c.net.edge_noise_std);
    net.get("composite_weights", c.net.composite_weights);
    net.get("exposure_scale", c.net.exposure_scale);
    net.get("report_bias_std", c.net.report_bias_std);
    net.get("n_quarters", c.n_quarters);
    net.get("drift", c.drift);
    net.finish();
    require_positive("network.n_quarters", c.n_quarters);
  }

  if (root.has("sequences")) {
    StrictObject seq(root.raw("sequences"), "sequences");
    seq.get("count", c.n_sequences);
    seq.get("length", c.sequence_length);
    seq.get("channels", c.sequence_channels);
    seq.finish();
    require_positive("sequences.count", c.n_sequences);
    require_positive("sequences.length", c.sequence_length);
    require_positive("sequences.channels", c.sequence_channels);
  }

  if (root.has("stage3")) {
    StrictObject s3(root.raw("stage3"), "stage3");
    s3.get("heads", c.stage3.gat.heads);
    s3.get("head_dim", c.stage3.gat.head_dim);
    s3.get("diffusion_steps", c.stage3.gat.diffusion_steps);
    s3.get("share_diffusion_weights", c.stage3.gat.share_diffusion_weights);
    s3.get("leaky_slope", c.stage3.gat.leaky_slope);
    s3.get("dropout", c.stage3.gat.dropout);
    s3.get("temporal_hidden", c.stage3.temporal.hidden);
    s3.get("temporal_layers", c.stage3.temporal.layers);
    s3.get("temporal_enabled", c.stage3.temporal.enabled);
    s3.get("lr", c.stage3.lr);
    s3.get("weight_decay", c.stage3.weight_decay);
    s3.get("cosine", c.stage3.cosine);
    s3.get("epochs", c.stage3.epochs);
    s3.get("focal_gamma", c.stage3.focal_gamma);
    s3.get("focal_alpha", c.stage3.focal_alpha);
    s3.get("align_weight", c.stage3.align_weight);
    s3.get("contrast_weight", c.stage3.contrast_weight);
    s3.get("cooccur_threshold", c.stage3.cooccur_threshold);
    s3.finish();
  }

  if (root.has("stage4")) {
    StrictObject s4(root.raw("stage4"), "stage4");
    s4.get("hidden", c.stage4.hidden);
    s4.get("att_dim", c.stage4.att_dim);
    s4.get("lr", c.stage4.lr);
    s4.get("weight_decay", c.stage4.weight_decay);
    s4.get("cosine", c.stage4.cosine);
    s4.get("epochs", c.stage4.epochs);
    s4.get("focal_gamma", c.stage4.focal_gamma);
    s4.get("focal_alpha", c.stage4.focal_alpha);
    s4.get("dropout", c.stage4.dropout);
    s4.finish();
  }

  if (root.has("stage5")) {
    StrictObject s5(root.raw("stage5"), "stage5");
    s5.get("bilinear", c.stage5.bilinear);
    s5.get("lambda_fco", c.stage5.lambda_fco);
    s5.get("margin", c.stage5.margin);
    s5.get("tau_fco", c.stage5.tau_fco);
    s5.get("focal_gamma", c.stage5.focal_gamma);
    s5.get("focal_alpha", c.stage5.focal_alpha);
    s5.get("lr", c.stage5.lr);
    s5.get("weight_decay", c.stage5.weight_decay);
    s5.get("cosine", c.stage5.cosine);
    s5.get("epochs", c.stage5.epochs);
    s5.finish();
  }

  if (root.has("fusion")) {
    StrictObject fu(root.raw("fusion"), "fusion");
    fu.get("systemic_gamma", c.systemic_gamma);
    fu.get("pair_threshold", c.pair_threshold);
    fu.get("n_contrast_pairs", c.n_contrast_pairs);
    fu.finish();
  }

  if (root.has("evaluate")) {
    StrictObject ev(root.raw("evaluate"), "evaluate");
    ev.get("seeds", c.eval_seeds);
    ev.get("models", c.models);
    ev.get("val_frac", c.val_frac);
    ev.get("test_frac", c.test_frac);
    ev.get("gcn_hidden", c.gcn_hidden);
    ev.finish();
    require_positive("evaluate.gcn_hidden", c.gcn_hidden);
  }

  if (root.has("attribution")) {
    StrictObject at(root.raw("attribution"), "attribution");
    at.get("top_k", c.top_k);
    at.get("permutations", c.shapley_permutations);
    at.finish();
    require_positive("attribution.top_k", c.top_k);
    require_positive("attribution.permutations", c.shapley_permutations);
  }

  if (root.has("thresholds")) {
    StrictObject th(root.raw("thresholds"), "thresholds");
    th.get("tau1_percentile", c.thresholds.tau1_percentile);
    th.get("tau2", c.thresholds.tau2);
    th.get("tau3", c.thresholds.tau3);
    th.finish();
  }

  root.finish();
  return c;
}

PipelineConfig read_config(const std::string& path) {
  return config_from_json(read_text(path));
}

std::string config_to_json(const PipelineConfig& config) {
  json j;
  j["seed"] = config.seed;
  j["out_dir"] = config.out_dir;
  j["ablation"] = config.ablation;

  json net;
  net["n_institutions"] = config.net.n_institutions;
  net["n_edges"] = config.net.n_edges;
  net["label_percentile"] = config.net.label_percentile;
  net["edge_noise_std"] = config.net.edge_noise_std;
  net["composite_weights"] = config.net.composite_weights;
  net["exposure_scale"] = config.net.exposure_scale;
  net["report_bias_std"] = config.net.report_bias_std;
  net["n_quarters"] = config.n_quarters;
  net["drift"] = config.drift;
  j["network"] = std::move(net);

  json seq;
  seq["count"] = config.n_sequences;
  seq["length"] = config.sequence_length;
  seq["channels"] = config.sequence_channels;
  j["sequences"] = std::move(seq);

  json s3;
  s3["heads"] = config.stage3.gat.heads;
  s3["head_dim"] = config.stage3.gat.head_dim;
  s3["diffusion_steps"] = config.stage3.gat.diffusion_steps;
  s3["share_diffusion_weights"] = config.stage3.gat.share_diffusion_weights;
  s3["leaky_slope"] = config.stage3.gat.leaky_slope;
  s3["dropout"] = config.stage3.gat.dropout;
  s3["temporal_hidden"] = config.stage3.temporal.hidden;
  s3["temporal_layers"] = config.stage3.temporal.layers;
  s3["temporal_enabled"] = config.stage3.temporal.enabled;
  s3["lr"] = config.stage3.lr;
  s3["weight_decay"] = config.stage3.weight_decay;
  s3["cosine"] = config.stage3.cosine;
  s3["epochs"] = config.stage3.epochs;
  s3["focal_gamma"] = config.stage3.focal_gamma;
  s3["focal_alpha"] = config.stage3.focal_alpha;
  s3["align_weight"] = config.stage3.align_weight;
  s3["contrast_weight"] = config.stage3.contrast_weight;
  s3["cooccur_threshold"] = config.stage3.cooccur_threshold;
  j["stage3"] = std::move(s3);

  json s4;
  s4["hidden"] = config.stage4.hidden;
  s4["att_dim"] = config.stage4.att_dim;
  s4["lr"] = config.stage4.lr;
  s4["weight_decay"] = config.stage4.weight_decay;
  s4["cosine"] = config.stage4.cosine;
  s4["epochs"] = config.stage4.epochs;
  s4["focal_gamma"] = config.stage4.focal_gamma;
  s4["focal_alpha"] = config.stage4.focal_alpha;
  s4["dropout"] = config.stage4.dropout;
  j["stage4"] = std::move(s4);

  json s5;
  s5["bilinear"] = config.stage5.bilinear;
  s5["lambda_fco"] = config.stage5.lambda_fco;
  s5["margin"] = config.stage5.margin;
  s5["tau_fco"] = config.stage5.tau_fco;
  s5["focal_gamma"] = config.stage5.focal_gamma;
  s5["focal_alpha"] = config.stage5.focal_alpha;
  s5["lr"] = config.stage5.lr;
  s5["weight_decay"] = config.stage5.weight_decay;
  s5["cosine"] = config.stage5.cosine;
  s5["epochs"] = config.stage5.epochs;
  j["stage5"] = std::move(s5);

  json fu;
  fu["systemic_gamma"] = config.systemic_gamma;
  fu["pair_threshold"] = config.pair_threshold;
  fu["n_contrast_pairs"] = config.n_contrast_pairs;
  j["fusion"] = std::move(fu);

  json ev;
  ev["seeds"] = config.eval_seeds;
  ev["models"] = config.models;
  ev["val_frac"] = config.val_frac;
  ev["test_frac"] = config.test_frac;
  ev["gcn_hidden"] = config.gcn_hidden;
  j["evaluate"] = std::move(ev);

  json at;
  at["top_k"] = config.top_k;
  at["permutations"] = config.shapley_permutations;
  j["attribution"] = std::move(at);

  json th;
  th["tau1_percentile"] = config.thresholds.tau1_percentile;
  th["tau2"] = config.thresholds.tau2;
  th["tau3"] = config.thresholds.tau3;
  j["thresholds"] = std::move(th);

  return j.dump(2) + "\n";
}

GenerateSummary cmd_generate(const PipelineConfig& config) {
  const PipelineConfig cfg = resolved(config);
  const OutPaths paths(cfg.out_dir);
  fs::create_directories(paths.root);

  const auto snaps = synthnet::generate_snapshots(cfg.net, cfg.n_quarters, cfg.drift);

  GenerateSummary out;
  for (int q = 0; q < cfg.n_quarters; ++q) {
    graph::write_nodes_csv(paths.nodes(q), snaps[static_cast<std::size_t>(q)]);
    graph::write_edges_csv(paths.edges(q), snaps[static_cast<std::size_t>(q)]);
    out.files.push_back(paths.nodes(q));
    out.files.push_back(paths.edges(q));
  }

  // Every labeled institution files 1..3 registry events on random days of
  // the reference year; the log is the raw material for co-occurrence work.
  Rng rng(cfg.seed ^ kEventSalt);
  std::vector<cooccur::FraudEvent> events;
  for (const auto& node : snaps.front().nodes) {
    if (node.label != 1) continue;
    const auto count = rng.uniform_int(1, 3);
    for (std::int64_t i = 0; i < count; ++i)
      events.push_back({node.id, static_cast<int>(rng.uniform_int(0, 364)),
                        cooccur::EventSource::SAR_registry});
  }
  const cooccur::FraudEventLog log(std::move(events));
  cooccur::write_events_csv(paths.events(), log);
  out.files.push_back(paths.events());

  out.n_nodes = static_cast<int>(snaps.front().nodes.size());
  out.n_edges = static_cast<int>(snaps.front().edges.size());
  int positives = 0;
  for (const auto& node : snaps.front().nodes) positives += node.label == 1 ? 1 : 0;
  out.positive_rate = out.n_nodes > 0 ? static_cast<double>(positives) / out.n_nodes : 0.0;

  write_manifest(cfg, "generate", out.files);
  log_line(1, "generate: " + std::to_string(out.n_nodes) + " institutions, " +
                  std::to_string(out.n_edges) + " edges, positive rate " +
                  format_rate(out.positive_rate));
  return out;
}

TrainSummary cmd_train(const PipelineConfig& config) {
  const PipelineConfig cfg = resolved(config);
  const std::string canonical = normalize_model_name(cfg.ablation);
  const VariantKnobs knobs = knobs_for(canonical);
  const OutPaths paths(cfg.out_dir);

  auto snaps = load_snapshots(cfg);
  if (knobs.shuffle) snaps = evalharness::shuffle_variant_snapshots(snaps, cfg.seed);
  const auto labels = labels_of(snaps.front());
  const auto split = evalharness::stratified_split(labels, cfg.seed, cfg.val_frac, cfg.test_frac);

  auto pairs = knobs.pairs ? stgat::pairs_from_graph(snaps.front(), cfg.pair_threshold,
                                                     cfg.n_contrast_pairs, cfg.seed)
                           : stgat::PairSupervision{};

  auto h3 = cfg.stage3;
  h3.gat.mode = knobs.node_only ? stgat::AttentionMode::node_only
                                : stgat::AttentionMode::edge_aware;
  h3.temporal.enabled = h3.temporal.enabled && knobs.temporal;
  if (!knobs.pairs) {
    h3.align_weight = 0.0;
    h3.contrast_weight = 0.0;
  }

  TrainSummary out;
  out.resumed = fs::exists(paths.checkpoint(3)) && fs::exists(paths.checkpoint(4)) &&
                fs::exists(paths.checkpoint(5));

  auto m3 = stgat::build_stage3(snaps, labels, pairs, h3, split.train);
  if (out.resumed) {
    stgat::checkpoint_from_json(m3, read_text(paths.checkpoint(3)));
    log_line(2, "train: stage 3 restored from checkpoint");
  } else {
    stgat::train_stage3(m3);
    write_loss_csv(paths.loss(3), m3.loss_history);
    out.files.push_back(paths.loss(3));
  }
  write_text(paths.checkpoint(3), stgat::checkpoint_to_json(m3));
  out.files.push_back(paths.checkpoint(3));

  const auto sequences = seqmodel::generate_planted_sequences(
      cfg.n_sequences, cfg.sequence_length, cfg.sequence_channels, cfg.seed ^ kSequenceSalt);
  std::vector<double> seq_labels;
  for (const auto& s : sequences) seq_labels.push_back(s.label);
  const auto seq_split =
      evalharness::stratified_split(seq_labels, cfg.seed, cfg.val_frac, cfg.test_frac);

  auto m4 = seqmodel::build_stage4(sequences, seq_split.train, cfg.stage4);
  if (out.resumed) {
    seqmodel::checkpoint_from_json(m4, read_text(paths.checkpoint(4)));
    log_line(2, "train: stage 4 restored from checkpoint");
  } else {
    seqmodel::train_stage4(m4);
    write_loss_csv(paths.loss(4), m4.loss_history);
    out.files.push_back(paths.loss(4));
  }
  write_text(paths.checkpoint(4), seqmodel::checkpoint_to_json(m4));
  out.files.push_back(paths.checkpoint(4));

  const auto embeddings = m3.contagion_embeddings();
  std::vector<int> src, dst;
  for (const auto& e : snaps.front().edges) {
    src.push_back(e.src);
    dst.push_back(e.dst);
  }
  auto h5 = cfg.stage5;
  h5.bilinear = h5.bilinear && knobs.bilinear;
  auto m5 = fusion::build_stage5(embeddings, {}, src, dst, labels, pairs, h5, split.train);
  if (out.resumed) {
    fusion::checkpoint_from_json(m5, read_text(paths.checkpoint(5)));
    log_line(2, "train: stage 5 restored from checkpoint");
  } else {
    fusion::train_stage5(m5);
    write_loss_csv(paths.loss(5), m5.loss_history);
    out.files.push_back(paths.loss(5));
  }
  write_text(paths.checkpoint(5), fusion::checkpoint_to_json(m5));
  out.files.push_back(paths.checkpoint(5));

  const auto forensic = m5.forensic_scores();
  const auto prank = graph::pagerank(snaps.front());
  std::vector<fusion::InstitutionScore> rows;
  for (std::size_t v = 0; v < snaps.front().nodes.size(); ++v) {
    const auto systemic =
        fusion::systemic_risk_score({forensic[v]}, {}, cfg.systemic_gamma, prank[v]);
    rows.push_back({snaps.front().nodes[v].id, systemic.value, forensic[v], prank[v]});
  }
  fusion::write_scores_csv(paths.scores(), rows);
  out.files.push_back(paths.scores());

  std::uint64_t h = 1469598103934665603ull;
  mix_params(h, m3);
  mix_params(h, m4);
  mix_params(h, m5);
  out.state_hash = h;

  write_manifest(cfg, "train", out.files, {{"state_hash", hash_hex(h)}});
  log_line(1, std::string("train: variant ") + canonical +
                  (out.resumed ? ", resumed from checkpoints" : ", trained from scratch") +
                  ", state hash " + hash_hex(h));
  return out;
}

EvaluateSummary cmd_evaluate(const PipelineConfig& config) {
  const PipelineConfig cfg = resolved(config);
  if (cfg.models.empty())
    throw UsageError("evaluate needs at least one model (config key evaluate.models)");

  std::vector<std::string> models;
  for (const auto& m : cfg.models) {
    const auto canonical = normalize_model_name(m);
    if (std::find(models.begin(), models.end(), canonical) == models.end())
      models.push_back(canonical);
  }

  evalharness::AblationConfig ac;
  ac.net = cfg.net;
  ac.n_quarters = cfg.n_quarters;
  ac.drift = cfg.drift;
  ac.h3 = cfg.stage3;
  ac.h5 = cfg.stage5;
  ac.gamma = cfg.systemic_gamma;
  ac.pair_threshold = cfg.pair_threshold;
  ac.n_contrast_pairs = cfg.n_contrast_pairs;
  ac.val_frac = cfg.val_frac;
  ac.test_frac = cfg.test_frac;
  ac.gcn_hidden = cfg.gcn_hidden;

  EvaluateSummary out;
  out.rows = evalharness::run_ablation_suite(ac, cfg.eval_seeds, models);

  const OutPaths paths(cfg.out_dir);
  fs::create_directories(paths.root);
  evalharness::write_results_csv(paths.results(), out.rows);
  out.files.push_back(paths.results());

  // The first listed model anchors the significance column.
  out.table = comparison_table(out.rows, models.front());
  write_text(paths.results_table(), out.table);
  out.files.push_back(paths.results_table());

  write_manifest(cfg, "evaluate", out.files);
  std::fputs(out.table.c_str(), stdout);
  return out;
}

AttributeSummary cmd_attribute(const PipelineConfig& config) {
  const PipelineConfig cfg = resolved(config);
  const std::string canonical = normalize_model_name(cfg.ablation);
  const VariantKnobs knobs = knobs_for(canonical);
  const OutPaths paths(cfg.out_dir);

  for (const int stage : {3, 4, 5})
    if (!fs::exists(paths.checkpoint(stage)))
      throw StateError("missing " + paths.checkpoint(stage) + "; run train first");

  // Shells mirror the training build exactly (same data, seeds, knobs) so
  // the checkpoints drop into identical parameter lists.
  auto snaps = load_snapshots(cfg);
  if (knobs.shuffle) snaps = evalharness::shuffle_variant_snapshots(snaps, cfg.seed);
  const auto labels = labels_of(snaps.front());
  const auto split = evalharness::stratified_split(labels, cfg.seed, cfg.val_frac, cfg.test_frac);
  auto pairs = knobs.pairs ? stgat::pairs_from_graph(snaps.front(), cfg.pair_threshold,
                                                     cfg.n_contrast_pairs, cfg.seed)
                           : stgat::PairSupervision{};

  auto h3 = cfg.stage3;
  h3.gat.mode = knobs.node_only ? stgat::AttentionMode::node_only
                                : stgat::AttentionMode::edge_aware;
  h3.temporal.enabled = h3.temporal.enabled && knobs.temporal;
  if (!knobs.pairs) {
    h3.align_weight = 0.0;
    h3.contrast_weight = 0.0;
  }
  auto m3 = stgat::build_stage3(snaps, labels, pairs, h3, split.train);
  stgat::checkpoint_from_json(m3, read_text(paths.checkpoint(3)));

  const auto sequences = seqmodel::generate_planted_sequences(
      cfg.n_sequences, cfg.sequence_length, cfg.sequence_channels, cfg.seed ^ kSequenceSalt);
  std::vector<double> seq_labels;
  for (const auto& s : sequences) seq_labels.push_back(s.label);
  const auto seq_split =
      evalharness::stratified_split(seq_labels, cfg.seed, cfg.val_frac, cfg.test_frac);

  // Zero-epoch hypers mark the loaded shells as trained-at-init; the loaded
  // parameters are the training result, not a fresh draw.
  auto h4 = cfg.stage4;
  h4.epochs = 0;
  auto m4 = seqmodel::build_stage4(sequences, seq_split.train, h4);
  seqmodel::checkpoint_from_json(m4, read_text(paths.checkpoint(4)));

  const auto embeddings = m3.contagion_embeddings();
  std::vector<int> src, dst;
  for (const auto& e : snaps.front().edges) {
    src.push_back(e.src);
    dst.push_back(e.dst);
  }
  auto h5 = cfg.stage5;
  h5.bilinear = h5.bilinear && knobs.bilinear;
  h5.epochs = 0;
  auto m5 = fusion::build_stage5(embeddings, {}, src, dst, labels, pairs, h5, split.train);
  fusion::checkpoint_from_json(m5, read_text(paths.checkpoint(5)));

  const auto forensic = m5.forensic_scores();
  const auto prank = graph::pagerank(snaps.front());
  const std::size_t n = snaps.front().nodes.size();
  std::vector<double> systemic(n, 0.0);
  for (std::size_t v = 0; v < n; ++v)
    systemic[v] =
        fusion::systemic_risk_score({forensic[v]}, {}, cfg.systemic_gamma, prank[v]).value;

  std::vector<std::size_t> order(n);
  for (std::size_t v = 0; v < n; ++v) order[v] = v;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return systemic[a] > systemic[b]; });
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(cfg.top_k), n);

  const auto background = background_from_sequences(sequences, seq_split.train);
  std::vector<std::string> channel_names;
  for (int ch = 0; ch < cfg.sequence_channels; ++ch)
    channel_names.push_back("ch" + std::to_string(ch));

  // Outgoing edges of the case institution, with the co-occurrence weight
  // the gate later thresholds on.
  std::vector<std::vector<attribution::Counterparty>> neighbors(n);
  for (std::size_t e = 0; e < snaps.front().edges.size(); ++e) {
    const auto& edge = snaps.front().edges[e];
    neighbors[static_cast<std::size_t>(edge.src)].push_back(
        {static_cast<std::size_t>(edge.dst), embeddings[static_cast<std::size_t>(edge.dst)],
         snaps.front().mean_edge_feature(e)});
  }

  fs::create_directories(paths.records_dir());
  AttributeSummary out;
  std::vector<std::string> case_lines;
  case_lines.push_back("case_id,institution_index,sequence_index,rank,systemic");
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t v = order[i];
    const std::string case_id = snaps.front().nodes[v].id;
    const std::size_t seq_index = v % sequences.size();

    attribution::CaseInputs in;
    in.case_id = case_id;
    in.sequence = sequences[seq_index];
    in.channel_names = channel_names;
    in.background = background;
    in.institution = v;
    in.embedding = embeddings[v];
    in.counterparties = neighbors[v];

    attribution::RecordOptions opt;
    opt.target = attribution::Layer1Target::tx_score;
    opt.max_features = 12;
    opt.n_permutations = cfg.shapley_permutations;
    opt.seed = cfg.seed;

    const auto record = attribution::build_record(in, m4, m5, opt);
    attribution::write_record(paths.record(case_id), record);
    out.files.push_back(paths.record(case_id));
    out.case_ids.push_back(case_id);
    case_lines.push_back(case_id + "," + std::to_string(v) + "," + std::to_string(seq_index) +
                         "," + std::to_string(i) + "," + csv::format_double(systemic[v]));
  }
  csv::write_lines(paths.cases(), case_lines);
  out.files.push_back(paths.cases());

  write_manifest(cfg, "attribute", out.files);
  log_line(1, "attribute: wrote " + std::to_string(out.case_ids.size()) + " records under " +
                  paths.records_dir().string());
  return out;
}

SarSummary cmd_sar(const PipelineConfig& config) {
  const PipelineConfig cfg = resolved(config);
  const OutPaths paths(cfg.out_dir);
  if (!fs::exists(paths.cases()))
    throw IoError("missing " + paths.cases() + "; run attribute first");

  const auto table = csv::read_table(paths.cases());
  const int col_case = csv::require_column(table, "case_id");
  const int col_seq = csv::require_column(table, "sequence_index");

  const auto sequences = seqmodel::generate_planted_sequences(
      cfg.n_sequences, cfg.sequence_length, cfg.sequence_channels, cfg.seed ^ kSequenceSalt);

  fs::create_directories(paths.reports_dir());
  SarSummary out;
  std::vector<sargen::GateResult> gates;
  for (const auto& row : table.rows) {
    const std::string case_id = row[static_cast<std::size_t>(col_case)];
    const auto seq_index = static_cast<std::size_t>(
        csv::parse_double(row[static_cast<std::size_t>(col_seq)], "cases.csv sequence_index"));
    if (seq_index >= sequences.size())
      throw StateError("cases.csv sequence_index out of range; regenerate the records");

    const auto record = attribution::read_record(paths.record(case_id));
    const auto gate = sargen::gate_assertions(record, cfg.thresholds);

    sargen::CaseMetadata meta;
    meta.subject_id = case_id;
    meta.activity_type = "structured interbank transaction pattern";
    meta.amounts = case_amounts(sequences[seq_index]);
    meta.date_start = "day 0";
    meta.date_end = "day " + std::to_string(cfg.sequence_length - 1);

    const auto report = sargen::render_report(case_id, meta, gate);
    sargen::write_report(paths.report(case_id), report);
    out.files.push_back(paths.report(case_id));
    gates.push_back(gate);
    ++out.n_reports;
  }

  out.rates = sargen::grounding_rate(gates);
  sargen::write_rates_csv(paths.rates(), out.rates);
  out.files.push_back(paths.rates());

  write_manifest(cfg, "sar", out.files);
  log_line(1, "sar: " + std::to_string(out.n_reports) + " reports, overall grounding rate " +
                  format_rate(out.rates.overall));
  return out;
}

}  // namespace scafds::pipeline
