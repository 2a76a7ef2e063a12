// probembed command-line tool.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "probembed/error.hpp"
#include "probembed/eval.hpp"
#include "probembed/format.hpp"
#include "probembed/manifest.hpp"
#include "probembed/matcher.hpp"
#include "probembed/metrics.hpp"
#include "probembed/store_io.hpp"
#include "probembed/synthetic.hpp"
#include "probembed/trainer.hpp"

namespace fs = std::filesystem;
using namespace probembed;
using json = nlohmann::ordered_json;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::InvalidConfig:
      return kUsage;
    case ErrorCode::DivergenceDetected:
    case ErrorCode::AllPairsRejected:
      return kNumeric;
    default:
      return kData;
  }
}

// --- small CSV helpers ------------------------------------------------------

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  }
  std::size_t require(const std::string& name, const fs::path& from) const {
    const auto c = column(name);
    if (!c) {
      throw Error(ErrorCode::IoError,
                  from.string() + ": missing column '" + name + "'");
    }
    return *c;
  }
};

std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

Table read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  Table t;
  std::string line;
  if (!std::getline(in, line)) {
    throw Error(ErrorCode::TruncatedFile, path.string() + " is empty");
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  t.header = split(line);
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    t.rows.push_back(split(line));
    if (t.rows.back().size() != t.header.size()) {
      throw Error(ErrorCode::IoError, path.string() + ": ragged row " +
                                          std::to_string(t.rows.size()));
    }
  }
  return t;
}

double to_double(const std::string& s, const fs::path& from) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::IoError, from.string() + ": bad number '" + s + "'");
  }
}

std::size_t to_index(const std::string& s, const fs::path& from) {
  const double v = to_double(s, from);
  if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
    throw Error(ErrorCode::IoError, from.string() + ": bad index '" + s + "'");
  }
  return static_cast<std::size_t>(v);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  return out;
}

fs::path with_suffix(const fs::path& base, const std::string& suffix) {
  return fs::path(base.string() + suffix);
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  for (const auto& cell : split(text)) {
    if (cell.empty()) continue;
    try {
      out.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw UsageError("bad list element '" + cell + "'");
    }
  }
  return out;
}

MetricKind metric_from(const std::string& name) {
  const auto m = parse_metric(name);
  if (!m) throw UsageError("unknown metric '" + name + "'");
  return *m;
}

// --- pairs and side files ---------------------------------------------------

PairProtocol read_pairs(const fs::path& path, std::size_t n_records) {
  const auto t = read_csv(path);
  const auto ca = t.require("a", path);
  const auto cb = t.require("b", path);
  const auto cs = t.column("same");
  PairProtocol p;
  for (const auto& row : t.rows) {
    PairProtocol::Pair pr{to_index(row[ca], path), to_index(row[cb], path),
                          cs ? to_double(row[*cs], path) != 0.0 : false};
    if (pr.a >= n_records || pr.b >= n_records) {
      throw Error(ErrorCode::IndexOutOfRange,
                  path.string() + ": pair index beyond " + std::to_string(n_records));
    }
    p.pairs.push_back(pr);
  }
  return p;
}

bool pairs_have_labels(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  const auto cols = split(line);
  return std::find(cols.begin(), cols.end(), "same") != cols.end();
}

void write_pairs(const fs::path& path, const PairProtocol& p) {
  auto out = open_out(path);
  out << "a,b,same\n";
  for (const auto& pr : p.pairs) {
    out << pr.a << ',' << pr.b << ',' << (pr.same ? 1 : 0) << '\n';
  }
}

std::vector<std::size_t> read_index_list(const fs::path& path) {
  const auto t = read_csv(path);
  const auto c = t.require("index", path);
  std::vector<std::size_t> out;
  for (const auto& row : t.rows) out.push_back(to_index(row[c], path));
  return out;
}

std::vector<double> read_residuals(const fs::path& path, std::size_t n) {
  const auto t = read_csv(path);
  const auto ci = t.require("index", path);
  const auto cr = t.require("residual_norm", path);
  std::vector<double> r(n, -1.0);
  for (const auto& row : t.rows) {
    const auto i = to_index(row[ci], path);
    if (i >= n) {
      throw Error(ErrorCode::IndexOutOfRange, path.string() + ": index " + row[ci]);
    }
    r[i] = to_double(row[cr], path);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (r[i] < 0.0) {
      throw Error(ErrorCode::IoError,
                  path.string() + ": no residual for record " + std::to_string(i));
    }
  }
  return r;
}

struct HeadBundle {
  UncertaintyHead head;
  FeatureScaler scaler;
  std::uint64_t feature_seed = 0;
};

fs::path scaler_path(const fs::path& head) { return with_suffix(head, ".scaler.json"); }

HeadBundle load_bundle(const fs::path& head_path, RunManifest& m) {
  HeadBundle b;
  b.head = load_head(head_path);
  m.add_input(head_path);
  const auto sp = scaler_path(head_path);
  std::ifstream in(sp);
  if (!in) throw Error(ErrorCode::IoError, "missing scaler sidecar " + sp.string());
  std::stringstream buf;
  buf << in.rdbuf();
  b.scaler = FeatureScaler::from_json(buf.str());
  try {
    b.feature_seed = nlohmann::json::parse(buf.str()).at("feature_seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::IoError, sp.string() + ": " + e.what());
  }
  m.add_input(sp);
  return b;
}

/// Store copy whose variances come from the head.
EmbeddingStore apply_head(const EmbeddingStore& store, const HeadBundle& b,
                          const fs::path& noise_path, RunManifest& m) {
  const auto residual = read_residuals(noise_path, store.size());
  m.add_input(noise_path);
  const auto features = synthetic_features(store, residual, b.feature_seed);
  return store.with_scalar_sigma2(predict_sigma2(b.head, b.scaler, features));
}

// --- run bookkeeping --------------------------------------------------------

struct Run {
  RunManifest manifest;
  fs::path manifest_path;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void finish() {
    manifest.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    manifest.write(manifest_path);
  }
};

fs::path manifest_for(const std::string& flag, const fs::path& primary) {
  return flag.empty() ? with_suffix(primary, ".manifest.json") : fs::path(flag);
}

// --- commands ---------------------------------------------------------------

struct SynthArgs {
  SynthConfig cfg;
  std::string out, manifest;
};

void cmd_synth(const SynthArgs& a) {
  Run run{{.command = "synth"}, manifest_for(a.manifest, a.out)};
  run.manifest.seed = a.cfg.seed;
  run.manifest.config = {{"classes", a.cfg.num_classes}, {"per_class", a.cfg.per_class},
                         {"dim", a.cfg.dim},           {"noise_low", a.cfg.noise_low},
                         {"noise_high", a.cfg.noise_high}, {"out", a.out}};
  const auto data = gen_synthetic(a.cfg);
  save_store(data.store, a.out);
  const auto side = with_suffix(a.out, ".noise.csv");
  {
    auto out = open_out(side);
    out << "index,label,noise,residual_norm\n";
    for (std::size_t i = 0; i < data.store.size(); ++i) {
      out << i << ',' << data.store.label(i) << ',' << fmt(data.noise[i]) << ','
          << fmt(data.residual_norm[i]) << '\n';
    }
  }
  run.manifest.add_output(a.out);
  run.manifest.add_output(side);
  run.finish();
}

struct PairsArgs {
  std::string store, subset, out, manifest;
  std::size_t positive = 3000, negative = 3000;
  std::uint64_t seed = 0;
};

void cmd_pairs(const PairsArgs& a) {
  Run run{{.command = "pairs"}, manifest_for(a.manifest, a.out)};
  run.manifest.seed = a.seed;
  run.manifest.config = {{"store", a.store}, {"subset", a.subset},
                         {"positive", a.positive}, {"negative", a.negative},
                         {"out", a.out}};
  const auto store = load_store(a.store);
  run.manifest.add_input(a.store);
  PairProtocol p;
  if (a.subset.empty()) {
    p = make_pairs(store, a.positive, a.negative, a.seed);
  } else {
    const auto rows = read_index_list(a.subset);
    run.manifest.add_input(a.subset);
    EmbeddingStore sub(store.dim(), store.sigma_mode());
    for (auto r : rows) sub.add(store.at(r).embedding, store.at(r).label);
    p = make_pairs(sub, a.positive, a.negative, a.seed);
    for (auto& pr : p.pairs) {
      pr.a = rows[pr.a];
      pr.b = rows[pr.b];
    }
  }
  write_pairs(a.out, p);
  run.manifest.add_output(a.out);
  run.finish();
}

struct MatchArgs {
  std::string gallery, probe, pairs, store, metric = "fastmls", out, manifest;
  std::size_t block = 1024;
  unsigned threads = 1;
};

void warn_broadcast(MetricKind metric, const EmbeddingStore& s) {
  if (metric == MetricKind::MlsD && s.sigma_mode() == SigmaMode::Scalar) {
    std::cerr << "warning: mls on a scalar-variance store; using sigma2/D per "
                 "dimension\n";
  }
}

void cmd_match(const MatchArgs& a) {
  const MetricKind metric = metric_from(a.metric);
  Run run{{.command = "match"}, manifest_for(a.manifest, a.out)};
  run.manifest.config = {{"gallery", a.gallery}, {"probe", a.probe},
                         {"metric", to_string(metric)}, {"block_size", a.block},
                         {"threads", a.threads}, {"out", a.out}};
  const auto g = load_store(a.gallery);
  run.manifest.add_input(a.gallery);
  const auto p = load_store(a.probe, g.dim());
  run.manifest.add_input(a.probe);
  warn_broadcast(metric, g);
  MatchOptions opts;
  opts.block_rows = a.block;
  opts.threads = a.threads;
  save_scores(match_matrix(g, p, metric, opts), a.out);
  run.manifest.add_output(a.out);
  run.finish();
}

void cmd_score(const MatchArgs& a) {
  const MetricKind metric = metric_from(a.metric);
  Run run{{.command = "score"}, manifest_for(a.manifest, a.out)};
  run.manifest.config = {{"store", a.store}, {"pairs", a.pairs},
                         {"metric", to_string(metric)}, {"threads", a.threads},
                         {"out", a.out}};
  const auto store = load_store(a.store);
  run.manifest.add_input(a.store);
  const auto proto = read_pairs(a.pairs, store.size());
  const bool labeled = pairs_have_labels(a.pairs);
  run.manifest.add_input(a.pairs);
  warn_broadcast(metric, store);
  std::vector<std::pair<std::size_t, std::size_t>> idx;
  for (const auto& pr : proto.pairs) idx.emplace_back(pr.a, pr.b);
  MatchOptions opts;
  opts.threads = a.threads;
  const auto scores = score_pairs(store, idx, metric, opts);
  {
    auto out = open_out(a.out);
    out << (labeled ? "a,b,same,score\n" : "a,b,score\n");
    for (std::size_t k = 0; k < scores.size(); ++k) {
      out << idx[k].first << ',' << idx[k].second << ',';
      if (labeled) out << (proto.pairs[k].same ? 1 : 0) << ',';
      out << fmt(scores[k]) << '\n';
    }
  }
  run.manifest.add_output(a.out);
  run.finish();
}

struct BenchArgs {
  std::string metrics = "cosine,fastmls,mls", sweep, out, manifest;
  std::size_t gallery = 596, probe = 10090, dim = 256, repeats = 3, block = 1024;
  unsigned threads = 1;
  std::uint64_t seed = 0;
};

void cmd_bench(const BenchArgs& a) {
  if (a.repeats < 3) throw UsageError("--repeats must be >= 3");
  std::vector<MetricKind> kinds;
  for (const auto& name : split(a.metrics)) kinds.push_back(metric_from(name));
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  if (a.sweep.empty()) {
    shapes.emplace_back(a.gallery, a.probe);
  } else {
    for (double n : parse_list(a.sweep)) {
      if (n < 1) throw UsageError("sweep sizes must be >= 1");
      shapes.emplace_back(static_cast<std::size_t>(n), static_cast<std::size_t>(n));
    }
  }
  const fs::path primary = a.out.empty() ? fs::path("probembed-bench") : fs::path(a.out);
  Run run{{.command = "bench"}, manifest_for(a.manifest, primary)};
  run.manifest.seed = a.seed;
  run.manifest.config = {{"metrics", a.metrics}, {"gallery_size", a.gallery},
                         {"probe_size", a.probe}, {"sweep", a.sweep},
                         {"dim", a.dim}, {"repeats", a.repeats},
                         {"block_size", a.block}, {"threads", a.threads}};
  std::ofstream file;
  if (!a.out.empty()) file = open_out(a.out);
  auto emit = [&](const std::string& line) {
    std::cout << line << '\n' << std::flush;
    if (file.is_open()) file << line << '\n';
  };

  MatchOptions opts;
  opts.block_rows = a.block;
  opts.threads = a.threads;
  for (const auto& [ng, np] : shapes) {
    std::map<MetricKind, double> median;
    for (auto kind : kinds) {
      const auto rep = bench(kind, ng, np, a.dim, a.repeats, a.seed, opts);
      median[kind] = rep.median_seconds;
      emit(rep.to_json());
    }
    json ratios = json::object();
    if (median.count(MetricKind::Cosine) && median.count(MetricKind::FastMls)) {
      ratios["fastmls_over_cosine"] =
          median[MetricKind::FastMls] / median[MetricKind::Cosine];
    }
    if (median.count(MetricKind::FastMls) && median.count(MetricKind::MlsD)) {
      ratios["mls_over_fastmls"] = median[MetricKind::MlsD] / median[MetricKind::FastMls];
    }
    if (!ratios.empty()) {
      emit(json{{"n_gallery", ng}, {"n_probe", np}, {"ratios", ratios}}.dump());
    }
  }
  if (file.is_open()) {
    file.close();
    run.manifest.add_output(a.out);
  }
  run.finish();
}

struct TrainArgs {
  std::string data, noise, out, manifest;
  TrainConfig cfg;
  LossConfig loss;
  double holdout = 0.25;
  std::uint64_t feature_seed = 0;
};

void cmd_train(const TrainArgs& a) {
  Run run{{.command = "train"}, manifest_for(a.manifest, a.out)};
  run.manifest.seed = a.cfg.seed;
  run.manifest.config = {
      {"data", a.data},          {"noise", a.noise},
      {"steps", a.cfg.steps},    {"identities_per_batch", a.cfg.identities_per_batch},
      {"images_per_identity", a.cfg.images_per_identity},
      {"hidden", a.cfg.hidden},  {"base_lr", a.cfg.base_lr},
      {"momentum", a.cfg.momentum}, {"weight_decay", a.cfg.weight_decay},
      {"lambda_c", a.loss.lambda_c}, {"lambda_id", a.loss.lambda_id},
      {"margin", a.loss.margin}, {"triplet_cap", a.loss.triplet_cap},
      {"stop_grad_sigma_avg", a.loss.stop_grad_sigma_avg},
      {"holdout_frac", a.holdout}, {"feature_seed", a.feature_seed},
      {"out", a.out}};
  json sched = json::array();
  for (const auto& [step, lr] : a.cfg.resolved_schedule()) sched.push_back({step, lr});
  run.manifest.config["lr_schedule"] = sched;

  const auto store = load_store(a.data);
  run.manifest.add_input(a.data);
  const auto residual = read_residuals(a.noise, store.size());
  run.manifest.add_input(a.noise);
  const auto features = synthetic_features(store, residual, a.feature_seed);
  const std::size_t F = synthetic_feature_dim(store.dim());
  const auto split = split_holdout(store, a.holdout, a.cfg.seed);

  const auto res = train_head(store, features, F, split.train, a.cfg, a.loss);
  save_head(res.head, a.out);

  const auto hist = with_suffix(a.out, ".history.csv");
  {
    auto out = open_out(hist);
    write_history_csv(out, res.history);
  }
  const auto sc = scaler_path(a.out);
  {
    auto j = nlohmann::ordered_json::parse(res.scaler.to_json());
    j["feature_seed"] = a.feature_seed;
    auto out = open_out(sc);
    out << j.dump() << '\n';
  }
  const auto held = with_suffix(a.out, ".holdout.csv");
  {
    auto out = open_out(held);
    out << "index\n";
    for (auto i : split.holdout) out << i << '\n';
  }
  for (const auto& p : {fs::path(a.out), hist, sc, held}) run.manifest.add_output(p);
  run.finish();
}

struct PredictArgs {
  std::string store, noise, head, out, manifest;
};

void cmd_predict(const PredictArgs& a) {
  Run run{{.command = "predict"}, manifest_for(a.manifest, a.out)};
  run.manifest.config = {{"store", a.store}, {"noise", a.noise}, {"head", a.head},
                         {"out", a.out}};
  const auto store = load_store(a.store);
  run.manifest.add_input(a.store);
  const auto bundle = load_bundle(a.head, run.manifest);
  save_store(apply_head(store, bundle, a.noise, run.manifest), a.out);
  run.manifest.add_output(a.out);
  run.finish();
}

struct EvalArgs {
  std::string scores, store, pairs, metric = "fastmls", head, noise, reject = "max",
              ratios = "0,0.1,0.2,0.3", out, manifest;
  std::size_t folds = 0, bins = 50;
  bool reject_requested = false;
};

void cmd_eval(const EvalArgs& a) {
  if (a.scores.empty() == a.store.empty()) {
    throw UsageError("exactly one of --scores and --store is required");
  }
  if (!a.head.empty() && (a.store.empty() || a.noise.empty())) {
    throw UsageError("--head needs --store and --noise");
  }
  if (a.reject != "max" && a.reject != "add") {
    throw UsageError("--reject must be add or max");
  }
  const MetricKind metric = metric_from(a.metric);
  const auto ratios = parse_list(a.ratios);
  Run run{{.command = "eval"}, manifest_for(a.manifest, a.out)};
  run.manifest.config = {{"scores", a.scores}, {"store", a.store}, {"pairs", a.pairs},
                         {"metric", to_string(metric)}, {"head", a.head},
                         {"noise", a.noise}, {"reject", a.reject},
                         {"ratios", ratios}, {"folds", a.folds}, {"bins", a.bins},
                         {"out", a.out}};

  std::vector<double> scores;
  std::vector<std::uint8_t> same;
  std::vector<std::pair<double, double>> pair_sigma2;
  if (!a.scores.empty()) {
    const auto t = read_csv(a.scores);
    run.manifest.add_input(a.scores);
    const auto cs = t.require("score", a.scores);
    const auto cy = t.require("same", a.scores);
    for (const auto& row : t.rows) {
      scores.push_back(to_double(row[cs], a.scores));
      same.push_back(to_double(row[cy], a.scores) != 0.0);
    }
    if (a.reject_requested) {
      throw UsageError("--reject needs per-record variances; use --store");
    }
  } else {
    if (a.pairs.empty()) throw UsageError("--store needs --pairs");
    auto store = load_store(a.store);
    run.manifest.add_input(a.store);
    if (!a.head.empty()) {
      store = apply_head(store, load_bundle(a.head, run.manifest), a.noise, run.manifest);
    }
    if (!pairs_have_labels(a.pairs)) {
      throw Error(ErrorCode::IoError, a.pairs + ": needs a 'same' column");
    }
    const auto proto = read_pairs(a.pairs, store.size());
    run.manifest.add_input(a.pairs);
    warn_broadcast(metric, store);
    std::vector<std::pair<std::size_t, std::size_t>> idx;
    for (const auto& pr : proto.pairs) {
      idx.emplace_back(pr.a, pr.b);
      same.push_back(pr.same);
      const auto& ea = store.embedding(pr.a);
      const auto& eb = store.embedding(pr.b);
      auto mean_var = [](const ProbEmbedding& e) {
        double s = 0.0;
        for (double v : e.sigma2()) s += v;
        return s / static_cast<double>(e.sigma2().size());
      };
      pair_sigma2.emplace_back(mean_var(ea), mean_var(eb));
    }
    scores = score_pairs(store, idx, metric);
  }

  json summary;
  summary["pairs"] = scores.size();
  summary["accuracy"] = verification_accuracy(scores, same);
  if (a.folds > 0) {
    summary["folded_accuracy"] =
        verification_accuracy(scores, same, contiguous_folds(scores.size(), a.folds));
    summary["folds"] = a.folds;
  }
  const auto curve = roc(scores, same);
  json tprs = json::object();
  for (double f : {1e-3, 1e-2, 1e-1}) {
    const auto t = tpr_at_fpr(curve, f);
    tprs[fmt(f)] = {{"tpr", t.tpr}, {"below_resolution", t.below_resolution}};
  }
  summary["tpr_at_fpr"] = tprs;
  const auto hist = score_histogram(scores, same, a.bins);
  summary["histogram_overlap"] = hist.overlap();

  std::vector<fs::path> written;
  auto emit = [&](const std::string& suffix, auto&& writer) {
    const auto p = with_suffix(a.out, suffix);
    auto out = open_out(p);
    writer(out);
    written.push_back(p);
  };
  emit(".roc.csv", [&](std::ostream& o) { write_roc_csv(o, curve); });
  emit(".hist.csv", [&](std::ostream& o) { write_histogram_csv(o, hist); });
  if (!pair_sigma2.empty()) {
    const auto filter = a.reject == "add" ? RejectFilter::Add : RejectFilter::Max;
    const auto rc = reject_curve(scores, pair_sigma2, same, filter, ratios);
    emit(".reject.csv", [&](std::ostream& o) { write_reject_csv(o, rc); });
    json pts = json::array();
    for (const auto& p : rc.points) {
      pts.push_back({{"ratio", p.ratio}, {"retained", p.retained}, {"accuracy", p.accuracy}});
    }
    summary["reject"] = {{"filter", a.reject}, {"points", pts}};
  }
  emit(".summary.json", [&](std::ostream& o) { o << summary.dump(2) << '\n'; });
  std::cout << summary.dump() << '\n';
  for (const auto& p : written) run.manifest.add_output(p);
  run.finish();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probabilistic face embedding toolkit"};
  app.set_version_flag("--version", std::string(PROBEMBED_VERSION));
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a labeled synthetic store");
  s->add_option("--classes", synth.cfg.num_classes)->capture_default_str();
  s->add_option("--per-class", synth.cfg.per_class)->capture_default_str();
  s->add_option("--dim", synth.cfg.dim)->capture_default_str();
  s->add_option("--noise-low", synth.cfg.noise_low)->capture_default_str();
  s->add_option("--noise-high", synth.cfg.noise_high)->capture_default_str();
  s->add_option("--seed", synth.cfg.seed)->capture_default_str();
  s->add_option("--out", synth.out, "Output .pemb")->required();
  s->add_option("--manifest", synth.manifest);

  PairsArgs pairs;
  auto* pc = app.add_subcommand("pairs", "Draw a balanced verification pair list");
  pc->add_option("--store", pairs.store)->required();
  pc->add_option("--positive", pairs.positive)->capture_default_str();
  pc->add_option("--negative", pairs.negative)->capture_default_str();
  pc->add_option("--subset", pairs.subset, "CSV with an 'index' column");
  pc->add_option("--seed", pairs.seed)->capture_default_str();
  pc->add_option("--out", pairs.out)->required();
  pc->add_option("--manifest", pairs.manifest);

  MatchArgs match;
  auto* m = app.add_subcommand("match", "Score every gallery x probe pair");
  m->add_option("--gallery", match.gallery)->required();
  m->add_option("--probe", match.probe)->required();
  m->add_option("--metric", match.metric, "cosine|mls|mls1|fastmls")->capture_default_str();
  m->add_option("--block-size", match.block)->capture_default_str();
  m->add_option("--threads", match.threads)->capture_default_str();
  m->add_option("--out", match.out, "Output score matrix")->required();
  m->add_option("--manifest", match.manifest);

  MatchArgs score;
  auto* sc = app.add_subcommand("score", "Score a pair list to CSV");
  sc->add_option("--store", score.store)->required();
  sc->add_option("--pairs", score.pairs, "CSV with a,b[,same]")->required();
  sc->add_option("--metric", score.metric, "cosine|mls|mls1|fastmls")->capture_default_str();
  sc->add_option("--threads", score.threads)->capture_default_str();
  sc->add_option("--out", score.out)->required();
  sc->add_option("--manifest", score.manifest);

  BenchArgs bench_args;
  auto* b = app.add_subcommand("bench", "Time matching on random stores");
  b->add_option("--metric", bench_args.metrics, "Comma-separated metrics")->capture_default_str();
  b->add_option("--gallery-size", bench_args.gallery)->capture_default_str();
  b->add_option("--probe-size", bench_args.probe)->capture_default_str();
  b->add_option("--sweep", bench_args.sweep, "N:N sizes, e.g. 100,1000,10000");
  b->add_option("--dim", bench_args.dim)->capture_default_str();
  b->add_option("--repeats", bench_args.repeats)->capture_default_str();
  b->add_option("--block-size", bench_args.block)->capture_default_str();
  b->add_option("--threads", bench_args.threads)->capture_default_str();
  b->add_option("--seed", bench_args.seed)->capture_default_str();
  b->add_option("--out", bench_args.out, "Also write JSON lines here");
  b->add_option("--manifest", bench_args.manifest);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train the uncertainty head");
  t->add_option("--data", train.data)->required();
  t->add_option("--noise", train.noise, "Sidecar CSV from synth")->required();
  t->add_option("--steps", train.cfg.steps)->capture_default_str();
  t->add_option("--identities", train.cfg.identities_per_batch)->capture_default_str();
  t->add_option("--images", train.cfg.images_per_identity)->capture_default_str();
  t->add_option("--hidden", train.cfg.hidden)->capture_default_str();
  t->add_option("--lr", train.cfg.base_lr)->capture_default_str();
  t->add_option("--momentum", train.cfg.momentum)->capture_default_str();
  t->add_option("--weight-decay", train.cfg.weight_decay)->capture_default_str();
  t->add_option("--lambda-c", train.loss.lambda_c)->capture_default_str();
  t->add_option("--lambda-id", train.loss.lambda_id)->capture_default_str();
  t->add_option("--margin", train.loss.margin)->capture_default_str();
  t->add_option("--triplet-cap", train.loss.triplet_cap)->capture_default_str();
  t->add_flag("--stop-grad-sigma-avg", train.loss.stop_grad_sigma_avg);
  t->add_option("--holdout-frac", train.holdout)->capture_default_str();
  t->add_option("--seed", train.cfg.seed)->capture_default_str();
  t->add_option("--feature-seed", train.feature_seed)->capture_default_str();
  t->add_option("--out", train.out, "Output head checkpoint")->required();
  t->add_option("--manifest", train.manifest);

  PredictArgs predict;
  auto* pr = app.add_subcommand("predict", "Replace store variances with head output");
  pr->add_option("--store", predict.store)->required();
  pr->add_option("--noise", predict.noise)->required();
  pr->add_option("--head", predict.head)->required();
  pr->add_option("--out", predict.out)->required();
  pr->add_option("--manifest", predict.manifest);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Verification accuracy, ROC, reject curve");
  e->add_option("--scores", ev.scores, "CSV from score with a same column");
  e->add_option("--store", ev.store);
  e->add_option("--pairs", ev.pairs);
  e->add_option("--metric", ev.metric)->capture_default_str();
  e->add_option("--head", ev.head);
  e->add_option("--noise", ev.noise);
  auto* rej = e->add_option("--reject", ev.reject, "add|max")->capture_default_str();
  e->add_option("--ratios", ev.ratios)->capture_default_str();
  e->add_option("--folds", ev.folds, "0 for the unfolded best threshold")->capture_default_str();
  e->add_option("--bins", ev.bins)->capture_default_str();
  e->add_option("--out", ev.out, "Output path prefix")->required();
  e->add_option("--manifest", ev.manifest);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (s->parsed()) cmd_synth(synth);
    if (pc->parsed()) cmd_pairs(pairs);
    if (m->parsed()) cmd_match(match);
    if (sc->parsed()) cmd_score(score);
    if (b->parsed()) cmd_bench(bench_args);
    if (t->parsed()) cmd_train(train);
    if (pr->parsed()) cmd_predict(predict);
    if (e->parsed()) {
      ev.reject_requested = rej->count() > 0;
      cmd_eval(ev);
    }
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << '\n';
    return kUsage;
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return exit_code_for(err.code());
  } catch (const std::bad_alloc&) {
    std::cerr << "error: out of memory\n";
    return kData;
  }
  return kOk;
}
