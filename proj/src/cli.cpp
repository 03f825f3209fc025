#include "unis/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>

#include "unis/bmkd_tree.hpp"
#include "unis/dataset.hpp"
#include "unis/errors.hpp"
#include "unis/rng.hpp"
#include "unis/search.hpp"
#include "unis/strategy_selector.hpp"

namespace unis::cli {

namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

json config_json(const TreeConfig& c) {
  return json{{"c", c.c},
              {"t", c.t},
              {"t_auto", c.t_auto},
              {"t_max", c.t_max},
              {"delta", c.delta},
              {"l", c.l},
              {"kappa", c.kappa},
              {"omega", c.omega},
              {"seed", c.seed},
              {"pivot_method", c.pivot_method == PivotMethod::predicted ? "predicted" : "exact_sort"}};
}

/// Writes one JSON object per line; every record carries the same context.
class Records {
 public:
  Records(std::ostream& out, std::string command) : out_(out), start_(Clock::now()) {
    base_["command"] = std::move(command);
  }
  void context(const std::string& key, json value) { base_[key] = std::move(value); }
  void emit(const std::string& metric, json value, const std::string& unit, json extra = json::object()) {
    json rec = base_;
    rec["metric"] = metric;
    rec["value"] = std::move(value);
    rec["unit"] = unit;
    rec["wall_time_s"] = seconds_since(start_);
    for (auto& [k, v] : extra.items()) rec[k] = v;
    out_ << rec.dump() << '\n';
  }

 private:
  std::ostream& out_;
  json base_ = json::object();
  Clock::time_point start_;
};

// --- tree configuration flags ------------------------------------------------

struct TreeFlags {
  TreeConfig cfg;
  std::string config_path;
  std::map<std::string, CLI::Option*> opts;
};

void add_tree_flags(CLI::App* sub, TreeFlags& f) {
  f.opts["c"] = sub->add_option("--c", f.cfg.c, "Leaf capacity");
  f.opts["t"] = sub->add_option("--t", f.cfg.t, "Partition number (fixed)");
  f.opts["t_auto"] = sub->add_flag("--t-auto", f.cfg.t_auto, "Choose t by the partition objective");
  f.opts["t_max"] = sub->add_option("--t-max", f.cfg.t_max, "Upper bound for --t-auto");
  f.opts["delta"] = sub->add_option("--delta", f.cfg.delta, "Model sampling rate");
  f.opts["l"] = sub->add_option("--l", f.cfg.l, "Sub-models per CDF model");
  f.opts["kappa"] = sub->add_option("--kappa", f.cfg.kappa, "Pivot candidate window half-width");
  f.opts["omega"] = sub->add_option("--omega", f.cfg.omega, "Balance factor in (0.5, 1)");
  f.opts["seed"] = sub->add_option("--seed", f.cfg.seed, "Random seed");
  f.opts["t"]->excludes(f.opts["t_auto"]);
  sub->add_option("--config", f.config_path, "key=value configuration file (flags take precedence)");
}

bool parse_bool(const std::string& v, const std::string& where) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw UsageError(where + ": expected a boolean, got '" + v + "'");
}

template <typename T>
T parse_number(const std::string& v, const std::string& where) {
  std::istringstream in(v);
  T out{};
  in >> out;
  if (!in || !in.eof()) throw UsageError(where + ": cannot parse '" + v + "'");
  return out;
}

void apply_config_file(TreeFlags& f) {
  if (f.config_path.empty()) return;
  std::ifstream in(f.config_path);
  if (!in) throw UsageError("cannot open config file " + f.config_path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    const std::string where = f.config_path + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw UsageError(where + ": expected key=value");
    auto strip = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string key = strip(line.substr(0, eq));
    std::replace(key.begin(), key.end(), '-', '_');
    const std::string value = strip(line.substr(eq + 1));
    const auto it = f.opts.find(key);
    if (it == f.opts.end()) throw UsageError(where + ": unknown key '" + key + "'");
    if (it->second->count() > 0) continue;  // command-line flag wins
    TreeConfig& c = f.cfg;
    if (key == "c") c.c = parse_number<std::size_t>(value, where);
    else if (key == "t") c.t = parse_number<std::size_t>(value, where);
    else if (key == "t_auto") c.t_auto = parse_bool(value, where);
    else if (key == "t_max") c.t_max = parse_number<std::size_t>(value, where);
    else if (key == "delta") c.delta = parse_number<double>(value, where);
    else if (key == "l") c.l = parse_number<std::size_t>(value, where);
    else if (key == "kappa") c.kappa = parse_number<double>(value, where);
    else if (key == "omega") c.omega = parse_number<double>(value, where);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(value, where);
  }
}

std::string dataset_name(const std::string& path) { return std::filesystem::path(path).stem().string(); }

void describe_tree(Records& rec, const BmkdTree& tree) {
  rec.context("n", tree.size());
  rec.context("d", tree.dim());
  rec.context("cfg", config_json(tree.config()));
  rec.context("seed", tree.config().seed);
}

// --- build ---------------------------------------------------------------------

struct BuildArgs {
  TreeFlags tree;
  std::string input;
  std::string out;
  std::size_t repetitions = 1;
};

int cmd_build(const BuildArgs& a, bool baseline, std::ostream& out, std::ostream& err) {
  TreeConfig cfg = a.tree.cfg;
  cfg.pivot_method = baseline ? PivotMethod::exact_sort : PivotMethod::predicted;
  Records rec(out, baseline ? "baseline-build" : "build");
  rec.context("dataset", dataset_name(a.input));
  const PointSet pts = read_dataset(a.input);
  if (a.repetitions == 0) throw UsageError("--repetitions must be at least 1");
  std::vector<double> times;
  BmkdTree tree;
  for (std::size_t rep = 0; rep < a.repetitions; ++rep) {
    PointSet copy = pts;
    const auto start = Clock::now();
    tree = BmkdTree::build(std::move(copy), cfg);
    times.push_back(seconds_since(start));
  }
  std::sort(times.begin(), times.end());
  const double build_s = times[times.size() / 2];
  describe_tree(rec, tree);
  if (!a.out.empty()) tree.save_file(a.out);

  json hist = json::object();
  std::size_t leaves = 0;
  for (const auto& [depth, count] : tree.leaf_depth_histogram()) {
    hist[std::to_string(depth)] = count;
    leaves += count;
  }
  const double aepl = aepl_empirical(tree);
  rec.emit("build_time", build_s, "s", {{"repetitions", a.repetitions}, {"aggregation", "median"}});
  rec.emit("aepl", aepl, "comparisons");
  rec.emit("t", tree.t(), "children");
  rec.emit("height", tree.height(), "levels");
  rec.emit("leaves", leaves, "nodes");
  rec.emit("depth_histogram", hist, "leaves");
  err << (baseline ? "baseline-build" : "build") << ": n=" << tree.size() << " d=" << tree.dim() << " t=" << tree.t()
      << " leaves=" << leaves << " height=" << tree.height() << " aepl=" << aepl << " time=" << build_s << "s\n";
  return kOk;
}

// --- insert --------------------------------------------------------------------

struct InsertArgs {
  std::string snapshot;
  std::string input;
  std::string out;
  std::size_t batch_size = 0;
};

int cmd_insert(const InsertArgs& a, std::ostream& out, std::ostream& err) {
  Records rec(out, "insert");
  rec.context("dataset", dataset_name(a.input));
  BmkdTree tree = BmkdTree::load_file(a.snapshot);
  describe_tree(rec, tree);
  const PointSet batch = read_dataset(a.input);
  if (batch.dim() != tree.dim()) {
    throw UsageError("batch has dimension " + std::to_string(batch.dim()) + ", tree has " +
                     std::to_string(tree.dim()));
  }
  const std::size_t d = tree.dim();
  const std::size_t per = a.batch_size == 0 ? std::max<std::size_t>(batch.size(), 1) : a.batch_size;

  std::size_t triggers = 0, selective = 0, scapegoat = 0, strict = 0, dominance_violations = 0, splits = 0;
  bool audit_ok = true;
  std::size_t batch_index = 0;
  for (std::size_t first = 0; first < batch.size() || (batch.size() == 0 && batch_index == 0); first += per) {
    const std::size_t count = std::min(per, batch.size() - first);
    const std::span<const double> coords(batch.raw().data() + first * d, count * d);
    const auto start = Clock::now();
    const InsertReport report = tree.insert(coords);
    const double latency = seconds_since(start);
    std::size_t b_sel = 0, b_scape = 0, b_strict = 0;
    for (const auto& ev : report.rebuilds) {
      b_sel += ev.selective_points;
      b_scape += ev.scapegoat_points;
      if (ev.selective_points < ev.scapegoat_points) ++b_strict;
      if (ev.selective_points > ev.scapegoat_points) ++dominance_violations;
    }
    const AuditReport check = audit(tree);
    audit_ok = audit_ok && check.ok();
    rec.emit("insert_latency", latency, "s",
             {{"batch", batch_index},
              {"batch_points", count},
              {"rebuild_triggers", report.rebuilds.size()},
              {"selective_points", b_sel},
              {"scapegoat_points", b_scape},
              {"strict_savings", b_strict},
              {"leaf_splits", report.leaf_splits},
              {"audit_ok", check.ok()},
              {"repetitions", 1},
              {"aggregation", "single"}});
    if (!check.ok()) {
      for (std::size_t i = 0; i < std::min<std::size_t>(check.violations.size(), 5); ++i) {
        err << "audit: " << check.violations[i] << '\n';
      }
    }
    triggers += report.rebuilds.size();
    selective += b_sel;
    scapegoat += b_scape;
    strict += b_strict;
    splits += report.leaf_splits;
    ++batch_index;
    if (batch.size() == 0) break;
  }
  rec.emit("rebuild_triggers", triggers, "events");
  rec.emit("selective_points", selective, "points");
  rec.emit("scapegoat_points", scapegoat, "points");
  rec.emit("strict_savings", strict, "events");
  rec.emit("dominance_violations", dominance_violations, "events");
  rec.emit("audit_ok", audit_ok, "bool");
  tree.save_file(a.out.empty() ? a.snapshot : a.out);
  err << "insert: " << batch.size() << " points in " << batch_index << " batch(es), " << triggers
      << " rebuild trigger(s), selective " << selective << " vs scapegoat " << scapegoat << " points, leaf splits "
      << splits << ", audit " << (audit_ok ? "ok" : "FAILED") << '\n';
  if (!audit_ok || dominance_violations > 0) return kAudit;
  return kOk;
}

// --- query ---------------------------------------------------------------------

struct QueryArgs {
  std::string snapshot;
  std::string workload = "knn";
  std::string strategy = "all";
  std::string queries;
  std::string model;
  std::size_t n_queries = 100;
  std::size_t k = 10;
  double radius = 0.1;
  std::uint64_t seed = 1;
};

std::vector<std::vector<double>> load_queries(const QueryArgs& a, const BmkdTree& tree) {
  std::vector<std::vector<double>> qs;
  if (!a.queries.empty()) {
    const PointSet pts = read_dataset(a.queries);
    if (pts.dim() != tree.dim()) throw UsageError("query file dimension does not match the tree");
    for (PointId i = 0; i < pts.size(); ++i) qs.emplace_back(pts[i].begin(), pts[i].end());
    return qs;
  }
  Rng rng(a.seed);
  for (std::size_t i = 0; i < a.n_queries; ++i) {
    const Coords p = tree.points()[rng.below(tree.size())];
    qs.emplace_back(p.begin(), p.end());
  }
  return qs;
}

int cmd_query(const QueryArgs& a, std::ostream& out, std::ostream& err) {
  Records rec(out, "query");
  rec.context("dataset", dataset_name(a.snapshot));
  const Workload workload = parse_workload(a.workload);
  const bool all = a.strategy == "all";
  const bool automatic = a.strategy == "auto";
  std::optional<Strategy> fixed;
  if (!all && !automatic) fixed = parse_strategy(a.strategy);
  if (automatic && a.model.empty()) {
    throw UsageError("--strategy auto needs a trained selector model (--model); create one with `unis train`");
  }
  if (workload == Workload::knn && a.k == 0) throw UsageError("--k must be at least 1");
  if (workload == Workload::radius && !(a.radius >= 0.0)) throw UsageError("--radius must be non-negative");

  const BmkdTree tree = BmkdTree::load_file(a.snapshot);
  describe_tree(rec, tree);
  std::optional<SelectorModel> model;
  if (automatic) {
    model = SelectorModel::load_file(a.model);
    if (model->workload != workload) throw UsageError("selector model was trained for a different workload");
  }
  const auto queries = load_queries(a, tree);
  const double param = workload == Workload::knn ? static_cast<double>(a.k) : a.radius;

  std::vector<Strategy> strategies;
  if (all) strategies.assign(kAllStrategies.begin(), kAllStrategies.end());
  if (fixed) strategies.push_back(*fixed);

  std::map<std::string, std::pair<double, std::size_t>> totals;  // name -> (seconds, accesses)
  std::size_t mismatches = 0;
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const auto& q = queries[qi];
    std::optional<std::vector<Hit>> reference;
    auto record = [&](const std::string& name, double secs, const SearchStats& st, const std::vector<Hit>& hits,
                      json extra) {
      extra["query"] = qi;
      extra["strategy"] = name;
      extra["workload"] = a.workload;
      extra["param"] = param;
      extra["access_count"] = st.point_accesses;
      extra["results"] = hits.size();
      extra["repetitions"] = 1;
      extra["aggregation"] = "single";
      rec.emit("query_time", secs, "s", extra);
      totals[name].first += secs;
      totals[name].second += st.point_accesses;
      if (!reference) {
        reference = hits;
      } else if (*reference != hits) {
        ++mismatches;
        err << "query " << qi << ": strategy " << name << " disagrees with the first strategy\n";
      }
    };
    if (automatic) {
      SearchStats st;
      SearchOptions opts;
      opts.stats = &st;
      if (workload == Workload::knn) {
        const AutoKnn r = knn_auto(tree, *model, q, a.k, opts);
        record("auto", r.query_seconds + r.predict_seconds, st, r.result.hits,
               {{"chosen", strategy_name(r.chosen)}, {"predict_time_s", r.predict_seconds},
                {"search_time_s", r.query_seconds}});
      } else {
        const AutoRadius r = radius_auto(tree, *model, q, a.radius, opts);
        record("auto", r.query_seconds + r.predict_seconds, st, r.result.hits,
               {{"chosen", strategy_name(r.chosen)}, {"predict_time_s", r.predict_seconds},
                {"search_time_s", r.query_seconds}});
      }
      continue;
    }
    for (Strategy s : strategies) {
      SearchStats st;
      SearchOptions opts;
      opts.stats = &st;
      const auto start = Clock::now();
      std::vector<Hit> hits = workload == Workload::knn ? knn(tree, q, a.k, s, opts).hits
                                                        : radius_search(tree, q, a.radius, s, opts).hits;
      const double secs = seconds_since(start);
      record(std::string(strategy_name(s)), secs, st, hits, json::object());
    }
  }
  const double nq = static_cast<double>(std::max<std::size_t>(queries.size(), 1));
  for (const auto& [name, tot] : totals) {
    rec.emit("mean_query_time", tot.first / nq, "s", {{"strategy", name}, {"queries", queries.size()},
                                                      {"aggregation", "mean"}});
    rec.emit("mean_access_count", static_cast<double>(tot.second) / nq, "points",
             {{"strategy", name}, {"queries", queries.size()}});
    err << std::left << std::setw(8) << name << " mean " << tot.first / nq * 1e6 << " us, "
        << static_cast<double>(tot.second) / nq << " point accesses\n";
  }
  rec.emit("result_mismatches", mismatches, "queries");
  return mismatches == 0 ? kOk : kAudit;
}

// --- selector commands ------------------------------------------------------------

struct GtArgs {
  std::string snapshot;
  std::string out;
  std::string workload = "knn";
  std::size_t samples = 1000;
  std::size_t k_min = 1;
  std::size_t k_max = 1000;
  bool literal_radius = false;
  std::uint64_t seed = 1;
};

int cmd_gen_gt(const GtArgs& a, std::ostream& out, std::ostream& err) {
  Records rec(out, "gen-gt");
  rec.context("dataset", dataset_name(a.snapshot));
  const BmkdTree tree = BmkdTree::load_file(a.snapshot);
  describe_tree(rec, tree);
  GroundTruthParams p;
  p.workload = parse_workload(a.workload);
  p.n_samples = a.samples;
  p.seed = a.seed;
  p.k_min = a.k_min;
  p.k_max = a.k_max;
  p.literal_radius = a.literal_radius;
  const auto start = Clock::now();
  const auto samples = generate_ground_truth(tree, LeafSnapshot::take(tree), p);
  const double secs = seconds_since(start);
  write_samples_csv(a.out, samples, tree.dim());
  std::array<std::size_t, 4> counts{};
  for (const auto& s : samples) ++counts[static_cast<std::size_t>(s.label)];
  rec.emit("samples", samples.size(), "queries", {{"workload", a.workload}});
  for (Strategy s : kAllStrategies) {
    const double share = samples.empty() ? 0.0
                                         : static_cast<double>(counts[static_cast<std::size_t>(s)]) /
                                               static_cast<double>(samples.size());
    rec.emit("label_share", share, "fraction", {{"strategy", strategy_name(s)}});
  }
  rec.emit("generation_time", secs, "s", {{"repetitions", 1}, {"aggregation", "single"}});
  err << "gen-gt: " << samples.size() << " samples;";
  for (Strategy s : kAllStrategies) err << ' ' << strategy_name(s) << '=' << counts[static_cast<std::size_t>(s)];
  err << '\n';
  return kOk;
}

struct TrainArgs {
  std::string snapshot;
  std::string input;
  std::string out;
  std::string workload = "knn";
  ForestParams forest;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  Records rec(out, "train");
  rec.context("dataset", dataset_name(a.input));
  const BmkdTree tree = BmkdTree::load_file(a.snapshot);
  describe_tree(rec, tree);
  rec.context("seed", a.forest.seed);
  rec.context("forest", json{{"trees", a.forest.n_trees}, {"max_depth", a.forest.max_depth},
                             {"min_leaf", a.forest.min_leaf}, {"workload", a.workload}});
  auto samples = read_samples_csv(a.input);
  if (samples.empty()) throw UsageError("train: the sample file has no rows");
  SampleSplit split = split_samples(std::move(samples), a.forest.seed);
  const auto start = Clock::now();
  const SelectorModel model =
      train_selector(split.train, LeafSnapshot::take(tree), parse_workload(a.workload), tree.dim(), a.forest);
  const double secs = seconds_since(start);
  model.save_file(a.out);
  const EvalReport train_rep = evaluate(model, split.train);
  rec.emit("train_samples", split.train.size(), "samples");
  rec.emit("train_time", secs, "s", {{"repetitions", 1}, {"aggregation", "single"}});
  rec.emit("train_top1", train_rep.top1, "fraction");
  rec.emit("constant_predictor", model.constant_warning, "bool");
  if (!split.validation.empty()) {
    const EvalReport val = evaluate(model, split.validation);
    rec.emit("validation_mrr", val.mrr, "mrr", {{"samples", val.samples}});
    rec.emit("validation_top1", val.top1, "fraction", {{"samples", val.samples}});
  }
  if (model.constant_warning) err << "train: warning: fewer than two labels or too few samples, constant predictor\n";
  err << "train: " << split.train.size() << " training samples, training top-1 " << train_rep.top1 << '\n';
  return kOk;
}

struct EvalArgs {
  std::string model;
  std::string input;
  bool all = false;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  Records rec(out, "eval");
  rec.context("dataset", dataset_name(a.input));
  const SelectorModel model = SelectorModel::load_file(a.model);
  rec.context("seed", model.split_seed);
  rec.context("cfg", json{{"workload", workload_name(model.workload)},
                          {"dim", model.dim},
                          {"split_seed", model.split_seed},
                          {"trees", model.forest.params().n_trees},
                          {"max_depth", model.forest.params().max_depth},
                          {"min_leaf", model.forest.params().min_leaf}});
  auto samples = read_samples_csv(a.input);
  std::vector<LabeledSample> test =
      a.all ? std::move(samples) : split_samples(std::move(samples), model.split_seed).test;
  const EvalReport r = evaluate(model, test);
  rec.emit("mrr", r.mrr, "mrr", {{"samples", r.samples}});
  rec.emit("top1_accuracy", r.top1, "fraction", {{"samples", r.samples}});
  for (Strategy s : kAllStrategies) {
    rec.emit("selection_share", r.selection_share[static_cast<std::size_t>(s)], "fraction",
             {{"strategy", strategy_name(s)}});
  }
  err << "eval: " << r.samples << " samples, MRR " << r.mrr << ", top-1 " << r.top1 << '\n';
  return kOk;
}

// --- gen-data / audit -------------------------------------------------------------

struct GenArgs {
  std::string dist = "uniform";
  std::size_t n = 10000;
  std::size_t d = 3;
  std::uint64_t seed = 1;
  std::string out;
  std::string format;
};

int cmd_gen_data(const GenArgs& a, std::ostream& out, std::ostream& err) {
  Records rec(out, "gen-data");
  rec.context("dataset", dataset_name(a.out));
  rec.context("n", a.n);
  rec.context("d", a.d);
  rec.context("seed", a.seed);
  rec.context("cfg", json{{"dist", a.dist}, {"n", a.n}, {"d", a.d}, {"seed", a.seed}});
  const PointSet pts = generate(parse_distribution(a.dist), a.n, a.d, a.seed);
  std::string format = a.format;
  if (format.empty()) format = std::filesystem::path(a.out).extension() == ".bin" ? "bin" : "csv";
  if (format == "bin") {
    write_bin(a.out, pts);
  } else if (format == "csv") {
    write_csv(a.out, pts);
  } else {
    throw UsageError("--format must be csv or bin");
  }
  rec.emit("points_written", pts.size(), "points", {{"distribution", a.dist}, {"format", format}});
  err << "gen-data: wrote " << pts.size() << " " << a.dist << " points to " << a.out << '\n';
  return kOk;
}

struct AuditArgs {
  std::string snapshot;
  std::size_t queries = 0;
  std::uint64_t seed = 1;
};

int cmd_audit(const AuditArgs& a, std::ostream& out, std::ostream& err) {
  Records rec(out, "audit");
  rec.context("dataset", dataset_name(a.snapshot));
  const BmkdTree tree = BmkdTree::load_file(a.snapshot);
  describe_tree(rec, tree);
  const AuditReport report = audit(tree);
  for (const auto& v : report.violations) err << "audit: " << v << '\n';
  rec.emit("structure_violations", report.violations.size(), "violations",
           {{"nodes", report.nodes}, {"leaves", report.leaves},
            {"oversized_duplicate_leaves", report.oversized_duplicate_leaves}});

  std::size_t mismatches = 0;
  Rng rng(a.seed);
  const Mbr& box = tree.root()->mbr;
  const double diag = dist(box.lo, box.hi);
  for (std::size_t i = 0; i < a.queries; ++i) {
    std::vector<double> q(tree.dim());
    for (std::size_t j = 0; j < q.size(); ++j) q[j] = rng.uniform(box.lo[j], box.hi[j]);
    const std::size_t k = 1 + rng.below(50);
    const double r = diag * 0.1 * rng.unit();
    const auto want_knn = linear_knn(tree.points(), q, k);
    const auto want_rad = linear_radius(tree.points(), q, r);
    for (Strategy s : kAllStrategies) {
      if (knn(tree, q, k, s).hits != want_knn) ++mismatches;
      if (radius_search(tree, q, r, s).hits != want_rad) ++mismatches;
    }
  }
  rec.emit("query_mismatches", mismatches, "queries", {{"queries", a.queries}});
  const bool ok = report.ok() && mismatches == 0;
  err << "audit: " << (ok ? "ok" : "FAILED") << " (" << report.nodes << " nodes, " << report.violations.size()
      << " structural violations, " << mismatches << " query mismatches)\n";
  return ok ? kOk : kAudit;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Learned-pivot balanced multi-way KD-tree: build, insert, query and strategy selection", "unis"};
  app.require_subcommand(1);

  BuildArgs build_args;
  auto* build = app.add_subcommand("build", "Build a tree with model-predicted pivots");
  BuildArgs base_args;
  auto* base = app.add_subcommand("baseline-build", "Build a tree with exactly sorted pivots");
  for (auto [sub, ba] : {std::pair{build, &build_args}, std::pair{base, &base_args}}) {
    sub->add_option("--input", ba->input, "Dataset (CSV or UPTS binary)")->required();
    sub->add_option("--out,--snapshot", ba->out, "Snapshot to write");
    sub->add_option("--repetitions", ba->repetitions, "Timed builds; the median is reported");
    add_tree_flags(sub, ba->tree);
  }

  InsertArgs ins;
  auto* insert = app.add_subcommand("insert", "Insert a batch file into a snapshot");
  insert->add_option("--snapshot", ins.snapshot)->required();
  insert->add_option("--input", ins.input, "Points to insert")->required();
  insert->add_option("--out", ins.out, "Updated snapshot (default: overwrite --snapshot)");
  insert->add_option("--batch-size", ins.batch_size, "Split the file into batches of this many points");

  QueryArgs qa;
  auto* query = app.add_subcommand("query", "Run kNN or radius queries");
  query->add_option("--snapshot", qa.snapshot)->required();
  query->add_option("--workload", qa.workload)->check(CLI::IsMember({"knn", "radius"}));
  query->add_option("--strategy", qa.strategy)
      ->check(CLI::IsMember({"rdfs", "rbfs", "bdfs", "bbfs", "all", "auto"}));
  query->add_option("--queries", qa.queries, "Query points file; default samples from the data");
  query->add_option("--n-queries", qa.n_queries);
  query->add_option("--k", qa.k);
  query->add_option("--radius", qa.radius);
  query->add_option("--model", qa.model, "Selector model for --strategy auto");
  query->add_option("--seed", qa.seed);

  GtArgs gt;
  auto* gen_gt = app.add_subcommand("gen-gt", "Time all strategies on sampled queries and label the fastest");
  gen_gt->add_option("--snapshot", gt.snapshot)->required();
  gen_gt->add_option("--out", gt.out, "Sample CSV to write")->required();
  gen_gt->add_option("--workload", gt.workload)->check(CLI::IsMember({"knn", "radius"}));
  gen_gt->add_option("--samples", gt.samples);
  gen_gt->add_option("--k-min", gt.k_min);
  gen_gt->add_option("--k-max", gt.k_max);
  gen_gt->add_flag("--literal-radius", gt.literal_radius, "Use the squared-extent radius formula");
  gen_gt->add_option("--seed", gt.seed);

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train the strategy selector");
  train->add_option("--snapshot", tr.snapshot, "Tree whose leaves define the path features")->required();
  train->add_option("--input", tr.input, "Sample CSV from gen-gt")->required();
  train->add_option("--out", tr.out, "Model file to write")->required();
  train->add_option("--workload", tr.workload)->check(CLI::IsMember({"knn", "radius"}));
  train->add_option("--trees", tr.forest.n_trees);
  train->add_option("--max-depth", tr.forest.max_depth);
  train->add_option("--min-leaf", tr.forest.min_leaf);
  train->add_option("--seed", tr.forest.seed, "Forest and split seed");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Report MRR and top-1 accuracy on the held-out split");
  eval->add_option("--model", ev.model)->required();
  eval->add_option("--input", ev.input, "Sample CSV from gen-gt")->required();
  eval->add_flag("--all", ev.all, "Evaluate every sample instead of the test split");

  GenArgs ga;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset");
  gen->add_option("--dist", ga.dist)->check(CLI::IsMember({"uniform", "gaussian", "clustered"}));
  gen->add_option("--n", ga.n);
  gen->add_option("--d", ga.d);
  gen->add_option("--seed", ga.seed);
  gen->add_option("--out", ga.out)->required();
  gen->add_option("--format", ga.format)->check(CLI::IsMember({"csv", "bin"}));

  AuditArgs au;
  auto* aud = app.add_subcommand("audit", "Check tree invariants and optionally cross-check queries");
  aud->add_option("--snapshot", au.snapshot)->required();
  aud->add_option("--queries", au.queries, "Random queries to compare against a linear scan");
  aud->add_option("--seed", au.seed);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    err << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (build->parsed() || base->parsed()) {
      BuildArgs& ba = build->parsed() ? build_args : base_args;
      apply_config_file(ba.tree);
      return cmd_build(ba, base->parsed(), out, err);
    }
    if (insert->parsed()) return cmd_insert(ins, out, err);
    if (query->parsed()) return cmd_query(qa, out, err);
    if (gen_gt->parsed()) return cmd_gen_gt(gt, out, err);
    if (train->parsed()) return cmd_train(tr, out, err);
    if (eval->parsed()) return cmd_eval(ev, out, err);
    if (gen->parsed()) return cmd_gen_data(ga, out, err);
    if (aud->parsed()) return cmd_audit(au, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const AuditError& e) {
    err << "audit failure: " << e.what() << '\n';
    return kAudit;
  }
  return kUsage;
}

}  // namespace unis::cli
