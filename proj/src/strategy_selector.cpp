#include "unis/strategy_selector.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>

#include "unis/errors.hpp"
#include "unis/rng.hpp"

namespace unis {

using Clock = std::chrono::steady_clock;

std::string_view workload_name(Workload w) noexcept { return w == Workload::knn ? "knn" : "radius"; }

Workload parse_workload(std::string_view name) {
  if (name == "knn") return Workload::knn;
  if (name == "radius") return Workload::radius;
  throw UsageError("unknown workload '" + std::string(name) + "'");
}

int index_metric(const LeafPathCode& a, const LeafPathCode& b) noexcept {
  std::size_t common = 0;
  while (common < a.size() && common < b.size() && a[common] == b[common]) ++common;
  const auto shared = static_cast<int>(common + 1);  // + root
  const auto longest = static_cast<int>(std::max(a.size(), b.size()) + 1);
  const int differing = longest - shared;
  return shared - differing - 1;
}

int index_metric(const BmkdTree& tree, Coords a, Coords b) { return index_metric(tree.leaf_path(a), tree.leaf_path(b)); }

std::vector<double> QueryFeatures::concat() const {
  std::vector<double> out(f1);
  out.insert(out.end(), f2.begin(), f2.end());
  return out;
}

QueryFeatures extract_features_unchecked(const BmkdTree& tree, const LeafSnapshot& snap, Coords q, double param) {
  QueryFeatures f;
  f.f1.assign(q.begin(), q.end());
  f.f1.push_back(param);
  const LeafPathCode path = tree.leaf_path(q);
  f.f2.reserve(snap.codes.size());
  for (const auto& code : snap.codes) f.f2.push_back(static_cast<double>(index_metric(path, code)));
  return f;
}

QueryFeatures extract_features(const BmkdTree& tree, const LeafSnapshot& snap, Coords q, double param) {
  if (!snap.matches(tree)) throw StaleSnapshotError("leaf snapshot is stale: the tree changed shape since training");
  return extract_features_unchecked(tree, snap, q, param);
}

// ---------------------------------------------------------------------------
// Ground truth

std::vector<QuerySpec> sample_queries(const BmkdTree& tree, const GroundTruthParams& params) {
  std::vector<QuerySpec> out;
  if (params.n_samples == 0) return out;
  if (tree.size() == 0) throw UsageError("sample_queries: tree is empty");
  if (params.k_min == 0 || params.k_min > params.k_max) throw UsageError("sample_queries: invalid k range");
  Rng rng(params.seed);
  const Mbr& box = tree.root()->mbr;
  double extent_sq = 0.0;
  for (std::size_t j = 0; j < box.dim(); ++j) extent_sq += (box.hi[j] - box.lo[j]) * (box.hi[j] - box.lo[j]);
  const double extent = params.literal_radius ? extent_sq : std::sqrt(extent_sq);

  for (std::size_t i = 0; i < params.n_samples; ++i) {
    QuerySpec q;
    const auto id = static_cast<PointId>(rng.below(tree.size()));
    const Coords p = tree.points()[id];
    q.point.assign(p.begin(), p.end());
    if (params.workload == Workload::knn) {
      q.param = static_cast<double>(rng.between(static_cast<std::int64_t>(params.k_min),
                                                static_cast<std::int64_t>(params.k_max)));
    } else {
      q.param = extent * rng.unit();
    }
    out.push_back(std::move(q));
  }
  return out;
}

namespace {

struct RunOutcome {
  double seconds;
  bool aborted;
  std::vector<Hit> hits;
};

RunOutcome run_once(const BmkdTree& tree, const QuerySpec& q, Workload w, Strategy s, std::optional<double> budget) {
  SearchOptions opts;
  const auto start = Clock::now();
  if (budget) opts.deadline = start + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(*budget));
  RunOutcome out{};
  if (w == Workload::knn) {
    auto r = knn(tree, q.point, static_cast<std::size_t>(q.param), s, opts);
    out.aborted = r.aborted;
    out.hits = std::move(r.hits);
  } else {
    auto r = radius_search(tree, q.point, q.param, s, opts);
    out.aborted = r.aborted;
    out.hits = std::move(r.hits);
  }
  out.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  if (budget && out.seconds > *budget) out.aborted = true;
  return out;
}

}  // namespace

std::array<double, 4> time_strategies(const BmkdTree& tree, const QuerySpec& q, const GroundTruthParams& params) {
  std::array<double, 4> seconds{kAborted, kAborted, kAborted, kAborted};
  const std::size_t reps = std::max<std::size_t>(1, params.repetitions);
  double best = kAborted;
  std::vector<Hit> reference;
  bool have_reference = false;

  for (Strategy s : kAllStrategies) {
    std::optional<double> budget;
    if (std::isfinite(best)) budget = params.abort_factor * best;
    bool aborted = false;
    for (std::size_t i = 0; i < params.warmups && !aborted; ++i) {
      aborted = run_once(tree, q, params.workload, s, budget).aborted;
    }
    std::vector<double> times;
    for (std::size_t i = 0; i < reps && !aborted; ++i) {
      RunOutcome run = run_once(tree, q, params.workload, s, budget);
      if (run.aborted) {
        aborted = true;
        break;
      }
      times.push_back(run.seconds);
      if (i == 0 && params.audit) {
        if (!have_reference) {
          reference = std::move(run.hits);
          have_reference = true;
        } else if (run.hits != reference) {
          throw AuditError("strategy " + std::string(strategy_name(s)) + " disagrees with an earlier strategy");
        }
      }
    }
    if (aborted) continue;
    std::nth_element(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(times.size() / 2), times.end());
    const double median = times[times.size() / 2];
    seconds[static_cast<std::size_t>(s)] = median;
    best = std::min(best, median);
  }
  return seconds;
}

Strategy fastest(const std::array<double, 4>& seconds) noexcept {
  std::size_t best = 0;
  for (std::size_t i = 1; i < seconds.size(); ++i) {
    if (seconds[i] < seconds[best]) best = i;
  }
  return static_cast<Strategy>(best);
}

std::vector<LabeledSample> generate_ground_truth(const BmkdTree& tree, const LeafSnapshot& snap,
                                                 const GroundTruthParams& params) {
  std::vector<LabeledSample> out;
  for (auto& q : sample_queries(tree, params)) {
    LabeledSample s;
    s.seconds = time_strategies(tree, q, params);
    s.label = fastest(s.seconds);
    s.features = extract_features_unchecked(tree, snap, q.point, q.param);
    s.query = std::move(q);
    out.push_back(std::move(s));
  }
  return out;
}

SampleSplit split_samples(std::vector<LabeledSample> samples, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = samples.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(samples[i - 1], samples[j]);
  }
  const std::size_t n = samples.size();
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_val = n / 10;
  SampleSplit split;
  auto it = std::make_move_iterator(samples.begin());
  split.train.assign(it, it + static_cast<std::ptrdiff_t>(n_train));
  split.validation.assign(it + static_cast<std::ptrdiff_t>(n_train),
                          it + static_cast<std::ptrdiff_t>(n_train + n_val));
  split.test.assign(it + static_cast<std::ptrdiff_t>(n_train + n_val), std::make_move_iterator(samples.end()));
  return split;
}

// ---------------------------------------------------------------------------
// Training and prediction

SelectorModel train_selector(const std::vector<LabeledSample>& samples, const LeafSnapshot& snap, Workload workload,
                             std::size_t dim, const ForestParams& params) {
  if (samples.empty()) throw UsageError("train: no samples");
  SelectorModel model;
  model.workload = workload;
  model.dim = dim;
  model.split_seed = params.seed;
  model.snapshot = snap;

  std::vector<std::vector<double>> x;
  std::vector<int> y;
  x.reserve(samples.size());
  for (const auto& s : samples) {
    x.push_back(s.features.concat());
    y.push_back(static_cast<int>(s.label));
  }
  const std::size_t expected = dim + 1 + snap.codes.size();
  if (x.front().size() != expected) {
    throw UsageError("train: samples have " + std::to_string(x.front().size()) + " features, snapshot implies " +
                     std::to_string(expected));
  }
  if (samples.size() < kMinTrainingSamples) {
    // Too few samples to trust a forest: keep only the majority label.
    std::array<int, 4> counts{};
    for (int label : y) ++counts[static_cast<std::size_t>(label)];
    const int majority = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    std::fill(y.begin(), y.end(), majority);
  }
  model.forest = RandomForest::fit(x, y, 4, params);
  model.constant_warning = model.forest.constant();
  return model;
}

std::vector<Strategy> predict_ranking(const SelectorModel& model, const QueryFeatures& f) {
  std::vector<Strategy> out;
  for (int c : model.forest.ranking(f.concat())) out.push_back(static_cast<Strategy>(c));
  return out;
}

std::vector<Strategy> predict_ranking(const SelectorModel& model, const BmkdTree& tree, Coords q, double param) {
  if (q.size() != model.dim) throw UsageError("predict: query dimension does not match the model");
  return predict_ranking(model, extract_features(tree, model.snapshot, q, param));
}

double reciprocal_rank(const std::vector<Strategy>& ranking, Strategy truth) {
  const auto it = std::find(ranking.begin(), ranking.end(), truth);
  if (it == ranking.end()) return 0.0;
  return 1.0 / static_cast<double>(it - ranking.begin() + 1);
}

EvalReport evaluate(const SelectorModel& model, const std::vector<LabeledSample>& samples) {
  if (samples.empty()) throw UsageError("eval: the test set is empty");
  EvalReport rep;
  rep.samples = samples.size();
  for (const auto& s : samples) {
    const auto ranking = predict_ranking(model, s.features);
    const Strategy truth = s.label;
    rep.mrr += reciprocal_rank(ranking, truth);
    rep.top1 += ranking.front() == truth ? 1.0 : 0.0;
    rep.selection_share[static_cast<std::size_t>(ranking.front())] += 1.0;
  }
  const double n = static_cast<double>(samples.size());
  rep.mrr /= n;
  rep.top1 /= n;
  for (double& v : rep.selection_share) v /= n;
  return rep;
}

AutoKnn knn_auto(const BmkdTree& tree, const SelectorModel& model, Coords q, std::size_t k, const SearchOptions& opts) {
  AutoKnn out;
  const auto t0 = Clock::now();
  out.chosen = predict_ranking(model, tree, q, static_cast<double>(k)).front();
  const auto t1 = Clock::now();
  out.result = knn(tree, q, k, out.chosen, opts);
  const auto t2 = Clock::now();
  out.predict_seconds = std::chrono::duration<double>(t1 - t0).count();
  out.query_seconds = std::chrono::duration<double>(t2 - t1).count();
  return out;
}

AutoRadius radius_auto(const BmkdTree& tree, const SelectorModel& model, Coords q, double r,
                       const SearchOptions& opts) {
  AutoRadius out;
  const auto t0 = Clock::now();
  out.chosen = predict_ranking(model, tree, q, r).front();
  const auto t1 = Clock::now();
  out.result = radius_search(tree, q, r, out.chosen, opts);
  const auto t2 = Clock::now();
  out.predict_seconds = std::chrono::duration<double>(t1 - t0).count();
  out.query_seconds = std::chrono::duration<double>(t2 - t1).count();
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr char kMagic[4] = {'U', 'S', 'E', 'L'};
constexpr std::uint32_t kVersion = 1;

void put(std::ostream& out, std::uint64_t v, int bytes) {
  char buf[8];
  for (int i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
  out.write(buf, bytes);
}

std::uint64_t get(std::istream& in, int bytes) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), bytes);
  if (in.gcount() != bytes) throw DataError("selector model: unexpected end of file");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void SelectorModel::save(std::ostream& out) const {
  out.write(kMagic, 4);
  put(out, kVersion, 4);
  put(out, static_cast<std::uint8_t>(workload), 1);
  put(out, dim, 4);
  put(out, split_seed, 8);
  put(out, constant_warning ? 1 : 0, 1);
  put(out, snapshot.codes.size(), 8);
  for (const auto& code : snapshot.codes) {
    put(out, code.size(), 4);
    for (std::uint32_t c : code) put(out, c, 4);
  }
  forest.save(out);
  if (!out) throw DataError("selector model: write failed");
}

SelectorModel SelectorModel::load(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || !std::equal(magic, magic + 4, kMagic)) throw DataError("selector model: bad magic");
  if (get(in, 4) != kVersion) throw DataError("selector model: unsupported version");
  SelectorModel m;
  const auto w = get(in, 1);
  if (w > 1) throw DataError("selector model: bad workload");
  m.workload = static_cast<Workload>(w);
  m.dim = get(in, 4);
  m.split_seed = get(in, 8);
  m.constant_warning = get(in, 1) != 0;
  const std::uint64_t n_codes = get(in, 8);
  if (n_codes > (std::uint64_t{1} << 32)) throw DataError("selector model: implausible leaf count");
  m.snapshot.codes.resize(n_codes);
  for (auto& code : m.snapshot.codes) {
    const std::uint64_t len = get(in, 4);
    if (len > 4096) throw DataError("selector model: implausible path length");
    code.resize(len);
    for (auto& c : code) c = static_cast<std::uint32_t>(get(in, 4));
  }
  m.snapshot.fingerprint = fingerprint_codes(m.snapshot.codes);
  m.forest = RandomForest::load(in);
  if (m.forest.n_classes() != 4 || m.forest.n_features() != m.dim + 1 + m.snapshot.codes.size()) {
    throw DataError("selector model: forest shape does not match the snapshot");
  }
  return m;
}

void SelectorModel::save_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  save(out);
}

SelectorModel SelectorModel::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return load(in);
}

namespace {

std::string fmt(double v) {
  if (std::isinf(v)) return "inf";
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double parse_double(std::string_view field, const std::string& where) {
  if (field == "inf") return kAborted;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size()) throw DataError(where + ": malformed number");
  return v;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
    if (comma == std::string_view::npos) return out;
    start = comma + 1;
  }
}

}  // namespace

void write_samples_csv(const std::string& path, const std::vector<LabeledSample>& samples, std::size_t dim) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  const std::size_t n_f2 = samples.empty() ? 0 : samples.front().features.f2.size();
  for (std::size_t j = 0; j < dim; ++j) out << 'q' << j << ',';
  out << "param";
  for (std::size_t j = 0; j < n_f2; ++j) out << ",f2_" << j;
  out << ",label,t_RDFS,t_RBFS,t_BDFS,t_BBFS\n";
  for (const auto& s : samples) {
    if (s.features.f1.size() != dim + 1 || s.features.f2.size() != n_f2) {
      throw UsageError("write_samples_csv: inconsistent feature lengths");
    }
    for (double v : s.features.f1) out << fmt(v) << ',';
    for (double v : s.features.f2) out << fmt(v) << ',';
    out << strategy_name(s.label);
    for (double t : s.seconds) out << ',' << fmt(t);
    out << '\n';
  }
  if (!out) throw DataError("write failed: " + path);
}

std::vector<LabeledSample> read_samples_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty sample file");
  const auto header = split_commas(line);
  std::size_t dim = 0;
  while (dim < header.size() && !header[dim].empty() && header[dim][0] == 'q') ++dim;
  if (dim >= header.size() || header[dim] != "param" || header.size() < dim + 6) {
    throw DataError(path + ":1: unrecognised sample header");
  }
  const std::size_t n_f2 = header.size() - dim - 1 - 5;
  std::vector<LabeledSample> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_commas(line);
    const std::string where = path + ":" + std::to_string(line_no);
    if (fields.size() != header.size()) throw DataError(where + ": wrong column count");
    LabeledSample s;
    for (std::size_t j = 0; j <= dim; ++j) s.features.f1.push_back(parse_double(fields[j], where));
    for (std::size_t j = 0; j < n_f2; ++j) s.features.f2.push_back(parse_double(fields[dim + 1 + j], where));
    s.query.point.assign(s.features.f1.begin(), s.features.f1.begin() + static_cast<std::ptrdiff_t>(dim));
    s.query.param = s.features.f1.back();
    try {
      s.label = parse_strategy(fields[dim + 1 + n_f2]);
    } catch (const UsageError&) {
      throw DataError(where + ": unknown label");
    }
    for (std::size_t j = 0; j < 4; ++j) s.seconds[j] = parse_double(fields[dim + 2 + n_f2 + j], where);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace unis
