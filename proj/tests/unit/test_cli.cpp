#include <doctest.h>
#include <json.hpp>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "unis/cli.hpp"
#include "unis/dataset.hpp"

using namespace unis;
using json = nlohmann::json;

namespace {

struct Outcome {
  int code;
  std::vector<json> records;
  std::string err;
};

Outcome run_cli(const std::vector<std::string>& args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run(args, out, err);
  Outcome o{code, {}, err.str()};
  std::istringstream lines(out.str());
  std::string line;
  while (std::getline(lines, line)) o.records.push_back(json::parse(line));
  return o;
}

const json* find_metric(const Outcome& o, const std::string& metric) {
  for (const auto& r : o.records) {
    if (r.at("metric") == metric) return &r;
  }
  return nullptr;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

json strip_timing(json r) {
  r.erase("wall_time_s");
  const std::string unit = r.value("unit", "");
  if (unit == "s") r.erase("value");
  for (const char* k : {"predict_time_s", "search_time_s"}) r.erase(k);
  return r;
}

}  // namespace

TEST_CASE("cli: help, missing subcommand and bad flags") {
  CHECK(run_cli({"--help"}).code == cli::kOk);
  CHECK(run_cli({}).code == cli::kUsage);
  CHECK(run_cli({"build"}).code == cli::kUsage);
  CHECK(run_cli({"build", "--input", "x.csv", "--bogus"}).code == cli::kUsage);
  CHECK(run_cli({"build", "--input", "x.csv", "--t", "3", "--t-auto"}).code == cli::kUsage);
  CHECK(run_cli({"frobnicate"}).code == cli::kUsage);
}

TEST_CASE("cli: data errors map to exit code 3") {
  test::TempDir dir("cli_data");
  write_text(dir.file("bad.csv"), "1,2\n3,oops\n");
  const Outcome o = run_cli({"build", "--input", dir.file("bad.csv"), "--out", dir.file("s.unis")});
  CHECK(o.code == cli::kData);
  CHECK(o.err.find(":2") != std::string::npos);
  CHECK(run_cli({"build", "--input", dir.file("missing.csv")}).code == cli::kData);
  write_text(dir.file("junk.unis"), "garbage");
  CHECK(run_cli({"audit", "--snapshot", dir.file("junk.unis")}).code == cli::kData);
}

TEST_CASE("cli: two points give a single leaf") {
  test::TempDir dir("cli_tiny");
  write_text(dir.file("two.csv"), "0,0\n1,1\n");
  const Outcome o = run_cli({"build", "--input", dir.file("two.csv"), "--out", dir.file("s.unis")});
  REQUIRE(o.code == cli::kOk);
  const json* aepl = find_metric(o, "aepl");
  REQUIRE(aepl != nullptr);
  CHECK(aepl->at("value") == 0.0);
  CHECK(find_metric(o, "leaves")->at("value") == 1);
}

TEST_CASE("cli: records are complete and builds are reproducible") {
  test::TempDir dir("cli_build");
  const std::string data = dir.file("d.bin");
  REQUIRE(run_cli({"gen-data", "--dist", "clustered", "--n", "5000", "--d", "3", "--seed", "4", "--out", data}).code ==
          0);
  const Outcome a = run_cli({"build", "--input", data, "--out", dir.file("a.unis"), "--seed", "9"});
  const Outcome b = run_cli({"build", "--input", data, "--out", dir.file("b.unis"), "--seed", "9"});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(slurp(dir.file("a.unis")) == slurp(dir.file("b.unis")));
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    for (const char* key : {"command", "dataset", "n", "d", "cfg", "metric", "value", "unit", "wall_time_s", "seed"}) {
      CHECK(a.records[i].contains(key));
    }
    CHECK(strip_timing(a.records[i]) == strip_timing(b.records[i]));
  }
  const json* bt = find_metric(a, "build_time");
  REQUIRE(bt != nullptr);
  CHECK(bt->contains("repetitions"));
  CHECK(bt->at("aggregation") == "median");

  const Outcome base = run_cli({"baseline-build", "--input", data, "--out", dir.file("base.unis")});
  REQUIRE(base.code == 0);
  CHECK(base.records.front().at("cfg").at("pivot_method") == "exact_sort");
}

TEST_CASE("cli: flags override the config file, which overrides defaults") {
  test::TempDir dir("cli_cfg");
  const std::string data = dir.file("d.csv");
  REQUIRE(run_cli({"gen-data", "--n", "500", "--d", "2", "--out", data}).code == 0);
  write_text(dir.file("run.cfg"), "# tree settings\nc = 7\nomega=0.8\nt-auto = true\n");
  const Outcome from_file = run_cli({"build", "--input", data, "--config", dir.file("run.cfg")});
  REQUIRE(from_file.code == 0);
  const json cfg = from_file.records.front().at("cfg");
  CHECK(cfg.at("c") == 7);
  CHECK(cfg.at("omega") == 0.8);
  CHECK(cfg.at("t_auto") == true);
  CHECK(cfg.at("kappa") == 0.15);

  const Outcome flag = run_cli({"build", "--input", data, "--config", dir.file("run.cfg"), "--c", "11"});
  REQUIRE(flag.code == 0);
  CHECK(flag.records.front().at("cfg").at("c") == 11);
  CHECK(flag.records.front().at("cfg").at("omega") == 0.8);

  write_text(dir.file("bad.cfg"), "colour = blue\n");
  CHECK(run_cli({"build", "--input", data, "--config", dir.file("bad.cfg")}).code == cli::kUsage);
  write_text(dir.file("bad2.cfg"), "omega = 3\n");
  CHECK(run_cli({"build", "--input", data, "--config", dir.file("bad2.cfg")}).code == cli::kUsage);
}

TEST_CASE("cli: insert, query and audit") {
  test::TempDir dir("cli_flow");
  const std::string data = dir.file("d.csv");
  const std::string more = dir.file("more.csv");
  const std::string snap = dir.file("s.unis");
  REQUIRE(run_cli({"gen-data", "--n", "3000", "--d", "2", "--seed", "1", "--out", data}).code == 0);
  REQUIRE(run_cli({"gen-data", "--n", "2000", "--d", "2", "--seed", "2", "--dist", "gaussian", "--out", more}).code ==
          0);
  REQUIRE(run_cli({"build", "--input", data, "--out", snap, "--c", "10", "--t", "3"}).code == 0);

  const Outcome ins = run_cli({"insert", "--snapshot", snap, "--input", more, "--batch-size", "500"});
  REQUIRE(ins.code == 0);
  std::size_t batches = 0;
  for (const auto& r : ins.records) {
    if (r.at("metric") == "insert_latency") {
      ++batches;
      CHECK(r.at("audit_ok") == true);
      CHECK(r.at("selective_points").get<std::size_t>() <= r.at("scapegoat_points").get<std::size_t>());
    }
  }
  CHECK(batches == 4);
  CHECK(find_metric(ins, "dominance_violations")->at("value") == 0);

  // An empty batch leaves the snapshot untouched.
  write_bin(dir.file("empty.bin"), PointSet(2));
  const std::string before = slurp(snap);
  const Outcome none = run_cli({"insert", "--snapshot", snap, "--input", dir.file("empty.bin")});
  REQUIRE(none.code == 0);
  CHECK(find_metric(none, "rebuild_triggers")->at("value") == 0);
  CHECK(slurp(snap) == before);

  const Outcome q = run_cli({"query", "--snapshot", snap, "--n-queries", "25", "--k", "4"});
  REQUIRE(q.code == 0);
  CHECK(find_metric(q, "result_mismatches")->at("value") == 0);
  std::size_t per_query = 0;
  for (const auto& r : q.records) {
    if (r.at("metric") == "query_time") {
      ++per_query;
      CHECK(r.contains("access_count"));
      CHECK(r.contains("strategy"));
    }
  }
  CHECK(per_query == 100);

  const Outcome rq =
      run_cli({"query", "--snapshot", snap, "--workload", "radius", "--radius", "0.2", "--strategy", "bbfs"});
  CHECK(rq.code == 0);
  CHECK(run_cli({"query", "--snapshot", snap, "--strategy", "auto"}).code == cli::kUsage);
  CHECK(run_cli({"query", "--snapshot", snap, "--strategy", "fastest"}).code == cli::kUsage);

  const Outcome au = run_cli({"audit", "--snapshot", snap, "--queries", "20"});
  CHECK(au.code == 0);
  CHECK(find_metric(au, "structure_violations")->at("value") == 0);
}

TEST_CASE("cli: ground truth, training and evaluation") {
  test::TempDir dir("cli_sel");
  const std::string data = dir.file("d.csv");
  const std::string snap = dir.file("s.unis");
  const std::string gt = dir.file("gt.csv");
  const std::string model = dir.file("m.usel");
  REQUIRE(run_cli({"gen-data", "--n", "6000", "--d", "3", "--out", data}).code == 0);
  REQUIRE(run_cli({"build", "--input", data, "--out", snap, "--c", "4"}).code == 0);
  const Outcome g = run_cli({"gen-gt", "--snapshot", snap, "--out", gt, "--samples", "150", "--k-max", "2"});
  REQUIRE(g.code == 0);
  CHECK(find_metric(g, "samples")->at("value") == 150);

  const Outcome t = run_cli({"train", "--snapshot", snap, "--input", gt, "--out", model, "--seed", "5"});
  REQUIRE(t.code == 0);
  CHECK(find_metric(t, "validation_mrr") != nullptr);

  const Outcome e = run_cli({"eval", "--model", model, "--input", gt});
  REQUIRE(e.code == 0);
  CHECK(find_metric(e, "mrr")->at("samples") == 15);
  const double mrr = find_metric(e, "mrr")->at("value").get<double>();
  CHECK(mrr > 0.0);
  CHECK(mrr <= 1.0);

  const Outcome a = run_cli({"query", "--snapshot", snap, "--strategy", "auto", "--model", model, "--k", "2",
                             "--n-queries", "10"});
  REQUIRE(a.code == 0);
  for (const auto& r : a.records) {
    if (r.at("metric") == "query_time") {
      CHECK(r.contains("chosen"));
      CHECK(r.contains("predict_time_s"));
    }
  }
  CHECK(run_cli({"query", "--snapshot", snap, "--strategy", "auto", "--model", model, "--workload", "radius"}).code ==
        cli::kUsage);

  // A sample file without rows leaves nothing to evaluate.
  {
    std::ifstream in(gt);
    std::string header;
    std::getline(in, header);
    write_text(dir.file("empty.csv"), header + "\n");
  }
  CHECK(run_cli({"eval", "--model", model, "--input", dir.file("empty.csv")}).code == cli::kUsage);
}
