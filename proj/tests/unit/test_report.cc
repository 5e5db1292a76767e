#include <doctest.h>

#include <sstream>

#include "test_support.h"
#include "tracelens/error.h"
#include "tracelens/json_codec.h"
#include "tracelens/query.h"
#include "tracelens/report.h"
#include "tracelens/stats.h"

using namespace tracelens;
using tracelens::testing::TempDir;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (c == '"') {
      if (quoted && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else {
        quoted = !quoted;
      }
    } else if (c == sep && !quoted) {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("export rows follow the record layout") {
  TempDir tmp;
  testing::write_outlier_fixture(tmp.path());
  QueryService q(tmp.path());
  auto run = q.run("outlier");

  auto rows = export_rows(*run, "trial_0", 0, "late");
  // forward: aggregate, 4 neurons, 2 samples; then the gradient record.
  REQUIRE(rows.size() == 14);
  CHECK(rows[0].mode == "forward");
  CHECK(rows[0].view == "aggregate");
  CHECK(rows[1].view == "neuron[0]");
  CHECK(rows[5].view == "sample[5]");
  CHECK(rows[6].view == "sample[9]");
  CHECK(rows[7].mode == "gradient:main");

  SelectorTuple s;
  s.trial_id = "trial_0";
  s.node_id = "late";
  s.variant_key = "default";
  auto agg = q.get_record("outlier", s);
  CHECK(*rows[0].stats == agg.aggregate);
  s.view = View::per_neuron();
  CHECK(*rows[3].stats == q.get_record("outlier", s).per_neuron[2]);
  s.view = View::sample(9);
  CHECK(rows[6].values == q.get_record("outlier", s).sample->values);
  CHECK_FALSE(rows[6].stats.has_value());

  auto code = [&](auto f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kIo;
  };
  CHECK(code([&] { export_rows(*run, "trial_0", 0, "zz"); }) == ErrorCode::kNotFound);
  CHECK(code([&] { export_rows(*run, "trial_0", 4, "late"); }) == ErrorCode::kNotFound);
  CHECK(code([&] { export_rows(*run, "x", 0, "late"); }) == ErrorCode::kNotFound);
}

TEST_CASE("csv export reads back to the same numbers") {
  TempDir tmp;
  testing::write_outlier_fixture(tmp.path());
  QueryService q(tmp.path());
  auto rows = export_rows(*q.run("outlier"), "trial_0", 0, "early");
  std::ostringstream out;
  write_csv(out, rows);
  auto ls = lines(out.str());
  REQUIRE(ls.size() == rows.size() + 1);
  auto header = split(ls[0], ',');
  CHECK(header == std::vector<std::string>(std::begin(kExportColumns), std::end(kExportColumns)));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto f = split(ls[i + 1], ',');
    REQUIRE(f.size() == header.size());
    CHECK(f[2] == rows[i].view);
    if (rows[i].stats) {
      CHECK(std::stoull(f[3]) == rows[i].stats->count);
      CHECK(std::stod(f[4]) == rows[i].stats->mean);
      CHECK(std::stod(f[5]) == rows[i].stats->std);
      CHECK(std::stod(f[9]) == rows[i].stats->l2_norm);
      CHECK(f[13].empty());
    } else {
      CHECK(f[3].empty());
      auto vals = split(f[13], ';');
      REQUIRE(vals.size() == rows[i].values.size());
      for (std::size_t j = 0; j < vals.size(); ++j) {
        CHECK(std::stof(vals[j]) == rows[i].values[j]);
      }
    }
  }
}

TEST_CASE("csv quotes awkward variant names") {
  TempDir tmp;
  RunOptions o;
  o.run_id = "q";
  auto w = RunWriter::create(tmp / "q", o);
  DependencyGraph g;
  g.nodes = {{"x", Role::kInput, {"a,\"b\""}}};
  g.layer = {{"x", 0}};
  w.write_graph(g);
  StepRecord s;
  s.trial_id = "t";
  s.category = "default";
  s.records.push_back(capture("x", "a,\"b\"", Mode::forward(), std::vector<double>{1, 2}, {2, 1}, 0));
  w.write_step(s);
  w.finalize();
  QueryService q(tmp.path());
  std::ostringstream out;
  write_csv(out, export_rows(*q.run("q"), "t", 0, "x"));
  auto ls = lines(out.str());
  REQUIRE(ls.size() == 3);
  CHECK(ls[1].rfind("\"a,\"\"b\"\"\",forward,aggregate,", 0) == 0);
  CHECK(split(ls[1], ',')[0] == "a,\"b\"");
}

TEST_CASE("jsonl export carries the same columns") {
  TempDir tmp;
  testing::write_outlier_fixture(tmp.path());
  QueryService q(tmp.path());
  auto rows = export_rows(*q.run("outlier"), "trial_0", 0, "mid");
  std::ostringstream out;
  write_jsonl(out, rows);
  auto ls = lines(out.str());
  REQUIRE(ls.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    json j = json::parse(ls[i]);
    CHECK(j.size() == std::size(kExportColumns));
    for (const char* c : kExportColumns) CHECK(j.contains(c));
    CHECK(j["view"] == rows[i].view);
    if (rows[i].stats) {
      CHECK(j["mean"].get<double>() == rows[i].stats->mean);
      CHECK(j["values"].empty());
    } else {
      CHECK(j["mean"].is_null());
      CHECK(j["values"].size() == rows[i].values.size());
      CHECK(j["values"][0].get<float>() == rows[i].values[0]);
    }
  }
}

TEST_CASE("run statistics") {
  TempDir tmp;
  const auto dir = testing::write_metadata_fixture(tmp.path());
  auto reader = RunReader::open(dir);
  auto s = run_stats(*reader);
  CHECK(s.recorded_steps == 12);
  CHECK(s.records == 12);
  CHECK(s.steps_per_category.at("rare") == 4);
  CHECK(s.steps_per_category.at("default") == 8);
  CHECK(s.nodes == 1);
  CHECK(s.edges == 0);
  std::uint64_t bytes = 0;
  for (const auto& f : fs::recursive_directory_iterator(dir)) {
    if (f.is_regular_file()) bytes += f.file_size();
  }
  CHECK(s.storage_bytes == bytes);
  std::ostringstream out;
  write_run_stats(out, s);
  CHECK(out.str().find("recorded steps 12") != std::string::npos);
  CHECK(out.str().find("  rare: 4") != std::string::npos);
}
