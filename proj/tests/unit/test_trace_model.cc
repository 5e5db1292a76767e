#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "tracelens/error.h"
#include "tracelens/stats.h"
#include "tracelens/trace_model.h"

using namespace tracelens;

namespace {

bool mentions(const std::vector<std::string>& v, const std::string& needle) {
  return std::any_of(v.begin(), v.end(),
                     [&](const std::string& s) { return s.find(needle) != std::string::npos; });
}

TensorRecord valid_record() {
  std::vector<double> v{1, 2, 3, 4, 5, 6};
  return capture("h", "default", Mode::forward(), v, {3, 2}, 2);
}

template <typename T, typename... Args>
void expect_rejected(const T& value, const std::string& rule, Args... args) {
  try {
    require_valid(value, args...);
    FAIL("expected InvalidArgument for " << rule);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidArgument);
    CHECK(std::string(e.what()).find(rule) != std::string::npos);
  }
}

}  // namespace

TEST_CASE("mode keys") {
  CHECK(Mode::forward().key() == "forward");
  CHECK(Mode::gradient("aux").key() == "gradient:aux");
  CHECK(Mode::parse("gradient:aux") == Mode::gradient("aux"));
  CHECK(Mode::parse("forward").is_forward());
  CHECK(Mode::gradient("main").loss_id() == "main");
  CHECK_THROWS_AS(Mode::gradient(""), Error);
  CHECK_THROWS_AS(Mode::parse("sideways"), Error);
}

TEST_CASE("roles") {
  for (Role r : {Role::kInput, Role::kParameter, Role::kCalculated, Role::kOutput,
                 Role::kTarget, Role::kLoss}) {
    CHECK(parse_role(role_name(r)) == r);
  }
  CHECK_FALSE(parse_role("bogus").has_value());
}

TEST_CASE("stats invariants") {
  TensorStats s = summarize(std::vector<double>{1, 2, 3});
  CHECK(violations(s).empty());
  SUBCASE("negative std") {
    s.std = -1;
    expect_rejected(s, "std must be >= 0");
  }
  SUBCASE("non-finite counters exceed count") {
    s.count_nan = 2;
    s.count_inf = 2;
    expect_rejected(s, "count_nan + count_inf");
  }
  SUBCASE("mean outside [min, max]") {
    s.mean = 10;
    expect_rejected(s, "min <= mean <= max");
  }
  SUBCASE("mean outside [min, max] is allowed once non-finite values exist") {
    s.mean = 10;
    s.count_nan = 1;
    CHECK_FALSE(mentions(violations(s), "min <= mean"));
  }
  SUBCASE("frac_zero") {
    s.frac_zero = 1.5;
    expect_rejected(s, "frac_zero");
  }
}

TEST_CASE("record invariants") {
  TensorRecord r = valid_record();
  CHECK(violations(r, 8).empty());
  SUBCASE("per-neuron length") {
    r.per_neuron.pop_back();
    expect_rejected(r, "per_neuron length", 8u);
  }
  SUBCASE("per-neuron count equals batch") {
    r.per_neuron[0].count = 7;
    CHECK(mentions(violations(r, 8), "per_neuron[0]"));
  }
  SUBCASE("more samples than S") {
    expect_rejected(r, "retained samples must not exceed", 1u);
  }
  SUBCASE("sample indices strictly increasing") {
    r.sample_indices = {1, 1};
    expect_rejected(r, "strictly increasing", 8u);
  }
  SUBCASE("sample index outside the batch") {
    r.sample_indices = {0, 3};
    expect_rejected(r, "[0, batch)", 8u);
  }
  SUBCASE("sample payload size") {
    r.samples.pop_back();
    expect_rejected(r, "one row of features per index", 8u);
  }
  SUBCASE("aggregate count") {
    r.aggregate.count = 5;
    expect_rejected(r, "aggregate.count", 8u);
  }
}

TEST_CASE("find_sample") {
  const TensorRecord r = valid_record();
  CHECK(r.find_sample(1) == std::optional<std::size_t>(1));
  CHECK_FALSE(r.find_sample(2).has_value());
  CHECK(r.sample_row(1)[0] == 3.0f);
}

TEST_CASE("node spec invariants") {
  CHECK(violations(NodeSpec{"a", Role::kInput, {"default"}}).empty());
  expect_rejected(NodeSpec{"a", Role::kInput, {}}, "variant");
  expect_rejected(NodeSpec{"a", Role::kInput, {"x", "x"}}, "unique");
  expect_rejected(NodeSpec{"", Role::kInput, {"x"}}, "node_id must be nonempty");
}

TEST_CASE("dependency graph invariants") {
  DependencyGraph g;
  g.nodes = {{"a", Role::kInput, {"default"}}, {"b", Role::kLoss, {"default"}}};
  g.edges = {{"a", "b"}};
  g.layer = {{"a", 0}, {"b", 1}};
  CHECK(violations(g).empty());
  SUBCASE("undeclared edge endpoint") {
    g.edges.push_back({"a", "zz"});
    expect_rejected(g, "edge (a, zz)");
  }
  SUBCASE("cycle") {
    g.edges.push_back({"b", "a"});
    CHECK(mentions(violations(g), "acyclic"));
  }
  SUBCASE("layer ordering") {
    g.layer["b"] = 0;
    CHECK(mentions(violations(g), "edge (a, b)"));
  }
  SUBCASE("sources at layer 0") {
    g.layer["a"] = 1;
    g.layer["b"] = 2;
    expect_rejected(g, "source node 'a' must have layer 0");
  }
  SUBCASE("duplicate node") {
    g.nodes.push_back({"a", Role::kInput, {"default"}});
    expect_rejected(g, "declared twice");
  }
}

TEST_CASE("step invariants") {
  StepRecord s;
  s.trial_id = "t";
  s.category = "default";
  s.records = {valid_record()};
  CHECK(violations(s, 8).empty());
  s.records.push_back(valid_record());
  expect_rejected(s, "(node, variant, mode)", 8u);
  s.records.back().mode = Mode::gradient("main");
  CHECK(violations(s, 8).empty());
}

TEST_CASE("manifest invariants") {
  RunManifest m;
  m.run_id = "r";
  CHECK(violations(m).empty());
  SUBCASE("growth") {
    m.schedule_growth = 1.0;
    expect_rejected(m, "schedule_growth");
  }
  SUBCASE("samples") {
    m.max_samples = 0;
    expect_rejected(m, "max_samples");
  }
  SUBCASE("duplicate loss") {
    m.losses = {"main", "main"};
    expect_rejected(m, "unique");
  }
}

TEST_CASE("metadata text") {
  CHECK(meta_value_text(MetaValue{std::int64_t{7}}) == "7");
  CHECK(meta_value_text(MetaValue{std::string("x y")}) == "x y");
  CHECK(meta_value_text(MetaValue{0.5}) == "0.5");
  CHECK(meta_value_text(MetaValue{0.1}) == "0.1");
}

TEST_CASE("module tree totals") {
  ModuleTreeNode layer{"layer", 0, {{"weight", 4 * 3, {}}, {"bias", 3, {}}}};
  CHECK(layer.total() == 15);
  ModuleTreeNode root{"model", 1, {layer, layer}};
  CHECK(root.total() == 31);
}
