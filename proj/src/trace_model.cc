#include "tracelens/trace_model.h"

#include <algorithm>
#include <bit>
#include <charconv>
#include <set>
#include <tuple>

#include "tracelens/error.h"

namespace tracelens {
namespace {

bool same_bits(double a, double b) {
  return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

template <typename T>
bool has_duplicates(const std::vector<T>& values) {
  std::set<T> seen;
  for (const auto& v : values) {
    if (!seen.insert(v).second) return true;
  }
  return false;
}

void prefix(std::vector<std::string>& out, std::size_t from,
            const std::string& where) {
  for (std::size_t i = from; i < out.size(); ++i) out[i] = where + out[i];
}

void throw_first(const std::vector<std::string>& problems) {
  if (!problems.empty()) throw Error(ErrorCode::kInvalidArgument, problems[0]);
}

}  // namespace

std::string_view role_name(Role role) {
  switch (role) {
    case Role::kInput:
      return "input";
    case Role::kParameter:
      return "parameter";
    case Role::kCalculated:
      return "calculated";
    case Role::kOutput:
      return "output";
    case Role::kTarget:
      return "target";
    case Role::kLoss:
      return "loss";
  }
  return "calculated";
}

std::optional<Role> parse_role(std::string_view name) {
  for (Role r : {Role::kInput, Role::kParameter, Role::kCalculated,
                 Role::kOutput, Role::kTarget, Role::kLoss}) {
    if (role_name(r) == name) return r;
  }
  return std::nullopt;
}

Mode Mode::gradient(std::string loss_id) {
  if (loss_id.empty()) {
    throw Error(ErrorCode::kInvalidArgument,
                "mode: gradient mode requires a nonempty loss id");
  }
  return Mode(std::move(loss_id));
}

std::string Mode::key() const {
  return is_forward() ? std::string("forward") : "gradient:" + loss_id_;
}

Mode Mode::parse(std::string_view key) {
  if (key == "forward") return forward();
  constexpr std::string_view kPrefix = "gradient:";
  if (key.substr(0, kPrefix.size()) == kPrefix) {
    return gradient(std::string(key.substr(kPrefix.size())));
  }
  throw Error(ErrorCode::kInvalidArgument,
              "mode: unrecognized mode key '" + std::string(key) + "'");
}

bool operator==(const TensorStats& a, const TensorStats& b) {
  return a.count == b.count && same_bits(a.mean, b.mean) &&
         same_bits(a.std, b.std) && same_bits(a.abs_mean, b.abs_mean) &&
         same_bits(a.min, b.min) && same_bits(a.max, b.max) &&
         same_bits(a.l2_norm, b.l2_norm) &&
         same_bits(a.frac_zero, b.frac_zero) && a.count_nan == b.count_nan &&
         a.count_inf == b.count_inf;
}

std::optional<std::size_t> TensorRecord::find_sample(
    std::uint32_t batch_index) const {
  auto it = std::lower_bound(sample_indices.begin(), sample_indices.end(),
                             batch_index);
  if (it == sample_indices.end() || *it != batch_index) return std::nullopt;
  return static_cast<std::size_t>(it - sample_indices.begin());
}

bool operator==(const TensorRecord& a, const TensorRecord& b) {
  if (std::tie(a.node_id, a.variant_key, a.mode, a.batch, a.features,
               a.aggregate, a.per_neuron, a.sample_indices) !=
      std::tie(b.node_id, b.variant_key, b.mode, b.batch, b.features,
               b.aggregate, b.per_neuron, b.sample_indices)) {
    return false;
  }
  return std::equal(a.samples.begin(), a.samples.end(), b.samples.begin(),
                    b.samples.end(), [](float x, float y) {
                      return std::bit_cast<std::uint32_t>(x) ==
                             std::bit_cast<std::uint32_t>(y);
                    });
}

const NodeSpec* DependencyGraph::find(std::string_view node_id) const {
  for (const auto& n : nodes) {
    if (n.node_id == node_id) return &n;
  }
  return nullptr;
}

std::string meta_value_text(const MetaValue& value) {
  if (const auto* i = std::get_if<std::int64_t>(&value)) {
    return std::to_string(*i);
  }
  if (const auto* d = std::get_if<double>(&value)) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), *d);
    return std::string(buf, res.ptr);
  }
  return std::get<std::string>(value);
}

std::uint64_t ModuleTreeNode::total() const {
  std::uint64_t sum = own_param_count;
  for (const auto& c : children) sum += c.total();
  return sum;
}

std::vector<std::string> violations(const TensorStats& s) {
  std::vector<std::string> out;
  if (!(s.std >= 0.0)) out.push_back("stats: std must be >= 0");
  if (s.count_nan > s.count || s.count_inf > s.count ||
      s.count_nan + s.count_inf > s.count) {
    out.push_back("stats: count_nan + count_inf must not exceed count");
  }
  if (!(s.frac_zero >= 0.0 && s.frac_zero <= 1.0)) {
    out.push_back("stats: frac_zero must lie in [0, 1]");
  }
  if (!(s.abs_mean >= 0.0)) out.push_back("stats: abs_mean must be >= 0");
  if (!(s.l2_norm >= 0.0)) out.push_back("stats: l2_norm must be >= 0");
  if (s.count > 0 && s.count_nan == 0 && s.count_inf == 0 &&
      !(s.min <= s.mean && s.mean <= s.max)) {
    out.push_back("stats: min <= mean <= max must hold for all-finite data");
  }
  return out;
}

std::vector<std::string> violations(const TensorRecord& r,
                                    std::uint32_t max_samples) {
  std::vector<std::string> out;
  if (r.node_id.empty()) out.push_back("record: node_id must be nonempty");
  if (r.variant_key.empty()) {
    out.push_back("record: variant_key must be nonempty");
  }
  if (r.batch == 0 || r.features == 0) {
    out.push_back("record: batch and features must be >= 1");
  }
  if (r.aggregate.count !=
      static_cast<std::uint64_t>(r.batch) * static_cast<std::uint64_t>(r.features)) {
    out.push_back("record: aggregate.count must equal batch * features");
  }
  std::size_t from = out.size();
  for (auto& v : violations(r.aggregate)) out.push_back(std::move(v));
  prefix(out, from, "aggregate ");
  if (r.per_neuron.size() != r.features) {
    out.push_back("record: per_neuron length must equal features");
  }
  for (std::size_t j = 0; j < r.per_neuron.size(); ++j) {
    const auto& n = r.per_neuron[j];
    if (n.count != r.batch) {
      out.push_back("record: per_neuron[" + std::to_string(j) +
                    "].count must equal batch");
    }
    from = out.size();
    for (auto& v : violations(n)) out.push_back(std::move(v));
    prefix(out, from, "per_neuron[" + std::to_string(j) + "] ");
  }
  const std::size_t rows = r.sample_indices.size();
  if (rows > std::min<std::size_t>(r.batch, max_samples)) {
    out.push_back("record: retained samples must not exceed min(batch, " +
                  std::to_string(max_samples) + ")");
  }
  for (std::size_t i = 0; i < rows; ++i) {
    if (r.sample_indices[i] >= r.batch) {
      out.push_back("record: sample_indices must lie in [0, batch)");
      break;
    }
    if (i > 0 && r.sample_indices[i] <= r.sample_indices[i - 1]) {
      out.push_back("record: sample_indices must be strictly increasing");
      break;
    }
  }
  if (r.samples.size() != rows * static_cast<std::size_t>(r.features)) {
    out.push_back("record: samples must hold one row of features per index");
  }
  if (!out.empty()) {
    prefix(out, 0,
           "[" + r.node_id + "/" + r.variant_key + "/" + r.mode.key() + "] ");
  }
  return out;
}

std::vector<std::string> violations(const NodeSpec& node) {
  std::vector<std::string> out;
  if (node.node_id.empty()) out.push_back("node: node_id must be nonempty");
  if (node.variant_keys.empty()) {
    out.push_back("node '" + node.node_id +
                  "': variant_keys must be nonempty");
  }
  if (has_duplicates(node.variant_keys)) {
    out.push_back("node '" + node.node_id +
                  "': variant_keys must be unique");
  }
  for (const auto& v : node.variant_keys) {
    if (v.empty()) {
      out.push_back("node '" + node.node_id + "': variant keys must be nonempty");
      break;
    }
  }
  return out;
}

std::vector<std::string> violations(const DependencyGraph& g) {
  std::vector<std::string> out;
  std::map<std::string, std::size_t> index;
  for (const auto& n : g.nodes) {
    for (auto& v : violations(n)) out.push_back(std::move(v));
    if (!index.emplace(n.node_id, index.size()).second) {
      out.push_back("graph: node_id '" + n.node_id + "' declared twice");
    }
  }
  std::vector<std::vector<std::size_t>> succ(index.size());
  std::vector<std::size_t> indegree(index.size(), 0);
  bool edges_ok = true;
  for (const auto& [u, v] : g.edges) {
    auto iu = index.find(u);
    auto iv = index.find(v);
    if (iu == index.end() || iv == index.end()) {
      out.push_back("graph: edge (" + u + ", " + v +
                    ") references an undeclared node");
      edges_ok = false;
      continue;
    }
    if (u == v) {
      out.push_back("graph: self-edge on '" + u + "'");
      edges_ok = false;
      continue;
    }
    succ[iu->second].push_back(iv->second);
    ++indegree[iv->second];
  }
  if (edges_ok) {
    std::vector<std::size_t> ready;
    auto remaining = indegree;
    for (std::size_t i = 0; i < remaining.size(); ++i) {
      if (remaining[i] == 0) ready.push_back(i);
    }
    std::size_t visited = 0;
    while (!ready.empty()) {
      std::size_t u = ready.back();
      ready.pop_back();
      ++visited;
      for (std::size_t v : succ[u]) {
        if (--remaining[v] == 0) ready.push_back(v);
      }
    }
    if (visited != remaining.size()) out.push_back("graph: must be acyclic");
  }
  if (!g.layer.empty()) {
    for (const auto& [id, i] : index) {
      auto it = g.layer.find(id);
      if (it == g.layer.end()) {
        out.push_back("graph: node '" + id + "' has no layer");
      } else if (indegree[i] == 0 && it->second != 0) {
        out.push_back("graph: source node '" + id + "' must have layer 0");
      }
    }
    for (const auto& [u, v] : g.edges) {
      auto lu = g.layer.find(u);
      auto lv = g.layer.find(v);
      if (lu != g.layer.end() && lv != g.layer.end() &&
          lv->second < lu->second + 1) {
        out.push_back("graph: edge (" + u + ", " + v +
                      ") violates layer(dst) >= layer(src) + 1");
      }
    }
  }
  return out;
}

std::vector<std::string> violations(const StepRecord& s,
                                    std::uint32_t max_samples) {
  std::vector<std::string> out;
  if (s.trial_id.empty()) out.push_back("step: trial_id must be nonempty");
  if (s.category.empty()) out.push_back("step: category must be nonempty");
  std::set<std::tuple<std::string, std::string, std::string>> seen;
  for (const auto& r : s.records) {
    for (auto& v : violations(r, max_samples)) out.push_back(std::move(v));
    if (!seen.emplace(r.node_id, r.variant_key, r.mode.key()).second) {
      out.push_back("step: (node, variant, mode) (" + r.node_id + ", " +
                    r.variant_key + ", " + r.mode.key() +
                    ") must be unique within a step");
    }
  }
  return out;
}

std::vector<std::string> violations(const RunManifest& m) {
  std::vector<std::string> out;
  if (m.run_id.empty()) out.push_back("manifest: run_id must be nonempty");
  if (m.max_samples < 1 || m.max_samples > 255) {
    out.push_back("manifest: max_samples must lie in [1, 255]");
  }
  if (!(m.schedule_growth > 1.0)) {
    out.push_back("manifest: schedule_growth must be > 1");
  }
  if (has_duplicates(m.trial_ids) || has_duplicates(m.categories) ||
      has_duplicates(m.losses)) {
    out.push_back("manifest: trial, category and loss lists must be unique");
  }
  return out;
}

void require_valid(const TensorStats& stats) { throw_first(violations(stats)); }
void require_valid(const TensorRecord& record, std::uint32_t max_samples) {
  throw_first(violations(record, max_samples));
}
void require_valid(const NodeSpec& node) { throw_first(violations(node)); }
void require_valid(const DependencyGraph& graph) {
  throw_first(violations(graph));
}
void require_valid(const StepRecord& step, std::uint32_t max_samples) {
  throw_first(violations(step, max_samples));
}
void require_valid(const RunManifest& manifest) {
  throw_first(violations(manifest));
}

}  // namespace tracelens
