#include "tracelens/json_codec.h"

#include <cmath>
#include <limits>

#include "tracelens/error.h"

namespace tracelens {

json number_or_null(double v) {
  return std::isfinite(v) ? json(v) : json(nullptr);
}

void to_json(json& j, const TensorStats& s) {
  j = json{{"count", s.count},
           {"mean", number_or_null(s.mean)},
           {"std", number_or_null(s.std)},
           {"abs_mean", number_or_null(s.abs_mean)},
           {"min", number_or_null(s.min)},
           {"max", number_or_null(s.max)},
           {"l2_norm", number_or_null(s.l2_norm)},
           {"frac_zero", number_or_null(s.frac_zero)},
           {"count_nan", s.count_nan},
           {"count_inf", s.count_inf}};
}

void from_json(const json& j, TensorStats& s) {
  auto real = [&](const char* key) {
    const auto& v = j.at(key);
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
  };
  s.count = j.at("count").get<std::uint64_t>();
  s.mean = real("mean");
  s.std = real("std");
  s.abs_mean = real("abs_mean");
  s.min = real("min");
  s.max = real("max");
  s.l2_norm = real("l2_norm");
  s.frac_zero = real("frac_zero");
  s.count_nan = j.at("count_nan").get<std::uint64_t>();
  s.count_inf = j.at("count_inf").get<std::uint64_t>();
}

void to_json(json& j, const NodeSpec& n) {
  j = json{{"id", n.node_id},
           {"role", std::string(role_name(n.role))},
           {"variants", n.variant_keys}};
}

void from_json(const json& j, NodeSpec& n) {
  n.node_id = j.at("id").get<std::string>();
  auto role = parse_role(j.at("role").get<std::string>());
  if (!role) {
    throw Error(ErrorCode::kCorrupt,
                "unknown role '" + j.at("role").get<std::string>() + "'");
  }
  n.role = *role;
  n.variant_keys = j.at("variants").get<std::vector<std::string>>();
}

void to_json(json& j, const DependencyGraph& g) {
  json edges = json::array();
  for (const auto& [u, v] : g.edges) edges.push_back(json::array({u, v}));
  j = json{{"format_version", kFormatVersion},
           {"nodes", g.nodes},
           {"edges", std::move(edges)},
           {"layers", g.layer}};
}

void from_json(const json& j, DependencyGraph& g) {
  g.nodes = j.at("nodes").get<std::vector<NodeSpec>>();
  g.edges.clear();
  for (const auto& e : j.at("edges")) {
    g.edges.emplace_back(e.at(0).get<std::string>(), e.at(1).get<std::string>());
  }
  g.layer = j.value("layers", std::map<std::string, std::uint32_t>{});
}

void to_json(json& j, const RunManifest& m) {
  j = json{{"format_version", m.format_version},
           {"run_id", m.run_id},
           {"trial_ids", m.trial_ids},
           {"categories", m.categories},
           {"losses", m.losses},
           {"max_samples", m.max_samples},
           {"schedule_growth", m.schedule_growth},
           {"finalized", m.finalized}};
}

void from_json(const json& j, RunManifest& m) {
  m.format_version = j.at("format_version").get<std::uint32_t>();
  m.run_id = j.at("run_id").get<std::string>();
  m.trial_ids = j.at("trial_ids").get<std::vector<std::string>>();
  m.categories = j.at("categories").get<std::vector<std::string>>();
  m.losses = j.at("losses").get<std::vector<std::string>>();
  m.max_samples = j.at("max_samples").get<std::uint32_t>();
  m.schedule_growth = j.at("schedule_growth").get<double>();
  m.finalized = j.value("finalized", false);
}

void to_json(json& j, const ModuleTreeNode& n) {
  j = json{{"name", n.name},
           {"own_params", n.own_param_count},
           {"total_params", n.total()},
           {"children", n.children}};
}

void from_json(const json& j, ModuleTreeNode& n) {
  n.name = j.at("name").get<std::string>();
  n.own_param_count = j.at("own_params").get<std::uint64_t>();
  n.children = j.value("children", std::vector<ModuleTreeNode>{});
}

void to_json(json& j, const Note& n) {
  j = json{{"step", n.step}, {"text", n.text}};
}

void from_json(const json& j, Note& n) {
  n.step = j.at("step").get<std::uint64_t>();
  n.text = j.at("text").get<std::string>();
}

void to_json(json& j, const ScalarPoint& p) {
  j = json{{"series", p.series}, {"step", p.step}, {"value", number_or_null(p.value)}};
}

void from_json(const json& j, ScalarPoint& p) {
  p.series = j.at("series").get<std::string>();
  p.step = j.at("step").get<std::uint64_t>();
  const auto& v = j.at("value");
  p.value = v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

json meta_to_json(const MetaValue& v) {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return *i;
  if (const auto* d = std::get_if<double>(&v)) return number_or_null(*d);
  return std::get<std::string>(v);
}

MetaValue meta_from_json(const json& j) {
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (j.is_number_float()) return j.get<double>();
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (j.is_string()) return j.get<std::string>();
  throw Error(ErrorCode::kCorrupt, "metadata values must be numbers or strings");
}

void to_json(json& j, const ChunkEntry& e) {
  json meta = json::object();
  for (const auto& [k, v] : e.metadata) meta[k] = meta_to_json(v);
  json records = json::array();
  for (const auto& r : e.records) {
    records.push_back(json{{"node", r.node_id},
                           {"variant", r.variant_key},
                           {"mode", r.mode.key()},
                           {"offset", r.offset},
                           {"length", r.length}});
  }
  j = json{{"trial", e.trial_id},   {"category", e.category},
           {"step", e.step},        {"file", e.file},
           {"bytes", e.bytes},      {"crc32", e.crc},
           {"metadata", std::move(meta)}, {"records", std::move(records)}};
}

void from_json(const json& j, ChunkEntry& e) {
  e.trial_id = j.at("trial").get<std::string>();
  e.category = j.at("category").get<std::string>();
  e.step = j.at("step").get<std::uint64_t>();
  e.file = j.at("file").get<std::string>();
  e.bytes = j.at("bytes").get<std::uint64_t>();
  e.crc = j.at("crc32").get<std::uint32_t>();
  e.metadata.clear();
  for (const auto& [k, v] : j.at("metadata").items()) {
    e.metadata.emplace(k, meta_from_json(v));
  }
  e.records.clear();
  for (const auto& r : j.at("records")) {
    e.records.push_back(RecordLocation{
        r.at("node").get<std::string>(), r.at("variant").get<std::string>(),
        Mode::parse(r.at("mode").get<std::string>()),
        r.at("offset").get<std::uint64_t>(), r.at("length").get<std::uint64_t>()});
  }
}

void to_json(json& j, const IndexDocument& d) {
  j = json{{"format_version", d.format_version}, {"entries", d.entries}};
}

void from_json(const json& j, IndexDocument& d) {
  d.format_version = j.at("format_version").get<std::uint32_t>();
  d.entries = j.at("entries").get<std::vector<ChunkEntry>>();
}

void to_json(json& j, const Diagnostic& d) {
  j = json{{"severity", d.severity == Diagnostic::Severity::kError ? "error" : "warning"},
           {"code", d.code},
           {"file", d.file},
           {"message", d.message}};
}

std::string canonical_dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace tracelens
