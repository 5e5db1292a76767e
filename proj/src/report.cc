#include "tracelens/report.h"

#include <algorithm>
#include <charconv>

#include "tracelens/error.h"
#include "tracelens/json_codec.h"

namespace tracelens {
namespace {

std::string number(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::vector<ExportRow> export_rows(const LoadedRun& run, const std::string& trial,
                                   std::uint64_t step, const std::string& node) {
  if (!run.has_trial(trial)) {
    throw Error(ErrorCode::kNotFound, "unknown trial '" + trial + "'");
  }
  const NodeSpec* spec = run.graph().find(node);
  if (spec == nullptr) throw Error(ErrorCode::kNotFound, "unknown node '" + node + "'");
  const ChunkEntry* chunk = run.chunk(trial, step);
  if (chunk == nullptr) {
    throw Error(ErrorCode::kNotFound, "step " + std::to_string(step) + " is not recorded");
  }
  std::vector<const RecordLocation*> locs;
  for (const auto& loc : chunk->records) {
    if (loc.node_id == node) locs.push_back(&loc);
  }
  auto variant_pos = [&](const std::string& v) {
    return std::find(spec->variant_keys.begin(), spec->variant_keys.end(), v) -
           spec->variant_keys.begin();
  };
  std::sort(locs.begin(), locs.end(), [&](const RecordLocation* a, const RecordLocation* b) {
    const auto pa = variant_pos(a->variant_key), pb = variant_pos(b->variant_key);
    if (pa != pb) return pa < pb;
    return a->mode < b->mode;  // forward (empty loss id) sorts first
  });

  std::vector<ExportRow> rows;
  for (const RecordLocation* loc : locs) {
    TensorRecord rec = run.reader().read_record(*chunk, *loc);
    const std::string mode = rec.mode.key();
    rows.push_back({rec.variant_key, mode, "aggregate", rec.aggregate, {}});
    for (std::size_t j = 0; j < rec.per_neuron.size(); ++j) {
      rows.push_back({rec.variant_key, mode, "neuron[" + std::to_string(j) + "]",
                      rec.per_neuron[j], {}});
    }
    for (std::size_t r = 0; r < rec.sample_rows(); ++r) {
      auto row = rec.sample_row(r);
      rows.push_back({rec.variant_key, mode,
                      "sample[" + std::to_string(rec.sample_indices[r]) + "]",
                      std::nullopt, std::vector<float>(row.begin(), row.end())});
    }
  }
  return rows;
}

void write_csv(std::ostream& out, const std::vector<ExportRow>& rows) {
  bool first = true;
  for (const char* c : kExportColumns) {
    out << (first ? "" : ",") << c;
    first = false;
  }
  out << '\n';
  for (const auto& r : rows) {
    out << csv_field(r.variant_key) << ',' << csv_field(r.mode) << ',' << r.view;
    if (r.stats) {
      const TensorStats& s = *r.stats;
      out << ',' << s.count << ',' << number(s.mean) << ',' << number(s.std) << ','
          << number(s.abs_mean) << ',' << number(s.min) << ',' << number(s.max) << ','
          << number(s.l2_norm) << ',' << number(s.frac_zero) << ',' << s.count_nan
          << ',' << s.count_inf << ',';
    } else {
      out << ",,,,,,,,,,,";
    }
    for (std::size_t i = 0; i < r.values.size(); ++i) {
      out << (i ? ";" : "") << number(r.values[i]);
    }
    out << '\n';
  }
}

void write_jsonl(std::ostream& out, const std::vector<ExportRow>& rows) {
  for (const auto& r : rows) {
    json j{{"variant", r.variant_key}, {"mode", r.mode}, {"view", r.view}};
    if (r.stats) {
      json s = *r.stats;
      for (auto& [k, v] : s.items()) j[k] = v;
    } else {
      for (const char* k : {"count", "mean", "std", "abs_mean", "min", "max", "l2_norm",
                            "frac_zero", "count_nan", "count_inf"}) {
        j[k] = nullptr;
      }
    }
    json values = json::array();
    for (float v : r.values) values.push_back(number_or_null(v));
    j["values"] = values;
    out << j.dump() << '\n';
  }
}

RunStats run_stats(const RunReader& reader) {
  RunStats s;
  s.manifest = reader.manifest();
  for (const auto& c : reader.chunks()) {
    ++s.steps_per_category[c.category];
    ++s.recorded_steps;
    s.records += c.records.size();
  }
  s.nodes = reader.graph().nodes.size();
  s.edges = reader.graph().edges.size();
  s.storage_bytes = reader.storage_bytes();
  return s;
}

void write_run_stats(std::ostream& out, const RunStats& s) {
  const RunManifest& m = s.manifest;
  auto list = [](const std::vector<std::string>& v) {
    std::string t;
    for (const auto& x : v) t += (t.empty() ? "" : ", ") + x;
    return t.empty() ? std::string("-") : t;
  };
  out << "run            " << m.run_id << (m.finalized ? "" : " (live)") << '\n'
      << "format         " << m.format_version << '\n'
      << "trials         " << list(m.trial_ids) << '\n'
      << "losses         " << list(m.losses) << '\n'
      << "max samples    " << m.max_samples << '\n'
      << "growth         " << number(m.schedule_growth) << '\n'
      << "nodes          " << s.nodes << " (" << s.edges << " edges)\n"
      << "recorded steps " << s.recorded_steps << '\n';
  for (const auto& [cat, n] : s.steps_per_category) {
    out << "  " << cat << ": " << n << '\n';
  }
  out << "records        " << s.records << '\n'
      << "storage bytes  " << s.storage_bytes << '\n';
}

}  // namespace tracelens
