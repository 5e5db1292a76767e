#ifndef TRACELENS_REPORT_H_
#define TRACELENS_REPORT_H_

// Offline views of a run: tabular export of one node at one step and a
// manifest-level summary.

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tracelens/query.h"
#include "tracelens/trace_model.h"

namespace tracelens {

// One row per (variant, mode, view). `view` is "aggregate", "neuron[j]" or
// "sample[i]"; sample rows carry values and no stats.
struct ExportRow {
  std::string variant_key;
  std::string mode;  // Mode::key()
  std::string view;
  std::optional<TensorStats> stats;
  std::vector<float> values;
};

inline constexpr const char* kExportColumns[] = {
    "variant", "mode",    "view",      "count",     "mean",
    "std",     "abs_mean", "min",      "max",       "l2_norm",
    "frac_zero", "count_nan", "count_inf", "values"};

// Rows for every record of `node` at (trial, step): variants in declared
// order, forward before gradients, aggregate, then neurons, then samples.
// kNotFound for an unknown trial, step or node.
std::vector<ExportRow> export_rows(const LoadedRun& run, const std::string& trial,
                                   std::uint64_t step, const std::string& node);

// Header line plus one line per row. Numbers use the shortest text that
// reads back to the same double; sample values are joined with ';'.
void write_csv(std::ostream& out, const std::vector<ExportRow>& rows);
// One JSON object per row, keyed by the same column names.
void write_jsonl(std::ostream& out, const std::vector<ExportRow>& rows);

struct RunStats {
  RunManifest manifest;
  std::map<std::string, std::uint64_t> steps_per_category;
  std::uint64_t recorded_steps = 0;
  std::uint64_t records = 0;
  std::uint64_t nodes = 0;
  std::uint64_t edges = 0;
  std::uint64_t storage_bytes = 0;
};

RunStats run_stats(const RunReader& reader);
void write_run_stats(std::ostream& out, const RunStats& stats);

}  // namespace tracelens

#endif  // TRACELENS_REPORT_H_
