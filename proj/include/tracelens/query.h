#ifndef TRACELENS_QUERY_H_
#define TRACELENS_QUERY_H_

// Read-only queries over the runs below one data root. A run is any
// immediate subdirectory holding a manifest; its id is the directory name.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "tracelens/run_store.h"
#include "tracelens/stats.h"
#include "tracelens/trace_model.h"

namespace tracelens {

struct RunSummary {
  std::string run_id;
  bool finalized = false;
  std::vector<std::string> trial_ids;
  std::vector<std::string> categories;
  std::vector<std::string> losses;
  std::uint64_t recorded_steps = 0;
  std::uint64_t node_count = 0;
};

// One loaded run plus the lookup tables every query goes through.
class LoadedRun {
 public:
  explicit LoadedRun(std::shared_ptr<RunReader> reader);

  const RunReader& reader() const { return *reader_; }
  const RunManifest& manifest() const { return reader_->manifest(); }
  const DependencyGraph& graph() const { return reader_->graph(); }

  // Chunk of (trial, step), or nullptr.
  const ChunkEntry* chunk(const std::string& trial, std::uint64_t step) const;
  // Record location of (node, variant, mode) within a chunk, or nullptr.
  const RecordLocation* location(const ChunkEntry& chunk, const std::string& node,
                                 const std::string& variant, const Mode& mode) const;
  bool has_trial(const std::string& trial) const;

 private:
  using RecordKey = std::tuple<std::string, std::string, Mode>;
  std::shared_ptr<RunReader> reader_;
  std::map<std::pair<std::string, std::uint64_t>, std::size_t> by_step_;
  std::vector<std::map<RecordKey, std::size_t>> by_record_;
};

struct StepListing {
  std::vector<std::uint64_t> steps;
  // Every metadata key seen in the trial with its distinct values (canonical
  // text), so a client can offer filters without guessing.
  std::map<std::string, std::vector<std::string>> metadata_values;
  std::vector<std::string> categories;
};

struct SampleView {
  std::uint32_t index = 0;
  std::vector<float> values;
  ZScores z;
};

struct RecordPayload {
  std::string trial_id;
  std::uint64_t step = 0;
  std::string category;
  std::string node_id;
  std::string variant_key;
  Mode mode;
  std::uint32_t batch = 0;
  std::uint32_t features = 0;
  View view;
  TensorStats aggregate;                // kAggregate
  std::vector<TensorStats> per_neuron;  // kPerNeuron
  std::optional<SampleView> sample;     // kSample
  std::vector<std::uint32_t> retained_samples;
};

struct OutlierHit {
  std::string node_id;
  std::string variant_key;
  std::uint32_t layer = 0;
  std::uint32_t neuron = 0;
  double z = 0.0;  // signed; NaN where the score is undefined
  bool degenerate = false;
};

struct SuccessorGradient {
  std::string node_id;
  std::uint32_t layer = 0;
  double abs_mean = 0.0;
  std::uint32_t variants = 0;  // gradient records merged into abs_mean
};

struct GradientBalance {
  std::string node_id;
  std::string loss_id;
  std::vector<SuccessorGradient> successors;  // ordered by (layer, node id)
  double ratio = 0.0;                         // max / min abs_mean
};

class QueryService {
 public:
  explicit QueryService(std::filesystem::path data_root,
                        std::size_t header_cache_capacity = 256);

  const std::filesystem::path& data_root() const { return root_; }

  // Sorted by run id.
  std::vector<RunSummary> list_runs();
  // Loads the run on first use. A live (not finalized) run is reloaded when
  // its directory changed since the last load. kNotFound for unknown ids.
  std::shared_ptr<const LoadedRun> run(const std::string& run_id);

  RunManifest get_manifest(const std::string& run_id);
  DependencyGraph get_graph(const std::string& run_id);
  // Nodes grouped by layer for display, honoring the run's layout override.
  std::vector<std::vector<std::string>> get_layout(const std::string& run_id);

  // kNotFound for an unknown trial.
  StepListing list_steps(
      const std::string& run_id, const std::string& trial,
      const std::optional<std::string>& category = std::nullopt,
      const std::optional<std::pair<std::string, std::string>>& metadata =
          std::nullopt);

  // kNotFound for unknown run/trial/node/variant/loss or a step that is not
  // recorded (or fails the selector's filters); kNotRecorded when the step
  // exists but holds no record of (node, variant, mode); kSampleNotRetained
  // with the retained indices as detail.
  RecordPayload get_record(const std::string& run_id, const SelectorTuple& selector);

  // Forward records where the sample's largest |z| reaches `threshold`,
  // earliest layer first. Undefined scores count as infinitely unusual.
  std::vector<OutlierHit> outlier_trace(const std::string& run_id,
                                        const std::string& trial, std::uint64_t step,
                                        std::uint32_t sample_index, double threshold);

  // Gradient abs_mean on every successor of `node`, for `loss` (default: the
  // combined loss when the run has one, else its only loss).
  GradientBalance gradient_balance(const std::string& run_id,
                                   const std::string& trial, std::uint64_t step,
                                   const std::string& node,
                                   const std::optional<std::string>& loss = std::nullopt);

  ModuleTreeNode get_network_tree(const std::string& run_id);
  // Inclusive step range.
  std::vector<Note> get_notes(const std::string& run_id, std::uint64_t from,
                              std::uint64_t to);
  std::vector<std::string> list_series(const std::string& run_id);
  std::vector<ScalarPoint> get_scalars(const std::string& run_id,
                                       const std::string& series, std::uint64_t from,
                                       std::uint64_t to);

 private:
  struct Slot {
    std::shared_ptr<const LoadedRun> run;
    std::filesystem::file_time_type stamp;
  };
  std::filesystem::path run_dir(const std::string& run_id) const;

  std::filesystem::path root_;
  std::size_t cache_capacity_;
  std::mutex mu_;
  std::map<std::string, Slot> runs_;
};

}  // namespace tracelens

#endif  // TRACELENS_QUERY_H_
