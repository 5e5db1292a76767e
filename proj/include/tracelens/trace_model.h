#ifndef TRACELENS_TRACE_MODEL_H_
#define TRACELENS_TRACE_MODEL_H_

// Shared domain types for recorded training traces.
//
// The wire-level types are plain aggregates so that decoders can materialize
// whatever is on disk and let the validator report what is wrong with it.
// Code that *produces* values goes through the `make_*` factories or
// `require_valid`, which reject invariant violations with an Error naming the
// broken rule.

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace tracelens {

inline constexpr std::uint32_t kFormatVersion = 1;

// Loss id under which trainers record the gradient of the summed training
// objective, next to the per-loss gradients.
inline constexpr std::string_view kCombinedLoss = "combined";

enum class Role : std::uint8_t {
  kInput,
  kParameter,
  kCalculated,
  kOutput,  // treated as kCalculated by every algorithm
  kTarget,
  kLoss,
};

std::string_view role_name(Role role);
std::optional<Role> parse_role(std::string_view name);

// Forward values, or the gradient with respect to one named loss.
class Mode {
 public:
  Mode() = default;
  static Mode forward() { return Mode(); }
  static Mode gradient(std::string loss_id);

  bool is_forward() const { return loss_id_.empty(); }
  // Empty for forward mode.
  const std::string& loss_id() const { return loss_id_; }

  // "forward" or "gradient:<loss>"; the inverse of parse().
  std::string key() const;
  static Mode parse(std::string_view key);

  friend auto operator<=>(const Mode&, const Mode&) = default;

 private:
  explicit Mode(std::string loss_id) : loss_id_(std::move(loss_id)) {}
  std::string loss_id_;
};

struct TensorStats {
  std::uint64_t count = 0;
  double mean = 0.0;
  double std = 0.0;
  double abs_mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  double l2_norm = 0.0;
  double frac_zero = 0.0;
  std::uint64_t count_nan = 0;
  std::uint64_t count_inf = 0;

  std::uint64_t finite_count() const { return count - count_nan - count_inf; }

  // Bitwise comparison of every field, so NaN == NaN and 0.0 != -0.0.
  friend bool operator==(const TensorStats& a, const TensorStats& b);
};

// One named tensor at one step in one mode, normalized to (batch, features).
struct TensorRecord {
  std::string node_id;
  std::string variant_key;
  Mode mode;
  std::uint32_t batch = 0;
  std::uint32_t features = 0;
  TensorStats aggregate;
  std::vector<TensorStats> per_neuron;
  std::vector<std::uint32_t> sample_indices;
  // Row-major, sample_indices.size() rows of `features` values.
  std::vector<float> samples;

  std::size_t sample_rows() const { return sample_indices.size(); }
  std::span<const float> sample_row(std::size_t row) const {
    return std::span<const float>(samples).subspan(row * features, features);
  }
  // Row position of a batch index among the retained samples.
  std::optional<std::size_t> find_sample(std::uint32_t batch_index) const;

  // Sample payloads compare bitwise.
  friend bool operator==(const TensorRecord& a, const TensorRecord& b);
};

struct NodeSpec {
  std::string node_id;
  Role role = Role::kCalculated;
  std::vector<std::string> variant_keys;

  friend bool operator==(const NodeSpec&, const NodeSpec&) = default;
};

struct DependencyGraph {
  std::vector<NodeSpec> nodes;
  std::vector<std::pair<std::string, std::string>> edges;
  std::map<std::string, std::uint32_t> layer;

  const NodeSpec* find(std::string_view node_id) const;

  friend bool operator==(const DependencyGraph&, const DependencyGraph&) =
      default;
};

using MetaValue = std::variant<std::int64_t, double, std::string>;

// Canonical text of a metadata value; metadata filters compare against it.
std::string meta_value_text(const MetaValue& value);

struct StepRecord {
  std::string trial_id;
  std::uint64_t step = 0;
  std::string category;
  std::map<std::string, MetaValue> metadata;
  std::vector<TensorRecord> records;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct RunManifest {
  std::string run_id;
  std::vector<std::string> trial_ids;
  std::vector<std::string> categories;
  std::vector<std::string> losses;
  std::uint32_t max_samples = 8;
  double schedule_growth = 1.5;
  std::uint32_t format_version = kFormatVersion;
  bool finalized = false;

  friend bool operator==(const RunManifest&, const RunManifest&) = default;
};

enum class ViewKind { kAggregate, kPerNeuron, kSample };

struct View {
  ViewKind kind = ViewKind::kAggregate;
  std::uint32_t sample_index = 0;  // only meaningful for kSample

  static View aggregate() { return {}; }
  static View per_neuron() { return {ViewKind::kPerNeuron, 0}; }
  static View sample(std::uint32_t index) { return {ViewKind::kSample, index}; }
};

struct SelectorTuple {
  std::string trial_id;
  std::optional<std::string> category_filter;
  std::optional<std::pair<std::string, std::string>> metadata_filter;
  std::uint64_t step = 0;
  std::string node_id;
  std::string variant_key;
  Mode mode;
  View view;
};

struct ModuleTreeNode {
  std::string name;
  std::uint64_t own_param_count = 0;
  std::vector<ModuleTreeNode> children;

  // own_param_count plus the totals of all children.
  std::uint64_t total() const;

  friend bool operator==(const ModuleTreeNode&, const ModuleTreeNode&) =
      default;
};

struct Note {
  std::uint64_t step = 0;
  std::string text;
  friend bool operator==(const Note&, const Note&) = default;
};

struct ScalarPoint {
  std::string series;
  std::uint64_t step = 0;
  double value = 0.0;
  friend bool operator==(const ScalarPoint&, const ScalarPoint&) = default;
};

// Invariant checks. Each returns one human-readable line per violated rule;
// an empty result means valid.
std::vector<std::string> violations(const TensorStats& stats);
std::vector<std::string> violations(const TensorRecord& record,
                                    std::uint32_t max_samples);
std::vector<std::string> violations(const NodeSpec& node);
std::vector<std::string> violations(const DependencyGraph& graph);
std::vector<std::string> violations(const StepRecord& step,
                                    std::uint32_t max_samples);
std::vector<std::string> violations(const RunManifest& manifest);

// Throw Error(kInvalidArgument) naming the first violated rule.
void require_valid(const TensorStats& stats);
void require_valid(const TensorRecord& record, std::uint32_t max_samples);
void require_valid(const NodeSpec& node);
void require_valid(const DependencyGraph& graph);
void require_valid(const StepRecord& step, std::uint32_t max_samples);
void require_valid(const RunManifest& manifest);

}  // namespace tracelens

#endif  // TRACELENS_TRACE_MODEL_H_
