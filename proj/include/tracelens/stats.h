#ifndef TRACELENS_STATS_H_
#define TRACELENS_STATS_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tracelens/trace_model.h"

namespace tracelens {

// One-pass accumulator behind summarize(). Mean and squared deviations use
// Welford's update; sums that only grow (|x|, x^2) are kept in long double.
// Non-finite values are counted and otherwise ignored.
class StatsAccumulator {
 public:
  void add(double x);
  TensorStats finish() const;

 private:
  std::uint64_t count_ = 0;
  std::uint64_t nan_ = 0;
  std::uint64_t inf_ = 0;
  std::uint64_t finite_ = 0;
  std::uint64_t zeros_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
  long double abs_sum_ = 0.0L;
  long double sq_sum_ = 0.0L;
  double min_ = 0.0;
  double max_ = 0.0;
};

// Summary statistics in a single pass. Throws kEmptyTensor for no values.
TensorStats summarize(std::span<const double> values);
TensorStats summarize(std::span<const float> values);

// Column-wise statistics of a row-major batch x features array.
// Throws kShape if the sizes disagree or either extent is zero.
std::vector<TensorStats> per_neuron_stats(std::span<const double> values,
                                          std::size_t batch,
                                          std::size_t features);
std::vector<TensorStats> per_neuron_stats(std::span<const float> values,
                                          std::size_t batch,
                                          std::size_t features);

// Statistics of the union of two disjoint element sets (Chan et al. pairwise
// combination). Counters, min and max combine exactly.
TensorStats merge(const TensorStats& a, const TensorStats& b);

struct ZScores {
  std::vector<double> z;
  // Set where the neuron has zero spread and the value deviates from the
  // mean (z is then +/-inf), or where z is undefined (non-finite inputs).
  std::vector<bool> degenerate;
};

ZScores zscore(std::span<const double> row,
               std::span<const TensorStats> neuron_stats);
// Retained samples are stored as f32; for zero-spread neurons a value equal
// to the mean at f32 precision scores 0.
ZScores zscore(std::span<const float> row,
               std::span<const TensorStats> neuron_stats);

struct Shape2D {
  std::uint32_t batch = 1;
  std::uint32_t features = 1;
};

// Flattens an arbitrary-rank shape to (batch, features): the first axis is
// the batch, the rest are features. Rank 0 and rank 1 tensors get batch 1.
Shape2D normalize_shape(std::span<const std::size_t> dims);

// Builds a TensorRecord from raw row-major values, retaining the first
// `retain` batch rows (capped at the batch size) as f32 samples.
TensorRecord capture(std::string node_id, std::string variant_key, Mode mode,
                     std::span<const double> values, Shape2D shape,
                     std::uint32_t retain);

// Same, with an explicit sorted list of batch rows to retain.
TensorRecord capture(std::string node_id, std::string variant_key, Mode mode,
                     std::span<const double> values, Shape2D shape,
                     std::span<const std::uint32_t> retained_rows);

// Batch-less tensors (parameters): batch 1, aggregate plus per-element
// statistics, no samples.
TensorRecord capture_parameter(std::string node_id, std::string variant_key,
                               Mode mode, std::span<const double> values);

}  // namespace tracelens

#endif  // TRACELENS_STATS_H_
