#include "tracelens/stats.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "tracelens/error.h"

namespace tracelens {
namespace {

template <typename T>
TensorStats summarize_impl(std::span<const T> values) {
  if (values.empty()) {
    throw Error(ErrorCode::kEmptyTensor, "summarize: tensor has no elements");
  }
  StatsAccumulator acc;
  for (T v : values) acc.add(static_cast<double>(v));
  return acc.finish();
}

template <typename T>
std::vector<TensorStats> per_neuron_impl(std::span<const T> values,
                                         std::size_t batch,
                                         std::size_t features) {
  if (batch == 0 || features == 0 || values.size() != batch * features) {
    throw Error(ErrorCode::kShape,
                "per_neuron_stats: expected " + std::to_string(batch) + "x" +
                    std::to_string(features) + " values, got " +
                    std::to_string(values.size()));
  }
  std::vector<StatsAccumulator> acc(features);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = values.data() + b * features;
    for (std::size_t j = 0; j < features; ++j) {
      acc[j].add(static_cast<double>(row[j]));
    }
  }
  std::vector<TensorStats> out;
  out.reserve(features);
  for (const auto& a : acc) out.push_back(a.finish());
  return out;
}

template <typename T>
ZScores zscore_impl(std::span<const T> row,
                    std::span<const TensorStats> neuron_stats) {
  if (row.size() != neuron_stats.size()) {
    throw Error(ErrorCode::kShape,
                "zscore: row has " + std::to_string(row.size()) +
                    " values but there are " +
                    std::to_string(neuron_stats.size()) + " neuron stats");
  }
  constexpr double kInf = std::numeric_limits<double>::infinity();
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  ZScores out;
  out.z.resize(row.size());
  out.degenerate.assign(row.size(), false);
  for (std::size_t j = 0; j < row.size(); ++j) {
    const TensorStats& s = neuron_stats[j];
    const double x = static_cast<double>(row[j]);
    if (!std::isfinite(x) || s.finite_count() == 0) {
      out.z[j] = kNaN;
      out.degenerate[j] = true;
    } else if (s.std == 0.0) {
      if (row[j] == static_cast<T>(s.mean)) {
        out.z[j] = 0.0;
      } else {
        out.z[j] = x > s.mean ? kInf : -kInf;
        out.degenerate[j] = true;
      }
    } else {
      out.z[j] = (x - s.mean) / s.std;
    }
  }
  return out;
}

std::uint64_t zero_count(const TensorStats& s) {
  return static_cast<std::uint64_t>(
      std::llround(s.frac_zero * static_cast<double>(s.finite_count())));
}

}  // namespace

void StatsAccumulator::add(double x) {
  ++count_;
  if (std::isnan(x)) {
    ++nan_;
    return;
  }
  if (std::isinf(x)) {
    ++inf_;
    return;
  }
  ++finite_;
  if (x == 0.0) ++zeros_;
  if (finite_ == 1) {
    min_ = max_ = x;
  } else {
    min_ = std::min(min_, x);
    max_ = std::max(max_, x);
  }
  const double delta = x - mean_;
  mean_ += delta / static_cast<double>(finite_);
  m2_ += delta * (x - mean_);
  abs_sum_ += std::fabs(static_cast<long double>(x));
  sq_sum_ += static_cast<long double>(x) * static_cast<long double>(x);
}

TensorStats StatsAccumulator::finish() const {
  TensorStats s;
  s.count = count_;
  s.count_nan = nan_;
  s.count_inf = inf_;
  if (finite_ == 0) {
    s.min = s.max = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  const auto n = static_cast<double>(finite_);
  s.mean = std::clamp(mean_, min_, max_);
  s.std = std::sqrt(std::max(0.0, m2_) / n);
  s.abs_mean = static_cast<double>(abs_sum_ / static_cast<long double>(finite_));
  s.min = min_;
  s.max = max_;
  s.l2_norm = static_cast<double>(std::sqrt(sq_sum_));
  s.frac_zero = static_cast<double>(zeros_) / n;
  return s;
}

TensorStats summarize(std::span<const double> values) {
  return summarize_impl(values);
}
TensorStats summarize(std::span<const float> values) {
  return summarize_impl(values);
}

std::vector<TensorStats> per_neuron_stats(std::span<const double> values,
                                          std::size_t batch,
                                          std::size_t features) {
  return per_neuron_impl(values, batch, features);
}
std::vector<TensorStats> per_neuron_stats(std::span<const float> values,
                                          std::size_t batch,
                                          std::size_t features) {
  return per_neuron_impl(values, batch, features);
}

TensorStats merge(const TensorStats& a, const TensorStats& b) {
  const std::uint64_t na = a.finite_count();
  const std::uint64_t nb = b.finite_count();
  TensorStats s;
  s.count = a.count + b.count;
  s.count_nan = a.count_nan + b.count_nan;
  s.count_inf = a.count_inf + b.count_inf;
  if (na == 0 || nb == 0) {
    const TensorStats& only = na == 0 ? b : a;
    s.mean = only.mean;
    s.std = only.std;
    s.abs_mean = only.abs_mean;
    s.min = only.min;
    s.max = only.max;
    s.l2_norm = only.l2_norm;
    s.frac_zero = only.frac_zero;
    return s;
  }
  const double fa = static_cast<double>(na);
  const double fb = static_cast<double>(nb);
  const double n = fa + fb;
  const double delta = b.mean - a.mean;
  const double m2 = a.std * a.std * fa + b.std * b.std * fb +
                    delta * delta * (fa * fb / n);
  s.min = std::min(a.min, b.min);
  s.max = std::max(a.max, b.max);
  s.mean = std::clamp(a.mean + delta * (fb / n), s.min, s.max);
  s.std = std::sqrt(m2 / n);
  s.abs_mean = (a.abs_mean * fa + b.abs_mean * fb) / n;
  s.l2_norm = std::hypot(a.l2_norm, b.l2_norm);
  s.frac_zero = static_cast<double>(zero_count(a) + zero_count(b)) / n;
  return s;
}

ZScores zscore(std::span<const double> row,
               std::span<const TensorStats> neuron_stats) {
  return zscore_impl(row, neuron_stats);
}
ZScores zscore(std::span<const float> row,
               std::span<const TensorStats> neuron_stats) {
  return zscore_impl(row, neuron_stats);
}

Shape2D normalize_shape(std::span<const std::size_t> dims) {
  if (dims.size() <= 1) {
    return {1, static_cast<std::uint32_t>(dims.empty() ? 1 : dims[0])};
  }
  std::size_t features = 1;
  for (std::size_t i = 1; i < dims.size(); ++i) features *= dims[i];
  return {static_cast<std::uint32_t>(dims[0]),
          static_cast<std::uint32_t>(features)};
}

TensorRecord capture(std::string node_id, std::string variant_key, Mode mode,
                     std::span<const double> values, Shape2D shape,
                     std::span<const std::uint32_t> retained_rows) {
  TensorRecord r;
  r.node_id = std::move(node_id);
  r.variant_key = std::move(variant_key);
  r.mode = std::move(mode);
  r.batch = shape.batch;
  r.features = shape.features;
  r.per_neuron = per_neuron_stats(values, shape.batch, shape.features);
  r.aggregate = summarize(values);
  r.sample_indices.assign(retained_rows.begin(), retained_rows.end());
  r.samples.reserve(retained_rows.size() * shape.features);
  for (std::uint32_t row : retained_rows) {
    if (row >= shape.batch) {
      throw Error(ErrorCode::kShape, "capture: retained row " +
                                         std::to_string(row) +
                                         " outside the batch");
    }
    for (std::size_t j = 0; j < shape.features; ++j) {
      r.samples.push_back(
          static_cast<float>(values[row * std::size_t{shape.features} + j]));
    }
  }
  return r;
}

TensorRecord capture(std::string node_id, std::string variant_key, Mode mode,
                     std::span<const double> values, Shape2D shape,
                     std::uint32_t retain) {
  std::vector<std::uint32_t> rows(std::min(retain, shape.batch));
  for (std::uint32_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return capture(std::move(node_id), std::move(variant_key), std::move(mode),
                 values, shape, rows);
}

TensorRecord capture_parameter(std::string node_id, std::string variant_key,
                               Mode mode, std::span<const double> values) {
  const Shape2D shape{1, static_cast<std::uint32_t>(values.size())};
  return capture(std::move(node_id), std::move(variant_key), std::move(mode),
                 values, shape, std::span<const std::uint32_t>{});
}

}  // namespace tracelens
