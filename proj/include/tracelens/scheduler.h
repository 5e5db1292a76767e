#ifndef TRACELENS_SCHEDULER_H_
#define TRACELENS_SCHEDULER_H_

#include <cstdint>
#include <map>
#include <string>
#include <utility>

namespace tracelens {

// Schedule growth as an exact ratio num/den > 1.
struct Growth {
  std::uint64_t num = 3;
  std::uint64_t den = 2;

  // Converts a decimal growth factor (at most 6 fractional digits are kept)
  // to a reduced ratio. Throws kInvalidArgument unless g > 1.
  static Growth from_double(double g);
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

inline constexpr double kDefaultGrowth = 1.5;

// Recording state of one step category.
//
// Occurrence n (0-indexed) is recorded iff it equals the current threshold.
// Thresholds follow r0 = 0, r(k+1) = max(r(k) + 1, floor(r(k) * num / den)),
// computed in integers so schedules are bit-reproducible.
struct CategoryState {
  std::string category;
  std::uint64_t occurrences_seen = 0;
  std::uint64_t next_record_at = 0;
  Growth growth;
};

// Next threshold after `current`.
std::uint64_t next_threshold(std::uint64_t current, Growth growth);

// Decides one occurrence. Must be called once per occurrence, in order.
std::pair<bool, CategoryState> should_record(CategoryState state);

// Per-run registry of category schedules. Single-writer.
class RecordingScheduler {
 public:
  explicit RecordingScheduler(double default_growth = kDefaultGrowth);

  // Throws kDuplicateCategory on re-registration, kInvalidArgument for an
  // empty name or g <= 1.
  const CategoryState& register_category(const std::string& name, double g);

  // Decides the next occurrence of `category`. Unregistered categories are
  // registered with the default growth on first use.
  bool should_record(const std::string& category);

  const std::map<std::string, CategoryState>& categories() const {
    return states_;
  }

 private:
  double default_growth_;
  std::map<std::string, CategoryState> states_;
};

}  // namespace tracelens

#endif  // TRACELENS_SCHEDULER_H_
