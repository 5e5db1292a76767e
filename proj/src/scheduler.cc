#include "tracelens/scheduler.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tracelens/error.h"

namespace tracelens {

Growth Growth::from_double(double g) {
  constexpr std::uint64_t kScale = 1'000'000;
  if (!(std::isfinite(g) && g > 1.0 && g < 1e6)) {
    throw Error(ErrorCode::kInvalidArgument,
                "schedule growth must be a finite value > 1");
  }
  auto num = static_cast<std::uint64_t>(std::llround(g * kScale));
  if (num <= kScale) {
    throw Error(ErrorCode::kInvalidArgument,
                "schedule growth rounds to 1 at 6 decimal places");
  }
  std::uint64_t d = std::gcd(num, kScale);
  return Growth{num / d, kScale / d};
}

std::uint64_t next_threshold(std::uint64_t current, Growth growth) {
  unsigned __int128 scaled =
      static_cast<unsigned __int128>(current) * growth.num / growth.den;
  std::uint64_t grown = scaled > UINT64_MAX ? UINT64_MAX
                                            : static_cast<std::uint64_t>(scaled);
  return std::max(current + 1, grown);
}

std::pair<bool, CategoryState> should_record(CategoryState state) {
  const bool record = state.occurrences_seen == state.next_record_at;
  if (record) state.next_record_at = next_threshold(state.next_record_at, state.growth);
  ++state.occurrences_seen;
  return {record, std::move(state)};
}

RecordingScheduler::RecordingScheduler(double default_growth)
    : default_growth_(default_growth) {
  Growth::from_double(default_growth);  // validates
}

const CategoryState& RecordingScheduler::register_category(
    const std::string& name, double g) {
  if (name.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "category name must be nonempty");
  }
  if (states_.count(name)) {
    throw Error(ErrorCode::kDuplicateCategory,
                "category '" + name + "' is already registered");
  }
  CategoryState state;
  state.category = name;
  state.growth = Growth::from_double(g);
  return states_.emplace(name, std::move(state)).first->second;
}

bool RecordingScheduler::should_record(const std::string& category) {
  auto it = states_.find(category);
  if (it == states_.end()) {
    register_category(category, default_growth_);
    it = states_.find(category);
  }
  auto [record, next] = tracelens::should_record(std::move(it->second));
  it->second = std::move(next);
  return record;
}

}  // namespace tracelens
