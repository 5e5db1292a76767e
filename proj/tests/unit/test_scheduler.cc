#include <doctest.h>

#include "test_support.h"
#include "tracelens/error.h"
#include "tracelens/scheduler.h"

using namespace tracelens;
using tracelens::testing::schedule_oracle;

namespace {

std::vector<std::uint64_t> recorded(RecordingScheduler& s, const std::string& cat,
                                    std::uint64_t n) {
  std::vector<std::uint64_t> out;
  for (std::uint64_t i = 0; i < n; ++i) {
    if (s.should_record(cat)) out.push_back(i);
  }
  return out;
}

std::vector<std::uint64_t> first(const std::vector<std::uint64_t>& v, std::size_t n) {
  return {v.begin(), v.begin() + static_cast<std::ptrdiff_t>(std::min(n, v.size()))};
}

}  // namespace

TEST_CASE("growth ratios") {
  CHECK(Growth::from_double(1.5).num == 3);
  CHECK(Growth::from_double(1.5).den == 2);
  CHECK(Growth::from_double(1.1).num == 11);
  CHECK(Growth::from_double(1.1).den == 10);
  CHECK(Growth::from_double(2.0).den == 1);
  CHECK_THROWS_AS(Growth::from_double(1.0), Error);
  CHECK_THROWS_AS(Growth::from_double(0.5), Error);
  CHECK_THROWS_AS(Growth::from_double(1.0000001), Error);
}

TEST_CASE("g = 2 doubles after the first two") {
  RecordingScheduler s(2.0);
  CHECK(first(recorded(s, "default", 100), 7) ==
        std::vector<std::uint64_t>{0, 1, 2, 4, 8, 16, 32});
}

TEST_CASE("g = 1.5 sequence") {
  RecordingScheduler s;
  const auto got = recorded(s, "default", 30);
  CHECK(got == std::vector<std::uint64_t>{0, 1, 2, 3, 4, 6, 9, 13, 19, 28});
  CHECK(got == schedule_oracle("1.5", 30));
}

TEST_CASE("first two occurrences are always recorded") {
  for (double g : {1.01, 1.1, 1.5, 2.0, 3.0, 10.0, 1000.0}) {
    RecordingScheduler s(g);
    CHECK(s.should_record("c"));
    CHECK(s.should_record("c"));
  }
}

TEST_CASE("register_category") {
  RecordingScheduler s;
  const CategoryState& st = s.register_category("default", 1.5);
  CHECK(st.occurrences_seen == 0);
  CHECK(st.next_record_at == 0);
  CHECK(s.should_record("default"));
  try {
    s.register_category("default", 2.0);
    FAIL("expected DuplicateCategory");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDuplicateCategory);
  }
  CHECK_THROWS_AS(s.register_category("", 2.0), Error);
  CHECK_THROWS_AS(s.register_category("x", 1.0), Error);
}

TEST_CASE("slow growth records densely at first") {
  RecordingScheduler s;
  s.register_category("rare_token_batch", 1.1);
  const auto got = recorded(s, "rare_token_batch", 200);
  CHECK(first(got, 11) == std::vector<std::uint64_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  CHECK(got == schedule_oracle("1.1", 200));
}

TEST_CASE("categories are isolated") {
  RecordingScheduler s(2.0);
  std::vector<std::uint64_t> rare_hits;
  std::uint64_t rare_seen = 0;
  for (int i = 0; i < 10000; ++i) {
    s.should_record("busy");
    if (i % 500 == 0) {
      if (s.should_record("rare")) rare_hits.push_back(rare_seen);
      ++rare_seen;
    }
  }
  CHECK(rare_hits == schedule_oracle("2", rare_seen));
}

TEST_CASE("pure state transition") {
  CategoryState st;
  st.category = "c";
  st.growth = Growth::from_double(3.0);
  std::vector<std::uint64_t> got;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const std::uint64_t before = st.next_record_at;
    auto [rec, next] = should_record(st);
    CHECK(next.next_record_at >= before);
    CHECK(next.occurrences_seen == i + 1);
    if (rec) got.push_back(i);
    st = next;
  }
  CHECK(got == schedule_oracle("3", 100));
}

TEST_CASE("replay reproduces the same decisions") {
  RecordingScheduler a(1.7), b(1.7);
  CHECK(recorded(a, "x", 5000) == recorded(b, "x", 5000));
}

TEST_CASE("thresholds saturate instead of overflowing") {
  const Growth g = Growth::from_double(3.0);
  CHECK(next_threshold(UINT64_MAX / 2, g) == UINT64_MAX);
}
