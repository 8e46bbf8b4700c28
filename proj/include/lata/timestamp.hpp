#pragma once

#include <chrono>
#include <string>
#include <string_view>

namespace lata {

// A timezone-aware instant. Sub-second precision is dropped on parse.
struct Timestamp {
  std::chrono::sys_seconds utc{};
  int offset_minutes = 0;

  friend bool operator==(const Timestamp&, const Timestamp&) = default;
};

// Accepts ISO 8601 ("2026-01-16T23:59:00-08:00", "...Z") and the
// Gradescope export form ("2026-01-16 23:59:00.123456 -0800").
// A missing zone designator is a ParseError.
Timestamp parse_timestamp(std::string_view text);

// Renders in the original offset, e.g. "2026-01-16T23:59:00-08:00".
std::string format_timestamp(const Timestamp& ts);

std::string format_utc(std::chrono::sys_seconds t);

// Current time, or SOURCE_DATE_EPOCH when that variable is set.
std::chrono::sys_seconds run_clock_now();

}  // namespace lata
