#include "lata/timestamp.hpp"

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <string>

#include "lata/errors.hpp"

namespace lata {

namespace {

class Cursor {
 public:
  explicit Cursor(std::string_view s) : s_(s) {}

  bool done() const { return pos_ >= s_.size(); }
  char peek() const { return done() ? '\0' : s_[pos_]; }
  void skip() { ++pos_; }

  int digits(std::size_t count, std::string_view what) {
    int value = 0;
    for (std::size_t i = 0; i < count; ++i) {
      if (done() || !std::isdigit(static_cast<unsigned char>(peek()))) fail(what);
      value = value * 10 + (peek() - '0');
      skip();
    }
    return value;
  }

  void expect(char c, std::string_view what) {
    if (peek() != c) fail(what);
    skip();
  }

  [[noreturn]] void fail(std::string_view what) const {
    throw ParseError("bad timestamp '" + std::string(s_) + "': expected " + std::string(what));
  }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace

Timestamp parse_timestamp(std::string_view text) {
  using namespace std::chrono;
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.remove_suffix(1);
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.remove_prefix(1);

  Cursor c(text);
  const int y = c.digits(4, "year");
  c.expect('-', "'-'");
  const int mo = c.digits(2, "month");
  c.expect('-', "'-'");
  const int d = c.digits(2, "day");
  if (c.peek() != 'T' && c.peek() != 't' && c.peek() != ' ') c.fail("'T' or ' '");
  c.skip();
  const int h = c.digits(2, "hour");
  c.expect(':', "':'");
  const int mi = c.digits(2, "minute");
  c.expect(':', "':'");
  const int s = c.digits(2, "second");
  if (c.peek() == '.') {
    c.skip();
    while (std::isdigit(static_cast<unsigned char>(c.peek()))) c.skip();
  }
  if (c.peek() == ' ') c.skip();

  int offset = 0;
  if (c.peek() == 'Z' || c.peek() == 'z') {
    c.skip();
  } else if (c.peek() == '+' || c.peek() == '-') {
    const int sign = c.peek() == '-' ? -1 : 1;
    c.skip();
    const int oh = c.digits(2, "offset hours");
    if (c.peek() == ':') c.skip();
    const int om = c.digits(2, "offset minutes");
    offset = sign * (oh * 60 + om);
  } else {
    c.fail("timezone designator (Z or +HH:MM)");
  }
  if (!c.done()) c.fail("end of input");

  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60) c.fail("a valid calendar date and time");
  const sys_seconds local = sys_days{ymd} + hours{h} + minutes{mi} + seconds{s};
  return Timestamp{local - minutes{offset}, offset};
}

std::string format_timestamp(const Timestamp& ts) {
  using namespace std::chrono;
  const sys_seconds local = ts.utc + minutes{ts.offset_minutes};
  const auto day_point = floor<days>(local);
  const year_month_day ymd{day_point};
  const hh_mm_ss hms{local - day_point};
  char buf[64];
  if (ts.offset_minutes == 0) {
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02ldZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<long>(hms.hours().count()), static_cast<long>(hms.minutes().count()),
                  static_cast<long>(hms.seconds().count()));
  } else {
    const int off = std::abs(ts.offset_minutes);
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02ld%c%02d:%02d", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<long>(hms.hours().count()), static_cast<long>(hms.minutes().count()),
                  static_cast<long>(hms.seconds().count()), ts.offset_minutes < 0 ? '-' : '+', off / 60,
                  off % 60);
  }
  return buf;
}

std::string format_utc(std::chrono::sys_seconds t) { return format_timestamp(Timestamp{t, 0}); }

std::chrono::sys_seconds run_clock_now() {
  using namespace std::chrono;
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"); epoch != nullptr && *epoch != '\0') {
    char* end = nullptr;
    const long long v = std::strtoll(epoch, &end, 10);
    if (end != nullptr && *end == '\0') return sys_seconds{seconds{v}};
  }
  return floor<seconds>(system_clock::now());
}

}  // namespace lata
