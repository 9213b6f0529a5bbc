#pragma once

#include <atomic>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace dualprice {

inline constexpr const char* kLibraryVersion = "0.1.0";

// Error category, mapped to distinct CLI exit codes.
enum class Errc {
  invalid_argument,  // bad parameters, dimension mismatches
  data,              // malformed or inconsistent datasets
  solver,            // non-convergence, unbounded dual
  io,                // missing/unreadable/unwritable files
  schema,            // config or artifact schema violations
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

// FNV-1a, used for data/config fingerprints embedded in outputs.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ull) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string to_hex(std::uint64_t v) {
  char buf[17];
  static const char* digits = "0123456789abcdef";
  for (int i = 15; i >= 0; --i) {
    buf[15 - i] = digits[(v >> (4 * i)) & 0xf];
  }
  return std::string(buf, 16);
}

// Shortest round-trip decimal form, shared by every CSV writer so that
// identical runs produce byte-identical files.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(Errc::data, "cannot parse real value: '" + std::string(s) + "'");
  }
  return v;
}

inline long parse_long(std::string_view s) {
  long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(Errc::data, "cannot parse integer value: '" + std::string(s) + "'");
  }
  return v;
}

// Worker pool size: DUALPRICE_THREADS if set, else hardware concurrency.
inline int worker_count() {
  if (const char* env = std::getenv("DUALPRICE_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

// Runs fn(i) for i in [0, count). Each index owns its output slot, so the
// result is identical to the sequential loop regardless of scheduling.
inline void parallel_for_index(std::size_t count, const std::function<void(std::size_t)>& fn,
                               int threads = 0) {
  if (threads <= 0) threads = worker_count();
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::size_t nthreads = std::min<std::size_t>(threads, count);
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(nthreads);
  for (std::size_t w = 0; w < nthreads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (;;) {
          std::size_t i = next.fetch_add(1);
          if (i >= count) break;
          fn(i);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace dualprice
