#pragma once

// Shared plumbing: error types, deterministic RNG, chunked parallelism.

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

namespace binagg {

// ---------------------------------------------------------------- errors ----

/** Malformed or truncated input file. Carries enough context to point a user
 *  at the exact byte that broke. */
class ParseError : public std::runtime_error {
 public:
  ParseError(std::string file, std::uint64_t offset, std::string expected);

  const std::string& file() const noexcept { return file_; }
  std::uint64_t offset() const noexcept { return offset_; }
  const std::string& expected() const noexcept { return expected_; }

 private:
  std::string file_;
  std::uint64_t offset_;
  std::string expected_;
};

/** Numeric degeneracy the caller must resolve (zero vector where a direction
 *  is required, non-unit inputs to fusion, inconsistent dimensions, ...). */
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/** Prints "binagg: warning: <msg>" on stderr. Single funnel so tests can
 *  redirect it if they ever need to. */
void warn(const std::string& msg);

// ------------------------------------------------------------------- rng ----

/** Deterministic random source. Wraps std::mt19937_64 but implements its own
 *  variate transforms: the standard pins the engine's output, not the
 *  distributions', and identical seeds must give identical results on every
 *  platform and standard library. */
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /** Uniform double in [0, 1), 53 random bits. */
  double next_double() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /** Uniform index in [0, n). Rejection-sampled, so unbiased for every n. */
  std::size_t next_index(std::size_t n);

  bool next_bernoulli(double p) { return next_double() < p; }

  /** Standard normal via Box-Muller (used for sketch matrices). */
  double next_gaussian();

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// ------------------------------------------------------------- threading ----

/** Worker budget: BINAGG_THREADS if set (>=1), else hardware concurrency. */
std::size_t thread_budget();

/** Runs body(chunk_index, begin, end) over [0, n) split into fixed-size
 *  chunks. The chunk grid depends only on n and chunk_size, never on the
 *  worker count, so callers that keep per-chunk partial results and merge
 *  them in chunk order get bit-identical sums for any BINAGG_THREADS.
 *  Exceptions from workers are rethrown on the calling thread. */
void parallel_chunks(std::size_t n, std::size_t chunk_size,
                     const std::function<void(std::size_t, std::size_t,
                                              std::size_t)>& body);

inline constexpr std::size_t kDefaultChunk = 256;

// --------------------------------------------------------------- hashing ----

/** Incremental FNV-1a (64-bit), used for provenance tags. */
class Fnv1a {
 public:
  void update(const void* data, std::size_t len);
  template <typename T>
  void update_value(const T& v) {
    update(&v, sizeof(T));
  }
  std::uint64_t digest() const noexcept { return h_; }

 private:
  std::uint64_t h_ = 1469598103934665603ull;
};

}  // namespace binagg
