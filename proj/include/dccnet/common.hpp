#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace dccnet {

enum class Errc {
  shape_mismatch,
  invalid_argument,
  bad_magic,
  truncated,
  extent_overflow,
  bad_format,
  io,
  numeric,
  unsupported,
};

// All library failures surface as Error; Errc keeps them machine-distinguishable.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const { return code_; }
  const char* code_name() const;

 private:
  Errc code_;
};

[[noreturn]] void fail(Errc code, const std::string& what);

void require(bool cond, Errc code, const std::string& what);

// Deterministic RNG: mt19937_64 plus Box-Muller, so streams do not depend on
// libstdc++ distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  // [0, 1)
  double uniform();
  double uniform(double lo, double hi);
  double normal();
  // [0, n)
  std::size_t index(std::size_t n);

 private:
  std::uint64_t state_;
  std::uint64_t mt_[312];
  int mt_pos_ = 313;  // force init on first draw
  bool has_spare_ = false;
  double spare_ = 0.0;
  void reseed();
};

// Worker count for internal parallelism. Results are required to be identical
// for any value; 0 restores the hardware default.
void set_num_threads(int n);
int num_threads();

// Static contiguous partition of [0, n); fn(begin, end) per chunk.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace dccnet
