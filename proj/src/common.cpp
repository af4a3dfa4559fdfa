#include "dccnet/common.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <thread>
#include <vector>

namespace dccnet {

const char* Error::code_name() const {
  switch (code_) {
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::bad_magic: return "bad_magic";
    case Errc::truncated: return "truncated";
    case Errc::extent_overflow: return "extent_overflow";
    case Errc::bad_format: return "bad_format";
    case Errc::io: return "io";
    case Errc::numeric: return "numeric";
    case Errc::unsupported: return "unsupported";
  }
  return "unknown";
}

void fail(Errc code, const std::string& what) { throw Error(code, what); }

void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

// mt19937_64 per the standard's parameters, hand-rolled so the raw stream is
// pinned independent of <random> implementation details.
namespace {
constexpr std::uint64_t kMtLowerMask = 0x7fffffffULL;
constexpr std::uint64_t kMtUpperMask = ~kMtLowerMask;
}  // namespace

void Rng::reseed() {
  mt_[0] = state_;
  for (int i = 1; i < 312; ++i) {
    mt_[i] = 6364136223846793005ULL * (mt_[i - 1] ^ (mt_[i - 1] >> 62)) + std::uint64_t(i);
  }
  mt_pos_ = 312;
}

std::uint64_t Rng::next_u64() {
  if (mt_pos_ >= 312) {
    if (mt_pos_ == 313) reseed();
    for (int i = 0; i < 312; ++i) {
      std::uint64_t x = (mt_[i] & kMtUpperMask) | (mt_[(i + 1) % 312] & kMtLowerMask);
      std::uint64_t xa = x >> 1;
      if (x & 1) xa ^= 0xB5026F5AA96619E9ULL;
      mt_[i] = mt_[(i + 156) % 312] ^ xa;
    }
    mt_pos_ = 0;
  }
  std::uint64_t y = mt_[mt_pos_++];
  y ^= (y >> 29) & 0x5555555555555555ULL;
  y ^= (y << 17) & 0x71D67FFFEDA60000ULL;
  y ^= (y << 37) & 0xFFF7EEE000000000ULL;
  y ^= y >> 43;
  return y;
}

double Rng::uniform() {
  // 53-bit mantissa in [0, 1)
  return double(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 6.283185307179586476925286766559 * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::size_t Rng::index(std::size_t n) {
  // modulo bias is irrelevant at the sizes used here
  return n ? std::size_t(next_u64() % n) : 0;
}

namespace {
std::atomic<int> g_threads{0};

int default_threads() {
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : int(hc);
}
}  // namespace

void set_num_threads(int n) { g_threads.store(n > 0 ? n : 0); }

int num_threads() {
  int n = g_threads.load();
  return n > 0 ? n : default_threads();
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  std::size_t workers = std::size_t(num_threads());
  if (workers > n) workers = n;
  if (workers <= 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    std::size_t begin = w * chunk;
    std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace dccnet
