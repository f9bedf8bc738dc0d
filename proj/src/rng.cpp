#include "feataug/rng.hpp"

#include <cmath>
#include <numbers>

namespace feataug {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t child_key(std::uint64_t key, std::uint64_t label) {
  return mix64(key ^ mix64(label + kGolden) ^ 0x5851f42d4c957f2dULL);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::vector<std::uint64_t> path)
    : seed_(seed), path_(std::move(path)), key_(mix64(seed + kGolden)) {
  for (std::uint64_t label : path_) key_ = child_key(key_, label);
}

RngStream RngStream::derive(std::uint64_t label) const {
  RngStream child(*this);
  child.path_.push_back(label);
  child.key_ = child_key(key_, label);
  child.counter_ = 0;
  child.has_spare_ = false;
  return child;
}

RngStream RngStream::derive(std::initializer_list<std::uint64_t> labels) const {
  RngStream s = *this;
  for (std::uint64_t l : labels) s = s.derive(l);
  return s;
}

std::uint64_t RngStream::next_u64() {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

double RngStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::int64_t RngStream::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi <= lo) return lo;
  const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
  if (range == 0) return static_cast<std::int64_t>(next_u64());
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return lo + static_cast<std::int64_t>(v % range);
}

bool RngStream::bernoulli(double p) { return uniform() < p; }

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

}  // namespace feataug
