#pragma once

#include <cstdint>
#include <functional>
#include <tuple>
#include <utility>
#include <vector>

#include "converge/matrix_kit.hpp"

namespace converge {

struct Box {
  std::vector<std::pair<double, double>> axes;  // per-axis [lo, hi]
  int dim() const { return static_cast<int>(axes.size()); }
  static Box cube(int n, double lo, double hi);
  double halfwidth() const;  // max over axes of (hi-lo)/2
};

// Stateless per-index seeding: identical draws regardless of worker layout.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

// Small deterministic generator (splitmix64 stream).
struct Rng {
  std::uint64_t state;
  explicit Rng(std::uint64_t seed) : state(seed) {}
  std::uint64_t next_u64();
  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);   // [lo, hi)
  long long uniform_int(long long lo, long long hi);  // inclusive
};

// Runs fn(i) for i in [0, count) over `threads` workers (0 = hardware).
// Work is chunked contiguously; callers must write to index-addressed slots.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn);

int resolve_threads(int requested);

struct PointGrid {
  std::vector<std::pair<long long, Vec>> pts;  // (k, x)
  std::size_t size() const { return pts.size(); }
};

// Tensor grid (axis_points per axis, k range inclusive) for dim <= 2;
// Latin hypercube of `budget` samples with k drawn uniformly otherwise.
PointGrid make_point_grid(const Box& box, std::pair<long long, long long> k_range,
                          int axis_points, int budget, std::uint64_t seed);

// Random (k, x1, x2) pair grid of the given size.
struct PairGrid {
  std::vector<std::tuple<long long, Vec, Vec>> pts;
  std::size_t size() const { return pts.size(); }
};
PairGrid make_pair_grid(const Box& box, std::pair<long long, long long> k_range, int budget,
                        std::uint64_t seed);

}  // namespace converge
