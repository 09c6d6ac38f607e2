#include "converge/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <thread>

namespace converge {

Box Box::cube(int n, double lo, double hi) {
  Box b;
  b.axes.assign(static_cast<std::size_t>(n), {lo, hi});
  return b;
}

double Box::halfwidth() const {
  double w = 0.0;
  for (const auto& [lo, hi] : axes) w = std::max(w, (hi - lo) / 2.0);
  return w;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::uint64_t Rng::next_u64() {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

long long Rng::uniform_int(long long lo, long long hi) {
  if (hi <= lo) return lo;
  auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<long long>(next_u64() % span);
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
  int workers = resolve_threads(threads);
  if (workers <= 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  workers = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(workers), count));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  std::size_t chunk = (count + workers - 1) / workers;
  std::exception_ptr error;
  std::mutex error_mutex;
  for (int w = 0; w < workers; ++w) {
    std::size_t lo = static_cast<std::size_t>(w) * chunk;
    std::size_t hi = std::min(count, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> g(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

PointGrid make_point_grid(const Box& box, std::pair<long long, long long> k_range,
                          int axis_points, int budget, std::uint64_t seed) {
  const int n = box.dim();
  if (n < 1) throw InvalidShape("make_point_grid: empty box");
  if (k_range.second < k_range.first) throw InvalidWindow("make_point_grid: bad k range");
  PointGrid grid;

  if (n <= 2) {
    // Tensor product over axes, every integer k in range.
    std::vector<std::vector<double>> axes(static_cast<std::size_t>(n));
    for (int d = 0; d < n; ++d) {
      auto [lo, hi] = box.axes[static_cast<std::size_t>(d)];
      for (int i = 0; i < axis_points; ++i) {
        double t = axis_points == 1 ? 0.5 : static_cast<double>(i) / (axis_points - 1);
        axes[static_cast<std::size_t>(d)].push_back(lo + (hi - lo) * t);
      }
    }
    for (long long k = k_range.first; k <= k_range.second; ++k) {
      if (n == 1) {
        for (double x : axes[0]) grid.pts.emplace_back(k, Vec{x});
      } else {
        for (double x : axes[0])
          for (double y : axes[1]) grid.pts.emplace_back(k, Vec{x, y});
      }
    }
    return grid;
  }

  // Latin hypercube: one stratum per sample per axis, axis-wise shuffles.
  std::vector<std::vector<int>> perms(static_cast<std::size_t>(n));
  for (int d = 0; d < n; ++d) {
    auto& p = perms[static_cast<std::size_t>(d)];
    p.resize(static_cast<std::size_t>(budget));
    for (int i = 0; i < budget; ++i) p[static_cast<std::size_t>(i)] = i;
    Rng rng(mix_seed(seed, 0x10000u + static_cast<std::uint64_t>(d)));
    for (int i = budget - 1; i > 0; --i) {
      int j = static_cast<int>(rng.uniform_int(0, i));
      std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
    }
  }
  for (int i = 0; i < budget; ++i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    Vec x(static_cast<std::size_t>(n));
    for (int d = 0; d < n; ++d) {
      auto [lo, hi] = box.axes[static_cast<std::size_t>(d)];
      double cell = (perms[static_cast<std::size_t>(d)][static_cast<std::size_t>(i)] +
                     rng.uniform()) /
                    budget;
      x[static_cast<std::size_t>(d)] = lo + (hi - lo) * cell;
    }
    long long k = rng.uniform_int(k_range.first, k_range.second);
    grid.pts.emplace_back(k, std::move(x));
  }
  return grid;
}

PairGrid make_pair_grid(const Box& box, std::pair<long long, long long> k_range, int budget,
                        std::uint64_t seed) {
  const int n = box.dim();
  PairGrid grid;
  grid.pts.reserve(static_cast<std::size_t>(budget));
  for (int i = 0; i < budget; ++i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    Vec a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
    for (int d = 0; d < n; ++d) {
      auto [lo, hi] = box.axes[static_cast<std::size_t>(d)];
      a[static_cast<std::size_t>(d)] = rng.uniform(lo, hi);
      b[static_cast<std::size_t>(d)] = rng.uniform(lo, hi);
    }
    long long k = rng.uniform_int(k_range.first, k_range.second);
    grid.pts.emplace_back(k, std::move(a), std::move(b));
  }
  return grid;
}

}  // namespace converge
