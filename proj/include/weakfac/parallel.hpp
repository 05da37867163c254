#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace wf {

// Shard [0, count) into `workers` contiguous chunks and run `body(begin, end)`
// on each. Every chunk writes disjoint output slots, so results are identical
// for any worker count; that property is what the determinism contract leans on.
template <class Body>
void parallel_for(std::size_t count, int workers, Body&& body) {
  if (count == 0) return;
  workers = std::max(1, workers);
  std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(workers), count);
  if (w <= 1) {
    body(std::size_t{0}, count);
    return;
  }
  std::size_t chunk = (count + w - 1) / w;
  std::vector<std::thread> pool;
  pool.reserve(w);
  for (std::size_t k = 0; k < w; ++k) {
    std::size_t b = k * chunk;
    std::size_t e = std::min(count, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&body, b, e] { body(b, e); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace wf
