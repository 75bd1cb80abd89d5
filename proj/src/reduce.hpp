#pragma once

// Batch gradient accumulation whose floating-point summation order depends
// only on the batch size, never on the number of worker threads.

#include <cstddef>
#include <vector>

#include "prood/nn.hpp"
#include "prood/parallel.hpp"

namespace prood::detail {

inline constexpr std::size_t kReduceChunk = 8;

// fn(i, grads) adds sample i's parameter gradient into grads and returns its loss term.
template <typename T, typename Fn>
double accumulate_chunked(const BasicNetwork<T>& net, std::size_t n, ParamGrads<T>& out, Fn&& fn) {
  const std::size_t chunks = (n + kReduceChunk - 1) / kReduceChunk;
  std::vector<ParamGrads<T>> parts(chunks);
  std::vector<double> losses(chunks, 0.0);
  parallel_for(chunks, [&](std::size_t c) {
    parts[c] = zero_grads(net);
    const std::size_t end = std::min(n, (c + 1) * kReduceChunk);
    for (std::size_t i = c * kReduceChunk; i < end; ++i) losses[c] += fn(i, parts[c]);
  });
  double total = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    for (std::size_t p = 0; p < out.size(); ++p) axpy(T{1}, parts[c][p], out[p]);
    total += losses[c];
  }
  return total;
}

}  // namespace prood::detail
