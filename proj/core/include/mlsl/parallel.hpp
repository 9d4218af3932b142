#pragma once

#include <functional>
#include <span>

namespace mlsl {

/// Worker count actually used: `requested` if > 0, else MLSL_THREADS env var,
/// else hardware concurrency (at least 1).
int effective_threads(int requested);

/// Runs fn(i) for i in [0, n). Work items must be independent; results keyed
/// by i so the schedule cannot influence outputs.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

/// Deterministic pairwise-tree summation. The tree shape depends only on the
/// element count, never on thread count or chunking.
double pairwise_sum(std::span<const double> xs);

}  // namespace mlsl
