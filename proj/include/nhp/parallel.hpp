// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace nhp {

// Thread count: NHP_THREADS wins when set, then a positive request, then the
// hardware concurrency.
int resolve_threads(int requested);

// Runs fn(begin, end) over contiguous chunks of [0, n). Chunks are fixed by n
// and the thread count only, and each index is handled by exactly one call,
// so results that are pure per index do not depend on scheduling.
void parallel_for(std::size_t n, int threads,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace nhp
