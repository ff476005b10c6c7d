#pragma once

#include <cstddef>
#include <functional>

namespace isacbeam {

// Worker cap from ISAC_BEAMSIM_THREADS (unset or 0 = hardware concurrency).
std::size_t configured_workers();

// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index is
// processed exactly once; the first exception is rethrown after all
// workers finish.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace isacbeam
