#ifndef GPGRID_PARALLEL_HPP
#define GPGRID_PARALLEL_HPP

#include <cstddef>
#include <functional>

namespace gpgrid {

/// Worker count: the explicit request if positive, else the GPGRID_THREADS
/// environment variable, else std::thread::hardware_concurrency().
int resolve_threads(int requested = 0);

/// Runs body(i) for i in [0, count) on up to `threads` workers. Work items
/// are claimed dynamically; the first exception thrown by any item is
/// rethrown on the calling thread after all workers stop.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body, int threads = 0);

}  // namespace gpgrid

#endif  // GPGRID_PARALLEL_HPP
