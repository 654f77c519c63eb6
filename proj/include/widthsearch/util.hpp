#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace widthsearch {

// Base for every error this library reports.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

uint64_t fnv1a64(std::string_view bytes, uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(uint64_t value);
uint64_t parse_hex64(std::string_view text);

// Named, deterministic substream of a root seed. Two different names never
// share state, and the stream does not depend on how many draws other
// substreams have consumed.
Rng substream(uint64_t root_seed, std::string_view name);
uint64_t derive_seed(uint64_t root_seed, std::string_view name);

// Worker count: WIDTHSEARCH_THREADS when set and positive, otherwise the
// hardware concurrency.
int thread_count();

// Runs fn(i) for i in [0, n). Each index is visited exactly once; callers
// write results into per-index slots so the outcome is independent of
// scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

void log_warn(std::string_view message);

}  // namespace widthsearch
