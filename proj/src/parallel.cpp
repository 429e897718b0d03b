#include "posespace/parallel.h"

#include <atomic>

namespace posespace {

namespace {
std::atomic<int> g_max_threads{1};
}

void set_max_threads(int threads) { g_max_threads = std::max(1, threads); }

int max_threads() { return g_max_threads; }

}  // namespace posespace
