#include "man/threads.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>

namespace man {

namespace {
std::atomic<int> g_override{0};

int env_threads() {
    const char* v = std::getenv("MAN_THREADS");
    if (!v) return 0;
    int n = std::atoi(v);
    return n > 0 ? n : 0;
}
}  // namespace

int num_threads() {
    int n = g_override.load(std::memory_order_relaxed);
    if (n > 0) return n;
    static const int from_env = env_threads();
    if (from_env > 0) return from_env;
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

void set_num_threads(int n) { g_override.store(n > 0 ? n : 0, std::memory_order_relaxed); }

}  // namespace man
