#include "tme/common.hpp"

#include <cmath>
#include <cstdio>
#include <mutex>

namespace tme {

std::string hex64(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

std::vector<long> Rng::sample_without_replacement(long n, long k) {
  if (k > n) throw EngineError("sample_without_replacement: k > n");
  std::vector<long> pool(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
  // partial Fisher-Yates: first k slots end up with the sample
  for (long i = 0; i < k; ++i) {
    long j = static_cast<long>(uniform_int(i, n - 1));
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  pool.resize(static_cast<std::size_t>(k));
  return pool;
}

namespace {
std::mutex g_warn_mutex;
std::function<void(const std::string&)> g_warn_hook;
}  // namespace

void warn(const std::string& msg) {
  std::lock_guard<std::mutex> lock(g_warn_mutex);
  if (g_warn_hook) {
    g_warn_hook(msg);
  } else {
    std::fprintf(stderr, "[warn] %s\n", msg.c_str());
  }
}

void set_warn_hook(std::function<void(const std::string&)> hook) {
  std::lock_guard<std::mutex> lock(g_warn_mutex);
  g_warn_hook = std::move(hook);
}

}  // namespace tme
