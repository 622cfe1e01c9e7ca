#include "tme/cache.hpp"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <unistd.h>

namespace tme::cache {

namespace fs = std::filesystem;

namespace {
constexpr char kMagic[8] = {'T', 'M', 'E', 'E', 'M', 'B', '0', '\0'};
}

std::string resolve_root(const std::string& fallback) {
  if (const char* env = std::getenv("TIME_CACHE_DIR"); env && *env) return env;
  return fallback;
}

uint64_t matrix_hash(const Eigen::MatrixXd& m) {
  Fnv f;
  const long r = m.rows(), c = m.cols();
  f.update_pod(r);
  f.update_pod(c);
  for (long i = 0; i < r; ++i)
    for (long j = 0; j < c; ++j) f.update_pod(m(i, j));
  return f.digest();
}

EmbeddingCache::EmbeddingCache(std::string root) : root_(std::move(root)) {
  if (root_.empty()) throw EngineError("embedding cache root is empty");
  fs::create_directories(root_);
}

std::string EmbeddingCache::path_for(const std::string& key) const {
  return (fs::path(root_) / (hex64(Fnv::of_string(key)) + ".emb")).string();
}

std::optional<Eigen::MatrixXd> EmbeddingCache::load(const std::string& key) const {
  const std::string path = path_for(key);
  std::ifstream is(path, std::ios::binary);
  if (!is) return std::nullopt;
  char magic[8];
  is.read(magic, sizeof(magic));
  uint64_t rows = 0, cols = 0;
  is.read(reinterpret_cast<char*>(&rows), sizeof(rows));
  is.read(reinterpret_cast<char*>(&cols), sizeof(cols));
  if (!is || std::memcmp(magic, kMagic, sizeof(magic)) != 0 || rows > (1ULL << 32) ||
      cols > (1ULL << 32)) {
    warn("ignoring malformed cache entry: " + path);
    return std::nullopt;
  }
  Eigen::MatrixXd m(static_cast<long>(rows), static_cast<long>(cols));
  for (long i = 0; i < m.rows(); ++i)
    for (long j = 0; j < m.cols(); ++j)
      is.read(reinterpret_cast<char*>(&m(i, j)), sizeof(double));
  uint64_t stored = 0;
  is.read(reinterpret_cast<char*>(&stored), sizeof(stored));
  if (!is || stored != matrix_hash(m)) {
    warn("ignoring corrupt cache entry: " + path);
    return std::nullopt;
  }
  return m;
}

void EmbeddingCache::store(const std::string& key, const Eigen::MatrixXd& m) const {
  const std::string path = path_for(key);
  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw EngineError("cannot write cache entry: " + tmp);
    os.write(kMagic, sizeof(kMagic));
    const uint64_t rows = static_cast<uint64_t>(m.rows()), cols = static_cast<uint64_t>(m.cols());
    os.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    os.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
    for (long i = 0; i < m.rows(); ++i)
      for (long j = 0; j < m.cols(); ++j)
        os.write(reinterpret_cast<const char*>(&m(i, j)), sizeof(double));
    const uint64_t h = matrix_hash(m);
    os.write(reinterpret_cast<const char*>(&h), sizeof(h));
    if (!os) throw EngineError("cache write failed: " + tmp);
  }
  fs::rename(tmp, path);
}

Eigen::MatrixXd EmbeddingCache::get_or_compute(
    const std::string& key, const std::function<Eigen::MatrixXd()>& compute) const {
  if (auto hit = load(key)) return *hit;
  Eigen::MatrixXd m = compute();
  store(key, m);
  return m;
}

KeyBuilder& KeyBuilder::add(const std::string& name, uint64_t content_hash) {
  return add(name, hex64(content_hash));
}

KeyBuilder& KeyBuilder::add(const std::string& name, const std::string& value) {
  if (!key_.empty()) key_ += '|';
  key_ += name;
  key_ += '=';
  key_ += value;
  return *this;
}

}  // namespace tme::cache
