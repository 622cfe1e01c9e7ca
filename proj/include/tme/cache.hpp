#pragma once

// Content-keyed store for computed embedding matrices. Entries are written
// atomically (temp file + rename) and verified by content hash on read, so
// a hit is bit-identical to recomputation or treated as a miss.

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>

#include "tme/common.hpp"

namespace tme::cache {

// TIME_CACHE_DIR overrides the caller's fallback directory.
std::string resolve_root(const std::string& fallback);

uint64_t matrix_hash(const Eigen::MatrixXd& m);

class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::string root);

  const std::string& root() const { return root_; }
  std::string path_for(const std::string& key) const;

  std::optional<Eigen::MatrixXd> load(const std::string& key) const;
  void store(const std::string& key, const Eigen::MatrixXd& m) const;
  Eigen::MatrixXd get_or_compute(const std::string& key,
                                 const std::function<Eigen::MatrixXd()>& compute) const;

 private:
  std::string root_;
};

// Canonical cache-key builder: "name=hash|name=hash|..." in call order.
class KeyBuilder {
 public:
  KeyBuilder& add(const std::string& name, uint64_t content_hash);
  KeyBuilder& add(const std::string& name, const std::string& value);
  std::string str() const { return key_; }

 private:
  std::string key_;
};

}  // namespace tme::cache
