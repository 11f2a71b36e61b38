#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "prf/encoder.hpp"

namespace prf {

struct SearchResult {
  std::string doc_id;
  double score = 0.0;
  int rank = 0;  // 1-based
  friend bool operator==(const SearchResult&, const SearchResult&) = default;
};

/// Immutable document-embedding store with exact maximum-inner-product
/// search. Vectors are held as float32-representable doubles so that the
/// on-disk float32 form round-trips exactly.
class VectorIndex {
 public:
  /// Throws prf::InputError on an empty input, a dimension mismatch or
  /// "duplicate doc_id <id>".
  static VectorIndex build(std::vector<std::pair<std::string, Embedding>> pairs);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return ids_.size(); }
  const std::string& doc_id(std::size_t i) const { return ids_[i]; }
  std::span<const double> vector(std::size_t i) const {
    return {values_.data() + i * dim_, dim_};
  }
  /// Throws prf::InputError when the id is not indexed.
  std::span<const double> vector(const std::string& doc_id) const;
  bool contains(const std::string& doc_id) const;

  /// FNV-1a digest of the serialized header and records.
  std::uint64_t checksum() const noexcept { return checksum_; }

  /// Top min(k, size) by score descending, ties by doc_id ascending. Exact.
  std::vector<SearchResult> search(std::span<const double> query, std::size_t k) const;
  std::vector<SearchResult> search(const Embedding& query, std::size_t k) const {
    return search(std::span<const double>(query.values), k);
  }

  /// "PRFIDX1", uint32 dim, uint32 count, then per entry uint32 id length,
  /// id bytes, dim x float32; then uint64 checksum. Little-endian.
  void save(const std::filesystem::path& path) const;
  /// Throws prf::InputError "not an index file" or "corrupt index".
  static VectorIndex load(const std::filesystem::path& path);

  friend bool operator==(const VectorIndex&, const VectorIndex&);

 private:
  VectorIndex() = default;
  std::uint64_t compute_checksum() const;

  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<double> values_;
  std::unordered_map<std::string, std::size_t> position_;
  std::uint64_t checksum_ = 0;
};

namespace instrumentation {
/// Process-wide count of VectorIndex::search calls.
std::uint64_t search_calls() noexcept;
void reset_search_calls() noexcept;
}  // namespace instrumentation

}  // namespace prf
