#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>

namespace prf {

/// FNV-1a, 64-bit.
class Fnv1a64 {
 public:
  void update(std::span<const std::byte> bytes) noexcept;
  void update(const void* data, std::size_t size) noexcept;
  std::uint64_t digest() const noexcept { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

/// Derives an independent sub-seed from a root seed and a label such as
/// "shuffle" or "negatives".
std::uint64_t derive_seed(std::uint64_t root, std::string_view label,
                          std::uint64_t index = 0) noexcept;

/// Worker count, bounded by the PRF_THREADS environment variable.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads. Each index is
/// processed exactly once; callers own result placement so output order does
/// not depend on scheduling. The first exception thrown is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace prf
