#include "prf/index.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "prf/error.hpp"
#include "prf/util.hpp"

namespace prf {
namespace {

static_assert(std::endian::native == std::endian::little,
              "index serialization assumes a little-endian host");

constexpr char kIndexMagic[] = "PRFIDX1";
constexpr std::size_t kIndexMagicLen = 7;

std::atomic<std::uint64_t> g_search_calls{0};

// Appends the serialized form (everything except the trailing checksum).
class Writer {
 public:
  explicit Writer(std::vector<char>& out) : out_(out) {}
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    out_.insert(out_.end(), c, c + n);
  }
  template <typename T>
  void pod(const T& v) {
    bytes(&v, sizeof(T));
  }

 private:
  std::vector<char>& out_;
};

class Reader {
 public:
  Reader(const std::vector<char>& in, std::size_t pos) : in_(in), pos_(pos) {}
  void bytes(void* p, std::size_t n) {
    if (n > in_.size() - pos_) throw InputError("corrupt index");
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  std::size_t remaining() const { return in_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  const std::vector<char>& in_;
  std::size_t pos_;
};

void serialize_body(std::size_t dim, const std::vector<std::string>& ids,
                    const std::vector<double>& values, std::vector<char>& out) {
  Writer w(out);
  w.bytes(kIndexMagic, kIndexMagicLen);
  w.pod(static_cast<std::uint32_t>(dim));
  w.pod(static_cast<std::uint32_t>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    w.pod(static_cast<std::uint32_t>(ids[i].size()));
    w.bytes(ids[i].data(), ids[i].size());
    for (std::size_t d = 0; d < dim; ++d) w.pod(static_cast<float>(values[i * dim + d]));
  }
}

}  // namespace

VectorIndex VectorIndex::build(std::vector<std::pair<std::string, Embedding>> pairs) {
  if (pairs.empty()) throw InputError("cannot build an empty index");
  VectorIndex idx;
  idx.dim_ = pairs.front().second.dim();
  if (idx.dim_ == 0) throw InputError("index vectors must have dim >= 1");
  idx.ids_.reserve(pairs.size());
  idx.values_.reserve(pairs.size() * idx.dim_);
  for (auto& [id, emb] : pairs) {
    if (emb.dim() != idx.dim_) {
      throw InputError("dimension mismatch for doc_id " + id + ": " + std::to_string(emb.dim()) +
                       " vs " + std::to_string(idx.dim_));
    }
    if (!idx.position_.emplace(id, idx.ids_.size()).second) {
      throw InputError("duplicate doc_id " + id);
    }
    for (double v : emb.values) idx.values_.push_back(static_cast<double>(static_cast<float>(v)));
    idx.ids_.push_back(std::move(id));
  }
  idx.checksum_ = idx.compute_checksum();
  return idx;
}

std::uint64_t VectorIndex::compute_checksum() const {
  std::vector<char> body;
  serialize_body(dim_, ids_, values_, body);
  Fnv1a64 h;
  h.update(body.data(), body.size());
  return h.digest();
}

std::span<const double> VectorIndex::vector(const std::string& doc_id) const {
  const auto it = position_.find(doc_id);
  if (it == position_.end()) throw InputError("doc_id not in index: " + doc_id);
  return vector(it->second);
}

bool VectorIndex::contains(const std::string& doc_id) const {
  return position_.find(doc_id) != position_.end();
}

std::vector<SearchResult> VectorIndex::search(std::span<const double> query,
                                              std::size_t k) const {
  g_search_calls.fetch_add(1, std::memory_order_relaxed);
  if (query.size() != dim_) {
    throw InputError("dimension mismatch: query " + std::to_string(query.size()) + " vs index " +
                     std::to_string(dim_));
  }
  if (k < 1) throw InputError("search k must be >= 1");
  const std::size_t n = ids_.size();
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) scores[i] = score(query, vector(i));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids_[a] < ids_[b];
  };
  const std::size_t top = std::min(k, n);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                    better);

  std::vector<SearchResult> out;
  out.reserve(top);
  for (std::size_t r = 0; r < top; ++r) {
    out.push_back({ids_[order[r]], scores[order[r]], static_cast<int>(r + 1)});
  }
  return out;
}

void VectorIndex::save(const std::filesystem::path& path) const {
  std::vector<char> body;
  serialize_body(dim_, ids_, values_, body);
  Writer(body).pod(checksum_);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!out) throw Error("write failed: " + path.string());
}

VectorIndex VectorIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("no such file: " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  if (bytes.size() < kIndexMagicLen || std::memcmp(bytes.data(), kIndexMagic, kIndexMagicLen) != 0) {
    throw InputError("not an index file");
  }
  Reader r(bytes, kIndexMagicLen);
  VectorIndex idx;
  idx.dim_ = r.pod<std::uint32_t>();
  const auto count = r.pod<std::uint32_t>();
  if (idx.dim_ == 0 || count == 0) throw InputError("corrupt index");
  // Each record needs at least 4 + 4 * dim bytes; reject impossible counts early.
  if (static_cast<std::uint64_t>(count) * (4 + 4 * static_cast<std::uint64_t>(idx.dim_)) >
      r.remaining()) {
    throw InputError("corrupt index");
  }
  idx.ids_.reserve(count);
  idx.values_.reserve(static_cast<std::size_t>(count) * idx.dim_);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.pod<std::uint32_t>();
    if (len > r.remaining()) throw InputError("corrupt index");
    std::string id(len, '\0');
    r.bytes(id.data(), len);
    for (std::size_t d = 0; d < idx.dim_; ++d) idx.values_.push_back(r.pod<float>());
    if (!idx.position_.emplace(id, idx.ids_.size()).second) throw InputError("corrupt index");
    idx.ids_.push_back(std::move(id));
  }
  const auto stored = r.pod<std::uint64_t>();
  if (r.remaining() != 0) throw InputError("corrupt index");
  idx.checksum_ = idx.compute_checksum();
  if (idx.checksum_ != stored) throw InputError("corrupt index");
  return idx;
}

bool operator==(const VectorIndex& a, const VectorIndex& b) {
  return a.dim_ == b.dim_ && a.ids_ == b.ids_ && a.values_ == b.values_ &&
         a.checksum_ == b.checksum_;
}

namespace instrumentation {
std::uint64_t search_calls() noexcept { return g_search_calls.load(); }
void reset_search_calls() noexcept { g_search_calls.store(0); }
}  // namespace instrumentation

}  // namespace prf
