#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "bytegen/corpus.hpp"
#include "bytegen/hash.hpp"
#include "bytegen/io.hpp"

namespace bytegen {

// N is the *maximum* gram length: by default every contiguous substring of
// length 1..N is counted. ExactOnly restricts to length-N grams (the
// alternative reading, kept configurable).
enum class GramLengths { UpToN, ExactOnly };

// Visits every counted n-gram of one sample.
template <typename Visitor>
void for_each_ngram(std::span<const std::uint8_t> sample, std::size_t max_n,
                    Visitor&& visit,
                    GramLengths lengths = GramLengths::UpToN) {
  const std::size_t s = sample.size();
  const std::size_t lo = lengths == GramLengths::ExactOnly
                             ? std::min(max_n, s)
                             : std::size_t{1};
  const std::size_t hi = std::min(max_n, s);
  for (std::size_t n = lo; n <= hi; ++n)
    for (std::size_t i = 0; i + n <= s; ++i) visit(sample.subspan(i, n));
}

inline std::vector<std::vector<std::uint8_t>> enumerate_ngrams(
    std::span<const std::uint8_t> sample, std::size_t max_n,
    GramLengths lengths = GramLengths::UpToN) {
  std::vector<std::vector<std::uint8_t>> out;
  for_each_ngram(
      sample, max_n,
      [&](std::span<const std::uint8_t> g) {
        out.emplace_back(g.begin(), g.end());
      },
      lengths);
  return out;
}

// gram -> bin index in 0..M-1.
inline std::uint64_t hash_ngram(std::span<const std::uint8_t> gram,
                                std::uint64_t m_bins) {
  return fnv1a64(gram) % m_bins;
}

// Raw-byte-string keyed histogram; the oracle counterpart of the hashed one.
class ExactNgramHistogram {
 public:
  ExactNgramHistogram(std::size_t max_n, GramLengths lengths)
      : max_n_(max_n), lengths_(lengths) {}

  void add_sample(std::span<const std::uint8_t> sample) {
    for_each_ngram(
        sample, max_n_,
        [&](std::span<const std::uint8_t> g) {
          std::string key(reinterpret_cast<const char*>(g.data()), g.size());
          ++counts_[key];
          ++total_;
        },
        lengths_);
  }

  void merge(const ExactNgramHistogram& other) {
    for (const auto& [k, v] : other.counts_) counts_[k] += v;
    total_ += other.total_;
  }

  std::size_t max_n() const { return max_n_; }
  GramLengths lengths() const { return lengths_; }
  std::uint64_t total() const { return total_; }
  const std::unordered_map<std::string, std::uint64_t>& counts() const {
    return counts_;
  }

 private:
  std::size_t max_n_;
  GramLengths lengths_;
  std::unordered_map<std::string, std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

// M-bin hash-coded count table. Dense storage up to 2^26 bins (0.5 GiB of
// u64), sparse above that so the full-paper M = 1e9 stays feasible.
class HashedNgramHistogram {
 public:
  static constexpr std::uint64_t kDenseLimit = 1ull << 26;

  HashedNgramHistogram(std::size_t max_n, std::uint64_t m_bins,
                       GramLengths lengths = GramLengths::UpToN)
      : max_n_(max_n), m_bins_(m_bins), lengths_(lengths) {
    if (m_bins_ < 1) throw DataError("histogram needs M >= 1 bins");
    if (m_bins_ <= kDenseLimit) dense_.assign(m_bins_, 0);
  }

  void add_sample(std::span<const std::uint8_t> sample) {
    for_each_ngram(
        sample, max_n_,
        [&](std::span<const std::uint8_t> g) {
          add_bin(hash_ngram(g, m_bins_), 1);
        },
        lengths_);
  }

  void add_bin(std::uint64_t index, std::uint64_t count) {
    if (!dense_.empty())
      dense_[index] += count;
    else
      sparse_[index] += count;
    total_ += count;
  }

  void merge(const HashedNgramHistogram& other) {
    if (max_n_ != other.max_n_ || m_bins_ != other.m_bins_ ||
        lengths_ != other.lengths_)
      throw DataError("cannot merge histograms with different (N, M)");
    other.for_each_nonzero(
        [&](std::uint64_t i, std::uint64_t c) { add_bin(i, c); });
  }

  std::uint64_t bin(std::uint64_t index) const {
    if (!dense_.empty()) return dense_[index];
    auto it = sparse_.find(index);
    return it == sparse_.end() ? 0 : it->second;
  }

  // Visits nonzero bins; dense storage iterates in index order.
  template <typename Visitor>
  void for_each_nonzero(Visitor&& visit) const {
    if (!dense_.empty()) {
      for (std::uint64_t i = 0; i < dense_.size(); ++i)
        if (dense_[i] != 0) visit(i, dense_[i]);
    } else {
      for (const auto& [i, c] : sparse_) visit(i, c);
    }
  }

  std::size_t max_n() const { return max_n_; }
  std::uint64_t m_bins() const { return m_bins_; }
  GramLengths lengths() const { return lengths_; }
  std::uint64_t total() const { return total_; }

  // "NGH1" snapshot: magic, then N, M, total and (index, count) pairs as
  // little-endian u64.
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write histogram: " + path);
    write_magic(out, "NGH1");
    write_u64le(out, max_n_);
    write_u64le(out, m_bins_);
    write_u64le(out, total_);
    std::vector<std::pair<std::uint64_t, std::uint64_t>> pairs;
    for_each_nonzero([&](std::uint64_t i, std::uint64_t c) {
      pairs.emplace_back(i, c);
    });
    std::sort(pairs.begin(), pairs.end());
    for (const auto& [i, c] : pairs) {
      write_u64le(out, i);
      write_u64le(out, c);
    }
    if (!out) throw DataError("error writing histogram: " + path);
  }

  static HashedNgramHistogram load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open histogram: " + path);
    expect_magic(in, "NGH1", path);
    std::uint64_t n = read_u64le(in);
    std::uint64_t m = read_u64le(in);
    std::uint64_t total = read_u64le(in);
    HashedNgramHistogram h(n, m);
    std::uint64_t seen = 0;
    while (in.peek() != std::char_traits<char>::eof()) {
      std::uint64_t i = read_u64le(in);
      std::uint64_t c = read_u64le(in);
      if (i >= m) throw DataError("histogram bin index out of range: " + path);
      h.add_bin(i, c);
      seen += c;
    }
    if (seen != total)
      throw DataError("histogram total does not match records: " + path);
    return h;
  }

 private:
  std::size_t max_n_;
  std::uint64_t m_bins_;
  GramLengths lengths_;
  std::vector<std::uint64_t> dense_;
  std::unordered_map<std::uint64_t, std::uint64_t> sparse_;
  std::uint64_t total_ = 0;
};

// Parallel build: workers count disjoint contiguous shards into private
// histograms, merged in shard order. Bin-wise addition commutes, so the
// result is bit-identical for any thread count.
inline HashedNgramHistogram build_histogram(
    std::span<const ByteSample> samples, std::size_t max_n,
    std::uint64_t m_bins, GramLengths lengths = GramLengths::UpToN,
    int threads = 1) {
  if (samples.empty()) throw DataError("cannot build histogram: no samples");
  if (threads <= 1 || samples.size() < 2) {
    HashedNgramHistogram h(max_n, m_bins, lengths);
    for (const auto& s : samples) h.add_sample(s);
    return h;
  }
  const std::size_t workers =
      std::min<std::size_t>(threads, samples.size());
  std::vector<HashedNgramHistogram> parts(
      workers, HashedNgramHistogram(max_n, m_bins, lengths));
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      const std::size_t lo = samples.size() * w / workers;
      const std::size_t hi = samples.size() * (w + 1) / workers;
      for (std::size_t i = lo; i < hi; ++i) parts[w].add_sample(samples[i]);
    });
  }
  for (auto& t : pool) t.join();
  HashedNgramHistogram h = std::move(parts[0]);
  for (std::size_t w = 1; w < workers; ++w) h.merge(parts[w]);
  return h;
}

inline ExactNgramHistogram build_exact(std::span<const ByteSample> samples,
                                       std::size_t max_n,
                                       GramLengths lengths =
                                           GramLengths::UpToN) {
  if (samples.empty()) throw DataError("cannot build histogram: no samples");
  ExactNgramHistogram h(max_n, lengths);
  for (const auto& s : samples) h.add_sample(s);
  return h;
}

// Number of (gram, gram) pairs sharing a bin, i.e. distinct grams beyond the
// first per bin. Zero means the hashed histogram is a relabeling of the
// exact one.
inline std::uint64_t count_hash_collisions(const ExactNgramHistogram& exact,
                                           std::uint64_t m_bins) {
  std::unordered_map<std::uint64_t, std::uint64_t> distinct_per_bin;
  for (const auto& [gram, c] : exact.counts()) {
    auto bytes = std::span<const std::uint8_t>(
        reinterpret_cast<const std::uint8_t*>(gram.data()), gram.size());
    ++distinct_per_bin[hash_ngram(bytes, m_bins)];
  }
  std::uint64_t collisions = 0;
  for (const auto& [bin, d] : distinct_per_bin) collisions += d - 1;
  return collisions;
}

// Total variation distance between two frequency histograms, in [0, 1].
// Terms are summed in ascending bin order regardless of argument order, so
// tvd(p, q) and tvd(q, p) are bit-identical.
inline double tvd(const HashedNgramHistogram& p,
                  const HashedNgramHistogram& q) {
  if (p.max_n() != q.max_n() || p.m_bins() != q.m_bins() ||
      p.lengths() != q.lengths())
    throw DataError("tvd requires matching (N, M) configuration");
  if (p.total() == 0 || q.total() == 0)
    throw DataError("tvd requires nonempty histograms");
  const double tp = static_cast<double>(p.total());
  const double tq = static_cast<double>(q.total());
  std::vector<std::uint64_t> indices;
  p.for_each_nonzero(
      [&](std::uint64_t i, std::uint64_t) { indices.push_back(i); });
  q.for_each_nonzero(
      [&](std::uint64_t i, std::uint64_t) { indices.push_back(i); });
  std::sort(indices.begin(), indices.end());
  indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
  double sum = 0.0;
  for (std::uint64_t i : indices)
    sum += std::abs(static_cast<double>(p.bin(i)) / tp -
                    static_cast<double>(q.bin(i)) / tq);
  return 0.5 * sum;
}

inline double tvd(const ExactNgramHistogram& p, const ExactNgramHistogram& q) {
  if (p.max_n() != q.max_n() || p.lengths() != q.lengths())
    throw DataError("tvd requires matching N configuration");
  if (p.total() == 0 || q.total() == 0)
    throw DataError("tvd requires nonempty histograms");
  const double tp = static_cast<double>(p.total());
  const double tq = static_cast<double>(q.total());
  std::vector<std::string_view> keys;
  keys.reserve(p.counts().size() + q.counts().size());
  for (const auto& [k, c] : p.counts()) keys.emplace_back(k);
  for (const auto& [k, c] : q.counts())
    if (!p.counts().contains(k)) keys.emplace_back(k);
  std::sort(keys.begin(), keys.end());
  double sum = 0.0;
  for (std::string_view k : keys) {
    auto pit = p.counts().find(std::string(k));
    auto qit = q.counts().find(std::string(k));
    const double pf =
        pit == p.counts().end() ? 0.0 : static_cast<double>(pit->second) / tp;
    const double qf =
        qit == q.counts().end() ? 0.0 : static_cast<double>(qit->second) / tq;
    sum += std::abs(pf - qf);
  }
  return 0.5 * sum;
}

struct NgtvdConfig {
  std::size_t max_n = 16;             // paper-scale: 256
  std::uint64_t m_bins = 1ull << 24;  // paper-scale: 1e9
  GramLengths lengths = GramLengths::UpToN;
  int threads = 1;
};

inline double ngtvd(std::span<const ByteSample> generated,
                    std::span<const ByteSample> reference,
                    const NgtvdConfig& cfg) {
  auto p = build_histogram(generated, cfg.max_n, cfg.m_bins, cfg.lengths,
                           cfg.threads);
  auto q = build_histogram(reference, cfg.max_n, cfg.m_bins, cfg.lengths,
                           cfg.threads);
  return tvd(p, q);
}

}  // namespace bytegen
