#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "bytegen/corpus.hpp"
#include "bytegen/io.hpp"
#include "bytegen/rng.hpp"

namespace bytegen {

// Byte n-gram counting convention: every sample is conceptually preceded by
// n-1 virtual 0x00 bytes and followed by one terminal 0x00, so each sample
// contributes exactly s+1 windows per gram size. Start-of-text and
// end-of-text are then ordinary probabilistic events and generation can
// terminate by sampling the 0x00 byte.

using ByteDist = std::array<double, 256>;

struct BackoffStats {
  std::uint64_t queries = 0;
  std::uint64_t backoff_steps = 0;      // shorter-order / smaller-R retries
  std::uint64_t uniform_fallbacks = 0;  // reached the uniform distribution
};

namespace detail {

// Count table for one gram size: grams of exactly `size` bytes plus the
// cached per-context totals (context = gram minus its final byte).
struct SizeTable {
  std::size_t size = 0;
  std::unordered_map<std::string, std::uint64_t> counts;
  std::unordered_map<std::string, std::uint64_t> context_sums;

  void rebuild_context_sums() {
    context_sums.clear();
    for (const auto& [gram, c] : counts)
      context_sums[gram.substr(0, gram.size() - 1)] += c;
  }

  std::uint64_t approx_bytes() const {
    // hash-map node overhead dominates small keys; 64 bytes per entry is a
    // coarse but stable estimate for the memory budget check
    return (counts.size() + context_sums.size()) * (64 + size);
  }
};

// Counts all length-`size` windows of `sample` under the virtual-NUL
// convention, for sizes lo..hi.
inline void count_windows(std::span<const std::uint8_t> sample,
                          std::vector<SizeTable>& tables) {
  if (tables.empty()) return;
  const std::size_t max_pad = tables.back().size;  // sizes are ascending
  std::string padded(max_pad > 0 ? max_pad - 1 : 0, '\0');
  padded.append(reinterpret_cast<const char*>(sample.data()), sample.size());
  padded.push_back('\0');
  const std::size_t s = sample.size();
  for (auto& t : tables) {
    const std::size_t n = t.size;
    // window ending at event position i (i == s is the terminator)
    for (std::size_t i = 0; i <= s; ++i) {
      std::size_t end = (max_pad - 1) + i + 1;
      ++t.counts[padded.substr(end - n, n)];
    }
  }
}

// Last (n-1) bytes of the context, left-padded with virtual NULs.
inline std::string context_key(std::span<const std::uint8_t> context,
                               std::size_t n) {
  const std::size_t want = n - 1;
  std::string key;
  key.reserve(want);
  if (context.size() < want) key.assign(want - context.size(), '\0');
  const std::size_t take = std::min(context.size(), want);
  key.append(
      reinterpret_cast<const char*>(context.data() + context.size() - take),
      take);
  return key;
}

inline ByteDist uniform_dist() {
  ByteDist d;
  d.fill(1.0 / 256.0);
  return d;
}

}  // namespace detail

// Memory guard for count tables; training aborts cleanly instead of
// swapping when the estimate exceeds the budget.
struct MemoryBudgetExceeded : DataError {
  using DataError::DataError;
};

// Single-order model: Pr[y_i | history] = count(last n bytes) / sum over
// the final byte. Lower orders n-1..1 are kept for back-off when the
// denominator is zero; the last resort is uniform over 256 values.
class SimpleNgramModel {
 public:
  SimpleNgramModel() = default;

  static SimpleNgramModel train(const Corpus& corpus, std::size_t n,
                                std::uint64_t max_memory_bytes = 0) {
    if (n < 1) throw DataError("simple n-gram model needs n >= 1");
    if (corpus.samples.empty()) throw DataError("empty corpus");
    SimpleNgramModel m;
    m.n_ = n;
    for (std::size_t size = 1; size <= n; ++size)
      m.tables_.push_back(detail::SizeTable{.size = size});
    std::size_t since_check = 0;
    for (const auto& s : corpus.samples) {
      detail::count_windows(s, m.tables_);
      if (max_memory_bytes && ++since_check >= 64) {
        since_check = 0;
        m.check_budget(max_memory_bytes);
      }
    }
    for (auto& t : m.tables_) t.rebuild_context_sums();
    if (max_memory_bytes) m.check_budget(max_memory_bytes);
    return m;
  }

  std::size_t order() const { return n_; }

  ByteDist next_byte_dist(std::span<const std::uint8_t> context,
                          BackoffStats* stats = nullptr) const {
    if (stats) ++stats->queries;
    for (std::size_t k = n_; k >= 1; --k) {
      const auto& table = tables_[k - 1];
      std::string ctx = detail::context_key(context, k);
      auto it = table.context_sums.find(ctx);
      if (it != table.context_sums.end() && it->second > 0) {
        ByteDist d{};
        const double denom = static_cast<double>(it->second);
        std::string key = ctx + '\0';
        for (int b = 0; b < 256; ++b) {
          key.back() = static_cast<char>(b);
          auto cit = table.counts.find(key);
          d[b] = cit == table.counts.end()
                     ? 0.0
                     : static_cast<double>(cit->second) / denom;
        }
        return d;
      }
      if (stats) ++stats->backoff_steps;
    }
    if (stats) ++stats->uniform_fallbacks;
    return detail::uniform_dist();
  }

  const std::vector<detail::SizeTable>& tables() const { return tables_; }
  std::vector<detail::SizeTable>& mutable_tables() { return tables_; }
  void set_order(std::size_t n) { n_ = n; }

 private:
  void check_budget(std::uint64_t budget) const {
    std::uint64_t used = 0;
    for (const auto& t : tables_) used += t.approx_bytes();
    if (used > budget)
      throw MemoryBudgetExceeded("n-gram count tables exceed memory budget");
  }

  std::size_t n_ = 0;
  std::vector<detail::SizeTable> tables_;  // sizes 1..n ascending
};

// Summed-count model over gram sizes Q..R: Pr[y_i | history] =
// sum_n count_n / sum_n sum_b count_n, with grams at count <= min_count
// dropped after counting. When the full denominator is zero the model
// retries with R' = R-1 down to Q, then falls back to uniform. (A zero
// denominator over Q..R forces every sub-range denominator to zero as well,
// so the retries cannot succeed; the loop is kept because it defines the
// recorded back-off accounting.)
class ComplexNgramModel {
 public:
  ComplexNgramModel() = default;

  static ComplexNgramModel train(const Corpus& corpus, std::size_t q,
                                 std::size_t r, std::uint64_t min_count,
                                 std::uint64_t max_memory_bytes = 0) {
    if (q < 1 || q > r) throw DataError("complex n-gram model needs 1 <= Q <= R");
    if (corpus.samples.empty()) throw DataError("empty corpus");
    ComplexNgramModel m;
    m.q_ = q;
    m.r_ = r;
    m.min_count_ = min_count;
    for (std::size_t size = q; size <= r; ++size)
      m.tables_.push_back(detail::SizeTable{.size = size});
    std::size_t since_check = 0;
    for (const auto& s : corpus.samples) {
      detail::count_windows(s, m.tables_);
      if (max_memory_bytes && ++since_check >= 64) {
        since_check = 0;
        m.check_budget(max_memory_bytes);
      }
    }
    // pruning is a global property of the finished counts
    for (auto& t : m.tables_) {
      std::erase_if(t.counts,
                    [&](const auto& kv) { return kv.second <= min_count; });
      t.rebuild_context_sums();
    }
    return m;
  }

  std::size_t min_size() const { return q_; }
  std::size_t max_size() const { return r_; }
  std::uint64_t min_count() const { return min_count_; }

  ByteDist next_byte_dist(std::span<const std::uint8_t> context,
                          BackoffStats* stats = nullptr) const {
    if (stats) ++stats->queries;
    for (std::size_t r_cap = r_; r_cap >= q_; --r_cap) {
      std::uint64_t denom = 0;
      for (std::size_t n = q_; n <= r_cap; ++n) {
        const auto& table = tables_[n - q_];
        auto it = table.context_sums.find(detail::context_key(context, n));
        if (it != table.context_sums.end()) denom += it->second;
      }
      if (denom > 0) {
        ByteDist d{};
        for (std::size_t n = q_; n <= r_cap; ++n) {
          const auto& table = tables_[n - q_];
          std::string key = detail::context_key(context, n) + '\0';
          for (int b = 0; b < 256; ++b) {
            key.back() = static_cast<char>(b);
            auto cit = table.counts.find(key);
            if (cit != table.counts.end())
              d[b] += static_cast<double>(cit->second);
          }
        }
        const double dd = static_cast<double>(denom);
        for (auto& v : d) v /= dd;
        return d;
      }
      if (stats) ++stats->backoff_steps;
    }
    if (stats) ++stats->uniform_fallbacks;
    return detail::uniform_dist();
  }

  const std::vector<detail::SizeTable>& tables() const { return tables_; }
  std::vector<detail::SizeTable>& mutable_tables() { return tables_; }
  void set_sizes(std::size_t q, std::size_t r, std::uint64_t min_count) {
    q_ = q;
    r_ = r;
    min_count_ = min_count;
  }

 private:
  void check_budget(std::uint64_t budget) const {
    std::uint64_t used = 0;
    for (const auto& t : tables_) used += t.approx_bytes();
    if (used > budget)
      throw MemoryBudgetExceeded("n-gram count tables exceed memory budget");
  }

  std::size_t q_ = 0, r_ = 0;
  std::uint64_t min_count_ = 0;
  std::vector<detail::SizeTable> tables_;  // sizes Q..R ascending
};

// Sequential generation: sample byte-by-byte until the 0x00 terminator is
// drawn or max_len bytes have been emitted. The terminator is excluded from
// the returned sample.
template <typename Model>
ByteSample generate(const Model& model, Rng& rng, std::size_t max_len,
                    BackoffStats* stats = nullptr) {
  ByteSample out;
  while (out.size() < max_len) {
    ByteDist d = model.next_byte_dist(out, stats);
    double r = rng.uniform();
    double acc = 0.0;
    int chosen = -1;
    for (int b = 0; b < 256; ++b) {
      if (d[b] <= 0.0) continue;
      acc += d[b];
      chosen = b;
      if (r < acc) break;
    }
    if (chosen <= 0) break;  // terminator (or an all-zero distribution)
    out.push_back(static_cast<std::uint8_t>(chosen));
  }
  return out;
}

// Geometric-mean inverse probability over the s+1 events of the sample
// (its s bytes plus the terminal 0x00). Internally base 2, which keeps the
// uniform-fallback case exact: 256 events of probability 1/256 give a mean
// of exactly 8 bits and a perplexity of exactly 256.
template <typename Model>
double perplexity(const Model& model, std::span<const std::uint8_t> sample) {
  double bits = 0.0;
  ByteSample prefix;
  prefix.reserve(sample.size());
  for (std::size_t i = 0; i <= sample.size(); ++i) {
    const int byte = i < sample.size() ? sample[i] : 0;
    ByteDist d = model.next_byte_dist(prefix);
    bits += -std::log2(d[byte]);
    if (i < sample.size()) prefix.push_back(sample[i]);
  }
  return std::exp2(bits / static_cast<double>(sample.size() + 1));
}

// Length-weighted aggregate: exp of the mean per-event negative
// log-probability over the whole corpus.
template <typename Model>
double corpus_perplexity(const Model& model, const Corpus& corpus) {
  double bits = 0.0;
  std::uint64_t events = 0;
  for (const auto& s : corpus.samples) {
    double ppl = perplexity(model, s);
    bits += std::log2(ppl) * static_cast<double>(s.size() + 1);
    events += s.size() + 1;
  }
  return std::exp2(bits / static_cast<double>(events));
}

using NgramModel = std::variant<SimpleNgramModel, ComplexNgramModel>;

inline ByteDist next_byte_dist(const NgramModel& model,
                               std::span<const std::uint8_t> context,
                               BackoffStats* stats = nullptr) {
  return std::visit(
      [&](const auto& m) { return m.next_byte_dist(context, stats); }, model);
}

namespace detail {

inline void save_tables(std::ostream& os,
                        const std::vector<SizeTable>& tables) {
  for (const auto& t : tables) {
    std::vector<std::pair<std::string, std::uint64_t>> records(
        t.counts.begin(), t.counts.end());
    std::sort(records.begin(), records.end());
    write_u64le(os, records.size());
    for (const auto& [gram, count] : records) {
      write_u32le(os, static_cast<std::uint32_t>(gram.size()));
      os.write(gram.data(), static_cast<std::streamsize>(gram.size()));
      write_u64le(os, count);
    }
  }
}

inline void load_tables(std::istream& is, std::vector<SizeTable>& tables,
                        const std::string& path) {
  for (auto& t : tables) {
    std::uint64_t n_records = read_u64le(is);
    t.counts.reserve(n_records);
    for (std::uint64_t i = 0; i < n_records; ++i) {
      std::uint32_t len = read_u32le(is);
      if (len != t.size) throw DataError("corrupt model record: " + path);
      std::string gram(len, '\0');
      is.read(gram.data(), len);
      if (!is) throw DataError("unexpected end of model file: " + path);
      t.counts.emplace(std::move(gram), read_u64le(is));
    }
    t.rebuild_context_sums();
  }
}

}  // namespace detail

// "NGM1" model file: magic, kind byte (0 simple / 1 complex), u32 low and
// high gram sizes, u64 count threshold, then per-size sorted records of
// (u32 length, gram bytes, u64 count), all little-endian.
inline void save_ngram_model(const NgramModel& model,
                             const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write model file: " + path);
  write_magic(out, "NGM1");
  if (const auto* simple = std::get_if<SimpleNgramModel>(&model)) {
    out.put(0);
    write_u32le(out, 1);
    write_u32le(out, static_cast<std::uint32_t>(simple->order()));
    write_u64le(out, 0);
    detail::save_tables(out, simple->tables());
  } else {
    const auto& complex = std::get<ComplexNgramModel>(model);
    out.put(1);
    write_u32le(out, static_cast<std::uint32_t>(complex.min_size()));
    write_u32le(out, static_cast<std::uint32_t>(complex.max_size()));
    write_u64le(out, complex.min_count());
    detail::save_tables(out, complex.tables());
  }
  if (!out) throw DataError("error writing model file: " + path);
}

inline NgramModel load_ngram_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file: " + path);
  expect_magic(in, "NGM1", path);
  int kind = in.get();
  std::uint32_t lo = read_u32le(in);
  std::uint32_t hi = read_u32le(in);
  std::uint64_t min_count = read_u64le(in);
  if (kind == 0) {
    SimpleNgramModel m;
    m.set_order(hi);
    for (std::size_t size = lo; size <= hi; ++size)
      m.mutable_tables().push_back(detail::SizeTable{.size = size});
    detail::load_tables(in, m.mutable_tables(), path);
    return m;
  }
  if (kind == 1) {
    ComplexNgramModel m;
    m.set_sizes(lo, hi, min_count);
    for (std::size_t size = lo; size <= hi; ++size)
      m.mutable_tables().push_back(detail::SizeTable{.size = size});
    detail::load_tables(in, m.mutable_tables(), path);
    return m;
  }
  throw DataError("unknown model kind in " + path);
}

}  // namespace bytegen
