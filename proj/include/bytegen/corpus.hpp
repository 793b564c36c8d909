#pragma once

#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "bytegen/io.hpp"
#include "bytegen/rng.hpp"

namespace bytegen {

// A paragraph as raw bytes. UTF-8 payloads are treated as opaque: all
// processing in this project is byte-level. 0x00 never occurs inside a
// sample; it is reserved as the end-of-sequence terminator.
using ByteSample = std::vector<std::uint8_t>;

struct Corpus {
  std::vector<ByteSample> samples;
  std::string source;
  std::uint64_t total_bytes = 0;
  std::uint64_t skipped = 0;  // empty lines + lines with embedded 0x00
};

// Loads a one-paragraph-per-line text file. Lines longer than max_len are
// truncated at exactly max_len bytes (may split a UTF-8 code point; all
// downstream processing is byte-level so this is accepted). Empty lines and
// lines containing 0x00 are skipped and counted.
//
// Files written by the CLI start with a "#% bytegen" configuration header;
// when the first line carries that signature, the contiguous "#% " block is
// dropped before parsing (it is metadata, not samples).
inline Corpus load_corpus(const std::string& path, std::size_t max_len) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus file: " + path);
  Corpus c;
  c.source = path;
  std::string line;
  bool first = true;
  bool in_header = false;
  while (std::getline(in, line)) {
    if (first) {
      first = false;
      in_header = line.starts_with("#% bytegen");
    }
    if (in_header) {
      if (line.starts_with("#% ")) continue;
      in_header = false;
    }
    if (line.empty() || line.find('\0') != std::string::npos) {
      ++c.skipped;
      continue;
    }
    std::size_t n = std::min(line.size(), max_len);
    ByteSample s(line.begin(), line.begin() + static_cast<std::ptrdiff_t>(n));
    c.total_bytes += s.size();
    c.samples.push_back(std::move(s));
  }
  if (in.bad()) throw DataError("error while reading corpus file: " + path);
  if (c.samples.empty())
    throw DataError("corpus has zero usable samples: " + path);
  return c;
}

inline void save_corpus(const Corpus& c, const std::string& path,
                        const std::string& header_comment = "") {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write corpus file: " + path);
  if (!header_comment.empty()) out << header_comment;
  for (const auto& s : c.samples) {
    out.write(reinterpret_cast<const char*>(s.data()),
              static_cast<std::streamsize>(s.size()));
    out.put('\n');
  }
  if (!out) throw DataError("error while writing corpus file: " + path);
}

// Histogram of exact byte lengths, 1..max observed.
class LengthDistribution {
 public:
  LengthDistribution() = default;

  explicit LengthDistribution(const Corpus& c) {
    for (const auto& s : c.samples) add(s.size());
  }

  void add(std::size_t length, std::uint64_t count = 1) {
    if (length >= counts_.size()) counts_.resize(length + 1, 0);
    counts_[length] += count;
    total_ += count;
  }

  std::uint64_t count(std::size_t length) const {
    return length < counts_.size() ? counts_[length] : 0;
  }

  double frequency(std::size_t length) const {
    return total_ == 0 ? 0.0
                       : static_cast<double>(count(length)) /
                             static_cast<double>(total_);
  }

  std::uint64_t total() const { return total_; }
  std::size_t max_length() const {
    return counts_.empty() ? 0 : counts_.size() - 1;
  }

  // Inverse-CDF draw of a length.
  std::size_t sample(Rng& rng) const {
    std::uint64_t target = rng.uniform_index(total_);
    std::uint64_t acc = 0;
    for (std::size_t len = 0; len < counts_.size(); ++len) {
      acc += counts_[len];
      if (target < acc) return len;
    }
    return max_length();  // unreachable for consistent totals
  }

  // Nonzero (length, count) pairs in increasing length order.
  std::vector<std::pair<std::size_t, std::uint64_t>> entries() const {
    std::vector<std::pair<std::size_t, std::uint64_t>> out;
    for (std::size_t len = 0; len < counts_.size(); ++len)
      if (counts_[len] > 0) out.emplace_back(len, counts_[len]);
    return out;
  }

 private:
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

// Uniform draw over samples, with replacement.
inline const ByteSample& sample_paragraph(const Corpus& c, Rng& rng) {
  return c.samples[rng.uniform_index(c.samples.size())];
}

struct PaddedSample {
  std::vector<std::uint8_t> bytes;  // length = factor * ceil(s / factor)
  std::size_t original_len = 0;
};

// Tail-pads to the least multiple of factor >= s. The appended positions are
// fill bytes only; the one-hot encoder downstream emits all-zero columns for
// them (padding is "absence", distinguishable from the 0x00 terminator).
inline PaddedSample pad_to_multiple(std::span<const std::uint8_t> sample,
                                    std::size_t factor) {
  PaddedSample p;
  p.original_len = sample.size();
  std::size_t padded = factor * ((sample.size() + factor - 1) / factor);
  p.bytes.assign(sample.begin(), sample.end());
  p.bytes.resize(padded, 0);
  return p;
}

}  // namespace bytegen
