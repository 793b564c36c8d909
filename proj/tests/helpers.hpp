#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bytegen/corpus.hpp"
#include "bytegen/rng.hpp"

namespace testutil {

// Self-cleaning scratch directory for file-based tests.
class TempDir {
 public:
  TempDir() {
    auto base = std::filesystem::temp_directory_path();
    for (int i = 0; i < 10000; ++i) {
      auto candidate = base / ("bytegen_test_" + std::to_string(::getpid()) +
                               "_" + std::to_string(counter_++));
      std::error_code ec;
      if (std::filesystem::create_directory(candidate, ec)) {
        path_ = candidate;
        return;
      }
    }
    throw std::runtime_error("cannot create temp dir");
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const {
    return (path_ / name).string();
  }

 private:
  static inline int counter_ = 0;
  std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

// Deterministic word-soup corpus: `count` lines over a small vocabulary.
inline bytegen::Corpus synth_corpus(std::uint64_t seed, std::size_t count,
                                    std::size_t min_words = 2,
                                    std::size_t max_words = 6) {
  static const std::vector<std::string> vocab = {
      "the", "cat", "sat", "on", "a", "mat", "dog", "ran", "far",
      "red", "sun", "we",  "go", "in", "big", "sky", "and", "fox"};
  bytegen::Rng rng(seed, "synth-corpus");
  bytegen::Corpus c;
  c.source = "<synthetic>";
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t words =
        min_words + rng.uniform_index(max_words - min_words + 1);
    std::string line;
    for (std::size_t w = 0; w < words; ++w) {
      if (w) line += ' ';
      line += vocab[rng.uniform_index(vocab.size())];
    }
    bytegen::ByteSample s(line.begin(), line.end());
    c.total_bytes += s.size();
    c.samples.push_back(std::move(s));
  }
  return c;
}

inline bytegen::ByteSample bytes(const std::string& s) {
  return bytegen::ByteSample(s.begin(), s.end());
}

inline std::string text(const bytegen::ByteSample& s) {
  return std::string(s.begin(), s.end());
}

}  // namespace testutil
