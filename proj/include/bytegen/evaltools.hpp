#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include "bytegen/atnnfae.hpp"
#include "bytegen/corpus.hpp"
#include "bytegen/ngram.hpp"
#include "bytegen/ngtvd.hpp"

namespace bytegen {

// --- output selection --------------------------------------------------------

// Per-length (or per-bin) acceptance quotas for `count` outputs, matched to
// the target distribution by largest-remainder rounding. Ties go to the
// smaller length.
struct SelectionPlan {
  std::map<std::size_t, std::uint64_t> quota;  // keyed by length / bin_width
  std::size_t bin_width = 1;
  std::uint64_t requested = 0;
};

inline SelectionPlan make_selection_plan(const LengthDistribution& target,
                                         std::uint64_t count,
                                         std::size_t bin_width = 1) {
  if (count == 0) throw DataError("selection needs a positive count");
  if (bin_width == 0) bin_width = 1;
  SelectionPlan plan;
  plan.bin_width = bin_width;
  plan.requested = count;

  std::map<std::size_t, std::uint64_t> bin_counts;
  for (const auto& [len, c] : target.entries()) bin_counts[len / bin_width] += c;
  const std::uint64_t total = target.total();

  // exact integer arithmetic: base share floor(count*c/total), leftovers by
  // largest remainder count*c mod total
  std::uint64_t assigned = 0;
  std::vector<std::pair<std::uint64_t, std::size_t>> remainders;  // (rem, bin)
  for (const auto& [bin, c] : bin_counts) {
    const std::uint64_t scaled = count * c;
    plan.quota[bin] = scaled / total;
    assigned += scaled / total;
    remainders.emplace_back(scaled % total, bin);
  }
  std::sort(remainders.begin(), remainders.end(),
            [](const auto& a, const auto& b) {
              if (a.first != b.first) return a.first > b.first;
              return a.second < b.second;
            });
  for (std::size_t i = 0; assigned < count && i < remainders.size();
       ++i, ++assigned)
    ++plan.quota[remainders[i].second];
  return plan;
}

struct SelectionResult {
  std::vector<ByteSample> selected;
  std::map<std::size_t, std::uint64_t> shortfall;  // unfilled quota per bin
  std::uint64_t requested = 0;
};

// Greedy fill of the quota table scanning candidates in order; lengths
// absent from the target are rejected; unfillable quotas are reported
// rather than substituted.
inline SelectionResult output_selection(std::span<const ByteSample> candidates,
                                        const LengthDistribution& target,
                                        std::uint64_t count,
                                        std::size_t bin_width = 1) {
  if (candidates.empty()) throw DataError("selection needs candidates");
  SelectionPlan plan = make_selection_plan(target, count, bin_width);
  SelectionResult result;
  result.requested = count;
  std::map<std::size_t, std::uint64_t> remaining = plan.quota;
  for (const auto& s : candidates) {
    auto it = remaining.find(s.size() / plan.bin_width);
    if (it == remaining.end() || it->second == 0) continue;
    --it->second;
    result.selected.push_back(s);
    if (result.selected.size() == count) break;
  }
  for (const auto& [bin, left] : remaining)
    if (left > 0) result.shortfall[bin] = left;
  if (result.selected.empty()) throw DataError("selection accepted zero samples");
  return result;
}

// --- n-gram corrected decoding ----------------------------------------------

inline std::vector<ByteDist> softmax_columns(const Tensor& logits) {
  std::vector<ByteDist> out(logits.length());
  for (int l = 0; l < logits.length(); ++l) {
    double mx = logits.at(0, l);
    for (int c = 1; c < logits.channels(); ++c)
      mx = std::max(mx, logits.at(c, l));
    double sum = 0.0;
    for (int c = 0; c < logits.channels(); ++c) {
      out[l][c] = std::exp(logits.at(c, l) - mx);
      sum += out[l][c];
    }
    for (double& v : out[l]) v /= sum;
  }
  return out;
}

struct BeamResult {
  ByteSample bytes;
  double log_score = 0.0;
};

namespace detail {

struct Hypothesis {
  ByteSample bytes;
  double score = 0.0;
};

// ordering: higher score first, then lexicographically smaller bytes (which
// also realizes the per-position smaller-byte tie rule)
inline bool hyp_better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.bytes < b.bytes;
}

}  // namespace detail

// Beam search maximizing the log of the corrected sequence probability: per
// position the factor is the normalized product p(b | z) q(b | prefix) /
// sum_b' p(b') q(b'), so a uniform q cancels exactly. Termination
// candidates (byte 0x00, scored like any other event) compete for beam
// slots; a kept terminated hypothesis retires as complete. Hypotheses
// reaching the full span complete without a terminator. Raw log sums are
// compared, no length normalization. Width 1 therefore reduces to greedy
// decoding, and a width at least the candidate count is exhaustive; the
// kept sets grow with the width, so the best final score is monotone in it.
template <typename QModel>
BeamResult ngram_correct(std::span<const ByteDist> position_dists,
                         const QModel& q, std::size_t beam_width) {
  if (beam_width == 0) throw DataError("beam width must be positive");
  using detail::Hypothesis;
  using detail::hyp_better;

  std::vector<Hypothesis> live{{ByteSample{}, 0.0}};
  std::optional<Hypothesis> best_complete;

  auto offer_complete = [&](Hypothesis h) {
    if (!best_complete || hyp_better(h, *best_complete))
      best_complete = std::move(h);
  };

  for (const ByteDist& p : position_dists) {
    if (live.empty()) break;
    std::vector<std::pair<Hypothesis, bool>> candidates;  // (hyp, terminated)
    candidates.reserve(live.size() * 8);
    for (const Hypothesis& h : live) {
      ByteDist qd = q.next_byte_dist(h.bytes);
      double z = 0.0;
      for (int b = 0; b < 256; ++b) z += p[b] * qd[b];
      // the n-gram model may zero every generator-supported byte (a seen
      // context with unseen continuations); fall back to p alone so the
      // correction stays total
      const bool p_only = z <= 0.0;
      if (p_only) qd.fill(1.0);
      const double log_z = p_only ? 0.0 : std::log(z);
      for (int b = 0; b < 256; ++b) {
        if (p[b] <= 0.0 || qd[b] <= 0.0) continue;
        const double score = p_only
                                 ? h.score + std::log(p[b])
                                 : h.score + std::log(p[b]) +
                                       std::log(qd[b]) - log_z;
        Hypothesis next = h;
        next.score = score;
        if (b == 0) {
          candidates.emplace_back(std::move(next), true);
        } else {
          next.bytes.push_back(static_cast<std::uint8_t>(b));
          candidates.emplace_back(std::move(next), false);
        }
      }
    }
    const std::size_t keep = std::min(beam_width, candidates.size());
    std::partial_sort(candidates.begin(),
                      candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), [](const auto& a, const auto& b) {
                        return hyp_better(a.first, b.first);
                      });
    live.clear();
    for (std::size_t i = 0; i < keep; ++i) {
      if (candidates[i].second)
        offer_complete(std::move(candidates[i].first));
      else
        live.push_back(std::move(candidates[i].first));
    }
  }
  for (Hypothesis& h : live) offer_complete(std::move(h));

  if (!best_complete) return {};  // every path had zero probability
  return {std::move(best_complete->bytes), best_complete->score};
}

// Generation + correction: the generator proposes per-position byte
// distributions, the n-gram model rescans them sequentially. Sample i uses
// the stream "correct-gen/i" so results are thread-count invariant.
template <typename QModel>
std::vector<ByteSample> generate_corrected(const AtnnfaeParams& p,
                                           const QModel& q, std::uint64_t seed,
                                           std::size_t count,
                                           std::size_t beam_width,
                                           int threads = 1) {
  std::vector<ByteSample> out(count);
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      Rng rng(seed, "correct-gen/" + std::to_string(i));
      const std::size_t len = p.length_dist.sample(rng);
      const int t_cols = static_cast<int>(
          (len + p.cfg.pad_factor() - 1) / p.cfg.pad_factor());
      Tensor z = sample_latent(rng, std::max(1, t_cols), p.cfg.feature_dim);
      auto dists = softmax_columns(decode(p, z));
      out[i] = ngram_correct(dists, q, beam_width).bytes;
    }
  };
  if (threads <= 1) {
    work(0, count);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w)
      pool.emplace_back(work, count * w / threads, count * (w + 1) / threads);
    for (auto& th : pool) th.join();
  }
  return out;
}

// --- intra-word smoothness ----------------------------------------------------

inline std::unordered_set<std::string> load_dictionary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dictionary: " + path);
  std::unordered_set<std::string> dict;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    for (char& c : line) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    dict.insert(line);
  }
  if (dict.empty()) throw DataError("dictionary is empty: " + path);
  return dict;
}

struct SmoothnessResult {
  std::uint64_t tokens = 0;
  std::uint64_t hits = 0;
  // undefined when no tokens were found
  std::optional<double> value() const {
    if (tokens == 0) return std::nullopt;
    return static_cast<double>(hits) / static_cast<double>(tokens);
  }
};

// Tokens are maximal ASCII-letter runs, lowercased. Everything else is a
// separator.
inline SmoothnessResult intra_word_smoothness(
    std::span<const ByteSample> samples,
    const std::unordered_set<std::string>& dict) {
  SmoothnessResult r;
  std::string token;
  for (const auto& s : samples) {
    token.clear();
    auto flush = [&] {
      if (token.empty()) return;
      ++r.tokens;
      if (dict.contains(token)) ++r.hits;
      token.clear();
    };
    for (std::uint8_t b : s) {
      if ((b >= 'a' && b <= 'z')) {
        token.push_back(static_cast<char>(b));
      } else if (b >= 'A' && b <= 'Z') {
        token.push_back(static_cast<char>(b - 'A' + 'a'));
      } else {
        flush();
      }
    }
    flush();
  }
  return r;
}

// --- evaluation report --------------------------------------------------------

struct ReportConfig {
  std::size_t max_n = 16;
  std::uint64_t m_bins = 1ull << 24;
  GramLengths lengths = GramLengths::UpToN;
  int threads = 1;
  std::string dict_path;  // empty = skip smoothness
};

struct Report {
  double ngtvd = 0.0;
  std::size_t max_n = 0;
  std::uint64_t m_bins = 0;
  std::size_t gen_count = 0, ref_count = 0;
  double distinct_ratio = 0.0;  // unique generated samples / total
  LengthDistribution gen_lengths, ref_lengths;
  SmoothnessResult smoothness;
  bool has_smoothness = false;
};

inline double distinct_output_ratio(std::span<const ByteSample> samples) {
  std::unordered_set<std::string> uniq;
  for (const auto& s : samples)
    uniq.insert(std::string(s.begin(), s.end()));
  return samples.empty() ? 0.0
                         : static_cast<double>(uniq.size()) /
                               static_cast<double>(samples.size());
}

inline Report make_report(std::span<const ByteSample> generated,
                          std::span<const ByteSample> reference,
                          const ReportConfig& cfg) {
  Report r;
  r.max_n = cfg.max_n;
  r.m_bins = cfg.m_bins;
  r.gen_count = generated.size();
  r.ref_count = reference.size();
  NgtvdConfig ncfg{cfg.max_n, cfg.m_bins, cfg.lengths, cfg.threads};
  r.ngtvd = ngtvd(generated, reference, ncfg);
  for (const auto& s : generated) r.gen_lengths.add(s.size());
  for (const auto& s : reference) r.ref_lengths.add(s.size());
  r.distinct_ratio = distinct_output_ratio(generated);
  if (!cfg.dict_path.empty()) {
    auto dict = load_dictionary(cfg.dict_path);
    r.smoothness = intra_word_smoothness(generated, dict);
    r.has_smoothness = true;
  }
  return r;
}

// One TSV bundle: metric rows then the two length histograms.
inline std::string report_tsv(const Report& r) {
  std::ostringstream os;
  os.precision(12);
  os << "metric\tngtvd\t" << r.ngtvd << "\n";
  os << "metric\tmax_n\t" << r.max_n << "\n";
  os << "metric\tm_bins\t" << r.m_bins << "\n";
  os << "metric\tgen_samples\t" << r.gen_count << "\n";
  os << "metric\tref_samples\t" << r.ref_count << "\n";
  os << "metric\tdistinct_ratio\t" << r.distinct_ratio << "\n";
  if (r.has_smoothness) {
    os << "metric\tsmoothness_tokens\t" << r.smoothness.tokens << "\n";
    if (auto v = r.smoothness.value())
      os << "metric\tsmoothness\t" << *v << "\n";
    else
      os << "metric\tsmoothness\tundefined\n";
  }
  for (const auto& [len, count] : r.gen_lengths.entries())
    os << "hist_gen\t" << len << "\t" << count << "\t"
       << r.gen_lengths.frequency(len) << "\n";
  for (const auto& [len, count] : r.ref_lengths.entries())
    os << "hist_ref\t" << len << "\t" << count << "\t"
       << r.ref_lengths.frequency(len) << "\n";
  return os.str();
}

inline std::string report_summary(const Report& r) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "samples:        " << r.gen_count << " generated vs " << r.ref_count
     << " reference\n";
  os << "ngtvd[" << r.max_n << "," << r.m_bins << "]: " << r.ngtvd << "\n";
  os << "distinct ratio: " << r.distinct_ratio << "\n";
  if (r.has_smoothness) {
    if (auto v = r.smoothness.value())
      os << "smoothness:     " << *v << " (" << r.smoothness.hits << "/"
         << r.smoothness.tokens << " tokens in dictionary)\n";
    else
      os << "smoothness:     undefined (no tokens)\n";
  }
  return os.str();
}

}  // namespace bytegen
