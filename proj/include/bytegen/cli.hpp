#pragma once

#include <CLI11.hpp>
#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "bytegen/atnnfae.hpp"
#include "bytegen/corpus.hpp"
#include "bytegen/evaltools.hpp"
#include "bytegen/gradcheck.hpp"
#include "bytegen/ngram.hpp"
#include "bytegen/ngtvd.hpp"
#include "bytegen/version.hpp"

namespace bytegen::cli {

// Exit codes: 0 success, 1 usage error, 2 data error.

namespace detail {

// Every output file starts with this header so the run that produced it can
// be reproduced from the file alone plus its inputs.
class HeaderWriter {
 public:
  explicit HeaderWriter(const std::string& subcommand) {
    os_ << "#% " << kName << " " << kVersion << " " << subcommand << "\n";
  }
  template <typename T>
  HeaderWriter& kv(const std::string& key, const T& value) {
    os_ << "#% " << key << "=" << value << "\n";
    return *this;
  }
  HeaderWriter& kv(const std::string& key, double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    os_ << "#% " << key << "=" << buf << "\n";
    return *this;
  }
  std::string str() const { return os_.str(); }

 private:
  std::ostringstream os_;
};

inline void write_samples(const std::string& path, const std::string& header,
                          std::span<const ByteSample> samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write output file: " + path);
  out << header;
  for (const auto& s : samples) {
    out.write(reinterpret_cast<const char*>(s.data()),
              static_cast<std::streamsize>(s.size()));
    out.put('\n');
  }
  if (!out) throw DataError("error writing output file: " + path);
}

inline void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write output file: " + path);
  out << content;
  if (!out) throw DataError("error writing output file: " + path);
}

inline std::string format_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

struct AeTrainOpts {
  AtnnfaeConfig cfg;
  std::string corpus_path, out_path, log_path;
  std::string residual = "layer";
  bool nnfae_only = false;
  std::uint64_t eval_every = 1000;
  std::size_t eval_samples = 0;
  double stop_below_error = -1.0;
  std::size_t max_len = 1024;
};

inline std::string train_log_tsv(const std::string& header,
                                 const TrainResult& result) {
  std::ostringstream os;
  os << header;
  os << "step\tobjective\tloss\terror\tlr\n";
  for (const auto& row : result.log) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%" PRIu64 "\t%c\t%.12g\t%.12g\t%.12g\n",
                  row.step, row.objective, row.loss, row.error, row.lr);
    os << buf;
  }
  return os.str();
}

}  // namespace detail

inline int dispatch(std::vector<std::string> args, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{std::string(kName) + " - byte-level text generation laboratory"};
  app.set_version_flag("--version",
                       std::string(kName) + " " + kVersion);
  app.set_config("--config", "", "Read options from a key=value file");
  app.require_subcommand(0, 1);

  int threads = 1;
  app.add_option("--threads", threads,
                 "Worker threads (1 keeps everything on one core)")
      ->capture_default_str();

  // ---- corpus stats ----
  auto* corpus_cmd = app.add_subcommand("corpus", "Corpus utilities");
  auto* stats = corpus_cmd->add_subcommand("stats", "Sample/byte counts and length histogram");
  std::string stats_file, stats_out;
  std::size_t stats_max_len = 1024;
  stats->add_option("file", stats_file, "Corpus file, one paragraph per line")
      ->required();
  stats->add_option("--max-len", stats_max_len, "Truncation length in bytes")
      ->capture_default_str();
  stats->add_option("-o,--output", stats_out, "Write the TSV here instead of stdout");

  // ---- ngtvd ----
  auto* ngtvd_cmd = app.add_subcommand("ngtvd", "N-gram total variation distance between two sample files");
  std::string ngtvd_gen, ngtvd_ref, ngtvd_save_gen, ngtvd_save_ref;
  std::size_t ngtvd_n = 16;
  std::uint64_t ngtvd_m = 1ull << 24;
  std::size_t ngtvd_max_len = 1 << 20;
  bool ngtvd_exact_only = false;
  ngtvd_cmd->add_option("--gen", ngtvd_gen, "Generated samples")->required();
  ngtvd_cmd->add_option("--ref", ngtvd_ref, "Reference samples")->required();
  ngtvd_cmd->add_option("--n", ngtvd_n, "Maximum gram length")->capture_default_str();
  ngtvd_cmd->add_option("--m", ngtvd_m, "Hash bins")->capture_default_str();
  ngtvd_cmd->add_flag("--exact-length-only", ngtvd_exact_only,
                      "Count only grams of exactly length N");
  ngtvd_cmd->add_option("--max-len", ngtvd_max_len, "Truncation length for loading")
      ->capture_default_str();
  ngtvd_cmd->add_option("--save-gen", ngtvd_save_gen, "Write the generated-side histogram (NGH1)");
  ngtvd_cmd->add_option("--save-ref", ngtvd_save_ref, "Write the reference-side histogram (NGH1)");

  // ---- ngram ----
  auto* ngram_cmd = app.add_subcommand("ngram", "Byte n-gram models");

  auto* ngram_train = ngram_cmd->add_subcommand("train", "Count grams from a corpus");
  std::string nt_corpus, nt_out;
  std::size_t nt_simple_n = 0, nt_q = 5, nt_r = 64;
  std::uint64_t nt_min_count = 256, nt_max_memory = 0;
  bool nt_complex = false;
  std::size_t nt_max_len = 1024;
  ngram_train->add_option("corpus", nt_corpus, "Training corpus")->required();
  ngram_train->add_option("-o,--output", nt_out, "Model file (NGM1)")->required();
  ngram_train->add_option("--simple-n", nt_simple_n, "Train the single-order model of this order");
  ngram_train->add_flag("--complex", nt_complex, "Train the summed-count model");
  ngram_train->add_option("--q", nt_q, "Smallest gram size (complex)")->capture_default_str();
  ngram_train->add_option("--r", nt_r, "Largest gram size (complex)")->capture_default_str();
  ngram_train->add_option("--min-count", nt_min_count,
                          "Drop grams appearing at most this many times (complex)")
      ->capture_default_str();
  ngram_train->add_option("--max-memory", nt_max_memory,
                          "Abort if count tables exceed this many bytes (0 = unlimited)");
  ngram_train->add_option("--max-len", nt_max_len, "Truncation length for loading")
      ->capture_default_str();

  auto* ngram_gen = ngram_cmd->add_subcommand("gen", "Generate samples from a model");
  std::string ng_model, ng_out;
  std::size_t ng_count = 100, ng_max_len = 1024;
  std::uint64_t ng_seed = 1;
  ngram_gen->add_option("--model", ng_model, "Model file")->required();
  ngram_gen->add_option("--count", ng_count, "Samples to generate")->capture_default_str();
  ngram_gen->add_option("--seed", ng_seed, "Random seed")->capture_default_str();
  ngram_gen->add_option("--max-len", ng_max_len, "Per-sample byte cap")->capture_default_str();
  ngram_gen->add_option("-o,--output", ng_out, "Output sample file")->required();

  auto* ngram_ppl = ngram_cmd->add_subcommand("ppl", "Corpus perplexity under a model");
  std::string np_model, np_corpus;
  std::size_t np_max_len = 1024;
  ngram_ppl->add_option("--model", np_model, "Model file")->required();
  ngram_ppl->add_option("corpus", np_corpus, "Evaluation corpus")->required();
  ngram_ppl->add_option("--max-len", np_max_len, "Truncation length for loading")
      ->capture_default_str();

  // ---- ae ----
  auto* ae_cmd = app.add_subcommand("ae", "Auto-encoder model");

  auto* ae_train = ae_cmd->add_subcommand("train", "Train the model on a corpus");
  detail::AeTrainOpts at;
  at.cfg.k = 1;
  at.cfg.groups = 2;
  at.cfg.feature_dim = 256;
  at.cfg.sigma = 0.1;
  at.cfg.steps = 100000;
  ae_train->add_option("corpus", at.corpus_path, "Training corpus")->required();
  ae_train->add_option("-o,--output", at.out_path, "Checkpoint file (ATNNFAE1)")->required();
  ae_train->add_option("--k", at.cfg.k, "Conv layers per block")->capture_default_str();
  ae_train->add_option("--groups", at.cfg.groups, "Recursion groups G")->capture_default_str();
  ae_train->add_option("--feature-dim", at.cfg.feature_dim, "Feature channels")
      ->capture_default_str();
  ae_train->add_option("--kernel", at.cfg.kernel, "Conv kernel size")->capture_default_str();
  ae_train->add_option("--sigma", at.cfg.sigma, "Feature noise std")->capture_default_str();
  ae_train->add_option("--margin", at.cfg.margin, "Hinge margin")->capture_default_str();
  ae_train->add_option("--lr", at.cfg.lr, "Initial learning rate")->capture_default_str();
  ae_train->add_option("--lr-halve", at.cfg.lr_halve_every,
                       "Halve the learning rate every this many steps")
      ->capture_default_str();
  ae_train->add_option("--steps", at.cfg.steps, "Steps per objective")->capture_default_str();
  ae_train->add_option("--steps-per-objective", at.cfg.steps_per_objective,
                       "Consecutive steps before switching objective")
      ->capture_default_str();
  ae_train->add_option("--seed", at.cfg.seed, "Random seed")->capture_default_str();
  ae_train->add_option("--max-len", at.max_len, "Truncation length in bytes")
      ->capture_default_str();
  ae_train->add_flag("--nnfae-only", at.nnfae_only,
                     "Train the reconstruction objective only (no adversary)");
  ae_train->add_flag("--reuse-noise", at.cfg.reuse_nnfae_noise,
                     "Discriminator objective reuses the last AE noise draw");
  ae_train->add_option("--residual", at.residual, "Skip placement: layer | pair")
      ->check(CLI::IsMember({"layer", "pair"}))
      ->capture_default_str();
  ae_train->add_option("--eval-every", at.eval_every,
                       "Reconstruction-error cadence in steps")
      ->capture_default_str();
  ae_train->add_option("--eval-samples", at.eval_samples,
                       "Evaluate on this many samples (0 = all)");
  ae_train->add_option("--stop-below-error", at.stop_below_error,
                       "Stop early under this reconstruction error (<0 disables)");
  ae_train->add_option("--log", at.log_path, "Write the training log TSV here");

  auto* ae_gen = ae_cmd->add_subcommand("gen", "Generate samples from a checkpoint");
  std::string ag_ckpt, ag_out;
  std::size_t ag_count = 100;
  std::uint64_t ag_seed = 1;
  ae_gen->add_option("--ckpt", ag_ckpt, "Checkpoint file")->required();
  ae_gen->add_option("--count", ag_count, "Samples to generate")->capture_default_str();
  ae_gen->add_option("--seed", ag_seed, "Random seed")->capture_default_str();
  ae_gen->add_option("-o,--output", ag_out, "Output sample file")->required();

  auto* ae_recon = ae_cmd->add_subcommand("recon", "Reconstruction byte-error on a corpus");
  std::string ar_ckpt, ar_corpus;
  double ar_sigma = -1.0;
  std::uint64_t ar_seed = 1;
  std::size_t ar_max_len = 1024;
  ae_recon->add_option("--ckpt", ar_ckpt, "Checkpoint file")->required();
  ae_recon->add_option("corpus", ar_corpus, "Evaluation corpus")->required();
  ae_recon->add_option("--sigma", ar_sigma, "Noise std (<0 = the training value)")
      ->capture_default_str();
  ae_recon->add_option("--seed", ar_seed, "Evaluation noise seed")->capture_default_str();
  ae_recon->add_option("--max-len", ar_max_len, "Truncation length for loading")
      ->capture_default_str();

  auto* ae_interp = ae_cmd->add_subcommand("interp", "Feature-space interpolation between two corpus samples");
  std::string ai_ckpt, ai_corpus;
  std::size_t ai_a = 0, ai_b = 1, ai_steps = 50;
  bool ai_all = false;
  ae_interp->add_option("--ckpt", ai_ckpt, "Checkpoint file")->required();
  ae_interp->add_option("corpus", ai_corpus, "Corpus the indices refer to")->required();
  ae_interp->add_option("--a", ai_a, "Index of the first sample")->capture_default_str();
  ae_interp->add_option("--b", ai_b, "Index of the second sample")->capture_default_str();
  ae_interp->add_option("--steps", ai_steps, "Interpolation steps")->capture_default_str();
  ae_interp->add_flag("--all", ai_all, "Print every step, not only changes");

  // ---- select ----
  auto* select_cmd = app.add_subcommand("select", "Filter generated samples to match a length distribution");
  std::string sel_target, sel_gen, sel_out;
  std::uint64_t sel_count = 100;
  std::size_t sel_bin = 1, sel_max_len = 1 << 20;
  select_cmd->add_option("gen", sel_gen, "Candidate sample file")->required();
  select_cmd->add_option("--target", sel_target, "Corpus providing the target distribution")
      ->required();
  select_cmd->add_option("--count", sel_count, "Outputs requested")->capture_default_str();
  select_cmd->add_option("--bin-width", sel_bin, "Group lengths into bins of this width")
      ->capture_default_str();
  select_cmd->add_option("--max-len", sel_max_len, "Truncation length for loading")
      ->capture_default_str();
  select_cmd->add_option("-o,--output", sel_out, "Selected sample file")->required();

  // ---- correct ----
  auto* correct_cmd = app.add_subcommand("correct", "Generate with n-gram corrected beam decoding");
  std::string co_ckpt, co_ngram, co_out;
  std::size_t co_beam = 10, co_count = 100;
  std::uint64_t co_seed = 1;
  correct_cmd->add_option("--ckpt", co_ckpt, "Checkpoint file")->required();
  correct_cmd->add_option("--ngram", co_ngram, "N-gram model file")->required();
  correct_cmd->add_option("--beam", co_beam, "Beam width")->capture_default_str();
  correct_cmd->add_option("--count", co_count, "Samples to generate")->capture_default_str();
  correct_cmd->add_option("--seed", co_seed, "Random seed")->capture_default_str();
  correct_cmd->add_option("-o,--output", co_out, "Output sample file")->required();

  // ---- smoothness ----
  auto* smooth_cmd = app.add_subcommand("smoothness", "Fraction of letter-run tokens found in a dictionary");
  std::string sm_dict, sm_gen;
  std::size_t sm_max_len = 1 << 20;
  smooth_cmd->add_option("gen", sm_gen, "Sample file")->required();
  smooth_cmd->add_option("--dict", sm_dict, "Dictionary, one word per line")->required();
  smooth_cmd->add_option("--max-len", sm_max_len, "Truncation length for loading")
      ->capture_default_str();

  // ---- report ----
  auto* report_cmd = app.add_subcommand("report", "Full evaluation bundle for a sample file");
  std::string rp_ref, rp_gen, rp_dict, rp_out;
  std::size_t rp_n = 16, rp_max_len = 1 << 20;
  std::uint64_t rp_m = 1ull << 24;
  report_cmd->add_option("--gen", rp_gen, "Generated samples")->required();
  report_cmd->add_option("--ref", rp_ref, "Reference corpus")->required();
  report_cmd->add_option("--dict", rp_dict, "Dictionary for smoothness (optional)");
  report_cmd->add_option("--n", rp_n, "Maximum gram length")->capture_default_str();
  report_cmd->add_option("--m", rp_m, "Hash bins")->capture_default_str();
  report_cmd->add_option("--max-len", rp_max_len, "Truncation length for loading")
      ->capture_default_str();
  report_cmd->add_option("-o,--output", rp_out, "Write the TSV bundle here");

  // ---- gradcheck ----
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable operation");
  int gc_instances = 20;
  std::uint64_t gc_seed = 20240901;
  gc_cmd->add_option("--instances", gc_instances, "Random instances per operation")
      ->capture_default_str();
  gc_cmd->add_option("--seed", gc_seed, "Random seed")->capture_default_str();

  // ---- sweep ----
  auto* sweep_cmd = app.add_subcommand("sweep", "Train at each sigma and tabulate error / ngtvd / diversity");
  std::string sw_corpus, sw_out, sw_models = "nnfae,atnnfae";
  std::vector<double> sw_sigmas;
  std::uint64_t sw_seed = 1, sw_steps = 2000;
  int sw_k = 1, sw_groups = 2, sw_fd = 64;
  std::size_t sw_gen_count = 200, sw_n = 8, sw_max_len = 64;
  std::uint64_t sw_m = 1ull << 20;
  sweep_cmd->add_option("corpus", sw_corpus, "Training corpus")->required();
  sweep_cmd->add_option("--sigmas", sw_sigmas, "Noise levels to train at")
      ->required()
      ->delimiter(',');
  sweep_cmd->add_option("--models", sw_models, "Comma list from {nnfae, atnnfae}")
      ->capture_default_str();
  sweep_cmd->add_option("--seed", sw_seed, "Random seed")->capture_default_str();
  sweep_cmd->add_option("--steps", sw_steps, "Steps per objective")->capture_default_str();
  sweep_cmd->add_option("--k", sw_k, "Conv layers per block")->capture_default_str();
  sweep_cmd->add_option("--groups", sw_groups, "Recursion groups")->capture_default_str();
  sweep_cmd->add_option("--feature-dim", sw_fd, "Feature channels")->capture_default_str();
  sweep_cmd->add_option("--gen-count", sw_gen_count, "Generations per cell")
      ->capture_default_str();
  sweep_cmd->add_option("--n", sw_n, "NGTVD maximum gram length")->capture_default_str();
  sweep_cmd->add_option("--m", sw_m, "NGTVD hash bins")->capture_default_str();
  sweep_cmd->add_option("--max-len", sw_max_len, "Truncation length in bytes")
      ->capture_default_str();
  sweep_cmd->add_option("-o,--output", sw_out, "Write the TSV table here");

  try {
    std::reverse(args.begin(), args.end());  // CLI11 wants reversed argv
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion& e) {
    out << app.version() << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    err << "run with --help for usage\n";
    return 1;
  }

  try {
    if (stats->parsed()) {
      Corpus c = load_corpus(stats_file, stats_max_len);
      LengthDistribution dist(c);
      detail::HeaderWriter h("corpus stats");
      h.kv("file", stats_file).kv("max_len", stats_max_len);
      h.kv("samples", c.samples.size()).kv("bytes", c.total_bytes);
      h.kv("skipped", c.skipped);
      std::ostringstream body;
      body << "length\tcount\tfrequency\n";
      for (const auto& [len, count] : dist.entries()) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%zu\t%" PRIu64 "\t%.9f\n", len, count,
                      dist.frequency(len));
        body << buf;
      }
      if (stats_out.empty())
        out << h.str() << body.str();
      else
        detail::write_text(stats_out, h.str() + body.str());
      return 0;
    }

    if (ngtvd_cmd->parsed()) {
      Corpus gen = load_corpus(ngtvd_gen, ngtvd_max_len);
      Corpus ref = load_corpus(ngtvd_ref, ngtvd_max_len);
      const GramLengths lengths =
          ngtvd_exact_only ? GramLengths::ExactOnly : GramLengths::UpToN;
      auto hg = build_histogram(gen.samples, ngtvd_n, ngtvd_m, lengths, threads);
      auto hr = build_histogram(ref.samples, ngtvd_n, ngtvd_m, lengths, threads);
      if (!ngtvd_save_gen.empty()) hg.save(ngtvd_save_gen);
      if (!ngtvd_save_ref.empty()) hr.save(ngtvd_save_ref);
      out << detail::format_metric(tvd(hg, hr)) << "\n";
      return 0;
    }

    if (ngram_train->parsed()) {
      if (nt_complex == (nt_simple_n > 0))
        throw CLI::ValidationError(
            "ngram train", "choose exactly one of --simple-n N or --complex");
      Corpus c = load_corpus(nt_corpus, nt_max_len);
      NgramModel model =
          nt_complex
              ? NgramModel(ComplexNgramModel::train(c, nt_q, nt_r, nt_min_count,
                                                    nt_max_memory))
              : NgramModel(SimpleNgramModel::train(c, nt_simple_n,
                                                   nt_max_memory));
      save_ngram_model(model, nt_out);
      out << "trained " << (nt_complex ? "complex" : "simple")
          << " model on " << c.samples.size() << " samples -> " << nt_out
          << "\n";
      return 0;
    }

    if (ngram_gen->parsed()) {
      NgramModel model = load_ngram_model(ng_model);
      std::vector<ByteSample> samples(ng_count);
      BackoffStats stats_total;
      for (std::size_t i = 0; i < ng_count; ++i) {
        Rng rng(ng_seed, "ngram-gen/" + std::to_string(i));
        samples[i] = std::visit(
            [&](const auto& m) {
              return generate(m, rng, ng_max_len, &stats_total);
            },
            model);
      }
      detail::HeaderWriter h("ngram gen");
      h.kv("model", ng_model).kv("count", ng_count).kv("seed", ng_seed);
      h.kv("max_len", ng_max_len);
      h.kv("backoff_queries", stats_total.queries);
      h.kv("backoff_steps", stats_total.backoff_steps);
      h.kv("uniform_fallbacks", stats_total.uniform_fallbacks);
      detail::write_samples(ng_out, h.str(), samples);
      return 0;
    }

    if (ngram_ppl->parsed()) {
      NgramModel model = load_ngram_model(np_model);
      Corpus c = load_corpus(np_corpus, np_max_len);
      const double ppl = std::visit(
          [&](const auto& m) { return corpus_perplexity(m, c); }, model);
      out << detail::format_metric(ppl) << "\n";
      return 0;
    }

    if (ae_train->parsed()) {
      at.cfg.adversarial = !at.nnfae_only;
      at.cfg.residual = at.residual == "pair" ? ResidualPlacement::PairWithinGroup
                                              : ResidualPlacement::PerLayer;
      at.cfg.max_len = static_cast<int>(at.max_len);
      Corpus c = load_corpus(at.corpus_path, at.max_len);
      auto params = make_atnnfae(at.cfg, LengthDistribution(c));
      TrainControl ctrl;
      ctrl.eval_every = at.eval_every;
      ctrl.eval_samples = at.eval_samples;
      ctrl.stop_below_error = at.stop_below_error;
      ctrl.checkpoint_path = at.out_path;
      auto result = train(params, c, ctrl);
      if (!at.log_path.empty()) {
        detail::HeaderWriter h("ae train");
        h.kv("corpus", at.corpus_path).kv("k", at.cfg.k).kv("groups", at.cfg.groups);
        h.kv("feature_dim", at.cfg.feature_dim).kv("kernel", at.cfg.kernel);
        h.kv("sigma", at.cfg.sigma).kv("margin", at.cfg.margin);
        h.kv("lr", at.cfg.lr).kv("lr_halve", at.cfg.lr_halve_every);
        h.kv("steps", at.cfg.steps).kv("steps_per_objective", at.cfg.steps_per_objective);
        h.kv("adversarial", at.cfg.adversarial ? 1 : 0);
        h.kv("residual", at.residual).kv("seed", at.cfg.seed);
        detail::write_text(at.log_path, detail::train_log_tsv(h.str(), result));
      }
      char buf[128];
      std::snprintf(buf, sizeof buf,
                    "trained %" PRIu64 " steps/objective, final error %.6f\n",
                    result.steps_done, result.final_error);
      out << buf;
      return 0;
    }

    if (ae_gen->parsed()) {
      auto params = load_checkpoint(ag_ckpt);
      auto samples = generate_text(params, ag_seed, ag_count, threads);
      detail::HeaderWriter h("ae gen");
      h.kv("ckpt", ag_ckpt).kv("count", ag_count).kv("seed", ag_seed);
      detail::write_samples(ag_out, h.str(), samples);
      return 0;
    }

    if (ae_recon->parsed()) {
      auto params = load_checkpoint(ar_ckpt);
      Corpus c = load_corpus(ar_corpus, ar_max_len);
      const double sigma = ar_sigma < 0 ? params.cfg.sigma : ar_sigma;
      out << detail::format_metric(reconstruction_error(params, c, sigma,
                                                        ar_seed, threads))
          << "\n";
      return 0;
    }

    if (ae_interp->parsed()) {
      auto params = load_checkpoint(ai_ckpt);
      Corpus c = load_corpus(ai_corpus, params.cfg.max_len);
      if (ai_a >= c.samples.size() || ai_b >= c.samples.size())
        throw DataError("sample index out of range");
      auto steps = interpolate(params, c.samples[ai_a], c.samples[ai_b],
                               static_cast<int>(ai_steps));
      ByteSample last;
      for (std::size_t i = 0; i < steps.size(); ++i) {
        if (!ai_all && i > 0 && steps[i] == last) continue;
        last = steps[i];
        out << i << "\t" << std::string(steps[i].begin(), steps[i].end())
            << "\n";
      }
      return 0;
    }

    if (select_cmd->parsed()) {
      Corpus target = load_corpus(sel_target, sel_max_len);
      Corpus gen = load_corpus(sel_gen, sel_max_len);
      auto result = output_selection(gen.samples, LengthDistribution(target),
                                     sel_count, sel_bin);
      detail::HeaderWriter h("select");
      h.kv("target", sel_target).kv("gen", sel_gen).kv("count", sel_count);
      h.kv("bin_width", sel_bin).kv("accepted", result.selected.size());
      std::uint64_t missing = 0;
      for (const auto& [bin, left] : result.shortfall) missing += left;
      h.kv("shortfall", missing);
      detail::write_samples(sel_out, h.str(), result.selected);
      if (missing > 0) {
        err << "warning: " << missing << " quota slots unfilled across "
            << result.shortfall.size() << " length bins\n";
      }
      return 0;
    }

    if (correct_cmd->parsed()) {
      auto params = load_checkpoint(co_ckpt);
      NgramModel model = load_ngram_model(co_ngram);
      auto samples = std::visit(
          [&](const auto& m) {
            return generate_corrected(params, m, co_seed, co_count, co_beam,
                                      threads);
          },
          model);
      detail::HeaderWriter h("correct");
      h.kv("ckpt", co_ckpt).kv("ngram", co_ngram).kv("beam", co_beam);
      h.kv("count", co_count).kv("seed", co_seed);
      detail::write_samples(co_out, h.str(), samples);
      return 0;
    }

    if (smooth_cmd->parsed()) {
      Corpus gen = load_corpus(sm_gen, sm_max_len);
      auto dict = load_dictionary(sm_dict);
      auto r = intra_word_smoothness(gen.samples, dict);
      if (auto v = r.value())
        out << detail::format_metric(*v) << "\n";
      else
        out << "undefined (no tokens)\n";
      return 0;
    }

    if (report_cmd->parsed()) {
      Corpus gen = load_corpus(rp_gen, rp_max_len);
      Corpus ref = load_corpus(rp_ref, rp_max_len);
      ReportConfig cfg;
      cfg.max_n = rp_n;
      cfg.m_bins = rp_m;
      cfg.threads = threads;
      cfg.dict_path = rp_dict;
      auto report = make_report(gen.samples, ref.samples, cfg);
      out << report_summary(report);
      if (!rp_out.empty()) {
        detail::HeaderWriter h("report");
        h.kv("gen", rp_gen).kv("ref", rp_ref).kv("n", rp_n).kv("m", rp_m);
        if (!rp_dict.empty()) h.kv("dict", rp_dict);
        detail::write_text(rp_out, h.str() + report_tsv(report));
      }
      return 0;
    }

    if (gc_cmd->parsed()) {
      auto rows = run_gradcheck_suite(gc_seed, gc_instances);
      bool all_pass = true;
      char buf[160];
      std::snprintf(buf, sizeof buf, "%-24s %10s %8s %14s %6s\n", "operation",
                    "instances", "coords", "max_rel_err", "pass");
      out << buf;
      for (const auto& row : rows) {
        std::snprintf(buf, sizeof buf, "%-24s %10d %8zu %14.3e %6s\n",
                      row.name.c_str(), row.instances, row.coords,
                      row.max_rel_err, row.pass ? "yes" : "NO");
        out << buf;
        all_pass = all_pass && row.pass;
      }
      return all_pass ? 0 : 2;
    }

    if (sweep_cmd->parsed()) {
      Corpus c = load_corpus(sw_corpus, sw_max_len);
      std::vector<std::string> models;
      {
        std::stringstream ss(sw_models);
        std::string item;
        while (std::getline(ss, item, ',')) models.push_back(item);
      }
      detail::HeaderWriter h("sweep");
      h.kv("corpus", sw_corpus).kv("seed", sw_seed).kv("steps", sw_steps);
      h.kv("k", sw_k).kv("groups", sw_groups).kv("feature_dim", sw_fd);
      h.kv("gen_count", sw_gen_count).kv("n", sw_n).kv("m", sw_m);
      std::ostringstream table;
      table << "sigma\tmodel\terror\tngtvd\tdistinct_ratio\n";
      for (double sigma : sw_sigmas) {
        for (const auto& model_name : models) {
          AtnnfaeConfig cfg;
          cfg.k = sw_k;
          cfg.groups = sw_groups;
          cfg.feature_dim = sw_fd;
          cfg.sigma = sigma;
          cfg.steps = sw_steps;
          cfg.seed = sw_seed;
          cfg.max_len = static_cast<int>(sw_max_len);
          cfg.adversarial = model_name == "atnnfae";
          auto params = make_atnnfae(cfg, LengthDistribution(c));
          TrainControl ctrl;
          ctrl.eval_every = sw_steps;  // evaluate once at the end
          auto result = train(params, c, ctrl);
          auto samples = generate_text(params, sw_seed, sw_gen_count, threads);
          NgtvdConfig ncfg{sw_n, sw_m, GramLengths::UpToN, threads};
          // degenerate generations (all empty) leave nothing to measure
          bool any = false;
          for (const auto& s : samples) any = any || !s.empty();
          const double metric =
              any ? ngtvd(samples, c.samples, ncfg)
                  : 1.0;
          char buf[160];
          std::snprintf(buf, sizeof buf, "%.17g\t%s\t%.9f\t%.9f\t%.9f\n",
                        sigma, model_name.c_str(), result.final_error, metric,
                        distinct_output_ratio(samples));
          table << buf;
        }
      }
      if (sw_out.empty())
        out << h.str() << table.str();
      else
        detail::write_text(sw_out, h.str() + table.str());
      return 0;
    }
  } catch (const CLI::ValidationError& e) {
    err << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  err << "no subcommand given; run with --help for usage\n";
  return 1;
}

}  // namespace bytegen::cli
