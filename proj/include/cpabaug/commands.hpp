#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cpabaug/config.hpp"

namespace cpabaug {

namespace fs = std::filesystem;

// In-process implementations of the command-line subcommands. They print
// progress to `log` and throw the library's error types on failure.

void cmd_synth(const PipelineConfig& cfg, const fs::path& out_dir, std::ostream& log);

struct ExtractSummary {
  std::size_t images = 0;
  std::size_t patches = 0;
  std::size_t pairs = 0;
};

ExtractSummary cmd_extract(const PipelineConfig& cfg, const fs::path& corpus, const fs::path& out_dir,
                           std::ostream& log);

struct TrainSummary {
  int epochs_run = 0;
  int best_epoch = 0;
  bool stopped_early = false;
  double best_val_total = 0.0;
};

/// Trains from the config's seed and writes the model file and the history
/// CSV (epoch, train_recon, train_kl, train_reg, train_total, val_total).
TrainSummary cmd_train(const PipelineConfig& cfg, const fs::path& pairset, const fs::path& model_out,
                       const fs::path& history_csv, std::ostream& log);

/// The untrained model a training run starts from.
GenModel initial_model(const PipelineConfig& cfg);

struct ReconstructReport {
  std::size_t pairs = 0;
  double mean_l2 = 0.0;
  double baseline_l2 = 0.0;
};

/// Pairs of the validation split used in training (recomputed from the
/// seed and fraction recorded in the model, or from the config for an
/// untrained model).
std::vector<int> validation_pairs(const GenModel& model, const PipelineConfig& cfg, std::size_t n_pairs);

/// Writes src/tgt/reconstruction PGM triplets of the validation pairs and
/// report.json {pairs, mean_l2, baseline_l2}.
ReconstructReport cmd_reconstruct(const PipelineConfig& cfg, const fs::path& model_path, const fs::path& pairset,
                                  const fs::path& out_dir, std::ostream& log);

/// Writes n deformed variants of one patch (resized to S x S if needed).
void cmd_sample(const PipelineConfig& cfg, const fs::path& model_path, const fs::path& patch, int n,
                const fs::path& out_dir, std::ostream& log);

enum class AugmentMode { Diffeo, CopyPaste, Both };

struct AugmentSummary {
  std::size_t images = 0;
  std::size_t deformed = 0;
  std::size_t pasted = 0;
  std::size_t audit_records = 0;
};

/// Augments every corpus image and writes the augmented corpus plus
/// audit.jsonl. Images are processed on up to cfg.jobs threads; output
/// does not depend on the job count.
AugmentSummary cmd_augment(const PipelineConfig& cfg, const fs::path& model_path, const fs::path& corpus,
                           const fs::path& out_dir, AugmentMode mode, std::ostream& log);

struct CheckRow {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct CheckReport {
  std::vector<CheckRow> rows;
  bool all_pass() const;
};

/// Invariant suite on the configured tessellation and integration:
/// geometry oracles, integrator accuracy, inverse composition, gradient
/// checks and blend locality. With a model path the model file is also
/// loaded and validated (schema errors propagate).
CheckReport cmd_check(const PipelineConfig& cfg, const std::optional<fs::path>& model_path, std::ostream& log);

}  // namespace cpabaug
