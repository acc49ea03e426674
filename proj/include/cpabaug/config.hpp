#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>

#include "cpabaug/augmentor.hpp"
#include "cpabaug/cpab.hpp"
#include "cpabaug/genmodel.hpp"
#include "cpabaug/synth.hpp"
#include "cpabaug/tessellation.hpp"

namespace cpabaug {

struct PathsConfig {
  std::string corpus = "corpus";
  std::string pairset = "pairset";
  std::string model = "model.gmod";
  std::string history = "history.csv";
  std::string out = "out";
};

/// Everything the command-line tool can be told. JSON layout:
///   tessellation {nx, ny}, integration {n_steps, t_final},
///   patch {S, min_area, K, label}, train {epochs, batch, lr, beta,
///   lambda_reg, patience, seed, preset, latent_dim, val_fraction},
///   blend {rings, decay}, copy_paste {...}, augment {seed},
///   synth {...}, paths {...}, jobs.
struct PipelineConfig {
  TessellationConfig tessellation;
  IntegrationConfig integration;
  int patch_size = 30;
  int min_area = 16;
  int k = 8;
  int label = 1;
  TrainConfig train;
  Preset preset = Preset::Desk;
  int latent_dim = 12;
  BlendConfig blend;
  CopyPasteConfig copy_paste;
  std::uint64_t augment_seed = 0;
  SyntheticCorpusSpec synth;
  PathsConfig paths;
  int jobs = 1;

  void validate() const;
};

nlohmann::ordered_json to_json(const PipelineConfig& cfg);

/// Parses a config document; missing keys take defaults, unknown keys and
/// wrongly typed values throw SchemaError.
PipelineConfig config_from_json(const nlohmann::ordered_json& doc, const std::string& where = "config");

/// Reads and parses a config file (IoError if unreadable).
PipelineConfig load_config(const std::filesystem::path& path);

/// Name of the seed override environment variable.
inline constexpr const char* kSeedEnv = "CPAB_AUGMENT_SEED";

/// Applies CPAB_AUGMENT_SEED (if set) to every seed in the config.
void apply_seed_env(PipelineConfig& cfg);

/// Sets the leaf `dotted_key` (e.g. "train.epochs") of a config document
/// from its text form, using the type of the default value.
void set_config_value(nlohmann::ordered_json& doc, const std::string& dotted_key, const std::string& text);

/// Dotted names of every leaf in the default config, in document order.
std::vector<std::string> config_keys();

}  // namespace cpabaug
