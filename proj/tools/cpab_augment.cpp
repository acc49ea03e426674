// cpab-augment: command-line front end.
//
//   cpab-augment <synth|extract|train|reconstruct|sample|augment|check>
//                [--config path.json] [--<section>.<key> value ...] [flags]

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "cpabaug/commands.hpp"
#include "cpabaug/errors.hpp"

namespace {

using cpabaug::ErrorKind;

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Validation:
      return 1;
    case ErrorKind::Io:
      return 2;
    case ErrorKind::Numeric:
      return 3;
  }
  return 1;
}

// Short spellings of the path keys.
const std::map<std::string, std::string> kAliases = {
    {"paths.corpus", "--corpus"}, {"paths.pairset", "--pairset"}, {"paths.model", "--model"},
    {"paths.history", "--history"}, {"paths.out", "--out"},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Object-centric CPAB augmentation: synthetic data, pair extraction, training and augmentation"};
  app.fallthrough();
  app.require_subcommand(1, 1);

  std::string config_path;
  app.add_option("--config", config_path, "JSON config file");

  std::map<std::string, std::string> overrides;
  std::map<std::string, CLI::Option*> override_opts;
  for (const std::string& key : cpabaug::config_keys()) {
    std::string names = "--" + key;
    if (auto it = kAliases.find(key); it != kAliases.end()) names += "," + it->second;
    override_opts[key] = app.add_option(names, overrides[key], "config " + key)->group("Config overrides");
  }

  auto* synth = app.add_subcommand("synth", "generate a synthetic blob corpus into paths.corpus");
  auto* extract = app.add_subcommand("extract", "extract object patches from paths.corpus and pair them");
  auto* train = app.add_subcommand("train", "train the generative model on paths.pairset");
  auto* recon = app.add_subcommand("reconstruct", "reconstruct validation pairs and report mean L2");
  auto* sample = app.add_subcommand("sample", "write n deformed variants of one patch");
  auto* augment = app.add_subcommand("augment", "augment every image of paths.corpus");
  auto* check = app.add_subcommand("check", "run the invariant suite");

  std::string patch;
  int n = 16;
  sample->add_option("--patch", patch, "input patch (PGM)")->required();
  sample->add_option("-n,--n", n, "number of variants");

  bool diffeo = false, copy_paste = false, both = false;
  auto* f1 = augment->add_flag("--diffeo", diffeo, "in-place diffeomorphic deformation only (default)");
  auto* f2 = augment->add_flag("--copy-paste", copy_paste, "copy-paste only");
  auto* f3 = augment->add_flag("--both", both, "copy-paste, then deform every instance");
  f1->excludes(f2)->excludes(f3);
  f2->excludes(f3);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    nlohmann::ordered_json doc = nlohmann::ordered_json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path, std::ios::binary);
      if (!in) throw cpabaug::IoError("cannot open config " + config_path);
      try {
        doc = nlohmann::ordered_json::parse(in);
      } catch (const nlohmann::json::parse_error& e) {
        throw cpabaug::SchemaError(config_path + ": invalid JSON at byte " + std::to_string(e.byte) + ": " + e.what());
      }
    }
    for (const auto& [key, opt] : override_opts) {
      if (opt->count() > 0) cpabaug::set_config_value(doc, key, overrides[key]);
    }
    cpabaug::PipelineConfig cfg = cpabaug::config_from_json(doc, config_path.empty() ? "config" : config_path);
    cpabaug::apply_seed_env(cfg);
    cfg.validate();

    std::ostream& log = std::cout;
    if (*synth) {
      cpabaug::cmd_synth(cfg, cfg.paths.corpus, log);
    } else if (*extract) {
      cpabaug::cmd_extract(cfg, cfg.paths.corpus, cfg.paths.pairset, log);
    } else if (*train) {
      cpabaug::cmd_train(cfg, cfg.paths.pairset, cfg.paths.model, cfg.paths.history, log);
    } else if (*recon) {
      cpabaug::cmd_reconstruct(cfg, cfg.paths.model, cfg.paths.pairset, cfg.paths.out, log);
    } else if (*sample) {
      cpabaug::cmd_sample(cfg, cfg.paths.model, patch, n, cfg.paths.out, log);
    } else if (*augment) {
      const auto mode = copy_paste ? cpabaug::AugmentMode::CopyPaste
                                   : (both ? cpabaug::AugmentMode::Both : cpabaug::AugmentMode::Diffeo);
      cpabaug::cmd_augment(cfg, cfg.paths.model, cfg.paths.corpus, cfg.paths.out, mode, log);
    } else if (*check) {
      std::optional<std::filesystem::path> model;
      if (override_opts["paths.model"]->count() > 0) model = cfg.paths.model;
      const auto report = cpabaug::cmd_check(cfg, model, log);
      return report.all_pass() ? 0 : 3;
    }
    return 0;
  } catch (const cpabaug::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
