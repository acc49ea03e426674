#include <doctest.h>

#include <chrono>
#include <map>
#include <sstream>

#include "cpabaug/commands.hpp"
#include "cpabaug/errors.hpp"
#include "support.hpp"

using namespace cpabaug;
using ojson = nlohmann::ordered_json;

namespace {

PipelineConfig tiny_config() {
  PipelineConfig c;
  c.synth.n_images = 8;
  c.synth.width = 48;
  c.synth.height = 48;
  c.synth.radius_min = 5.0;
  c.synth.radius_max = 8.0;
  c.synth.blobs_min = 1;
  c.synth.blobs_max = 2;
  c.synth.seed = 21;
  c.patch_size = 16;
  c.latent_dim = 4;
  c.k = 2;
  c.train.epochs = 5;
  c.train.batch_size = 4;
  c.train.learning_rate = 1e-3;
  c.train.val_fraction = 0.25;
  c.train.seed = 2;
  c.augment_seed = 9;
  return c;
}

// Corpus and pairset shared by the tests in this file.
struct Fixture {
  testing::TempDir dir{"commands"};
  PipelineConfig cfg = tiny_config();
  std::ostringstream log;
  ExtractSummary extracted;

  Fixture() {
    cmd_synth(cfg, dir / "corpus", log);
    extracted = cmd_extract(cfg, dir / "corpus", dir / "pairset", log);
  }

  fs::path zero_model() {
    const fs::path p = dir / "zero.gmod";
    save_model(p, make_model(cfg.preset, cfg.patch_size, cfg.latent_dim, cfg.tessellation, cfg.integration));
    return p;
  }

  // Random weights everywhere so sampled theta is non-trivial.
  fs::path random_model() {
    const fs::path p = dir / "random.gmod";
    GenModel m = initial_model(cfg);
    Rng rng(1);
    const auto& last = m.decoder.layers().back();
    for (std::size_t i = last.weight_offset; i < last.bias_offset + last.out_c; ++i) m.params[i] = 0.3 * rng.normal();
    round_params_to_f32(m);
    save_model(p, m);
    return p;
  }
};

std::size_t count_files(const fs::path& dir) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir)) n += e.is_regular_file();
  return n;
}

std::vector<ojson> read_audit(const fs::path& path) {
  std::vector<ojson> out;
  std::istringstream in(testing::read_text(path));
  for (std::string line; std::getline(in, line);) out.push_back(ojson::parse(line));
  return out;
}

}  // namespace

TEST_CASE("extract: counts, reproducibility, empty corpus") {
  Fixture f;
  CHECK(f.extracted.images == 8);
  CHECK(f.extracted.patches >= 8);
  CHECK(f.extracted.pairs == f.extracted.patches * 2);
  const PairSet set = read_pairset(f.dir / "pairset");
  CHECK(set.patches.size() == f.extracted.patches);
  CHECK(set.patch_size == 16);

  cmd_extract(f.cfg, f.dir / "corpus", f.dir / "pairset2", f.log);
  CHECK(testing::snapshot(f.dir / "pairset") == testing::snapshot(f.dir / "pairset2"));
  f.cfg.jobs = 3;
  cmd_extract(f.cfg, f.dir / "corpus" / "manifest.json", f.dir / "pairset3", f.log);
  CHECK(testing::snapshot(f.dir / "pairset") == testing::snapshot(f.dir / "pairset3"));

  PipelineConfig empty = f.cfg;
  empty.synth.blobs_min = empty.synth.blobs_max = 0;
  cmd_synth(empty, f.dir / "empty", f.log);
  CHECK_THROWS_WITH_AS(cmd_extract(empty, f.dir / "empty", f.dir / "nothing", f.log),
                       doctest::Contains("no objects found"), ValidationError);
  CHECK_THROWS_AS(cmd_extract(f.cfg, f.dir / "missing", f.dir / "nothing", f.log), IoError);
}

TEST_CASE("train: tiny run is fast, finite and reproducible") {
  Fixture f;
  const auto t0 = std::chrono::steady_clock::now();
  const TrainSummary s = cmd_train(f.cfg, f.dir / "pairset", f.dir / "m.gmod", f.dir / "h.csv", f.log);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 60.0);
  CHECK(s.epochs_run == 5);
  CHECK(s.best_epoch >= 1);
  CHECK(s.best_epoch <= 5);
  CHECK(std::isfinite(s.best_val_total));

  const std::string csv = testing::read_text(f.dir / "h.csv");
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,train_recon,train_kl,train_reg,train_total,val_total");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    std::istringstream cells(line);
    for (std::string cell; std::getline(cells, cell, ',');) CHECK(std::isfinite(std::stod(cell)));
  }
  CHECK(rows == 5);

  const GenModel m = load_model(f.dir / "m.gmod");
  CHECK(m.patch_size == 16);
  CHECK(m.latent_dim == 4);

  cmd_train(f.cfg, f.dir / "pairset", f.dir / "m2.gmod", f.dir / "h2.csv", f.log);
  CHECK(testing::read_bytes(f.dir / "m.gmod") == testing::read_bytes(f.dir / "m2.gmod"));
  CHECK(testing::read_text(f.dir / "h2.csv") == csv);

  PipelineConfig wrong = f.cfg;
  wrong.patch_size = 20;
  CHECK_THROWS_AS(cmd_train(wrong, f.dir / "pairset", f.dir / "x.gmod", f.dir / "x.csv", f.log), ShapeMismatch);
}

TEST_CASE("reconstruct: zero model equals the identity baseline") {
  Fixture f;
  const ReconstructReport r = cmd_reconstruct(f.cfg, f.zero_model(), f.dir / "pairset", f.dir / "rec", f.log);
  CHECK(r.pairs >= 1);
  CHECK(r.mean_l2 == r.baseline_l2);
  const ojson j = ojson::parse(testing::read_text(f.dir / "rec" / "report.json"));
  CHECK(j["pairs"] == r.pairs);
  CHECK(j["mean_l2"].get<double>() == r.mean_l2);
  CHECK(j["baseline_l2"].get<double>() == r.baseline_l2);
  CHECK(count_files(f.dir / "rec") == 3 * r.pairs + 1);
  for (const auto& e : fs::directory_iterator(f.dir / "rec")) {
    const std::string name = e.path().filename().string();
    if (name.size() > 8 && name.substr(name.size() - 8) == "_rec.pgm") {
      const std::string stem = name.substr(0, name.size() - 8);
      CHECK(testing::read_bytes(e.path()) == testing::read_bytes(f.dir / "rec" / (stem + "_src.pgm")));
    }
  }
}

TEST_CASE("sample: count and determinism") {
  Fixture f;
  const fs::path model = f.random_model();
  const fs::path patch = f.dir / "pairset" / "patches" / "patch_00000.pgm";
  cmd_sample(f.cfg, model, patch, 0, f.dir / "none", f.log);
  CHECK(count_files(f.dir / "none") == 0);
  cmd_sample(f.cfg, model, patch, 4, f.dir / "s1", f.log);
  cmd_sample(f.cfg, model, patch, 4, f.dir / "s2", f.log);
  CHECK(count_files(f.dir / "s1") == 4);
  CHECK(testing::snapshot(f.dir / "s1") == testing::snapshot(f.dir / "s2"));
  const auto files = testing::snapshot(f.dir / "s1");
  CHECK(files.begin()->second != std::next(files.begin())->second);
  CHECK_THROWS_AS(cmd_sample(f.cfg, model, patch, -1, f.dir / "neg", f.log), ValidationError);
  CHECK_THROWS_AS(cmd_sample(f.cfg, model, f.dir / "nope.pgm", 1, f.dir / "neg", f.log), IoError);
}

TEST_CASE("augment: zero decoder with diffeo only reproduces the corpus") {
  Fixture f;
  const AugmentSummary s = cmd_augment(f.cfg, f.zero_model(), f.dir / "corpus", f.dir / "aug", AugmentMode::Diffeo, f.log);
  CHECK(s.images == 8);
  CHECK(s.pasted == 0);
  CHECK(s.deformed == f.extracted.patches);
  const auto in = testing::snapshot(f.dir / "corpus");
  const auto snap = testing::snapshot(f.dir / "aug");
  const std::map<std::string, std::vector<char>> out(snap.begin(), snap.end());
  for (const auto& [name, bytes] : in) {
    if (name.rfind("images/", 0) == 0 || name.rfind("masks/", 0) == 0) CHECK(out.at(name) == bytes);
  }
  CHECK(read_corpus(f.dir / "aug").size() == 8);
}

TEST_CASE("augment --both: reproducible, job-count independent, audit consistent") {
  Fixture f;
  const fs::path model = f.random_model();
  const AugmentSummary a = cmd_augment(f.cfg, model, f.dir / "corpus", f.dir / "a1", AugmentMode::Both, f.log);
  cmd_augment(f.cfg, model, f.dir / "corpus", f.dir / "a2", AugmentMode::Both, f.log);
  f.cfg.jobs = 3;
  cmd_augment(f.cfg, model, f.dir / "corpus", f.dir / "a3", AugmentMode::Both, f.log);
  CHECK(testing::snapshot(f.dir / "a1") == testing::snapshot(f.dir / "a2"));
  CHECK(testing::snapshot(f.dir / "a1") == testing::snapshot(f.dir / "a3"));

  const auto audit = read_audit(f.dir / "a1" / "audit.jsonl");
  CHECK(audit.size() == a.audit_records);
  std::size_t deforms = 0, pastes = 0, originals = 0;
  for (const auto& r : audit) {
    CHECK(r["seed"] == f.cfg.augment_seed);
    CHECK(r.contains("stream_seed"));
    CHECK(r.contains("image_id"));
    if (r["event"] == "deform") {
      ++deforms;
      originals += r["kind"] == "original";
    }
    pastes += r["event"] == "paste";
  }
  CHECK(deforms == a.deformed);
  CHECK(pastes == a.pasted);
  CHECK(originals == f.extracted.patches);
  CHECK(a.deformed == f.extracted.patches + a.pasted);
  CHECK(a.pasted > 0);

  f.cfg.augment_seed = 10;
  cmd_augment(f.cfg, model, f.dir / "corpus", f.dir / "a4", AugmentMode::Both, f.log);
  CHECK(testing::snapshot(f.dir / "a1") != testing::snapshot(f.dir / "a4"));

  const AugmentSummary cp = cmd_augment(f.cfg, model, f.dir / "corpus", f.dir / "cp", AugmentMode::CopyPaste, f.log);
  CHECK(cp.deformed == 0);
  CHECK(cp.pasted > 0);
}

TEST_CASE("check: passes by default, reports degraded tolerance at n_steps = 1") {
  std::ostringstream log;
  PipelineConfig cfg;
  const CheckReport rep = cmd_check(cfg, std::nullopt, log);
  CHECK(rep.rows.size() >= 7);
  for (const auto& r : rep.rows) {
    INFO(r.name << ": " << r.detail);
    CHECK(r.pass);
  }
  CHECK(rep.all_pass());

  cfg.integration.n_steps = 1;
  const CheckReport deg = cmd_check(cfg, std::nullopt, log);
  bool noted = false;
  for (const auto& r : deg.rows) noted |= r.detail.find("degraded tolerance") != std::string::npos;
  CHECK(noted);
  CHECK(deg.rows.size() == rep.rows.size());
}

TEST_CASE("check validates a model file") {
  Fixture f;
  std::ostringstream log;
  const CheckReport rep = cmd_check(f.cfg, f.random_model(), log);
  CHECK(rep.all_pass());
  std::ofstream(f.dir / "junk.gmod") << "not a model";
  CHECK_THROWS_AS(cmd_check(f.cfg, f.dir / "junk.gmod", log), SchemaError);
}
