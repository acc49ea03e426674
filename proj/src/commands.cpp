#include "cpabaug/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <thread>

#include "cpabaug/augmentor.hpp"
#include "cpabaug/errors.hpp"
#include "cpabaug/patchkit.hpp"
#include "cpabaug/synth.hpp"
#include "cpabaug/warp.hpp"

namespace cpabaug {

using ojson = nlohmann::ordered_json;

namespace {

// Runs fn(i) for i in [0, n) on up to `jobs` threads. The first failure in
// index order is rethrown, so errors do not depend on scheduling.
template <typename F>
void parallel_for(std::size_t n, int jobs, F&& fn) {
  const int workers = std::clamp(jobs, 1, static_cast<int>(std::max<std::size_t>(n, 1)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string indexed(const char* stem, std::size_t i, const char* suffix) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%s_%05zu%s", stem, i, suffix);
  return buf;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Eigen::VectorXd random_theta(Rng& rng, int dim, double max_norm) {
  Eigen::VectorXd t(dim);
  for (int i = 0; i < dim; ++i) t(i) = rng.normal();
  return t * (rng.uniform(0.1, 1.0) * max_norm / t.norm());
}

}  // namespace

void cmd_synth(const PipelineConfig& cfg, const fs::path& out_dir, std::ostream& log) {
  cfg.synth.validate();
  write_corpus(out_dir, cfg.synth);
  log << "wrote " << cfg.synth.n_images << " images to " << out_dir.string() << "\n";
}

ExtractSummary cmd_extract(const PipelineConfig& cfg, const fs::path& corpus, const fs::path& out_dir,
                           std::ostream& log) {
  cfg.validate();
  const auto entries = read_corpus(corpus);
  const fs::path root = fs::is_directory(corpus) ? corpus : corpus.parent_path();
  std::vector<std::vector<PatchRecord>> per_image(entries.size());
  const ExtractOptions opts{cfg.patch_size, cfg.min_area};
  parallel_for(entries.size(), cfg.jobs, [&](std::size_t i) {
    const Image img = read_pgm_image(root / entries[i].image);
    const Mask mask = read_pgm_mask(root / entries[i].mask);
    if (img.width() != mask.width() || img.height() != mask.height())
      throw ShapeMismatch("image and mask of '" + entries[i].id + "' differ in size");
    auto recs = extract_objects(img, mask, cfg.label, opts, entries[i].id);
    // Snap to 8 bits so the in-memory pairing sees what is written.
    for (auto& r : recs) r.patch = quantize8(r.patch);
    per_image[i] = std::move(recs);
  });
  PairSet set;
  set.patch_size = cfg.patch_size;
  for (auto& v : per_image) {
    for (auto& r : v) set.patches.push_back(std::move(r));
  }
  if (set.patches.empty()) throw ValidationError("no objects found in corpus " + corpus.string());
  set.pairs = pair_patches(set.patches, cfg.k);
  write_pairset(out_dir, set);
  ExtractSummary s{entries.size(), set.patches.size(), set.pairs.size()};
  log << "patches " << s.patches << " pairs " << s.pairs << "\n";
  return s;
}

GenModel initial_model(const PipelineConfig& cfg) {
  GenModel m = make_model(cfg.preset, cfg.patch_size, cfg.latent_dim, cfg.tessellation, cfg.integration);
  Rng rng(derive_seed(cfg.train.seed, "init"));
  initialize_params(m, rng);
  return m;
}

TrainSummary cmd_train(const PipelineConfig& cfg, const fs::path& pairset, const fs::path& model_out,
                       const fs::path& history_csv, std::ostream& log) {
  cfg.validate();
  const PairSet set = read_pairset(pairset);
  if (set.patch_size != cfg.patch_size)
    throw ShapeMismatch("pairset has " + std::to_string(set.patch_size) + "px patches, config expects " +
                        std::to_string(cfg.patch_size));
  std::string csv = "epoch,train_recon,train_kl,train_reg,train_total,val_total\n";
  const TrainResult res = train(initial_model(cfg), set, cfg.train, [&](const EpochRecord& e) {
    csv += std::to_string(e.epoch) + "," + fmt(e.train.recon) + "," + fmt(e.train.kl) + "," + fmt(e.train.reg) + "," +
           fmt(e.train.total) + "," + fmt(e.val_total) + "\n";
    char line[160];
    std::snprintf(line, sizeof(line), "epoch %d  train %.6g (recon %.6g kl %.4g reg %.4g)  val %.6g\n", e.epoch,
                  e.train.total, e.train.recon, e.train.kl, e.train.reg, e.val_total);
    log << line << std::flush;
  });
  GenModel model = res.model;
  round_params_to_f32(model);
  if (model_out.has_parent_path()) make_dirs(model_out.parent_path());
  save_model(model_out, model);
  if (history_csv.has_parent_path()) make_dirs(history_csv.parent_path());
  write_text(history_csv, csv);
  TrainSummary s;
  s.epochs_run = static_cast<int>(res.history.size());
  s.best_epoch = res.best_epoch;
  s.stopped_early = res.stopped_early;
  s.best_val_total = model.provenance.value("best_val_total", 0.0);
  log << "best epoch " << s.best_epoch << " of " << s.epochs_run << (s.stopped_early ? " (early stop)" : "") << "\n";
  return s;
}

std::vector<int> validation_pairs(const GenModel& model, const PipelineConfig& cfg, std::size_t n_pairs) {
  std::uint64_t seed = cfg.train.seed;
  double fraction = cfg.train.val_fraction;
  const ojson& p = model.provenance;
  if (p.is_object() && p.contains("seed") && p.contains("val_fraction") &&
      p.value("n_pairs", std::size_t{0}) == n_pairs) {
    seed = p.at("seed").get<std::uint64_t>();
    fraction = p.at("val_fraction").get<double>();
  }
  return split_pairs(n_pairs, fraction, seed).val;
}

ReconstructReport cmd_reconstruct(const PipelineConfig& cfg, const fs::path& model_path, const fs::path& pairset,
                                  const fs::path& out_dir, std::ostream& log) {
  const GenModel model = load_model(model_path);
  const PairSet set = read_pairset(pairset);
  if (set.patch_size != model.patch_size)
    throw ShapeMismatch("pairset patch size " + std::to_string(set.patch_size) + " differs from the model's " +
                        std::to_string(model.patch_size));
  const std::vector<int> val = validation_pairs(model, cfg, set.pairs.size());
  make_dirs(out_dir);
  for (int idx : val) {
    const PatchPair& pr = set.pairs[idx];
    const Image& src = set.patches[pr.src_index].patch;
    const Image& tgt = set.patches[pr.tgt_index].patch;
    const Image rec = apply_theta(model, src, infer_theta(model, src, tgt));
    write_pgm(out_dir / indexed("pair", static_cast<std::size_t>(idx), "_src.pgm"), src);
    write_pgm(out_dir / indexed("pair", static_cast<std::size_t>(idx), "_tgt.pgm"), tgt);
    write_pgm(out_dir / indexed("pair", static_cast<std::size_t>(idx), "_rec.pgm"), rec);
  }
  ReconstructReport r;
  r.pairs = val.size();
  r.mean_l2 = evaluate(model, set, val);
  r.baseline_l2 = identity_baseline(set, val);
  ojson j;
  j["pairs"] = r.pairs;
  j["mean_l2"] = r.mean_l2;
  j["baseline_l2"] = r.baseline_l2;
  write_text(out_dir / "report.json", j.dump(2) + "\n");
  log << j.dump() << "\n";
  return r;
}

void cmd_sample(const PipelineConfig& cfg, const fs::path& model_path, const fs::path& patch, int n,
                const fs::path& out_dir, std::ostream& log) {
  if (n < 0) throw ValidationError("sample count must be non-negative");
  const GenModel model = load_model(model_path);
  Image src = read_pgm_image(patch);
  if (src.width() != model.patch_size || src.height() != model.patch_size)
    src = resize(src, model.patch_size, model.patch_size);
  make_dirs(out_dir);
  Rng rng(derive_seed(cfg.augment_seed, "sample"));
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd theta = sample_theta(model, rng);
    write_pgm(out_dir / indexed("variant", static_cast<std::size_t>(i), ".pgm"), apply_theta(model, src, theta));
  }
  log << "wrote " << n << " variants to " << out_dir.string() << "\n";
}

AugmentSummary cmd_augment(const PipelineConfig& cfg, const fs::path& model_path, const fs::path& corpus,
                           const fs::path& out_dir, AugmentMode mode, std::ostream& log) {
  cfg.validate();
  const GenModel model = load_model(model_path);
  const auto entries = read_corpus(corpus);
  const fs::path root = fs::is_directory(corpus) ? corpus : corpus.parent_path();
  make_dirs(out_dir / "images");
  make_dirs(out_dir / "masks");

  AugmentationPlan plan;
  plan.model = &model;
  plan.blend = cfg.blend;
  plan.diffeo = mode != AugmentMode::CopyPaste;
  plan.copy_paste = cfg.copy_paste;
  plan.copy_paste.enabled = mode != AugmentMode::Diffeo;
  plan.seed = cfg.augment_seed;
  plan.label = cfg.label;
  plan.min_area = cfg.min_area;

  std::vector<std::vector<ojson>> audit(entries.size());
  std::vector<CorpusEntry> out_entries(entries.size());
  parallel_for(entries.size(), cfg.jobs, [&](std::size_t i) {
    const CorpusEntry& e = entries[i];
    const Image img = read_pgm_image(root / e.image);
    const Mask mask = read_pgm_mask(root / e.mask);
    const ImageMask res = augment(img, mask, plan, e.id, [&](const ojson& rec) { audit[i].push_back(rec); });
    CorpusEntry o{e.id, "images/" + e.id + ".pgm", "masks/" + e.id + ".pgm"};
    write_pgm(out_dir / o.image, res.image);
    write_pgm(out_dir / o.mask, res.mask);
    out_entries[i] = std::move(o);
  });

  AugmentSummary s;
  s.images = entries.size();
  std::string lines;
  for (const auto& recs : audit) {
    for (const auto& r : recs) {
      const std::string ev = r.value("event", "");
      if (ev == "deform") ++s.deformed;
      if (ev == "paste") ++s.pasted;
      lines += r.dump() + "\n";
      ++s.audit_records;
    }
  }
  write_text(out_dir / "audit.jsonl", lines);
  write_corpus_manifest(out_dir, out_entries);
  log << "augmented " << s.images << " images: " << s.deformed << " deformations, " << s.pasted << " pastes\n";
  return s;
}

bool CheckReport::all_pass() const {
  return std::all_of(rows.begin(), rows.end(), [](const CheckRow& r) { return r.pass; });
}

namespace {

// Fine fixed-step RK4 on the velocity field, locating the triangle at every
// stage; independent of the exponential-map integrator.
Eigen::Vector2d rk4_flow(const CpaField& f, const Tessellation& tess, Eigen::Vector2d p, double t_final, int steps) {
  const double h = t_final / steps;
  auto v = [&](const Eigen::Vector2d& q) { return velocity_at(f, tess, q.cwiseMax(0.0).cwiseMin(1.0)); };
  for (int i = 0; i < steps; ++i) {
    const Eigen::Vector2d k1 = v(p);
    const Eigen::Vector2d k2 = v(p + 0.5 * h * k1);
    const Eigen::Vector2d k3 = v(p + 0.5 * h * k2);
    const Eigen::Vector2d k4 = v(p + h * k3);
    p += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return p;
}

double percentile95(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  return v[static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(v.size()))) - 1];
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-7}); }

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

}  // namespace

CheckReport cmd_check(const PipelineConfig& cfg, const std::optional<fs::path>& model_path, std::ostream& log) {
  cfg.validate();
  CheckReport rep;
  Rng rng(derive_seed(cfg.train.seed, "check"));
  const Tessellation tess = build_tessellation(cfg.tessellation);
  const ConstraintMatrix L = build_constraints(tess);
  const CpaBasis basis = build_basis(L);

  {
    int mismatches = 0;
    for (int i = 0; i < 10000; ++i) {
      const Eigen::Vector2d p(rng.uniform(), rng.uniform());
      int brute = -1;
      for (int t = 0; t < tess.cell_count() && brute < 0; ++t) {
        if (tess.barycentric(t, p).minCoeff() >= -1e-12) brute = t;
      }
      if (brute != tess.locate(p)) ++mismatches;
    }
    rep.rows.push_back({"tessellation.locate", mismatches == 0, std::to_string(mismatches) + " mismatches / 10000"});
  }
  {
    const double lb = (L.rows * basis.B).cwiseAbs().maxCoeff();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(basis.dim(), basis.dim());
    const double orth = (basis.B.transpose() * basis.B - I).cwiseAbs().maxCoeff();
    const int interior = (cfg.tessellation.nx - 1) * (cfg.tessellation.ny - 1) + cfg.tessellation.nx * cfg.tessellation.ny;
    const bool ok = lb < 1e-9 && orth < 1e-9 && basis.dim() == 2 * interior;
    rep.rows.push_back({"basis.null_space", ok,
                        "d=" + std::to_string(basis.dim()) + " |LB|=" + sci(lb) + " |BtB-I|=" + sci(orth)});
  }

  std::vector<Eigen::VectorXd> thetas;
  for (int i = 0; i < 5; ++i) thetas.push_back(random_theta(rng, basis.dim(), 1.0));
  // Fewer steps than the default loosen the tolerance quadratically.
  const int n = cfg.integration.n_steps;
  const double degrade = n < 10 ? (10.0 / n) * (10.0 / n) : 1.0;
  const std::string tol_note = n < 10 ? " (degraded tolerance, n_steps=" + std::to_string(n) + " < 10)" : "";
  {
    const double tol = 1e-3 * degrade;
    double worst = 0.0;
    for (const auto& th : thetas) {
      const CpaField f = theta_to_field(basis, th);
      const DisplacementField u = transform_grid(f, tess, 15, 15, cfg.integration);
      for (int r = 0; r < 15; ++r) {
        for (int c = 0; c < 15; ++c) {
          const Eigen::Vector2d p = pixel_center(r, c, 15, 15);
          const Eigen::Vector2d ref = rk4_flow(f, tess, p, cfg.integration.t_final, 2000);
          const std::size_t i = u.index(r, c);
          const Eigen::Vector2d got(p.x() + u.dx[i] / 15.0, p.y() + u.dy[i] / 15.0);
          worst = std::max(worst, (got - ref).norm());
        }
      }
    }
    rep.rows.push_back({"integrator.accuracy", worst < tol, "max err " + sci(worst) + " tol " + sci(tol) + tol_note});
  }
  {
    const double tol = 1e-2 * (n < 10 ? 10.0 / n : 1.0);
    double worst = 0.0;
    double min_det = std::numeric_limits<double>::infinity();
    for (const auto& th : thetas) {
      const FlowSolver fwd(tess, theta_to_field(basis, th), cfg.integration);
      const FlowSolver inv(tess, theta_to_field(basis, -th), cfg.integration);
      for (int i = 0; i < 20; ++i) {
        const Eigen::Vector2d p(rng.uniform(), rng.uniform());
        worst = std::max(worst, (inv.integrate(fwd.integrate(p)) - p).norm());
      }
      const auto dets = jacobian_determinants(transform_grid(theta_to_field(basis, th), tess, 30, 30, cfg.integration));
      min_det = std::min(min_det, *std::min_element(dets.begin(), dets.end()));
    }
    rep.rows.push_back(
        {"flow.inverse_composition", worst < tol, "max err " + sci(worst) + " tol " + sci(tol) + tol_note});
    rep.rows.push_back({"flow.jacobian_positive", min_det > 0.0, "min det " + sci(min_det)});
  }
  {
    const int W = 8, H = 8;
    std::vector<double> errs;
    const double h = 1e-6;
    for (int trial = 0; trial < 3; ++trial) {
      const Eigen::VectorXd th = random_theta(rng, basis.dim(), 1.0);
      const TransformJacobian J = grad_transform(basis, th, tess, W, H, cfg.integration);
      Eigen::VectorXd dir(basis.dim());
      for (int k = 0; k < dir.size(); ++k) dir(k) = rng.normal();
      dir.normalize();
      const auto up = transform_grid(theta_to_field(basis, th + h * dir), tess, W, H, cfg.integration);
      const auto dn = transform_grid(theta_to_field(basis, th - h * dir), tess, W, H, cfg.integration);
      for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
          const std::size_t i = up.index(r, c);
          double ax = 0.0, ay = 0.0;
          for (int k = 0; k < basis.dim(); ++k) {
            ax += J.at(r, c, 0, k) * dir(k);
            ay += J.at(r, c, 1, k) * dir(k);
          }
          errs.push_back(rel_err(ax, (up.dx[i] - dn.dx[i]) / (2 * h)));
          errs.push_back(rel_err(ay, (up.dy[i] - dn.dy[i]) / (2 * h)));
        }
      }
    }
    const double p95 = percentile95(errs);
    rep.rows.push_back({"gradient.transform", p95 < 1e-3, "p95 rel err " + sci(p95)});
  }
  {
    GenModel m = make_model(Preset::Desk, 8, 4, cfg.tessellation, cfg.integration);
    Rng init(derive_seed(cfg.train.seed, "check-model"));
    initialize_params(m, init);
    const auto& last = m.decoder.layers().back();
    for (std::size_t i = last.weight_offset; i < last.bias_offset; ++i) m.params[i] = 0.05 * init.normal();
    Image a(8, 8), b(8, 8);
    for (int r = 0; r < 8; ++r) {
      for (int c = 0; c < 8; ++c) {
        a.set(r, c, init.uniform());
        b.set(r, c, init.uniform());
      }
    }
    Eigen::VectorXd eps(4);
    for (int i = 0; i < 4; ++i) eps(i) = init.normal();
    const LossWeights w{cfg.train.beta, cfg.train.lambda_reg};
    std::vector<double> grad(m.params.size(), 0.0);
    loss_and_gradient(m, a, b, eps, w, grad);
    std::vector<double> errs;
    const double h = 1e-4;
    for (int t = 0; t < 200; ++t) {
      const std::size_t k = init.below(m.params.size());
      const double keep = m.params[k];
      m.params[k] = keep + h;
      const double lp = compute_loss(m, a, b, eps, w).total;
      m.params[k] = keep - h;
      const double lm = compute_loss(m, a, b, eps, w).total;
      m.params[k] = keep;
      errs.push_back(rel_err(grad[k], (lp - lm) / (2 * h)));
    }
    const double p95 = percentile95(errs);
    rep.rows.push_back({"gradient.genmodel", p95 < 1e-3, "p95 rel err " + sci(p95) + " over 200 weights"});
  }
  {
    const BBox box{12, 15, 22, 27};
    DisplacementField pf = DisplacementField::zeros(box.width(), box.height());
    for (std::size_t i = 0; i < pf.dx.size(); ++i) {
      pf.dx[i] = rng.uniform(-2.0, 2.0);
      pf.dy[i] = rng.uniform(-2.0, 2.0);
    }
    const DisplacementField full = blend_field(pf, box, 48, 40, cfg.blend);
    bool ok = true;
    std::vector<double> ring_max(cfg.blend.rings + 2, 0.0);
    for (int r = 0; r < 40; ++r) {
      for (int c = 0; c < 48; ++c) {
        const std::size_t i = full.index(r, c);
        const int k = ring_index(box, r, c);
        const double mag = std::hypot(full.dx[i], full.dy[i]);
        if (k == 0) ok &= full.dx[i] == pf.dx[pf.index(r - box.row0, c - box.col0)];
        if (k > cfg.blend.rings) ok &= full.dx[i] == 0.0 && full.dy[i] == 0.0;
        const int slot = std::min(k, cfg.blend.rings + 1);
        ring_max[slot] = std::max(ring_max[slot], mag);
      }
    }
    for (std::size_t k = 1; k < ring_max.size(); ++k) ok &= ring_max[k] <= ring_max[k - 1];
    Image img(48, 40);
    for (int r = 0; r < 40; ++r) {
      for (int c = 0; c < 48; ++c) img.set(r, c, rng.uniform());
    }
    const Image warped = warp_image(img, full);
    for (int r = 0; r < 40; ++r) {
      for (int c = 0; c < 48; ++c) {
        if (ring_index(box, r, c) > cfg.blend.rings) ok &= warped.at(r, c) == img.at(r, c);
      }
    }
    rep.rows.push_back({"blend.locality", ok, "R=" + std::to_string(cfg.blend.rings) + " gamma=" + sci(cfg.blend.decay)});
  }
  if (model_path) {
    const GenModel m = load_model(*model_path);
    std::ifstream in(*model_path, std::ios::binary);
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const bool same = serialize_model(m) == bytes;
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(m.theta_dim(), m.theta_dim());
    const double orth = (m.basis.B.transpose() * m.basis.B - I).cwiseAbs().maxCoeff();
    rep.rows.push_back({"model.file", same && orth < 1e-9,
                        std::string(same ? "byte-exact round trip" : "round trip differs") + ", |BtB-I|=" + sci(orth)});
  }

  std::size_t width = 0;
  for (const auto& r : rep.rows) width = std::max(width, r.name.size());
  for (const auto& r : rep.rows) {
    log << r.name << std::string(width + 2 - r.name.size(), ' ') << (r.pass ? "PASS  " : "FAIL  ") << r.detail << "\n";
  }
  return rep;
}

}  // namespace cpabaug
