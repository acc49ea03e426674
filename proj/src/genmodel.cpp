#include "cpabaug/genmodel.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <optional>
#include <thread>

#include "cpabaug/errors.hpp"
#include "cpabaug/warp.hpp"

namespace cpabaug {

const char* preset_name(Preset p) { return p == Preset::Desk ? "desk" : "paper"; }

Preset parse_preset(const std::string& name) {
  if (name == "desk") return Preset::Desk;
  if (name == "paper") return Preset::Paper;
  throw ValidationError("unknown model preset '" + name + "' (expected desk or paper)");
}

void build_networks(GenModel& model) {
  const int s = model.patch_size;
  const int latent = model.latent_dim;
  const int d = model.theta_dim();
  if (latent < 1) throw ValidationError("latent_dim must be >= 1");
  if (model.preset == Preset::Paper && s < 30) {
    throw ValidationError("preset 'paper' needs patches of at least 30x30 (got " + std::to_string(s) + ")");
  }
  if (model.preset == Preset::Desk && s < 8) {
    throw ValidationError("preset 'desk' needs patches of at least 8x8 (got " + std::to_string(s) + ")");
  }

  nn::Network enc(0);
  if (model.preset == Preset::Desk) {
    enc.add_dense(2 * s * s, 256);
    enc.add_dense(256, 128);
    enc.add_dense(128, 2 * latent);
  } else {
    enc.add_conv(2, s, s, 16, 1);
    enc.add_conv(32, 2);
    enc.add_conv(32, 1);
    enc.add_conv(64, 2);
    enc.add_conv(64, 1);
    enc.add_dense(static_cast<int>(enc.output_size()), 256);
    enc.add_dense(256, 128);
    enc.add_dense(128, 2 * latent);
  }

  nn::Network dec(enc.param_end());
  if (model.preset == Preset::Desk) {
    dec.add_dense(latent, 64);
    dec.add_dense(64, 128);
    dec.add_dense(128, d);
  } else {
    dec.add_dense(latent, 32);
    dec.add_dense(32, 64);
    dec.add_dense(64, 128);
    dec.add_dense(128, 128);
    dec.add_dense(128, d);
  }
  model.encoder = std::move(enc);
  model.decoder = std::move(dec);
  model.params.assign(model.decoder.param_end(), 0.0);
}

GenModel make_model(Preset preset, int patch_size, int latent_dim, const TessellationConfig& tess_cfg,
                    const IntegrationConfig& integration) {
  integration.validate();
  GenModel m;
  m.preset = preset;
  m.patch_size = patch_size;
  m.latent_dim = latent_dim;
  m.tess_config = tess_cfg;
  m.integration = integration;
  m.tess = build_tessellation(tess_cfg);
  m.basis = build_basis(build_constraints(m.tess));
  build_networks(m);
  return m;
}

void initialize_params(GenModel& model, Rng& rng) {
  std::fill(model.params.begin(), model.params.end(), 0.0);
  const auto init = [&](const nn::Network& net, bool zero_last) {
    const auto& layers = net.layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (zero_last && i + 1 == layers.size()) continue;
      const nn::LayerSpec& l = layers[i];
      const double limit = std::sqrt(6.0 / (l.fan_in() + l.fan_out()));
      for (std::size_t k = 0; k < l.weight_count(); ++k) model.params[l.weight_offset + k] = rng.uniform(-limit, limit);
    }
  };
  init(model.encoder, false);
  init(model.decoder, true);
}

namespace {

void check_patch(const GenModel& model, const Image& img) {
  if (img.width() != model.patch_size || img.height() != model.patch_size) {
    throw ShapeMismatch("model expects " + std::to_string(model.patch_size) + "x" + std::to_string(model.patch_size) +
                        " patches, got " + std::to_string(img.width()) + "x" + std::to_string(img.height()));
  }
}

std::vector<double> encoder_input(const GenModel& model, const Image& x_src, const Image& x_tgt) {
  check_patch(model, x_src);
  check_patch(model, x_tgt);
  std::vector<double> in;
  in.reserve(x_src.size() * 2);
  in.insert(in.end(), x_src.pixels().begin(), x_src.pixels().end());
  in.insert(in.end(), x_tgt.pixels().begin(), x_tgt.pixels().end());
  return in;
}

Encoding split_encoding(const std::vector<double>& out, int latent) {
  Encoding e;
  e.mu = Eigen::Map<const Eigen::VectorXd>(out.data(), latent);
  e.logvar = Eigen::Map<const Eigen::VectorXd>(out.data() + latent, latent);
  return e;
}

bool finite(const LossBreakdown& l) {
  return std::isfinite(l.recon) && std::isfinite(l.kl) && std::isfinite(l.reg) && std::isfinite(l.total);
}

}  // namespace

Encoding encode(const GenModel& model, const Image& x_src, const Image& x_tgt) {
  const auto out = model.encoder.forward(model.params, encoder_input(model, x_src, x_tgt));
  return split_encoding(out, model.latent_dim);
}

Eigen::VectorXd reparameterize(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar, const Eigen::VectorXd& eps) {
  if (mu.size() != logvar.size() || mu.size() != eps.size()) throw DimensionMismatch("reparameterize: sizes differ");
  return mu + (0.5 * logvar.array()).exp().matrix().cwiseProduct(eps);
}

Eigen::VectorXd decode(const GenModel& model, const Eigen::VectorXd& z) {
  if (z.size() != model.latent_dim) throw DimensionMismatch("decode: z has the wrong length");
  const auto out = model.decoder.forward(model.params, std::span<const double>(z.data(), static_cast<std::size_t>(z.size())));
  return Eigen::Map<const Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

double kl_divergence(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar) {
  double kl = 0.0;
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    kl += mu(i) * mu(i) + std::exp(logvar(i)) - 1.0 - logvar(i);
  }
  return 0.5 * kl;
}

Image apply_theta(const GenModel& model, const Image& x_src, const Eigen::VectorXd& theta) {
  const CpaField field = theta_to_field(model.basis, theta);
  return warp_image(x_src, transform_grid(field, model.tess, x_src.width(), x_src.height(), model.integration));
}

LossBreakdown compute_loss(const GenModel& model, const Image& x_src, const Image& x_tgt, const Eigen::VectorXd& eps,
                           const LossWeights& weights) {
  const Encoding enc = encode(model, x_src, x_tgt);
  const Eigen::VectorXd theta = decode(model, reparameterize(enc.mu, enc.logvar, eps));
  DisplacementField u;
  try {
    u = transform_grid(theta_to_field(model.basis, theta), model.tess, x_src.width(), x_src.height(),
                       model.integration);
  } catch (const NonFiniteResult& e) {
    throw NonFiniteLoss(std::string("theta exploded: ") + e.what());
  }
  const Image warped = warp_image(x_src, u);

  const double n = static_cast<double>(x_src.size());
  double sq = 0.0, disp = 0.0;
  for (std::size_t i = 0; i < x_src.size(); ++i) {
    const double diff = warped.pixels()[i] - x_tgt.pixels()[i];
    sq += diff * diff;
    disp += u.dx[i] * u.dx[i] + u.dy[i] * u.dy[i];
  }
  LossBreakdown l;
  l.recon = sq / n;
  l.kl = kl_divergence(enc.mu, enc.logvar);
  l.reg = std::sqrt(disp / n);
  l.total = l.recon + weights.beta * l.kl + weights.lambda_reg * l.reg;
  if (!finite(l)) throw NonFiniteLoss("loss is not finite");
  return l;
}

namespace {

// Everything a sample contributes to the parameter gradient.
struct SampleGrad {
  LossBreakdown loss;
  nn::Network::Trace enc_trace, dec_trace;
  nn::Network::Deltas enc_deltas, dec_deltas;
};

void sample_gradient(const GenModel& model, const Image& x_src, const Image& x_tgt, const Eigen::VectorXd& eps,
                     const LossWeights& weights, SampleGrad& out) {
  const int latent = model.latent_dim;
  if (eps.size() != latent) throw DimensionMismatch("eps has the wrong length");

  const auto enc_out = model.encoder.forward(model.params, encoder_input(model, x_src, x_tgt), &out.enc_trace);
  const Encoding enc = split_encoding(enc_out, latent);
  const Eigen::VectorXd sigma = (0.5 * enc.logvar.array()).exp().matrix();
  const Eigen::VectorXd z = enc.mu + sigma.cwiseProduct(eps);
  const auto dec_out = model.decoder.forward(
      model.params, std::span<const double>(z.data(), static_cast<std::size_t>(latent)), &out.dec_trace);
  const Eigen::VectorXd theta = Eigen::Map<const Eigen::VectorXd>(dec_out.data(), static_cast<Eigen::Index>(dec_out.size()));

  const int s = model.patch_size;
  std::optional<GridFlow> flow_holder;
  try {
    flow_holder.emplace(model.basis, model.tess, theta, s, s, model.integration);
  } catch (const NonFiniteResult& e) {
    throw NonFiniteLoss(std::string("theta exploded: ") + e.what());
  }
  const GridFlow& flow = *flow_holder;
  const DisplacementField& u = flow.displacement();

  const std::size_t npix = x_src.size();
  const double n = static_cast<double>(npix);
  std::vector<double> gx(npix), gy(npix);
  double sq = 0.0, disp = 0.0;
  for (int r = 0; r < s; ++r) {
    for (int c = 0; c < s; ++c) {
      const std::size_t i = u.index(r, c);
      const BilinearGrad b = bilinear_sample_grad(x_src, c + u.dx[i], r + u.dy[i]);
      const double diff = b.value - x_tgt.pixels()[i];
      sq += diff * diff;
      disp += u.dx[i] * u.dx[i] + u.dy[i] * u.dy[i];
      gx[i] = 2.0 * diff / n * b.d_dx;
      gy[i] = 2.0 * diff / n * b.d_dy;
    }
  }

  LossBreakdown& l = out.loss;
  l.recon = sq / n;
  l.kl = kl_divergence(enc.mu, enc.logvar);
  l.reg = std::sqrt(disp / n);
  l.total = l.recon + weights.beta * l.kl + weights.lambda_reg * l.reg;
  if (!finite(l)) throw NonFiniteLoss("loss is not finite");

  // d reg / du = u / (n * reg); zero is used as the subgradient at u = 0.
  if (l.reg > 0.0) {
    const double scale = weights.lambda_reg / (n * l.reg);
    for (std::size_t i = 0; i < npix; ++i) {
      gx[i] += scale * u.dx[i];
      gy[i] += scale * u.dy[i];
    }
  }

  const Eigen::VectorXd g_theta = flow.backward(gx, gy);
  const auto g_z = model.decoder.backward_deltas(
      model.params, out.dec_trace,
      std::span<const double>(g_theta.data(), static_cast<std::size_t>(g_theta.size())), out.dec_deltas);
  std::vector<double> g_enc(2 * static_cast<std::size_t>(latent));
  for (int i = 0; i < latent; ++i) {
    g_enc[i] = g_z[i] + weights.beta * enc.mu(i);
    g_enc[latent + i] = g_z[i] * 0.5 * sigma(i) * eps(i) + weights.beta * 0.5 * (std::exp(enc.logvar(i)) - 1.0);
  }
  model.encoder.backward_deltas(model.params, out.enc_trace, g_enc, out.enc_deltas, false);
}

void accumulate(const GenModel& model, const std::vector<SampleGrad>& samples, std::span<double> grad) {
  std::vector<const nn::Network::Trace*> et, dt;
  std::vector<const nn::Network::Deltas*> ed, dd;
  for (const auto& sg : samples) {
    et.push_back(&sg.enc_trace);
    ed.push_back(&sg.enc_deltas);
    dt.push_back(&sg.dec_trace);
    dd.push_back(&sg.dec_deltas);
  }
  model.encoder.accumulate_param_grads(et, ed, grad);
  model.decoder.accumulate_param_grads(dt, dd, grad);
}

}  // namespace

LossBreakdown loss_and_gradient(const GenModel& model, const Image& x_src, const Image& x_tgt,
                                const Eigen::VectorXd& eps, const LossWeights& weights, std::span<double> grad) {
  if (grad.size() != model.params.size()) throw DimensionMismatch("gradient buffer has the wrong size");
  std::vector<SampleGrad> one(1);
  sample_gradient(model, x_src, x_tgt, eps, weights, one[0]);
  accumulate(model, one, grad);
  return one[0].loss;
}

LossBreakdown compute_gradients(const GenModel& model, const std::vector<Sample>& batch, const LossWeights& weights,
                                std::vector<double>& grad, int threads) {
  grad.assign(model.params.size(), 0.0);
  if (batch.empty()) return {};
  const std::size_t nb = batch.size();
  std::vector<SampleGrad> samples(nb);
  const int workers = std::clamp(threads, 1, static_cast<int>(nb));

  if (workers == 1) {
    for (std::size_t i = 0; i < nb; ++i) sample_gradient(model, *batch[i].src, *batch[i].tgt, batch[i].eps, weights, samples[i]);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(nb);
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < nb; i = next++) {
          try {
            sample_gradient(model, *batch[i].src, *batch[i].tgt, batch[i].eps, weights, samples[i]);
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
  // Parameter gradients are formed after the parallel part, in sample order.
  accumulate(model, samples, grad);

  const double inv = 1.0 / static_cast<double>(nb);
  for (double& g : grad) g *= inv;
  LossBreakdown mean;
  for (const auto& sg : samples) {
    mean.recon += sg.loss.recon;
    mean.kl += sg.loss.kl;
    mean.reg += sg.loss.reg;
    mean.total += sg.loss.total;
  }
  mean.recon *= inv;
  mean.kl *= inv;
  mean.reg *= inv;
  mean.total *= inv;
  return mean;
}

void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& state, const AdamConfig& cfg) {
  if (grads.size() != params.size()) throw DimensionMismatch("adam: gradient size differs from parameters");
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.step = 0;
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ValidationError("train: epochs must be >= 0");
  if (batch_size < 1) throw ValidationError("train: batch size must be >= 1");
  if (!(learning_rate > 0.0)) throw ValidationError("train: learning rate must be positive");
  if (!(beta >= 0.0) || !(lambda_reg >= 0.0)) throw ValidationError("train: beta and lambda_reg must be >= 0");
  if (patience < 1) throw ValidationError("train: patience must be >= 1");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ValidationError("train: val_fraction must be in (0, 1)");
  if (threads < 1) throw ValidationError("train: threads must be >= 1");
}

DataSplit split_pairs(std::size_t n_pairs, double val_fraction, std::uint64_t seed) {
  if (n_pairs < 2) throw TooFewPatches("training needs at least 2 pairs");
  std::vector<int> order(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) order[i] = static_cast<int>(i);
  Rng rng(mix64(seed ^ 0x73706c6974ULL));
  for (std::size_t i = n_pairs - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n_pairs)));
  n_val = std::clamp<std::size_t>(n_val, 1, n_pairs - 1);
  DataSplit split;
  split.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

TrainResult train(GenModel model, const PairSet& pairs, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  const DataSplit split = split_pairs(pairs.pairs.size(), cfg.val_fraction, cfg.seed);
  const LossWeights weights{cfg.beta, cfg.lambda_reg};
  const AdamConfig adam{cfg.learning_rate};
  Rng rng(mix64(cfg.seed));

  TrainResult result;
  std::vector<double> best_params = model.params;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  AdamState state;
  std::vector<double> grad;
  std::vector<int> order = split.train;

  const auto& P = pairs.patches;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

    EpochRecord rec;
    rec.epoch = epoch;
    try {
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
        std::vector<Sample> batch;
        for (std::size_t b = start; b < end; ++b) {
          const PatchPair& pr = pairs.pairs[order[b]];
          Eigen::VectorXd eps(model.latent_dim);
          for (int k = 0; k < model.latent_dim; ++k) eps(k) = rng.normal();
          batch.push_back({&P[pr.src_index].patch, &P[pr.tgt_index].patch, std::move(eps)});
        }
        const LossBreakdown l = compute_gradients(model, batch, weights, grad, cfg.threads);
        const double share = static_cast<double>(end - start);
        rec.train.recon += l.recon * share;
        rec.train.kl += l.kl * share;
        rec.train.reg += l.reg * share;
        rec.train.total += l.total * share;
        for (double g : grad) {
          if (!std::isfinite(g)) throw NonFiniteLoss("non-finite gradient");
        }
        adam_step(model.params, grad, state, adam);
      }
      const double inv = 1.0 / static_cast<double>(order.size());
      rec.train.recon *= inv;
      rec.train.kl *= inv;
      rec.train.reg *= inv;
      rec.train.total *= inv;

      const Eigen::VectorXd zero_eps = Eigen::VectorXd::Zero(model.latent_dim);
      for (int vi : split.val) {
        const PatchPair& pr = pairs.pairs[vi];
        const LossBreakdown l = compute_loss(model, P[pr.src_index].patch, P[pr.tgt_index].patch, zero_eps, weights);
        rec.val_total += l.total;
        rec.val_recon += l.recon;
      }
      rec.val_total /= static_cast<double>(split.val.size());
      rec.val_recon /= static_cast<double>(split.val.size());
    } catch (const NumericError& e) {
      throw NonFiniteLoss("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }

    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.val_total < best_val) {
      best_val = rec.val_total;
      best_params = model.params;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      result.stopped_early = true;
      break;
    }
  }

  model.params = std::move(best_params);
  model.provenance = {
      {"seed", cfg.seed},
      {"epochs_requested", cfg.epochs},
      {"epochs_run", static_cast<int>(result.history.size())},
      {"best_epoch", result.best_epoch},
      {"best_val_total", std::isfinite(best_val) ? best_val : 0.0},
      {"stopped_early", result.stopped_early},
      {"batch_size", cfg.batch_size},
      {"learning_rate", cfg.learning_rate},
      {"beta", cfg.beta},
      {"lambda_reg", cfg.lambda_reg},
      {"patience", cfg.patience},
      {"val_fraction", cfg.val_fraction},
      {"n_pairs", pairs.pairs.size()},
  };
  result.model = std::move(model);
  return result;
}

Eigen::VectorXd infer_theta(const GenModel& model, const Image& x_src, const Image& x_tgt) {
  return decode(model, encode(model, x_src, x_tgt).mu);
}

Eigen::VectorXd sample_theta(const GenModel& model, Rng& rng) {
  Eigen::VectorXd z(model.latent_dim);
  for (int i = 0; i < model.latent_dim; ++i) z(i) = rng.normal();
  return decode(model, z);
}

double evaluate(const GenModel& model, const PairSet& pairs, const std::vector<int>& indices) {
  if (indices.empty()) return 0.0;
  double total = 0.0;
  for (int idx : indices) {
    const PatchPair& pr = pairs.pairs.at(idx);
    const Image& src = pairs.patches[pr.src_index].patch;
    const Image& tgt = pairs.patches[pr.tgt_index].patch;
    total += patch_distance(apply_theta(model, src, infer_theta(model, src, tgt)), tgt);
  }
  return total / static_cast<double>(indices.size());
}

double identity_baseline(const PairSet& pairs, const std::vector<int>& indices) {
  if (indices.empty()) return 0.0;
  double total = 0.0;
  for (int idx : indices) {
    const PatchPair& pr = pairs.pairs.at(idx);
    total += patch_distance(pairs.patches[pr.src_index].patch, pairs.patches[pr.tgt_index].patch);
  }
  return total / static_cast<double>(indices.size());
}

}  // namespace cpabaug
