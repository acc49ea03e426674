#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <string>
#include <vector>

#include "cpabaug/cpab.hpp"
#include "cpabaug/image.hpp"
#include "cpabaug/nn.hpp"
#include "cpabaug/patchkit.hpp"
#include "cpabaug/rng.hpp"
#include "cpabaug/tessellation.hpp"

namespace cpabaug {

enum class Preset { Desk, Paper };

const char* preset_name(Preset p);
Preset parse_preset(const std::string& name);

/// Conditional VAE over CPA parameters.
///
/// The encoder sees (x_src, x_tgt) stacked as two channels and outputs the
/// mean and log-variance of q(z | x_src, x_tgt). The decoder maps z to theta
/// deterministically. Architectures:
///   desk:  encoder FC 2*S*S -> 256 -> 128 -> 2*latent; decoder FC latent -> 64 -> 128 -> d
///   paper: encoder conv3x3 16, 32/s2, 32, 64/s2, 64, then FC -> 256 -> 128 -> 2*latent;
///          decoder FC latent -> 32 -> 64 -> 128 -> 128 -> d
/// All weights share one flat vector: encoder first, then decoder.
struct GenModel {
  Preset preset = Preset::Desk;
  int patch_size = 30;
  int latent_dim = 12;
  TessellationConfig tess_config;
  IntegrationConfig integration;
  Tessellation tess;
  CpaBasis basis;
  nn::Network encoder;
  nn::Network decoder;
  std::vector<double> params;
  nlohmann::ordered_json provenance = nlohmann::ordered_json::object();

  int theta_dim() const { return basis.dim(); }
};

/// Builds tessellation, basis and networks with all weights zero.
GenModel make_model(Preset preset, int patch_size, int latent_dim, const TessellationConfig& tess_cfg,
                    const IntegrationConfig& integration);

/// Builds the networks for an existing tessellation/basis (model loading).
void build_networks(GenModel& model);

/// Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases, and a zero
/// final decoder layer so the untrained model decodes to the identity.
void initialize_params(GenModel& model, Rng& rng);

struct Encoding {
  Eigen::VectorXd mu;
  Eigen::VectorXd logvar;
};

Encoding encode(const GenModel& model, const Image& x_src, const Image& x_tgt);
Eigen::VectorXd reparameterize(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar, const Eigen::VectorXd& eps);
Eigen::VectorXd decode(const GenModel& model, const Eigen::VectorXd& z);

/// 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar).
double kl_divergence(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar);

struct LossWeights {
  double beta = 0.001;
  double lambda_reg = 0.004;
};

struct LossBreakdown {
  double recon = 0.0;  // mean squared intensity error over pixels
  double kl = 0.0;
  double reg = 0.0;    // root mean square displacement, pixels
  double total = 0.0;  // recon + beta * kl + lambda_reg * reg
};

/// Transformed source patch for a given theta.
Image apply_theta(const GenModel& model, const Image& x_src, const Eigen::VectorXd& theta);

LossBreakdown compute_loss(const GenModel& model, const Image& x_src, const Image& x_tgt, const Eigen::VectorXd& eps,
                           const LossWeights& weights);

/// Loss of one sample and its exact gradient, accumulated into `grad`
/// (same layout as model.params).
LossBreakdown loss_and_gradient(const GenModel& model, const Image& x_src, const Image& x_tgt,
                                const Eigen::VectorXd& eps, const LossWeights& weights, std::span<double> grad);

struct Sample {
  const Image* src;
  const Image* tgt;
  Eigen::VectorXd eps;
};

/// Batch-mean loss and gradient. Per-sample work may run on `threads`
/// workers; the reduction order is fixed so results do not depend on it.
LossBreakdown compute_gradients(const GenModel& model, const std::vector<Sample>& batch, const LossWeights& weights,
                                std::vector<double>& grad, int threads = 1);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update; state is lazily sized on first use.
void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& state,
               const AdamConfig& cfg);

struct TrainConfig {
  int epochs = 400;
  int batch_size = 16;
  double learning_rate = 1e-4;
  double beta = 0.001;
  double lambda_reg = 0.004;
  int patience = 20;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  int threads = 1;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  LossBreakdown train;
  double val_total = 0.0;
  double val_recon = 0.0;
};

struct TrainResult {
  GenModel model;  // parameters of the best validation epoch
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  bool stopped_early = false;
};

struct DataSplit {
  std::vector<int> train;
  std::vector<int> val;
};

/// Seeded split of pair indices; at least one pair on each side.
DataSplit split_pairs(std::size_t n_pairs, double val_fraction, std::uint64_t seed);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch Adam on the pair set with early stopping on validation total
/// loss (evaluated at eps = 0). `model` supplies the starting weights.
TrainResult train(GenModel model, const PairSet& pairs, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Mean over the given pairs of ||x_tgt - T(x_src)||_2 (un-squared, summed
/// over pixels), with theta decoded from the posterior mean.
double evaluate(const GenModel& model, const PairSet& pairs, const std::vector<int>& indices);

/// Mean ||x_tgt - x_src||_2 over the pairs (identity transform).
double identity_baseline(const PairSet& pairs, const std::vector<int>& indices);

/// theta decoded from the posterior mean of (x_src, x_tgt).
Eigen::VectorXd infer_theta(const GenModel& model, const Image& x_src, const Image& x_tgt);

/// Draws z ~ N(0, I) and decodes it.
Eigen::VectorXd sample_theta(const GenModel& model, Rng& rng);

// Model weight file ("gmodel-v1"): 8-byte magic "GMODEL1\n", u64 LE header
// length, JSON header, then the arrays listed in the header. Network weights
// are little-endian float32; tessellation geometry and basis are float64 and
// triangle indices int32.
inline constexpr const char* kModelFormat = "gmodel-v1";

/// Rounds every weight to float32 so the in-memory model equals its file.
void round_params_to_f32(GenModel& model);

std::vector<std::uint8_t> serialize_model(const GenModel& model);
GenModel deserialize_model(const std::vector<std::uint8_t>& bytes);
void save_model(const std::filesystem::path& path, const GenModel& model);
GenModel load_model(const std::filesystem::path& path);

}  // namespace cpabaug
