#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cpabaug::nn {

inline constexpr double kLeakySlope = 0.01;

/// A dense layer is a conv layer with 1x1 spatial extent and no kernel.
struct LayerSpec {
  enum class Kind { Dense, Conv3x3 };
  Kind kind = Kind::Dense;
  int in_c = 0, in_h = 1, in_w = 1;
  int out_c = 0, out_h = 1, out_w = 1;
  int stride = 1;
  std::size_t weight_offset = 0;  // into the owning parameter vector
  std::size_t bias_offset = 0;

  std::size_t in_size() const { return static_cast<std::size_t>(in_c) * in_h * in_w; }
  std::size_t out_size() const { return static_cast<std::size_t>(out_c) * out_h * out_w; }
  std::size_t weight_count() const {
    return static_cast<std::size_t>(out_c) * in_c * (kind == Kind::Conv3x3 ? 9 : 1);
  }
  int fan_in() const { return in_c * (kind == Kind::Conv3x3 ? 9 : 1); }
  int fan_out() const { return out_c * (kind == Kind::Conv3x3 ? 9 : 1); }
};

/// Feed-forward stack with leaky-ReLU between layers and a linear output.
/// Weights live in an external flat parameter vector. Dense weights are
/// [out][in]; conv weights are [out_c][in_c][3][3] with padding 1.
class Network {
 public:
  Network() = default;

  /// Appends layers starting at `offset` in the parameter vector.
  explicit Network(std::size_t offset) : end_(offset) {}

  void add_dense(int in, int out);
  /// Input shape of the first conv layer is (c, h, w); later conv layers
  /// chain from the previous layer's output.
  void add_conv(int in_c, int in_h, int in_w, int out_c, int stride);
  void add_conv(int out_c, int stride);

  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t param_begin() const { return layers_.empty() ? end_ : layers_.front().weight_offset; }
  std::size_t param_end() const { return end_; }
  std::size_t input_size() const { return layers_.front().in_size(); }
  std::size_t output_size() const { return layers_.back().out_size(); }

  /// Activations kept by forward() for backward(): post-activation outputs
  /// of every layer, plus the input.
  struct Trace {
    std::vector<std::vector<double>> values;  // values[0] = input, values[i+1] = layer i output
  };

  std::vector<double> forward(std::span<const double> params, std::span<const double> input,
                              Trace* trace = nullptr) const;

  /// dL/d(pre-activation output) of every layer.
  struct Deltas {
    std::vector<std::vector<double>> values;  // values[i] for layer i
  };

  /// Backpropagates to the input without touching parameter gradients.
  /// Returns dL/dinput, or an empty vector if need_input_grad is false.
  std::vector<double> backward_deltas(std::span<const double> params, const Trace& trace,
                                      std::span<const double> grad_output, Deltas& deltas,
                                      bool need_input_grad = true) const;

  /// Adds the parameter gradients of several samples, summed in sample order.
  void accumulate_param_grads(const std::vector<const Trace*>& traces, const std::vector<const Deltas*>& deltas,
                              std::span<double> grad_params) const;

  /// Accumulates dL/dparams into grad_params and returns dL/dinput.
  std::vector<double> backward(std::span<const double> params, const Trace& trace,
                               std::span<const double> grad_output, std::span<double> grad_params) const;

 private:
  std::vector<LayerSpec> layers_;
  std::size_t end_ = 0;
};

}  // namespace cpabaug::nn
