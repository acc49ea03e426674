#include "cpabaug/nn.hpp"

#include <Eigen/Dense>

#include "cpabaug/errors.hpp"

namespace cpabaug::nn {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void conv_forward(const LayerSpec& l, const double* w, const double* b, const double* in, double* out) {
  for (int oc = 0; oc < l.out_c; ++oc) {
    for (int oy = 0; oy < l.out_h; ++oy) {
      for (int ox = 0; ox < l.out_w; ++ox) {
        double acc = b[oc];
        for (int ic = 0; ic < l.in_c; ++ic) {
          const double* wk = w + (static_cast<std::size_t>(oc) * l.in_c + ic) * 9;
          const double* plane = in + static_cast<std::size_t>(ic) * l.in_h * l.in_w;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * l.stride + ky - 1;
            if (iy < 0 || iy >= l.in_h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox * l.stride + kx - 1;
              if (ix < 0 || ix >= l.in_w) continue;
              acc += wk[ky * 3 + kx] * plane[iy * l.in_w + ix];
            }
          }
        }
        out[(static_cast<std::size_t>(oc) * l.out_h + oy) * l.out_w + ox] = acc;
      }
    }
  }
}

void conv_backward_input(const LayerSpec& l, const double* w, const double* g, double* din) {
  for (int oc = 0; oc < l.out_c; ++oc) {
    for (int oy = 0; oy < l.out_h; ++oy) {
      for (int ox = 0; ox < l.out_w; ++ox) {
        const double go = g[(static_cast<std::size_t>(oc) * l.out_h + oy) * l.out_w + ox];
        if (go == 0.0) continue;
        for (int ic = 0; ic < l.in_c; ++ic) {
          const std::size_t k0 = (static_cast<std::size_t>(oc) * l.in_c + ic) * 9;
          const std::size_t p0 = static_cast<std::size_t>(ic) * l.in_h * l.in_w;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * l.stride + ky - 1;
            if (iy < 0 || iy >= l.in_h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox * l.stride + kx - 1;
              if (ix < 0 || ix >= l.in_w) continue;
              din[p0 + static_cast<std::size_t>(iy) * l.in_w + ix] += go * w[k0 + ky * 3 + kx];
            }
          }
        }
      }
    }
  }
}

void conv_backward_params(const LayerSpec& l, const double* in, const double* g, double* dw, double* db) {
  for (int oc = 0; oc < l.out_c; ++oc) {
    for (int oy = 0; oy < l.out_h; ++oy) {
      for (int ox = 0; ox < l.out_w; ++ox) {
        const double go = g[(static_cast<std::size_t>(oc) * l.out_h + oy) * l.out_w + ox];
        if (go == 0.0) continue;
        db[oc] += go;
        for (int ic = 0; ic < l.in_c; ++ic) {
          const std::size_t k0 = (static_cast<std::size_t>(oc) * l.in_c + ic) * 9;
          const std::size_t p0 = static_cast<std::size_t>(ic) * l.in_h * l.in_w;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * l.stride + ky - 1;
            if (iy < 0 || iy >= l.in_h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox * l.stride + kx - 1;
              if (ix < 0 || ix >= l.in_w) continue;
              dw[k0 + ky * 3 + kx] += go * in[p0 + static_cast<std::size_t>(iy) * l.in_w + ix];
            }
          }
        }
      }
    }
  }
}

}  // namespace

void Network::add_dense(int in, int out) {
  LayerSpec l;
  l.kind = LayerSpec::Kind::Dense;
  l.in_c = in;
  l.out_c = out;
  l.weight_offset = end_;
  l.bias_offset = end_ + l.weight_count();
  end_ = l.bias_offset + static_cast<std::size_t>(out);
  layers_.push_back(l);
}

void Network::add_conv(int in_c, int in_h, int in_w, int out_c, int stride) {
  LayerSpec l;
  l.kind = LayerSpec::Kind::Conv3x3;
  l.in_c = in_c;
  l.in_h = in_h;
  l.in_w = in_w;
  l.out_c = out_c;
  l.stride = stride;
  l.out_h = (in_h - 1) / stride + 1;
  l.out_w = (in_w - 1) / stride + 1;
  l.weight_offset = end_;
  l.bias_offset = end_ + l.weight_count();
  end_ = l.bias_offset + static_cast<std::size_t>(out_c);
  layers_.push_back(l);
}

void Network::add_conv(int out_c, int stride) {
  const LayerSpec& prev = layers_.back();
  add_conv(prev.out_c, prev.out_h, prev.out_w, out_c, stride);
}

std::vector<double> Network::forward(std::span<const double> params, std::span<const double> input,
                                     Trace* trace) const {
  if (input.size() != input_size()) throw DimensionMismatch("network input has the wrong size");
  std::vector<double> x(input.begin(), input.end());
  if (trace) {
    trace->values.clear();
    trace->values.push_back(x);
  }
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const LayerSpec& l = layers_[li];
    std::vector<double> y(l.out_size());
    const double* w = params.data() + l.weight_offset;
    const double* b = params.data() + l.bias_offset;
    if (l.kind == LayerSpec::Kind::Dense) {
      Eigen::Map<const RowMajor> W(w, l.out_c, l.in_c);
      Eigen::Map<const Eigen::VectorXd> xv(x.data(), l.in_c);
      Eigen::Map<const Eigen::VectorXd> bv(b, l.out_c);
      Eigen::Map<Eigen::VectorXd>(y.data(), l.out_c).noalias() = W * xv + bv;
    } else {
      conv_forward(l, w, b, x.data(), y.data());
    }
    if (li + 1 < layers_.size()) {
      for (double& v : y) v = v > 0.0 ? v : kLeakySlope * v;
    }
    x = std::move(y);
    if (trace) trace->values.push_back(x);
  }
  return x;
}

std::vector<double> Network::backward_deltas(std::span<const double> params, const Trace& trace,
                                             std::span<const double> grad_output, Deltas& deltas,
                                             bool need_input_grad) const {
  if (grad_output.size() != output_size()) throw DimensionMismatch("output gradient has the wrong size");
  deltas.values.resize(layers_.size());
  std::vector<double> g(grad_output.begin(), grad_output.end());
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const LayerSpec& l = layers_[li];
    if (li + 1 < layers_.size()) {
      const std::vector<double>& out = trace.values[li + 1];
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!(out[i] > 0.0)) g[i] *= kLeakySlope;
      }
    }
    const double* w = params.data() + l.weight_offset;
    std::vector<double> gin;
    if (li > 0 || need_input_grad) {
      gin.assign(l.in_size(), 0.0);
      if (l.kind == LayerSpec::Kind::Dense) {
        Eigen::Map<const RowMajor> W(w, l.out_c, l.in_c);
        Eigen::Map<const Eigen::VectorXd> gv(g.data(), l.out_c);
        Eigen::Map<Eigen::VectorXd>(gin.data(), l.in_c).noalias() = W.transpose() * gv;
      } else {
        conv_backward_input(l, w, g.data(), gin.data());
      }
    }
    deltas.values[li] = std::move(g);
    g = std::move(gin);
  }
  return g;
}

void Network::accumulate_param_grads(const std::vector<const Trace*>& traces, const std::vector<const Deltas*>& deltas,
                                     std::span<double> grad_params) const {
  if (traces.size() != deltas.size()) throw DimensionMismatch("traces and deltas differ in count");
  const Eigen::Index nb = static_cast<Eigen::Index>(traces.size());
  if (nb == 0) return;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const LayerSpec& l = layers_[li];
    double* dw = grad_params.data() + l.weight_offset;
    double* db = grad_params.data() + l.bias_offset;
    if (l.kind == LayerSpec::Kind::Dense) {
      Eigen::MatrixXd D(l.out_c, nb), X(l.in_c, nb);
      for (Eigen::Index s = 0; s < nb; ++s) {
        D.col(s) = Eigen::Map<const Eigen::VectorXd>(deltas[s]->values[li].data(), l.out_c);
        X.col(s) = Eigen::Map<const Eigen::VectorXd>(traces[s]->values[li].data(), l.in_c);
      }
      Eigen::Map<RowMajor>(dw, l.out_c, l.in_c).noalias() += D * X.transpose();
      Eigen::Map<Eigen::VectorXd> bv(db, l.out_c);
      for (Eigen::Index s = 0; s < nb; ++s) bv += D.col(s);
    } else {
      for (Eigen::Index s = 0; s < nb; ++s) {
        conv_backward_params(l, traces[s]->values[li].data(), deltas[s]->values[li].data(), dw, db);
      }
    }
  }
}

std::vector<double> Network::backward(std::span<const double> params, const Trace& trace,
                                      std::span<const double> grad_output, std::span<double> grad_params) const {
  Deltas deltas;
  std::vector<double> gin = backward_deltas(params, trace, grad_output, deltas);
  accumulate_param_grads({&trace}, {&deltas}, grad_params);
  return gin;
}

}  // namespace cpabaug::nn
