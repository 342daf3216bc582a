// Copyright 2026 The irfsod Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#include "irfsod/nn.h"

#include <cmath>

#include "irfsod/errors.h"

namespace irfsod::nn {

namespace {

void im2col(const Tensor& x, const ConvSpec& s, int out_h, int out_w,
            Mat& cols) {
  const int in_h = x.dim(1);
  const int in_w = x.dim(2);
  const int k = s.kernel;
  cols.resize(static_cast<Eigen::Index>(s.in_channels) * k * k,
              static_cast<Eigen::Index>(out_h) * out_w);
  for (int c = 0; c < s.in_channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols.row((c * k + ky) * k + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          double* dst = row + oy * out_w;
          if (iy < 0 || iy >= in_h) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          const double* src = x.data() + (static_cast<size_t>(c) * in_h + iy) * in_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * s.stride - s.pad + kx;
            dst[ox] = (ix >= 0 && ix < in_w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const Mat& cols, const ConvSpec& s, int in_h, int in_w, int out_h,
            int out_w, Tensor& grad_in) {
  const int k = s.kernel;
  for (int c = 0; c < s.in_channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols.row((c * k + ky) * k + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          if (iy < 0 || iy >= in_h) continue;
          double* dst = grad_in.data() + (static_cast<size_t>(c) * in_h + iy) * in_w;
          const double* src = row + oy * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * s.stride - s.pad + kx;
            if (ix >= 0 && ix < in_w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Conv2d::Conv2d(const std::string& name, const ConvSpec& spec)
    : spec_(spec),
      weight_(name + ".weight",
              {spec.out_channels, spec.in_channels, spec.kernel, spec.kernel}),
      bias_(name + ".bias", {spec.out_channels}) {}

void Conv2d::init(Rng& rng, double gain) {
  const double fan_in = static_cast<double>(spec_.in_channels) * spec_.kernel * spec_.kernel;
  const double std_dev = gain * std::sqrt(2.0 / fan_in);
  for (double& w : weight_.value.values()) w = std_dev * rng.normal();
  bias_.value.fill(0.0);
}

Tensor Conv2d::forward(const Tensor& x, ConvCache* cache) const {
  if (x.rank() != 3 || x.dim(0) != spec_.in_channels) {
    throw UsageError("Conv2d " + weight_.name + ": input channel mismatch");
  }
  const int out_h = out_size(x.dim(1), spec_.kernel, spec_.stride, spec_.pad);
  const int out_w = out_size(x.dim(2), spec_.kernel, spec_.stride, spec_.pad);
  if (out_h <= 0 || out_w <= 0) {
    throw UsageError("Conv2d " + weight_.name + ": input smaller than kernel");
  }
  ConvCache local;
  ConvCache& c = cache ? *cache : local;
  c.in_h = x.dim(1);
  c.in_w = x.dim(2);
  c.out_h = out_h;
  c.out_w = out_w;
  im2col(x, spec_, out_h, out_w, c.columns);

  Tensor y({spec_.out_channels, out_h, out_w});
  const int kdim = spec_.in_channels * spec_.kernel * spec_.kernel;
  auto w = as_matrix(weight_.value, spec_.out_channels, kdim);
  auto out = as_matrix(y, spec_.out_channels, out_h * out_w);
  out.noalias() = w * c.columns;
  for (int o = 0; o < spec_.out_channels; ++o) {
    out.row(o).array() += bias_.value[o];
  }
  return y;
}

Tensor Conv2d::backward(const ConvCache& cache, const Tensor& grad_out) {
  const int kdim = spec_.in_channels * spec_.kernel * spec_.kernel;
  const int n = cache.out_h * cache.out_w;
  auto g = as_matrix(grad_out, spec_.out_channels, n);
  auto dw = as_matrix(weight_.grad, spec_.out_channels, kdim);
  dw.noalias() += g * cache.columns.transpose();
  for (int o = 0; o < spec_.out_channels; ++o) bias_.grad[o] += g.row(o).sum();

  auto w = as_matrix(weight_.value, spec_.out_channels, kdim);
  Mat dcols = w.transpose() * g;
  Tensor grad_in({spec_.in_channels, cache.in_h, cache.in_w});
  col2im(dcols, spec_, cache.in_h, cache.in_w, cache.out_h, cache.out_w, grad_in);
  return grad_in;
}

Linear::Linear(const std::string& name, int in, int out)
    : in_(in), out_(out), weight_(name + ".weight", {out, in}),
      bias_(name + ".bias", {out}) {}

void Linear::init(Rng& rng, double gain) {
  const double std_dev = gain * std::sqrt(2.0 / static_cast<double>(in_));
  for (double& w : weight_.value.values()) w = std_dev * rng.normal();
  bias_.value.fill(0.0);
}

void Linear::zero() {
  weight_.value.fill(0.0);
  bias_.value.fill(0.0);
}

Mat Linear::forward(const Mat& x) const {
  if (x.cols() != in_) throw UsageError("Linear " + weight_.name + ": input width mismatch");
  auto w = as_matrix(weight_.value, out_, in_);
  Mat y = x * w.transpose();
  Eigen::Map<const Eigen::RowVectorXd> b(bias_.value.data(), out_);
  y.rowwise() += b;
  return y;
}

Mat Linear::backward(const Mat& x, const Mat& grad_out) {
  auto dw = as_matrix(weight_.grad, out_, in_);
  dw.noalias() += grad_out.transpose() * x;
  Eigen::Map<Eigen::RowVectorXd> db(bias_.grad.data(), out_);
  db += grad_out.colwise().sum();
  auto w = as_matrix(weight_.value, out_, in_);
  return grad_out * w;
}

void relu_inplace(Tensor& t) {
  for (double& v : t.values()) v = v > 0.0 ? v : 0.0;
}

void relu_inplace(Mat& m) { m = m.cwiseMax(0.0); }

void relu_backward_inplace(const Tensor& activation, Tensor& grad) {
  for (size_t i = 0; i < grad.size(); ++i) {
    if (!(activation[i] > 0.0)) grad[i] = 0.0;
  }
}

void relu_backward_inplace(const Mat& activation, Mat& grad) {
  grad = (activation.array() > 0.0).select(grad, 0.0);
}

}  // namespace irfsod::nn
