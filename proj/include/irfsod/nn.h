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
//
// Minimal layers with hand-written backward passes. Forward calls record
// what backward needs in a caller-owned cache so a layer object can be
// shared (query and support branches run the same weights).
#ifndef IRFSOD_NN_H_
#define IRFSOD_NN_H_

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "irfsod/rng.h"
#include "irfsod/tensor.h"

namespace irfsod::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

inline MatMap as_matrix(Tensor& t, int rows, int cols) {
  return MatMap(t.data(), rows, cols);
}
inline ConstMatMap as_matrix(const Tensor& t, int rows, int cols) {
  return ConstMatMap(t.data(), rows, cols);
}

struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
};

struct ConvCache {
  Mat columns;  // (in * k * k) x (out_h * out_w)
  int in_h = 0;
  int in_w = 0;
  int out_h = 0;
  int out_w = 0;
};

// 2-D convolution on a single (C, H, W) tensor. Weight shape is
// (out, in, k, k); bias shape (out).
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, const ConvSpec& spec);

  const ConvSpec& spec() const { return spec_; }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  const Param& weight() const { return weight_; }
  const Param& bias() const { return bias_; }

  // He-normal weights scaled by `gain`, zero bias.
  void init(Rng& rng, double gain = 1.0);

  Tensor forward(const Tensor& x, ConvCache* cache) const;
  // Accumulates parameter gradients; returns the gradient w.r.t. the input.
  Tensor backward(const ConvCache& cache, const Tensor& grad_out);

  static int out_size(int in, int kernel, int stride, int pad) {
    return (in + 2 * pad - kernel) / stride + 1;
  }

 private:
  ConvSpec spec_;
  Param weight_;
  Param bias_;
};

// Fully-connected layer applied to the rows of a matrix. Weight shape is
// (out, in).
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out);

  int in_features() const { return in_; }
  int out_features() const { return out_; }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  const Param& weight() const { return weight_; }
  const Param& bias() const { return bias_; }

  void init(Rng& rng, double gain = 1.0);
  void zero();

  // x: (n, in) -> (n, out).
  Mat forward(const Mat& x) const;
  // Accumulates parameter gradients; returns dL/dx.
  Mat backward(const Mat& x, const Mat& grad_out);

 private:
  int in_ = 0;
  int out_ = 0;
  Param weight_;
  Param bias_;
};

void relu_inplace(Tensor& t);
void relu_inplace(Mat& m);
// Zeroes gradient entries where the forward activation was not positive.
void relu_backward_inplace(const Tensor& activation, Tensor& grad);
void relu_backward_inplace(const Mat& activation, Mat& grad);

inline double sigmoid(double x) {
  if (x >= 0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Binary cross-entropy computed from a logit; stable for large |logit|.
inline double bce_with_logit(double logit, double target) {
  return std::max(logit, 0.0) - logit * target +
         std::log1p(std::exp(-std::abs(logit)));
}

// Smooth-L1 with transition at 1.
inline double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}
inline double smooth_l1_grad(double x) {
  if (x > 1.0) return 1.0;
  if (x < -1.0) return -1.0;
  return x;
}

}  // namespace irfsod::nn

#endif  // IRFSOD_NN_H_
