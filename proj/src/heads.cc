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
#include "irfsod/heads.h"

#include <algorithm>
#include <cmath>

#include "irfsod/errors.h"

namespace irfsod {

using nn::Mat;

void HeadConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("heads.alpha must lie in [0, 1]");
  if (!(lambda > 0.0)) throw UsageError("heads.lambda must be positive");
  if (!(roi_pos_iou > 0.0 && roi_pos_iou <= 1.0)) throw UsageError("heads.roi_pos_iou must lie in (0, 1]");
  if (roi_resolution < 1) throw UsageError("heads.roi_resolution must be >= 1");
  if (comparison_hidden < 1 || regressor_hidden < 1) throw UsageError("head widths must be positive");
  if (max_detections < 1 || roi_samples < 1) throw UsageError("heads sample counts must be positive");
  if (!(roi_fg_fraction > 0.0 && roi_fg_fraction <= 1.0)) {
    throw UsageError("heads.roi_fg_fraction must lie in (0, 1]");
  }
}

namespace {

double squared_norm(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return s;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// d cos(a, b) / da scaled by `scale`, accumulated into out.
void cosine_grad(std::span<const double> a, std::span<const double> b, double scale,
                 std::span<double> out) {
  const double na = std::sqrt(squared_norm(a));
  const double nb = std::sqrt(squared_norm(b));
  if (na == 0.0 || nb == 0.0) return;
  const double c = dot(a, b) / (na * nb);
  const double inv = 1.0 / (na * nb);
  const double self = c / (na * na);
  for (size_t i = 0; i < a.size(); ++i) out[i] += scale * (b[i] * inv - self * a[i]);
}

void check_same_shape(const RegionFeature& x, const RegionFeature& c, const char* what) {
  if (x.pooled.shape() != c.pooled.shape()) {
    throw UsageError(std::string(what) + ": region and prototype shapes differ");
  }
}

// Pooled map viewed as (d, r*r).
nn::ConstMatMap cells(const RegionFeature& x) {
  const int d = x.depth();
  return nn::as_matrix(x.pooled, d, static_cast<int>(x.pooled.size() / d));
}

}  // namespace

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw UsageError("cosine: length mismatch");
  const double na = std::sqrt(squared_norm(a));
  const double nb = std::sqrt(squared_norm(b));
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double sharp_sigmoid(double x, double lambda) { return nn::sigmoid(lambda * x); }

double distance_similarity(const RegionFeature& x, const SupportFeature& c, double alpha) {
  check_same_shape(x, c.proto, "distance_score");
  return (1.0 - alpha) * cosine(x.f, c.proto.f) + alpha * cosine(x.v, c.proto.v);
}

double distance_score(const RegionFeature& x, const SupportFeature& c, const HeadConfig& cfg) {
  return sharp_sigmoid(distance_similarity(x, c, cfg.alpha), cfg.lambda);
}

void distance_similarity_backward(const RegionFeature& x, const SupportFeature& c,
                                  double alpha, double grad, Tensor* grad_x, Tensor* grad_c) {
  check_same_shape(x, c.proto, "distance_score");
  const int d = x.depth();
  const size_t p = x.pooled.size() / d;
  auto spread_v = [&](const std::vector<double>& gv, Tensor& out) {
    for (int ch = 0; ch < d; ++ch) {
      const double g = gv[ch] / static_cast<double>(p);
      for (size_t i = 0; i < p; ++i) out[ch * p + i] += g;
    }
  };
  if (grad_x) {
    cosine_grad(x.f, c.proto.f, (1.0 - alpha) * grad, grad_x->values());
    std::vector<double> gv(d, 0.0);
    cosine_grad(x.v, c.proto.v, alpha * grad, gv);
    spread_v(gv, *grad_x);
  }
  if (grad_c) {
    cosine_grad(c.proto.f, x.f, (1.0 - alpha) * grad, grad_c->values());
    std::vector<double> gv(d, 0.0);
    cosine_grad(c.proto.v, x.v, alpha * grad, gv);
    spread_v(gv, *grad_c);
  }
}

DistanceMatrix distance_matrix(const RegionFeature& x, const RegionFeature& c) {
  check_same_shape(x, c, "distance_matrix");
  const int d = x.depth();
  const int p = static_cast<int>(x.pooled.size() / d);
  // Cell vectors gathered contiguously.
  std::vector<double> xa(static_cast<size_t>(p) * d), ca(static_cast<size_t>(p) * d);
  for (int ch = 0; ch < d; ++ch) {
    for (int i = 0; i < p; ++i) {
      xa[static_cast<size_t>(i) * d + ch] = x.pooled[static_cast<size_t>(ch) * p + i];
      ca[static_cast<size_t>(i) * d + ch] = c.pooled[static_cast<size_t>(ch) * p + i];
    }
  }
  DistanceMatrix m;
  m.cells = p;
  m.values.resize(static_cast<size_t>(p) * p);
  for (int i = 0; i < p; ++i) {
    std::span<const double> xi(xa.data() + static_cast<size_t>(i) * d, d);
    for (int j = 0; j < p; ++j) {
      std::span<const double> cj(ca.data() + static_cast<size_t>(j) * d, d);
      m.values[static_cast<size_t>(i) * p + j] = cosine(xi, cj);
    }
  }
  return m;
}

DistanceMatrix distance_matrix(const RegionFeature& x, const SupportFeature& c) {
  return distance_matrix(x, c.proto);
}

void distance_matrix_backward(const RegionFeature& x, const RegionFeature& c,
                              std::span<const double> grad_m, Tensor* grad_x, Tensor* grad_c) {
  check_same_shape(x, c, "distance_matrix");
  const int d = x.depth();
  const int p = static_cast<int>(x.pooled.size() / d);
  if (grad_m.size() != static_cast<size_t>(p) * p) {
    throw UsageError("distance_matrix_backward: gradient size mismatch");
  }
  auto normalize = [&](const RegionFeature& rf, Mat& unit, Eigen::VectorXd& norms) {
    unit = cells(rf);
    norms = unit.colwise().norm().transpose();
    for (int i = 0; i < p; ++i) {
      if (norms[i] > 0.0) unit.col(i) /= norms[i];
    }
  };
  Mat xu, cu;
  Eigen::VectorXd xn, cn;
  normalize(x, xu, xn);
  normalize(c, cu, cn);
  nn::ConstMatMap g(grad_m.data(), p, p);
  // M = xu^T cu for nonzero cells; entries that were clamped are at most
  // rounding away from the boundary, so the unclamped gradient is used.
  auto project = [&](const Mat& unit, const Eigen::VectorXd& norms, const Mat& g_unit,
                     Tensor& out) {
    auto o = nn::as_matrix(out, d, p);
    for (int i = 0; i < p; ++i) {
      if (norms[i] == 0.0) continue;
      const double along = unit.col(i).dot(g_unit.col(i));
      o.col(i) += (g_unit.col(i) - along * unit.col(i)) / norms[i];
    }
  };
  if (grad_x) {
    // Zero-norm cells have a zero unit vector and contribute nothing.
    const Mat g_xu = cu * g.transpose();  // (d, p)
    project(xu, xn, g_xu, *grad_x);
  }
  if (grad_c) {
    const Mat g_cu = xu * g;  // (d, p)
    project(cu, cn, g_cu, *grad_c);
  }
}

ComparisonHead::ComparisonHead(int depth, int hidden)
    : depth_(depth), hidden_(hidden), conv_("comparison.conv", 2 * depth, hidden),
      fc_("comparison.fc", hidden, 1) {}

void ComparisonHead::init(Rng& rng) {
  conv_.init(rng);
  fc_.init(rng, 0.1);
}

ParamRefs ComparisonHead::parameters() {
  return {conv_.weight(), conv_.bias(), fc_.weight(), fc_.bias()};
}

double ComparisonHead::logit(const RegionFeature& x, const SupportFeature& c,
                             ComparisonCache* cache) const {
  check_same_shape(x, c.proto, "comparison_score");
  if (x.depth() != depth_) throw UsageError("comparison_score: feature depth mismatch");
  const int d = depth_;
  auto w = nn::as_matrix(conv_.weight().value, hidden_, 2 * d);
  Eigen::Map<const Eigen::VectorXd> b(conv_.bias().value.data(), hidden_);
  Mat h = w.leftCols(d) * cells(x) + w.rightCols(d) * cells(c.proto);
  h.colwise() += b;
  h = h.cwiseMax(0.0);
  const Eigen::VectorXd pooled = h.rowwise().mean();
  Eigen::Map<const Eigen::RowVectorXd> fw(fc_.weight().value.data(), hidden_);
  const double out = fw.dot(pooled) + fc_.bias().value[0];
  if (cache) cache->hidden = std::move(h);
  return out;
}

double ComparisonHead::score(const RegionFeature& x, const SupportFeature& c) const {
  return nn::sigmoid(logit(x, c, nullptr));
}

void ComparisonHead::backward(const RegionFeature& x, const SupportFeature& c,
                              const ComparisonCache& cache, double grad_logit, Tensor* grad_x,
                              Tensor* grad_c) {
  const int d = depth_;
  const Mat& h = cache.hidden;
  const int p = static_cast<int>(h.cols());
  const Eigen::VectorXd pooled = h.rowwise().mean();
  Eigen::Map<Eigen::RowVectorXd> fw_grad(fc_.weight().grad.data(), hidden_);
  fw_grad += grad_logit * pooled.transpose();
  fc_.bias().grad[0] += grad_logit;

  Eigen::Map<const Eigen::VectorXd> fw(fc_.weight().value.data(), hidden_);
  Mat dh = (grad_logit / p) * fw.replicate(1, p);
  dh = (h.array() > 0.0).select(dh, 0.0);

  auto dw = nn::as_matrix(conv_.weight().grad, hidden_, 2 * d);
  dw.leftCols(d).noalias() += dh * cells(x).transpose();
  dw.rightCols(d).noalias() += dh * cells(c.proto).transpose();
  Eigen::Map<Eigen::VectorXd> db(conv_.bias().grad.data(), hidden_);
  db += dh.rowwise().sum();

  auto w = nn::as_matrix(conv_.weight().value, hidden_, 2 * d);
  if (grad_x) nn::as_matrix(*grad_x, d, p).noalias() += w.leftCols(d).transpose() * dh;
  if (grad_c) nn::as_matrix(*grad_c, d, p).noalias() += w.rightCols(d).transpose() * dh;
}

MultiClassHead::MultiClassHead(int input_size, std::vector<int> categories)
    : categories_(std::move(categories)),
      fc_("multi.fc", input_size, static_cast<int>(categories_.size()) + 1) {}

void MultiClassHead::init(Rng& rng) { fc_.init(rng, 0.1); }

ParamRefs MultiClassHead::parameters() { return {fc_.weight(), fc_.bias()}; }

std::vector<double> MultiClassHead::logits(const RegionFeature& x) const {
  if (static_cast<int>(x.f.size()) != fc_.in_features()) {
    throw UsageError("multi_class_score: feature size mismatch");
  }
  nn::ConstMatMap in(x.f.data(), 1, fc_.in_features());
  const Mat y = fc_.forward(in);
  return {y.data(), y.data() + y.size()};
}

std::vector<double> MultiClassHead::probabilities(const RegionFeature& x) const {
  return softmax(logits(x));
}

void MultiClassHead::backward(const RegionFeature& x, std::span<const double> grad_logits,
                              Tensor* grad_x) {
  nn::ConstMatMap in(x.f.data(), 1, fc_.in_features());
  nn::ConstMatMap g(grad_logits.data(), 1, fc_.out_features());
  const Mat gx = fc_.backward(in, g);
  if (grad_x) {
    for (size_t i = 0; i < grad_x->size(); ++i) (*grad_x)[i] += gx(0, static_cast<Eigen::Index>(i));
  }
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double m = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (double& v : p) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : p) v /= sum;
  return p;
}

BoxRegressor::BoxRegressor(RegressorKind kind, int depth, int resolution, int hidden)
    : kind_(kind), depth_(depth), resolution_(resolution) {
  const int cells = resolution * resolution;
  const int in = kind == RegressorKind::kSemiExplicit ? cells * cells + depth : depth * cells;
  fc1_ = nn::Linear("regressor.fc1", in, hidden);
  fc2_ = nn::Linear("regressor.fc2", hidden, 4);
}

void BoxRegressor::init(Rng& rng) {
  fc1_.init(rng);
  fc2_.zero();
}

ParamRefs BoxRegressor::parameters() {
  return {fc1_.weight(), fc1_.bias(), fc2_.weight(), fc2_.bias()};
}

Mat BoxRegressor::build_input(const RegionFeature& x, const SupportFeature& c) const {
  if (x.depth() != depth_ || x.resolution() != resolution_) {
    throw UsageError("box regressor: region feature shape mismatch");
  }
  Mat in(1, fc1_.in_features());
  if (kind_ == RegressorKind::kSemiExplicit) {
    const DistanceMatrix m = distance_matrix(x, c);
    std::copy(m.values.begin(), m.values.end(), in.data());
    std::copy(x.v.begin(), x.v.end(), in.data() + m.values.size());
  } else {
    std::copy(x.f.begin(), x.f.end(), in.data());
  }
  return in;
}

BoxDelta BoxRegressor::forward(const RegionFeature& x, const SupportFeature& c,
                               RegressorCache* cache) const {
  Mat in = build_input(x, c);
  Mat h = fc1_.forward(in);
  nn::relu_inplace(h);
  const Mat out = fc2_.forward(h);
  if (cache) {
    cache->input = std::move(in);
    cache->hidden = std::move(h);
  }
  return {out(0, 0), out(0, 1), out(0, 2), out(0, 3)};
}

void BoxRegressor::backward(const RegionFeature& x, const SupportFeature& c,
                            const RegressorCache& cache, const BoxDelta& grad, Tensor* grad_x,
                            Tensor* grad_c) {
  Mat g(1, 4);
  g << grad.dx, grad.dy, grad.dw, grad.dh;
  Mat gh = fc2_.backward(cache.hidden, g);
  nn::relu_backward_inplace(cache.hidden, gh);
  const Mat gin = fc1_.backward(cache.input, gh);
  if (kind_ == RegressorKind::kSemiExplicit) {
    const int cells = resolution_ * resolution_;
    const size_t m_size = static_cast<size_t>(cells) * cells;
    distance_matrix_backward(x, c.proto, std::span<const double>(gin.data(), m_size), grad_x,
                             grad_c);
    if (grad_x) {
      for (int ch = 0; ch < depth_; ++ch) {
        const double gv = gin(0, static_cast<Eigen::Index>(m_size + ch)) / cells;
        for (int i = 0; i < cells; ++i) (*grad_x)[static_cast<size_t>(ch) * cells + i] += gv;
      }
    }
  } else if (grad_x) {
    for (size_t i = 0; i < grad_x->size(); ++i) (*grad_x)[i] += gin(0, static_cast<Eigen::Index>(i));
  }
}

BoxDelta semi_explicit_regress(const RegionFeature& x, const SupportFeature& c,
                               const BoxRegressor& params) {
  return params.forward(x, c, nullptr);
}

double comparison_score(const RegionFeature& x, const SupportFeature& c,
                        const ComparisonHead& params) {
  return params.score(x, c);
}

std::vector<double> multi_class_score(const RegionFeature& x, const MultiClassHead& params) {
  return params.probabilities(x);
}

double classify_dynamic(const RegionFeature& x, const SupportFeature& c, ClassifierMode mode,
                        const HeadConfig& cfg, const ComparisonHead& params) {
  return mode == ClassifierMode::kTrain ? comparison_score(x, c, params)
                                        : distance_score(x, c, cfg);
}

}  // namespace irfsod
