// Copyright 2026 The FedMesh Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Multinomial logistic regression: the model every client trains.
//
// Parameters are laid out class-major: for class k the d feature weights
// come first, then the bias, so coordinate k * (d + 1) + j is weight j of
// class k and coordinate k * (d + 1) + d is its bias. Viewed column-major this
// is a (d + 1) x K matrix whose column k is [w_k; b_k].
//
// The loss is mean cross-entropy plus (l2 / 2) * ||W||^2 with biases left
// unregularized. All operations are templated on the scalar type so the same
// code serves double-precision training and extended-precision test oracles.

#ifndef FEDMESH_MODEL_H_
#define FEDMESH_MODEL_H_

#include <cmath>
#include <vector>

#include "Eigen/Dense"
#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/str_cat.h"

namespace fedmesh {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Flat model parameters; the unit exchanged between clients and server.
using ParamVector = VectorX<double>;

enum class ModelFamily { kSoftmaxLinear };

struct ModelSpec {
  ModelFamily family = ModelFamily::kSoftmaxLinear;
  int feature_dim = 0;
  int class_count = 0;
  double l2_coefficient = 0.0;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

template <typename Scalar>
struct BasicDataset {
  // One row per example.
  MatrixX<Scalar> features;
  std::vector<int> labels;
  int class_count = 0;

  Eigen::Index size() const { return features.rows(); }
  int feature_dim() const { return static_cast<int>(features.cols()); }

  friend bool operator==(const BasicDataset& a, const BasicDataset& b) {
    return a.class_count == b.class_count && a.labels == b.labels &&
           a.features.rows() == b.features.rows() &&
           a.features.cols() == b.features.cols() && a.features == b.features;
  }
};

using Dataset = BasicDataset<double>;

inline int ParamDim(const ModelSpec& spec) {
  return spec.class_count * (spec.feature_dim + 1);
}

absl::Status ValidateSpec(const ModelSpec& spec);
absl::Status ValidateParams(const ModelSpec& spec, const ParamVector& theta);
absl::Status ValidateDataset(const ModelSpec& spec, const Dataset& data);

template <typename Derived>
bool AllFinite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

namespace internal {

template <typename Scalar>
Eigen::Map<const MatrixX<Scalar>> AsMatrix(const ModelSpec& spec,
                                           const VectorX<Scalar>& theta) {
  return Eigen::Map<const MatrixX<Scalar>>(theta.data(), spec.feature_dim + 1,
                                           spec.class_count);
}

// n x K logits for every example.
template <typename Scalar>
MatrixX<Scalar> Logits(const ModelSpec& spec, const VectorX<Scalar>& theta,
                       const MatrixX<Scalar>& features) {
  const auto m = AsMatrix(spec, theta);
  const int d = spec.feature_dim;
  MatrixX<Scalar> logits = features * m.topRows(d);
  logits.rowwise() += m.row(d);
  return logits;
}

// Row-wise softmax of logits with max subtraction; also returns log-sum-exp.
template <typename Scalar>
void SoftmaxInPlace(MatrixX<Scalar>& logits, VectorX<Scalar>& log_norm) {
  log_norm.resize(logits.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Scalar peak = logits.row(i).maxCoeff();
    logits.row(i).array() = (logits.row(i).array() - peak).exp();
    const Scalar total = logits.row(i).sum();
    logits.row(i) /= total;
    log_norm(i) = peak + std::log(total);
  }
}

template <typename Scalar>
Scalar LossUnchecked(const ModelSpec& spec, const VectorX<Scalar>& theta,
                     const BasicDataset<Scalar>& data) {
  const MatrixX<Scalar> logits = Logits(spec, theta, data.features);
  Scalar total(0);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Scalar peak = logits.row(i).maxCoeff();
    const Scalar lse =
        peak + std::log((logits.row(i).array() - peak).exp().sum());
    total += lse - logits(i, data.labels[i]);
  }
  Scalar loss = total / static_cast<Scalar>(data.size());
  if (spec.l2_coefficient > 0) {
    const auto w = AsMatrix(spec, theta).topRows(spec.feature_dim);
    loss += Scalar(spec.l2_coefficient) / 2 * w.squaredNorm();
  }
  return loss;
}

template <typename Scalar>
VectorX<Scalar> GradientUnchecked(const ModelSpec& spec,
                                  const VectorX<Scalar>& theta,
                                  const BasicDataset<Scalar>& data) {
  MatrixX<Scalar> probs = Logits(spec, theta, data.features);
  VectorX<Scalar> log_norm;
  SoftmaxInPlace(probs, log_norm);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    probs(i, data.labels[i]) -= Scalar(1);
  }
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(data.size());
  const int d = spec.feature_dim;
  VectorX<Scalar> grad(ParamDim(spec));
  Eigen::Map<MatrixX<Scalar>> g(grad.data(), d + 1, spec.class_count);
  g.topRows(d).noalias() = data.features.transpose() * probs;
  g.topRows(d) *= inv_n;
  g.row(d) = probs.colwise().sum() * inv_n;
  if (spec.l2_coefficient > 0) {
    g.topRows(d) += Scalar(spec.l2_coefficient) *
                    AsMatrix(spec, theta).topRows(d);
  }
  return grad;
}

template <typename Scalar>
absl::Status CheckShapes(const ModelSpec& spec, Eigen::Index theta_dim,
                         const BasicDataset<Scalar>& data) {
  if (theta_dim != ParamDim(spec)) {
    return absl::InvalidArgumentError(absl::StrCat(
        "parameter dimension ", theta_dim, " != expected ", ParamDim(spec)));
  }
  if (data.size() == 0) return absl::InvalidArgumentError("empty dataset");
  if (data.feature_dim() != spec.feature_dim) {
    return absl::InvalidArgumentError(
        absl::StrCat("dataset feature dimension ", data.feature_dim(),
                     " != model feature dimension ", spec.feature_dim));
  }
  if (static_cast<Eigen::Index>(data.labels.size()) != data.size()) {
    return absl::InvalidArgumentError("label count differs from row count");
  }
  for (int label : data.labels) {
    if (label < 0 || label >= spec.class_count) {
      return absl::InvalidArgumentError(absl::StrCat(
          "label ", label, " outside [0, ", spec.class_count, ")"));
    }
  }
  return absl::OkStatus();
}

}  // namespace internal

// logits[k] = w_k . x + b_k
template <typename Derived, typename OtherDerived>
absl::StatusOr<VectorX<typename Derived::Scalar>> PredictLogits(
    const ModelSpec& spec, const Eigen::MatrixBase<Derived>& theta,
    const Eigen::MatrixBase<OtherDerived>& x) {
  using Scalar = typename Derived::Scalar;
  if (theta.size() != ParamDim(spec)) {
    return absl::InvalidArgumentError(absl::StrCat(
        "parameter dimension ", theta.size(), " != expected ", ParamDim(spec)));
  }
  if (x.size() != spec.feature_dim) {
    return absl::InvalidArgumentError(absl::StrCat(
        "input dimension ", x.size(), " != feature dimension ",
        spec.feature_dim));
  }
  const VectorX<Scalar> t = theta;
  const auto m = internal::AsMatrix(spec, t);
  // Accepts row or column input.
  const VectorX<Scalar> xv = x.template cast<Scalar>().reshaped();
  VectorX<Scalar> logits = m.topRows(spec.feature_dim).transpose() * xv;
  logits += m.row(spec.feature_dim).transpose();
  return logits;
}

// Argmax of the logits. Ties go to the lowest class index.
template <typename Derived>
int ArgMaxLowest(const Eigen::MatrixBase<Derived>& logits) {
  int best = 0;
  for (Eigen::Index k = 1; k < logits.size(); ++k) {
    if (logits(k) > logits(best)) best = static_cast<int>(k);
  }
  return best;
}

template <typename Derived, typename OtherDerived>
absl::StatusOr<int> PredictClass(const ModelSpec& spec,
                                 const Eigen::MatrixBase<Derived>& theta,
                                 const Eigen::MatrixBase<OtherDerived>& x) {
  auto logits = PredictLogits(spec, theta, x);
  if (!logits.ok()) return logits.status();
  return ArgMaxLowest(*logits);
}

template <typename Derived>
absl::StatusOr<typename Derived::Scalar> Loss(
    const ModelSpec& spec, const Eigen::MatrixBase<Derived>& theta,
    const BasicDataset<typename Derived::Scalar>& data) {
  if (absl::Status s = internal::CheckShapes(spec, theta.size(), data);
      !s.ok()) {
    return s;
  }
  return internal::LossUnchecked(spec, VectorX<typename Derived::Scalar>(theta),
                                 data);
}

// (1/|D|) sum of per-example cross-entropy gradients, plus l2 * W.
template <typename Derived>
absl::StatusOr<VectorX<typename Derived::Scalar>> Gradient(
    const ModelSpec& spec, const Eigen::MatrixBase<Derived>& theta,
    const BasicDataset<typename Derived::Scalar>& data) {
  if (absl::Status s = internal::CheckShapes(spec, theta.size(), data);
      !s.ok()) {
    return s;
  }
  return internal::GradientUnchecked(
      spec, VectorX<typename Derived::Scalar>(theta), data);
}

// Predicted class for every row of data.features.
std::vector<int> PredictAll(const ModelSpec& spec, const ParamVector& theta,
                            const Dataset& data);

}  // namespace fedmesh

#endif  // FEDMESH_MODEL_H_
