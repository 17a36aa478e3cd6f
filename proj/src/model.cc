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

#include "fedmesh/model.h"

namespace fedmesh {

absl::Status ValidateSpec(const ModelSpec& spec) {
  if (spec.feature_dim < 1) {
    return absl::InvalidArgumentError("feature_dim must be >= 1");
  }
  if (spec.class_count < 2) {
    return absl::InvalidArgumentError("class_count must be >= 2");
  }
  if (!(spec.l2_coefficient >= 0.0) || !std::isfinite(spec.l2_coefficient)) {
    return absl::InvalidArgumentError("l2_coefficient must be finite and >= 0");
  }
  return absl::OkStatus();
}

absl::Status ValidateParams(const ModelSpec& spec, const ParamVector& theta) {
  if (theta.size() != ParamDim(spec)) {
    return absl::InvalidArgumentError(absl::StrCat(
        "parameter dimension ", theta.size(), " != expected ", ParamDim(spec)));
  }
  if (!theta.allFinite()) {
    return absl::InvalidArgumentError("parameters contain NaN or Inf");
  }
  return absl::OkStatus();
}

absl::Status ValidateDataset(const ModelSpec& spec, const Dataset& data) {
  if (absl::Status s = internal::CheckShapes(spec, ParamDim(spec), data);
      !s.ok()) {
    return s;
  }
  if (data.class_count != spec.class_count) {
    return absl::InvalidArgumentError(
        absl::StrCat("dataset has ", data.class_count, " classes, model has ",
                     spec.class_count));
  }
  if (!data.features.allFinite()) {
    return absl::InvalidArgumentError("features contain NaN or Inf");
  }
  for (size_t i = 0; i < data.labels.size(); ++i) {
    if (data.labels[i] < 0 || data.labels[i] >= spec.class_count) {
      return absl::InvalidArgumentError(
          absl::StrCat("label ", data.labels[i], " of example ", i,
                       " outside [0, ", spec.class_count, ")"));
    }
  }
  return absl::OkStatus();
}

std::vector<int> PredictAll(const ModelSpec& spec, const ParamVector& theta,
                            const Dataset& data) {
  const MatrixX<double> logits = internal::Logits(spec, theta, data.features);
  std::vector<int> out(logits.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    out[i] = ArgMaxLowest(logits.row(i).transpose());
  }
  return out;
}

}  // namespace fedmesh
