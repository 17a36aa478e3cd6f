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

#include "fedmesh/eval.h"

#include "absl/strings/str_cat.h"

namespace fedmesh {

absl::StatusOr<ConfusionMatrix> Confusion(const ModelSpec& spec,
                                          const ParamVector& theta,
                                          const Dataset& test) {
  if (absl::Status s = internal::CheckShapes(spec, theta.size(), test);
      !s.ok()) {
    return s;
  }
  ConfusionMatrix cm;
  cm.counts.setZero(spec.class_count, spec.class_count);
  const std::vector<int> predicted = PredictAll(spec, theta, test);
  for (size_t i = 0; i < predicted.size(); ++i) {
    const int y = test.labels[i];
    if (y < 0 || y >= spec.class_count) {
      return absl::InvalidArgumentError(
          absl::StrCat("label ", y, " out of range"));
    }
    ++cm.counts(y, predicted[i]);
  }
  return cm;
}

absl::StatusOr<MetricsReport> Metrics(const ConfusionMatrix& cm,
                                      Averaging averaging) {
  if (cm.counts.rows() == 0 || cm.counts.rows() != cm.counts.cols()) {
    return absl::InvalidArgumentError("confusion matrix must be square");
  }
  const int64_t total = cm.total();
  if (total <= 0) return absl::InvalidArgumentError("empty confusion matrix");
  MetricsReport report;
  report.accuracy = static_cast<double>(cm.counts.trace()) / total;
  if (averaging == Averaging::kMicro) {
    report.precision = report.recall = report.f1 = report.accuracy;
    return report;
  }
  const auto row_sums = cm.counts.rowwise().sum();
  const auto col_sums = cm.counts.colwise().sum();
  int present = 0;
  for (Eigen::Index k = 0; k < cm.counts.rows(); ++k) {
    if (row_sums(k) == 0) continue;
    ++present;
    const double tp = static_cast<double>(cm.counts(k, k));
    const double p = col_sums(k) > 0 ? tp / col_sums(k) : 0.0;
    const double r = tp / row_sums(k);
    report.precision += p;
    report.recall += r;
    report.f1 += p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  report.precision /= present;
  report.recall /= present;
  report.f1 /= present;
  return report;
}

absl::StatusOr<std::vector<double>> TraceParameters(
    const ParamVector& theta, std::span<const int> indices) {
  std::vector<double> out;
  out.reserve(indices.size());
  for (int i : indices) {
    if (i < 0 || i >= theta.size()) {
      return absl::OutOfRangeError(absl::StrCat(
          "tracked index ", i, " outside parameter dimension ", theta.size()));
    }
    out.push_back(theta(i));
  }
  return out;
}

}  // namespace fedmesh
