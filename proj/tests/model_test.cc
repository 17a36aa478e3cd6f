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

#include <cmath>
#include <random>

#include "gtest/gtest.h"
#include "oracles.h"

namespace fedmesh {
namespace {

using testing::CentralDifference;
using testing::OracleLogit;
using testing::OracleLoss;
using testing::RandomDataset;
using testing::RandomSpec;
using testing::RandomVector;

TEST(ModelTest, ParamDimCountsBiases) {
  EXPECT_EQ(ParamDim({ModelFamily::kSoftmaxLinear, 4, 3, 0.0}), 15);
  EXPECT_EQ(ParamDim({ModelFamily::kSoftmaxLinear, 1, 2, 0.0}), 4);
}

TEST(ModelTest, ZeroParametersGiveLogK) {
  for (int k : {2, 3, 4}) {
    ModelSpec spec{ModelFamily::kSoftmaxLinear, 3, k, 0.0};
    std::mt19937_64 gen(k);
    Dataset data = RandomDataset(gen, spec, 20);
    auto loss = Loss(spec, ParamVector::Zero(ParamDim(spec)), data);
    ASSERT_TRUE(loss.ok());
    EXPECT_NEAR(*loss, std::log(static_cast<double>(k)), 1e-15);
  }
  // ln 2 and ln 4 to full precision.
  ModelSpec two{ModelFamily::kSoftmaxLinear, 2, 2, 0.0};
  ModelSpec four{ModelFamily::kSoftmaxLinear, 2, 4, 0.0};
  std::mt19937_64 gen(3);
  EXPECT_DOUBLE_EQ(*Loss(two, ParamVector::Zero(6), RandomDataset(gen, two, 5)),
                   0.6931471805599453);
  EXPECT_DOUBLE_EQ(
      *Loss(four, ParamVector::Zero(12), RandomDataset(gen, four, 5)),
      1.3862943611198906);
}

TEST(ModelTest, LogitsMatchLoopOracle) {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 50; ++trial) {
    ModelSpec spec = RandomSpec(gen);
    Dataset data = RandomDataset(gen, spec, 7);
    ParamVector theta = RandomVector(gen, ParamDim(spec));
    for (int i = 0; i < 7; ++i) {
      auto logits = PredictLogits(spec, theta, data.features.row(i));
      ASSERT_TRUE(logits.ok()) << logits.status();
      for (int k = 0; k < spec.class_count; ++k) {
        EXPECT_NEAR((*logits)[k], OracleLogit(spec, theta, data, i, k), 1e-12);
      }
    }
  }
}

TEST(ModelTest, LossMatchesLoopOracle) {
  std::mt19937_64 gen(12);
  for (int trial = 0; trial < 100; ++trial) {
    ModelSpec spec = RandomSpec(gen);
    Dataset data = RandomDataset(gen, spec, 1 + trial % 30);
    ParamVector theta = RandomVector(gen, ParamDim(spec), 2.0);
    auto loss = Loss(spec, theta, data);
    ASSERT_TRUE(loss.ok());
    const double expected = OracleLoss(spec, theta, data);
    EXPECT_NEAR(*loss, expected, 1e-12 * std::max(1.0, expected));
  }
}

TEST(ModelTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 gen(13);
  for (int trial = 0; trial < 100; ++trial) {
    ModelSpec spec = RandomSpec(gen);
    Dataset data = RandomDataset(gen, spec, 25);
    ParamVector theta = RandomVector(gen, ParamDim(spec));
    auto g = Gradient(spec, theta, data);
    ASSERT_TRUE(g.ok());
    ParamVector fd = CentralDifference(spec, theta, data, 1e-5);
    for (Eigen::Index i = 0; i < fd.size(); ++i) {
      const double scale = std::max({std::abs((*g)[i]), std::abs(fd[i]), 1e-3});
      EXPECT_LT(std::abs((*g)[i] - fd[i]) / scale, 1e-4)
          << "trial " << trial << " coordinate " << i;
    }
  }
}

TEST(ModelTest, LargeLogitsStayFinite) {
  ModelSpec spec{ModelFamily::kSoftmaxLinear, 2, 3, 0.0};
  std::mt19937_64 gen(14);
  Dataset data = RandomDataset(gen, spec, 10);
  ParamVector theta = RandomVector(gen, ParamDim(spec), 1e3);
  auto loss = Loss(spec, theta, data);
  auto grad = Gradient(spec, theta, data);
  ASSERT_TRUE(loss.ok() && grad.ok());
  EXPECT_TRUE(std::isfinite(*loss));
  EXPECT_TRUE(grad->allFinite());
}

TEST(ModelTest, LossIsConvexAlongSegments) {
  std::mt19937_64 gen(15);
  for (int trial = 0; trial < 200; ++trial) {
    ModelSpec spec = RandomSpec(gen);
    Dataset data = RandomDataset(gen, spec, 15);
    ParamVector a = RandomVector(gen, ParamDim(spec), 3.0);
    ParamVector b = RandomVector(gen, ParamDim(spec), 3.0);
    const double mid = *Loss(spec, ParamVector(0.5 * (a + b)), data);
    const double ends = 0.5 * (*Loss(spec, a, data) + *Loss(spec, b, data));
    EXPECT_LE(mid, ends + 1e-9);
  }
}

TEST(ModelTest, ShiftingAllLogitsLeavesLossUnchanged) {
  // Adding the same vector to every class's weights and bias shifts all
  // logits equally.
  std::mt19937_64 gen(16);
  for (int trial = 0; trial < 50; ++trial) {
    ModelSpec spec = RandomSpec(gen);
    spec.l2_coefficient = 0.0;
    Dataset data = RandomDataset(gen, spec, 10);
    ParamVector theta = RandomVector(gen, ParamDim(spec));
    ParamVector shift = RandomVector(gen, spec.feature_dim + 1);
    ParamVector shifted = theta;
    for (int k = 0; k < spec.class_count; ++k) {
      shifted.segment(k * (spec.feature_dim + 1), spec.feature_dim + 1) +=
          shift;
    }
    EXPECT_NEAR(*Loss(spec, theta, data), *Loss(spec, shifted, data), 1e-10);
  }
}

TEST(ModelTest, GradientOfRegularizerSkipsBiases) {
  ModelSpec spec{ModelFamily::kSoftmaxLinear, 2, 2, 1.0};
  std::mt19937_64 gen(17);
  Dataset data = RandomDataset(gen, spec, 8);
  ParamVector theta = RandomVector(gen, 6);
  ModelSpec plain = spec;
  plain.l2_coefficient = 0.0;
  ParamVector diff = *Gradient(spec, theta, data) - *Gradient(plain, theta, data);
  for (int k = 0; k < 2; ++k) {
    EXPECT_NEAR(diff[k * 3 + 0], theta[k * 3 + 0], 1e-14);
    EXPECT_NEAR(diff[k * 3 + 1], theta[k * 3 + 1], 1e-14);
    EXPECT_EQ(diff[k * 3 + 2], 0.0);
  }
}

TEST(ModelTest, ArgMaxBreaksTiesTowardLowestIndex) {
  Eigen::Vector3d logits(1.0, 2.0, 2.0);
  EXPECT_EQ(ArgMaxLowest(logits), 1);
  EXPECT_EQ(ArgMaxLowest(Eigen::Vector3d::Zero()), 0);
  ModelSpec spec{ModelFamily::kSoftmaxLinear, 2, 3, 0.0};
  auto c = PredictClass(spec, ParamVector::Zero(9), Eigen::Vector2d(3.0, -1.0));
  ASSERT_TRUE(c.ok());
  EXPECT_EQ(*c, 0);
}

TEST(ModelTest, PredictAllMatchesPredictClass) {
  std::mt19937_64 gen(18);
  ModelSpec spec{ModelFamily::kSoftmaxLinear, 3, 4, 0.0};
  Dataset data = RandomDataset(gen, spec, 30);
  ParamVector theta = RandomVector(gen, ParamDim(spec));
  std::vector<int> all = PredictAll(spec, theta, data);
  ASSERT_EQ(all.size(), 30u);
  for (int i = 0; i < 30; ++i) {
    EXPECT_EQ(all[i], *PredictClass(spec, theta, data.features.row(i)));
  }
}

TEST(ModelTest, TemplatedOnScalar) {
  ModelSpec spec{ModelFamily::kSoftmaxLinear, 2, 2, 0.0};
  BasicDataset<float> data;
  data.class_count = 2;
  data.features = Eigen::MatrixXf::Ones(3, 2);
  data.labels = {0, 1, 1};
  Eigen::VectorXf theta = Eigen::VectorXf::Zero(6);
  auto loss = Loss(spec, theta, data);
  ASSERT_TRUE(loss.ok());
  EXPECT_NEAR(*loss, std::log(2.0f), 1e-6f);
  auto grad = Gradient(spec, theta, data);
  ASSERT_TRUE(grad.ok());
  EXPECT_EQ(grad->size(), 6);
}

TEST(ModelTest, RejectsBadShapes) {
  ModelSpec spec{ModelFamily::kSoftmaxLinear, 2, 3, 0.0};
  std::mt19937_64 gen(19);
  Dataset data = RandomDataset(gen, spec, 4);
  EXPECT_FALSE(Loss(spec, ParamVector::Zero(8), data).ok());
  EXPECT_FALSE(PredictLogits(spec, ParamVector::Zero(9),
                             Eigen::Vector3d::Zero()).ok());
  Dataset bad = data;
  bad.labels[0] = 3;
  EXPECT_FALSE(Loss(spec, ParamVector::Zero(9), bad).ok());
  EXPECT_FALSE(ValidateSpec({ModelFamily::kSoftmaxLinear, 0, 3, 0.0}).ok());
  EXPECT_FALSE(ValidateSpec({ModelFamily::kSoftmaxLinear, 2, 1, 0.0}).ok());
  EXPECT_FALSE(ValidateSpec({ModelFamily::kSoftmaxLinear, 2, 2, -1.0}).ok());
  ParamVector nan = ParamVector::Zero(9);
  nan[2] = NAN;
  EXPECT_FALSE(ValidateParams(spec, nan).ok());
}

}  // namespace
}  // namespace fedmesh
