#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <random>

#include "soz/weights.hpp"
#include "support.hpp"

using namespace soz;

namespace {

FeatureSet features(const std::string& id, Index rows, double shift, std::uint64_t seed, Index dim = 6) {
  std::mt19937_64 rng(seed);
  FeatureSet f;
  f.patient_id = id;
  f.model_fingerprint = "model";
  f.rows = testkit::random_matrix(rng, rows, dim, shift);
  return f;
}

double mean_weight(const WeightTable& t) {
  double s = 0;
  for (const auto& e : t.entries) s += e.weight;
  return s / static_cast<double>(t.entries.size());
}

}  // namespace

TEST(PatientWeights, EqualDiscrepanciesGiveUnitWeights) {
  for (double a : {0.0, 1e-6, 0.3, 50.0}) {
    const auto t = patient_weights({{"A", a}, {"B", a}, {"C", a}});
    for (const auto& e : t.entries) EXPECT_NEAR(e.weight, 1.0, 1e-12);
  }
}

TEST(PatientWeights, TwoPatientLimit) {
  const auto t = patient_weights({{"A", 0.0}, {"B", 1e6}});
  EXPECT_NEAR(t.entries[0].weight, 2.0, 1e-12);
  EXPECT_NEAR(t.entries[1].weight, 0.0, 1e-12);
}

TEST(PatientWeights, MatchClosedForm) {
  const std::vector<double> mmd{0.1, 0.4, 0.02, 1.5};
  std::vector<std::pair<std::string, double>> in;
  double total = 0;
  for (std::size_t i = 0; i < mmd.size(); ++i) {
    in.emplace_back("P" + std::to_string(i), mmd[i]);
    total += 1.0 / (mmd[i] + 1e-8);
  }
  const auto t = patient_weights(in);
  for (std::size_t i = 0; i < mmd.size(); ++i) {
    EXPECT_NEAR(t.entries[i].weight, 4.0 / (mmd[i] + 1e-8) / total, 1e-12);
    EXPECT_EQ(t.entries[i].mmd2, mmd[i]);
  }
}

TEST(PatientWeights, MeanIsOneAndOrderFollowsDiscrepancy) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::pair<std::string, double>> in;
    const int n = 2 + static_cast<int>(rng() % 12);
    for (int i = 0; i < n; ++i) in.emplace_back("P" + std::to_string(i), u(rng));
    const auto t = patient_weights(in);
    EXPECT_NEAR(mean_weight(t), 1.0, 1e-12);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (in[i].second < in[j].second) {
          EXPECT_GT(t.entries[i].weight, t.entries[j].weight);
        }
      }
    }
  }
}

TEST(PatientWeights, RejectsInvalidDiscrepancies) {
  EXPECT_THROW(patient_weights({}), ConfigError);
  EXPECT_THROW(patient_weights({{"A", -0.1}}), ConfigError);
  EXPECT_THROW(patient_weights({{"A", std::nan("")}}), ConfigError);
}

TEST(WeightTable, CopiedPatientGetsStrictlyMaximalWeight) {
  std::vector<FeatureSet> train;
  for (int i = 0; i < 6; ++i) train.push_back(features("P0" + std::to_string(i), 40, 0.1 * i, 10 + i));
  for (std::size_t k = 0; k < train.size(); ++k) {
    FeatureSet test = train[k];
    test.patient_id = "T";
    for (const auto& spec : {KernelSpec::rbf(), KernelSpec::multiscale()}) {
      const auto t = compute_weight_table(train, test, spec);
      EXPECT_NEAR(t.entries[k].mmd2, 0.0, 1e-12);
      for (std::size_t j = 0; j < t.entries.size(); ++j) {
        if (j != k) {
          EXPECT_GT(t.entries[k].weight, t.entries[j].weight);
        }
      }
      EXPECT_NEAR(mean_weight(t), 1.0, 1e-12);
    }
  }
}

TEST(WeightTable, OrderEquivariant) {
  std::vector<FeatureSet> train;
  for (int i = 0; i < 5; ++i) train.push_back(features("P" + std::to_string(i), 30, 0.2 * i, 20 + i));
  const auto test = features("T", 30, 0.3, 99);
  const auto a = compute_weight_table(train, test, KernelSpec::rbf());
  std::vector<FeatureSet> shuffled(train.rbegin(), train.rend());
  const auto b = compute_weight_table(shuffled, test, KernelSpec::rbf());
  for (const auto& e : a.entries) {
    EXPECT_NEAR(b.weight_for(e.patient_id), e.weight, 1e-12);
  }
}

TEST(WeightTable, SmallSetsUseEveryRow) {
  const auto x = features("A", 40, 0.0, 1);
  const auto y = features("T", 35, 0.5, 2);
  const auto t = compute_weight_table({x}, y, KernelSpec::multiscale(), 1024);
  EXPECT_NEAR(t.entries[0].mmd2, std::max(0.0, testkit::mmd2_oracle(x.rows, y.rows, KernelSpec::multiscale())), 1e-10);
}

TEST(WeightTable, SubsampleBoundsTheGramWork) {
  const auto big = features("P01", 4640, 0.0, 3, 4);
  const auto rows = subsample_rows(big, 1024, 7);
  EXPECT_EQ(rows.rows(), 1024);
  EXPECT_LE((rows.rows() + 1024) * (rows.rows() + 1024), 2048 * 2048);
  EXPECT_EQ(rows, subsample_rows(big, 1024, 7));
  EXPECT_NE(rows, subsample_rows(big, 1024, 8));
  // Every drawn row exists in the source and none repeats.
  std::vector<Index> hits;
  for (Index i = 0; i < rows.rows(); ++i) {
    for (Index j = 0; j < big.size(); ++j) {
      if (big.rows.row(j) == rows.row(i)) {
        hits.push_back(j);
        break;
      }
    }
  }
  ASSERT_EQ(hits.size(), 1024u);
  EXPECT_TRUE(std::is_sorted(hits.begin(), hits.end()));
  EXPECT_EQ(std::adjacent_find(hits.begin(), hits.end()), hits.end());
}

TEST(WeightTable, MixedModelsAreRejected) {
  auto a = features("A", 10, 0.0, 1);
  auto t = features("T", 10, 0.0, 2);
  a.model_fingerprint = "other";
  EXPECT_THROW(compute_weight_table({a}, t, KernelSpec::rbf()), IntegrityError);
  EXPECT_THROW(compute_weight_table({features("A", 10, 0.0, 1, 5)}, t, KernelSpec::rbf()), ShapeError);
}

TEST(WeightTable, JsonAndFileRoundTrip) {
  std::vector<FeatureSet> train{features("P01", 20, 0.0, 1), features("P02", 20, 1.0, 2)};
  const auto t = compute_weight_table(train, features("P03", 20, 0.2, 3), KernelSpec::multiscale(), 16, 5);
  const auto path = std::filesystem::temp_directory_path() / "soz_test_weights.json";
  t.save(path);
  const auto u = WeightTable::load(path);
  EXPECT_EQ(u.fingerprint(), t.fingerprint());
  EXPECT_EQ(u.test_patient_id, "P03");
  EXPECT_EQ(u.kernel, t.kernel);
  EXPECT_EQ(u.subsample, 16);
  EXPECT_EQ(u.entries.size(), 2u);
  EXPECT_EQ(u.weight_for("P02"), t.weight_for("P02"));
  EXPECT_THROW(u.weight_for("P09"), ConfigError);
}
