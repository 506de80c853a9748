#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "fixtures.hpp"
#include "soz/train.hpp"

using namespace soz;
using namespace soz::testkit;

namespace {

WeightTable uniform_table(const Checkpoint& c, const std::string& test_id, const std::vector<std::string>& train_ids,
                          double w = 1.0) {
  WeightTable t;
  t.test_patient_id = test_id;
  t.feature_fingerprint = c.fingerprint;
  for (const auto& id : train_ids) t.entries.push_back({id, 0.0, w});
  return t;
}

std::vector<std::string> ids_except(const Cohort& c, const std::string& skip) {
  std::vector<std::string> out;
  for (const auto& p : c.patients) {
    if (p.patient_id != skip) out.push_back(p.patient_id);
  }
  return out;
}

}  // namespace

TEST(EpochOrder, IsASeededPermutation) {
  const auto a = epoch_order(1000, 7, 0, true);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  std::vector<Index> iota(1000);
  std::iota(iota.begin(), iota.end(), Index{0});
  EXPECT_EQ(sorted, iota);
  EXPECT_NE(a, iota);
  EXPECT_EQ(a, epoch_order(1000, 7, 0, true));
  EXPECT_NE(a, epoch_order(1000, 7, 1, true));
  EXPECT_NE(a, epoch_order(1000, 8, 0, true));
  EXPECT_EQ(epoch_order(10, 7, 0, false), std::vector<Index>(iota.begin(), iota.begin() + 10));
}

TEST(TrainConfig, RejectsOffGridLearningRates) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lr_finetune = 2e-4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TrainConfig, JsonRoundTrip) {
  auto c = ExperimentConfig::desk().train;
  c.seed = 17;
  const auto d = nlohmann::json(c).get<TrainConfig>();
  EXPECT_EQ(nlohmann::json(d), nlohmann::json(c));
}

TEST(TrainingSet, ExcludesHeldOutPatientAndKeysAreStable) {
  const auto cohort = tiny_cohort(3, 5);
  const auto all = TrainingSet::from_cohort(cohort);
  const auto fold = TrainingSet::from_cohort(cohort, "P02");
  EXPECT_EQ(all.size(), 30);
  EXPECT_EQ(fold.size(), 20);
  EXPECT_EQ(fold.patient_ids, (std::vector<std::string>{"P01", "P03"}));
  // P03's rows keep their keys when P02 is removed.
  EXPECT_TRUE(std::equal(fold.sample_keys.begin() + 10, fold.sample_keys.end(), all.sample_keys.begin() + 20));
  for (Index i = 0; i < fold.size(); ++i) {
    const double mean = fold.windows.row(i).cast<double>().mean();
    EXPECT_NEAR(mean, 0.0, 1e-5);
  }
}

TEST(Finetune, RunsEpochsTimesBatchesOptimizerSteps) {
  const auto cohort = tiny_cohort(3, 150);  // 600 training windows
  auto config = tiny_experiment();
  config.train.batch_size = 512;
  config.train.epochs_pretrain = 1;
  config.train.epochs_finetune = 5;
  const auto seeds = FoldSeeds::derive(1, "P01");
  const auto pre = pretrain(cohort, "P01", config, seeds);
  EXPECT_EQ(pre.log.optimizer_steps, 2u);
  const auto ft = finetune(pre.checkpoint, cohort, "P01", nullptr, config, seeds);
  EXPECT_EQ(ft.log.optimizer_steps, 5u * 2u);
  EXPECT_EQ(ft.log.epoch_loss.size(), 5u);
  EXPECT_EQ(ft.checkpoint.provenance.at("optimizer_steps").get<std::uint64_t>(), 10u);
  EXPECT_EQ(ft.checkpoint.provenance.at("parent_fingerprint"), pre.checkpoint.fingerprint);
}

TEST(Finetune, UnitWeightsAreBitIdenticalToUnweighted) {
  const auto cohort = tiny_cohort(4, 40);
  const auto config = tiny_experiment();
  const auto seeds = FoldSeeds::derive(3, "P02");
  const auto pre = pretrain(cohort, "P02", config, seeds);
  const auto table = uniform_table(pre.checkpoint, "P02", ids_except(cohort, "P02"));
  const auto plain = finetune(pre.checkpoint, cohort, "P02", nullptr, config, seeds);
  const auto weighted = finetune(pre.checkpoint, cohort, "P02", &table, config, seeds);
  EXPECT_EQ(plain.checkpoint.arrays, weighted.checkpoint.arrays);
  EXPECT_EQ(plain.log.epoch_loss, weighted.log.epoch_loss);
}

TEST(Finetune, ZeroWeightEqualsRemovingThePatient) {
  const auto cohort = tiny_cohort(3, 30);
  TrainConfig config = tiny_experiment().train;
  config.batch_size = 512;  // one batch, same composition up to the masked rows
  config.shuffle = false;
  const auto full = TrainingSet::from_cohort(cohort);

  Cohort reduced = cohort;
  reduced.patients.erase(reduced.patients.begin() + 1);
  const auto without = TrainingSet::from_cohort(reduced);

  WeightTable table;
  for (const auto& id : full.patient_ids) table.entries.push_back({id, 0.0, id == "P02" ? 0.0 : 1.0});

  SozNet<double> a(tiny_net(), 4);
  SozNet<double> b(tiny_net(), 4);
  train_epochs(a, full, 3, 1e-3, config, 9, &table, Stage::Finetune);
  train_epochs(b, without, 3, 1e-3, config, 9, nullptr, Stage::Finetune);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto diff = (a.parameters()[i].value().data() - b.parameters()[i].value().data()).cwiseAbs().maxCoeff();
    EXPECT_LT(diff, 1e-6) << "parameter " << i;
  }
}

TEST(Finetune, RejectsMismatchedWeightTables) {
  const auto cohort = tiny_cohort(3, 10);
  const auto config = tiny_experiment();
  const auto seeds = FoldSeeds::derive(1, "P01");
  const auto pre = pretrain(cohort, "P01", config, seeds);

  auto missing = uniform_table(pre.checkpoint, "P01", {"P02"});
  EXPECT_THROW(finetune(pre.checkpoint, cohort, "P01", &missing, config, seeds), ConfigError);

  auto stale = uniform_table(pre.checkpoint, "P01", ids_except(cohort, "P01"));
  stale.feature_fingerprint = std::string(64, '0');
  EXPECT_THROW(finetune(pre.checkpoint, cohort, "P01", &stale, config, seeds), IntegrityError);

  auto other_fold = uniform_table(pre.checkpoint, "P03", ids_except(cohort, "P01"));
  EXPECT_THROW(finetune(pre.checkpoint, cohort, "P01", &other_fold, config, seeds), IntegrityError);
}

TEST(Training, SameSeedGivesIdenticalParameters) {
  const auto cohort = tiny_cohort(3, 20);
  const auto config = tiny_experiment();
  const auto seeds = FoldSeeds::derive(2, "P03");
  const auto a = pretrain(cohort, "P03", config, seeds);
  const auto b = pretrain(cohort, "P03", config, seeds);
  EXPECT_EQ(a.checkpoint.fingerprint, b.checkpoint.fingerprint);
  EXPECT_EQ(a.checkpoint.arrays, b.checkpoint.arrays);
  const auto c = pretrain(cohort, "P03", config, FoldSeeds::derive(3, "P03"));
  EXPECT_NE(a.checkpoint.fingerprint, c.checkpoint.fingerprint);
}

TEST(Training, DeskPretrainingLearnsTheMajorityConvention) {
  const auto params = default_cohort_params(11, 400, CohortScale::Desk, 1);
  const auto cohort = synth_cohort(params, 1);
  const auto pre = pretrain(cohort, "P01", ExperimentConfig::desk(), FoldSeeds::derive(1, "P01"));
  const auto& loss = pre.log.epoch_loss;
  ASSERT_EQ(loss.size(), 30u);
  EXPECT_LT(loss.back(), loss.front());
  // The two labeling conventions conflict on isolated sharps, so the pooled
  // model fits the sharp majority and stays near chance on spike-wave patients.
  const auto net = load_net<float>(pre.checkpoint);
  double acc[2] = {0, 0};
  int count[2] = {0, 0};
  for (std::size_t i = 1; i < cohort.patients.size(); ++i) {
    const auto& p = cohort.patients[i];
    const int k = params[i].metadata.at("phenotype") == "sharp" ? 0 : 1;
    acc[k] += accuracy_percent(confusion_counts(predict_labels(net, model_input(p)), p.labels()));
    ++count[k];
  }
  ASSERT_GT(count[0], 0);
  ASSERT_GT(count[1], 0);
  const double sharp = acc[0] / count[0];
  const double spike_wave = acc[1] / count[1];
  EXPECT_GT(sharp, 80.0);
  EXPECT_GT(sharp, spike_wave + 10.0);
}

TEST(Confusion, PerfectAndConstantPredictors) {
  const std::vector<int> truth{0, 0, 0, 1, 1, 1};
  const auto perfect = confusion_counts(truth, truth);
  EXPECT_DOUBLE_EQ(accuracy_percent(perfect), 100.0);
  const std::vector<int> ones(6, 1);
  const auto constant = confusion_counts(ones, truth);
  EXPECT_DOUBLE_EQ(accuracy_percent(constant), 50.0);
  EXPECT_EQ(constant.tp, 3);
  EXPECT_EQ(constant.fp, 3);
  EXPECT_EQ(constant.total(), 6);
}

TEST(Confusion, CountsSumToTestSize) {
  const std::vector<int> truth{0, 1, 1, 0, 1, 0, 0};
  const std::vector<int> pred{1, 1, 0, 0, 1, 1, 0};
  const auto c = confusion_counts(pred, truth);
  EXPECT_EQ(c.tp, 2);
  EXPECT_EQ(c.tn, 2);
  EXPECT_EQ(c.fp, 2);
  EXPECT_EQ(c.fn, 1);
  EXPECT_EQ(c.total(), 7);
  EXPECT_THROW(confusion_counts(pred, std::vector<int>{0}), ShapeError);
}
