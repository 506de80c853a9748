#pragma once

// Small cohorts and configs that keep pipeline tests fast.

#include <filesystem>
#include <string>

#include "soz/pipeline.hpp"
#include "soz/synth.hpp"

namespace soz::testkit {

/// Two blocks of narrow convs on 750-sample windows: 750 -> 187 -> 46, width 4 * 46.
inline SozNetConfig tiny_net() {
  SozNetConfig c;
  c.input_length = 750;
  c.conv_spec = {{1, 2, 3, 1}, {2, 2, 3, 1}, {2, 4, 3, 1}, {4, 4, 3, 1}};
  c.fc_spec = {184, 16, 2};
  return c;
}

inline ExperimentConfig tiny_experiment(std::uint64_t master_seed = 1) {
  ExperimentConfig c;
  c.net = tiny_net();
  c.train.epochs_pretrain = 2;
  c.train.epochs_finetune = 2;
  c.train.batch_size = 64;
  c.train.lr_pretrain = 1e-3;
  c.train.lr_finetune = 5e-4;
  c.train.subsample = 32;
  c.master_seed = master_seed;
  return c;
}

inline Cohort tiny_cohort(std::size_t patients = 3, Index per_class = 20, std::uint64_t seed = 5) {
  return synth_cohort(default_cohort_params(patients, per_class, CohortScale::Desk, seed), seed);
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("soz_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Records every label read and gradient batch of a LOPO run, tagged with the
/// fold and stage in progress, and counts the ones that touch the held-out
/// patient too early.
class HygieneAuditor : public PipelineObserver {
 public:
  HygieneAuditor()
      : guard_([this](const std::string& id) {
          ++label_reads;
          if (id == fold_ && stage_ != Stage::Evaluate) ++early_test_label_reads;
        }) {}

  void on_stage(const std::string& test_patient, Stage stage) override {
    fold_ = test_patient;
    stage_ = stage;
    ++stage_events;
  }

  void on_gradient_batch(Stage, const std::vector<std::string>& patients) override {
    ++gradient_batches;
    for (const auto& id : patients) {
      if (id == fold_) ++test_gradient_contributions;
    }
  }

  std::size_t label_reads = 0;
  std::size_t early_test_label_reads = 0;
  std::size_t gradient_batches = 0;
  std::size_t test_gradient_contributions = 0;
  std::size_t stage_events = 0;

 private:
  std::string fold_;
  Stage stage_ = Stage::Pretrain;
  ScopedLabelObserver guard_;
};

}  // namespace soz::testkit
