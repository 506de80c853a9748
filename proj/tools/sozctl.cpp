// Command-line driver: cohort synthesis, the individual pipeline stages, full
// leave-one-patient-out experiments and report rendering.

#include <malloc.h>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "soz/io_util.hpp"
#include "soz/pipeline.hpp"
#include "soz/synth.hpp"

namespace fs = std::filesystem;
using namespace soz;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kIntegrity = 3, kFold = 4 };

/// Everything a run needs, merged from defaults, the --config file and flags.
struct RunConfig {
  CohortScale scale = CohortScale::Desk;
  std::size_t patients = 11;
  Index windows_per_class = 400;
  std::optional<int> rate_hz;
  std::optional<double> window_seconds;
  ExperimentConfig experiment = ExperimentConfig::desk();

  nlohmann::json to_json() const {
    return {{"scale", scale == CohortScale::Desk ? "desk" : "full"},
            {"patients", patients},
            {"windows_per_class", windows_per_class},
            {"rate_hz", rate_hz ? nlohmann::json(*rate_hz) : nlohmann::json(nullptr)},
            {"window_seconds", window_seconds ? nlohmann::json(*window_seconds) : nlohmann::json(nullptr)},
            {"experiment", experiment}};
  }
};

struct Flags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string scale;
  std::optional<std::size_t> patients;
  std::optional<Index> windows;
  std::optional<int> rate_hz;
  std::optional<double> window_seconds;
  std::optional<int> epochs_pretrain;
  std::optional<int> epochs_finetune;
  std::string cohort;
  std::string checkpoint;
  std::string features;
  std::string weights;
  std::string test_patient;
  std::string kernel = "RBF";
  std::string method;
  std::vector<std::string> methods{"Standard", "Multiscale", "RBF"};
  std::vector<std::string> only;
  std::string report;
};

CohortScale parse_scale(const std::string& s) {
  if (s == "desk") return CohortScale::Desk;
  if (s == "full") return CohortScale::Full;
  throw ConfigError("unknown scale '" + s + "' (expected desk or full)");
}

RunConfig resolve(const Flags& f) {
  RunConfig rc;
  nlohmann::json file = nlohmann::json::object();
  if (!f.config_path.empty()) {
    try {
      file = nlohmann::json::parse(read_file(f.config_path));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config " + f.config_path + ": " + e.what());
    }
  }
  const std::string scale = !f.scale.empty() ? f.scale : file.value("scale", std::string("desk"));
  rc.scale = parse_scale(scale);
  rc.experiment = rc.scale == CohortScale::Desk ? ExperimentConfig::desk() : ExperimentConfig{};
  try {
    if (file.contains("experiment")) from_json(file.at("experiment"), rc.experiment);
    rc.patients = file.value("patients", rc.patients);
    rc.windows_per_class = file.value("windows_per_class", rc.windows_per_class);
    if (file.contains("rate_hz") && !file.at("rate_hz").is_null()) rc.rate_hz = file.at("rate_hz").get<int>();
    if (file.contains("window_seconds") && !file.at("window_seconds").is_null()) {
      rc.window_seconds = file.at("window_seconds").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + f.config_path + ": " + e.what());
  }
  if (f.patients) rc.patients = *f.patients;
  if (f.windows) rc.windows_per_class = *f.windows;
  if (f.rate_hz) rc.rate_hz = f.rate_hz;
  if (f.window_seconds) rc.window_seconds = f.window_seconds;
  if (f.seed) rc.experiment.master_seed = *f.seed;
  if (f.epochs_pretrain) rc.experiment.train.epochs_pretrain = *f.epochs_pretrain;
  if (f.epochs_finetune) rc.experiment.train.epochs_finetune = *f.epochs_finetune;
  rc.experiment.net.validate();
  rc.experiment.train.validate();
  return rc;
}

std::vector<SynthParams> cohort_params(const RunConfig& rc) {
  auto params = default_cohort_params(rc.patients, rc.windows_per_class, rc.scale, rc.experiment.master_seed);
  for (auto& p : params) {
    if (rc.rate_hz) {
      const bool doubled = p.native_rate_hz == 2 * p.effective_rate_hz;
      p.effective_rate_hz = *rc.rate_hz;
      p.native_rate_hz = doubled ? 2 * *rc.rate_hz : *rc.rate_hz;
    }
    if (rc.window_seconds) p.window_seconds = *rc.window_seconds;
  }
  return params;
}

void save_checkpoint(Checkpoint c, const RunConfig& rc, const fs::path& path) {
  c.provenance["run_config"] = rc.to_json();
  fs::create_directories(path.parent_path());
  c.save(path);
  std::cout << "wrote " << path.string() << " (" << c.fingerprint.substr(0, 12) << ")\n";
}

const PatientRecord& test_record(const Cohort& cohort, const std::string& id) {
  if (id.empty()) throw ConfigError("--test-patient is required");
  return cohort.at(id);
}

int cmd_synth(const Flags& f) {
  const auto rc = resolve(f);
  const auto params = cohort_params(rc);
  const auto cohort = synth_cohort(params, rc.experiment.master_seed);
  nlohmann::json generator{{"run_config", rc.to_json()}, {"master_seed", rc.experiment.master_seed}, {"params", params}};
  save_cohort(cohort, f.out, generator);
  for (const auto& p : cohort.patients) {
    const auto n = p.class_counts();
    std::cout << p.patient_id << ": " << n[0] << " non-SOZ + " << n[1] << " SOZ windows of " << p.window_length()
              << " samples (" << p.sampling_rate_hz << " -> " << p.effective_rate_hz << " Hz)\n";
  }
  std::cout << "cohort written to " << f.out << '\n';
  return kOk;
}

int cmd_pretrain(const Flags& f) {
  const auto rc = resolve(f);
  const auto cohort = load_cohort(f.cohort);
  test_record(cohort, f.test_patient);
  const auto seeds = FoldSeeds::derive(rc.experiment.master_seed, f.test_patient);
  const auto r = pretrain(cohort, f.test_patient, rc.experiment, seeds);
  std::cout << "pretrain loss " << r.log.epoch_loss.front() << " -> " << r.log.epoch_loss.back() << '\n';
  save_checkpoint(r.checkpoint, rc, fs::path(f.out) / ("pretrain_" + f.test_patient + ".sozn"));
  return kOk;
}

int cmd_featurize(const Flags& f) {
  const auto checkpoint = Checkpoint::load(f.checkpoint);
  const auto cohort = load_cohort(f.cohort);
  const fs::path dir = fs::path(f.out) / "features";
  fs::create_directories(dir);
  for (const auto& set : featurize_cohort(checkpoint, cohort)) {
    set.save(dir / (set.patient_id + ".sozf"));
    std::cout << set.patient_id << ": " << set.size() << " x " << set.feature_dim() << '\n';
  }
  std::cout << "features written to " << dir.string() << '\n';
  return kOk;
}

int cmd_weights(const Flags& f) {
  const auto rc = resolve(f);
  if (f.test_patient.empty()) throw ConfigError("--test-patient is required");
  std::vector<FeatureSet> train;
  std::optional<FeatureSet> test;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(f.features)) {
    if (e.path().extension() == ".sozf") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    auto set = FeatureSet::load(path);
    if (set.patient_id == f.test_patient) {
      test = std::move(set);
    } else {
      train.push_back(std::move(set));
    }
  }
  if (!test) throw ConfigError("no features for test patient " + f.test_patient + " in " + f.features);
  const Method method = method_from_string(f.kernel);
  if (method == Method::Standard) throw ConfigError("--kernel must be RBF or Multiscale");
  const auto seeds = FoldSeeds::derive(rc.experiment.master_seed, f.test_patient);
  const auto table = compute_weight_table(train, *test, rc.experiment.kernel_for(method), rc.experiment.train.subsample,
                                          seeds.weights);
  for (const auto& e : table.entries) std::cout << e.patient_id << ": mmd2 " << e.mmd2 << " weight " << e.weight << '\n';
  const fs::path path = fs::path(f.out) / ("weights_" + to_string(method) + "_" + f.test_patient + ".json");
  fs::create_directories(path.parent_path());
  table.save(path);
  std::cout << "wrote " << path.string() << '\n';
  return kOk;
}

int cmd_finetune(const Flags& f) {
  const auto rc = resolve(f);
  const auto pretrained = Checkpoint::load(f.checkpoint);
  const auto cohort = load_cohort(f.cohort);
  test_record(cohort, f.test_patient);
  std::optional<WeightTable> table;
  if (!f.weights.empty()) table = WeightTable::load(f.weights);
  const auto seeds = FoldSeeds::derive(rc.experiment.master_seed, f.test_patient);
  const auto r = finetune(pretrained, cohort, f.test_patient, table ? &*table : nullptr, rc.experiment, seeds);
  const std::string tag = table ? to_string(table->kernel.kind) : std::string("unweighted");
  save_checkpoint(r.checkpoint, rc, fs::path(f.out) / ("finetune_" + tag + "_" + f.test_patient + ".sozn"));
  return kOk;
}

int cmd_evaluate(const Flags& f) {
  const auto checkpoint = Checkpoint::load(f.checkpoint);
  const auto cohort = load_cohort(f.cohort);
  const auto& record = test_record(cohort, f.test_patient);
  const Method method = f.method.empty() ? Method::Standard : method_from_string(f.method);
  const auto r = evaluate(checkpoint, record, method);
  std::cout << f.test_patient << " " << to_string(method) << ": " << r.accuracy << "% (tp " << r.confusion.tp << ", tn "
            << r.confusion.tn << ", fp " << r.confusion.fp << ", fn " << r.confusion.fn << ")\n";
  const nlohmann::json j{{"test_patient_id", r.test_patient_id},
                         {"method", to_string(method)},
                         {"accuracy", r.accuracy},
                         {"n_test", r.n_test},
                         {"checkpoint_fingerprint", checkpoint.fingerprint},
                         {"confusion", {{"tp", r.confusion.tp}, {"tn", r.confusion.tn}, {"fp", r.confusion.fp}, {"fn", r.confusion.fn}}}};
  const fs::path path = fs::path(f.out) / ("eval_" + to_string(method) + "_" + f.test_patient + ".json");
  fs::create_directories(path.parent_path());
  write_file(path, j.dump(2) + "\n");
  return kOk;
}

int cmd_lopo(const Flags& f) {
  const auto rc = resolve(f);
  const auto cohort = load_cohort(f.cohort);
  LopoOptions options;
  options.methods.clear();
  for (const auto& m : f.methods) options.methods.push_back(method_from_string(m));
  const fs::path out(f.out);
  fs::create_directories(out);
  options.on_fold = [&](const FoldArtifacts& a) {
    const fs::path dir = out / "folds" / a.test_patient_id;
    fs::create_directories(dir);
    auto pre = a.pretrained->checkpoint;
    pre.provenance["run_config"] = rc.to_json();
    pre.save(dir / "pretrain.sozn");
    for (const auto& [m, ft] : a.finetuned) {
      auto c = ft->checkpoint;
      c.provenance["run_config"] = rc.to_json();
      c.save(dir / ("finetune_" + to_string(m) + ".sozn"));
    }
    for (const auto& r : a.results) {
      if (r.weights) r.weights->save(dir / ("weights_" + to_string(r.method) + ".json"));
    }
    std::cout << a.test_patient_id;
    for (const auto& r : a.results) std::cout << "  " << to_string(r.method) << " " << r.accuracy;
    std::cout << std::endl;
  };

  // Folds run one at a time so that a failing fold does not discard the others.
  ExperimentReport report;
  std::vector<std::string> failed;
  for (const auto& p : cohort.patients) {
    if (!f.only.empty() && std::find(f.only.begin(), f.only.end(), p.patient_id) == f.only.end()) continue;
    options.only_patients = {p.patient_id};
    try {
      auto part = run_lopo(cohort, rc.experiment, options);
      if (report.patient_ids.empty()) {
        report.methods = part.methods;
        report.config_snapshot = part.config_snapshot;
        report.cohort_fingerprint = part.cohort_fingerprint;
      }
      report.patient_ids.insert(report.patient_ids.end(), part.patient_ids.begin(), part.patient_ids.end());
      report.folds.insert(report.folds.end(), part.folds.begin(), part.folds.end());
      for (const auto& [id, log] : part.fold_logs.items()) report.fold_logs[id] = log;
    } catch (const FoldError& e) {
      std::cerr << "error: " << e.what() << '\n';
      failed.push_back(e.patient_id());
    }
  }
  if (!report.patient_ids.empty()) {
    write_file(out / "report.csv", report.to_csv());
    auto j = report.to_json();
    j["run_config"] = rc.to_json();
    j["failed_folds"] = failed;
    write_file(out / "report.json", j.dump(2) + "\n");
    std::cout << '\n' << render_table(report.to_csv());
  }
  if (!failed.empty()) {
    std::cerr << failed.size() << " fold(s) failed:";
    for (const auto& id : failed) std::cerr << ' ' << id;
    std::cerr << '\n';
    return kFold;
  }
  return kOk;
}

int cmd_report(const Flags& f) {
  const fs::path path = f.report.empty() ? fs::path(f.out) / "report.csv" : fs::path(f.report);
  std::cout << render_table(read_file(path));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  // Training allocates and frees large activation buffers every step; keep them
  // on the heap instead of round-tripping through mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"SOZ localization with similarity-weighted fine-tuning"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config_path, "JSON run config")->check(CLI::ExistingFile);
  app.add_option("--seed", f.seed, "master seed");
  app.add_option("--out", f.out, "output directory");

  auto add_experiment_flags = [&](CLI::App* sub) {
    sub->add_option("--epochs-pretrain", f.epochs_pretrain, "pretraining epochs")->check(CLI::NonNegativeNumber);
    sub->add_option("--epochs-finetune", f.epochs_finetune, "fine-tuning epochs")->check(CLI::NonNegativeNumber);
    sub->add_option("--scale", f.scale, "desk or full defaults");
  };
  auto add_cohort = [&](CLI::App* sub) { sub->add_option("--cohort", f.cohort, "cohort directory")->required(); };
  auto add_test = [&](CLI::App* sub) { sub->add_option("--test-patient", f.test_patient, "held-out patient id")->required(); };

  auto* synth = app.add_subcommand("synth", "generate a synthetic cohort");
  synth->add_option("--scale", f.scale, "desk (250 Hz, 750-sample windows) or full (1000 Hz, 3000)");
  synth->add_option("--patients", f.patients, "number of patients")->check(CLI::PositiveNumber);
  synth->add_option("--windows", f.windows, "windows per class and patient")->check(CLI::PositiveNumber);
  synth->add_option("--rate-hz", f.rate_hz, "effective sampling rate in Hz")->check(CLI::PositiveNumber);
  synth->add_option("--window-seconds", f.window_seconds, "window length in seconds")->check(CLI::PositiveNumber);

  auto* pre = app.add_subcommand("pretrain", "train on every patient but the held-out one");
  add_cohort(pre);
  add_test(pre);
  add_experiment_flags(pre);

  auto* feat = app.add_subcommand("featurize", "extract last-block features for every patient");
  feat->add_option("--checkpoint", f.checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  add_cohort(feat);

  auto* weights = app.add_subcommand("weights", "patient weights from feature discrepancies");
  weights->add_option("--features", f.features, "directory of .sozf files")->required()->check(CLI::ExistingDirectory);
  add_test(weights);
  weights->add_option("--kernel", f.kernel, "RBF or Multiscale");
  add_experiment_flags(weights);

  auto* fine = app.add_subcommand("finetune", "continue training with optional patient weights");
  fine->add_option("--checkpoint", f.checkpoint, "pretrained checkpoint")->required()->check(CLI::ExistingFile);
  fine->add_option("--weights", f.weights, "weight table JSON")->check(CLI::ExistingFile);
  add_cohort(fine);
  add_test(fine);
  add_experiment_flags(fine);

  auto* eval = app.add_subcommand("evaluate", "accuracy on the held-out patient");
  eval->add_option("--checkpoint", f.checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--method", f.method, "label stored with the result");
  add_cohort(eval);
  add_test(eval);

  auto* lopo = app.add_subcommand("lopo", "full leave-one-patient-out experiment");
  add_cohort(lopo);
  lopo->add_option("--methods", f.methods, "subset of Standard, Multiscale, RBF")->delimiter(',');
  lopo->add_option("--only", f.only, "restrict to these held-out patients")->delimiter(',');
  add_experiment_flags(lopo);

  auto* report = app.add_subcommand("report", "render report.csv as a table");
  report->add_option("--report", f.report, "report CSV (default <out>/report.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*synth) return cmd_synth(f);
    if (*pre) return cmd_pretrain(f);
    if (*feat) return cmd_featurize(f);
    if (*weights) return cmd_weights(f);
    if (*fine) return cmd_finetune(f);
    if (*eval) return cmd_evaluate(f);
    if (*lopo) return cmd_lopo(f);
    if (*report) return cmd_report(f);
  } catch (const FoldError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFold;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << '\n';
    return kIntegrity;
  } catch (const IoError& e) {
    std::cerr << "integrity error: " << e.what() << '\n';
    return kIntegrity;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
