#include "soz/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "soz/hash.hpp"

namespace soz {

std::string to_string(Method m) {
  switch (m) {
    case Method::Standard: return "Standard";
    case Method::Multiscale: return "Multiscale";
    case Method::Rbf: return "RBF";
  }
  return "unknown";
}

Method method_from_string(const std::string& name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "standard") return Method::Standard;
  if (lower == "multiscale") return Method::Multiscale;
  if (lower == "rbf") return Method::Rbf;
  throw ConfigError("unknown method '" + name + "' (expected Standard, Multiscale or RBF)");
}

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig c;
  c.net = SozNetConfig::desk();
  c.train.epochs_pretrain = 30;
  c.train.epochs_finetune = 5;
  c.train.lr_pretrain = 1e-3;
  c.train.lr_finetune = 5e-4;
  return c;
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"net", c.net},
                     {"train", c.train},
                     {"kernels", {{"RBF", kernel_to_json(c.rbf)}, {"Multiscale", kernel_to_json(c.multiscale)}}},
                     {"master_seed", c.master_seed}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  if (j.contains("net")) c.net = j.at("net").get<SozNetConfig>();
  if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
  if (j.contains("kernels")) {
    const auto& k = j.at("kernels");
    if (k.contains("RBF")) c.rbf = kernel_from_json(k.at("RBF"));
    if (k.contains("Multiscale")) c.multiscale = kernel_from_json(k.at("Multiscale"));
  }
  c.master_seed = j.value("master_seed", c.master_seed);
}

FoldSeeds FoldSeeds::derive(std::uint64_t master_seed, const std::string& test_patient_id) {
  const std::uint64_t fold = derive_seed(master_seed, test_patient_id);
  return {fold, mix64(fold, 1), mix64(fold, 2), mix64(fold, 3), mix64(fold, 4)};
}

namespace {

nlohmann::json adam_json(const TrainConfig& t, double lr) {
  return {{"learning_rate", lr}, {"beta1", t.beta1}, {"beta2", t.beta2}, {"epsilon", t.epsilon}};
}

}  // namespace

PretrainResult pretrain(const Cohort& cohort, const std::string& test_patient_id, const ExperimentConfig& config,
                        const FoldSeeds& seeds, PipelineObserver* observer) {
  config.train.validate();
  if (observer != nullptr) observer->on_stage(test_patient_id, Stage::Pretrain);
  const auto data = TrainingSet::from_cohort(cohort, test_patient_id);
  if (data.patient_ids.size() < 2 && cohort.size() > 1) {
    throw ConfigError("pretrain: need at least two training patients");
  }
  SozNet<float> net(config.net, seeds.init);
  PretrainResult r;
  r.log = train_epochs(net, data, config.train.epochs_pretrain, config.train.lr_pretrain, config.train, seeds.pretrain,
                       nullptr, Stage::Pretrain, observer);
  r.checkpoint = make_checkpoint(net, {{"stage", "pretrain"},
                                       {"held_out_patient", test_patient_id},
                                       {"training_patients", data.patient_ids},
                                       {"epochs", config.train.epochs_pretrain},
                                       {"batch_size", config.train.batch_size},
                                       {"adam", adam_json(config.train, config.train.lr_pretrain)},
                                       {"shuffle_seed", seeds.pretrain},
                                       {"optimizer_steps", r.log.optimizer_steps},
                                       {"loss_curve", r.log.epoch_loss}});
  return r;
}

FeatureSet featurize_patient(const Checkpoint& checkpoint, const PatientRecord& record) {
  const auto net = load_net<float>(checkpoint);
  FeatureSet f;
  f.patient_id = record.patient_id;
  f.model_fingerprint = checkpoint.fingerprint;
  f.rows = extract_feature_rows(net, model_input(record));
  return f;
}

std::vector<FeatureSet> featurize_cohort(const Checkpoint& checkpoint, const Cohort& cohort) {
  if (cohort.window_length() != checkpoint.config.input_length && cohort.size() > 0) {
    throw ShapeError("featurize: cohort windows have " + std::to_string(cohort.window_length()) +
                     " samples, model expects " + std::to_string(checkpoint.config.input_length));
  }
  std::vector<FeatureSet> out;
  for (const auto& p : cohort.patients) out.push_back(featurize_patient(checkpoint, p));
  return out;
}

FinetuneResult finetune(const Checkpoint& pretrained, const Cohort& cohort, const std::string& test_patient_id,
                        const WeightTable* weights, const ExperimentConfig& config, const FoldSeeds& seeds,
                        PipelineObserver* observer) {
  config.train.validate();
  if (observer != nullptr) observer->on_stage(test_patient_id, Stage::Finetune);
  if (weights != nullptr) {
    if (weights->feature_fingerprint != pretrained.fingerprint) {
      throw IntegrityError("finetune: weight table was computed from features of model " +
                           weights->feature_fingerprint.substr(0, 12) + ", not of checkpoint " +
                           pretrained.fingerprint.substr(0, 12));
    }
    if (weights->test_patient_id != test_patient_id) {
      throw IntegrityError("finetune: weight table targets patient " + weights->test_patient_id + ", fold holds out " +
                           test_patient_id);
    }
  }
  const auto data = TrainingSet::from_cohort(cohort, test_patient_id);
  auto net = load_net<float>(pretrained);
  FinetuneResult r;
  const double lr = config.train.lr_finetune;
  r.log = train_epochs(net, data, config.train.epochs_finetune, lr, config.train, seeds.finetune, weights,
                       Stage::Finetune, observer);
  nlohmann::json prov{{"stage", "finetune"},
                      {"held_out_patient", test_patient_id},
                      {"parent_fingerprint", pretrained.fingerprint},
                      {"epochs", config.train.epochs_finetune},
                      {"batch_size", config.train.batch_size},
                      {"adam", adam_json(config.train, lr)},
                      {"shuffle_seed", seeds.finetune},
                      {"optimizer_steps", r.log.optimizer_steps},
                      {"loss_curve", r.log.epoch_loss}};
  if (weights != nullptr) {
    prov["weight_table_fingerprint"] = weights->fingerprint();
    prov["kernel"] = to_string(weights->kernel.kind);
  }
  prov["init_seed"] = pretrained.provenance.value("init_seed", std::uint64_t{0});
  r.checkpoint = make_checkpoint(net, prov);
  return r;
}

FoldResult evaluate(const Checkpoint& checkpoint, const PatientRecord& test_patient, Method method) {
  const auto net = load_net<float>(checkpoint);
  const auto predicted = predict_labels(net, model_input(test_patient));
  FoldResult r;
  r.test_patient_id = test_patient.patient_id;
  r.method = method;
  r.confusion = confusion_counts(predicted, test_patient.labels());
  r.n_test = r.confusion.total();
  r.accuracy = accuracy_percent(r.confusion);
  return r;
}

const FoldResult& ExperimentReport::result(const std::string& patient_id, Method m) const {
  for (const auto& f : folds) {
    if (f.test_patient_id == patient_id && f.method == m) return f;
  }
  throw ConfigError("report: no result for " + patient_id + " / " + to_string(m));
}

double ExperimentReport::mean_accuracy(Method m) const {
  double total = 0;
  for (const auto& id : patient_ids) total += result(id, m).accuracy;
  return patient_ids.empty() ? 0.0 : total / static_cast<double>(patient_ids.size());
}

namespace {

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string ExperimentReport::to_csv() const {
  std::ostringstream os;
  os << "Patient";
  for (Method m : methods) os << ',' << to_string(m);
  os << '\n';
  for (const auto& id : patient_ids) {
    os << id;
    for (Method m : methods) os << ',' << fixed2(result(id, m).accuracy);
    os << '\n';
  }
  os << "Mean";
  for (Method m : methods) os << ',' << fixed2(mean_accuracy(m));
  os << '\n';
  return os.str();
}

nlohmann::json ExperimentReport::to_json() const {
  nlohmann::json folds_json = nlohmann::json::array();
  for (const auto& f : folds) {
    nlohmann::json j{{"test_patient_id", f.test_patient_id},
                     {"method", to_string(f.method)},
                     {"accuracy", f.accuracy},
                     {"n_test", f.n_test},
                     {"confusion", {{"tp", f.confusion.tp}, {"tn", f.confusion.tn}, {"fp", f.confusion.fp}, {"fn", f.confusion.fn}}}};
    if (f.weights) j["weight_table"] = f.weights->to_json();
    folds_json.push_back(std::move(j));
  }
  nlohmann::json means = nlohmann::json::object();
  for (Method m : methods) means[to_string(m)] = mean_accuracy(m);
  nlohmann::json method_names = nlohmann::json::array();
  for (Method m : methods) method_names.push_back(to_string(m));
  return {{"config", config_snapshot},   {"cohort_fingerprint", cohort_fingerprint},
          {"patients", patient_ids},     {"methods", method_names},
          {"folds", folds_json},         {"mean", means},
          {"fold_logs", fold_logs}};
}

ExperimentReport run_lopo(const Cohort& cohort, const ExperimentConfig& config, const LopoOptions& options) {
  if (cohort.size() < 2) throw ConfigError("lopo: need at least two patients");
  cohort.validate();
  config.net.validate();
  config.train.validate();
  if (cohort.window_length() != config.net.input_length) {
    throw ShapeError("lopo: cohort windows have " + std::to_string(cohort.window_length()) +
                     " samples, model expects " + std::to_string(config.net.input_length));
  }
  ExperimentReport report;
  report.methods = options.methods;
  report.config_snapshot = config;
  report.cohort_fingerprint = cohort.fingerprint();
  PipelineObserver* obs = options.observer;

  for (const auto& test : cohort.patients) {
    const std::string& id = test.patient_id;
    if (!options.only_patients.empty() &&
        std::find(options.only_patients.begin(), options.only_patients.end(), id) == options.only_patients.end()) {
      continue;
    }
    try {
      const auto seeds = FoldSeeds::derive(config.master_seed, id);
      const auto pre = pretrain(cohort, id, config, seeds, obs);
      nlohmann::json log{{"fold_seed", seeds.fold},
                         {"pretrain_fingerprint", pre.checkpoint.fingerprint},
                         {"pretrain_loss", pre.log.epoch_loss}};

      std::vector<FeatureSet> train_features;
      std::optional<FeatureSet> test_features;
      std::vector<std::pair<Method, FinetuneResult>> tuned;
      std::vector<FoldResult> results;
      for (Method m : options.methods) {
        if (m == Method::Standard) continue;
        if (!test_features) {
          if (obs != nullptr) obs->on_stage(id, Stage::Featurize);
          for (const auto& p : cohort.patients) {
            if (p.patient_id == id) {
              test_features = featurize_patient(pre.checkpoint, p);
            } else {
              train_features.push_back(featurize_patient(pre.checkpoint, p));
            }
          }
        }
        if (obs != nullptr) obs->on_stage(id, Stage::Weights);
        auto table = compute_weight_table(train_features, *test_features, config.kernel_for(m), config.train.subsample,
                                          seeds.weights);
        auto ft = finetune(pre.checkpoint, cohort, id, &table, config, seeds, obs);
        log[to_string(m)] = {{"weights", table.to_json()}, {"finetune_loss", ft.log.epoch_loss}};
        tuned.emplace_back(m, std::move(ft));
      }

      if (obs != nullptr) obs->on_stage(id, Stage::Evaluate);
      for (Method m : options.methods) {
        if (m == Method::Standard) {
          results.push_back(evaluate(pre.checkpoint, test, m));
          continue;
        }
        for (const auto& [tm, ft] : tuned) {
          if (tm != m) continue;
          auto r = evaluate(ft.checkpoint, test, m);
          r.weights = WeightTable::from_json(log[to_string(m)]["weights"]);
          results.push_back(std::move(r));
        }
      }
      report.fold_logs[id] = std::move(log);
      report.patient_ids.push_back(id);
      report.folds.insert(report.folds.end(), results.begin(), results.end());
      if (options.on_fold) {
        FoldArtifacts art{id, &pre, {}, results};
        for (const auto& [m, ft] : tuned) art.finetuned.emplace_back(m, &ft);
        options.on_fold(art);
      }
    } catch (const FoldError&) {
      throw;
    } catch (const std::exception& e) {
      throw FoldError(id, e.what());
    }
  }
  return report;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::string render_table(const std::string& csv_text) {
  const auto rows = parse_csv(csv_text);
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    if (width.size() < r.size()) width.resize(r.size(), 0);
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  }
  std::ostringstream os;
  auto rule = [&] {
    for (std::size_t i = 0; i < width.size(); ++i) os << (i ? "-+-" : "") << std::string(width[i], '-');
    os << '\n';
  };
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (r + 1 == rows.size() && rows.size() > 2) rule();
    for (std::size_t i = 0; i < rows[r].size(); ++i) {
      const auto& cell = rows[r][i];
      const auto pad = std::string(width[i] - cell.size(), ' ');
      os << (i ? " | " : "") << (i == 0 ? cell + pad : pad + cell);
    }
    os << '\n';
    if (r == 0) rule();
  }
  return os.str();
}

}  // namespace soz
