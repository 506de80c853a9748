#include "soz/cohort.hpp"

#include <bit>
#include <set>

#include "soz/errors.hpp"
#include "soz/hash.hpp"
#include "soz/io_util.hpp"

namespace soz {

namespace {

LabelReadObserver& label_observer() {
  thread_local LabelReadObserver observer;
  return observer;
}

}  // namespace

const std::vector<int>& PatientRecord::labels() const {
  if (const auto& obs = label_observer()) obs(patient_id);
  return labels_;
}

void PatientRecord::set_labels(std::vector<int> labels) {
  std::array<Index, 2> counts{0, 0};
  for (int y : labels) {
    if (y != 0 && y != 1) throw ConfigError("patient " + patient_id + ": labels must be 0 or 1, got " + std::to_string(y));
    ++counts[static_cast<std::size_t>(y)];
  }
  labels_ = std::move(labels);
  counts_ = counts;
}

bool operator==(const PatientRecord& a, const PatientRecord& b) {
  return a.patient_id == b.patient_id && a.sampling_rate_hz == b.sampling_rate_hz &&
         a.effective_rate_hz == b.effective_rate_hz && a.seed == b.seed && a.metadata == b.metadata &&
         a.windows.rows() == b.windows.rows() && a.windows.cols() == b.windows.cols() && a.windows == b.windows &&
         a.labels_ == b.labels_;
}

ScopedLabelObserver::ScopedLabelObserver(LabelReadObserver observer) : previous_(std::move(label_observer())) {
  label_observer() = std::move(observer);
}

ScopedLabelObserver::~ScopedLabelObserver() { label_observer() = std::move(previous_); }

const PatientRecord& Cohort::at(const std::string& patient_id) const {
  const auto i = index_of(patient_id);
  if (i < 0) throw ConfigError("cohort has no patient " + patient_id);
  return patients[static_cast<std::size_t>(i)];
}

std::ptrdiff_t Cohort::index_of(const std::string& patient_id) const {
  for (std::size_t i = 0; i < patients.size(); ++i) {
    if (patients[i].patient_id == patient_id) return static_cast<std::ptrdiff_t>(i);
  }
  return -1;
}

void Cohort::validate() const {
  std::set<std::string> ids;
  for (const auto& p : patients) {
    if (!ids.insert(p.patient_id).second) throw IntegrityError("cohort: duplicate patient id " + p.patient_id);
    if (p.window_length() != window_length()) {
      throw IntegrityError("cohort: patient " + p.patient_id + " has window length " + std::to_string(p.window_length()) +
                           ", expected " + std::to_string(window_length()));
    }
  }
}

std::string Cohort::fingerprint() const {
  Sha256 h;
  for (const auto& p : patients) {
    h.update(p.patient_id);
    h.update(nlohmann::json(run_length_encode(p.labels_)).dump());
    h.update(std::as_bytes(std::span(p.windows.data(), static_cast<std::size_t>(p.windows.size()))));
  }
  return h.hex_digest();
}

std::vector<std::array<int, 2>> run_length_encode(const std::vector<int>& labels) {
  std::vector<std::array<int, 2>> runs;
  for (int y : labels) {
    if (!runs.empty() && runs.back()[0] == y) {
      ++runs.back()[1];
    } else {
      runs.push_back({y, 1});
    }
  }
  return runs;
}

std::vector<int> run_length_decode(const std::vector<std::array<int, 2>>& runs) {
  std::vector<int> labels;
  for (const auto& [value, count] : runs) {
    if (count < 0) throw IntegrityError("labels: negative run length");
    labels.insert(labels.end(), static_cast<std::size_t>(count), value);
  }
  return labels;
}

void save_cohort(const Cohort& cohort, const std::filesystem::path& dir, const nlohmann::json& extra) {
  static_assert(std::endian::native == std::endian::little, "payload I/O assumes a little-endian host");
  cohort.validate();
  std::filesystem::create_directories(dir);
  nlohmann::json patients = nlohmann::json::array();
  for (const auto& p : cohort.patients) {
    const auto counts = p.class_counts();
    patients.push_back({{"id", p.patient_id},
                        {"sampling_rate_hz", p.sampling_rate_hz},
                        {"effective_rate_hz", p.effective_rate_hz},
                        {"n_windows", p.window_count()},
                        {"n_non_soz", counts[0]},
                        {"n_soz", counts[1]},
                        {"seed", p.seed},
                        {"labels_rle", run_length_encode(p.labels())},
                        {"metadata", p.metadata},
                        {"payload", p.patient_id + ".f32"}});
    std::string bytes(reinterpret_cast<const char*>(p.windows.data()),
                      static_cast<std::size_t>(p.windows.size()) * sizeof(float));
    write_file(dir / (p.patient_id + ".f32"), bytes);
  }
  nlohmann::json manifest = {{"version", kCohortFormatVersion},
                             {"window_len", cohort.window_length()},
                             {"n_patients", cohort.size()},
                             {"patients", patients}};
  if (!extra.is_null()) manifest["generator"] = extra;
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Cohort load_cohort(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) throw IoError("cohort: missing manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("cohort: malformed manifest: ") + e.what());
  }
  Cohort cohort;
  try {
    const int version = manifest.at("version").get<int>();
    if (version != kCohortFormatVersion) throw VersionError("cohort: unknown manifest version " + std::to_string(version));
    const auto window_len = manifest.at("window_len").get<Index>();
    for (const auto& entry : manifest.at("patients")) {
      PatientRecord p;
      p.patient_id = entry.at("id").get<std::string>();
      p.sampling_rate_hz = entry.at("sampling_rate_hz").get<int>();
      p.effective_rate_hz = entry.at("effective_rate_hz").get<int>();
      p.seed = entry.at("seed").get<std::uint64_t>();
      p.metadata = entry.value("metadata", nlohmann::json::object());
      const auto n = entry.at("n_windows").get<Index>();
      auto labels = run_length_decode(entry.at("labels_rle").get<std::vector<std::array<int, 2>>>());
      if (static_cast<Index>(labels.size()) != n) {
        throw IntegrityError("cohort: patient " + p.patient_id + " declares " + std::to_string(n) + " windows but " +
                             std::to_string(labels.size()) + " labels");
      }
      const std::string bytes = read_file(dir / entry.at("payload").get<std::string>());
      const auto expected = static_cast<std::size_t>(n * window_len) * sizeof(float);
      if (bytes.size() != expected) {
        throw IntegrityError("cohort: payload for " + p.patient_id + " holds " + std::to_string(bytes.size()) +
                             " bytes, manifest implies " + std::to_string(expected));
      }
      p.windows.resize(n, window_len);
      std::memcpy(p.windows.data(), bytes.data(), bytes.size());
      p.set_labels(std::move(labels));
      const auto counts = p.class_counts();
      if (counts[0] != entry.at("n_non_soz").get<Index>() || counts[1] != entry.at("n_soz").get<Index>()) {
        throw IntegrityError("cohort: class counts for " + p.patient_id + " disagree with labels");
      }
      cohort.patients.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("cohort: malformed manifest: ") + e.what());
  }
  cohort.validate();
  return cohort;
}

}  // namespace soz
