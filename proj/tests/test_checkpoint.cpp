#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "soz/checkpoint.hpp"
#include "soz/features.hpp"
#include "soz/io_util.hpp"

using namespace soz;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("soz_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

Checkpoint desk_checkpoint(std::uint64_t seed = 1) {
  return make_checkpoint(SozNet<float>(SozNetConfig::desk(), seed), {{"stage", "test"}});
}

}  // namespace

TEST(Checkpoint, StandardNetStoresTwentyEightArrays) {
  const auto c = make_checkpoint(SozNet<float>(SozNetConfig::standard(), 1));
  ASSERT_EQ(c.arrays.size(), 28u);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& l = c.config.conv_spec[i];
    EXPECT_EQ(c.arrays[2 * i].size(), static_cast<std::size_t>(l.out_channels * l.in_channels * l.kernel));
    EXPECT_EQ(c.arrays[2 * i + 1].size(), static_cast<std::size_t>(l.out_channels));
  }
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(c.arrays[20 + 2 * i].size(), static_cast<std::size_t>(c.config.fc_spec[i] * c.config.fc_spec[i + 1]));
    EXPECT_EQ(c.arrays[21 + 2 * i].size(), static_cast<std::size_t>(c.config.fc_spec[i + 1]));
  }
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const auto dir = scratch_dir("ckpt_roundtrip");
  const auto c = desk_checkpoint();
  c.save(dir / "a.sozn");
  const auto loaded = Checkpoint::load(dir / "a.sozn");
  loaded.save(dir / "b.sozn");
  EXPECT_EQ(read_file(dir / "a.sozn"), read_file(dir / "b.sozn"));
  EXPECT_EQ(loaded.fingerprint, c.fingerprint);
  EXPECT_EQ(loaded.config, c.config);
  EXPECT_EQ(loaded.arrays, c.arrays);
}

TEST(Checkpoint, LoadedNetReproducesPredictions) {
  SozNet<float> net(SozNetConfig::desk(), 8);
  const auto restored = load_net<float>(Checkpoint::parse(make_checkpoint(net).serialize()));
  Tensor<float> batch({2, 1, 750});
  for (Index i = 0; i < batch.size(); ++i) batch[i] = static_cast<float>(std::sin(0.01 * static_cast<double>(i)));
  EXPECT_EQ(net.predict(batch), restored.predict(batch));
}

TEST(Checkpoint, FingerprintCoversParametersAndConfig) {
  const auto a = desk_checkpoint(1);
  EXPECT_NE(a.fingerprint, desk_checkpoint(2).fingerprint);
  auto b = a;
  b.provenance["note"] = "descriptive only";
  EXPECT_EQ(b.compute_fingerprint(), a.fingerprint);
  b.config.fc_dropout = 0.4;
  EXPECT_NE(b.compute_fingerprint(), a.fingerprint);
}

TEST(Checkpoint, CorruptPayloadByteIsRejected) {
  auto bytes = desk_checkpoint().serialize();
  bytes[bytes.size() - 5] ^= 0x01;
  try {
    Checkpoint::parse(bytes);
    FAIL() << "expected IntegrityError";
  } catch (const TruncatedError&) {
    FAIL() << "wrong error kind";
  } catch (const IntegrityError&) {
  }
}

TEST(Checkpoint, TruncatedFileIsRejected) {
  const auto bytes = desk_checkpoint().serialize();
  for (std::size_t cut : {std::size_t{3}, std::size_t{20}, bytes.size() - 1}) {
    EXPECT_THROW(Checkpoint::parse(bytes.substr(0, cut)), TruncatedError) << cut;
  }
}

TEST(Checkpoint, UnknownVersionIsRejected) {
  auto bytes = desk_checkpoint().serialize();
  const std::uint32_t v = 99;
  std::memcpy(bytes.data() + 5, &v, sizeof v);
  EXPECT_THROW(Checkpoint::parse(bytes), VersionError);
}

TEST(Checkpoint, BadMagicIsRejected) {
  auto bytes = desk_checkpoint().serialize();
  bytes[0] = 'X';
  EXPECT_THROW(Checkpoint::parse(bytes), IntegrityError);
}

TEST(Checkpoint, TrailingBytesAreRejected) {
  EXPECT_THROW(Checkpoint::parse(desk_checkpoint().serialize() + "x"), IntegrityError);
}

TEST(FeatureSet, RoundTripPreservesRowsExactly) {
  const auto dir = scratch_dir("features");
  FeatureSet f;
  f.patient_id = "P07";
  f.model_fingerprint = std::string(64, 'a');
  f.rows = FeatureMatrix::Random(5, 3);
  f.save(dir / "f.sozf");
  const auto g = FeatureSet::load(dir / "f.sozf");
  EXPECT_EQ(g.patient_id, f.patient_id);
  EXPECT_EQ(g.model_fingerprint, f.model_fingerprint);
  EXPECT_EQ(g.rows, f.rows);
  EXPECT_EQ(g.content_fingerprint(), f.content_fingerprint());
  EXPECT_EQ(g.serialize(), f.serialize());
}

TEST(FeatureSet, TruncationAndVersionAreRejected) {
  FeatureSet f;
  f.patient_id = "P01";
  f.rows = FeatureMatrix::Zero(2, 2);
  auto bytes = f.serialize();
  EXPECT_THROW(FeatureSet::parse(bytes.substr(0, bytes.size() - 8)), TruncatedError);
  const std::uint32_t v = 7;
  std::memcpy(bytes.data() + 5, &v, sizeof v);
  EXPECT_THROW(FeatureSet::parse(bytes), VersionError);
}

TEST(FeatureSet, ExtractionMatchesNetAndIsRepeatable) {
  SozNet<float> net(SozNetConfig::desk(), 3);
  RowMatrixX<float> windows = RowMatrixX<float>::Random(7, 750);
  const auto rows = extract_feature_rows(net, windows, 3);
  EXPECT_EQ(rows.rows(), 7);
  EXPECT_EQ(rows.cols(), net.config().flatten_width());
  EXPECT_EQ(rows, extract_feature_rows(net, windows, 512));
  Tensor<float> batch({7, 1, 750});
  batch.data() = Eigen::Map<const VectorX<float>>(windows.data(), windows.size());
  EXPECT_EQ(rows, net.extract_features(batch).cast<double>());
}
