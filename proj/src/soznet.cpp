#include "soz/soznet.hpp"

#include "soz/errors.hpp"

namespace soz {

SozNetConfig SozNetConfig::standard() {
  SozNetConfig c;
  c.input_length = 3000;
  c.conv_spec = {{1, 32, 3, 1},    {32, 32, 3, 1},   {32, 64, 3, 1},   {64, 64, 3, 1},   {64, 128, 3, 1},
                 {128, 128, 3, 1}, {128, 256, 3, 1}, {256, 256, 3, 1}, {256, 256, 3, 1}, {256, 256, 3, 1}};
  c.fc_spec = {512, 256, 128, 64, 2};
  return c;
}

SozNetConfig SozNetConfig::desk() {
  SozNetConfig c;
  c.input_length = 750;
  c.conv_spec = {{1, 4, 3, 1},   {4, 4, 3, 1},   {4, 8, 3, 1},   {8, 8, 3, 1},
                 {8, 16, 3, 1},  {16, 16, 3, 1}, {16, 32, 3, 1}, {32, 32, 3, 1}};
  c.fc_spec = {64, 256, 128, 64, 2};
  // With so few channels, dropout after each pool makes eval-mode outputs drift
  // far from training-mode ones, even at 0.1.
  c.conv_dropout = 0.0;
  return c;
}

std::vector<Index> SozNetConfig::block_lengths() const {
  std::vector<Index> lengths{input_length};
  Index length = input_length;
  for (Index blk = 0; blk < block_count(); ++blk) {
    for (Index j = 0; j < convs_per_block && length > 0; ++j) {
      const auto& layer = conv_spec[static_cast<std::size_t>(blk * convs_per_block + j)];
      length = (length + 2 * padding < layer.kernel) ? 0 : conv_output_length(length, layer.kernel, layer.stride, padding);
    }
    length = (length < pool_kernel) ? 0 : pool_output_length(length, pool_kernel, pool_stride);
    lengths.push_back(length);
  }
  return lengths;
}

Index SozNetConfig::flatten_width() const {
  if (conv_spec.empty()) return 0;
  return conv_spec.back().out_channels * block_lengths().back();
}

void SozNetConfig::validate() const {
  if (input_length < 1) throw ConfigError("soznet config: input_length must be positive");
  if (conv_spec.empty()) throw ConfigError("soznet config: no convolution layers");
  if (convs_per_block < 1 || static_cast<Index>(conv_spec.size()) % convs_per_block != 0) {
    throw ConfigError("soznet config: " + std::to_string(conv_spec.size()) + " conv layers do not split into blocks of " +
                      std::to_string(convs_per_block));
  }
  for (std::size_t i = 0; i < conv_spec.size(); ++i) {
    const auto& l = conv_spec[i];
    if (l.in_channels < 1 || l.out_channels < 1 || l.kernel < 1 || l.stride < 1) {
      throw ConfigError("soznet config: conv layer " + std::to_string(i) + " has a non-positive extent");
    }
    if (i > 0 && l.in_channels != conv_spec[i - 1].out_channels) {
      throw ConfigError("soznet config: conv layer " + std::to_string(i) + " expects " + std::to_string(l.in_channels) +
                        " channels but layer " + std::to_string(i - 1) + " produces " +
                        std::to_string(conv_spec[i - 1].out_channels));
    }
  }
  if (pool_kernel < 1 || pool_stride < 1 || padding < 0) throw ConfigError("soznet config: invalid pool/padding");
  if (!(conv_dropout >= 0 && conv_dropout < 1) || !(fc_dropout >= 0 && fc_dropout < 1)) {
    throw ConfigError("soznet config: dropout probabilities must lie in [0, 1)");
  }
  if (fc_spec.size() < 2) throw ConfigError("soznet config: fc_spec needs at least input and output widths");
  for (Index w : fc_spec) {
    if (w < 1) throw ConfigError("soznet config: fc widths must be positive");
  }
  const Index flat = flatten_width();
  if (flat != fc_spec.front()) {
    throw ConfigError("soznet config: conv stack flattens to width " + std::to_string(flat) + " for input length " +
                      std::to_string(input_length) + " but the first linear layer expects " +
                      std::to_string(fc_spec.front()));
  }
}

void to_json(nlohmann::json& j, const SozNetConfig& c) {
  nlohmann::json convs = nlohmann::json::array();
  for (const auto& l : c.conv_spec) convs.push_back({l.in_channels, l.out_channels, l.kernel, l.stride});
  j = nlohmann::json{{"input_length", c.input_length},  {"conv_spec", convs},
                     {"convs_per_block", c.convs_per_block}, {"block_pool", {c.pool_kernel, c.pool_stride}},
                     {"conv_dropout", c.conv_dropout},   {"fc_spec", c.fc_spec},
                     {"fc_dropout", c.fc_dropout},       {"padding", c.padding}};
}

void from_json(const nlohmann::json& j, SozNetConfig& c) {
  try {
    c.input_length = j.at("input_length").get<Index>();
    c.conv_spec.clear();
    for (const auto& l : j.at("conv_spec")) {
      c.conv_spec.push_back({l.at(0).get<Index>(), l.at(1).get<Index>(), l.at(2).get<Index>(), l.at(3).get<Index>()});
    }
    c.convs_per_block = j.at("convs_per_block").get<Index>();
    c.pool_kernel = j.at("block_pool").at(0).get<Index>();
    c.pool_stride = j.at("block_pool").at(1).get<Index>();
    c.conv_dropout = j.at("conv_dropout").get<double>();
    c.fc_spec = j.at("fc_spec").get<std::vector<Index>>();
    c.fc_dropout = j.at("fc_dropout").get<double>();
    c.padding = j.at("padding").get<Index>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("soznet config: ") + e.what());
  }
}

std::string canonical_json(const SozNetConfig& c) { return nlohmann::json(c).dump(); }

}  // namespace soz
