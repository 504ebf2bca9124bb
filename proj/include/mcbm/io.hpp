#pragma once

#include "mcbm/datagen.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>

namespace mcbm::io {

// Whole-file helpers; failures raise IoError naming the path.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);
nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

// Lowercase hex SHA-256 of a byte string / file contents.
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

// Shortest text that parses back to the same double.
std::string format_double(double v);

}  // namespace mcbm::io

namespace mcbm::data {

nlohmann::json to_json(const FactorSpec& f);
FactorSpec factor_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GenerativeConfig& c);
GenerativeConfig generative_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LabelTable& t);

// CSV with columns x0..x{D-1}, y, then one column per factor; values are
// printed with 17 significant digits so the round trip is lossless.
std::string dataset_to_csv(const Dataset& d);
// Sidecar: factors, n_classes, input_dim, split and optional extras
// (generator config, label table).
nlohmann::json dataset_sidecar(const Dataset& d, const std::optional<GenerativeConfig>& config);

void save_dataset(const Dataset& d, const std::optional<GenerativeConfig>& config,
                  const std::filesystem::path& csv_path);
// Reads `csv_path` and its sidecar `<csv_path>.json`.
Dataset load_dataset(const std::filesystem::path& csv_path);

std::filesystem::path sidecar_path(const std::filesystem::path& csv_path);

}  // namespace mcbm::data
