#pragma once

#include "mcbm/optim.hpp"

#include <json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mcbm::diff {

inline constexpr int kCheckpointFormatVersion = 1;

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

// Little-endian f64 payloads.
std::string encode_f64(std::span<const double> values);
std::vector<double> decode_f64(const std::string& text);

struct CheckpointHeader {
    int format_version = kCheckpointFormatVersion;
    std::uint64_t master_seed = 0;
    std::uint64_t step_count = 0;
};

// {"header": {...}, "params": {name: {"shape", "values", "moments"}}}
nlohmann::json parameters_to_json(const std::vector<Parameter>& params, const CheckpointHeader& header,
                                  const Optimizer* optimizer = nullptr);

// Overwrites the values of `params` from the JSON document. Every parameter
// must be present with a matching shape. Throws LoadError otherwise.
CheckpointHeader parameters_from_json(const nlohmann::json& doc, std::vector<Parameter>& params,
                                      std::map<std::string, MomentBuffers>* moments = nullptr);

}  // namespace mcbm::diff
