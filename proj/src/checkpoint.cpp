#include "mcbm/checkpoint.hpp"

#include "mcbm/errors.hpp"

#include <array>
#include <bit>
#include <cstring>

namespace mcbm::diff {

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int decode_char(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 3 <= bytes.size(); i += 3) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += kAlphabet[(v >> 6) & 63];
        out += kAlphabet[v & 63];
    }
    const std::size_t rest = bytes.size() - i;
    if (rest == 1) {
        const std::uint32_t v = bytes[i] << 16;
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += "==";
    } else if (rest == 2) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += kAlphabet[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    if (text.size() % 4 != 0) {
        throw LoadError("base64: length is not a multiple of 4");
    }
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        std::array<int, 4> q{};
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = text[i + k];
            if (c == '=' && i + 4 == text.size() && k >= 2) {
                q[k] = 0;
                ++pad;
            } else {
                q[k] = decode_char(c);
                if (q[k] < 0 || pad > 0) {
                    throw LoadError("base64: invalid character in payload");
                }
            }
        }
        const std::uint32_t v = (q[0] << 18) | (q[1] << 12) | (q[2] << 6) | q[3];
        out.push_back(static_cast<std::uint8_t>(v >> 16));
        if (pad < 2) out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
        if (pad < 1) out.push_back(static_cast<std::uint8_t>(v & 0xff));
    }
    return out;
}

std::string encode_f64(std::span<const double> values) {
    std::vector<std::uint8_t> bytes(values.size() * 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto bits = std::bit_cast<std::uint64_t>(values[i]);
        for (int b = 0; b < 8; ++b) {
            bytes[i * 8 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
        }
    }
    return base64_encode(bytes);
}

std::vector<double> decode_f64(const std::string& text) {
    const auto bytes = base64_decode(text);
    if (bytes.size() % 8 != 0) {
        throw LoadError("f64 payload size is not a multiple of 8 bytes");
    }
    std::vector<double> out(bytes.size() / 8);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) {
            bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
        }
        out[i] = std::bit_cast<double>(bits);
    }
    return out;
}

nlohmann::json parameters_to_json(const std::vector<Parameter>& params, const CheckpointHeader& header,
                                  const Optimizer* optimizer) {
    nlohmann::json doc;
    doc["header"] = {{"format_version", header.format_version},
                     {"master_seed", header.master_seed},
                     {"step_count", optimizer ? optimizer->step_count() : header.step_count}};
    nlohmann::json ps = nlohmann::json::object();
    for (const auto& p : params) {
        nlohmann::json entry;
        entry["shape"] = p.tensor.shape();
        entry["values"] = encode_f64(p.tensor.values());
        nlohmann::json moments = nlohmann::json::object();
        if (optimizer) {
            auto it = optimizer->moments().find(p.name);
            if (it != optimizer->moments().end()) {
                moments["first"] = encode_f64(it->second.first);
                moments["second"] = encode_f64(it->second.second);
            }
        }
        entry["moments"] = moments;
        ps[p.name] = entry;
    }
    doc["params"] = ps;
    return doc;
}

CheckpointHeader parameters_from_json(const nlohmann::json& doc, std::vector<Parameter>& params,
                                      std::map<std::string, MomentBuffers>* moments) {
    CheckpointHeader h;
    try {
        const auto& hj = doc.at("header");
        h.format_version = hj.at("format_version").get<int>();
        if (h.format_version != kCheckpointFormatVersion) {
            throw LoadError("checkpoint format_version " + std::to_string(h.format_version) +
                            " is not supported (this build reads version " +
                            std::to_string(kCheckpointFormatVersion) + ")");
        }
        h.master_seed = hj.at("master_seed").get<std::uint64_t>();
        h.step_count = hj.at("step_count").get<std::uint64_t>();
        const auto& ps = doc.at("params");
        if (ps.size() != params.size()) {
            throw LoadError("checkpoint holds " + std::to_string(ps.size()) + " parameters, model expects " +
                            std::to_string(params.size()));
        }
        for (auto& p : params) {
            if (!ps.contains(p.name)) {
                throw LoadError("checkpoint is missing parameter " + p.name);
            }
            const auto& entry = ps.at(p.name);
            const auto shape = entry.at("shape").get<Shape>();
            if (shape != p.tensor.shape()) {
                throw LoadError("parameter " + p.name + " has shape " + to_string(shape) + ", expected " +
                                to_string(p.tensor.shape()));
            }
            const auto values = decode_f64(entry.at("values").get<std::string>());
            if (values.size() != p.tensor.numel()) {
                throw LoadError("parameter " + p.name + " payload has the wrong length");
            }
            std::copy(values.begin(), values.end(), p.tensor.mutable_values().begin());
            if (moments && entry.contains("moments") && entry.at("moments").contains("first")) {
                MomentBuffers mb;
                mb.first = decode_f64(entry.at("moments").at("first").get<std::string>());
                mb.second = decode_f64(entry.at("moments").at("second").get<std::string>());
                (*moments)[p.name] = std::move(mb);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("corrupt checkpoint: ") + e.what());
    }
    return h;
}

}  // namespace mcbm::diff
