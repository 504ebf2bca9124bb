#include "mcbm/io.hpp"

#include "mcbm/errors.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <fstream>
#include <sstream>

namespace mcbm::io {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "' for reading");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) {
        throw IoError("read failed for '" + path.string() + "'");
    }
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) {
            throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) {
        throw IoError("write failed for '" + path.string() + "'");
    }
}

nlohmann::json read_json(const std::filesystem::path& path) {
    const auto text = read_file(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw LoadError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
    write_file(path, doc.dump(2) + "\n");
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 computation failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

std::string format_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

}  // namespace mcbm::io

namespace mcbm::data {

nlohmann::json to_json(const FactorSpec& f) {
    return {{"name", f.name},
            {"kind", to_string(f.kind)},
            {"classes", f.classes},
            {"levels", f.levels},
            {"role", to_string(f.role)}};
}

FactorSpec factor_from_json(const nlohmann::json& j) {
    FactorSpec f;
    f.name = j.at("name").get<std::string>();
    f.kind = factor_kind_from_string(j.at("kind").get<std::string>());
    f.classes = j.value("classes", 2);
    f.levels = j.value("levels", 2);
    f.role = factor_role_from_string(j.at("role").get<std::string>());
    return f;
}

nlohmann::json to_json(const GenerativeConfig& c) {
    nlohmann::json factors = nlohmann::json::array();
    for (const auto& f : c.factors) factors.push_back(to_json(f));
    return {{"factors", factors},       {"input_dim", c.input_dim},       {"n_classes", c.n_classes},
            {"decoder_hidden", c.decoder_hidden}, {"decoder_seed", c.decoder_seed}, {"label_seed", c.label_seed},
            {"n_samples", c.n_samples}, {"noise_std", c.noise_std}};
}

GenerativeConfig generative_config_from_json(const nlohmann::json& j) {
    GenerativeConfig c;
    c.factors.clear();
    for (const auto& f : j.at("factors")) c.factors.push_back(factor_from_json(f));
    c.input_dim = j.at("input_dim").get<int>();
    c.n_classes = j.at("n_classes").get<int>();
    c.decoder_hidden = j.at("decoder_hidden").get<int>();
    c.decoder_seed = j.at("decoder_seed").get<std::uint64_t>();
    c.label_seed = j.at("label_seed").get<std::uint64_t>();
    c.n_samples = j.at("n_samples").get<int>();
    c.noise_std = j.at("noise_std").get<double>();
    return c;
}

nlohmann::json to_json(const LabelTable& t) {
    return {{"factor_indices", t.factor_indices},
            {"cardinalities", t.cardinalities},
            {"labels", t.labels},
            {"n_classes", t.n_classes}};
}

std::string dataset_to_csv(const Dataset& d) {
    d.validate();
    std::string out;
    for (std::size_t j = 0; j < d.input_dim; ++j) out += "x" + std::to_string(j) + ",";
    out += "y";
    for (const auto& f : d.factors) out += "," + f.name;
    out += "\n";
    char buf[40];
    for (std::size_t i = 0; i < d.n; ++i) {
        for (std::size_t j = 0; j < d.input_dim; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g,", d.x[i * d.input_dim + j]);
            out += buf;
        }
        out += std::to_string(d.y[i]);
        for (std::size_t f = 0; f < d.factors.size(); ++f) {
            std::snprintf(buf, sizeof(buf), ",%.17g", d.factor_values[f][i]);
            out += buf;
        }
        out += "\n";
    }
    return out;
}

nlohmann::json dataset_sidecar(const Dataset& d, const std::optional<GenerativeConfig>& config) {
    nlohmann::json factors = nlohmann::json::array();
    for (const auto& f : d.factors) factors.push_back(to_json(f));
    nlohmann::json j{{"n", d.n},
                     {"input_dim", d.input_dim},
                     {"n_classes", d.n_classes},
                     {"split", to_string(d.split)},
                     {"factors", factors},
                     {"warnings", d.warnings}};
    if (config) {
        j["generator"] = to_json(*config);
        j["label_table"] = to_json(build_label_table(*config));
    }
    return j;
}

std::filesystem::path sidecar_path(const std::filesystem::path& csv_path) {
    return std::filesystem::path(csv_path.string() + ".json");
}

void save_dataset(const Dataset& d, const std::optional<GenerativeConfig>& config,
                  const std::filesystem::path& csv_path) {
    io::write_file(csv_path, dataset_to_csv(d));
    io::write_json(sidecar_path(csv_path), dataset_sidecar(d, config));
}

namespace {

double parse_double(std::string_view s, const std::filesystem::path& path, std::size_t line) {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
        throw LoadError(path.string() + ":" + std::to_string(line) + ": bad number '" + std::string(s) + "'");
    }
    return v;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& csv_path) {
    const auto side = io::read_json(sidecar_path(csv_path));
    Dataset d;
    try {
        d.input_dim = side.at("input_dim").get<std::size_t>();
        d.n_classes = side.at("n_classes").get<int>();
        d.split = split_tag_from_string(side.at("split").get<std::string>());
        for (const auto& f : side.at("factors")) d.factors.push_back(factor_from_json(f));
        d.warnings = side.value("warnings", std::vector<std::string>{});
    } catch (const nlohmann::json::exception& e) {
        throw LoadError("malformed dataset sidecar: " + std::string(e.what()));
    }
    d.factor_values.assign(d.factors.size(), {});
    const std::string text = io::read_file(csv_path);
    const std::size_t expected_cols = d.input_dim + 1 + d.factors.size();
    std::size_t pos = text.find('\n');
    if (pos == std::string::npos) {
        throw LoadError(csv_path.string() + ": missing header row");
    }
    std::size_t line = 1;
    ++pos;
    std::vector<std::string_view> cells;
    while (pos < text.size()) {
        ++line;
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        const std::string_view row(text.data() + pos, end - pos);
        pos = end + 1;
        if (row.empty()) continue;
        cells.clear();
        std::size_t s = 0;
        while (true) {
            const std::size_t c = row.find(',', s);
            cells.push_back(row.substr(s, c == std::string_view::npos ? std::string_view::npos : c - s));
            if (c == std::string_view::npos) break;
            s = c + 1;
        }
        if (cells.size() != expected_cols) {
            throw LoadError(csv_path.string() + ":" + std::to_string(line) + ": expected " +
                            std::to_string(expected_cols) + " columns, found " + std::to_string(cells.size()));
        }
        for (std::size_t j = 0; j < d.input_dim; ++j) d.x.push_back(parse_double(cells[j], csv_path, line));
        d.y.push_back(static_cast<int>(parse_double(cells[d.input_dim], csv_path, line)));
        for (std::size_t f = 0; f < d.factors.size(); ++f) {
            d.factor_values[f].push_back(parse_double(cells[d.input_dim + 1 + f], csv_path, line));
        }
    }
    d.n = d.y.size();
    d.validate();
    return d;
}

}  // namespace mcbm::data
