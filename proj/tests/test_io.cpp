#include "mcbm/datagen.hpp"
#include "mcbm/errors.hpp"
#include "mcbm/io.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace mcbm;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("mcbm_test_io_" + name);
    std::filesystem::remove_all(p);
    return p;
}

}  // namespace

TEST(Sha256, KnownVectors) {
    EXPECT_EQ(io::sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(io::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(FormatDouble, RoundTrips) {
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.0}) {
        EXPECT_EQ(std::stod(io::format_double(v)), v);
    }
    EXPECT_EQ(io::format_double(0.5), "0.5");
}

TEST(Files, WriteCreatesDirectoriesAndReadFails) {
    const auto dir = temp_dir("files");
    io::write_file(dir / "a" / "b.txt", "hello");
    EXPECT_EQ(io::read_file(dir / "a" / "b.txt"), "hello");
    EXPECT_EQ(io::sha256_file(dir / "a" / "b.txt"), io::sha256_hex("hello"));
    EXPECT_THROW(io::read_file(dir / "nope.txt"), IoError);
    io::write_file(dir / "bad.json", "{not json");
    EXPECT_THROW(io::read_json(dir / "bad.json"), LoadError);
}

TEST(Dataset, CsvRoundTripIsLossless) {
    auto cfg = data::default_factor_config();
    cfg.n_samples = 50;
    const auto d = data::make_factor_dataset(cfg, 3);
    const auto dir = temp_dir("dataset");
    data::save_dataset(d, cfg, dir / "full.csv");
    const auto back = data::load_dataset(dir / "full.csv");
    EXPECT_EQ(back.n, d.n);
    EXPECT_EQ(back.x, d.x);
    EXPECT_EQ(back.y, d.y);
    EXPECT_EQ(back.factor_values, d.factor_values);
    EXPECT_EQ(back.factors.size(), d.factors.size());
    const auto side = io::read_json(data::sidecar_path(dir / "full.csv"));
    EXPECT_TRUE(side.contains("label_table"));
    EXPECT_EQ(data::dataset_to_csv(back), data::dataset_to_csv(d));
}

TEST(Dataset, MalformedRowNamesTheLine) {
    auto cfg = data::default_factor_config();
    cfg.n_samples = 5;
    const auto d = data::make_factor_dataset(cfg, 3);
    const auto dir = temp_dir("malformed");
    data::save_dataset(d, std::nullopt, dir / "d.csv");
    auto text = io::read_file(dir / "d.csv");
    // Corrupt the third line (second data row).
    std::size_t pos = 0;
    for (int i = 0; i < 2; ++i) pos = text.find('\n', pos) + 1;
    text.insert(pos, "oops");
    io::write_file(dir / "d.csv", text);
    try {
        data::load_dataset(dir / "d.csv");
        FAIL() << "expected LoadError";
    } catch (const LoadError& e) {
        EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
    }
}

TEST(Config, GeneratorJsonRoundTrip) {
    auto cfg = data::default_factor_config();
    cfg.noise_std = 0.125;
    const auto back = data::generative_config_from_json(data::to_json(cfg));
    EXPECT_EQ(data::to_json(back).dump(), data::to_json(cfg).dump());
}
