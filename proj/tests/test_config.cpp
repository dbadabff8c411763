#include "dspe/config.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace dspe;
using nlohmann::json;

TEST(Config, EmptyDocumentGivesDefaults)
{
    const auto c = config_from_json(json::object());
    EXPECT_EQ(c.sim.seed, 1u);
    EXPECT_EQ(c.trace.length, 64);
    EXPECT_EQ(c.sim.dims.d_model, 64);
    EXPECT_EQ(c.sim.dims.d_ff, 128);
    EXPECT_EQ(c.sim.arch.weight_buffer, 48u * 1024u);
    EXPECT_EQ(c.sim.mips.th.t_zero, 1);
    EXPECT_EQ(c.sim.mips.th.s_th, 4);
    EXPECT_FALSE(c.sim.features.mips);
    EXPECT_EQ(c.trace.seed, c.sim.seed);
}

TEST(Config, ReadsNestedSections)
{
    const auto c = config_from_json(json::parse(R"({
        "seed": 9,
        "trace": {"length": 10, "duplicate_rate": 0.5},
        "features": {"mips": true, "dappm": true},
        "mips": {"t_zero": 0, "integrity_gate": true},
        "mblm": {"t_match": 2},
        "arch": {"weight_buffer_bytes": 1024}
    })"));
    EXPECT_EQ(c.sim.seed, 9u);
    EXPECT_EQ(c.trace.seed, 9u);
    EXPECT_EQ(c.trace.length, 10);
    EXPECT_DOUBLE_EQ(c.trace.duplicate_rate, 0.5);
    EXPECT_TRUE(c.sim.features.mips);
    EXPECT_FALSE(c.sim.features.mblm);
    EXPECT_TRUE(c.sim.mips.th.integrity_gate);
    EXPECT_EQ(c.sim.mblm.t_match, 2);
    EXPECT_EQ(c.sim.arch.weight_buffer, 1024u);
}

TEST(Config, UnknownKeysRejected)
{
    EXPECT_THROW(config_from_json(json::parse(R"({"sed": 1})")), ConfigError);
    EXPECT_THROW(config_from_json(json::parse(R"({"mips": {"tzero": 1}})")), ConfigError);
    try {
        config_from_json(json::parse(R"({"trace": {"lenght": 3}})"));
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("trace.lenght"), std::string::npos);
    }
}

TEST(Config, BadValuesRejected)
{
    EXPECT_THROW(config_from_json(json::parse(R"({"version": 2})")), ConfigError);
    EXPECT_THROW(config_from_json(json::parse(R"({"trace": {"length": "long"}})")), ConfigError);
    EXPECT_THROW(config_from_json(json::parse(R"({"trace": {"rho": 1.5}})")), ConfigError);
    EXPECT_THROW(config_from_json(json::parse(R"({"model": {"heads": 3}})")), ConfigError);
    EXPECT_THROW(config_from_json(json::parse(R"({"mips": {"d_low": 30}})")), ConfigError);
    EXPECT_THROW(config_from_json(json::parse(R"({"mblm": {"bn_model": "/nonexistent.json"}})")), ConfigError);
    EXPECT_THROW(config_from_json(json::parse("[1, 2]")), ConfigError);
}

TEST(Config, RoundTripPreservesHash)
{
    auto c = config_from_json(json::parse(R"({"seed": 4, "features": {"mblm": true}, "mips": {"s_th": 6}})"));
    const auto back = config_from_json(json::parse(config_to_json(c).dump()));
    EXPECT_EQ(config_hash(back), config_hash(c));
    EXPECT_EQ(config_to_json(back).dump(), config_to_json(c).dump());
}

TEST(Config, HashIgnoresOutputDirOnly)
{
    RunConfig a, b;
    b.output_dir = "/elsewhere";
    EXPECT_EQ(config_hash(a), config_hash(b));
    b.sim.seed = 2;
    EXPECT_NE(config_hash(a), config_hash(b));
    EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Config, ExactPreset)
{
    RunConfig c;
    c.apply_exact_preset();
    EXPECT_EQ(c.sim.mips.th.t_zero, 0);
    EXPECT_EQ(c.sim.mips.th.s_th, 0);
    EXPECT_TRUE(c.sim.mips.th.integrity_gate);
    EXPECT_EQ(c.sim.mblm.t_match, 0);
}

TEST(Config, SetPathCreatesSections)
{
    json j = json::object();
    set_path(j, "trace.duplicate_rate", 0.25);
    set_path(j, "seed", 3);
    EXPECT_DOUBLE_EQ(j["trace"]["duplicate_rate"].get<double>(), 0.25);
    const auto c = config_from_json(j);
    EXPECT_DOUBLE_EQ(c.trace.duplicate_rate, 0.25);
    EXPECT_EQ(c.sim.seed, 3u);
}

TEST(Config, LoadResolvesBnModelRelativeToFile)
{
    const auto dir = std::filesystem::temp_directory_path() / "dspe_cfg_test";
    std::filesystem::create_directories(dir);
    {
        std::ofstream f(dir / "bn.json");
        f << booth::default_bn_model().to_json().dump();
    }
    {
        std::ofstream f(dir / "cfg.json");
        f << R"({"mblm": {"bn_model": "bn.json"}})";
    }
    const auto c = load_config((dir / "cfg.json").string());
    EXPECT_EQ(c.bn_model_path, "bn.json");
    EXPECT_EQ(c.sim.mblm.bn.prior, booth::default_bn_model().prior);
    EXPECT_THROW(load_config((dir / "missing.json").string()), ConfigError);
    std::filesystem::remove_all(dir);
}
