#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "dsegnet/config.hpp"
#include "dsegnet/error.hpp"

namespace dseg {
namespace {

namespace fs = std::filesystem;

fs::path write_file(const std::string& name, const std::string& text) {
    const auto p = fs::temp_directory_path() / name;
    std::ofstream(p, std::ios::binary) << text;
    return p;
}

TEST(KeyValues, CommentsBlanksAndOrder) {
    const auto kv = parse_key_values("# top\n\nlr = 0.5  # trailing\n  batch_size=4\n", "t");
    ASSERT_EQ(kv.size(), 2u);
    EXPECT_EQ(kv[0], (std::pair<std::string, std::string>{"lr", "0.5"}));
    EXPECT_EQ(kv[1], (std::pair<std::string, std::string>{"batch_size", "4"}));
}

TEST(KeyValues, MissingEqualsNamesLine) {
    try {
        parse_key_values("lr = 1\nnonsense\n", "run.cfg");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos) << e.what();
    }
}

TEST(RunConfig, PresetDefaults) {
    const auto desk = RunConfig::for_preset("desk"), paper = RunConfig::for_preset("paper");
    EXPECT_EQ(desk.model.input_h, 64u);
    EXPECT_EQ(paper.model.input_h, 256u);
    EXPECT_DOUBLE_EQ(paper.train.lr, 1e-4);
    EXPECT_EQ(paper.train.batch_size, 16u);
    EXPECT_THROW(RunConfig::for_preset("huge"), ConfigError);
}

TEST(RunConfig, UnknownKeyAndBadValueNameTheKey) {
    RunConfig c;
    try {
        c.set("learning_rate", "1");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
    }
    EXPECT_THROW(c.set("lr", "fast"), ConfigError);
    EXPECT_THROW(c.set("batch_size", "-3"), ConfigError);
    EXPECT_THROW(c.set("use_dcp", "maybe"), ConfigError);
    EXPECT_THROW(c.set("encoder_widths", "1,2,3"), ConfigError);
}

TEST(RunConfig, ResolvedRoundTripsEveryKey) {
    RunConfig a = RunConfig::for_preset("desk");
    a.set("lr", "0.00031");
    a.set("use_cbam", "false");
    a.set("decoder_widths", "32,16,16,8");
    a.set("miou_mode", "mean_of_classes");
    a.set("block_style", "bottleneck");
    const auto p = write_file("dseg_resolved.cfg", a.resolved());
    RunConfig b = RunConfig::for_preset(preset_in_file(p.string(), "paper"));
    b.apply_file(p.string());
    EXPECT_EQ(a.resolved(), b.resolved());
    for (const auto& k : RunConfig::keys()) EXPECT_EQ(a.get(k), b.get(k)) << k;
    EXPECT_DOUBLE_EQ(b.train.lr, 0.00031);
    fs::remove(p);
}

TEST(RunConfig, FileOverridesPresetAndLaterSetWins) {
    const auto p = write_file("dseg_override.cfg", "preset = desk\nmax_epochs = 7\nlr = 0.01\n");
    RunConfig c = RunConfig::for_preset(preset_in_file(p.string(), "desk"));
    c.apply_file(p.string());
    EXPECT_EQ(c.train.max_epochs, 7u);
    c.set("lr", "0.02");
    EXPECT_DOUBLE_EQ(c.train.lr, 0.02);
    EXPECT_EQ(c.model.input_h, 64u);
    fs::remove(p);
}

TEST(RunConfig, FileErrorsNameTheFile) {
    const auto p = write_file("dseg_bad.cfg", "bogus_key = 1\n");
    RunConfig c;
    try {
        c.apply_file(p.string());
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("dseg_bad.cfg"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("bogus_key"), std::string::npos);
    }
    fs::remove(p);
    EXPECT_THROW(c.apply_file("/nonexistent/x.cfg"), IoError);
}

TEST(RunConfig, ValidateRejectsBadSplitsAndThreshold) {
    RunConfig c = RunConfig::for_preset("desk");
    c.validate();
    c.split_test = 0.3;
    EXPECT_THROW(c.validate(), ConfigError);
    c.split_test = 0.1;
    c.eval.threshold = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
}

}  // namespace
}  // namespace dseg
