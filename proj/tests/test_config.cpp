#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "illiquid/config.hpp"
#include "test_support.hpp"

using namespace illiquid;

namespace {

std::string preset(const std::string& name) { return std::string(ILLIQUID_PRESET_DIR) + "/" + name; }

ExperimentConfig parse(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
}

const char* kMinimal = R"(
[model]
n_ill = 1
n_liq = 0
mean = -0.7 -0.423 0.158
covariance = [
  0.068 0.0725 0.006
  0.0725 0.271 0.043
  0.006 0.043 0.079
]
[experiment]
kind = impulse
)";

std::string with_experiment(const std::string& experiment) {
    std::string s = kMinimal;
    return s.substr(0, s.find("[experiment]")) + experiment;
}

int error_line(const std::string& text) {
    try {
        parse(text);
    } catch (const ConfigError& e) {
        return e.line();
    }
    return -1;
}

std::string error_text(const std::string& text) {
    try {
        parse(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(Config, SingleAssetPresetHasPublishedParameters) {
    const ExperimentConfig c = load_config(preset("single-asset-impulse.cfg"));
    Vector mu(3);
    mu << -0.700, -0.423, 0.158;
    EXPECT_EQ(c.model.mean, mu);
    EXPECT_NEAR((c.model.covariance - illiquid::testing::section35_covariance()).cwiseAbs().maxCoeff(), 0.0, 1e-15);
    EXPECT_DOUBLE_EQ(c.model.covariance(0, 1), 0.0725);
    ASSERT_EQ(c.warnings.size(), 1u);
    EXPECT_NE(c.warnings[0].find("symmetrized"), std::string::npos);
    EXPECT_EQ(c.kind, ExperimentKind::impulse);
}

TEST(Config, JointPresetMatchesReturnModel) {
    const ExperimentConfig c = load_config(preset("joint-frontier.cfg"));
    const LatentDistribution d = c.model.distribution();
    const LatentDistribution ref = illiquid::testing::joint();
    EXPECT_LE((d.covariance() - ref.covariance()).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_EQ(d.mean(), ref.mean());
    EXPECT_EQ(c.sigma_grid.size(), 30u);
    EXPECT_DOUBLE_EQ(c.sigma_grid.back(), 0.3);
    EXPECT_EQ(c.horizons, (std::vector<int>{20, 10}));
    EXPECT_EQ(c.mpc.H, 10);
    EXPECT_DOUBLE_EQ(c.mpc.gamma, 0.97);
    EXPECT_DOUBLE_EQ(c.mpc.epsilon_ins, 0.02);
    EXPECT_DOUBLE_EQ(c.mpc.lambda_cash, 1000.0);
}

TEST(Config, EveryPresetLoads) {
    int count = 0;
    for (const auto& e : std::filesystem::directory_iterator(ILLIQUID_PRESET_DIR)) {
        if (e.path().extension() != ".cfg") continue;
        EXPECT_NO_THROW(load_config(e.path().string())) << e.path();
        ++count;
    }
    EXPECT_GE(count, 5);
}

TEST(Config, RoundTripIsExact) {
    for (const char* name : {"single-asset-impulse.cfg", "commitment-tracking.cfg", "joint-frontier.cfg",
                             "joint-simulate.cfg"}) {
        const ExperimentConfig c = load_config(preset(name));
        const std::string text = write_config(c);
        const ExperimentConfig back = parse(text);
        EXPECT_TRUE(back == c) << name;
        EXPECT_EQ(write_config(back), text) << name;
    }
}

TEST(Config, RoundTripKeepsCustomLayoutAndCaps) {
    ExperimentConfig c = parse(kMinimal);
    c.model.layout = BlockLayout{2, 0, 1, 3};
    c.mpc.n_lim = 0.25;
    c.n_lim = 1.0 / 3.0;
    c.sigma_grid = {0.1, 0.2};
    c.write_trajectories = true;
    EXPECT_TRUE(parse(write_config(c)) == c);
}

TEST(Config, DefaultsApplied) {
    const ExperimentConfig c = parse(kMinimal);
    EXPECT_EQ(c.T, 20);
    EXPECT_EQ(c.paths, 100);
    EXPECT_EQ(c.I_targ, Vector::Ones(1));
    EXPECT_TRUE(std::isinf(c.n_lim));
    EXPECT_EQ(c.mpc.risk_mode, RiskMode::penalized);
    EXPECT_EQ(c.model.mean_samples, kDefaultMeanSamples);
    EXPECT_EQ(c.directory, "out");
    EXPECT_TRUE(c.warnings.empty());
}

TEST(Config, EmptyExperimentSectionNamesMissingField) {
    const std::string msg = error_text(with_experiment("[experiment]\n"));
    EXPECT_NE(msg.find("'kind'"), std::string::npos) << msg;
}

TEST(Config, ErrorsCarryLineNumbers) {
    EXPECT_EQ(error_line(with_experiment("[experiment]\nkind = impulse\nT = x\n")), 13);
    EXPECT_EQ(error_line(with_experiment("[experiment]\nkind = impulse\nbogus = 1\n")), 13);
    EXPECT_EQ(error_line(with_experiment("[experiment]\nkind = launch\n")), 12);
    EXPECT_EQ(error_line(std::string(kMinimal) + "T = 3\nT = 4\n"), 14);
}

TEST(Config, RejectsDimensionMismatch) {
    std::string s = kMinimal;
    s.replace(s.find("0.158"), 5, "0.158 1");
    EXPECT_EQ(error_line(s), 5);
    std::string r = kMinimal;
    r.replace(r.find("  0.006 0.043 0.079\n"), 20, "");
    EXPECT_NE(error_text(r).find("rows"), std::string::npos);
}

TEST(Config, RejectsNonPsdCovariance) {
    std::string s = kMinimal;
    s.replace(s.find("0.068"), 5, "-1.00");
    const std::string msg = error_text(s);
    EXPECT_NE(msg.find("positive semidefinite"), std::string::npos) << msg;
    EXPECT_EQ(error_line(s), 6);
}

TEST(Config, RejectsUnclosedMatrixAndStrayText) {
    std::string s = kMinimal;
    s.replace(s.find("]\n[experiment]"), 1, "");
    EXPECT_GT(error_line(s), 0);
    EXPECT_EQ(error_line("n_ill = 1\n"), 1);
    EXPECT_EQ(error_line("[weather]\n"), 1);
}

TEST(Config, PolicyListIsValidatedAgainstKind) {
    EXPECT_NE(error_text(with_experiment("[experiment]\nkind = frontier\npolicies = mpc\n")).find("liquid"),
              std::string::npos);
    EXPECT_NE(error_text(with_experiment("[experiment]\nkind = simulate\npolicies = teleport\n")).find("teleport"),
              std::string::npos);
    const ExperimentConfig c = parse(with_experiment("[experiment]\nkind = simulate\n"));
    EXPECT_EQ(c.policies, (std::vector<PolicyKind>{PolicyKind::open_loop, PolicyKind::commitment_mpc}));
}

TEST(Config, LinspaceAndComments) {
    const ExperimentConfig c =
        parse(with_experiment("[experiment]  # trailing comment\nkind = impulse # inline\n"
                              "sigma_grid = linspace 0 1 5\n"));
    EXPECT_EQ(c.sigma_grid, (std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0}));
}

TEST(Config, ReferenceListsEveryKey) {
    const std::string ref = config_reference();
    for (const auto& k : config_keys()) EXPECT_NE(ref.find(std::string(k.key) + " = "), std::string::npos) << k.key;
    EXPECT_NE(ref.find("(required)"), std::string::npos);
}
