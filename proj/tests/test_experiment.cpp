#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mlclt/experiment.hpp"

using namespace mlclt;

namespace {

std::string run_csv(const ExperimentConfig& c)
{
    std::ostringstream os;
    run_experiment(c, &os);
    return os.str();
}

ExperimentConfig small_clt()
{
    ExperimentConfig c;
    c.experiment = "clt-rate";
    c.preset = "identity-rademacher";
    c.L_list = std::vector<std::int64_t>{4, 8, 16};
    c.n_samples = 2000;
    c.master_seed = 12;
    return c;
}

} // namespace

TEST(Config, ParsesTextWithComments)
{
    ExperimentConfig c;
    apply_config_text(c, "# a comment\n"
                         "experiment = tails   # trailing\n"
                         "\n"
                         "L_list = 16, 64\n"
                         "n_samples=5000\n"
                         "presets = identity-laplace,cube-rademacher\n"
                         "policy.eps = 0.5\n"
                         "seed = 99\n");
    EXPECT_EQ(c.experiment, "tails");
    EXPECT_EQ(c.levels(), (std::vector<std::int64_t>{16, 64}));
    EXPECT_EQ(c.n_samples, 5000u);
    EXPECT_EQ(c.presets.size(), 2u);
    EXPECT_EQ(c.policy.get("eps"), 0.5);
    EXPECT_EQ(c.master_seed, 99u);
    EXPECT_NO_THROW(validate(c));
}

TEST(Config, Defaults)
{
    ExperimentConfig c;
    EXPECT_EQ(c.levels(), (std::vector<std::int64_t>{16, 32, 64, 128, 256, 512}));
    c.experiment = "bound-calc";
    EXPECT_EQ(c.levels().back(), 4096);
    apply_setting(c, "experiment", "bound-calculator");
    EXPECT_EQ(c.experiment, "bound-calc");
}

TEST(Config, Errors)
{
    ExperimentConfig c;
    EXPECT_THROW(apply_setting(c, "no_such_key", "1"), UsageError);
    EXPECT_THROW(apply_config_text(c, "just words\n"), UsageError);
    EXPECT_THROW(apply_setting(c, "n_samples", "many"), UsageError);
    EXPECT_THROW(apply_config_file(c, "/nonexistent/config.txt"), UsageError);

    auto bad = [](const std::string& k, const std::string& v) {
        ExperimentConfig c;
        apply_setting(c, k, v);
        return c;
    };
    EXPECT_THROW(validate(bad("experiment", "nope")), UsageError);
    EXPECT_THROW(validate(bad("n_samples", "999")), UsageError);
    EXPECT_THROW(validate(bad("eps_list", "0.25,0.75")), UsageError);
    EXPECT_THROW(validate(bad("L_list", "64,32")), UsageError);
    EXPECT_THROW(validate(bad("preset", "no-such-preset")), UsageError);
    EXPECT_THROW(validate(bad("window", "round")), UsageError);
    EXPECT_THROW(validate(bad("d", "4")), UsageError);
    EXPECT_THROW(validate(bad("S", "0.5")), UsageError);
    ExperimentConfig ok = bad("experiment", "bound-calc");
    ok.n_samples = 10; // only statistical experiments need samples
    EXPECT_NO_THROW(validate(ok));
}

TEST(FitRate, RecoversSlopes)
{
    std::vector<RatePoint> half, one;
    for (double L : {16.0, 32.0, 64.0, 128.0}) {
        half.push_back({L, std::pow(L, -0.5), 0.0});
        one.push_back({L, 3.0 / L, 0.0});
    }
    auto f = fit_rate(half);
    EXPECT_NEAR(f.slope, -0.5, 1e-12);
    EXPECT_NEAR(f.r2, 1.0, 1e-12);
    EXPECT_EQ(f.used, 4u);
    auto g = fit_rate(one);
    EXPECT_NEAR(g.slope, -1.0, 1e-12);
    EXPECT_NEAR(g.intercept, std::log2(3.0), 1e-12);

    for (auto& p : half) p.w1 *= 7.0;
    EXPECT_NEAR(fit_rate(half).slope, -0.5, 1e-12);
}

TEST(FitRate, DropsRowsNearFloor)
{
    std::vector<RatePoint> rows;
    for (double L : {16.0, 32.0, 64.0, 128.0, 256.0}) rows.push_back({L, std::pow(L, -0.5), 0.02});
    // 256^{-1/2} = 0.0625 ≥ 0.04, 2·floor with floor 0.02 drops nothing
    EXPECT_EQ(fit_rate(rows).used, 5u);
    rows.back().floor = 0.05;
    auto f = fit_rate(rows);
    EXPECT_EQ(f.used, 4u);
    EXPECT_EQ(f.warnings.size(), 1u);
    rows[0].w1 = 0.0;
    rows[1].floor = 1.0;
    EXPECT_THROW(fit_rate(rows), UsageError);
}

TEST(CltRate, GaussianPresetIsClose)
{
    ExperimentConfig c;
    c.preset = "identity-gaussian";
    c.L_list = std::vector<std::int64_t>{4};
    c.n_samples = 1000;
    auto r = run_experiment(c);
    ASSERT_EQ(r.table.rows.size(), 1u);
    const auto& h = r.table.header;
    auto col = [&](const std::string& name) {
        return std::stod(r.table.rows[0][std::find(h.begin(), h.end(), name) - h.begin()]);
    };
    EXPECT_EQ(r.table.rows[0][7], "ok");
    EXPECT_LE(col("normalized_w1"), 0.05);
    EXPECT_GT(col("w1_floor"), 0.0);
}

TEST(CltRate, EmptyLevelList)
{
    ExperimentConfig c = small_clt();
    c.L_list = std::vector<std::int64_t>{};
    auto r = run_experiment(c);
    EXPECT_TRUE(r.table.rows.empty());
    EXPECT_FALSE(r.details.contains("fit"));
}

TEST(CltRate, FitIsReported)
{
    auto r = run_experiment(small_clt());
    EXPECT_EQ(r.table.rows.size(), 3u);
    EXPECT_TRUE(r.details.contains("fit") || !r.warnings.empty());
}

TEST(CltRate, RowErrorsAreRecorded)
{
    ExperimentConfig c = small_clt();
    c.L_list = std::vector<std::int64_t>{1, 4};
    auto r = run_experiment(c);
    ASSERT_EQ(r.table.rows.size(), 2u);
    EXPECT_EQ(r.table.rows[0][7].rfind("error", 0), 0u);
    EXPECT_EQ(r.table.rows[0].size(), r.table.header.size());
    EXPECT_EQ(r.table.rows[1][7], "ok");
    EXPECT_FALSE(r.warnings.empty());
}

TEST(Reproducibility, BitIdenticalCsv)
{
    ExperimentConfig c = small_clt();
    EXPECT_EQ(run_csv(c), run_csv(c));
    ExperimentConfig t;
    t.experiment = "tails";
    t.L_list = std::vector<std::int64_t>{16};
    t.n_samples = 2000;
    EXPECT_EQ(run_csv(t), run_csv(t));
    ExperimentConfig other = small_clt();
    other.master_seed = 13;
    EXPECT_NE(run_csv(c), run_csv(other));
}

TEST(Reproducibility, ThreadCountInvariant)
{
    ExperimentConfig a = small_clt(), b = small_clt();
    b.threads = 3;
    EXPECT_EQ(run_csv(a), run_csv(b));
}

TEST(Schema, HashColumn)
{
    std::string csv = run_csv(small_clt());
    std::istringstream is(csv);
    std::string header, row;
    std::getline(is, header);
    EXPECT_EQ(header.rfind("schema_hash,experiment,", 0), 0u);
    ResultTable t;
    t.header = {"a", "b"};
    // FNV-1a 64 of "v1,a,b", computed independently
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char ch : std::string("v1,a,b")) h = (h ^ static_cast<unsigned char>(ch)) * 0x100000001b3ULL;
    std::ostringstream hex;
    hex << std::hex << std::setw(16) << std::setfill('0') << h;
    EXPECT_EQ(t.schema_hash(), hex.str());
    EXPECT_EQ(t.schema_hash().size(), 16u);
    int rows = 0;
    while (std::getline(is, row)) {
        ++rows;
        EXPECT_EQ(row.substr(0, 16), run_experiment(small_clt()).table.schema_hash());
    }
    EXPECT_EQ(rows, 3);
}

TEST(CltRate, MatchesDirectMonteCarlo)
{
    ExperimentConfig c = small_clt();
    c.L_list = std::vector<std::int64_t>{8};
    auto r = run_experiment(c);
    const std::uint64_t seed = stream_seed(c.master_seed, 8);
    DependenceStructure s(1, 8, 2.0, 2.0, 1.0);
    SyntheticGenerator gen(preset("identity-rademacher"), s);
    SampleSet x = monte_carlo(gen, c.n_samples, seed);
    double w = normalized_distance(normalize_samples(x, sample_stats(x)), 0);
    EXPECT_EQ(r.table.rows[0][6], std::to_string(seed));
    EXPECT_NEAR(std::stod(r.table.rows[0][9]), w, 1e-9);
}

TEST(Experiments, BoundCalcRows)
{
    ExperimentConfig c;
    c.experiment = "bound-calc";
    c.L_list = std::vector<std::int64_t>{16, 64};
    auto r = run_experiment(c);
    ASSERT_EQ(r.table.rows.size(), 2u);
    EXPECT_EQ(r.table.rows[0][3], "16");
    EXPECT_EQ(r.details["log_base"], 2);
}

TEST(Experiments, OracleAtTwoSites)
{
    ExperimentConfig c;
    c.experiment = "oracle";
    c.preset = "identity-rademacher";
    c.n_samples = 20000;
    auto r = run_experiment(c);
    ASSERT_EQ(r.table.rows.size(), 1u);
    const auto& row = r.table.rows[0];
    EXPECT_EQ(row[5], "3");
    EXPECT_LE(std::stod(row[6]), 0.05);
    EXPECT_LE(std::stod(row[10]), 1e-9);
}

TEST(Experiments, ModerateReassembly)
{
    ExperimentConfig c;
    c.experiment = "moderate";
    c.L_list = std::vector<std::int64_t>{64};
    c.n_samples = 1000;
    auto r = run_experiment(c);
    EXPECT_LE(r.details["max_reassembly_error"].get<double>(), 1e-12);
    EXPECT_FALSE(r.table.rows.empty());
}

TEST(Experiments, SteinCertifySmall)
{
    ExperimentConfig c;
    c.experiment = "stein-certify";
    c.eps_list = {0.5};
    c.third_points = 20;
    auto r = run_experiment(c);
    // 4 members × (residual, third) + 2 majorants for member 0
    EXPECT_EQ(r.table.rows.size(), 10u);
    for (const auto& row : r.table.rows) EXPECT_EQ(row.back(), "1") << row[3] << ' ' << row[4];
}

TEST(Manifest, Fields)
{
    ExperimentConfig c;
    c.experiment = "bound-calc";
    c.L_list = std::vector<std::int64_t>{16};
    auto r = run_experiment(c);
    auto m = manifest(c, r);
    EXPECT_EQ(m["schema_hash"], r.table.schema_hash());
    EXPECT_EQ(m["rows"], 1);
    EXPECT_EQ(m["config"]["experiment"], "bound-calc");
    EXPECT_TRUE(m.contains("wallclock_seconds"));
    EXPECT_EQ(m["row_wallclock_seconds"].size(), 1u);
    EXPECT_EQ(m["version"], kVersion);
}
