#include "slipnet/binary_io.hpp"
#include "slipnet/error.hpp"
#include "slipnet/harness.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <set>
#include <sstream>

using namespace slipnet;
using namespace slipnet::harness;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code;
    std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
    args.insert(args.begin(), "slipnet");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

// Writes a handful of kinematic trials and their index without running the full grid.
void write_kinematic_trials(const SuiteConfig& c, std::size_t n) {
    auto specs = grid_trials(Grid::Kinematic, c);
    std::vector<TrialRecord> records;
    fs::create_directories(c.resolve(c.trial_dir));
    for (std::size_t i = 0; i < n; ++i) {
        const auto& spec = specs[i * 37 % specs.size()];
        const Trial t = sim::run_scenario(spec.scenario, c.sim);
        save_events(t, c.resolve(c.trial_dir) / (spec.id + ".ntev"));
        records.push_back({spec, t.incipient_onset_us, t.gross_onset_us, t.stream.events.size()});
    }
    io::write_text(c.resolve(c.trial_dir) / "trials.csv", format_trial_index(records));
}

void write_config(const fs::path& path, const std::string& extra = {}) {
    io::write_text(path, "output_dir = run\ngravity_trials = 1\ndisturbance_trials = 1\n" + extra);
}

} // namespace

TEST(Grid, TrialCounts) {
    SuiteConfig c;
    EXPECT_EQ(grid_trials(Grid::Kinematic, c).size(), 288u);
    EXPECT_EQ(grid_trials(Grid::Gravity, c).size(), 45u);
    EXPECT_EQ(grid_trials(Grid::Disturbance, c).size(), 20u);
    c.apply_paper_scale();
    EXPECT_EQ(grid_trials(Grid::Kinematic, c).size(), 864u);
    EXPECT_EQ(grid_trials(Grid::Gravity, c).size(), 180u);
    EXPECT_EQ(grid_trials(Grid::Disturbance, c).size(), 80u);
}

TEST(Grid, SeedsAreDistinctAndReproducible) {
    SuiteConfig c;
    std::set<std::uint64_t> seeds;
    const auto a = grid_trials(Grid::Kinematic, c);
    for (const auto& t : a) seeds.insert(t.scenario.seed);
    EXPECT_EQ(seeds.size(), a.size());
    const auto b = grid_trials(Grid::Kinematic, c);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].scenario, b[i].scenario);
    c.seed = 2;
    EXPECT_NE(grid_trials(Grid::Kinematic, c)[0].scenario.seed, a[0].scenario.seed);
}

TEST(Grid, AllTrialsAreOnGrid) {
    SuiteConfig c;
    for (Grid g : {Grid::Kinematic, Grid::Gravity, Grid::Disturbance}) {
        std::set<std::string> ids;
        for (const auto& t : grid_trials(g, c)) {
            EXPECT_NO_THROW(validate_scenario(t.scenario));
            ids.insert(t.id);
        }
        EXPECT_EQ(ids.size(), grid_trials(g, c).size());
    }
}

TEST(Grid, DisturbanceSidesAlternate) {
    SuiteConfig c;
    const auto d = grid_trials(Grid::Disturbance, c);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const std::size_t within = i % c.disturbance_trials;
        EXPECT_EQ(d[i].scenario.disturbance_side, within % 2 == 0 ? Side::Left : Side::Right);
        EXPECT_EQ(d[i].condition_index, i / c.disturbance_trials);
    }
}

TEST(Config, FormatParseRoundTrip) {
    SuiteConfig c;
    c.seed = 77;
    c.train.learning_rate = 0.002;
    c.train.init_gain = {3.0, 1.5};
    c.smoother.window_len = 3;
    c.simulate_grids = {Grid::Gravity};
    c.sim.events.alpha = 321.5;
    const auto back = parse_suite(c.format());
    EXPECT_EQ(back.format(), c.format());
    EXPECT_EQ(back.digest(), c.digest());
}

TEST(Config, DigestIgnoresRunLocationOnly) {
    SuiteConfig a, b;
    b.output_dir = "/elsewhere/run";
    EXPECT_EQ(a.digest(), b.digest());
    b.trial_dir = "other_trials";
    EXPECT_NE(a.digest(), b.digest());
    SuiteConfig c;
    c.seed = 9;
    EXPECT_NE(a.digest(), c.digest());
}

TEST(Config, Errors) {
    EXPECT_THROW(parse_suite("nonsense = 1\n"), Error);
    EXPECT_THROW(parse_suite("seed = abc\n"), Error);
    EXPECT_THROW(parse_suite("simulate_grids = kinematic,moon\n"), Error);
    EXPECT_THROW(parse_suite("kinematic_repeats = 0\n"), Error);
    EXPECT_THROW(parse_suite("just words\n"), Error);
    EXPECT_NO_THROW(parse_suite("# comment\n\nseed = 3 # trailing\n"));
}

TEST(TrialIndex, RoundTrip) {
    SuiteConfig c;
    std::vector<TrialRecord> recs;
    for (const auto& s : grid_trials(Grid::Disturbance, c)) recs.push_back({s, 100, std::nullopt, 5});
    recs[1].incipient_us.reset();
    const auto text = format_trial_index(recs);
    const auto back = parse_trial_index(text);
    ASSERT_EQ(back.size(), recs.size());
    EXPECT_EQ(format_trial_index(back), text);
    EXPECT_EQ(back[3].spec.scenario, recs[3].spec.scenario);
    EXPECT_FALSE(back[1].incipient_us);
    EXPECT_THROW(parse_trial_index("bad header\n"), Error);
}

TEST(Threads, EnvironmentCap) {
    setenv("SLIPNET_THREADS", "1", 1);
    EXPECT_EQ(thread_count(), 1u);
    unsetenv("SLIPNET_THREADS");
    EXPECT_GE(thread_count(), 1u);
}

TEST(Cli, MissingConfigIsUsageError) {
    const auto r = cli({"simulate", "--config", "/nonexistent/suite.cfg"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("/nonexistent/suite.cfg"), std::string::npos);
}

TEST(Cli, UnknownSubcommandIsUsageError) {
    EXPECT_EQ(cli({"frobnicate"}).code, 2);
    EXPECT_EQ(cli({"simulate"}).code, 2); // --config is required
}

TEST(Cli, InvalidConfigIsValidationFailure) {
    slipnet::testing::TempDir dir("cli_invalid");
    io::write_text(dir / "suite.cfg", "margin = -1\n");
    EXPECT_EQ(cli({"simulate", "--config", (dir / "suite.cfg").string()}).code, 1);
}

TEST(Cli, EmptyTrialDirIsMissingTrials) {
    slipnet::testing::TempDir dir("cli_empty");
    write_config(dir / "suite.cfg");
    fs::create_directories(dir / "run" / "trials");
    const auto r = cli({"build", "--config", (dir / "suite.cfg").string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("MissingTrials"), std::string::npos);
}

TEST(Cli, MissingManifestNamesPath) {
    slipnet::testing::TempDir dir("cli_manifest");
    write_config(dir / "suite.cfg");
    const auto r = cli({"train", "--config", (dir / "suite.cfg").string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find((dir / "run" / "dataset" / "samples.csv").string()), std::string::npos);
}

TEST(Pipeline, BuildTrainEvalOnSmallSet) {
    slipnet::testing::TempDir dir("pipeline_small");
    write_config(dir / "suite.cfg", "batch = 32\n");
    SuiteConfig c = load_suite(dir / "suite.cfg");
    c.output_dir = dir / "run";
    write_kinematic_trials(c, 8);

    std::ostringstream log;
    const auto built = cmd_build_dataset(c, log, true);
    EXPECT_GT(built.train, 0u);
    EXPECT_GT(built.validation, 0u);
    EXPECT_GT(built.test, 0u);
    const auto manifest = RunManifest::load(c.resolve("run_manifest.txt"));
    const std::string digest = manifest.entries.at("build.digest");
    EXPECT_EQ(load_volumes(c.resolve(c.dataset_dir) / "train.spkv").size(), built.train);

    // Rebuilding with the same seed reproduces the digest.
    cmd_build_dataset(c, log, true);
    EXPECT_EQ(RunManifest::load(c.resolve("run_manifest.txt")).entries.at("build.digest"), digest);

    // --epochs 0 keeps the initial weights.
    const auto r = cli({"train", "--config", (dir / "suite.cfg").string(), "--epochs", "0"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto spec = snn::NetworkSpec::standard();
    EXPECT_EQ(snn::load_weights(c.resolve(c.weights_path), spec),
              snn::init_weights(spec, derive_seed(c.seed, "train", 0), c.train.init_gain));

    const auto e = cli({"eval", "--config", (dir / "suite.cfg").string()});
    ASSERT_EQ(e.code, 0) << e.err;
    const auto pos = e.out.find("test accuracy: ");
    ASSERT_NE(pos, std::string::npos);
    const auto pct = e.out.substr(pos + 15, e.out.find('%', pos) - pos - 15);
    EXPECT_EQ(pct.size() - pct.find('.'), 3u); // two decimals
    EXPECT_TRUE(fs::exists(c.resolve("eval") / "confusion.csv"));

    // A different seed changes the split and therefore the digest.
    c.seed = 2;
    cmd_build_dataset(c, log);
    EXPECT_NE(RunManifest::load(c.resolve("run_manifest.txt")).entries.at("build.digest"), digest);
}

TEST(Pipeline, DetectGroupsByConditionAndFlagsMissingGross) {
    slipnet::testing::TempDir dir("pipeline_detect");
    write_config(dir / "suite.cfg", "simulate_grids = gravity,disturbance\n");
    ASSERT_EQ(cli({"simulate", "--config", (dir / "suite.cfg").string()}).code, 0);
    SuiteConfig c = load_suite(dir / "suite.cfg");
    c.output_dir = dir / "run";
    const auto spec = snn::NetworkSpec::standard();
    snn::save_weights(spec, snn::init_weights(spec, 1, c.train.init_gain), c.resolve(c.weights_path));

    // Drop the gross onset of one trial.
    auto records = parse_trial_index(io::read_text(c.resolve(c.trial_dir) / "trials.csv"));
    ASSERT_EQ(records.size(), 13u);
    const fs::path victim = c.resolve(c.trial_dir) / (records[0].spec.id + ".ntev");
    Trial t = load_events(victim);
    t.gross_onset_us.reset();
    save_events(t, victim);

    std::ostringstream log;
    const auto out = cmd_detect(c, log);
    ASSERT_EQ(out.summaries.size(), 13u); // 9 weight x retraction conditions + 4 disturbance levels
    const auto table = io::read_text(c.resolve(c.report_dir) / "trials.csv");
    const auto row_start = table.find(records[0].spec.id);
    const auto row = table.substr(row_start, table.find('\n', row_start) - row_start);
    EXPECT_NE(row.find("no_gross_truth"), std::string::npos);
    EXPECT_NE(row.find(",,"), std::string::npos);
    for (const auto& [rec, rep] : out.reports) {
        if (rep.detected_gross_us) {
            ASSERT_TRUE(rep.detected_incipient_us);
            EXPECT_GT(*rep.detected_gross_us, *rep.detected_incipient_us);
        }
        if (auto lead = rep.lead_time_ms()) {
            EXPECT_DOUBLE_EQ(*lead, (static_cast<double>(*rep.true_gross_us) - static_cast<double>(*rep.detected_incipient_us)) / 1000.0);
        }
    }
    const auto summary = io::read_text(c.resolve(c.report_dir) / "summary.csv");
    EXPECT_EQ(std::count(summary.begin(), summary.end(), '\n'), 14);
}
