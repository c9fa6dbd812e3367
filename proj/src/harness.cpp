#include "slipnet/harness.hpp"

#include "slipnet/binary_io.hpp"
#include "slipnet/error.hpp"
#include "slipnet/rng.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace slipnet::harness {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, end);
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(s.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
        throw Error(ErrorKind::InvalidConfig, "bad number for " + key + ": '" + v + "'");
    }
    return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw Error(ErrorKind::InvalidConfig, "bad integer for " + key + ": '" + v + "'");
    }
    return out;
}

std::optional<std::uint64_t> to_opt_u64(const std::string& key, const std::string& v) {
    if (v.empty()) return std::nullopt;
    return to_u64(key, v);
}

std::string opt_str(const std::optional<std::uint64_t>& v) {
    return v ? std::to_string(*v) : std::string{};
}

std::string opt_ms(const std::optional<double>& v) {
    if (!v) return {};
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, *v, std::chars_format::fixed, 3);
    (void)ec;
    return std::string(buf, end);
}

Grid parse_grid(const std::string& s) {
    if (s == "kinematic") return Grid::Kinematic;
    if (s == "gravity") return Grid::Gravity;
    if (s == "disturbance") return Grid::Disturbance;
    throw Error(ErrorKind::InvalidConfig, "unknown grid '" + s + "'");
}

std::vector<Grid> parse_grids(const std::string& s) {
    std::vector<Grid> out;
    for (const auto& part : split(s, ',')) {
        const auto g = trim(part);
        if (!g.empty()) out.push_back(parse_grid(g));
    }
    return out;
}

std::string join_grids(const std::vector<Grid>& grids) {
    std::string out;
    for (std::size_t i = 0; i < grids.size(); ++i) out += (i ? "," : "") + to_string(grids[i]);
    return out;
}

/// Runs fn(i) for i in [0, n) on up to thread_count() workers. The exception
/// of the lowest failing index is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t workers = std::min(n, thread_count());
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::size_t failed_at = n;
    std::exception_ptr failure;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (i < failed_at) {
                        failed_at = i;
                        failure = std::current_exception();
                    }
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

std::string require_text(const fs::path& path, const std::string& what) {
    if (!fs::exists(path)) throw Error(ErrorKind::IoFailure, what + " not found: " + path.string());
    return io::read_text(path);
}

fs::path trial_index_path(const SuiteConfig& c) {
    return c.resolve(c.trial_dir) / "trials.csv";
}

fs::path event_path(const SuiteConfig& c, const std::string& id) {
    return c.resolve(c.trial_dir) / (id + ".ntev");
}

fs::path samples_path(const SuiteConfig& c) {
    return c.resolve(c.dataset_dir) / "samples.csv";
}

fs::path manifest_path(const SuiteConfig& c) {
    return c.resolve("run_manifest.txt");
}

void record_stage(const SuiteConfig& c, const std::string& stage, std::uint64_t digest) {
    RunManifest m = RunManifest::load(manifest_path(c));
    m.entries["tool_version"] = kToolVersion;
    m.entries["config_digest"] = std::to_string(c.digest());
    m.entries["seed"] = std::to_string(c.seed);
    m.entries[stage + ".digest"] = std::to_string(digest);
    m.save(manifest_path(c));
}

std::vector<TrialRecord> load_trial_index(const SuiteConfig& c) {
    return parse_trial_index(require_text(trial_index_path(c), "trial index"));
}

Trial load_trial(const SuiteConfig& c, const TrialRecord& rec) {
    Trial t = load_events(event_path(c, rec.spec.id));
    t.scenario = rec.spec.scenario;
    return t;
}

snn::TrainParams train_params(const SuiteConfig& c) {
    snn::TrainParams p = c.train;
    p.seed = derive_seed(c.seed, "train", 0);
    return p;
}

} // namespace

std::string to_string(Grid grid) {
    switch (grid) {
    case Grid::Kinematic: return "kinematic";
    case Grid::Gravity: return "gravity";
    case Grid::Disturbance: return "disturbance";
    }
    return "?";
}

std::size_t thread_count() {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("SLIPNET_THREADS")) {
        std::size_t cap = 0;
        auto [ptr, ec] = std::from_chars(env, env + std::char_traits<char>::length(env), cap);
        if (ec == std::errc() && *ptr == '\0' && cap > 0) n = std::min(n, cap);
    }
    return n;
}

// ---------------------------------------------------------------------------
// Configuration

void SuiteConfig::apply_paper_scale() {
    kinematic_repeats = 3;
    gravity_trials = 20;
    disturbance_trials = 20;
}

fs::path SuiteConfig::resolve(const fs::path& p) const {
    return p.is_absolute() ? p : output_dir / p;
}

std::string SuiteConfig::format() const {
    std::ostringstream o;
    o << "output_dir = " << output_dir.string() << '\n';
    o << "trial_dir = " << trial_dir.string() << '\n';
    o << "dataset_dir = " << dataset_dir.string() << '\n';
    o << "weights_path = " << weights_path.string() << '\n';
    o << "report_dir = " << report_dir.string() << '\n';
    o << "simulate_grids = " << join_grids(simulate_grids) << '\n';
    o << "detect_grids = " << join_grids(detect_grids) << '\n';
    o << "kinematic_repeats = " << kinematic_repeats << '\n';
    o << "gravity_trials = " << gravity_trials << '\n';
    o << "disturbance_trials = " << disturbance_trials << '\n';
    o << "seed = " << seed << '\n';
    o << "epochs = " << train.epochs << '\n';
    o << "batch = " << train.batch << '\n';
    o << "optimizer = " << (train.optimizer == snn::Optimizer::Adam ? "adam" : "sgd") << '\n';
    o << "learning_rate = " << num(train.learning_rate) << '\n';
    o << "momentum = " << num(train.momentum) << '\n';
    o << "beta2 = " << num(train.beta2) << '\n';
    o << "patience = " << train.patience << '\n';
    o << "time_budget_s = " << num(train.time_budget_s) << '\n';
    o << "surrogate_width = " << num(train.surrogate_width) << '\n';
    o << "init_gain = ";
    for (std::size_t i = 0; i < train.init_gain.size(); ++i) o << (i ? "," : "") << num(train.init_gain[i]);
    o << '\n';
    o << "window_len = " << smoother.window_len << '\n';
    o << "margin = " << num(smoother.margin) << '\n';
    const auto& g = sim.geometry;
    const auto& m = sim.mechanics;
    const auto& e = sim.events;
    o << "h_c = " << num(g.h_c) << "\nd_h = " << num(g.d_h) << "\nd_c = " << num(g.d_c) << "\nr = " << num(g.r) << '\n';
    o << "k_n = " << num(m.k_n) << "\nk_t = " << num(m.k_t) << "\nmu_s = " << num(m.mu_s) << "\nmu_k = " << num(m.mu_k)
      << "\neta = " << num(m.eta) << '\n';
    o << "alpha = " << num(e.alpha) << "\nvibration_gain = " << num(e.vibration_gain)
      << "\nlambda_bg = " << num(e.lambda_bg) << "\nbeta = " << num(e.beta) << '\n';
    o << "slip_threshold_mm = " << num(sim.protocol.slip_threshold_mm) << '\n';
    return o.str();
}

std::uint64_t SuiteConfig::digest() const {
    // The run location does not influence any output.
    std::string text = format();
    text.erase(0, text.find('\n') + 1);
    return fnv1a64(text);
}

SuiteConfig parse_suite(const std::string& text) {
    SuiteConfig c;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw Error(ErrorKind::InvalidConfig, "expected key = value: '" + line + "'");
        const std::string k = trim(line.substr(0, eq));
        const std::string v = trim(line.substr(eq + 1));
        auto count = [&] { return static_cast<std::size_t>(to_u64(k, v)); };
        auto real = [&] { return to_double(k, v); };
        if (k == "output_dir") c.output_dir = v;
        else if (k == "trial_dir") c.trial_dir = v;
        else if (k == "dataset_dir") c.dataset_dir = v;
        else if (k == "weights_path") c.weights_path = v;
        else if (k == "report_dir") c.report_dir = v;
        else if (k == "simulate_grids") c.simulate_grids = parse_grids(v);
        else if (k == "detect_grids") c.detect_grids = parse_grids(v);
        else if (k == "kinematic_repeats") c.kinematic_repeats = count();
        else if (k == "gravity_trials") c.gravity_trials = count();
        else if (k == "disturbance_trials") c.disturbance_trials = count();
        else if (k == "seed") c.seed = to_u64(k, v);
        else if (k == "epochs") c.train.epochs = count();
        else if (k == "batch") c.train.batch = count();
        else if (k == "optimizer") {
            if (v == "adam") c.train.optimizer = snn::Optimizer::Adam;
            else if (v == "sgd") c.train.optimizer = snn::Optimizer::Sgd;
            else throw Error(ErrorKind::InvalidConfig, "unknown optimizer '" + v + "'");
        }
        else if (k == "learning_rate") c.train.learning_rate = real();
        else if (k == "momentum") c.train.momentum = real();
        else if (k == "beta2") c.train.beta2 = real();
        else if (k == "patience") c.train.patience = count();
        else if (k == "time_budget_s") c.train.time_budget_s = real();
        else if (k == "surrogate_width") c.train.surrogate_width = real();
        else if (k == "init_gain") {
            c.train.init_gain.clear();
            for (const auto& part : split(v, ',')) c.train.init_gain.push_back(to_double(k, trim(part)));
        }
        else if (k == "window_len") c.smoother.window_len = count();
        else if (k == "margin") c.smoother.margin = real();
        else if (k == "h_c") c.sim.geometry.h_c = real();
        else if (k == "d_h") c.sim.geometry.d_h = real();
        else if (k == "d_c") c.sim.geometry.d_c = real();
        else if (k == "r") c.sim.geometry.r = real();
        else if (k == "k_n") c.sim.mechanics.k_n = real();
        else if (k == "k_t") c.sim.mechanics.k_t = real();
        else if (k == "mu_s") c.sim.mechanics.mu_s = real();
        else if (k == "mu_k") c.sim.mechanics.mu_k = real();
        else if (k == "eta") c.sim.mechanics.eta = real();
        else if (k == "alpha") c.sim.events.alpha = real();
        else if (k == "vibration_gain") c.sim.events.vibration_gain = real();
        else if (k == "lambda_bg") c.sim.events.lambda_bg = real();
        else if (k == "beta") c.sim.events.beta = real();
        else if (k == "slip_threshold_mm") c.sim.protocol.slip_threshold_mm = real();
        else throw Error(ErrorKind::InvalidConfig, "unknown config key '" + k + "'");
    }
    if (c.kinematic_repeats == 0 || c.gravity_trials == 0 || c.disturbance_trials == 0) {
        throw Error(ErrorKind::InvalidConfig, "trials per condition must be >= 1");
    }
    if (c.train.batch == 0) throw Error(ErrorKind::InvalidConfig, "batch must be >= 1");
    if (c.smoother.window_len == 0 || !(c.smoother.margin >= 0.0)) {
        throw Error(ErrorKind::InvalidConfig, "window_len must be >= 1 and margin >= 0");
    }
    if (c.train.init_gain.empty()) throw Error(ErrorKind::InvalidConfig, "init_gain needs at least one value");
    return c;
}

SuiteConfig load_suite(const fs::path& path) {
    return parse_suite(require_text(path, "config"));
}

// ---------------------------------------------------------------------------
// Grids and trial index

std::vector<TrialSpec> grid_trials(Grid grid, const SuiteConfig& config) {
    std::vector<TrialSpec> out;
    auto add = [&](std::string condition, std::size_t condition_index, ScenarioConfig sc) {
        TrialSpec t;
        t.grid = grid;
        char id[32];
        std::snprintf(id, sizeof id, "%s_%04zu", to_string(grid).c_str(), out.size());
        t.id = id;
        t.condition = std::move(condition);
        t.condition_index = condition_index;
        sc.seed = derive_seed(config.seed, "trial/" + to_string(grid), out.size());
        t.scenario = sc;
        out.push_back(std::move(t));
    };
    if (grid == Grid::Kinematic) {
        std::size_t cond = 0;
        for (double depth : {2.4, 2.6, 2.8, 3.0, 3.2, 3.4}) {
            for (double speed : {0.6, 0.8, 1.0, 1.2, 1.4, 1.6}) {
                for (double dir : {0.0, 45.0, 90.0, 135.0, 180.0, 225.0, 270.0, 315.0}) {
                    for (std::size_t rep = 0; rep < config.kinematic_repeats; ++rep) {
                        ScenarioConfig sc;
                        sc.kind = ScenarioKind::Kinematic;
                        sc.depth_mm = depth;
                        sc.speed_mm_s = speed;
                        sc.direction_deg = dir;
                        add("depth" + num(depth) + "_speed" + num(speed), cond, sc);
                    }
                }
                ++cond;
            }
        }
    } else if (grid == Grid::Gravity) {
        std::size_t cond = 0;
        for (double mass : {0.165, 0.205, 0.245}) {
            for (double ret : {0.3, 0.5, 0.7}) {
                for (std::size_t i = 0; i < config.gravity_trials; ++i) {
                    ScenarioConfig sc;
                    sc.kind = ScenarioKind::Gravity;
                    sc.mass_kg = mass;
                    sc.retraction_mm_s = ret;
                    add("mass" + num(mass) + "_retraction" + num(ret), cond, sc);
                }
                ++cond;
            }
        }
    } else {
        std::size_t cond = 0;
        for (double frac : {0.25, 0.5, 0.75, 1.0}) {
            for (std::size_t i = 0; i < config.disturbance_trials; ++i) {
                ScenarioConfig sc;
                sc.kind = ScenarioKind::Gravity;
                sc.mass_kg = 0.205;
                sc.retraction_mm_s = 0.5;
                sc.disturbance_fraction = frac;
                sc.disturbance_side = i % 2 == 0 ? Side::Left : Side::Right;
                add("disturbance" + num(frac), cond, sc);
            }
            ++cond;
        }
    }
    return out;
}

namespace {
constexpr const char* kIndexHeader =
    "id,grid,condition,condition_index,kind,depth_mm,speed_mm_s,direction_deg,mass_kg,retraction_mm_s,"
    "disturbance_fraction,disturbance_side,seed,incipient_us,gross_us,events";
}

std::string format_trial_index(const std::vector<TrialRecord>& records) {
    std::string out = std::string(kIndexHeader) + "\n";
    for (const auto& r : records) {
        const auto& s = r.spec.scenario;
        out += r.spec.id + "," + to_string(r.spec.grid) + "," + r.spec.condition + "," +
               std::to_string(r.spec.condition_index) + "," + to_string(s.kind) + "," + num(s.depth_mm) + "," +
               num(s.speed_mm_s) + "," + num(s.direction_deg) + "," + num(s.mass_kg) + "," + num(s.retraction_mm_s) +
               "," + num(s.disturbance_fraction) + "," + to_string(s.disturbance_side) + "," + std::to_string(s.seed) +
               "," + opt_str(r.incipient_us) + "," + opt_str(r.gross_us) + "," + std::to_string(r.events) + "\n";
    }
    return out;
}

std::vector<TrialRecord> parse_trial_index(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || trim(line) != kIndexHeader) {
        throw Error(ErrorKind::MalformedHeader, "trial index header mismatch");
    }
    std::vector<TrialRecord> out;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 16) throw Error(ErrorKind::MalformedHeader, "trial index row has " + std::to_string(f.size()) + " fields", out.size());
        TrialRecord r;
        r.spec.id = f[0];
        r.spec.grid = parse_grid(f[1]);
        r.spec.condition = f[2];
        r.spec.condition_index = static_cast<std::size_t>(to_u64("condition_index", f[3]));
        auto& s = r.spec.scenario;
        if (f[4] == "kinematic") s.kind = ScenarioKind::Kinematic;
        else if (f[4] == "gravity") s.kind = ScenarioKind::Gravity;
        else throw Error(ErrorKind::InvalidConfig, "unknown kind '" + f[4] + "'");
        s.depth_mm = to_double("depth_mm", f[5]);
        s.speed_mm_s = to_double("speed_mm_s", f[6]);
        s.direction_deg = to_double("direction_deg", f[7]);
        s.mass_kg = to_double("mass_kg", f[8]);
        s.retraction_mm_s = to_double("retraction_mm_s", f[9]);
        s.disturbance_fraction = to_double("disturbance_fraction", f[10]);
        s.disturbance_side = f[11] == "left" ? Side::Left : Side::Right;
        s.seed = to_u64("seed", f[12]);
        r.incipient_us = to_opt_u64("incipient_us", f[13]);
        r.gross_us = to_opt_u64("gross_us", f[14]);
        r.events = static_cast<std::size_t>(to_u64("events", f[15]));
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifest

RunManifest RunManifest::load(const fs::path& path) {
    RunManifest m;
    if (!fs::exists(path)) return m;
    std::istringstream in(io::read_text(path));
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        m.entries[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return m;
}

void RunManifest::save(const fs::path& path) const {
    std::string text;
    for (const auto& [k, v] : entries) text += k + " = " + v + "\n";
    io::write_text(path, text);
}

std::uint64_t digest_files(const std::vector<fs::path>& files) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& f : files) {
        const auto bytes = io::read_file(f);
        h = fnv1a64(f.filename().string(), h);
        h = fnv1a64(std::span<const unsigned char>(bytes), h);
    }
    return h;
}

// ---------------------------------------------------------------------------
// Stages

SimulateOutcome cmd_simulate(const SuiteConfig& config, std::ostream& log) {
    std::vector<TrialSpec> specs;
    for (Grid g : config.simulate_grids) {
        auto part = grid_trials(g, config);
        specs.insert(specs.end(), part.begin(), part.end());
    }
    const fs::path dir = config.resolve(config.trial_dir);
    fs::create_directories(dir);
    sim::build_geometry(config.sim.geometry); // reject bad geometry before any work

    SimulateOutcome out;
    out.trials.resize(specs.size());
    std::mutex log_mu;
    std::atomic<std::size_t> done{0};
    parallel_for(specs.size(), [&](std::size_t i) {
        const Trial trial = sim::run_scenario(specs[i].scenario, config.sim);
        save_events(trial, event_path(config, specs[i].id));
        out.trials[i] = {specs[i], trial.incipient_onset_us, trial.gross_onset_us, trial.stream.events.size()};
        const std::size_t n = ++done;
        if (n % 25 == 0 || n == specs.size()) {
            std::lock_guard lock(log_mu);
            log << "simulated " << n << "/" << specs.size() << " trials\n";
        }
    });
    io::write_text(trial_index_path(config), format_trial_index(out.trials));

    std::vector<fs::path> files{trial_index_path(config)};
    for (const auto& s : specs) files.push_back(event_path(config, s.id));
    record_stage(config, "simulate", digest_files(files));
    return out;
}

BuildOutcome cmd_build_dataset(const SuiteConfig& config, std::ostream& log, bool write_volumes) {
    const fs::path dir = config.resolve(config.trial_dir);
    if (!fs::exists(dir) || fs::is_empty(dir)) throw Error(ErrorKind::MissingTrials, "no trials in " + dir.string());
    std::vector<TrialRecord> records;
    for (auto& r : load_trial_index(config)) {
        if (r.spec.grid == Grid::Kinematic) records.push_back(std::move(r));
    }
    if (records.empty()) throw Error(ErrorKind::MissingTrials, "no kinematic trials listed in " + trial_index_path(config).string());

    const TrialPartition part = partition_trials(records.size(), {}, derive_seed(config.seed, "split", 0));
    std::vector<std::string> split_of(records.size());
    for (auto i : part.train) split_of[i] = "train";
    for (auto i : part.validation) split_of[i] = "validation";
    for (auto i : part.test) split_of[i] = "test";

    std::vector<std::vector<SampleWindow>> windows(records.size());
    parallel_for(records.size(), [&](std::size_t i) {
        const Trial trial = load_trial(config, records[i]);
        windows[i] = sample_windows(trial, derive_seed(config.seed, "extract", i));
    });

    BuildOutcome out;
    std::string manifest = "trial_id,event_file,split,extract_seed,label_source\n";
    std::string samples = "trial_id,split,label,t_start_us\n";
    for (std::size_t i = 0; i < records.size(); ++i) {
        manifest += records[i].spec.id + "," + event_path(config, records[i].spec.id).filename().string() + "," +
                    split_of[i] + "," + std::to_string(derive_seed(config.seed, "extract", i)) + ",onsets\n";
        for (const auto& w : windows[i]) {
            samples += records[i].spec.id + "," + split_of[i] + "," + std::to_string(static_cast<int>(w.label)) + "," +
                       std::to_string(w.t_start_us) + "\n";
            out.class_counts[static_cast<std::size_t>(w.label)]++;
            (split_of[i] == "train" ? out.train : split_of[i] == "validation" ? out.validation : out.test)++;
        }
    }
    const fs::path ddir = config.resolve(config.dataset_dir);
    fs::create_directories(ddir);
    io::write_text(ddir / "manifest.csv", manifest);
    io::write_text(samples_path(config), samples);
    std::vector<fs::path> files{ddir / "manifest.csv", samples_path(config)};

    if (write_volumes) {
        for (const char* name : {"train", "validation", "test"}) {
            std::vector<SpikeVolume> vols;
            for (const auto& ex : load_split(config, name)) vols.push_back(ex.volume.to_dense());
            save_volumes(vols, ddir / (std::string(name) + ".spkv"));
            files.push_back(ddir / (std::string(name) + ".spkv"));
        }
    }
    log << "dataset: " << records.size() << " trials, samples train/validation/test = " << out.train << "/"
        << out.validation << "/" << out.test << ", classes NoSlip/Incipient/Gross = " << out.class_counts[0] << "/"
        << out.class_counts[1] << "/" << out.class_counts[2] << "\n";
    record_stage(config, "build", digest_files(files));
    return out;
}

std::vector<snn::Example> load_split(const SuiteConfig& config, const std::string& split_name) {
    std::istringstream in(require_text(samples_path(config), "dataset manifest"));
    std::string line;
    std::getline(in, line);
    if (trim(line) != "trial_id,split,label,t_start_us") throw Error(ErrorKind::MalformedHeader, "sample index header mismatch");
    struct Row {
        std::string trial;
        SlipClass label;
        std::uint64_t t;
    };
    std::vector<Row> rows;
    std::vector<std::string> trials;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 4) throw Error(ErrorKind::MalformedHeader, "bad sample row", rows.size());
        if (f[1] != split_name) continue;
        const auto label = to_u64("label", f[2]);
        if (label > 2) throw Error(ErrorKind::InvalidConfig, "bad label", rows.size());
        if (trials.empty() || trials.back() != f[0]) trials.push_back(f[0]);
        rows.push_back({f[0], static_cast<SlipClass>(label), to_u64("t_start_us", f[3])});
    }
    std::vector<snn::Example> out(rows.size());
    std::vector<std::size_t> first(trials.size() + 1, rows.size());
    for (std::size_t i = 0, k = 0; i < rows.size(); ++i) {
        if (i == 0 || rows[i].trial != rows[i - 1].trial) first[k++] = i;
    }
    parallel_for(trials.size(), [&](std::size_t k) {
        const EventStream grid = to_grid(load_events(event_path(config, trials[k])).stream);
        for (std::size_t i = first[k]; i < first[k + 1]; ++i) {
            out[i] = {bin_window_sparse(grid, rows[i].t), rows[i].label};
        }
    });
    return out;
}

TrainOutcome cmd_train(const SuiteConfig& config, std::ostream& log) {
    const auto train_set = load_split(config, "train");
    const auto val_set = load_split(config, "validation");
    log << "training on " << train_set.size() << " samples, validating on " << val_set.size() << "\n";
    const auto spec = snn::NetworkSpec::standard();
    TrainOutcome out;
    out.result = snn::train(train_set, val_set, spec, train_params(config), [&](const snn::EpochLog& e) {
        log << "epoch " << e.epoch << ": loss " << e.train_loss << ", train acc " << e.train_acc << ", val acc "
            << e.val_acc << "\n";
        log.flush();
    });
    const fs::path weights = config.resolve(config.weights_path);
    if (weights.has_parent_path()) fs::create_directories(weights.parent_path());
    snn::save_weights(spec, out.result.weights, weights);
    const fs::path log_path = config.resolve("train_log.csv");
    io::write_text(log_path, snn::format_training_log(out.result.log));
    log << "best epoch " << out.result.best_epoch << " (val acc " << out.result.best_val_acc << ")\n";
    record_stage(config, "train", digest_files({weights, log_path}));
    return out;
}

EvalOutcome cmd_eval(const SuiteConfig& config, std::ostream& log) {
    const auto spec = snn::NetworkSpec::standard();
    const fs::path wpath = config.resolve(config.weights_path);
    if (!fs::exists(wpath)) throw Error(ErrorKind::IoFailure, "weights not found: " + wpath.string());
    const auto weights = snn::load_weights(wpath, spec);
    EvalOutcome out;
    out.confusion = snn::evaluate(load_split(config, "test"), spec, weights);
    const fs::path dir = config.resolve("eval");
    fs::create_directories(dir);
    io::write_text(dir / "confusion.csv", snn::format_confusion(out.confusion));
    io::write_text(dir / "metrics.csv", snn::format_metrics(out.confusion));
    char acc[32];
    std::snprintf(acc, sizeof acc, "%.2f", 100.0 * out.confusion.accuracy());
    log << "test accuracy: " << acc << "% (" << out.confusion.total() << " samples)\n" << snn::format_metrics(out.confusion);
    record_stage(config, "eval", digest_files({dir / "confusion.csv", dir / "metrics.csv"}));
    return out;
}

DetectOutcome cmd_detect(const SuiteConfig& config, std::ostream& log) {
    const auto spec = snn::NetworkSpec::standard();
    const fs::path wpath = config.resolve(config.weights_path);
    if (!fs::exists(wpath)) throw Error(ErrorKind::IoFailure, "weights not found: " + wpath.string());
    const auto weights = snn::load_weights(wpath, spec);

    std::vector<TrialRecord> records;
    for (auto& r : load_trial_index(config)) {
        if (std::find(config.detect_grids.begin(), config.detect_grids.end(), r.spec.grid) != config.detect_grids.end()) {
            records.push_back(std::move(r));
        }
    }
    const fs::path dir = config.resolve(config.report_dir);
    fs::create_directories(dir);

    DetectOutcome out;
    out.reports.resize(records.size());
    parallel_for(records.size(), [&](std::size_t i) {
        const Trial trial = load_trial(config, records[i]);
        out.reports[i] = {records[i], detect::detect_trial(trial, spec, weights, config.smoother)};
        io::write_text(dir / (records[i].spec.id + ".csv"), detect::format_report(out.reports[i].second));
    });

    std::string table =
        "id,grid,condition,true_incipient_us,true_gross_us,detected_incipient_us,detected_gross_us,"
        "latency_incipient_ms,latency_gross_ms,lead_time_ms,flips,flag\n";
    std::vector<fs::path> files;
    for (const auto& [rec, rep] : out.reports) {
        std::string flag;
        if (!rep.true_gross_us) flag = "no_gross_truth";
        else if (!rep.detected_incipient_us) flag = "missed_incipient";
        else if (!rep.detected_gross_us) flag = "missed_gross";
        table += rec.spec.id + "," + to_string(rec.spec.grid) + "," + rec.spec.condition + "," +
                 opt_str(rep.true_incipient_us) + "," + opt_str(rep.true_gross_us) + "," +
                 opt_str(rep.detected_incipient_us) + "," + opt_str(rep.detected_gross_us) + "," +
                 opt_ms(rep.latency_incipient_ms()) + "," + opt_ms(rep.latency_gross_ms()) + "," +
                 opt_ms(rep.lead_time_ms()) + "," + std::to_string(rep.flips()) + "," + flag + "\n";
        files.push_back(dir / (rec.spec.id + ".csv"));
    }

    // Group by (grid, condition) in grid order.
    std::vector<std::pair<std::string, std::vector<detect::DetectionReport>>> groups;
    for (const auto& [rec, rep] : out.reports) {
        const std::string key = to_string(rec.spec.grid) + ":" + rec.spec.condition;
        auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == key; });
        if (it == groups.end()) {
            groups.push_back({key, {}});
            it = groups.end() - 1;
        }
        it->second.push_back(rep);
    }
    for (const auto& [key, reps] : groups) {
        out.summaries.push_back({key.substr(key.find(':') + 1), detect::latency_stats(reps)});
    }
    io::write_text(dir / "trials.csv", table);
    io::write_text(dir / "summary.csv", detect::format_summary(out.summaries));
    files.push_back(dir / "trials.csv");
    files.push_back(dir / "summary.csv");
    log << detect::format_summary(out.summaries);
    record_stage(config, "detect", digest_files(files));
    return out;
}

} // namespace slipnet::harness

// ---------------------------------------------------------------------------
// CLI

namespace slipnet::harness {

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"slipnet: synthetic papillae slip detection pipeline"};
    app.require_subcommand(1);
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    bool paper_scale = false;
    bool write_volumes = false;

    const std::vector<std::pair<std::string, std::string>> stages{
        {"simulate", "simulate the configured scenario grids"},
        {"build", "extract the labelled dataset from kinematic trials"},
        {"train", "train the spiking network"},
        {"eval", "evaluate the trained network on the test split"},
        {"detect", "run online detection over gravity and disturbance trials"},
        {"run", "all stages in order"},
    };
    std::vector<CLI::App*> subs;
    for (const auto& [name, help] : stages) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config_path, "suite config file")->required();
        sub->add_option("--seed", seed, "override the global seed");
        sub->add_flag("--paper-scale", paper_scale, "paper-sized grids");
        if (name == "train" || name == "run") sub->add_option("--epochs", epochs, "override the epoch count");
        if (name == "build" || name == "run") sub->add_flag("--write-volumes", write_volumes, "also write dense SPKV packs");
        subs.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << app.help();
        return 2;
    }

    try {
        if (!fs::exists(config_path)) {
            err << "error: config not found: " << config_path << "\n";
            return 2;
        }
        SuiteConfig config = load_suite(config_path);
        if (config.output_dir.is_relative()) config.output_dir = fs::path(config_path).parent_path() / config.output_dir;
        if (seed) config.seed = *seed;
        if (epochs) config.train.epochs = *epochs;
        if (paper_scale) config.apply_paper_scale();
        fs::create_directories(config.output_dir);

        const std::string stage = app.get_subcommands().front()->get_name();
        const bool all = stage == "run";
        if (all || stage == "simulate") {
            const auto r = cmd_simulate(config, out);
            out << "wrote " << r.trials.size() << " trials to " << config.resolve(config.trial_dir).string() << "\n";
        }
        if (all || stage == "build") cmd_build_dataset(config, out, write_volumes);
        if (all || stage == "train") cmd_train(config, out);
        if (all || stage == "eval") cmd_eval(config, out);
        if (all || stage == "detect") cmd_detect(config, out);
        return 0;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return e.kind() == ErrorKind::IoFailure || e.kind() == ErrorKind::MissingTrials ? 2 : 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace slipnet::harness
