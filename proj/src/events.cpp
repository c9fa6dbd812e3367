#include "slipnet/events.hpp"

#include "slipnet/binary_io.hpp"
#include "slipnet/error.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace slipnet {

namespace io {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoFailure, "cannot open " + path.string());
    std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return data;
}

void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoFailure, "cannot create " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::IoFailure, "write failed for " + path.string());
}

void write_text(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoFailure, "cannot create " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error(ErrorKind::IoFailure, "write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
    auto bytes = read_file(path);
    return std::string(bytes.begin(), bytes.end());
}

} // namespace io

// ---------------------------------------------------------------------------
// Scenario records

std::string to_string(ScenarioKind kind) {
    return kind == ScenarioKind::Kinematic ? "kinematic" : "gravity";
}

std::string to_string(Side side) {
    return side == Side::Left ? "left" : "right";
}

namespace {

std::string fmt_double(double v) {
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), end);
}

double parse_double(const std::string& key, const std::string& value) {
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size() || !std::isfinite(out)) {
        throw Error(ErrorKind::InvalidConfig, "bad number for " + key + ": '" + value + "'");
    }
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool on_grid(double v, std::initializer_list<double> grid) {
    return std::any_of(grid.begin(), grid.end(), [v](double g) { return std::abs(v - g) < 1e-9; });
}

} // namespace

std::string format_scenario(const ScenarioConfig& c) {
    std::ostringstream out;
    out << "kind = " << to_string(c.kind) << '\n';
    if (c.kind == ScenarioKind::Kinematic) {
        out << "depth_mm = " << fmt_double(c.depth_mm) << '\n';
        out << "speed_mm_s = " << fmt_double(c.speed_mm_s) << '\n';
        out << "direction_deg = " << fmt_double(c.direction_deg) << '\n';
    } else {
        out << "mass_kg = " << fmt_double(c.mass_kg) << '\n';
        out << "retraction_mm_s = " << fmt_double(c.retraction_mm_s) << '\n';
        out << "disturbance_fraction = " << fmt_double(c.disturbance_fraction) << '\n';
        out << "disturbance_side = " << to_string(c.disturbance_side) << '\n';
    }
    out << "seed = " << c.seed << '\n';
    if (c.off_grid) out << "off_grid = true\n";
    return out.str();
}

ScenarioConfig parse_scenario(const std::string& text) {
    ScenarioConfig c;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw Error(ErrorKind::InvalidConfig, "expected key = value: '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "kind") {
            if (value == "kinematic") c.kind = ScenarioKind::Kinematic;
            else if (value == "gravity") c.kind = ScenarioKind::Gravity;
            else throw Error(ErrorKind::InvalidConfig, "unknown kind '" + value + "'");
        } else if (key == "depth_mm") {
            c.depth_mm = parse_double(key, value);
        } else if (key == "speed_mm_s") {
            c.speed_mm_s = parse_double(key, value);
        } else if (key == "direction_deg") {
            c.direction_deg = parse_double(key, value);
        } else if (key == "mass_kg") {
            c.mass_kg = parse_double(key, value);
        } else if (key == "retraction_mm_s") {
            c.retraction_mm_s = parse_double(key, value);
        } else if (key == "disturbance_fraction") {
            c.disturbance_fraction = parse_double(key, value);
        } else if (key == "disturbance_side") {
            if (value == "left") c.disturbance_side = Side::Left;
            else if (value == "right") c.disturbance_side = Side::Right;
            else throw Error(ErrorKind::InvalidConfig, "unknown side '" + value + "'");
        } else if (key == "seed") {
            std::uint64_t seed = 0;
            auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), seed);
            if (ec != std::errc() || ptr != value.data() + value.size()) {
                throw Error(ErrorKind::InvalidConfig, "bad seed '" + value + "'");
            }
            c.seed = seed;
        } else if (key == "off_grid") {
            c.off_grid = (value == "true" || value == "1");
        } else {
            throw Error(ErrorKind::InvalidConfig, "unknown key '" + key + "'");
        }
    }
    return c;
}

void validate_scenario(const ScenarioConfig& c) {
    auto fail = [](const std::string& what) { throw Error(ErrorKind::InvalidConfig, what); };
    if (c.kind == ScenarioKind::Kinematic) {
        if (!(c.depth_mm >= 0.0) || !(c.speed_mm_s > 0.0)) fail("depth must be >= 0 and speed > 0");
        if (c.off_grid) return;
        if (!on_grid(c.depth_mm, {2.4, 2.6, 2.8, 3.0, 3.2, 3.4})) fail("depth off grid: " + fmt_double(c.depth_mm));
        if (!on_grid(c.speed_mm_s, {0.6, 0.8, 1.0, 1.2, 1.4, 1.6})) fail("speed off grid: " + fmt_double(c.speed_mm_s));
        if (!on_grid(c.direction_deg, {0, 45, 90, 135, 180, 225, 270, 315})) {
            fail("direction off grid: " + fmt_double(c.direction_deg));
        }
    } else {
        if (!(c.mass_kg > 0.0) || !(c.retraction_mm_s > 0.0) || !(c.disturbance_fraction >= 0.0)) {
            fail("mass and retraction must be > 0, disturbance >= 0");
        }
        if (c.off_grid) return;
        if (!on_grid(c.mass_kg, {0.165, 0.205, 0.245})) fail("mass off grid: " + fmt_double(c.mass_kg));
        if (!on_grid(c.retraction_mm_s, {0.3, 0.5, 0.7})) fail("retraction off grid: " + fmt_double(c.retraction_mm_s));
        if (!on_grid(c.disturbance_fraction, {0.0, 0.25, 0.5, 0.75, 1.0})) {
            fail("disturbance off grid: " + fmt_double(c.disturbance_fraction));
        }
    }
}

// ---------------------------------------------------------------------------
// Streams

std::vector<Violation> validate_stream(const EventStream& stream) {
    std::optional<std::size_t> bounds, polarity, order;
    const auto& ev = stream.events;
    for (std::size_t i = 0; i < ev.size(); ++i) {
        if (!bounds && (ev[i].x >= stream.width || ev[i].y >= stream.height)) bounds = i;
        if (!polarity && ev[i].polarity != 1 && ev[i].polarity != -1) polarity = i;
        if (!order && i > 0 && ev[i].t_us < ev[i - 1].t_us) order = i;
    }
    std::vector<Violation> out;
    if (bounds) out.push_back({ViolationKind::OutOfBounds, *bounds});
    if (polarity) out.push_back({ViolationKind::BadPolarity, *polarity});
    if (order) out.push_back({ViolationKind::Unsorted, *order});
    return out;
}

std::vector<unsigned char> encode_events(const Trial& trial) {
    io::ByteWriter w;
    w.buffer().reserve(kEventHeaderBytes + kEventRecordBytes * trial.stream.events.size());
    w.bytes("NTEV");
    w.put<std::uint16_t>(kEventFileVersion);
    w.put<std::uint16_t>(trial.stream.width);
    w.put<std::uint16_t>(trial.stream.height);
    w.put<std::uint64_t>(trial.incipient_onset_us.value_or(kAbsentOnset));
    w.put<std::uint64_t>(trial.gross_onset_us.value_or(kAbsentOnset));
    w.put<std::uint64_t>(trial.stream.events.size());
    for (const Event& e : trial.stream.events) {
        w.put<std::uint64_t>(e.t_us);
        w.put<std::uint16_t>(e.x);
        w.put<std::uint16_t>(e.y);
        w.put<std::int8_t>(e.polarity);
        w.pad(3);
    }
    return std::move(w.buffer());
}

Trial decode_events(const std::vector<unsigned char>& bytes) {
    io::ByteReader r(bytes);
    if (!r.has(kEventHeaderBytes) || r.bytes(4) != "NTEV") {
        throw Error(ErrorKind::MalformedHeader, "missing NTEV magic");
    }
    const auto version = r.get<std::uint16_t>();
    if (version != kEventFileVersion) {
        throw Error(ErrorKind::VersionMismatch, "event file version " + std::to_string(version));
    }
    Trial trial;
    trial.stream.width = r.get<std::uint16_t>();
    trial.stream.height = r.get<std::uint16_t>();
    const auto incipient = r.get<std::uint64_t>();
    const auto gross = r.get<std::uint64_t>();
    const auto count = r.get<std::uint64_t>();
    if (incipient != kAbsentOnset) trial.incipient_onset_us = incipient;
    if (gross != kAbsentOnset) trial.gross_onset_us = gross;
    if (r.remaining() / kEventRecordBytes < count || r.remaining() != count * kEventRecordBytes) {
        throw Error(ErrorKind::MalformedHeader, "event count does not match file size");
    }

    auto& events = trial.stream.events;
    events.resize(static_cast<std::size_t>(count));
    for (std::size_t i = 0; i < events.size(); ++i) {
        Event& e = events[i];
        e.t_us = r.get<std::uint64_t>();
        e.x = r.get<std::uint16_t>();
        e.y = r.get<std::uint16_t>();
        e.polarity = r.get<std::int8_t>();
        r.skip(3);
        if (i > 0 && e.t_us < events[i - 1].t_us) {
            throw Error(ErrorKind::UnsortedTimestamps, "timestamps decrease at record " + std::to_string(i), i);
        }
        if (e.x >= trial.stream.width || e.y >= trial.stream.height) {
            throw Error(ErrorKind::OutOfBounds, "record " + std::to_string(i) + " outside sensor", i);
        }
        if (e.polarity != 1 && e.polarity != -1) {
            throw Error(ErrorKind::BadPolarity, "record " + std::to_string(i) + " has polarity " +
                                                    std::to_string(e.polarity), i);
        }
    }
    if (trial.incipient_onset_us && trial.gross_onset_us && *trial.incipient_onset_us > *trial.gross_onset_us) {
        throw Error(ErrorKind::OnsetOrder, "incipient onset after gross onset");
    }
    return trial;
}

void save_events(const Trial& trial, const std::filesystem::path& path) {
    io::write_file(path, encode_events(trial));
}

Trial load_events(const std::filesystem::path& path) {
    return decode_events(io::read_file(path));
}

} // namespace slipnet
