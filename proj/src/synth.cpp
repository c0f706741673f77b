#include "lissm/dataset_io.hpp"
#include "lissm/error.hpp"

#include "csv.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <fstream>

namespace lissm {

namespace fs = std::filesystem;

namespace {

// Open-circuit voltage of the synthetic cell as a function of SOC.
double open_circuit_voltage(double soc) { return 3.3 + 0.75 * soc + 0.1 * std::tanh(6.0 * (soc - 0.5)); }

// Charge voltage as a function of charged capacity (fraction of Q_N).
double charge_voltage(double fraction) { return 3.4 + 0.6 * fraction + 0.08 * std::tanh(8.0 * (fraction - 0.45)); }

double resistance_at(double temperature_c) { return 0.05 * std::exp(-0.02 * (temperature_c - 25.0)); }

struct ProfileShape {
    std::size_t knot_every;
    std::vector<double> levels;  // in units of Q_N amperes (C-rate)
};

ProfileShape profile_shape(const std::string& name, std::size_t n_samples, Rng& rng) {
    ProfileShape shape;
    if (name == "DST") {
        // Stepped pulses with plateaus: each level is held across two knots.
        static const double pattern[] = {0.0, 0.25, 0.5, 1.0, -0.25, 0.75, 0.5, 0.0};
        shape.knot_every = 4;
        const std::size_t knots = (n_samples - 1) / shape.knot_every + 2;
        const std::size_t phase = rng.below(std::size(pattern));
        for (std::size_t j = 0; j < knots; ++j) shape.levels.push_back(pattern[(j / 2 + phase) % std::size(pattern)]);
        return shape;
    }
    double lo = -0.25, hi = 1.25;
    shape.knot_every = 3;
    if (name == "US06") {
        lo = -0.75;
        hi = 2.0;
        shape.knot_every = 2;
    }
    const std::size_t knots = (n_samples - 1) / shape.knot_every + 2;
    for (std::size_t j = 0; j < knots; ++j) shape.levels.push_back(rng.uniform(lo, hi));
    return shape;
}

SynthCell make_cell(const SynthSpec& spec, std::size_t c, Rng& rng) {
    SynthCell cell;
    cell.name = "cell" + std::to_string(c);
    const double q_n = spec.nominal_capacity_ah;
    const double fade = spec.fade_rate * (1.0 + 0.2 * static_cast<double>(c));
    const double omega0 = spec.omega0 * (1.0 + 0.1 * static_cast<double>(c));
    for (std::size_t k = 1; k <= spec.n_cycles; ++k) {
        const double kd = static_cast<double>(k);
        ChargeCycleRecord rec;
        rec.cycle_index = static_cast<int>(k);
        rec.cycle_capacity_ah = std::max(0.0, q_n * (1.0 - fade * kd));
        rec.avg_temperature_c = spec.temperature_c + spec.temperature_jitter_c * rng.normal();
        rec.internal_resistance_ohm = spec.resistance0_ohm * (1.0 + spec.resistance_growth * kd);
        const double omega = omega0 + spec.omega_drift * kd;
        const double b = spec.b0 + spec.b_drift * kd;
        const double dt = spec.charge_dt_h * std::max(0.2, rec.cycle_capacity_ah / q_n);
        double q = 0.0;
        for (std::size_t i = 0; i < spec.ic_samples; ++i) {
            rec.samples.push_back({static_cast<double>(i) * dt, q, charge_voltage(q / q_n)});
            q = q - omega * q * q + b + spec.noise.sigma * rng.normal();
        }
        cell.truth.push_back({rec.cycle_index, omega, b, rec.cycle_capacity_ah / q_n, -1, rec.avg_temperature_c,
                              rec.internal_resistance_ohm, rec.samples.back().time_h - rec.samples.front().time_h});
        cell.cycles.push_back(std::move(rec));
    }
    std::size_t eol = cell.truth.size();
    for (std::size_t k = 0; k < cell.truth.size(); ++k) {
        if (cell.truth[k].soh < 0.8) {
            eol = k;
            break;
        }
    }
    if (eol < cell.truth.size()) {
        for (std::size_t k = 0; k < cell.truth.size(); ++k) cell.truth[k].rul = k < eol ? static_cast<int>(eol - k) : 0;
    }
    return cell;
}

SynthProfile make_profile(const SynthSpec& spec, const std::string& name, std::size_t run, Rng& rng) {
    const std::size_t n = spec.discharge_samples;
    const ProfileShape shape = profile_shape(name, n, rng);
    const double q_n = spec.nominal_capacity_ah;
    const double seg_h = static_cast<double>(shape.knot_every) * spec.discharge_dt_h;
    auto level = [&](std::size_t j) { return shape.levels[j] * q_n; };

    SynthProfile p;
    p.name = name;
    p.run = run;
    p.record.nominal_capacity_ah = q_n;
    p.record.soc_initial = spec.soc_initial - spec.soc_step * static_cast<double>(run);
    double full_segments_charge = 0.0;
    double heat = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i / shape.knot_every;
        const std::size_t within = i - j * shape.knot_every;
        if (within == 0 && j > 0) full_segments_charge += 0.5 * (level(j - 1) + level(j)) * seg_h;
        const double frac = static_cast<double>(within) / static_cast<double>(shape.knot_every);
        const double current = level(j) + (level(j + 1) - level(j)) * frac;
        // exact integral of the linear segment from its start to this sample
        const double tau = static_cast<double>(within) * spec.discharge_dt_h;
        const double partial = level(j) * tau + (level(j + 1) - level(j)) * tau * tau / (2.0 * seg_h);
        const double soc = p.record.soc_initial - (full_segments_charge + partial) / q_n;
        if (soc < spec.soc_floor) break;
        p.soc_truth.push_back(soc);

        heat = 0.98 * heat + 0.05 * current * current;
        const double temperature = spec.temperature_c + heat + spec.temperature_jitter_c * rng.normal();
        const double voltage = open_circuit_voltage(soc) - current * resistance_at(temperature) +
                               spec.voltage_noise_v * rng.normal();
        p.record.samples.push_back({static_cast<double>(i) * spec.discharge_dt_h, current, voltage, temperature});
    }
    return p;
}

} // namespace

void SynthSpec::validate() const {
    if (!(nominal_capacity_ah > 0.0)) throw ConfigError("synth: nominal_capacity_ah must be positive");
    if (!(fade_rate >= 0.0)) throw ConfigError("synth: fade_rate must be >= 0");
    if (!(noise.sigma >= 0.0)) throw ConfigError("synth: noise sigma must be >= 0");
    if (n_cells < 1 || n_cycles < 1) throw ConfigError("synth: need at least one cell and one cycle");
    if (ic_samples < 3) throw ConfigError("synth: ic_samples must be >= 3");
    if (discharge_samples < 2) throw ConfigError("synth: discharge_samples must be >= 2");
    if (!(charge_dt_h > 0.0) || !(discharge_dt_h > 0.0)) throw ConfigError("synth: time steps must be positive");
    if (runs_per_profile < 1) throw ConfigError("synth: runs_per_profile must be >= 1");
    const double last_soc = soc_initial - soc_step * static_cast<double>(runs_per_profile - 1);
    if (!(soc_initial <= 1.0 && last_soc >= 0.0)) {
        throw ConfigError("synth: every run must start with SOC in [0, 1]");
    }
    if (!(soc_floor < last_soc)) throw ConfigError("synth: soc_floor must lie below every starting SOC");
    if (profiles.empty()) throw ConfigError("synth: need at least one discharge profile");
}

double temperature_from_tag(const std::string& tag) {
    std::string digits = tag;
    if (!digits.empty() && (digits.back() == 'C' || digits.back() == 'c')) digits.pop_back();
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
    if (ec != std::errc() || ptr != digits.data() + digits.size() || digits.empty()) {
        throw ConfigError("bad temperature tag '" + tag + "' (expected e.g. 25C)");
    }
    return v;
}

SynthDataset synthesize(const SynthSpec& spec) {
    spec.validate();
    Rng master(spec.seed);
    SynthDataset data;
    for (std::size_t c = 0; c < spec.n_cells; ++c) {
        Rng rng(master.next());
        data.cells.push_back(make_cell(spec, c, rng));
    }
    for (const auto& name : spec.profiles) {
        for (std::size_t r = 0; r < spec.runs_per_profile; ++r) {
            Rng rng(master.next());
            data.profiles.push_back(make_profile(spec, name, r, rng));
        }
    }
    return data;
}

void write_dataset(const fs::path& dir, const SynthDataset& data, const SynthSpec& spec) {
    fs::create_directories(dir);
    for (const auto& cell : data.cells) {
        write_cycles(dir / ("cycles_" + cell.name + ".csv"), cell.cycles,
                     {{"cell", cell.name}, {"q_n_ah", format_double(spec.nominal_capacity_ah)}});
        std::ofstream out(dir / ("truth_cycles_" + cell.name + ".csv"), std::ios::binary | std::ios::trunc);
        out << "cycle_index,omega,b,soh,rul,temperature_c,resistance_ohm,charge_time_h\n";
        for (const auto& t : cell.truth) {
            out << t.cycle_index << ',' << format_double(t.omega) << ',' << format_double(t.b) << ','
                << format_double(t.soh) << ',' << t.rul << ',' << format_double(t.temperature_c) << ','
                << format_double(t.resistance_ohm) << ',' << format_double(t.charge_time_h) << '\n';
        }
    }
    for (const auto& p : data.profiles) {
        const std::string stem = p.name + "_run" + std::to_string(p.run);
        write_discharge(dir / ("discharge_" + stem + ".csv"), p.record,
                        {{"profile", p.name}, {"run", std::to_string(p.run)},
                         {"temperature_c", format_double(spec.temperature_c)}});
        std::ofstream out(dir / ("truth_soc_" + stem + ".csv"), std::ios::binary | std::ios::trunc);
        out << "time_h,soc\n";
        for (std::size_t i = 0; i < p.soc_truth.size(); ++i) {
            out << format_double(p.record.samples[i].time_h) << ',' << format_double(p.soc_truth[i]) << '\n';
        }
    }
    nlohmann::json j;
    j["seed"] = spec.seed;
    j["n_cells"] = spec.n_cells;
    j["n_cycles"] = spec.n_cycles;
    j["nominal_capacity_ah"] = spec.nominal_capacity_ah;
    j["fade_rate"] = spec.fade_rate;
    j["omega0"] = spec.omega0;
    j["omega_drift"] = spec.omega_drift;
    j["b0"] = spec.b0;
    j["b_drift"] = spec.b_drift;
    j["noise_sigma"] = spec.noise.sigma;
    j["ic_samples"] = spec.ic_samples;
    j["charge_dt_h"] = spec.charge_dt_h;
    j["profiles"] = spec.profiles;
    j["runs_per_profile"] = spec.runs_per_profile;
    j["soc_step"] = spec.soc_step;
    j["discharge_samples"] = spec.discharge_samples;
    j["discharge_dt_h"] = spec.discharge_dt_h;
    j["soc_floor"] = spec.soc_floor;
    j["soc_initial"] = spec.soc_initial;
    j["temperature_c"] = spec.temperature_c;
    std::ofstream(dir / "synth_spec.json", std::ios::binary | std::ios::trunc) << j.dump(2) << '\n';
}

std::vector<SynthCycleTruth> load_cycle_truth(const fs::path& path) {
    const csv::Table t = csv::read(path);
    const std::size_t ck = t.column("cycle_index"), co = t.column("omega"), cb = t.column("b"), cs = t.column("soh"),
                      cr = t.column("rul"), ct = t.column("temperature_c"), cres = t.column("resistance_ohm"),
                      ctau = t.column("charge_time_h");
    std::vector<SynthCycleTruth> out;
    for (const auto& row : t.rows) {
        out.push_back({static_cast<int>(t.integer(row, ck)), t.number(row, co), t.number(row, cb), t.number(row, cs),
                       static_cast<int>(t.integer(row, cr)), t.number(row, ct), t.number(row, cres),
                       t.number(row, ctau)});
    }
    return out;
}

std::vector<double> load_soc_truth(const fs::path& path) {
    const csv::Table t = csv::read(path);
    const std::size_t cs = t.column("soc");
    std::vector<double> out;
    for (const auto& row : t.rows) out.push_back(t.number(row, cs));
    return out;
}

} // namespace lissm
