#pragma once

#include "lissm/features.hpp"
#include "lissm/model.hpp"
#include "lissm/training.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lissm {

// CSV dialect: UTF-8, comma separated, dot decimal, one header row. Lines
// starting with '#' before the header carry `key=value` metadata.

/// Shortest decimal text that parses back to the identical double.
std::string format_double(double v);

using Metadata = std::map<std::string, std::string>;

inline const std::vector<std::string> kCycleColumns = {
    "cycle_index", "time_h", "capacity_ah", "voltage_v", "avg_temp_c", "internal_resistance_ohm",
    "cycle_capacity_ah"};
inline const std::vector<std::string> kDischargeColumns = {"time_h", "current_a", "voltage_v", "temp_c"};

/// Records grouped by cycle_index (ascending), samples in file order.
std::vector<ChargeCycleRecord> load_cycles(const std::filesystem::path& path);
Metadata load_metadata(const std::filesystem::path& path);
DischargeRecord load_discharge(const std::filesystem::path& path);

void write_cycles(const std::filesystem::path& path, const std::vector<ChargeCycleRecord>& records,
                  const Metadata& meta = {});
void write_discharge(const std::filesystem::path& path, const DischargeRecord& rec, const Metadata& extra = {});

// ---- splits -------------------------------------------------------------

enum class Role { Train, Test };

struct ManifestEntry {
    std::filesystem::path path;
    std::string group;
    Role role = Role::Train;
};

struct DatasetManifest {
    Task task = Task::Soc;
    std::vector<ManifestEntry> files;
    std::optional<std::string> temperature_tag;
    std::optional<std::size_t> window_len;     // SOC training windows
    std::optional<std::size_t> window_stride;  // defaults to window_len (non-overlapping)
    double eol_threshold = kDefaultEolThreshold;
    std::size_t smoothing_window = 5;

    void validate() const;
};

/// `test_group` is the test set and every other group trains.
DatasetManifest leave_one_out(Task task, const std::map<std::string, std::vector<std::filesystem::path>>& groups,
                              const std::string& test_group);

/// Groups data files in `dir` by name: `<prefix><group>.csv` or
/// `<prefix><group>_run<k>.csv`. Paths within a group are sorted.
std::map<std::string, std::vector<std::filesystem::path>> discover_groups(const std::filesystem::path& dir,
                                                                          const std::string& prefix);

/// [start, stop) bounds of the windows cut from a sequence of length len.
std::vector<std::pair<std::size_t, std::size_t>> window_bounds(std::size_t len, std::size_t window_len,
                                                               std::size_t stride);

struct Splits {
    std::vector<LabeledSequence> train;
    std::vector<LabeledSequence> test;
};

/// SOC: each discharge file becomes a sequence of [I, V, T] steps labelled by
/// coulomb counting. Training files are cut into windows when window_len is
/// set; test files are kept whole.
Splits make_soc_splits(const DatasetManifest& manifest);

/// RUL/SOH: each cycle file (one cell) becomes one sequence of 8-dim cycle
/// features labelled per cycle. Requires `# q_n_ah=` metadata in the file.
Splits make_cycle_splits(const DatasetManifest& manifest);

Splits make_splits(const DatasetManifest& manifest);

// ---- checkpoints --------------------------------------------------------

struct Checkpoint {
    ModelConfig config;
    ModelParameters params;
};

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg, const ModelParameters& p);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Loads and checks every tensor against `expected`; a mismatch names the tensor.
ModelParameters load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

void save_normalizer(const std::filesystem::path& path, const Normalizer& norm);
Normalizer load_normalizer(const std::filesystem::path& path);

// ---- synthetic data -----------------------------------------------------

struct NoiseSpec {
    double sigma = 0.0;  // std of the additive term in the IC recurrence
};

struct SynthSpec {
    std::uint64_t seed = 0;
    // cycling
    std::size_t n_cells = 3;
    std::size_t n_cycles = 120;
    double nominal_capacity_ah = 2.0;
    double fade_rate = 0.0025;        // fraction of Q_N lost per cycle (cell 0)
    double omega0 = 1e-3;
    double omega_drift = 2e-5;        // per cycle
    double b0 = 0.05;
    double b_drift = -1e-4;           // per cycle
    NoiseSpec noise;
    std::size_t ic_samples = 60;
    double charge_dt_h = 0.025;
    double resistance0_ohm = 0.05;
    double resistance_growth = 0.004;  // relative, per cycle
    // discharging
    std::vector<std::string> profiles = {"DST", "FUDS", "US06"};
    std::size_t runs_per_profile = 24;  // run r starts at soc_initial - soc_step * r
    std::size_t discharge_samples = 1200;  // upper bound; a run ends once SOC drops below soc_floor
    double discharge_dt_h = 1.0 / 120.0;
    double soc_floor = 0.1;
    double soc_initial = 1.0;
    double soc_step = 0.025;
    double voltage_noise_v = 0.002;
    // environment
    double temperature_c = 25.0;
    double temperature_jitter_c = 0.3;

    void validate() const;
};

/// Map a temperature tag such as "0C", "25C" or "50C" to degrees Celsius.
double temperature_from_tag(const std::string& tag);

struct SynthCycleTruth {
    int cycle_index = 0;
    double omega = 0.0;
    double b = 0.0;
    double soh = 0.0;
    int rul = -1;  // -1: end of life not reached within the simulated cycles
    double temperature_c = 0.0;
    double resistance_ohm = 0.0;
    double charge_time_h = 0.0;
};

struct SynthCell {
    std::string name;
    std::vector<ChargeCycleRecord> cycles;
    std::vector<SynthCycleTruth> truth;
};

struct SynthProfile {
    std::string name;  // profile group, e.g. "FUDS"
    std::size_t run = 0;
    DischargeRecord record;
    std::vector<double> soc_truth;  // closed-form integral of the current schedule
};

struct SynthDataset {
    std::vector<SynthCell> cells;
    std::vector<SynthProfile> profiles;
};

/// Deterministic in the seed. Capacity fades linearly; IC curves iterate the
/// quadratic increment recurrence from Q = 0; discharge currents follow a
/// piecewise-linear schedule with knots on the sample grid.
SynthDataset synthesize(const SynthSpec& spec);

/// Writes cycles_<cell>.csv, truth_cycles_<cell>.csv,
/// discharge_<profile>_run<r>.csv and truth_soc_<profile>_run<r>.csv under `dir`.
void write_dataset(const std::filesystem::path& dir, const SynthDataset& data, const SynthSpec& spec);

std::vector<SynthCycleTruth> load_cycle_truth(const std::filesystem::path& path);
std::vector<double> load_soc_truth(const std::filesystem::path& path);

} // namespace lissm
