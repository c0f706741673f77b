#pragma once

#include "lissm/numerics.hpp"

#include <array>
#include <optional>
#include <vector>

namespace lissm {

struct ChargeSample {
    double time_h = 0.0;
    double capacity_ah = 0.0;
    double voltage_v = 0.0;
};

struct ChargeCycleRecord {
    int cycle_index = 1;
    std::vector<ChargeSample> samples;
    double avg_temperature_c = 0.0;
    double internal_resistance_ohm = 0.0;
    double cycle_capacity_ah = 0.0;

    // Strictly increasing time, capacity nonnegative and nondecreasing.
    void validate() const;
};

/// Per-cycle feature vector, fixed order:
/// [omega, b, T, r, tau, dqdv_max, dqdv_min, dqdv_var].
struct CycleFeatures {
    static constexpr std::size_t kSize = 8;

    double omega = 0.0;
    double b = 0.0;
    double temperature_c = 0.0;
    double resistance_ohm = 0.0;
    double charge_time_h = 0.0;
    double dqdv_max = 0.0;
    double dqdv_min = 0.0;
    double dqdv_var = 0.0;

    std::array<double, kSize> to_array() const;
};

struct DischargeSample {
    double time_h = 0.0;
    double current_a = 0.0;  // positive while discharging
    double voltage_v = 0.0;
    double temperature_c = 0.0;
};

struct DischargeRecord {
    std::vector<DischargeSample> samples;
    double nominal_capacity_ah = 1.0;
    double soc_initial = 1.0;

    void validate() const;
};

struct IcFit {
    double omega = 0.0;
    double b = 0.0;
};

/// Least-squares fit of Q_{i+1} - Q_i = -omega Q_i^2 + b over consecutive samples.
IcFit fit_ic_recurrence(const std::vector<ChargeSample>& samples);

struct DqdvStats {
    double max = 0.0;
    double min = 0.0;
    double var = 0.0;
};

inline constexpr double kVoltageMergeTolerance = 1e-6;

/// Incremental-capacity statistics: samples sorted by voltage, near-equal
/// voltages merged, central differences of Q against V, then a centered
/// moving average of odd width truncated at the ends.
DqdvStats dqdv_stats(const std::vector<ChargeSample>& samples, std::size_t smoothing_window = 5);
/// The smoothed dQ/dV curve itself, as (voltage, dqdv) pairs.
std::vector<std::pair<double, double>> dqdv_curve(const std::vector<ChargeSample>& samples,
                                                  std::size_t smoothing_window = 5);

CycleFeatures build_cycle_features(const ChargeCycleRecord& rec, std::size_t smoothing_window = 5);

double soh(double cycle_capacity_ah, double nominal_capacity_ah);

inline constexpr double kDefaultEolThreshold = 0.8;

/// RUL per cycle relative to the first cycle whose SOH falls below the
/// threshold; 0 from that cycle on. nullopt when the threshold is never crossed.
std::optional<std::vector<int>> rul_labels(const std::vector<double>& soh_series,
                                           double threshold = kDefaultEolThreshold);

/// SOC_i = SOC_0 - (1/Q_N) * trapezoid integral of current up to sample i.
std::vector<double> coulomb_count(const DischargeRecord& rec, bool clamp = false);

/// [L, 3] matrix with columns [I, V, T].
DenseArray step_features(const DischargeRecord& rec);

} // namespace lissm
