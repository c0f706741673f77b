#include "lissm/features.hpp"

#include "lissm/error.hpp"

#include <algorithm>
#include <cmath>

namespace lissm {

void ChargeCycleRecord::validate() const {
    const std::string where = "cycle " + std::to_string(cycle_index);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].capacity_ah < 0.0) throw DataError(where + ": negative capacity at sample " + std::to_string(i));
        if (i == 0) continue;
        if (!(samples[i].time_h > samples[i - 1].time_h)) {
            throw DataError(where + ": time not strictly increasing at sample " + std::to_string(i));
        }
        if (samples[i].capacity_ah < samples[i - 1].capacity_ah) {
            throw DataError(where + ": capacity decreases at sample " + std::to_string(i));
        }
    }
}

std::array<double, CycleFeatures::kSize> CycleFeatures::to_array() const {
    return {omega, b, temperature_c, resistance_ohm, charge_time_h, dqdv_max, dqdv_min, dqdv_var};
}

void DischargeRecord::validate() const {
    if (!(nominal_capacity_ah > 0.0)) throw DomainError("nominal capacity must be positive");
    if (!(soc_initial >= 0.0 && soc_initial <= 1.0)) throw DomainError("initial SOC must lie in [0, 1]");
    for (std::size_t i = 1; i < samples.size(); ++i) {
        if (!(samples[i].time_h > samples[i - 1].time_h)) {
            throw DataError("discharge time not strictly increasing at sample " + std::to_string(i));
        }
    }
}

IcFit fit_ic_recurrence(const std::vector<ChargeSample>& samples) {
    if (samples.size() < 3) {
        throw InsufficientDataError("IC fit needs at least 3 samples, got " + std::to_string(samples.size()));
    }
    // Regress y_i = Q_{i+1} - Q_i on u_i = -Q_i^2 with an intercept; centered
    // sums keep the 2x2 normal equations well conditioned.
    const std::size_t m = samples.size() - 1;
    double u_mean = 0.0, y_mean = 0.0, u_scale = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double q = samples[i].capacity_ah;
        u_mean += -q * q;
        y_mean += samples[i + 1].capacity_ah - q;
        u_scale = std::max(u_scale, q * q);
    }
    u_mean /= static_cast<double>(m);
    y_mean /= static_cast<double>(m);
    double suu = 0.0, suy = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double q = samples[i].capacity_ah;
        const double du = -q * q - u_mean;
        suu += du * du;
        suy += du * (samples[i + 1].capacity_ah - q - y_mean);
    }
    const double tiny = 1e-14 * u_scale;
    if (suu <= static_cast<double>(m) * tiny * tiny) {
        throw RankDeficiencyError("IC fit: Q_i^2 is constant across the charge");
    }
    const double omega = suy / suu;
    return IcFit{omega, y_mean - omega * u_mean};
}

std::vector<std::pair<double, double>> dqdv_curve(const std::vector<ChargeSample>& samples,
                                                  std::size_t smoothing_window) {
    if (smoothing_window == 0 || smoothing_window % 2 == 0) {
        throw DomainError("dQ/dV smoothing window must be a positive odd integer");
    }
    std::vector<std::pair<double, double>> vq;  // (V, Q)
    vq.reserve(samples.size());
    for (const auto& s : samples) vq.emplace_back(s.voltage_v, s.capacity_ah);
    std::stable_sort(vq.begin(), vq.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

    std::vector<double> volts, caps;
    for (std::size_t i = 0; i < vq.size();) {
        std::size_t j = i;
        double v_sum = 0.0, q_sum = 0.0;
        while (j < vq.size() && vq[j].first - vq[i].first < kVoltageMergeTolerance) {
            v_sum += vq[j].first;
            q_sum += vq[j].second;
            ++j;
        }
        const double count = static_cast<double>(j - i);
        volts.push_back(v_sum / count);
        caps.push_back(q_sum / count);
        i = j;
    }
    const std::size_t n = volts.size();
    if (n < 2) throw DegenerateCurveError("dQ/dV: fewer than two distinct voltages");

    std::vector<double> raw(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i ? i - 1 : 0;
        const std::size_t hi = i + 1 < n ? i + 1 : n - 1;
        raw[i] = (caps[hi] - caps[lo]) / (volts[hi] - volts[lo]);
    }

    const std::size_t half = smoothing_window / 2;
    std::vector<std::pair<double, double>> curve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i >= half ? i - half : 0;
        const std::size_t hi = std::min(n - 1, i + half);
        double acc = 0.0;
        for (std::size_t j = lo; j <= hi; ++j) acc += raw[j];
        curve[i] = {volts[i], acc / static_cast<double>(hi - lo + 1)};
    }
    return curve;
}

DqdvStats dqdv_stats(const std::vector<ChargeSample>& samples, std::size_t smoothing_window) {
    const auto curve = dqdv_curve(samples, smoothing_window);
    DqdvStats s{curve.front().second, curve.front().second, 0.0};
    double mean = 0.0;
    for (const auto& [v, g] : curve) {
        s.max = std::max(s.max, g);
        s.min = std::min(s.min, g);
        mean += g;
    }
    mean /= static_cast<double>(curve.size());
    for (const auto& [v, g] : curve) s.var += (g - mean) * (g - mean);
    s.var /= static_cast<double>(curve.size());
    return s;
}

CycleFeatures build_cycle_features(const ChargeCycleRecord& rec, std::size_t smoothing_window) {
    rec.validate();
    const IcFit fit = fit_ic_recurrence(rec.samples);
    const DqdvStats stats = dqdv_stats(rec.samples, smoothing_window);
    CycleFeatures f;
    f.omega = fit.omega;
    f.b = fit.b;
    f.temperature_c = rec.avg_temperature_c;
    f.resistance_ohm = rec.internal_resistance_ohm;
    f.charge_time_h = rec.samples.back().time_h - rec.samples.front().time_h;
    f.dqdv_max = stats.max;
    f.dqdv_min = stats.min;
    f.dqdv_var = stats.var;
    return f;
}

double soh(double cycle_capacity_ah, double nominal_capacity_ah) {
    if (!(nominal_capacity_ah > 0.0)) throw DomainError("SOH: nominal capacity must be positive");
    if (cycle_capacity_ah < 0.0) throw DomainError("SOH: cycle capacity must be nonnegative");
    return cycle_capacity_ah / nominal_capacity_ah;
}

std::optional<std::vector<int>> rul_labels(const std::vector<double>& soh_series, double threshold) {
    if (soh_series.empty()) throw InsufficientDataError("RUL labels need a nonempty SOH series");
    const auto eol = std::find_if(soh_series.begin(), soh_series.end(),
                                  [threshold](double s) { return s < threshold; });
    if (eol == soh_series.end()) return std::nullopt;
    const auto k_eol = static_cast<int>(eol - soh_series.begin());
    std::vector<int> rul(soh_series.size());
    for (std::size_t k = 0; k < rul.size(); ++k) rul[k] = std::max(0, k_eol - static_cast<int>(k));
    return rul;
}

std::vector<double> coulomb_count(const DischargeRecord& rec, bool clamp) {
    rec.validate();
    std::vector<double> soc(rec.samples.size());
    double charge = 0.0;
    for (std::size_t i = 0; i < soc.size(); ++i) {
        if (i) {
            const auto& a = rec.samples[i - 1];
            const auto& b = rec.samples[i];
            charge += 0.5 * (a.current_a + b.current_a) * (b.time_h - a.time_h);
        }
        soc[i] = rec.soc_initial - charge / rec.nominal_capacity_ah;
        if (clamp) soc[i] = std::clamp(soc[i], 0.0, 1.0);
    }
    return soc;
}

DenseArray step_features(const DischargeRecord& rec) {
    if (rec.samples.empty()) throw InsufficientDataError("step features need at least one sample");
    DenseArray out(Shape{rec.samples.size(), 3});
    for (std::size_t i = 0; i < rec.samples.size(); ++i) {
        out.at(i, 0) = rec.samples[i].current_a;
        out.at(i, 1) = rec.samples[i].voltage_v;
        out.at(i, 2) = rec.samples[i].temperature_c;
    }
    return out;
}

} // namespace lissm
