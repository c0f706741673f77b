#include "lissm/dataset_io.hpp"

#include "csv.hpp"
#include "lissm/error.hpp"

#include <charconv>
#include <algorithm>
#include <fstream>
#include <set>

namespace lissm {

namespace fs = std::filesystem;

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

namespace {

double parse_meta_number(const fs::path& path, const Metadata& meta, const std::string& key) {
    const auto it = meta.find(key);
    if (it == meta.end()) throw SchemaError(path.string() + ": missing metadata line '# " + key + "='");
    double v = 0.0;
    const auto& s = it->second;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw DataError(path.string() + ": metadata " + key + " is not a number: '" + s + "'");
    }
    return v;
}

std::ofstream open_for_write(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(path.string() + ": cannot open for writing");
    return out;
}

void write_meta(std::ostream& out, const Metadata& meta) {
    for (const auto& [k, v] : meta) out << "# " << k << '=' << v << '\n';
}

LabeledSequence discharge_sequence(const DischargeRecord& rec,
                                   const std::vector<double>& soc, std::size_t start, std::size_t stop,
                                   const std::string& id) {
    LabeledSequence seq;
    seq.id = id;
    seq.unit = TargetUnit::Fraction;
    const DenseArray all = step_features(rec);
    const std::size_t len = stop - start;
    seq.features = DenseArray(Shape{len, 3},
                              std::vector<double>(all.values().begin() + static_cast<std::ptrdiff_t>(start * 3),
                                                  all.values().begin() + static_cast<std::ptrdiff_t>(stop * 3)));
    seq.targets = DenseArray(Shape{len}, std::vector<double>(soc.begin() + static_cast<std::ptrdiff_t>(start),
                                                             soc.begin() + static_cast<std::ptrdiff_t>(stop)));
    return seq;
}

std::string sequence_id(const ManifestEntry& e) { return e.group + "/" + e.path.filename().string(); }

} // namespace

std::vector<ChargeCycleRecord> load_cycles(const fs::path& path) {
    const csv::Table t = csv::read(path);
    std::vector<std::size_t> col;
    for (const auto& name : kCycleColumns) col.push_back(t.column(name));

    std::map<long long, ChargeCycleRecord> by_cycle;
    std::map<long long, std::size_t> first_row;
    for (const auto& row : t.rows) {
        const long long k = t.integer(row, col[0]);
        const std::string locus = path.string() + ": row " + std::to_string(row.line) + ": cycle " + std::to_string(k);
        if (k < 1) throw DataError(locus + ": cycle_index must be >= 1");
        ChargeSample s{t.number(row, col[1]), t.number(row, col[2]), t.number(row, col[3])};
        const double temp = t.number(row, col[4]), res = t.number(row, col[5]), cap = t.number(row, col[6]);
        auto [it, inserted] = by_cycle.try_emplace(k);
        ChargeCycleRecord& rec = it->second;
        if (inserted) {
            rec.cycle_index = static_cast<int>(k);
            rec.avg_temperature_c = temp;
            rec.internal_resistance_ohm = res;
            rec.cycle_capacity_ah = cap;
            first_row[k] = row.line;
        } else if (temp != rec.avg_temperature_c || res != rec.internal_resistance_ohm || cap != rec.cycle_capacity_ah) {
            throw DataError(locus + ": per-cycle fields differ from row " + std::to_string(first_row[k]));
        }
        if (s.capacity_ah < 0.0) throw DataError(locus + ": negative capacity");
        if (!rec.samples.empty()) {
            const ChargeSample& prev = rec.samples.back();
            if (!(s.time_h > prev.time_h)) throw DataError(locus + ": time not strictly increasing within cycle");
            if (s.capacity_ah < prev.capacity_ah) throw DataError(locus + ": capacity decreases within cycle");
        }
        rec.samples.push_back(s);
    }
    std::vector<ChargeCycleRecord> out;
    out.reserve(by_cycle.size());
    for (auto& [k, rec] : by_cycle) out.push_back(std::move(rec));
    return out;
}

Metadata load_metadata(const fs::path& path) { return csv::read(path).meta; }

DischargeRecord load_discharge(const fs::path& path) {
    const csv::Table t = csv::read(path);
    std::vector<std::size_t> col;
    for (const auto& name : kDischargeColumns) col.push_back(t.column(name));
    DischargeRecord rec;
    rec.nominal_capacity_ah = parse_meta_number(path, t.meta, "q_n_ah");
    rec.soc_initial = parse_meta_number(path, t.meta, "soc_0");
    if (!(rec.nominal_capacity_ah > 0.0)) {
        throw DomainError(path.string() + ": q_n_ah must be positive, got " + t.meta.at("q_n_ah"));
    }
    if (!(rec.soc_initial >= 0.0 && rec.soc_initial <= 1.0)) {
        throw DomainError(path.string() + ": soc_0 must lie in [0, 1], got " + t.meta.at("soc_0"));
    }
    for (const auto& row : t.rows) {
        DischargeSample s{t.number(row, col[0]), t.number(row, col[1]), t.number(row, col[2]), t.number(row, col[3])};
        if (!rec.samples.empty() && !(s.time_h > rec.samples.back().time_h)) {
            throw DataError(path.string() + ": row " + std::to_string(row.line) +
                            (s.time_h == rec.samples.back().time_h ? ": duplicate timestamp" : ": time goes backwards"));
        }
        rec.samples.push_back(s);
    }
    return rec;
}

void write_cycles(const fs::path& path, const std::vector<ChargeCycleRecord>& records, const Metadata& meta) {
    std::ofstream out = open_for_write(path);
    write_meta(out, meta);
    for (std::size_t i = 0; i < kCycleColumns.size(); ++i) out << (i ? "," : "") << kCycleColumns[i];
    out << '\n';
    for (const auto& rec : records) {
        for (const auto& s : rec.samples) {
            out << rec.cycle_index << ',' << format_double(s.time_h) << ',' << format_double(s.capacity_ah) << ','
                << format_double(s.voltage_v) << ',' << format_double(rec.avg_temperature_c) << ','
                << format_double(rec.internal_resistance_ohm) << ',' << format_double(rec.cycle_capacity_ah) << '\n';
        }
    }
}

void write_discharge(const fs::path& path, const DischargeRecord& rec, const Metadata& extra) {
    std::ofstream out = open_for_write(path);
    Metadata meta = extra;
    meta["q_n_ah"] = format_double(rec.nominal_capacity_ah);
    meta["soc_0"] = format_double(rec.soc_initial);
    write_meta(out, meta);
    out << "time_h,current_a,voltage_v,temp_c\n";
    for (const auto& s : rec.samples) {
        out << format_double(s.time_h) << ',' << format_double(s.current_a) << ',' << format_double(s.voltage_v)
            << ',' << format_double(s.temperature_c) << '\n';
    }
}

void DatasetManifest::validate() const {
    bool has_train = false, has_test = false;
    std::map<std::string, Role> group_role;
    std::map<fs::path, Role> path_role;
    for (const auto& e : files) {
        (e.role == Role::Train ? has_train : has_test) = true;
        const auto [g, new_group] = group_role.try_emplace(e.group, e.role);
        if (!new_group && g->second != e.role) {
            throw ConfigError("group '" + e.group + "' is marked both train and test");
        }
        const auto [p, new_path] = path_role.try_emplace(e.path, e.role);
        if (!new_path && p->second != e.role) {
            throw ConfigError("file '" + e.path.string() + "' is marked both train and test");
        }
    }
    if (!has_train || !has_test) throw ConfigError("manifest needs at least one train and one test file");
    if (window_len && *window_len < 2) throw ConfigError("window_len must be >= 2");
    if (window_stride && (*window_stride < 1 || !window_len)) {
        throw ConfigError("window_stride requires window_len and must be >= 1");
    }
    if (smoothing_window == 0 || smoothing_window % 2 == 0) throw ConfigError("smoothing_window must be odd");
}

DatasetManifest leave_one_out(Task task, const std::map<std::string, std::vector<fs::path>>& groups,
                              const std::string& test_group) {
    if (!groups.contains(test_group)) throw ConfigError("unknown test group '" + test_group + "'");
    DatasetManifest m;
    m.task = task;
    for (const auto& [name, paths] : groups)
        for (const auto& path : paths) m.files.push_back({path, name, name == test_group ? Role::Test : Role::Train});
    return m;
}

std::map<std::string, std::vector<fs::path>> discover_groups(const fs::path& dir, const std::string& prefix) {
    if (!fs::is_directory(dir)) throw ConfigError("data directory '" + dir.string() + "' does not exist");
    std::map<std::string, std::vector<fs::path>> groups;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (!name.starts_with(prefix) || entry.path().extension() != ".csv") continue;
        std::string group = name.substr(prefix.size(), name.size() - prefix.size() - 4);
        const auto run = group.rfind("_run");
        if (run != std::string::npos && run + 4 < group.size() &&
            group.find_first_not_of("0123456789", run + 4) == std::string::npos) {
            group.resize(run);
        }
        if (!group.empty()) groups[group].push_back(entry.path());
    }
    for (auto& [g, paths] : groups) std::sort(paths.begin(), paths.end());
    return groups;
}

std::vector<std::pair<std::size_t, std::size_t>> window_bounds(std::size_t len, std::size_t window_len,
                                                               std::size_t stride) {
    if (window_len < 1 || stride < 1) throw ConfigError("window length and stride must be >= 1");
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t start = 0; start < len; start += stride) {
        const std::size_t stop = std::min(len, start + window_len);
        out.emplace_back(start, stop);
        if (stop == len) break;
    }
    return out;
}

Splits make_soc_splits(const DatasetManifest& manifest) {
    manifest.validate();
    if (manifest.task != Task::Soc) throw ConfigError("make_soc_splits called for a non-SOC manifest");
    Splits out;
    std::set<std::string> ids;
    for (const auto& entry : manifest.files) {
        const DischargeRecord rec = load_discharge(entry.path);
        if (rec.samples.empty()) throw DataError(entry.path.string() + ": no samples");
        const std::vector<double> soc = coulomb_count(rec);
        const std::string base = sequence_id(entry);
        if (entry.role == Role::Test || !manifest.window_len) {
            auto& dst = entry.role == Role::Test ? out.test : out.train;
            dst.push_back(discharge_sequence(rec, soc, 0, rec.samples.size(), base));
        } else {
            const std::size_t stride = manifest.window_stride.value_or(*manifest.window_len);
            std::size_t w = 0;
            for (const auto& [start, stop] : window_bounds(rec.samples.size(), *manifest.window_len, stride)) {
                out.train.push_back(discharge_sequence(rec, soc, start, stop, base + "#w" + std::to_string(w++)));
            }
        }
    }
    for (const auto* set : {&out.train, &out.test})
        for (const auto& s : *set)
            if (!ids.insert(s.id).second) throw ConfigError("manifest lists '" + s.id + "' more than once");
    return out;
}

Splits make_cycle_splits(const DatasetManifest& manifest) {
    manifest.validate();
    if (manifest.task == Task::Soc) throw ConfigError("make_cycle_splits called for an SOC manifest");
    Splits out;
    std::set<std::string> ids;
    for (const auto& entry : manifest.files) {
        const csv::Table table = csv::read(entry.path);
        const double q_n = parse_meta_number(entry.path, table.meta, "q_n_ah");
        if (!(q_n > 0.0)) throw DomainError(entry.path.string() + ": q_n_ah must be positive");
        const auto records = load_cycles(entry.path);
        if (records.empty()) throw DataError(entry.path.string() + ": no cycles");

        LabeledSequence seq;
        seq.id = sequence_id(entry);
        seq.unit = expected_unit(manifest.task);
        seq.features = DenseArray(Shape{records.size(), CycleFeatures::kSize});
        std::vector<double> soh_series;
        for (std::size_t k = 0; k < records.size(); ++k) {
            const auto f = build_cycle_features(records[k], manifest.smoothing_window).to_array();
            std::copy(f.begin(), f.end(), seq.features.values().begin() + static_cast<std::ptrdiff_t>(k * f.size()));
            soh_series.push_back(soh(records[k].cycle_capacity_ah, q_n));
        }
        if (manifest.task == Task::Soh) {
            seq.targets = DenseArray(Shape{soh_series.size()}, soh_series);
        } else {
            const auto rul = rul_labels(soh_series, manifest.eol_threshold);
            if (!rul) {
                throw DataError(entry.path.string() + ": SOH never falls below " +
                                format_double(manifest.eol_threshold) + ", cannot label RUL");
            }
            seq.targets = DenseArray(Shape{rul->size()}, std::vector<double>(rul->begin(), rul->end()));
        }
        if (!ids.insert(seq.id).second) throw ConfigError("manifest lists '" + seq.id + "' more than once");
        (entry.role == Role::Test ? out.test : out.train).push_back(std::move(seq));
    }
    return out;
}

Splits make_splits(const DatasetManifest& manifest) {
    return manifest.task == Task::Soc ? make_soc_splits(manifest) : make_cycle_splits(manifest);
}

void save_normalizer(const fs::path& path, const Normalizer& norm) {
    std::ofstream out = open_for_write(path);
    out << "scaler,column,mean,std\n";
    auto emit = [&](const char* name, const ZScoreScaler& s) {
        for (std::size_t j = 0; j < s.width(); ++j) {
            out << name << ',' << j << ',' << format_double(s.mean()[j]) << ',' << format_double(s.stddev()[j]) << '\n';
        }
    };
    emit("feature", norm.features);
    emit("target", norm.targets);
}

Normalizer load_normalizer(const fs::path& path) {
    const csv::Table t = csv::read(path);
    const std::size_t c_name = t.column("scaler"), c_col = t.column("column"), c_mean = t.column("mean"),
                      c_std = t.column("std");
    std::vector<double> fm, fs_, tm, ts;
    for (const auto& row : t.rows) {
        const std::string& name = row.cells[c_name];
        auto& mean = name == "feature" ? fm : tm;
        auto& sd = name == "feature" ? fs_ : ts;
        if (name != "feature" && name != "target") {
            throw DataError(path.string() + ": row " + std::to_string(row.line) + ": unknown scaler '" + name + "'");
        }
        if (t.integer(row, c_col) != static_cast<long long>(mean.size())) {
            throw DataError(path.string() + ": row " + std::to_string(row.line) + ": columns out of order");
        }
        mean.push_back(t.number(row, c_mean));
        sd.push_back(t.number(row, c_std));
    }
    if (fm.empty() || tm.size() != 1) throw DataError(path.string() + ": incomplete scaler file");
    return Normalizer{ZScoreScaler(fm, fs_), ZScoreScaler(tm, ts)};
}

} // namespace lissm
