#include "lissm/cli.hpp"

#include "lissm/dataset_io.hpp"
#include "lissm/error.hpp"
#include "lissm/features.hpp"
#include "lissm/model.hpp"
#include "lissm/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace lissm::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

const std::vector<std::pair<std::string, std::string>>& default_entries() {
    static const std::vector<std::pair<std::string, std::string>> entries = {
        {"task", "soc"},
        {"data_dir", ""},
        {"test_group", ""},
        {"temperature", "25C"},
        {"window_len", ""},
        {"window_stride", ""},
        {"smoothing_window", "5"},
        {"eol_threshold", "0.8"},
        {"d_model", "16"},
        {"d_state", "16"},
        {"n_layers", "1"},
        {"head_mode", "per-step"},
        {"learning_rate", "0.01"},
        {"epochs", "100"},
        {"batch_size", "4"},
        {"adam_beta1", "0.9"},
        {"adam_beta2", "0.999"},
        {"adam_eps", "1e-8"},
        {"seed", "0"},
        {"checkpoint", ""},
        {"synth_n_cells", "3"},
        {"synth_n_cycles", "120"},
        {"synth_nominal_capacity_ah", "2"},
        {"synth_fade_rate", "0.0025"},
        {"synth_noise_sigma", "0"},
        {"synth_ic_samples", "60"},
        {"synth_runs_per_profile", "24"},
        {"synth_soc_step", "0.025"},
        {"synth_discharge_samples", "1200"},
        {"synth_soc_floor", "0.1"},
        {"synth_voltage_noise_v", "0.002"},
    };
    return entries;
}

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path.string() + ": cannot open for hashing");
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buf[1 << 14];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return os.str();
}

std::ofstream open_output(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(path.string() + ": cannot open for writing");
    return out;
}

struct Context {
    std::string subcommand;
    Config config;
    std::vector<std::pair<std::string, std::string>> overrides;
    fs::path output_dir;
    std::ostream& out;

    fs::path data_dir() const {
        const std::string& d = config.get("data_dir");
        return d.empty() ? output_dir / "data" : fs::path(d);
    }
    fs::path checkpoint_path() const {
        const std::string& c = config.get("checkpoint");
        return c.empty() ? output_dir / "checkpoint.txt" : fs::path(c);
    }
    fs::path scaler_path() const { return checkpoint_path().parent_path() / "scaler.csv"; }
    Task task() const { return parse_task(config.get("task")); }
};

SynthSpec synth_spec(const Config& cfg) {
    SynthSpec spec;
    spec.seed = cfg.count("seed");
    spec.n_cells = cfg.count("synth_n_cells");
    spec.n_cycles = cfg.count("synth_n_cycles");
    spec.nominal_capacity_ah = cfg.number("synth_nominal_capacity_ah");
    spec.fade_rate = cfg.number("synth_fade_rate");
    spec.noise.sigma = cfg.number("synth_noise_sigma");
    spec.ic_samples = cfg.count("synth_ic_samples");
    spec.runs_per_profile = cfg.count("synth_runs_per_profile");
    spec.soc_step = cfg.number("synth_soc_step");
    spec.discharge_samples = cfg.count("synth_discharge_samples");
    spec.soc_floor = cfg.number("synth_soc_floor");
    spec.voltage_noise_v = cfg.number("synth_voltage_noise_v");
    spec.temperature_c = temperature_from_tag(cfg.get("temperature"));
    return spec;
}

ModelConfig model_config(const Config& cfg, Task task) {
    ModelConfig m;
    m.feature_dim = task == Task::Soc ? 3 : CycleFeatures::kSize;
    m.d_model = cfg.count("d_model");
    m.d_state = cfg.count("d_state");
    m.n_layers = cfg.count("n_layers");
    m.head_mode = parse_head_mode(cfg.get("head_mode"));
    m.validate();
    return m;
}

TrainConfig train_config(const Config& cfg) {
    TrainConfig t;
    t.learning_rate = cfg.number("learning_rate");
    t.epochs = cfg.count("epochs");
    t.batch_size = cfg.count("batch_size");
    t.adam_beta1 = cfg.number("adam_beta1");
    t.adam_beta2 = cfg.number("adam_beta2");
    t.adam_eps = cfg.number("adam_eps");
    t.seed = cfg.count("seed");
    t.validate();
    return t;
}

// Groups are discovered from file names in the data directory:
// discharge_<group>[_run<k>].csv for SOC, cycles_<group>.csv for RUL/SOH.
DatasetManifest build_manifest(const Context& ctx) {
    const Task task = ctx.task();
    const fs::path dir = ctx.data_dir();
    const std::string prefix = task == Task::Soc ? "discharge_" : "cycles_";
    const auto groups = discover_groups(dir, prefix);
    if (groups.size() < 2) {
        throw ConfigError("data_dir '" + dir.string() + "' needs at least two " + prefix + "*.csv files");
    }
    std::string test = ctx.config.get("test_group");
    if (test.empty()) test = task == Task::Soc && groups.contains("FUDS") ? "FUDS" : groups.rbegin()->first;
    DatasetManifest m = leave_one_out(task, groups, test);
    m.temperature_tag = ctx.config.get("temperature");
    if (ctx.config.has("window_len")) m.window_len = ctx.config.count("window_len");
    if (ctx.config.has("window_stride")) m.window_stride = ctx.config.count("window_stride");
    m.smoothing_window = ctx.config.count("smoothing_window");
    m.eol_threshold = ctx.config.number("eol_threshold");
    m.validate();
    return m;
}

nlohmann::ordered_json manifest_json(const Context& ctx, const std::vector<fs::path>& inputs) {
    nlohmann::ordered_json j;
    j["tool"] = "lissm";
    j["version"] = kVersion;
    j["subcommand"] = ctx.subcommand;
    j["seed"] = ctx.config.get("seed");
    j["config"] = ctx.config.entries();
    nlohmann::ordered_json ov = nlohmann::ordered_json::array();
    for (const auto& [k, v] : ctx.overrides) ov.push_back(k + "=" + v);
    j["overrides"] = ov;
    nlohmann::ordered_json files = nlohmann::ordered_json::object();
    for (const auto& p : inputs) files[p.filename().string()] = sha256_file(p);
    j["inputs_sha256"] = files;
    return j;
}

void write_manifest(const Context& ctx, const nlohmann::ordered_json& j) {
    open_output(ctx.output_dir / ("manifest_" + ctx.subcommand + ".json")) << j.dump(2) << '\n';
}

std::vector<fs::path> manifest_files(const DatasetManifest& m) {
    std::vector<fs::path> out;
    for (const auto& e : m.files) out.push_back(e.path);
    return out;
}

std::vector<std::string> feature_names(Task task) {
    if (task == Task::Soc) return {"current_a", "voltage_v", "temp_c"};
    return {"omega", "b", "temperature_c", "resistance_ohm", "charge_time_h", "dqdv_max", "dqdv_min", "dqdv_var"};
}

int cmd_synth(Context& ctx) {
    const SynthSpec spec = synth_spec(ctx.config);
    const fs::path dir = ctx.data_dir();
    write_dataset(dir, synthesize(spec), spec);
    std::vector<fs::path> written;
    for (const auto& entry : fs::directory_iterator(dir)) written.push_back(entry.path());
    std::sort(written.begin(), written.end());
    auto j = manifest_json(ctx, {});
    nlohmann::ordered_json outputs = nlohmann::ordered_json::object();
    for (const auto& p : written) outputs[p.filename().string()] = sha256_file(p);
    j["outputs_sha256"] = outputs;
    write_manifest(ctx, j);
    ctx.out << "synth: wrote " << written.size() << " files to " << dir.string() << '\n';
    return kOk;
}

int cmd_extract(Context& ctx) {
    const Task task = ctx.task();
    const DatasetManifest m = build_manifest(ctx);
    const Splits splits = make_splits(m);
    std::ofstream out = open_output(ctx.output_dir / "features.csv");
    out << "sequence_id,role,step";
    for (const auto& n : feature_names(task)) out << ',' << n;
    out << ",target\n";
    auto emit = [&](const std::vector<LabeledSequence>& seqs, const char* role) {
        for (const auto& s : seqs) {
            const std::size_t len = s.features.dim(0), f = s.features.dim(1);
            for (std::size_t i = 0; i < len; ++i) {
                out << s.id << ',' << role << ',' << i;
                for (std::size_t j = 0; j < f; ++j) out << ',' << format_double(s.features.at(i, j));
                out << ',' << format_double(s.targets[i]) << '\n';
            }
        }
    };
    emit(splits.train, "train");
    emit(splits.test, "test");
    write_manifest(ctx, manifest_json(ctx, manifest_files(m)));
    ctx.out << "extract-features: " << splits.train.size() << " train / " << splits.test.size()
            << " test sequences\n";
    return kOk;
}

int cmd_train(Context& ctx) {
    const Task task = ctx.task();
    const DatasetManifest m = build_manifest(ctx);
    const ModelConfig mcfg = model_config(ctx.config, task);
    const TrainConfig tcfg = train_config(ctx.config);
    const Splits splits = make_splits(m);
    const Normalizer norm = Normalizer::fit(splits.train);
    const TrainResult result =
        train(mcfg, ModelParameters::init(mcfg, tcfg.seed), norm.apply(splits.train), tcfg);

    save_checkpoint(ctx.checkpoint_path(), mcfg, result.params);
    save_normalizer(ctx.scaler_path(), norm);
    std::ofstream loss = open_output(ctx.output_dir / "loss.csv");
    loss << "epoch,mean_l1\n";
    loss << 0 << ',' << format_double(result.initial_loss) << '\n';
    for (std::size_t e = 0; e < result.loss_trace.size(); ++e) {
        loss << e + 1 << ',' << format_double(result.loss_trace[e]) << '\n';
    }
    auto j = manifest_json(ctx, manifest_files(m));
    j["initial_loss"] = result.initial_loss;
    j["final_loss"] = result.final_loss;
    j["parameter_count"] = result.params.parameter_count();
    write_manifest(ctx, j);
    ctx.out << "train: initial L1 " << result.initial_loss << ", final L1 " << result.final_loss << '\n';
    return kOk;
}

struct Prediction {
    Evaluation eval;
    std::vector<LabeledSequence> test;
    DatasetManifest manifest;
};

Prediction run_prediction(Context& ctx) {
    const Task task = ctx.task();
    Prediction p;
    p.manifest = build_manifest(ctx);
    const ModelConfig mcfg = model_config(ctx.config, task);
    const ModelParameters params = load_checkpoint(ctx.checkpoint_path(), mcfg);
    const Normalizer norm = load_normalizer(ctx.scaler_path());
    p.test = make_splits(p.manifest).test;
    p.eval = evaluate(mcfg, params, p.test, norm, task);
    return p;
}

void write_curves(const Context& ctx, const Prediction& p, Task task) {
    const double scale = report_scale(task);
    for (std::size_t s = 0; s < p.test.size(); ++s) {
        const LabeledSequence& seq = p.test[s];
        std::string name = seq.id.substr(seq.id.find_last_of('/') + 1);
        std::replace(name.begin(), name.end(), '#', '_');
        if (name.size() > 4 && name.ends_with(".csv")) name.resize(name.size() - 4);
        std::ofstream out = open_output(ctx.output_dir / ("curve_" + name + ".csv"));
        out << "cycle_or_time,actual,predicted\n";
        for (std::size_t i = 0; i < seq.targets.size(); ++i) {
            out << i << ',' << format_double(seq.targets[i] * scale) << ','
                << format_double(p.eval.predictions[s][i] * scale) << '\n';
        }
    }
}

int cmd_predict(Context& ctx) {
    const Prediction p = run_prediction(ctx);
    write_curves(ctx, p, ctx.task());
    auto inputs = manifest_files(p.manifest);
    inputs.push_back(ctx.checkpoint_path());
    write_manifest(ctx, manifest_json(ctx, inputs));
    ctx.out << "predict: wrote " << p.test.size() << " curve files\n";
    return kOk;
}

int cmd_eval(Context& ctx) {
    const Task task = ctx.task();
    const Prediction p = run_prediction(ctx);
    write_curves(ctx, p, task);
    std::size_t points = 0;
    for (const auto& s : p.test) points += s.targets.size();
    std::ofstream metrics = open_output(ctx.output_dir / "metrics.csv");
    metrics << "metric,value\n";
    metrics << "rmse_" << p.eval.unit << ',' << format_double(p.eval.rmse) << '\n';
    metrics << "n_points," << points << '\n';
    auto inputs = manifest_files(p.manifest);
    inputs.push_back(ctx.checkpoint_path());
    auto j = manifest_json(ctx, inputs);
    j["metrics"] = {{"rmse_" + p.eval.unit, p.eval.rmse}, {"n_points", points}};
    write_manifest(ctx, j);
    ctx.out << "eval: rmse " << p.eval.rmse << ' ' << p.eval.unit << '\n';
    return kOk;
}

int exit_code_for(const Error& e) {
    switch (e.kind()) {
    case ErrorKind::Config: return kConfigError;
    case ErrorKind::Numerical: return kNumericalError;
    case ErrorKind::Checkpoint:
        return static_cast<const CheckpointError&>(e).is_shape_mismatch() ? kConfigError : kDataError;
    default: return kDataError;
    }
}

std::string quote(const std::string& s) {
    std::string q = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') q += '\\';
        q += (c == '\n') ? ' ' : c;
    }
    return q + '"';
}

void report(std::ostream& err, int code, const std::string& kind, const std::string& message) {
    err << "error code=" << code << " kind=" << kind << " message=" << quote(message) << std::endl;
}

} // namespace

Config Config::defaults() {
    Config c;
    for (const auto& [k, v] : default_entries()) c.values_[k] = v;
    return c;
}

const std::vector<std::string>& Config::known_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& e : default_entries()) k.push_back(e.first);
        return k;
    }();
    return keys;
}

void Config::set(const std::string& key, const std::string& value) {
    if (!values_.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
}

std::pair<std::string, std::string> Config::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
    std::pair<std::string, std::string> kv{trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1))};
    set(kv.first, kv.second);
    return kv;
}

Config Config::parse(const std::string& text, const std::string& origin) {
    Config c = defaults();
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = trim(body.substr(0, eq));
        if (!c.values_.contains(key)) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": unknown config key '" + key + "'");
        }
        c.values_[key] = trim(body.substr(eq + 1));
    }
    return c;
}

Config Config::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

const std::string& Config::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

bool Config::has(const std::string& key) const { return !get(key).empty(); }

double Config::number(const std::string& key) const {
    const std::string& s = get(key);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
        throw ConfigError("config key '" + key + "' must be a number, got '" + s + "'");
    }
    return v;
}

std::size_t Config::count(const std::string& key) const {
    const std::string& s = get(key);
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
        throw ConfigError("config key '" + key + "' must be a nonnegative integer, got '" + s + "'");
    }
    return v;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Selective state space regression for battery RUL, SOH and SOC estimation", "lissm"};
    app.require_subcommand(1, 1);
    app.set_version_flag("--version", kVersion);

    std::string config_path;
    std::vector<std::string> overrides;
    std::string output_dir;
    std::string seed;
    const char* env_out = std::getenv("LISSM_OUTPUT_DIR");

    const std::vector<std::pair<std::string, std::string>> commands = {
        {"synth", "Generate a seeded synthetic battery dataset"},
        {"extract-features", "Write model-ready feature tables (features.csv)"},
        {"train", "Fit the model; writes checkpoint, scaler, loss trace"},
        {"predict", "Write predicted-vs-actual curves for the test split"},
        {"eval", "Score the test split; writes metrics.csv and curves"},
    };
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("-c,--config", config_path, "Config file (key = value lines)");
        sub->add_option("--set", overrides, "Override a config key, key=value (repeatable)");
        auto* o = sub->add_option("-o,--output-dir", output_dir, "Directory for all artifacts");
        if (!env_out) o->required();
        sub->add_option("--seed", seed, "Shorthand for --set seed=N");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        for (const auto* sub : app.get_subcommands()) out << sub->help();
        return kOk;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << '\n';
        return kOk;
    } catch (const CLI::ParseError& e) {
        report(err, kConfigError, "usage", e.what());
        return kConfigError;
    }

    try {
        Context ctx{app.get_subcommands().front()->get_name(), Config::defaults(), {}, {}, out};
        if (!config_path.empty()) ctx.config = Config::load(config_path);
        for (const auto& o : overrides) ctx.overrides.push_back(ctx.config.apply_override(o));
        if (!seed.empty()) ctx.overrides.push_back(ctx.config.apply_override("seed=" + seed));
        ctx.output_dir = output_dir.empty() ? fs::path(env_out) : fs::path(output_dir);
        fs::create_directories(ctx.output_dir);

        if (ctx.subcommand == "synth") return cmd_synth(ctx);
        if (ctx.subcommand == "extract-features") return cmd_extract(ctx);
        if (ctx.subcommand == "train") return cmd_train(ctx);
        if (ctx.subcommand == "predict") return cmd_predict(ctx);
        return cmd_eval(ctx);
    } catch (const Error& e) {
        const int code = exit_code_for(e);
        report(err, code, to_string(e.kind()), e.what());
        return code;
    } catch (const fs::filesystem_error& e) {
        report(err, kDataError, "io", e.what());
        return kDataError;
    } catch (const std::exception& e) {
        report(err, kDataError, "internal", e.what());
        return kDataError;
    }
}

} // namespace lissm::cli
