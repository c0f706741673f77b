#include "lissm/dataset_io.hpp"
#include "lissm/error.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

// Text checkpoint:
//   lissm-checkpoint 1
//   config feature_dim=F d_model=D d_state=N n_layers=K head_mode=per-step
//   tensor <name> f64 <rank> <dims...>
//   <one line per row of the last axis, shortest round-trip decimals>
//   ...
//   end

namespace lissm {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMagic = "lissm-checkpoint 1";

struct Reader {
    const fs::path& path;
    std::istream& in;
    std::size_t line_no = 0;

    std::string next_line() {
        std::string line;
        if (!std::getline(in, line)) {
            throw CheckpointError(path.string() + ": truncated after line " + std::to_string(line_no));
        }
        ++line_no;
        return line;
    }

    [[noreturn]] void fail(const std::string& why) const {
        throw CheckpointError(path.string() + ": line " + std::to_string(line_no) + ": " + why);
    }
};

std::size_t parse_size(Reader& r, const std::string& text) {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) r.fail("bad integer '" + text + "'");
    return v;
}

ModelConfig parse_config(Reader& r, const std::string& line) {
    std::istringstream is(line);
    std::string word;
    is >> word;
    if (word != "config") r.fail("expected config line");
    ModelConfig cfg;
    while (is >> word) {
        const auto eq = word.find('=');
        if (eq == std::string::npos) r.fail("bad config field '" + word + "'");
        const std::string key = word.substr(0, eq), value = word.substr(eq + 1);
        if (key == "feature_dim") cfg.feature_dim = parse_size(r, value);
        else if (key == "d_model") cfg.d_model = parse_size(r, value);
        else if (key == "d_state") cfg.d_state = parse_size(r, value);
        else if (key == "n_layers") cfg.n_layers = parse_size(r, value);
        else if (key == "head_mode") {
            try {
                cfg.head_mode = parse_head_mode(value);
            } catch (const ConfigError& e) {
                r.fail(e.what());
            }
        } else r.fail("unknown config field '" + key + "'");
    }
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        r.fail(e.what());
    }
    return cfg;
}

DenseArray read_tensor(Reader& r, const std::string& expected_name) {
    std::istringstream header(r.next_line());
    std::string tag, name, dtype;
    std::size_t rank = 0;
    header >> tag >> name >> dtype >> rank;
    if (tag != "tensor" || !header) r.fail("expected tensor header for " + expected_name);
    if (name != expected_name) r.fail("expected tensor " + expected_name + ", found " + name);
    if (dtype != "f64") r.fail("unsupported dtype " + dtype);
    Shape shape(rank);
    for (auto& d : shape)
        if (!(header >> d)) r.fail("short shape for tensor " + name);
    const std::size_t cols = shape.empty() ? 1 : shape.back();
    const std::size_t rows = cols ? shape_size(shape) / cols : 0;
    std::vector<double> data;
    data.reserve(shape_size(shape));
    for (std::size_t i = 0; i < rows; ++i) {
        const std::string line = r.next_line();
        const char* p = line.data();
        const char* end = line.data() + line.size();
        for (std::size_t j = 0; j < cols; ++j) {
            while (p < end && *p == ' ') ++p;
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(p, end, v);
            if (ec != std::errc()) r.fail("tensor " + name + ": expected " + std::to_string(cols) + " values");
            data.push_back(v);
            p = ptr;
        }
        while (p < end && *p == ' ') ++p;
        if (p != end) r.fail("tensor " + name + ": trailing data");
    }
    return DenseArray(std::move(shape), std::move(data));
}

} // namespace

void save_checkpoint(const fs::path& path, const ModelConfig& cfg, const ModelParameters& p) {
    cfg.validate();
    p.validate(cfg);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(path.string() + ": cannot open for writing");
    out << kMagic << '\n';
    out << "config feature_dim=" << cfg.feature_dim << " d_model=" << cfg.d_model << " d_state=" << cfg.d_state
        << " n_layers=" << cfg.n_layers << " head_mode=" << to_string(cfg.head_mode) << '\n';
    for (const auto& [name, t] : p.tensors()) {
        out << "tensor " << name << " f64 " << t->rank();
        for (std::size_t d : t->shape()) out << ' ' << d;
        out << '\n';
        const std::size_t cols = t->shape().back();
        for (std::size_t i = 0; i < t->size(); ++i) {
            out << format_double((*t)[i]) << ((i + 1) % cols ? ' ' : '\n');
        }
    }
    out << "end\n";
    if (!out) throw CheckpointError(path.string() + ": write failed");
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(path.string() + ": cannot open file");
    Reader r{path, in};
    if (r.next_line() != kMagic) r.fail("not a checkpoint file");
    Checkpoint ck;
    ck.config = parse_config(r, r.next_line());
    ModelParameters p = ModelParameters::zeros(ck.config);
    for (auto& [name, t] : p.tensors()) *t = read_tensor(r, name);
    if (r.next_line() != "end") r.fail("missing end marker");
    // Shapes in the file must agree with the declared config.
    const ModelParameters reference = ModelParameters::zeros(ck.config);
    const auto want = reference.tensors();
    const auto got = p.tensors();
    for (std::size_t i = 0; i < want.size(); ++i) {
        if (want[i].second->shape() != got[i].second->shape()) {
            throw CheckpointError(path.string() + ": tensor " + got[i].first + " has shape " +
                                      shape_to_string(got[i].second->shape()) + " but the header implies " +
                                      shape_to_string(want[i].second->shape()),
                                  got[i].first);
        }
    }
    ck.params = std::move(p);
    return ck;
}

ModelParameters load_checkpoint(const fs::path& path, const ModelConfig& expected) {
    Checkpoint ck = load_checkpoint(path);
    const ModelParameters reference = ModelParameters::zeros(expected);
    const auto want = reference.tensors();
    const auto got = ck.params.tensors();
    for (std::size_t i = 0; i < std::max(want.size(), got.size()); ++i) {
        if (i >= want.size() || i >= got.size()) {
            const std::string name = i < got.size() ? got[i].first : want[i].first;
            throw CheckpointError(path.string() + ": tensor " + name + " present in only one of checkpoint and config",
                                  name);
        }
        if (want[i].second->shape() != got[i].second->shape()) {
            throw CheckpointError(path.string() + ": tensor " + got[i].first + " has shape " +
                                      shape_to_string(got[i].second->shape()) + ", config expects " +
                                      shape_to_string(want[i].second->shape()),
                                  got[i].first);
        }
    }
    if (ck.config.head_mode != expected.head_mode) {
        throw CheckpointError(path.string() + ": checkpoint head_mode " + to_string(ck.config.head_mode) +
                                  " differs from config " + to_string(expected.head_mode),
                              "head");
    }
    return std::move(ck.params);
}

} // namespace lissm
