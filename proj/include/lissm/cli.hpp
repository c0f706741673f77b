#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace lissm::cli {

enum ExitCode : int { kOk = 0, kConfigError = 1, kDataError = 2, kNumericalError = 3 };

/// Flat key=value configuration. The file grammar is one `key = value` per
/// line; '#' starts a comment; blank lines are ignored. Unknown keys are
/// rejected.
class Config {
  public:
    static Config defaults();
    static Config parse(const std::string& text, const std::string& origin);
    static Config load(const std::filesystem::path& path);

    /// Applies `key=value`; returns the normalized pair for the manifest.
    std::pair<std::string, std::string> apply_override(const std::string& assignment);
    void set(const std::string& key, const std::string& value);

    const std::string& get(const std::string& key) const;
    double number(const std::string& key) const;
    std::size_t count(const std::string& key) const;
    bool has(const std::string& key) const;

    const std::map<std::string, std::string>& entries() const noexcept { return values_; }
    static const std::vector<std::string>& known_keys();

  private:
    std::map<std::string, std::string> values_;
};

/// Runs one invocation. Errors are reported as a single line on `err`:
///   error code=<n> kind=<kind> message="<text>"
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace lissm::cli
