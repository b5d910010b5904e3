#pragma once

#include <map>
#include <string>
#include <vector>

namespace sspl {

/// Flat `key = value` configuration with `#` comments. Later assignments win,
/// so command-line overrides are applied by re-setting keys.
class KeyValueConfig {
public:
    static KeyValueConfig load_file(const std::string& path);

    /// Parses one `key=value` assignment (as passed to --set).
    void set_assignment(const std::string& assignment);

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_str(const std::string& key, const std::string& fallback) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    /// Keys actually present, sorted (for config echoes in checkpoints/logs).
    std::vector<std::pair<std::string, std::string>> items() const;

    /// Serialized as `key = value` lines, sorted by key.
    std::string to_text() const;

private:
    std::map<std::string, std::string> values_;
};

} // namespace sspl
