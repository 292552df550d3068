#pragma once
// Experiment configuration: a TOML subset ([section] headers, key = value
// with bool/int/float/string values, # comments) validated against a fixed
// schema. Unknown keys are rejected, overrides are type-checked, and the
// resolved form is canonical so config hashes are stable.

#include <cstdint>
#include <map>
#include <string>

namespace dassl {

enum class ConfigType { boolean, integer, floating, text };

struct ConfigEntry {
    ConfigType type;
    std::string default_value;
};

class Config {
public:
    // Schema of every known dotted key with its default.
    static const std::map<std::string, ConfigEntry>& schema();

    static Config defaults();
    static Config from_file(const std::string& path);
    static Config from_text(const std::string& text, const std::string& origin = "<text>");

    // "a.b=value" as accepted on the command line.
    void apply_override(const std::string& assignment);
    // Type-checked set; throws bad_config for unknown keys or bad values.
    void set(const std::string& key, const std::string& value);

    bool get_bool(const std::string& key) const;
    int64_t get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    const std::string& get_string(const std::string& key) const;

    // Canonical TOML dump (sections and keys sorted); identical settings
    // always produce identical text.
    std::string resolved_text() const;
    uint64_t hash() const;

private:
    std::map<std::string, std::string> values_;
};

uint64_t fnv1a64(const std::string& s);

}  // namespace dassl
