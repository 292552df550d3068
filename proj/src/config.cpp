#include "dassl/config.hpp"

#include <algorithm>
#include <charconv>
#include <cctype>
#include <fstream>
#include <sstream>

#include "dassl/error.hpp"

namespace dassl {

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

bool parse_bool(const std::string& s, bool& out) {
    if (s == "true") { out = true; return true; }
    if (s == "false") { out = false; return true; }
    return false;
}

bool parse_int(const std::string& s, int64_t& out) {
    if (s.empty()) return false;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

std::string canonical_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    std::string s(buf, ptr);
    // keep floats visually distinct from ints in the dump
    if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
        s.find("inf") == std::string::npos && s.find("nan") == std::string::npos)
        s += ".0";
    return s;
}

// Strips a trailing comment that starts outside a quoted string.
std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_string = !in_string;
        if (line[i] == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

}  // namespace

const std::map<std::string, ConfigEntry>& Config::schema() {
    using CT = ConfigType;
    static const std::map<std::string, ConfigEntry> s = {
        {"data.manifest", {CT::text, ""}},

        {"filter.tumor_only", {CT::boolean, "true"}},

        {"sampler.enabled", {CT::boolean, "true"}},
        {"sampler.G", {CT::integer, "32"}},
        {"sampler.K", {CT::integer, "1024"}},
        {"sampler.pad_to_K", {CT::boolean, "true"}},
        {"sampler.seed", {CT::integer, "42"}},

        {"augment.mask_enabled", {CT::boolean, "true"}},
        {"augment.mask_rate", {CT::floating, "0.1"}},
        {"augment.feat_replace_enabled", {CT::boolean, "true"}},
        {"augment.feat_replace_frac", {CT::floating, "0.1"}},
        {"augment.inst_replace_enabled", {CT::boolean, "true"}},
        {"augment.inst_replace_rate", {CT::floating, "0.05"}},
        {"augment.noise_enabled", {CT::boolean, "true"}},
        {"augment.noise_sigma", {CT::floating, "0.1"}},
        {"augment.block_drop_enabled", {CT::boolean, "true"}},
        {"augment.block_drop_frac", {CT::floating, "0.1"}},
        {"augment.dropout_enabled", {CT::boolean, "true"}},
        {"augment.dropout_p", {CT::floating, "0.1"}},
        {"augment.seed", {CT::integer, "43"}},

        {"adapter.kind", {CT::text, "mlp"}},
        {"adapter.hidden_dim", {CT::integer, "0"}},
        {"adapter.kernel_size", {CT::integer, "3"}},

        {"ssl.latent_dim", {CT::integer, "256"}},
        {"ssl.lambda", {CT::floating, "0.1"}},
        {"ssl.cons_weight", {CT::floating, "0.5"}},

        {"mil.kind", {CT::text, "acmil"}},
        {"mil.n_branch", {CT::integer, "5"}},
        {"mil.mask_rate", {CT::floating, "0.1"}},
        {"mil.attn_hidden", {CT::integer, "128"}},
        {"mil.diversity_coef", {CT::floating, "0.1"}},
        {"mil.class_weighting", {CT::boolean, "true"}},

        {"train.schedule", {CT::text, "ssl_then_sup"}},
        {"train.ssl_epochs", {CT::integer, "10"}},
        {"train.sup_epochs", {CT::integer, "20"}},
        {"train.batch_size", {CT::integer, "8"}},
        {"train.ssl_lr", {CT::floating, "0.05"}},
        {"train.ssl_momentum", {CT::floating, "0.9"}},
        {"train.sup_lr", {CT::floating, "0.0001"}},
        {"train.ssl_weight", {CT::floating, "0.5"}},
        {"train.seed", {CT::integer, "1"}},
        {"train.checkpoint_every", {CT::integer, "0"}},

        {"cv.k", {CT::integer, "5"}},
        {"cv.seed", {CT::integer, "7"}},
        {"cv.jobs", {CT::integer, "1"}},

        {"synthgen.n_patients", {CT::integer, "200"}},
        {"synthgen.slides_per_patient_min", {CT::integer, "1"}},
        {"synthgen.slides_per_patient_max", {CT::integer, "2"}},
        {"synthgen.d", {CT::integer, "64"}},
        {"synthgen.instances_min", {CT::integer, "80"}},
        {"synthgen.instances_max", {CT::integer, "320"}},
        {"synthgen.witness_rate", {CT::floating, "0.1"}},
        {"synthgen.class_ratio", {CT::floating, "0.35"}},
        {"synthgen.separation", {CT::floating, "1.5"}},
        {"synthgen.witness_sigma", {CT::floating, "1.0"}},
        {"synthgen.shift_enabled", {CT::boolean, "true"}},
        {"synthgen.shift_sigma", {CT::floating, "0.3"}},
        {"synthgen.n_centers", {CT::integer, "3"}},
        {"synthgen.fragments_min", {CT::integer, "1"}},
        {"synthgen.fragments_max", {CT::integer, "8"}},
        {"synthgen.artifact_frac", {CT::floating, "0.04"}},
        {"synthgen.normal_frac", {CT::floating, "0.04"}},
        {"synthgen.seed", {CT::integer, "123"}},
    };
    return s;
}

Config Config::defaults() {
    Config c;
    // defaults pass through set() so numeric formatting is canonical
    for (const auto& [key, entry] : schema()) c.set(key, entry.default_value);
    return c;
}

Config Config::from_text(const std::string& text, const std::string& origin) {
    Config c = defaults();
    std::istringstream in(text);
    std::string line;
    std::string section;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            require(line.back() == ']', ErrorCode::bad_config,
                    origin + ":" + std::to_string(line_no) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            require(!section.empty(), ErrorCode::bad_config,
                    origin + ":" + std::to_string(line_no) + ": empty section name");
            continue;
        }
        const auto eq = line.find('=');
        require(eq != std::string::npos, ErrorCode::bad_config,
                origin + ":" + std::to_string(line_no) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        require(!key.empty(), ErrorCode::bad_config,
                origin + ":" + std::to_string(line_no) + ": empty key");
        if (!value.empty() && value.front() == '"') {
            require(value.size() >= 2 && value.back() == '"', ErrorCode::bad_config,
                    origin + ":" + std::to_string(line_no) + ": unterminated string");
            value = value.substr(1, value.size() - 2);
        }
        const std::string dotted = section.empty() ? key : section + "." + key;
        c.set(dotted, value);
    }
    return c;
}

Config Config::from_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::io_failure, "cannot open config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str(), path);
}

void Config::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    require(eq != std::string::npos, ErrorCode::bad_config,
            "override must look like section.key=value: " + assignment);
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Config::set(const std::string& key, const std::string& value) {
    const auto it = schema().find(key);
    require(it != schema().end(), ErrorCode::bad_config, "unknown config key: " + key);
    switch (it->second.type) {
        case ConfigType::boolean: {
            bool b;
            require(parse_bool(value, b), ErrorCode::bad_config,
                    key + ": expected true or false, got '" + value + "'");
            values_[key] = b ? "true" : "false";
            return;
        }
        case ConfigType::integer: {
            int64_t v;
            require(parse_int(value, v), ErrorCode::bad_config,
                    key + ": expected an integer, got '" + value + "'");
            values_[key] = std::to_string(v);
            return;
        }
        case ConfigType::floating: {
            double v;
            require(parse_double(value, v), ErrorCode::bad_config,
                    key + ": expected a number, got '" + value + "'");
            values_[key] = canonical_double(v);
            return;
        }
        case ConfigType::text:
            values_[key] = value;
            return;
    }
}

bool Config::get_bool(const std::string& key) const {
    const auto it = values_.find(key);
    require(it != values_.end(), ErrorCode::bad_config, "unknown config key: " + key);
    return it->second == "true";
}

int64_t Config::get_int(const std::string& key) const {
    const auto it = values_.find(key);
    require(it != values_.end(), ErrorCode::bad_config, "unknown config key: " + key);
    int64_t v = 0;
    require(parse_int(it->second, v), ErrorCode::bad_config, "not an integer: " + key);
    return v;
}

double Config::get_double(const std::string& key) const {
    const auto it = values_.find(key);
    require(it != values_.end(), ErrorCode::bad_config, "unknown config key: " + key);
    double v = 0;
    require(parse_double(it->second, v), ErrorCode::bad_config, "not a number: " + key);
    return v;
}

const std::string& Config::get_string(const std::string& key) const {
    const auto it = values_.find(key);
    require(it != values_.end(), ErrorCode::bad_config, "unknown config key: " + key);
    return it->second;
}

std::string Config::resolved_text() const {
    // values_ is an ordered map, so sections and keys come out sorted
    std::string out;
    std::string section;
    for (const auto& [key, value] : values_) {
        const auto dot = key.find('.');
        const std::string sec = key.substr(0, dot);
        const std::string name = key.substr(dot + 1);
        if (sec != section) {
            if (!out.empty()) out += "\n";
            out += "[" + sec + "]\n";
            section = sec;
        }
        const ConfigType type = schema().at(key).type;
        if (type == ConfigType::text)
            out += name + " = \"" + value + "\"\n";
        else
            out += name + " = " + value + "\n";
    }
    return out;
}

uint64_t Config::hash() const { return fnv1a64(resolved_text()); }

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace dassl
