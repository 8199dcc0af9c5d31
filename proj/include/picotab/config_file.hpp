#pragma once

#include <string>
#include <utility>
#include <vector>

namespace picotab {

// `key = value` per line, order preserved; '#' starts a comment, blank lines
// skipped. Keys are unique (last write wins on duplicates).
struct ConfigMap {
    std::vector<std::pair<std::string, std::string>> entries;

    bool has(const std::string& key) const;
    const std::string& get(const std::string& key) const;  // DataError if absent
    std::string get_or(const std::string& key, const std::string& fallback) const;
    double get_real(const std::string& key) const;  // DataError on bad number
    long long get_int(const std::string& key) const;
    bool get_bool(const std::string& key) const;  // true/false/1/0/yes/no

    void set(const std::string& key, const std::string& value);
};

ConfigMap parse_config_text(const std::string& text);
ConfigMap load_config(const std::string& path);  // DataError if unreadable
std::string format_config(const ConfigMap& config);

}  // namespace picotab
