#include "picotab/config_file.hpp"

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "picotab/errors.hpp"

namespace picotab {
namespace {

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

}  // namespace

bool ConfigMap::has(const std::string& key) const {
    for (const auto& [k, v] : entries) {
        if (k == key) return true;
    }
    return false;
}

const std::string& ConfigMap::get(const std::string& key) const {
    for (const auto& [k, v] : entries) {
        if (k == key) return v;
    }
    throw DataError("config: missing key '" + key + "'");
}

std::string ConfigMap::get_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? get(key) : fallback;
}

double ConfigMap::get_real(const std::string& key) const {
    const std::string& v = get(key);
    errno = 0;
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (end != v.c_str() + v.size() || v.empty() || errno == ERANGE) {
        throw DataError("config: key '" + key + "' is not a number: '" + v + "'");
    }
    return x;
}

long long ConfigMap::get_int(const std::string& key) const {
    const std::string& v = get(key);
    errno = 0;
    char* end = nullptr;
    const long long x = std::strtoll(v.c_str(), &end, 10);
    if (end != v.c_str() + v.size() || v.empty() || errno == ERANGE) {
        throw DataError("config: key '" + key + "' is not an integer: '" + v + "'");
    }
    return x;
}

bool ConfigMap::get_bool(const std::string& key) const {
    std::string v = get(key);
    std::transform(v.begin(), v.end(), v.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw DataError("config: key '" + key + "' is not a boolean: '" + get(key) + "'");
}

void ConfigMap::set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : entries) {
        if (k == key) {
            v = value;
            return;
        }
    }
    entries.emplace_back(key, value);
}

ConfigMap parse_config_text(const std::string& text) {
    ConfigMap out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const size_t eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw DataError("config: line " + std::to_string(lineno) + " has no '=': '" +
                            stripped + "'");
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty()) {
            throw DataError("config: line " + std::to_string(lineno) + " has an empty key");
        }
        out.set(key, value);
    }
    return out;
}

ConfigMap load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("config: cannot read '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

std::string format_config(const ConfigMap& config) {
    std::string out;
    for (const auto& [k, v] : config.entries) {
        out += k;
        out += " = ";
        out += v;
        out += '\n';
    }
    return out;
}

}  // namespace picotab
