#include "dumotion/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "dumotion/tensor_io.hpp"

namespace dumotion {

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

[[noreturn]] void bad(const std::string& origin, int line, const std::string& what) {
    std::ostringstream msg;
    msg << origin << ":" << line << ": " << what;
    throw ConfigError(msg.str());
}

long parse_int(const std::string& section, const std::string& key, const std::string& v) {
    char* end = nullptr;
    const long x = std::strtol(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0')
        throw ConfigError(section + "." + key + ": not an integer: '" + v + "'");
    return x;
}

double parse_float(const std::string& section, const std::string& key, const std::string& v) {
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
        throw ConfigError(section + "." + key + ": not a number: '" + v + "'");
    return x;
}

bool parse_bool(const std::string& section, const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(section + "." + key + ": not a boolean: '" + v + "'");
}

}  // namespace

Config Config::parse_string(const std::string& text, const std::string& origin) {
    Config cfg;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const size_t hash = raw.find('#');
        std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') bad(origin, lineno, "unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty()) bad(origin, lineno, "empty section name");
            cfg.sections_[section];  // record even if empty
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos) bad(origin, lineno, "expected 'key = value'");
        if (section.empty()) bad(origin, lineno, "key outside any [section]");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) bad(origin, lineno, "empty key");
        auto& sec = cfg.sections_[section];
        if (sec.count(key)) bad(origin, lineno, "duplicate key '" + key + "'");
        sec[key] = value;
    }
    return cfg;
}

Config Config::parse_file(const std::string& path) {
    return parse_string(read_text(path), path);
}

void Config::set_dotted(const std::string& assignment) {
    const size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("--set expects section.key=value, got '" + assignment + "'");
    const std::string dotted = trim(assignment.substr(0, eq));
    const size_t dot = dotted.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == dotted.size())
        throw ConfigError("--set expects section.key=value, got '" + assignment + "'");
    set(dotted.substr(0, dot), dotted.substr(dot + 1), trim(assignment.substr(eq + 1)));
}

void Config::set(const std::string& section, const std::string& key, const std::string& value) {
    sections_[section][key] = value;
}

bool Config::has(const std::string& section, const std::string& key) const {
    auto it = sections_.find(section);
    return it != sections_.end() && it->second.count(key) > 0;
}

std::string Config::get_str(const std::string& section, const std::string& key) const {
    auto it = sections_.find(section);
    if (it == sections_.end() || !it->second.count(key))
        throw ConfigError("missing required key " + section + "." + key);
    return it->second.at(key);
}

std::string Config::get_str(const std::string& section, const std::string& key,
                            const std::string& fallback) const {
    return has(section, key) ? get_str(section, key) : fallback;
}

long Config::get_int(const std::string& section, const std::string& key) const {
    return parse_int(section, key, get_str(section, key));
}

long Config::get_int(const std::string& section, const std::string& key, long fallback) const {
    return has(section, key) ? get_int(section, key) : fallback;
}

double Config::get_float(const std::string& section, const std::string& key) const {
    return parse_float(section, key, get_str(section, key));
}

double Config::get_float(const std::string& section, const std::string& key,
                         double fallback) const {
    return has(section, key) ? get_float(section, key) : fallback;
}

bool Config::get_bool(const std::string& section, const std::string& key) const {
    return parse_bool(section, key, get_str(section, key));
}

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) const {
    return has(section, key) ? get_bool(section, key) : fallback;
}

std::vector<std::string> Config::get_list(const std::string& section,
                                          const std::string& key) const {
    std::vector<std::string> out;
    std::istringstream ss(get_str(section, key));
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<long> Config::get_int_list(const std::string& section, const std::string& key) const {
    std::vector<long> out;
    for (const auto& item : get_list(section, key)) out.push_back(parse_int(section, key, item));
    return out;
}

void Config::validate(const std::vector<SchemaEntry>& schema) const {
    std::set<std::string> known_sections;
    std::set<std::string> known_keys;
    for (const auto& e : schema) {
        known_sections.insert(e.section);
        known_keys.insert(e.section + "." + e.key);
    }
    for (const auto& [section, kv] : sections_) {
        if (!known_sections.count(section))
            throw ConfigError("unknown config section [" + section + "]");
        for (const auto& [key, value] : kv) {
            if (!known_keys.count(section + "." + key))
                throw ConfigError("unknown config key " + section + "." + key);
        }
    }
    // type-check present values
    for (const auto& e : schema) {
        if (!has(e.section, e.key)) continue;
        const std::string v = get_str(e.section, e.key);
        switch (e.type) {
            case Type::Int: parse_int(e.section, e.key, v); break;
            case Type::Float: parse_float(e.section, e.key, v); break;
            case Type::Bool: parse_bool(e.section, e.key, v); break;
            case Type::Str: break;
        }
    }
}

std::string Config::canonical() const {
    std::ostringstream out;
    for (const auto& [section, kv] : sections_) {
        out << "[" << section << "]\n";
        for (const auto& [key, value] : kv) out << key << " = " << value << "\n";
    }
    return out.str();
}

}  // namespace dumotion
