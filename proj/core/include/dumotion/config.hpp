#pragma once

#include <map>
#include <string>
#include <vector>

#include "dumotion/common.hpp"

namespace dumotion {

// Sectioned key/value config text:
//   [section]
//   key = value        # trailing comments allowed
// Values stay strings until a typed getter pulls them; a schema pass rejects
// unknown keys and unparseable values before any compute starts.
class Config {
  public:
    static Config parse_string(const std::string& text, const std::string& origin = "<string>");
    static Config parse_file(const std::string& path);

    // "section.key=value" (CLI --set form); overrides or creates the entry
    void set_dotted(const std::string& assignment);
    void set(const std::string& section, const std::string& key, const std::string& value);

    bool has(const std::string& section, const std::string& key) const;

    std::string get_str(const std::string& section, const std::string& key) const;
    std::string get_str(const std::string& section, const std::string& key,
                        const std::string& fallback) const;
    long get_int(const std::string& section, const std::string& key) const;
    long get_int(const std::string& section, const std::string& key, long fallback) const;
    double get_float(const std::string& section, const std::string& key) const;
    double get_float(const std::string& section, const std::string& key, double fallback) const;
    bool get_bool(const std::string& section, const std::string& key) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;

    // comma-separated lists
    std::vector<std::string> get_list(const std::string& section, const std::string& key) const;
    std::vector<long> get_int_list(const std::string& section, const std::string& key) const;

    enum class Type { Int, Float, Bool, Str };
    struct SchemaEntry {
        std::string section;
        std::string key;
        Type type;
    };
    // Rejects keys absent from the schema and values that fail to parse as
    // their declared type. Sections not mentioned by any schema entry are
    // rejected wholesale.
    void validate(const std::vector<SchemaEntry>& schema) const;

    // deterministic serialization (sections and keys sorted) for hashing
    std::string canonical() const;

  private:
    std::map<std::string, std::map<std::string, std::string>> sections_;
};

}  // namespace dumotion
