#pragma once

// Flat key=value configuration files: one pair per line, '#' starts a comment, blank lines
// ignored, whitespace around keys and values trimmed.

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfpnet {

class ConfigParseError : public std::runtime_error {
public:
    ConfigParseError(const std::string& source, int line, const std::string& what);

    const std::string& source() const { return source_; }
    int line() const { return line_; }

private:
    std::string source_;
    int line_;
};

class KeyValueConfig {
public:
    static KeyValueConfig parse(const std::string& text, const std::string& source = "<string>");
    static KeyValueConfig load(const std::string& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    const std::string& source() const { return source_; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<std::int64_t> get_int_list(const std::string& key,
                                           const std::vector<std::int64_t>& fallback) const;
    std::vector<double> get_double_list(const std::string& key,
                                        const std::vector<double>& fallback) const;

    /// Throws ConfigParseError at the first key not in `known`.
    void require_known(const std::set<std::string>& known) const;

    /// Throws ConfigParseError pointing at `key`'s line (line 0 when the key is absent).
    [[noreturn]] void fail(const std::string& key, const std::string& what) const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::string source_;
    std::map<std::string, std::string> values_;
    std::map<std::string, int> lines_;
};

/// Serializes pairs in the given order as "key=value" lines.
std::string to_config_text(const std::vector<std::pair<std::string, std::string>>& pairs);

std::vector<std::int64_t> parse_int_list(const std::string& text);
std::string join_ints(const std::vector<std::int64_t>& v);
std::string join_doubles(const std::vector<double>& v);

/// Shortest decimal text that parses back to exactly `x`.
std::string exact_double(double x);

} // namespace sfpnet
