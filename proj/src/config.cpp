#include "sfpnet/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace sfpnet {

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_commas(const std::string& text)
{
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(text);
    while (std::getline(is, item, ','))
        out.push_back(trim(item));
    return out;
}

bool parse_int(const std::string& s, std::int64_t& out)
{
    const char* b = s.data();
    const char* e = b + s.size();
    auto [p, ec] = std::from_chars(b, e, out);
    return ec == std::errc() && p == e && !s.empty();
}

bool parse_double(const std::string& s, double& out)
{
    if (s.empty())
        return false;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size();
}

} // namespace

ConfigParseError::ConfigParseError(const std::string& source, int line, const std::string& what)
    : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), source_(source),
      line_(line)
{
}

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& source)
{
    KeyValueConfig cfg;
    cfg.source_ = source;
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const auto hash = raw.find('#');
        const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigParseError(source, lineno, "expected key=value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty())
            throw ConfigParseError(source, lineno, "empty key");
        if (cfg.values_.count(key))
            throw ConfigParseError(source, lineno, "duplicate key '" + key + "'");
        cfg.values_[key] = trim(line.substr(eq + 1));
        cfg.lines_[key] = lineno;
    }
    return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
}

void KeyValueConfig::fail(const std::string& key, const std::string& what) const
{
    const auto it = lines_.find(key);
    throw ConfigParseError(source_, it == lines_.end() ? 0 : it->second, key + ": " + what);
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const
{
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

std::int64_t KeyValueConfig::get_int(const std::string& key, std::int64_t fallback) const
{
    const auto it = values_.find(key);
    if (it == values_.end())
        return fallback;
    std::int64_t v = 0;
    if (!parse_int(it->second, v))
        fail(key, "expected an integer, got '" + it->second + "'");
    return v;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const
{
    const auto it = values_.find(key);
    if (it == values_.end())
        return fallback;
    double v = 0;
    if (!parse_double(it->second, v))
        fail(key, "expected a number, got '" + it->second + "'");
    return v;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const
{
    const auto it = values_.find(key);
    if (it == values_.end())
        return fallback;
    const auto& v = it->second;
    if (v == "1" || v == "true" || v == "yes" || v == "on")
        return true;
    if (v == "0" || v == "false" || v == "no" || v == "off")
        return false;
    fail(key, "expected a boolean, got '" + v + "'");
}

std::vector<std::int64_t> KeyValueConfig::get_int_list(
    const std::string& key, const std::vector<std::int64_t>& fallback) const
{
    const auto it = values_.find(key);
    if (it == values_.end())
        return fallback;
    std::vector<std::int64_t> out;
    if (it->second.empty())
        return out;
    for (const auto& item : split_commas(it->second)) {
        std::int64_t v = 0;
        if (!parse_int(item, v))
            fail(key, "expected a comma-separated integer list, got '" + it->second + "'");
        out.push_back(v);
    }
    return out;
}

std::vector<double> KeyValueConfig::get_double_list(const std::string& key,
                                                    const std::vector<double>& fallback) const
{
    const auto it = values_.find(key);
    if (it == values_.end())
        return fallback;
    std::vector<double> out;
    if (it->second.empty())
        return out;
    for (const auto& item : split_commas(it->second)) {
        double v = 0;
        if (!parse_double(item, v))
            fail(key, "expected a comma-separated number list, got '" + it->second + "'");
        out.push_back(v);
    }
    return out;
}

void KeyValueConfig::require_known(const std::set<std::string>& known) const
{
    // report in file order
    std::string first;
    int first_line = 0;
    for (const auto& [k, line] : lines_)
        if (!known.count(k) && (first.empty() || line < first_line)) {
            first = k;
            first_line = line;
        }
    if (!first.empty())
        throw ConfigParseError(source_, first_line, "unknown key '" + first + "'");
}

std::string to_config_text(const std::vector<std::pair<std::string, std::string>>& pairs)
{
    std::string out;
    for (const auto& [k, v] : pairs)
        out += k + "=" + v + "\n";
    return out;
}

std::vector<std::int64_t> parse_int_list(const std::string& text)
{
    std::vector<std::int64_t> out;
    for (const auto& item : split_commas(text)) {
        std::int64_t v = 0;
        if (!parse_int(item, v))
            throw std::invalid_argument("expected a comma-separated integer list, got '" + text + "'");
        out.push_back(v);
    }
    if (out.empty())
        throw std::invalid_argument("empty integer list");
    return out;
}

std::string join_ints(const std::vector<std::int64_t>& v)
{
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i)
        out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

std::string exact_double(double x)
{
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, x);
        if (std::strtod(buf, nullptr) == x)
            break;
    }
    return buf;
}

std::string join_doubles(const std::vector<double>& v)
{
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i)
        out += (i ? "," : "") + exact_double(v[i]);
    return out;
}

} // namespace sfpnet
