#include "sfpnet/numerics.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <type_traits>

namespace sfpnet {

namespace {

constexpr const char* kMagic = "sfpnet-checkpoint";
constexpr int kVersion = 1;

std::string hexfloat(double x)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", x);
    return buf;
}

[[noreturn]] void bad_checkpoint(const std::string& path, int line, const std::string& what)
{
    std::ostringstream os;
    os << "checkpoint " << path << ':' << line << ": " << what;
    throw std::runtime_error(os.str());
}

} // namespace

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& params,
                     const std::map<std::string, std::string>& meta)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot open checkpoint for writing: " + path);
    out << kMagic << " v" << kVersion << '\n';
    out << "scalar " << (std::is_same_v<T, float> ? "f32" : "f64") << '\n';
    out << "step " << params.step() << '\n';
    out << "meta " << meta.size() << '\n';
    for (const auto& [k, v] : meta) {
        if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
            throw std::invalid_argument("checkpoint metadata may not contain '=' in keys or newlines");
        out << k << '=' << v << '\n';
    }
    out << "params " << params.size() << '\n';
    for (std::size_t i = 0; i < params.size(); ++i) {
        const ParamId id{i};
        const auto& w = params.value(id);
        out << "param " << params.name(id) << ' ' << w.rows() << ' ' << w.cols() << ' '
            << (params.freezes_first_row(id) ? 1 : 0) << '\n';
        for (Index r = 0; r < w.rows(); ++r) {
            for (Index c = 0; c < w.cols(); ++c) {
                if (c)
                    out << ' ';
                out << hexfloat(static_cast<double>(w(r, c)));
            }
            out << '\n';
        }
    }
    out << "end\n";
    if (!out)
        throw std::runtime_error("failed writing checkpoint: " + path);
}

CheckpointData load_checkpoint(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open checkpoint: " + path);

    CheckpointData data;
    std::string line;
    int lineno = 0;
    auto next = [&]() -> std::string& {
        if (!std::getline(in, line))
            bad_checkpoint(path, lineno, "unexpected end of file");
        ++lineno;
        return line;
    };

    {
        std::istringstream is(next());
        std::string magic, version;
        is >> magic >> version;
        if (magic != kMagic)
            bad_checkpoint(path, lineno, "not an sfpnet checkpoint");
        if (version != "v" + std::to_string(kVersion))
            bad_checkpoint(path, lineno, "unsupported checkpoint version " + version);
    }
    auto keyed = [&](const char* key) {
        std::istringstream is(next());
        std::string k, v;
        is >> k >> v;
        if (k != key)
            bad_checkpoint(path, lineno, std::string("expected '") + key + "'");
        return v;
    };
    data.scalar = keyed("scalar");
    if (data.scalar != "f32" && data.scalar != "f64")
        bad_checkpoint(path, lineno, "unknown scalar type " + data.scalar);
    const std::int64_t step = std::stoll(keyed("step"));
    const std::size_t n_meta = std::stoul(keyed("meta"));
    for (std::size_t i = 0; i < n_meta; ++i) {
        const auto& l = next();
        const auto eq = l.find('=');
        if (eq == std::string::npos)
            bad_checkpoint(path, lineno, "metadata line without '='");
        data.meta[l.substr(0, eq)] = l.substr(eq + 1);
    }
    const std::size_t n_params = std::stoul(keyed("params"));
    for (std::size_t i = 0; i < n_params; ++i) {
        std::istringstream header(next());
        std::string tag, name;
        Index rows = 0, cols = 0;
        int frozen = 0;
        if (!(header >> tag >> name >> rows >> cols >> frozen) || tag != "param" || rows < 0 ||
            cols < 0)
            bad_checkpoint(path, lineno, "malformed parameter header");
        Matrix<double> w(rows, cols);
        for (Index r = 0; r < rows; ++r) {
            const auto& l = next();
            const char* p = l.c_str();
            for (Index c = 0; c < cols; ++c) {
                char* end = nullptr;
                const double v = std::strtod(p, &end);
                if (end == p || !std::isfinite(v))
                    bad_checkpoint(path, lineno, "bad value in parameter " + name);
                w(r, c) = v;
                p = end;
            }
        }
        data.params.add(name, std::move(w), frozen != 0);
    }
    if (next() != "end")
        bad_checkpoint(path, lineno, "missing end marker");
    data.params.set_step(step);
    return data;
}

template void save_checkpoint<float>(const std::string&, const ParamStore<float>&,
                                     const std::map<std::string, std::string>&);
template void save_checkpoint<double>(const std::string&, const ParamStore<double>&,
                                      const std::map<std::string, std::string>&);
// Extended-precision stores are written rounded to double.
template void save_checkpoint<long double>(const std::string&, const ParamStore<long double>&,
                                           const std::map<std::string, std::string>&);

} // namespace sfpnet
