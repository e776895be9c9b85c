#include "dsr/io.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <charconv>
#include <sstream>

namespace dsr::io {

using nlohmann::json;

namespace {

std::ifstream open_in(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw ParseError(fmt::format("cannot open {}", path.string()));
    return in;
}

std::ofstream open_out(const fs::path& path)
{
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
    return out;
}

bool parse_double(std::string_view s, double& v)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    return ec == std::errc() && ptr == s.data() + s.size();
}

std::vector<std::string_view> split(std::string_view line, char sep)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(sep, start);
        out.push_back(line.substr(start, pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

json vector_json(const Vector& v)
{
    return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Vector json_vector(const json& j, const char* key, long expected)
{
    const auto values = j.at(key).get<std::vector<double>>();
    if (expected >= 0 && static_cast<long>(values.size()) != expected)
        throw ParseError(fmt::format("field '{}' has {} entries, expected {}", key, values.size(),
                                     expected));
    return Eigen::Map<const Vector>(values.data(), static_cast<long>(values.size()));
}

}  // namespace

std::string format_exact(double v) { return fmt::format("{}", v); }

std::string format_result(double v) { return fmt::format("{:.6f}", v); }

void write_trajectory_csv(const fs::path& path, const Trajectory& traj)
{
    auto out = open_out(path);
    std::string buf = "t";
    for (long d = 0; d < traj.dims(); ++d) buf += fmt::format(",dim{}", d);
    buf += '\n';
    for (long t = 0; t < traj.length(); ++t) {
        buf += format_exact(static_cast<double>(t) * traj.dt);
        for (long d = 0; d < traj.dims(); ++d) {
            buf += ',';
            buf += format_exact(traj.data(t, d));
        }
        buf += '\n';
    }
    out << buf;
}

Trajectory read_trajectory_csv(const fs::path& path, double dt)
{
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(fmt::format("{}: empty file", path.string()));
    const auto header = split(line, ',');
    if (header.size() < 2 || header[0] != "t")
        throw ParseError(fmt::format("{}:1: expected header 't,dim0,...'", path.string()));
    const long dims = static_cast<long>(header.size()) - 1;
    std::vector<double> values;
    long rows = 0, line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto fields = split(line, ',');
        if (static_cast<long>(fields.size()) != dims + 1)
            throw ParseError(fmt::format("{}:{}: expected {} fields, found {}", path.string(),
                                         line_no, dims + 1, fields.size()));
        for (long d = 1; d <= dims; ++d) {
            double v = 0.0;
            if (!parse_double(fields[d], v))
                throw ParseError(fmt::format("{}:{}: '{}' is not a number", path.string(), line_no,
                                             std::string(fields[d])));
            values.push_back(v);
        }
        ++rows;
    }
    Trajectory traj;
    traj.dt = dt;
    traj.source = path.filename().string();
    traj.data = Eigen::Map<const Matrix>(values.data(), rows, dims);
    return traj;
}

void write_dataset(const fs::path& stem, const Dataset& data)
{
    const fs::path series = fs::path(stem).concat(".csv");
    const fs::path clean = fs::path(stem).concat(".clean.csv");
    write_trajectory_csv(series, data.series);
    write_trajectory_csv(clean, data.clean);
    json j;
    j["series"] = series.filename().string();
    j["clean"] = clean.filename().string();
    j["source"] = data.series.source;
    j["dt"] = data.series.dt;
    j["seed"] = data.seed;
    j["noise_pct"] = data.noise_pct;
    j["per_dim_mean"] = vector_json(data.per_dim_mean);
    j["per_dim_std"] = vector_json(data.per_dim_std);
    j["rows"] = data.length();
    j["dims"] = data.dims();
    open_out(fs::path(stem).concat(".json")) << j.dump(2) << '\n';
}

Dataset read_dataset(const fs::path& sidecar)
{
    json j;
    try {
        auto in = open_in(sidecar);
        j = json::parse(in);
        Dataset d;
        const fs::path dir = sidecar.parent_path();
        const double dt = j.at("dt").get<double>();
        d.series = read_trajectory_csv(dir / j.at("series").get<std::string>(), dt);
        if (j.contains("clean")) d.clean = read_trajectory_csv(dir / j.at("clean").get<std::string>(), dt);
        d.series.source = d.clean.source = j.value("source", std::string("file"));
        d.seed = j.value("seed", std::uint64_t{0});
        d.noise_pct = j.value("noise_pct", 0.0);
        d.per_dim_mean = json_vector(j, "per_dim_mean", d.dims());
        d.per_dim_std = json_vector(j, "per_dim_std", d.dims());
        if (d.clean.length() > 0 &&
            (d.clean.length() != d.length() || d.clean.dims() != d.dims()))
            throw ParseError("clean series shape does not match the noisy series");
        return d;
    } catch (const json::exception& e) {
        throw ParseError(fmt::format("{}: {}", sidecar.string(), e.what()));
    }
}

std::vector<double> read_raw_series(const fs::path& path)
{
    auto in = open_in(path);
    std::vector<double> out;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        std::string_view field = line;
        if (const auto comma = field.find(','); comma != std::string_view::npos)
            field = field.substr(0, comma);
        double v = 0.0;
        if (!parse_double(field, v)) {
            if (line_no == 1 && out.empty()) continue;  // header
            throw ParseError(fmt::format("{}:{}: '{}' is not a number", path.string(), line_no,
                                         std::string(field)));
        }
        out.push_back(v);
    }
    return out;
}

void write_mask(const fs::path& path, const TopologyMask& mask)
{
    const int m = mask.size();
    std::string buf = fmt::format("M={} sparsity={:.6f}\n", m, mask.sparsity());
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) buf += mask(i, j) ? '1' : '0';
        buf += '\n';
    }
    open_out(path) << buf;
}

TopologyMask parse_mask(const std::string& text, const std::string& origin)
{
    std::istringstream in(text);
    std::string line;
    long line_no = 0;
    int m = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (std::sscanf(line.c_str(), "M=%d", &m) != 1 || m < 1)
            throw ParseError(fmt::format("{}:{}: expected header 'M=<size> sparsity=<value>'",
                                         origin, line_no));
        break;
    }
    if (m < 1) throw ParseError(fmt::format("{}: missing mask header", origin));
    TopologyMask mask = TopologyMask::empty(m);
    int row = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (row == m) throw ParseError(fmt::format("{}:{}: more than {} rows", origin, line_no, m));
        int col = 0;
        for (char c : line) {
            if (c == ' ' || c == '\t' || c == ',') continue;
            if (c != '0' && c != '1')
                throw ParseError(fmt::format("{}:{}: unexpected character '{}'", origin, line_no, c));
            if (col == m)
                throw ParseError(fmt::format("{}:{}: row has more than {} entries", origin, line_no, m));
            mask.set(row, col++, c == '1');
        }
        if (col != m)
            throw ParseError(fmt::format("{}:{}: row has {} entries, expected {}", origin, line_no,
                                         col, m));
        ++row;
    }
    if (row != m) throw ParseError(fmt::format("{}: found {} rows, expected {}", origin, row, m));
    return mask;
}

TopologyMask read_mask(const fs::path& path)
{
    auto in = open_in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_mask(ss.str(), path.string());
}

void write_checkpoint(const fs::path& path, const PlrnnParams& p, const TopologyMask& mask)
{
    if (mask.size() != p.m_dim) throw InvalidArgument("mask size does not match m_dim");
    json j;
    j["format"] = "plrnn-checkpoint";
    j["version"] = 1;
    j["m_dim"] = p.m_dim;
    j["n_dim"] = p.n_dim;
    j["a_diag"] = vector_json(p.a_diag);
    std::vector<double> w(p.w.data(), p.w.data() + p.w.size());  // row-major storage
    j["w"] = w;
    j["h"] = vector_json(p.h);
    std::vector<std::string> rows;
    for (int i = 0; i < mask.size(); ++i) {
        std::string r;
        for (int k = 0; k < mask.size(); ++k) r += mask(i, k) ? '1' : '0';
        rows.push_back(std::move(r));
    }
    j["mask"] = rows;
    open_out(path) << j.dump(1) << '\n';
}

Checkpoint read_checkpoint(const fs::path& path)
{
    try {
        auto in = open_in(path);
        const json j = json::parse(in);
        if (j.value("format", std::string()) != "plrnn-checkpoint")
            throw ParseError(fmt::format("{}: not a checkpoint file", path.string()));
        if (j.value("version", 0) != 1)
            throw ParseError(fmt::format("{}: unsupported version", path.string()));
        Checkpoint c;
        auto& p = c.params;
        p.m_dim = j.at("m_dim").get<int>();
        p.n_dim = j.at("n_dim").get<int>();
        p.a_diag = json_vector(j, "a_diag", p.m_dim);
        p.h = json_vector(j, "h", p.m_dim);
        const auto w = j.at("w").get<std::vector<double>>();
        if (static_cast<long>(w.size()) != static_cast<long>(p.m_dim) * p.m_dim)
            throw ParseError(fmt::format("{}: w has {} entries", path.string(), w.size()));
        p.w = Eigen::Map<const Matrix>(w.data(), p.m_dim, p.m_dim);
        p.validate();
        std::string text = fmt::format("M={}\n", p.m_dim);
        for (const auto& r : j.at("mask")) text += r.get<std::string>() + "\n";
        c.mask = parse_mask(text, path.string() + " (mask)");
        if (c.mask.size() != p.m_dim) throw ParseError("mask size does not match m_dim");
        return c;
    } catch (const json::exception& e) {
        throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

CsvWriter::CsvWriter(const fs::path& path, const std::vector<std::string>& header)
    : out_(open_out(path)), width_(header.size())
{
    row(header);
}

void CsvWriter::row(const std::vector<std::string>& fields)
{
    if (fields.size() != width_) throw InvalidArgument("CSV row width does not match the header");
    std::string line;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) line += ',';
        line += fields[i];
    }
    line += '\n';
    out_ << line;
    out_.flush();
}

std::vector<std::string> results_row(const std::string& run_id, const std::string& criterion,
                                     const EvalReport& r, int epoch_best)
{
    return {run_id,
            criterion,
            format_result(r.sparsity),
            format_result(r.d_stsp),
            format_result(r.d_hellinger),
            format_result(r.pred_error_20),
            r.diverged ? "1" : "0",
            std::to_string(epoch_best)};
}

}  // namespace dsr::io
