#include "mvpost/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "mvpost/copula.hpp"
#include "mvpost/rng.hpp"
#include "mvpost/special.hpp"

namespace mvpost::data {

namespace {

constexpr double kTwoPi = 6.283185307179586477;

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_number(const std::string& field, std::size_t line) {
    double value = 0.0;
    const char* begin = field.data();
    const char* end = begin + field.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end)
        throw ParseError(line, "malformed number '" + field + "'");
    return value;
}

std::string format_number(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

bool nonnegative_variable(Variable v) { return v == Variable::maxwsp || v == Variable::precip; }

}  // namespace

std::string_view variable_name(Variable v) {
    switch (v) {
        case Variable::maxwsp: return "maxwsp";
        case Variable::precip: return "precip";
        case Variable::mintemp: return "mintemp";
        case Variable::maxtemp: return "maxtemp";
        case Variable::pressure: return "pressure";
    }
    throw std::logic_error("variable_name: bad variable");
}

Variable variable_from_name(std::string_view name) {
    for (Variable v : kCanonicalOrder)
        if (variable_name(v) == name) return v;
    throw SchemaError("unknown variable '" + std::string(name) + "'");
}

bma::Kind kind_of(Variable v) {
    switch (v) {
        case Variable::maxwsp: return bma::Kind::gamma;
        case Variable::precip: return bma::Kind::precip;
        default: return bma::Kind::gaussian;
    }
}

std::string_view unit_of(Variable v) {
    switch (v) {
        case Variable::maxwsp: return "m/s";
        case Variable::precip: return "mm";
        case Variable::mintemp: return "C";
        case Variable::maxtemp: return "C";
        case Variable::pressure: return "mb";
    }
    throw std::logic_error("unit_of: bad variable");
}

std::int64_t days_from_civil(int year, unsigned month, unsigned day) {
    year -= month <= 2;
    const int era = (year >= 0 ? year : year - 399) / 400;
    const unsigned yoe = unsigned(year - era * 400);
    const unsigned doy = (153 * (month + (month > 2 ? -3 : 9)) + 2) / 5 + day - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097LL + doe - 719468;
}

void civil_from_days(std::int64_t days, int& year, unsigned& month, unsigned& day) {
    days += 719468;
    const std::int64_t era = (days >= 0 ? days : days - 146096) / 146097;
    const unsigned doe = unsigned(days - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t y = std::int64_t(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    day = doy - (153 * mp + 2) / 5 + 1;
    month = mp + (mp < 10 ? 3 : -9);
    year = int(y + (month <= 2));
}

std::int64_t parse_date(std::string_view iso) {
    if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-')
        throw std::invalid_argument("bad ISO date '" + std::string(iso) + "'");
    auto number = [&](std::size_t off, std::size_t len) {
        int v = 0;
        auto [ptr, ec] = std::from_chars(iso.data() + off, iso.data() + off + len, v);
        if (ec != std::errc() || ptr != iso.data() + off + len)
            throw std::invalid_argument("bad ISO date '" + std::string(iso) + "'");
        return v;
    };
    const int y = number(0, 4);
    const int m = number(5, 2);
    const int d = number(8, 2);
    if (m < 1 || m > 12 || d < 1 || d > 31)
        throw std::invalid_argument("bad ISO date '" + std::string(iso) + "'");
    return days_from_civil(y, unsigned(m), unsigned(d));
}

std::string format_date(std::int64_t days) {
    int y;
    unsigned m, d;
    civil_from_days(days, y, m, d);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", y, m, d);
    return buf;
}

std::vector<std::string> Dataset::stations() const {
    std::vector<std::string> out;
    for (const auto& rec : records)
        if (out.empty() || out.back() != rec.station) out.push_back(rec.station);
    return out;
}

std::size_t Dataset::variable_index(Variable v) const {
    for (std::size_t i = 0; i < variables.size(); ++i)
        if (variables[i] == v) return i;
    throw std::invalid_argument("dataset does not contain variable '" +
                                std::string(variable_name(v)) + "'");
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset file " + path.string());

    Dataset d;
    std::string line;
    std::size_t lineno = 0;
    std::size_t member_cols = 0;
    bool header_seen = false;

    struct RawRow {
        std::vector<double> members;
        double obs = 0.0;
    };
    // (station, date) -> canonical variable slot -> row
    std::map<std::pair<std::string, std::int64_t>, std::array<std::optional<RawRow>, 5>> days;
    std::array<bool, 5> seen{};

    auto canonical_slot = [](Variable v) {
        for (std::size_t i = 0; i < kCanonicalOrder.size(); ++i)
            if (kCanonicalOrder[i] == v) return i;
        throw std::logic_error("canonical_slot");
    };

    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') {
            if (line.rfind("# units:", 0) == 0) {
                std::istringstream units(line.substr(8));
                std::string tok;
                while (units >> tok) {
                    const auto eq = tok.find('=');
                    if (eq == std::string::npos)
                        throw SchemaError("line " + std::to_string(lineno) +
                                          ": malformed units entry '" + tok + "'");
                    const Variable v = variable_from_name(tok.substr(0, eq));
                    if (tok.substr(eq + 1) != unit_of(v))
                        throw SchemaError("line " + std::to_string(lineno) + ": variable '" +
                                          std::string(variable_name(v)) + "' must be in " +
                                          std::string(unit_of(v)) + ", got '" +
                                          tok.substr(eq + 1) + "'");
                }
            }
            continue;
        }
        const std::vector<std::string> fields = split_csv(line);
        if (!header_seen) {
            if (fields.size() < 5 || fields[0] != "station" || fields[1] != "date" ||
                fields[2] != "variable" || fields.back() != "obs")
                throw SchemaError("line " + std::to_string(lineno) +
                                  ": header must be station,date,variable,member_1..member_K,obs");
            member_cols = fields.size() - 4;
            for (std::size_t k = 0; k < member_cols; ++k)
                if (fields[3 + k] != "member_" + std::to_string(k + 1))
                    throw SchemaError("line " + std::to_string(lineno) +
                                      ": unexpected member column '" + fields[3 + k] + "'");
            header_seen = true;
            continue;
        }
        if (fields.size() != member_cols + 4)
            throw ParseError(lineno, "expected " + std::to_string(member_cols + 4) +
                                         " columns, got " + std::to_string(fields.size()));

        Variable var;
        try {
            var = variable_from_name(fields[2]);
        } catch (const SchemaError& e) {
            throw SchemaError("line " + std::to_string(lineno) + ": " + e.what());
        }
        std::int64_t date;
        try {
            date = parse_date(fields[1]);
        } catch (const std::invalid_argument& e) {
            throw ParseError(lineno, e.what());
        }

        bool missing = fields[0].empty();
        for (std::size_t k = 0; k < member_cols && !missing; ++k) missing = fields[3 + k].empty();
        if (fields.back().empty()) missing = true;
        if (missing) {
            ++d.dropped_rows;
            continue;
        }

        RawRow row;
        row.members.resize(member_cols);
        for (std::size_t k = 0; k < member_cols; ++k)
            row.members[k] = parse_number(fields[3 + k], lineno);
        row.obs = parse_number(fields.back(), lineno);
        if (nonnegative_variable(var)) {
            for (double m : row.members)
                if (m < 0.0)
                    throw ParseError(lineno, "negative value for nonnegative variable '" +
                                                 std::string(variable_name(var)) + "'");
            if (row.obs < 0.0)
                throw ParseError(lineno, "negative observation for nonnegative variable '" +
                                             std::string(variable_name(var)) + "'");
        }

        auto& slot = days[{fields[0], date}][canonical_slot(var)];
        if (slot.has_value()) throw ParseError(lineno, "duplicate row for this station-day variable");
        slot = std::move(row);
        seen[canonical_slot(var)] = true;
    }

    d.member_count = member_cols;
    for (std::size_t i = 0; i < kCanonicalOrder.size(); ++i)
        if (seen[i]) d.variables.push_back(kCanonicalOrder[i]);

    for (auto& [key, slots] : days) {
        bool complete = true;
        for (Variable v : d.variables)
            if (!slots[canonical_slot(v)].has_value()) complete = false;
        if (!complete) {
            ++d.dropped_days;
            continue;
        }
        StationDayRecord rec;
        rec.station = key.first;
        rec.date = key.second;
        for (Variable v : d.variables) {
            auto& row = *slots[canonical_slot(v)];
            rec.members.push_back(std::move(row.members));
            rec.obs.emplace_back(row.obs);
        }
        d.records.push_back(std::move(rec));
    }
    // std::map iteration already delivers (station, date) order.
    return d;
}

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write dataset file " + path.string());
    out << "# units:";
    for (Variable v : d.variables)
        out << ' ' << variable_name(v) << '=' << unit_of(v);
    out << '\n';
    out << "station,date,variable";
    for (std::size_t k = 1; k <= d.member_count; ++k) out << ",member_" << k;
    out << ",obs\n";
    for (const auto& rec : d.records) {
        for (std::size_t vi = 0; vi < d.variables.size(); ++vi) {
            out << rec.station << ',' << format_date(rec.date) << ','
                << variable_name(d.variables[vi]);
            for (double m : rec.members[vi]) out << ',' << format_number(m);
            out << ',';
            if (rec.obs[vi].has_value()) out << format_number(*rec.obs[vi]);
            out << '\n';
        }
    }
}

nlohmann::json dataset_manifest(const Dataset& d) {
    nlohmann::json j;
    j["members"] = d.member_count;
    j["records"] = d.records.size();
    j["dropped_rows"] = d.dropped_rows;
    j["dropped_days"] = d.dropped_days;
    j["stations"] = d.stations();
    std::vector<std::string> vars;
    nlohmann::json units;
    for (Variable v : d.variables) {
        vars.emplace_back(variable_name(v));
        units[std::string(variable_name(v))] = std::string(unit_of(v));
    }
    j["variables"] = vars;
    j["units"] = units;
    if (!d.records.empty()) {
        std::int64_t lo = d.records.front().date, hi = lo;
        for (const auto& rec : d.records) {
            lo = std::min(lo, rec.date);
            hi = std::max(hi, rec.date);
        }
        j["date_range"] = {format_date(lo), format_date(hi)};
    }
    return j;
}

std::span<const StationDayRecord> station_range(const Dataset& d, std::string_view station) {
    auto lo = std::lower_bound(d.records.begin(), d.records.end(), station,
                               [](const StationDayRecord& r, std::string_view s) {
                                   return std::string_view(r.station) < s;
                               });
    auto hi = std::upper_bound(d.records.begin(), d.records.end(), station,
                               [](std::string_view s, const StationDayRecord& r) {
                                   return s < std::string_view(r.station);
                               });
    return {&*lo, std::size_t(hi - lo)};
}

bma::TrainingSet rolling_window(const Dataset& d, std::string_view station, Variable v,
                                std::int64_t target_date, std::size_t width) {
    const std::size_t vi = d.variable_index(v);
    const auto range = station_range(d, station);
    std::vector<const StationDayRecord*> usable;
    for (const auto& rec : range) {
        if (rec.date >= target_date) break;
        if (rec.obs[vi].has_value()) usable.push_back(&rec);
    }
    if (usable.size() < width)
        throw WindowError(usable.size(),
                          "rolling_window: only " + std::to_string(usable.size()) +
                              " complete days before " + format_date(target_date) + " for " +
                              std::string(variable_name(v)) + " at " + std::string(station) +
                              "; need " + std::to_string(width));
    bma::TrainingSet ts;
    ts.reserve(width);
    for (std::size_t i = usable.size() - width; i < usable.size(); ++i)
        ts.push_back({usable[i]->members[vi], *usable[i]->obs[vi]});
    return ts;
}

// ---------------------------------------------------------------------------
// Synthetic generator

nlohmann::json synthetic_spec_to_json(const SyntheticSpec& spec) {
    nlohmann::json j;
    j["seed"] = spec.seed;
    j["members"] = spec.member_count;
    j["stations"] = spec.stations;
    j["start_date"] = format_date(spec.start_date);
    j["days"] = spec.days;
    std::vector<std::string> vars;
    for (Variable v : spec.variables) vars.emplace_back(variable_name(v));
    j["variables"] = vars;
    j["correlation"] = spec.correlation.entries();
    nlohmann::json truth = nlohmann::json::array();
    for (std::size_t i = 0; i < spec.truth.size(); ++i) {
        const SyntheticVariable& sv = spec.truth[i];
        nlohmann::json t;
        t["variable"] = std::string(variable_name(spec.variables[i]));
        t["base"] = sv.base;
        t["seasonal"] = sv.seasonal;
        t["phase"] = sv.phase;
        t["signal_sd"] = sv.signal_sd;
        t["member_noise_sd"] = sv.member_noise_sd;
        t["station_offset_sd"] = sv.station_offset_sd;
        t["member_bias"] = sv.member_bias;
        t["model"] = bma::bma_model_to_json(sv.truth);
        truth.push_back(std::move(t));
    }
    j["truth"] = truth;
    return j;
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
    SyntheticSpec spec;
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.member_count = j.at("members").get<std::size_t>();
    spec.stations = j.at("stations").get<std::vector<std::string>>();
    spec.start_date = parse_date(j.at("start_date").get<std::string>());
    spec.days = j.at("days").get<std::size_t>();
    for (const auto& name : j.at("variables"))
        spec.variables.push_back(variable_from_name(name.get<std::string>()));
    const std::size_t p = spec.variables.size();
    spec.correlation = num::Matrix(p, p, j.at("correlation").get<std::vector<double>>());
    for (const auto& t : j.at("truth")) {
        SyntheticVariable sv;
        sv.base = t.at("base").get<double>();
        sv.seasonal = t.at("seasonal").get<double>();
        sv.phase = t.at("phase").get<double>();
        sv.signal_sd = t.at("signal_sd").get<double>();
        sv.member_noise_sd = t.at("member_noise_sd").get<double>();
        sv.station_offset_sd = t.at("station_offset_sd").get<double>();
        sv.member_bias = t.at("member_bias").get<std::vector<double>>();
        sv.truth = bma::bma_model_from_json(t.at("model"));
        spec.truth.push_back(std::move(sv));
    }
    return spec;
}

namespace {

std::vector<double> linspace(double lo, double hi, std::size_t n) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = n == 1 ? lo : lo + (hi - lo) * double(i) / double(n - 1);
    return out;
}

template <typename Model>
Model shared_kernels(std::size_t k, Model proto) {
    Model m = std::move(proto);
    m.weights.assign(k, 1.0 / double(k));
    return m;
}

}  // namespace

SyntheticSpec default_synthetic_spec(std::vector<std::string> stations, std::size_t days,
                                     std::uint64_t seed, std::optional<num::Matrix> correlation,
                                     std::size_t member_count) {
    SyntheticSpec spec;
    spec.seed = seed;
    spec.member_count = member_count;
    spec.stations = std::move(stations);
    spec.start_date = days_from_civil(2006, 6, 1);
    spec.days = days;
    spec.variables.assign(kCanonicalOrder.begin(), kCanonicalOrder.end());
    spec.correlation = correlation.value_or(num::Matrix::identity(5));
    const std::size_t k = member_count;

    {  // maxwsp
        SyntheticVariable sv;
        sv.base = 6.0;
        sv.seasonal = 1.5;
        sv.phase = 80.0;
        sv.signal_sd = 1.8;
        sv.member_noise_sd = 0.35;
        sv.station_offset_sd = 0.4;
        sv.member_bias = linspace(-0.6, 1.0, k);
        bma::GammaBmaModel m;
        m.mean_coef.assign(k, {0.6, 0.9});
        m.var_coef = {0.8, 0.10};
        sv.truth = shared_kernels(k, std::move(m));
        spec.truth.push_back(std::move(sv));
    }
    {  // precip (driver on the cube-root scale)
        SyntheticVariable sv;
        sv.base = 0.55;
        sv.seasonal = 0.35;
        sv.phase = 200.0;
        sv.signal_sd = 0.65;
        sv.member_noise_sd = 0.22;
        sv.station_offset_sd = 0.08;
        sv.member_bias = linspace(-0.25, 0.45, k);
        bma::PrecipBmaModel m;
        m.logit_coef.assign(k, {0.45, -1.45, 0.9});
        m.mean_coef.assign(k, {0.12, 0.85});
        m.var_coef = {0.06, 0.005};
        sv.truth = shared_kernels(k, std::move(m));
        spec.truth.push_back(std::move(sv));
    }
    {  // mintemp
        SyntheticVariable sv;
        sv.base = 4.0;
        sv.seasonal = 6.0;
        sv.phase = 0.0;
        sv.signal_sd = 3.0;
        sv.member_noise_sd = 0.55;
        sv.station_offset_sd = 1.0;
        sv.member_bias = linspace(-1.2, 0.6, k);
        bma::GaussianBmaModel m;
        m.bias.assign(k, {0.5, 0.92});
        m.sigma2 = 1.2;
        sv.truth = shared_kernels(k, std::move(m));
        spec.truth.push_back(std::move(sv));
    }
    {  // maxtemp
        SyntheticVariable sv;
        sv.base = 13.0;
        sv.seasonal = 8.0;
        sv.phase = 0.0;
        sv.signal_sd = 3.5;
        sv.member_noise_sd = 0.6;
        sv.station_offset_sd = 1.0;
        sv.member_bias = linspace(-0.7, 1.3, k);
        bma::GaussianBmaModel m;
        m.bias.assign(k, {0.8, 0.9});
        m.sigma2 = 1.4;
        sv.truth = shared_kernels(k, std::move(m));
        spec.truth.push_back(std::move(sv));
    }
    {  // pressure
        SyntheticVariable sv;
        sv.base = 1016.0;
        sv.seasonal = 4.0;
        sv.phase = 120.0;
        sv.signal_sd = 6.0;
        sv.member_noise_sd = 0.9;
        sv.station_offset_sd = 2.0;
        sv.member_bias = linspace(-1.5, 1.5, k);
        bma::GaussianBmaModel m;
        m.bias.assign(k, {101.6, 0.9});
        m.sigma2 = 2.2;
        sv.truth = shared_kernels(k, std::move(m));
        spec.truth.push_back(std::move(sv));
    }
    return spec;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
    if (spec.stations.empty())
        throw std::invalid_argument("generate_synthetic: no stations in spec");
    if (spec.days == 0) throw std::invalid_argument("generate_synthetic: day count is zero");
    if (spec.member_count == 0)
        throw std::invalid_argument("generate_synthetic: member count is zero");
    if (spec.variables.empty())
        throw std::invalid_argument("generate_synthetic: no variables in spec");
    if (spec.truth.size() != spec.variables.size())
        throw std::invalid_argument("generate_synthetic: truth entries do not match variables");
    const std::size_t p = spec.variables.size();
    const std::size_t k = spec.member_count;
    for (std::size_t j = 0; j < p; ++j) {
        const SyntheticVariable& sv = spec.truth[j];
        if (sv.member_bias.size() != k)
            throw std::invalid_argument("generate_synthetic: member_bias size mismatch for " +
                                        std::string(variable_name(spec.variables[j])));
        if (bma::kind_of(sv.truth) != kind_of(spec.variables[j]))
            throw std::invalid_argument("generate_synthetic: truth kernel kind mismatch for " +
                                        std::string(variable_name(spec.variables[j])));
    }
    // Validates symmetry, unit diagonal and positive definiteness.
    const copula::CorrelationMatrix corr(spec.correlation);
    const num::Matrix& chol = corr.cholesky();

    Dataset d;
    d.variables = spec.variables;
    d.member_count = k;
    d.records.reserve(spec.stations.size() * spec.days);

    for (const auto& station : spec.stations) {
        const num::RngStream offsets(spec.seed,
                                     num::RngStream::derive_stream("synth-offset:" + station, 0, 0));
        const num::RngStream signal(spec.seed,
                                    num::RngStream::derive_stream("synth-signal:" + station, 0, 0));
        const num::RngStream noise(spec.seed,
                                   num::RngStream::derive_stream("synth-noise:" + station, 0, 0));
        const num::RngStream resid(spec.seed,
                                   num::RngStream::derive_stream("synth-resid:" + station, 0, 0));
        std::vector<double> offset(p);
        for (std::size_t j = 0; j < p; ++j)
            offset[j] = spec.truth[j].station_offset_sd * offsets.normal_at(j);

        std::vector<double> eps(p), z(p), members(k);
        for (std::size_t t = 0; t < spec.days; ++t) {
            StationDayRecord rec;
            rec.station = station;
            rec.date = spec.start_date + std::int64_t(t);
            rec.members.resize(p);
            rec.obs.resize(p);

            for (std::size_t j = 0; j < p; ++j) eps[j] = resid.normal_at(t * p + j);
            for (std::size_t j = 0; j < p; ++j) {
                double s = 0.0;
                for (std::size_t l = 0; l <= j; ++l) s += chol(j, l) * eps[l];
                z[j] = s;
            }

            for (std::size_t j = 0; j < p; ++j) {
                const SyntheticVariable& sv = spec.truth[j];
                const Variable var = spec.variables[j];
                const double theta = sv.base + offset[j] +
                                     sv.seasonal * std::sin(kTwoPi * (double(t) + sv.phase) / 365.25) +
                                     sv.signal_sd * signal.normal_at(t * p + j);
                for (std::size_t mk = 0; mk < k; ++mk) {
                    const double raw = theta + sv.member_bias[mk] +
                                       sv.member_noise_sd * noise.normal_at((t * p + j) * k + mk);
                    switch (var) {
                        case Variable::maxwsp: members[mk] = std::max(raw, 0.05); break;
                        case Variable::precip: {
                            const double c = std::max(raw, 0.0);
                            members[mk] = c * c * c;
                            break;
                        }
                        default: members[mk] = raw;
                    }
                }
                rec.members[j] = members;
                const bma::PredictiveMarginal marginal = bma::make_marginal(sv.truth, members);
                const double u =
                    std::clamp(num::std_normal_cdf(z[j]), 1e-12, 1.0 - 1e-12);
                rec.obs[j] = marginal.quantile(u);
            }
            d.records.push_back(std::move(rec));
        }
    }

    std::sort(d.records.begin(), d.records.end(),
              [](const StationDayRecord& a, const StationDayRecord& b) {
                  return a.station == b.station ? a.date < b.date : a.station < b.station;
              });
    return d;
}

}  // namespace mvpost::data
