#include "mvpost/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <zlib.h>

#include <CLI11.hpp>

#include "mvpost/kernels.hpp"
#include "mvpost/special.hpp"

namespace mvpost::pipeline {

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "mvpost 0.1.0";

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string join(const std::vector<std::string>& parts, char sep) {
    std::string out;
    for (const auto& s : parts) {
        if (!out.empty()) out += sep;
        out += s;
    }
    return out;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

int method_code(std::string_view method) {
    if (method == "raw") return 0;
    if (method == "independence") return 1;
    if (method == "copula") return 2;
    throw std::invalid_argument("unknown method '" + std::string(method) + "'");
}

std::string format_number(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

void write_text_file(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

nlohmann::json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    nlohmann::json j;
    in >> j;
    return j;
}

nlohmann::json load_manifest(const fs::path& outdir) {
    const fs::path p = outdir / "manifest.json";
    if (fs::exists(p)) return read_json_file(p);
    return nlohmann::json::object();
}

void record_outputs(nlohmann::json& manifest, const fs::path& outdir,
                    const std::vector<std::string>& rel_paths) {
    for (const auto& rel : rel_paths) manifest["outputs"][rel] = fnv1a64_hex(outdir / rel);
}

void save_manifest(const fs::path& outdir, const RunConfig& config, nlohmann::json manifest) {
    manifest["version"] = kVersion;
    manifest["config"] = config.to_json();
    const fs::path p = outdir / "manifest.json";
    write_json_file(p, manifest);
    // The manifest cannot contain its own hash; it lists everything else.
}

std::vector<std::string> selected_stations(const RunConfig& config, const data::Dataset& d,
                                           std::vector<std::string>* missing = nullptr) {
    const std::vector<std::string> all = d.stations();
    if (config.stations.empty()) return all;
    std::vector<std::string> out;
    for (const auto& s : config.stations) {
        if (std::find(all.begin(), all.end(), s) != all.end())
            out.push_back(s);
        else if (missing)
            missing->push_back(s);
    }
    std::sort(out.begin(), out.end());
    return out;
}

const data::StationDayRecord* find_record(std::span<const data::StationDayRecord> range,
                                          std::int64_t date) {
    auto it = std::lower_bound(range.begin(), range.end(), date,
                               [](const data::StationDayRecord& r, std::int64_t d) {
                                   return r.date < d;
                               });
    if (it == range.end() || it->date != date) return nullptr;
    return &*it;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig c;
    if (j.contains("calibration")) c.calibration = j.at("calibration").get<std::string>();
    if (j.contains("test")) c.test = j.at("test").get<std::string>();
    if (j.contains("outdir")) c.outdir = j.at("outdir").get<std::string>();
    if (j.contains("window")) c.window = j.at("window").get<std::size_t>();
    if (j.contains("samples")) c.samples = j.at("samples").get<std::size_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("stations")) c.stations = j.at("stations").get<std::vector<std::string>>();
    if (j.contains("methods")) c.methods = j.at("methods").get<std::vector<std::string>>();
    if (j.contains("jobs")) c.jobs = j.at("jobs").get<int>();
    return c;
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["calibration"] = calibration.string();
    j["test"] = test.string();
    j["outdir"] = outdir.string();
    j["window"] = window;
    j["samples"] = samples;
    j["seed"] = seed;
    j["stations"] = stations;
    j["methods"] = methods;
    j["jobs"] = jobs;
    return j;
}

void RunConfig::validate() const {
    if (samples < 100) throw std::invalid_argument("config: samples must be at least 100");
    if (window < 3) throw std::invalid_argument("config: window too small");
    if (jobs < 1) throw std::invalid_argument("config: jobs must be at least 1");
    if (methods.empty()) throw std::invalid_argument("config: no methods selected");
    for (const auto& m : methods) method_code(m);
}

bool RunConfig::wants(std::string_view method) const {
    return std::find(methods.begin(), methods.end(), method) != methods.end();
}

// ---------------------------------------------------------------------------
// Shared fitting helpers

bma::BmaModel fit_variable_model(data::Variable v, const bma::TrainingSet& ts,
                                 const bma::FitOptions& opt) {
    switch (data::kind_of(v)) {
        case bma::Kind::gaussian: return bma::fit_gaussian_bma(ts, opt);
        case bma::Kind::gamma: return bma::fit_gamma_bma(ts, opt);
        case bma::Kind::precip: return bma::fit_precip_bma(ts, opt);
    }
    throw std::logic_error("fit_variable_model: bad kind");
}

namespace {

struct DayFit {
    const data::StationDayRecord* rec = nullptr;
    std::vector<bma::BmaModel> models;
    std::vector<bma::PredictiveMarginal> marginals;
};

DayFit fit_day(const data::Dataset& d, std::string_view station, std::int64_t date,
               std::size_t window, const bma::FitOptions& opt) {
    const auto range = data::station_range(d, station);
    DayFit fit;
    fit.rec = find_record(range, date);
    if (!fit.rec)
        throw std::invalid_argument("no record for " + std::string(station) + " on " +
                                    data::format_date(date));
    for (std::size_t vi = 0; vi < d.variables.size(); ++vi) {
        const data::Variable var = d.variables[vi];
        const bma::TrainingSet ts = data::rolling_window(d, station, var, date, window);
        fit.models.push_back(fit_variable_model(var, ts, opt));
        fit.marginals.push_back(bma::make_marginal(fit.models.back(), fit.rec->members[vi]));
    }
    return fit;
}

}  // namespace

std::vector<bma::PredictiveMarginal> fit_day_marginals(const data::Dataset& d,
                                                       std::string_view station,
                                                       std::int64_t date, std::size_t window,
                                                       const bma::FitOptions& opt) {
    return fit_day(d, station, date, window, opt).marginals;
}

// ---------------------------------------------------------------------------
// Sample files: magic, u32 version, u32 n, u32 p, then per column
// u32 raw bytes, u32 compressed bytes, zlib data (float32, little endian).

void write_sample_file(const fs::path& path, const num::Matrix& values) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    const std::uint32_t n = std::uint32_t(values.rows());
    const std::uint32_t p = std::uint32_t(values.cols());
    const std::uint32_t version = 1;
    out.write("MVSM", 4);
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&n), 4);
    out.write(reinterpret_cast<const char*>(&p), 4);
    std::vector<float> col(n);
    std::vector<unsigned char> buf;
    for (std::uint32_t j = 0; j < p; ++j) {
        for (std::uint32_t i = 0; i < n; ++i) col[i] = float(values(i, j));
        const uLong raw_bytes = uLong(n * sizeof(float));
        uLongf comp_bytes = compressBound(raw_bytes);
        buf.resize(comp_bytes);
        if (compress2(buf.data(), &comp_bytes, reinterpret_cast<const Bytef*>(col.data()),
                      raw_bytes, 6) != Z_OK)
            throw std::runtime_error("zlib compression failed for " + path.string());
        const std::uint32_t raw32 = std::uint32_t(raw_bytes);
        const std::uint32_t comp32 = std::uint32_t(comp_bytes);
        out.write(reinterpret_cast<const char*>(&raw32), 4);
        out.write(reinterpret_cast<const char*>(&comp32), 4);
        out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(comp_bytes));
    }
    if (!out) throw std::runtime_error("short write on " + path.string());
}

num::Matrix read_sample_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open sample file " + path.string());
    char magic[4];
    std::uint32_t version = 0, n = 0, p = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), 4);
    in.read(reinterpret_cast<char*>(&n), 4);
    in.read(reinterpret_cast<char*>(&p), 4);
    if (!in || std::memcmp(magic, "MVSM", 4) != 0 || version != 1)
        throw std::runtime_error("bad sample file header in " + path.string());
    num::Matrix values(n, p);
    std::vector<float> col(n);
    std::vector<unsigned char> buf;
    for (std::uint32_t j = 0; j < p; ++j) {
        std::uint32_t raw32 = 0, comp32 = 0;
        in.read(reinterpret_cast<char*>(&raw32), 4);
        in.read(reinterpret_cast<char*>(&comp32), 4);
        if (!in || raw32 != n * sizeof(float))
            throw std::runtime_error("bad column header in " + path.string());
        buf.resize(comp32);
        in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(comp32));
        if (!in) throw std::runtime_error("truncated sample file " + path.string());
        uLongf raw_bytes = raw32;
        if (uncompress(reinterpret_cast<Bytef*>(col.data()), &raw_bytes, buf.data(), comp32) !=
                Z_OK ||
            raw_bytes != raw32)
            throw std::runtime_error("zlib decompression failed for " + path.string());
        for (std::uint32_t i = 0; i < n; ++i) values(i, j) = col[i];
    }
    return values;
}

std::string fnv1a64_hex(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot hash missing file " + path.string());
    std::uint64_t h = 0xCBF29CE484222325ULL;
    char buf[8192];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001B3ULL;
        }
        if (!in) break;
    }
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

// ---------------------------------------------------------------------------
// Estimate stage

EstimateResult estimate_stage(const RunConfig& config) {
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const data::Dataset cal = data::load_dataset(config.calibration);
    if (config.window < cal.member_count + 2)
        throw std::invalid_argument("config: window must be at least K+2 = " +
                                    std::to_string(cal.member_count + 2));
    std::vector<std::string> missing;
    const std::vector<std::string> stations = selected_stations(config, cal, &missing);
    fs::create_directories(config.outdir);

    std::vector<std::string> variable_names;
    for (data::Variable v : cal.variables) variable_names.emplace_back(data::variable_name(v));

    EstimateResult result;
    nlohmann::json stations_info = nlohmann::json::object();
    std::vector<std::string> outputs;

    for (const auto& station : stations) {
        const auto range = data::station_range(cal, station);
        std::vector<std::optional<copula::LatentRecord>> slots(range.size());
        std::vector<std::string> errors(range.size());

        kernels::for_each_index(range.size(), config.jobs, [&](std::size_t i) {
            const data::StationDayRecord& rec = range[i];
            try {
                const auto marginals =
                    fit_day_marginals(cal, station, rec.date, config.window);
                std::vector<double> obs(cal.variables.size());
                for (std::size_t vi = 0; vi < obs.size(); ++vi) {
                    if (!rec.obs[vi].has_value())
                        throw std::runtime_error("missing observation");
                    obs[vi] = *rec.obs[vi];
                }
                slots[i] = copula::latent_from_observation(marginals, obs, station, rec.date);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        });

        std::vector<copula::LatentRecord> latents;
        std::size_t fit_failures = 0;
        for (std::size_t i = 0; i < slots.size(); ++i) {
            if (slots[i].has_value())
                latents.push_back(std::move(*slots[i]));
            else if (errors[i].find("rolling_window") == std::string::npos)
                ++fit_failures;  // window shortfalls at the start of the record are expected
        }

        nlohmann::json info;
        info["latent_days"] = latents.size();
        info["fit_failures"] = fit_failures;
        if (latents.size() < cal.variables.size() + 1) {
            info["status"] = "skipped: insufficient latent days";
            result.skipped_stations.push_back(station);
            stations_info[station] = info;
            continue;
        }

        const copula::CorrelationMatrix corr =
            copula::estimate_correlation(latents, variable_names);
        copula::CorrelationFile file;
        file.station = station;
        file.variables = variable_names;
        file.period_start = data::format_date(latents.front().date);
        file.period_end = data::format_date(latents.back().date);
        file.days_used = latents.size();
        file.entries = corr.matrix();
        const std::string rel = "corr_" + station + ".json";
        write_json_file(config.outdir / rel, correlation_to_json(file));
        outputs.push_back(rel);
        info["status"] = "ok";
        stations_info[station] = info;
        result.latent_days[station] = latents.size();
    }

    nlohmann::json manifest = load_manifest(config.outdir);
    nlohmann::json stage;
    stage["seconds"] = seconds_since(t0);
    stage["stations"] = stations_info;
    stage["skipped"] = result.skipped_stations;
    stage["unknown_stations"] = missing;
    manifest["stages"]["estimate"] = stage;
    record_outputs(manifest, config.outdir, outputs);
    save_manifest(config.outdir, config, std::move(manifest));
    return result;
}

// ---------------------------------------------------------------------------
// Forecast stage

ForecastResult forecast_stage(const RunConfig& config) {
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const data::Dataset test = data::load_dataset(config.test);
    if (config.window < test.member_count + 2)
        throw std::invalid_argument("config: window must be at least K+2 = " +
                                    std::to_string(test.member_count + 2));
    std::vector<std::string> missing;
    const std::vector<std::string> stations = selected_stations(config, test, &missing);
    fs::create_directories(config.outdir);

    std::vector<std::string> variable_names;
    for (data::Variable v : test.variables) variable_names.emplace_back(data::variable_name(v));

    const bool want_copula = config.wants("copula");
    const bool want_indep = config.wants("independence");
    std::vector<std::string> sampled_methods;
    if (want_indep) sampled_methods.push_back("independence");
    if (want_copula) sampled_methods.push_back("copula");

    nlohmann::json station_failures = nlohmann::json::object();
    std::map<std::string, copula::CorrelationMatrix> corr_by_station;
    std::vector<std::string> usable_stations;
    for (const auto& station : stations) {
        if (!want_copula) {
            usable_stations.push_back(station);
            continue;
        }
        const fs::path corr_path = config.outdir / ("corr_" + station + ".json");
        if (!fs::exists(corr_path)) {
            station_failures[station] = "missing correlation file " + corr_path.filename().string();
            continue;
        }
        try {
            const copula::CorrelationFile file = copula::correlation_from_json(
                read_json_file(corr_path));
            if (file.variables != variable_names)
                throw std::runtime_error("variable ordering mismatch against test dataset");
            corr_by_station.emplace(station, copula::CorrelationMatrix(file.entries));
            usable_stations.push_back(station);
        } catch (const std::exception& e) {
            station_failures[station] = e.what();
        }
    }

    struct Task {
        std::string station;
        std::int64_t date = 0;
        const data::StationDayRecord* rec = nullptr;
    };
    std::vector<Task> tasks;
    for (const auto& station : usable_stations) {
        const auto range = data::station_range(test, station);
        for (std::size_t i = 0; i < range.size(); ++i) {
            if (i < config.window) continue;  // complete-case data: index counts prior days
            tasks.push_back({station, range[i].date, &range[i]});
        }
    }

    std::vector<std::string> task_errors(tasks.size());
    std::vector<std::vector<std::string>> task_outputs(tasks.size());

    kernels::for_each_index(tasks.size(), config.jobs, [&](std::size_t ti) {
        const Task& task = tasks[ti];
        try {
            const DayFit fit = fit_day(test, task.station, task.date, config.window, {});
            std::vector<copula::QuantileCache> caches;
            caches.reserve(fit.marginals.size());
            for (const auto& m : fit.marginals) caches.emplace_back(m);

            const std::string date_str = data::format_date(task.date);

            if (want_indep) {
                const num::RngStream rng(
                    config.seed, num::RngStream::derive_stream("forecast-indep:" + task.station,
                                                               std::uint64_t(task.date), 0));
                const copula::JointSample js =
                    copula::independence_sample(caches, config.samples, rng, 1);
                const std::string rel = "samples/" + task.station + "/" + date_str +
                                        "_independence.smp";
                write_sample_file(config.outdir / rel, js.values);
                task_outputs[ti].push_back(rel);
            }
            if (want_copula) {
                const num::RngStream rng(
                    config.seed, num::RngStream::derive_stream("forecast-copula:" + task.station,
                                                               std::uint64_t(task.date), 0));
                const copula::JointSample js = copula::sample_joint(
                    caches, corr_by_station.at(task.station), config.samples, rng, 1);
                const std::string rel = "samples/" + task.station + "/" + date_str + "_copula.smp";
                write_sample_file(config.outdir / rel, js.values);
                task_outputs[ti].push_back(rel);
            }

            // Persist the fitted marginal models alongside the samples.
            nlohmann::json mj;
            mj["station"] = task.station;
            mj["date"] = date_str;
            mj["window"] = config.window;
            for (std::size_t vi = 0; vi < fit.marginals.size(); ++vi) {
                const std::string& name = variable_names[vi];
                mj["models"][name] = bma::bma_model_to_json(fit.models[vi]);
                mj["members"][name] = task.rec->members[vi];
            }
            const std::string mrel = "marginals/" + task.station + "/" + date_str + ".json";
            write_json_file(config.outdir / mrel, mj);
            task_outputs[ti].push_back(mrel);
        } catch (const std::exception& e) {
            task_errors[ti] = e.what();
        }
    });

    ForecastResult result;
    nlohmann::json index;
    index["samples"] = config.samples;
    index["methods"] = sampled_methods;
    nlohmann::json day_list = nlohmann::json::array();
    std::vector<std::string> outputs;
    nlohmann::json failures = nlohmann::json::array();
    for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
        if (!task_errors[ti].empty()) {
            ++result.failed_days;
            failures.push_back({{"station", tasks[ti].station},
                                {"date", data::format_date(tasks[ti].date)},
                                {"error", task_errors[ti]}});
            continue;
        }
        ++result.station_days;
        day_list.push_back({{"station", tasks[ti].station},
                            {"date", data::format_date(tasks[ti].date)}});
        for (auto& rel : task_outputs[ti]) outputs.push_back(std::move(rel));
    }
    index["station_days"] = day_list;
    write_json_file(config.outdir / "forecast_index.json", index);
    outputs.push_back("forecast_index.json");
    std::sort(outputs.begin(), outputs.end());

    nlohmann::json manifest = load_manifest(config.outdir);
    nlohmann::json stage;
    stage["seconds"] = seconds_since(t0);
    stage["station_days"] = result.station_days;
    stage["failed_days"] = result.failed_days;
    stage["day_failures"] = failures;
    stage["station_failures"] = station_failures;
    stage["unknown_stations"] = missing;
    manifest["stages"]["forecast"] = stage;
    record_outputs(manifest, config.outdir, outputs);
    save_manifest(config.outdir, config, std::move(manifest));
    return result;
}

// ---------------------------------------------------------------------------
// Verify stage

namespace {

struct CaseScores {
    std::size_t station = 0;  // index into station list
    // per method-code slot (0 raw, 1 independence, 2 copula)
    std::array<double, 3> es{}, ee{}, ds{};
    std::array<int, 3> rank{};
    std::vector<double> crps_indep, crps_copula;  // per variable
    bool has[3] = {false, false, false};
};

std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t k, num::RngStream rng) {
    std::vector<std::size_t> picked;
    picked.reserve(k);
    while (picked.size() < k) {
        const std::size_t cand = std::size_t(rng.uniform_int(n));
        if (std::find(picked.begin(), picked.end(), cand) == picked.end())
            picked.push_back(cand);
    }
    return picked;
}

PairedDiff paired_diff(const std::vector<double>& a, const std::vector<double>& b) {
    PairedDiff d;
    const std::size_t n = a.size();
    if (n == 0) return d;
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= double(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dev = (a[i] - b[i]) - mean;
        var += dev * dev;
    }
    d.mean = mean;
    d.se = n > 1 ? std::sqrt(var / double(n - 1) / double(n)) : 0.0;
    return d;
}

}  // namespace

VerifyResult verify_stage(const RunConfig& config) {
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const data::Dataset test = data::load_dataset(config.test);
    const std::size_t p = test.variables.size();
    const std::size_t k = test.member_count;

    std::vector<std::string> variable_names;
    for (data::Variable v : test.variables) variable_names.emplace_back(data::variable_name(v));

    const bool want_raw = config.wants("raw");
    const bool want_indep = config.wants("independence");
    const bool want_copula = config.wants("copula");
    const bool want_sampled = want_indep || want_copula;

    struct Case {
        std::string station;
        std::int64_t date = 0;
        const data::StationDayRecord* rec = nullptr;
    };
    std::vector<Case> cases;
    if (want_sampled) {
        const fs::path index_path = config.outdir / "forecast_index.json";
        if (!fs::exists(index_path))
            throw DependencyError("verify: no forecast outputs in " + config.outdir.string() +
                                  "; run the forecast stage first");
        const nlohmann::json index = read_json_file(index_path);
        const auto listed = index.at("methods").get<std::vector<std::string>>();
        for (const char* m : {"independence", "copula"})
            if (config.wants(m) &&
                std::find(listed.begin(), listed.end(), m) == listed.end())
                throw DependencyError(std::string("verify: forecast stage did not produce '") + m +
                                      "' samples; rerun forecast");
        std::vector<std::string> missing;
        const std::vector<std::string> stations = selected_stations(config, test, &missing);
        for (const auto& entry : index.at("station_days")) {
            Case c;
            c.station = entry.at("station").get<std::string>();
            if (std::find(stations.begin(), stations.end(), c.station) == stations.end())
                continue;
            c.date = data::parse_date(entry.at("date").get<std::string>());
            c.rec = find_record(data::station_range(test, c.station), c.date);
            if (c.rec) cases.push_back(std::move(c));
        }
    } else {
        for (const auto& station : selected_stations(config, test)) {
            const auto range = data::station_range(test, station);
            for (std::size_t i = config.window; i < range.size(); ++i)
                cases.push_back({station, range[i].date, &range[i]});
        }
    }
    if (cases.empty()) throw std::runtime_error("verify: no scoreable cases");

    // Observed mean/sd over the scored test set, pooled across stations.
    num::Matrix obs_all(cases.size(), p);
    for (std::size_t ci = 0; ci < cases.size(); ++ci)
        for (std::size_t vi = 0; vi < p; ++vi) obs_all(ci, vi) = *cases[ci].rec->obs[vi];
    const verif::NormalizationSpec norm =
        verif::NormalizationSpec::from_observations(obs_all, variable_names);

    std::vector<std::string> station_list;
    for (const auto& c : cases)
        if (std::find(station_list.begin(), station_list.end(), c.station) == station_list.end())
            station_list.push_back(c.station);
    std::sort(station_list.begin(), station_list.end());

    std::vector<CaseScores> rows(cases.size());
    std::vector<std::string> case_errors(cases.size());

    kernels::for_each_index(cases.size(), config.jobs, [&](std::size_t ci) {
        try {
            const Case& c = cases[ci];
            CaseScores row;
            row.station = std::size_t(std::find(station_list.begin(), station_list.end(),
                                                c.station) -
                                      station_list.begin());
            std::vector<double> obs(p);
            for (std::size_t vi = 0; vi < p; ++vi) obs[vi] = *c.rec->obs[vi];
            verif::normalize_values(obs, norm);

            auto score_method = [&](int code, const num::Matrix& forecast, bool sampled) {
                if (sampled) {
                    const std::size_t half = forecast.rows() / 2;
                    num::Matrix a(half, p), b(half, p);
                    for (std::size_t i = 0; i < half; ++i)
                        for (std::size_t vi = 0; vi < p; ++vi) {
                            a(i, vi) = forecast(i, vi);
                            b(i, vi) = forecast(half + i, vi);
                        }
                    row.es[code] = verif::energy_score_mc(a, b, obs);
                } else {
                    row.es[code] = verif::energy_score_exact(forecast, obs);
                }
                row.ee[code] = verif::euclidean_error(forecast, obs);
                row.ds[code] = verif::determinant_sharpness(forecast).value;

                num::Matrix rank_members(k, p);
                if (sampled) {
                    num::RngStream pick(config.seed,
                                        num::RngStream::derive_stream(
                                            "verify-subsample:" + c.station,
                                            std::uint64_t(c.date), std::uint64_t(code)));
                    const auto idx = subsample_indices(forecast.rows(), k, pick);
                    for (std::size_t i = 0; i < k; ++i)
                        for (std::size_t vi = 0; vi < p; ++vi)
                            rank_members(i, vi) = forecast(idx[i], vi);
                } else {
                    rank_members = forecast;
                }
                num::RngStream tie(config.seed,
                                   num::RngStream::derive_stream("verify-rank:" + c.station,
                                                                 std::uint64_t(c.date),
                                                                 std::uint64_t(code)));
                row.rank[code] = verif::multivariate_rank(obs, rank_members, tie);
                row.has[code] = true;
            };

            if (want_raw) {
                num::Matrix raw(k, p);
                for (std::size_t mi = 0; mi < k; ++mi)
                    for (std::size_t vi = 0; vi < p; ++vi)
                        raw(mi, vi) = c.rec->members[vi][mi];
                verif::normalize_rows(raw, norm);
                score_method(0, raw, false);
            }
            const std::string date_str = data::format_date(c.date);
            num::Matrix indep_mat, copula_mat;
            if (want_indep) {
                indep_mat = read_sample_file(config.outdir / "samples" / c.station /
                                             (date_str + "_independence.smp"));
                verif::normalize_rows(indep_mat, norm);
                score_method(1, indep_mat, true);
            }
            if (want_copula) {
                copula_mat = read_sample_file(config.outdir / "samples" / c.station /
                                              (date_str + "_copula.smp"));
                verif::normalize_rows(copula_mat, norm);
                score_method(2, copula_mat, true);
            }
            if (want_indep && want_copula) {
                row.crps_indep.resize(p);
                row.crps_copula.resize(p);
                std::vector<double> col(indep_mat.rows());
                for (std::size_t vi = 0; vi < p; ++vi) {
                    for (std::size_t i = 0; i < indep_mat.rows(); ++i) col[i] = indep_mat(i, vi);
                    row.crps_indep[vi] = verif::crps_ensemble(col, obs[vi]);
                    for (std::size_t i = 0; i < copula_mat.rows(); ++i) col[i] = copula_mat(i, vi);
                    row.crps_copula[vi] = verif::crps_ensemble(col, obs[vi]);
                }
            }
            rows[ci] = std::move(row);
        } catch (const std::exception& e) {
            case_errors[ci] = e.what();
        }
    });

    for (std::size_t ci = 0; ci < cases.size(); ++ci)
        if (!case_errors[ci].empty())
            throw std::runtime_error("verify: case " + cases[ci].station + " " +
                                     data::format_date(cases[ci].date) + ": " + case_errors[ci]);

    // Aggregate pooled and per-station summaries in fixed case order.
    VerifyResult result;
    result.cases = cases.size();
    result.methods = config.methods;
    const std::size_t bins = k + 1;
    struct Accum {
        double es = 0, ee = 0, ds = 0;
        std::uint64_t n = 0;
        verif::RankHistogram hist;
    };
    std::map<int, Accum> pooled;
    std::map<int, std::vector<Accum>> per_station;
    for (const char* m : {"raw", "independence", "copula"}) {
        if (!config.wants(m)) continue;
        const int code = method_code(m);
        pooled[code].hist = verif::RankHistogram(bins);
        per_station[code].assign(station_list.size(), Accum{});
        for (auto& acc : per_station[code]) acc.hist = verif::RankHistogram(bins);
    }
    for (const auto& row : rows) {
        for (auto& [code, acc] : pooled) {
            if (!row.has[code]) continue;
            acc.es += row.es[code];
            acc.ee += row.ee[code];
            acc.ds += row.ds[code];
            acc.hist.add(row.rank[code]);
            ++acc.n;
            Accum& st = per_station[code][row.station];
            st.es += row.es[code];
            st.ee += row.ee[code];
            st.ds += row.ds[code];
            st.hist.add(row.rank[code]);
            ++st.n;
        }
    }

    auto summarize = [](const Accum& acc) {
        verif::ScoreSummary s;
        s.cases = acc.n;
        if (acc.n > 0) {
            s.es = acc.es / double(acc.n);
            s.ee = acc.ee / double(acc.n);
            s.ds = acc.ds / double(acc.n);
            s.delta = verif::reliability_index(acc.hist);
        }
        return s;
    };

    for (const char* m : {"raw", "independence", "copula"}) {
        if (!config.wants(m)) continue;
        const int code = method_code(m);
        MethodScores ms;
        ms.summary = summarize(pooled[code]);
        ms.histogram = pooled[code].hist;
        result.pooled.emplace(m, std::move(ms));
        auto& by_st = result.by_station[m];
        for (std::size_t si = 0; si < station_list.size(); ++si)
            if (per_station[code][si].n > 0)
                by_st.emplace(station_list[si], summarize(per_station[code][si]));
    }

    if (want_indep && want_copula) {
        std::vector<double> es_c, es_i, ee_c, ee_i;
        for (const auto& row : rows) {
            es_c.push_back(row.es[2]);
            es_i.push_back(row.es[1]);
            ee_c.push_back(row.ee[2]);
            ee_i.push_back(row.ee[1]);
        }
        result.es_copula_minus_independence = paired_diff(es_c, es_i);
        result.ee_copula_minus_independence = paired_diff(ee_c, ee_i);
        for (std::size_t vi = 0; vi < p; ++vi) {
            std::vector<double> cc, ci;
            for (const auto& row : rows) {
                cc.push_back(row.crps_copula[vi]);
                ci.push_back(row.crps_indep[vi]);
            }
            result.crps_copula_minus_independence[variable_names[vi]] = paired_diff(cc, ci);
        }
    }

    // Reports.
    std::vector<std::string> outputs;
    {
        std::string csv = "method,cases,es,ee,delta,ds\n";
        for (const auto& m : result.methods) {
            const verif::ScoreSummary& s = result.pooled.at(m).summary;
            csv += m + "," + std::to_string(s.cases) + "," + format_number(s.es) + "," +
                   format_number(s.ee) + "," + format_number(s.delta) + "," +
                   format_number(s.ds) + "\n";
        }
        write_text_file(config.outdir / "scores.csv", csv);
        outputs.push_back("scores.csv");
    }
    {
        std::string csv = "station,method,cases,es,ee,delta,ds\n";
        for (const auto& station : station_list)
            for (const auto& m : result.methods) {
                const auto& by_st = result.by_station.at(m);
                const auto it = by_st.find(station);
                if (it == by_st.end()) continue;
                const verif::ScoreSummary& s = it->second;
                csv += station + "," + m + "," + std::to_string(s.cases) + "," +
                       format_number(s.es) + "," + format_number(s.ee) + "," +
                       format_number(s.delta) + "," + format_number(s.ds) + "\n";
            }
        write_text_file(config.outdir / "scores_by_station.csv", csv);
        outputs.push_back("scores_by_station.csv");
    }
    for (const auto& m : result.methods) {
        std::string csv = "rank,count\n";
        const auto& hist = result.pooled.at(m).histogram;
        for (std::size_t b = 0; b < hist.counts.size(); ++b)
            csv += std::to_string(b + 1) + "," + std::to_string(hist.counts[b]) + "\n";
        const std::string rel = "mrh_" + m + ".csv";
        write_text_file(config.outdir / rel, csv);
        outputs.push_back(rel);
    }
    {
        nlohmann::json j;
        j["cases"] = result.cases;
        j["methods"] = result.methods;
        for (const auto& m : result.methods) {
            const verif::ScoreSummary& s = result.pooled.at(m).summary;
            j["pooled"][m] = {{"cases", s.cases}, {"es", s.es},      {"ee", s.ee},
                              {"delta", s.delta}, {"ds", s.ds}};
            j["rank_histograms"][m] = result.pooled.at(m).histogram.counts;
            for (const auto& [station, ss] : result.by_station.at(m))
                j["by_station"][station][m] = {{"cases", ss.cases}, {"es", ss.es},
                                               {"ee", ss.ee},       {"delta", ss.delta},
                                               {"ds", ss.ds}};
        }
        if (want_indep && want_copula) {
            j["diffs"]["copula_minus_independence"]["es"] = {
                {"mean", result.es_copula_minus_independence.mean},
                {"se", result.es_copula_minus_independence.se}};
            j["diffs"]["copula_minus_independence"]["ee"] = {
                {"mean", result.ee_copula_minus_independence.mean},
                {"se", result.ee_copula_minus_independence.se}};
            for (const auto& [var, d] : result.crps_copula_minus_independence)
                j["diffs"]["copula_minus_independence"]["univariate_crps"][var] = {
                    {"mean", d.mean}, {"se", d.se}};
        }
        for (std::size_t vi = 0; vi < p; ++vi) {
            j["normalization"]["pooled"]["mean"][variable_names[vi]] = norm.mean[vi];
            j["normalization"]["pooled"]["sd"][variable_names[vi]] = norm.sd[vi];
        }
        // Per-station observed statistics, for comparison with the pooled ones.
        for (const auto& station : station_list) {
            std::vector<double> mean(p, 0.0), sd(p, 0.0);
            std::size_t n = 0;
            for (std::size_t ci = 0; ci < cases.size(); ++ci) {
                if (cases[ci].station != station) continue;
                ++n;
                for (std::size_t vi = 0; vi < p; ++vi) mean[vi] += obs_all(ci, vi);
            }
            for (double& v : mean) v /= double(n);
            for (std::size_t ci = 0; ci < cases.size(); ++ci) {
                if (cases[ci].station != station) continue;
                for (std::size_t vi = 0; vi < p; ++vi) {
                    const double d = obs_all(ci, vi) - mean[vi];
                    sd[vi] += d * d;
                }
            }
            for (std::size_t vi = 0; vi < p; ++vi) {
                sd[vi] = n > 1 ? std::sqrt(sd[vi] / double(n - 1)) : 0.0;
                j["normalization"]["by_station"][station]["mean"][variable_names[vi]] = mean[vi];
                j["normalization"]["by_station"][station]["sd"][variable_names[vi]] = sd[vi];
            }
        }
        write_json_file(config.outdir / "scores.json", j);
        outputs.push_back("scores.json");
    }

    nlohmann::json manifest = load_manifest(config.outdir);
    nlohmann::json stage;
    stage["seconds"] = seconds_since(t0);
    stage["cases"] = result.cases;
    manifest["stages"]["verify"] = stage;
    record_outputs(manifest, config.outdir, outputs);
    save_manifest(config.outdir, config, std::move(manifest));
    return result;
}

void run_all(const RunConfig& config) {
    estimate_stage(config);
    forecast_stage(config);
    verify_stage(config);
}

// ---------------------------------------------------------------------------
// CLI

namespace {

struct CliOverrides {
    std::string config_path;
    std::string calibration, test, outdir, stations, methods;
    std::int64_t window = -1, samples = -1, jobs = -1;
    std::int64_t seed = -1;
    bool seed_set = false;
};

void add_run_options(CLI::App* cmd, CliOverrides& o) {
    cmd->add_option("--config", o.config_path, "JSON config file");
    cmd->add_option("--calibration", o.calibration, "calibration dataset CSV");
    cmd->add_option("--test", o.test, "test dataset CSV");
    cmd->add_option("--out", o.outdir, "output directory");
    cmd->add_option("--window", o.window, "rolling training window (days)");
    cmd->add_option("--samples", o.samples, "joint sample size per day");
    cmd->add_option("--seed", o.seed, "rng seed")->each([&o](const std::string&) {
        o.seed_set = true;
    });
    cmd->add_option("--stations", o.stations, "comma-separated station filter");
    cmd->add_option("--methods", o.methods, "comma-separated subset of raw,independence,copula");
    cmd->add_option("--jobs", o.jobs, "worker threads");
}

RunConfig resolve_config(const CliOverrides& o) {
    RunConfig c;
    if (!o.config_path.empty()) c = RunConfig::from_json(read_json_file(o.config_path));
    if (!o.calibration.empty()) c.calibration = o.calibration;
    if (!o.test.empty()) c.test = o.test;
    if (!o.outdir.empty()) c.outdir = o.outdir;
    if (o.window >= 0) c.window = std::size_t(o.window);
    if (o.samples >= 0) c.samples = std::size_t(o.samples);
    if (o.seed_set) c.seed = std::uint64_t(o.seed);
    if (!o.stations.empty()) c.stations = split_list(o.stations);
    if (!o.methods.empty()) c.methods = split_list(o.methods);
    if (o.jobs >= 0) c.jobs = int(o.jobs);
    return c;
}

int run_synth(const std::string& spec_path, const std::string& outdir,
              std::int64_t calibration_days, std::int64_t warmup) {
    const data::SyntheticSpec spec = data::synthetic_spec_from_json(read_json_file(spec_path));
    const data::Dataset full = data::generate_synthetic(spec);
    fs::create_directories(outdir);
    nlohmann::json manifest;
    manifest["spec"] = data::synthetic_spec_to_json(spec);
    manifest["dataset"] = data::dataset_manifest(full);
    if (calibration_days > 0) {
        const std::int64_t split = spec.start_date + calibration_days;
        data::Dataset cal, test;
        cal.variables = test.variables = full.variables;
        cal.member_count = test.member_count = full.member_count;
        for (const auto& rec : full.records) {
            if (rec.date < split) cal.records.push_back(rec);
            if (rec.date >= split - warmup) test.records.push_back(rec);
        }
        data::save_dataset(cal, fs::path(outdir) / "calibration.csv");
        data::save_dataset(test, fs::path(outdir) / "test.csv");
        manifest["files"] = {"calibration.csv", "test.csv"};
    } else {
        data::save_dataset(full, fs::path(outdir) / "dataset.csv");
        manifest["files"] = {"dataset.csv"};
    }
    write_json_file(fs::path(outdir) / "synth_manifest.json", manifest);
    return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
    CLI::App app{"Multivariate ensemble weather forecast post-processing"};
    app.require_subcommand(1);

    CliOverrides o;
    CLI::App* cmd_estimate = app.add_subcommand("estimate", "estimate per-station correlation matrices");
    CLI::App* cmd_forecast = app.add_subcommand("forecast", "sample joint predictive distributions");
    CLI::App* cmd_verify = app.add_subcommand("verify", "score forecasts and emit reports");
    CLI::App* cmd_runall = app.add_subcommand("run-all", "estimate, forecast, and verify in sequence");
    for (CLI::App* cmd : {cmd_estimate, cmd_forecast, cmd_verify, cmd_runall})
        add_run_options(cmd, o);

    std::string synth_spec, synth_out;
    std::int64_t synth_cal_days = 0, synth_warmup = 40;
    CLI::App* cmd_synth = app.add_subcommand("synth", "generate a synthetic dataset from a spec file");
    cmd_synth->add_option("--spec", synth_spec, "synthetic spec JSON")->required();
    cmd_synth->add_option("--out", synth_out, "output directory")->required();
    cmd_synth->add_option("--calibration-days", synth_cal_days,
                          "split: days in the calibration file (0 = single file)");
    cmd_synth->add_option("--warmup", synth_warmup,
                          "rolling-window warmup days carried into the test file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    const std::string stage = app.get_subcommands().front()->get_name();
    try {
        if (stage == "synth") return run_synth(synth_spec, synth_out, synth_cal_days, synth_warmup);
        const RunConfig config = resolve_config(o);
        if (stage == "estimate")
            estimate_stage(config);
        else if (stage == "forecast")
            forecast_stage(config);
        else if (stage == "verify")
            verify_stage(config);
        else
            run_all(config);
        return 0;
    } catch (const std::exception& e) {
        nlohmann::json err;
        err["error"] = e.what();
        err["stage"] = stage;
        std::fprintf(stderr, "%s\n", err.dump().c_str());
        return 1;
    }
}

}  // namespace mvpost::pipeline
