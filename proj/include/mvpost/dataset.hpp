#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvpost/bma.hpp"
#include "mvpost/matrix.hpp"

namespace mvpost::data {

enum class Variable { maxwsp, precip, mintemp, maxtemp, pressure };

inline constexpr std::array<Variable, 5> kCanonicalOrder = {
    Variable::maxwsp, Variable::precip, Variable::mintemp, Variable::maxtemp, Variable::pressure};

std::string_view variable_name(Variable v);
Variable variable_from_name(std::string_view name);
bma::Kind kind_of(Variable v);
std::string_view unit_of(Variable v);

// Dates travel as days since 1970-01-01 and parse/format as ISO-8601.
std::int64_t days_from_civil(int year, unsigned month, unsigned day);
void civil_from_days(std::int64_t days, int& year, unsigned& month, unsigned& day);
std::int64_t parse_date(std::string_view iso);
std::string format_date(std::int64_t days);

class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class WindowError : public std::runtime_error {
public:
    WindowError(std::size_t available, const std::string& what)
        : std::runtime_error(what), available_(available) {}
    std::size_t available() const { return available_; }

private:
    std::size_t available_;
};

/// One station-day: a K-member ensemble per variable plus the verifying
/// observation where available.
struct StationDayRecord {
    std::string station;
    std::int64_t date = 0;
    std::vector<std::vector<double>> members;  // [variable][member]
    std::vector<std::optional<double>> obs;    // [variable]
};

struct Dataset {
    std::vector<Variable> variables;  // column order, canonical subset
    std::size_t member_count = 0;
    std::vector<StationDayRecord> records;  // sorted by (station, date)
    std::uint64_t dropped_rows = 0;         // rows with missing fields
    std::uint64_t dropped_days = 0;         // station-days incomplete across variables

    std::vector<std::string> stations() const;
    std::size_t variable_index(Variable v) const;
};

/// Long-format CSV: station,date,variable,member_1..member_K,obs. Rows with
/// any missing forecast or observation are dropped and counted; station-days
/// that then lack a variable are dropped whole.
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& d, const std::filesystem::path& path);

nlohmann::json dataset_manifest(const Dataset& d);

/// Records of one station in date order.
std::span<const StationDayRecord> station_range(const Dataset& d, std::string_view station);

/// The `width` most recent complete days strictly before target_date.
bma::TrainingSet rolling_window(const Dataset& d, std::string_view station, Variable v,
                                std::int64_t target_date, std::size_t width);

/// Ground-truth generator settings for one variable: the daily driver, the
/// member perturbations around it, and the true conditional kernel the
/// observations are drawn from.
struct SyntheticVariable {
    double base = 0.0;
    double seasonal = 0.0;
    double phase = 0.0;
    double signal_sd = 1.0;
    double member_noise_sd = 0.3;
    double station_offset_sd = 0.0;
    std::vector<double> member_bias;  // one entry per ensemble member
    bma::BmaModel truth;
};

struct SyntheticSpec {
    std::uint64_t seed = 0;
    std::size_t member_count = 8;
    std::vector<std::string> stations;
    std::int64_t start_date = 0;
    std::size_t days = 0;
    std::vector<Variable> variables;
    num::Matrix correlation;  // true copula correlation, variable order
    std::vector<SyntheticVariable> truth;
};

nlohmann::json synthetic_spec_to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

/// Five-variable spec with canonical truth parameters; correlation defaults
/// to the identity when not supplied.
SyntheticSpec default_synthetic_spec(std::vector<std::string> stations, std::size_t days,
                                     std::uint64_t seed,
                                     std::optional<num::Matrix> correlation = std::nullopt,
                                     std::size_t member_count = 8);

/// Observations follow the Gaussian copula over the true per-day marginals;
/// members are the day's driver plus member-specific bias and noise.
Dataset generate_synthetic(const SyntheticSpec& spec);

}  // namespace mvpost::data
