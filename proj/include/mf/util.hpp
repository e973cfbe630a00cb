#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mf {

// Raised for bad inputs: malformed files, invalid configs, violated
// preconditions on user-supplied data. The CLI maps it to exit code 2.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kVersion = "0.3.1";

// ---- logging ---------------------------------------------------------------

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

LogLevel log_level();
void set_log_level(LogLevel level);
void log(LogLevel level, const std::string& msg);
inline void log_warn(const std::string& msg) { log(LogLevel::warn, msg); }
inline void log_info(const std::string& msg) { log(LogLevel::info, msg); }
inline void log_debug(const std::string& msg) { log(LogLevel::debug, msg); }

// ---- files -----------------------------------------------------------------

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

// ---- CSV -------------------------------------------------------------------

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    // Index of a header column, or -1.
    int column(std::string_view name) const;
};

CsvTable parse_csv(std::string_view text);
CsvTable read_csv(const std::filesystem::path& path);
std::string csv_escape(std::string_view field);
std::string csv_line(const std::vector<std::string>& fields);

// ---- formatting and hashing ------------------------------------------------

// Shortest representation that round-trips a double exactly.
std::string format_double(double v);
std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t v);

std::string base64_encode(const std::vector<float>& values);
std::vector<float> base64_decode_floats(std::string_view text);

// ---- randomness ------------------------------------------------------------

// Portable seeded generator: mt19937_64 bits with explicit conversions so
// sequences do not depend on the standard library's distributions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    double uniform();            // [0, 1)
    double normal();             // standard normal (Box-Muller)
    std::size_t categorical(const std::vector<double>& cumulative);  // cumulative sums, last == total
    std::uint64_t bits() { return engine_(); }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// ---- parallelism -----------------------------------------------------------

// Runs body(i) for i in [0, n) on up to `workers` threads. Each index is
// processed exactly once; callers write into preallocated slots.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& body);

// ---- statistics helpers ----------------------------------------------------

// Type-7 (linear interpolation) quantile of an unsorted sample.
double quantile(std::vector<double> values, double q);
double median(std::vector<double> values);

}  // namespace mf
