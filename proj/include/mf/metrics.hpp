#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mf/aggregate.hpp"
#include "mf/persona.hpp"

namespace mf {

// sqrt of the base-2 Jensen-Shannon divergence; lies in [0, 1].
double js_distance(const std::vector<double>& p, const std::vector<double>& q);

// W1 on unit-spaced ranks: sum of |CDF_P - CDF_Q| over the first n-1 ranks.
double wasserstein_distance(const std::vector<double>& p, const std::vector<double>& q);

// H(P) / log n, with 0 log 0 = 0. Clamped to [0, 1].
double normalized_entropy(const std::vector<double>& p);

enum class Metric { js, wasserstein };
std::string to_string(Metric m);

struct DistanceRecord {
    std::string model_tag;
    std::string country;
    std::string attribute;
    std::string party;
    Metric metric = Metric::js;
    double d_latent = 0.0;
    double d_prob = 0.0;
    double delta = 0.0;  // d_prob - d_latent
};

// JS for nominal attributes, W1 for ordinal ones. Tables are matched by attribute name.
std::vector<DistanceRecord> distance_delta(const std::vector<DistributionTable>& latent,
                                           const std::vector<DistributionTable>& prob,
                                           const std::vector<DistributionTable>& survey, const CountryConfig& config,
                                           const std::string& model_tag = "", const std::string& country = "");

struct WinRate {
    std::vector<std::string> key;  // values of the group_by fields, in order
    std::size_t wins = 0;
    std::size_t total = 0;
    double rate = 0.0;
};

// group_by fields: "model", "country", "party", "attribute", "metric". Wins are strict (delta > 0).
std::vector<WinRate> win_rates(const std::vector<DistanceRecord>& records, const std::vector<std::string>& group_by);

struct GateSummary {
    std::string attribute;
    std::string model_tag;
    std::size_t gated_rows = 0;
    double median_error_prob = 0.0;
    double median_error_combined = 0.0;
    double median_error_change = 0.0;  // combined - prob; negative is an improvement
    double median_cell_change = 0.0;   // median over cells of |combined - survey| - |prob - survey|
};

struct GateRow {
    std::string attribute;
    std::string party;
    double entropy = 0.0;  // of the probability row
    bool gated = false;
};

struct GateReport {
    double threshold = 0.85;
    std::vector<GateRow> rows;
    std::vector<DistributionTable> combined;  // prob tables with gated rows replaced by latent ones
    std::vector<GateSummary> summaries;       // attributes with at least one gated row
    std::size_t substitutions = 0;
};

// Rows whose probability-row entropy is strictly above `threshold` take the latent estimate.
GateReport entropy_gate(const std::vector<DistributionTable>& latent, const std::vector<DistributionTable>& prob,
                        const std::vector<DistributionTable>& survey, double threshold = 0.85,
                        const std::string& model_tag = "");

// Joint mass over (party, category).
struct JointTable {
    std::vector<std::string> parties;
    std::vector<std::string> categories;
    std::vector<std::vector<double>> mass;
};

// mass[o][g] = party_share[o] * row_o[g].
JointTable joint_from_conditional(const DistributionTable& table, const std::vector<double>& party_share);

// Weighted party shares among rows whose party is in `parties`.
std::vector<double> survey_party_shares(const CsvTable& survey, const std::vector<std::string>& parties);

enum class Conditional { party_given_category, category_given_party };

struct ShareErrors {
    std::vector<std::string> parties;
    std::vector<std::string> categories;
    std::vector<std::vector<double>> error;  // |estimate - survey| per (party, category)
    std::vector<double> party_median;
    double median = 0.0;
};

ShareErrors conditional_share_error(const JointTable& estimate, const JointTable& survey, Conditional direction);

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r = 0.0;  // 0 when delta has no variance
    std::size_t n = 0;
};

// OLS of delta on entropy over the points with delta > 0.
LinearFit fit_delta_entropy(const std::vector<double>& deltas, const std::vector<double>& entropies);

// ---- report files ----------------------------------------------------------

std::string distance_records_csv(const std::vector<DistanceRecord>& records);
std::string win_rates_csv(const std::vector<WinRate>& rates, const std::vector<std::string>& group_by);
std::string gate_rows_csv(const GateReport& report);
std::string gate_summary_csv(const GateReport& report);
std::string share_errors_csv(const std::string& source, const std::string& attribute, const ShareErrors& e);

// Grouped bars of win-rate per attribute, one bar per party.
std::string win_rate_svg(const std::vector<DistanceRecord>& records, const std::string& title);

}  // namespace mf
