#pragma once

#include "esceval/error.hpp"

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace esceval::stats {

// Zero variance, all ties, and similar degenerate inputs.
class UndefinedCorrelation : public ValidationError {
  public:
    UndefinedCorrelation(const std::string &coefficient, const std::string &what)
        : ValidationError("stats", coefficient + " undefined: " + what, coefficient) {}
};

struct PairedSeries {
    std::vector<double> x;
    std::vector<double> y;
    std::string label;
};

// |x| = |y| >= 2 and every value finite; throws ValidationError otherwise.
void validate(const PairedSeries &s);

double pearson(const PairedSeries &s);
double spearman(const PairedSeries &s);
double kendall_tau(const PairedSeries &s); // tau-b, O(n log n)

// Mean ranks, 1-based; ties share the average of their positions.
std::vector<double> average_ranks(std::span<const double> values);

struct Coefficients {
    std::optional<double> spearman;
    std::optional<double> pearson;
    std::optional<double> kendall;
    std::size_t n = 0;
};

// All three coefficients; an undefined one is left empty.
Coefficients correlate(const PairedSeries &s);

// Joins on sample id. Fewer than two joined pairs -> ValidationError.
PairedSeries join_samples(const std::map<std::string, double> &metric, const std::map<std::string, double> &human,
                          const std::string &label = {});
Coefficients sample_level(const std::map<std::string, double> &metric, const std::map<std::string, double> &human);

// Samples are joined first, then averaged per group; coefficients are taken
// over the group means. Fewer than two groups -> ValidationError.
PairedSeries group_means(const std::map<std::string, double> &metric, const std::map<std::string, double> &human,
                         const std::map<std::string, std::string> &group_of, const std::string &label = {});
Coefficients dataset_level(const std::map<std::string, double> &metric, const std::map<std::string, double> &human,
                           const std::map<std::string, std::string> &group_of);

enum class Level { sample, dataset };
std::string to_string(Level level);
Level parse_level(std::string_view text);

struct CorrelationRecord {
    std::string metric;
    std::string dimension;
    Level level = Level::sample;
    std::optional<double> spearman;
    std::optional<double> pearson;
    std::optional<double> kendall;
    std::size_t n = 0;

    bool operator==(const CorrelationRecord &) const = default;
};

} // namespace esceval::stats
