#include "esceval/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

namespace esceval::stats {

namespace {

constexpr const char *kModule = "stats";

double clamp_unit(double r) { return std::max(-1.0, std::min(1.0, r)); }

// Number of tied pairs in a sorted run-length sense: sum t(t-1)/2.
std::int64_t tied_pairs(const std::vector<double> &sorted) {
    std::int64_t total = 0;
    std::size_t i = 0;
    while (i < sorted.size()) {
        std::size_t j = i + 1;
        while (j < sorted.size() && sorted[j] == sorted[i])
            ++j;
        const auto t = static_cast<std::int64_t>(j - i);
        total += t * (t - 1) / 2;
        i = j;
    }
    return total;
}

// Sorts v ascending and returns the number of inversions removed.
std::int64_t merge_count(std::vector<double> &v, std::vector<double> &buf, std::size_t lo, std::size_t hi) {
    if (hi - lo < 2)
        return 0;
    const std::size_t mid = lo + (hi - lo) / 2;
    std::int64_t swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
    std::size_t i = lo, j = mid, k = lo;
    while (i < mid && j < hi) {
        if (v[j] < v[i]) {
            swaps += static_cast<std::int64_t>(mid - i);
            buf[k++] = v[j++];
        } else {
            buf[k++] = v[i++];
        }
    }
    while (i < mid)
        buf[k++] = v[i++];
    while (j < hi)
        buf[k++] = v[j++];
    std::copy(buf.begin() + lo, buf.begin() + hi, v.begin() + lo);
    return swaps;
}

} // namespace

void validate(const PairedSeries &s) {
    if (s.x.size() != s.y.size())
        throw ValidationError(kModule, "series lengths differ (" + std::to_string(s.x.size()) + " vs " +
                                           std::to_string(s.y.size()) + ")", "y");
    if (s.x.size() < 2)
        throw ValidationError(kModule, "series needs at least 2 points", "x");
    for (std::size_t i = 0; i < s.x.size(); ++i)
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]))
            throw ValidationError(kModule, "non-finite value at index " + std::to_string(i), !std::isfinite(s.x[i]) ? "x" : "y");
}

double pearson(const PairedSeries &s) {
    validate(s);
    const auto n = static_cast<double>(s.x.size());
    const double mx = std::accumulate(s.x.begin(), s.x.end(), 0.0) / n;
    const double my = std::accumulate(s.y.begin(), s.y.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
        const double dx = s.x[i] - mx, dy = s.y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0 || syy == 0)
        throw UndefinedCorrelation("pearson", sxx == 0 ? "x has zero variance" : "y has zero variance");
    return clamp_unit(sxy / std::sqrt(sxx * syy));
}

std::vector<double> average_ranks(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i + 1;
        while (j < order.size() && values[order[j]] == values[order[i]])
            ++j;
        const double rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k)
            ranks[order[k]] = rank;
        i = j;
    }
    return ranks;
}

double spearman(const PairedSeries &s) {
    validate(s);
    PairedSeries ranked{average_ranks(s.x), average_ranks(s.y), s.label};
    try {
        return pearson(ranked);
    } catch (const UndefinedCorrelation &) {
        throw UndefinedCorrelation("spearman", "all values tied on one side");
    }
}

double kendall_tau(const PairedSeries &s) {
    validate(s);
    const std::size_t n = s.x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return s.x[a] != s.x[b] ? s.x[a] < s.x[b] : s.y[a] < s.y[b];
    });

    const auto n0 = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n - 1) / 2;
    std::int64_t n1 = 0, n3 = 0; // ties in x; joint ties
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i + 1;
        while (j < n && s.x[order[j]] == s.x[order[i]])
            ++j;
        const auto t = static_cast<std::int64_t>(j - i);
        n1 += t * (t - 1) / 2;
        std::size_t k = i;
        while (k < j) {
            std::size_t m = k + 1;
            while (m < j && s.y[order[m]] == s.y[order[k]])
                ++m;
            const auto u = static_cast<std::int64_t>(m - k);
            n3 += u * (u - 1) / 2;
            k = m;
        }
        i = j;
    }

    std::vector<double> ys(n), buf(n);
    for (std::size_t k = 0; k < n; ++k)
        ys[k] = s.y[order[k]];
    const std::int64_t swaps = merge_count(ys, buf, 0, n);
    const std::int64_t n2 = tied_pairs(ys);

    if (n0 == n1 || n0 == n2)
        throw UndefinedCorrelation("kendall_tau", n0 == n1 ? "all x values tied" : "all y values tied");
    const auto numerator = static_cast<double>(n0 - n1 - n2 + n3 - 2 * swaps);
    const double denom = std::sqrt(static_cast<double>(n0 - n1)) * std::sqrt(static_cast<double>(n0 - n2));
    return clamp_unit(numerator / denom);
}

Coefficients correlate(const PairedSeries &s) {
    validate(s);
    Coefficients c;
    c.n = s.x.size();
    try {
        c.spearman = spearman(s);
    } catch (const UndefinedCorrelation &) {
    }
    try {
        c.pearson = pearson(s);
    } catch (const UndefinedCorrelation &) {
    }
    try {
        c.kendall = kendall_tau(s);
    } catch (const UndefinedCorrelation &) {
    }
    return c;
}

PairedSeries join_samples(const std::map<std::string, double> &metric, const std::map<std::string, double> &human,
                          const std::string &label) {
    PairedSeries s;
    s.label = label;
    for (const auto &[id, value] : metric) {
        auto it = human.find(id);
        if (it == human.end())
            continue;
        s.x.push_back(value);
        s.y.push_back(it->second);
    }
    if (s.x.size() < 2)
        throw ValidationError(kModule,
                              "sample join produced " + std::to_string(s.x.size()) + " pair(s); need at least 2",
                              "join");
    return s;
}

Coefficients sample_level(const std::map<std::string, double> &metric, const std::map<std::string, double> &human) {
    return correlate(join_samples(metric, human));
}

PairedSeries group_means(const std::map<std::string, double> &metric, const std::map<std::string, double> &human,
                         const std::map<std::string, std::string> &group_of, const std::string &label) {
    struct Acc {
        double x = 0, y = 0;
        std::size_t n = 0;
    };
    std::map<std::string, Acc> groups;
    for (const auto &[id, value] : metric) {
        auto h = human.find(id);
        auto g = group_of.find(id);
        if (h == human.end() || g == group_of.end())
            continue;
        auto &a = groups[g->second];
        a.x += value;
        a.y += h->second;
        ++a.n;
    }
    if (groups.size() < 2)
        throw ValidationError(kModule,
                              "dataset-level correlation needs at least 2 groups, got " +
                                  std::to_string(groups.size()),
                              "group_by");
    PairedSeries s;
    s.label = label;
    for (const auto &[name, a] : groups) {
        s.x.push_back(a.x / static_cast<double>(a.n));
        s.y.push_back(a.y / static_cast<double>(a.n));
    }
    return s;
}

Coefficients dataset_level(const std::map<std::string, double> &metric, const std::map<std::string, double> &human,
                           const std::map<std::string, std::string> &group_of) {
    return correlate(group_means(metric, human, group_of));
}

std::string to_string(Level level) { return level == Level::sample ? "sample" : "dataset"; }

Level parse_level(std::string_view text) {
    if (text == "sample")
        return Level::sample;
    if (text == "dataset")
        return Level::dataset;
    throw ValidationError(kModule, "level must be 'sample' or 'dataset', got '" + std::string(text) + "'", "level");
}

} // namespace esceval::stats
