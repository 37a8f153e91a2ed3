#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "nrsa/stats.hpp"

namespace nrsa::stats {

std::string_view to_string(Tail tail) noexcept {
    switch (tail) {
        case Tail::Greater: return "greater";
        case Tail::Less: return "less";
        case Tail::TwoSided: return "two-sided";
    }
    return "?";
}

double mean(std::span<const double> x) {
    if (x.empty()) return 0.0;
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_variance(std::span<const double> x) {
    if (x.size() < 2) return 0.0;
    const double m = mean(x);
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return ss / static_cast<double>(x.size() - 1);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double normal_sf(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

double student_t_sf(double t, double df) {
    if (std::isinf(t)) return t > 0 ? 0.0 : 1.0;
    boost::math::students_t dist(df);
    return boost::math::cdf(boost::math::complement(dist, t));
}

double student_t_quantile(double prob, double df) {
    boost::math::students_t dist(df);
    return boost::math::quantile(dist, prob);
}

std::vector<double> average_ranks(std::span<const double> x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

namespace {

double clamp_p(double p) { return std::clamp(p, kMinPValue, 1.0); }

// Number of inversions (i < j with y[i] > y[j]); sorts y in place.
std::uint64_t count_inversions(std::vector<double>& y, std::vector<double>& buf, std::size_t lo, std::size_t hi) {
    if (hi - lo < 2) return 0;
    const std::size_t mid = lo + (hi - lo) / 2;
    std::uint64_t inv = count_inversions(y, buf, lo, mid) + count_inversions(y, buf, mid, hi);
    std::size_t i = lo, j = mid, k = lo;
    while (i < mid && j < hi) {
        if (y[j] < y[i]) {
            inv += mid - i;
            buf[k++] = y[j++];
        } else {
            buf[k++] = y[i++];
        }
    }
    while (i < mid) buf[k++] = y[i++];
    while (j < hi) buf[k++] = y[j++];
    std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
              y.begin() + static_cast<std::ptrdiff_t>(lo));
    return inv;
}

// Sum over runs of equal consecutive values of t(t-1)/2.
template <typename Eq>
std::uint64_t tied_pairs(std::size_t n, Eq&& equal_to_prev) {
    std::uint64_t total = 0, run = 1;
    for (std::size_t i = 1; i < n; ++i) {
        if (equal_to_prev(i)) {
            ++run;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    return total + run * (run - 1) / 2;
}

}  // namespace

double kendall_tau(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw Error(ErrorCode::LengthMismatch, "kendall_tau: vectors differ in length");
    const std::size_t n = x.size();
    if (n < 2) throw Error(ErrorCode::DegenerateInput, "kendall_tau: need at least 2 observations");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]);
    });
    std::vector<double> xs(n), ys(n);
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = x[order[i]];
        ys[i] = y[order[i]];
    }
    const std::uint64_t n0 = static_cast<std::uint64_t>(n) * (n - 1) / 2;
    const std::uint64_t ties_x = tied_pairs(n, [&](std::size_t i) { return xs[i] == xs[i - 1]; });
    const std::uint64_t ties_xy =
        tied_pairs(n, [&](std::size_t i) { return xs[i] == xs[i - 1] && ys[i] == ys[i - 1]; });
    std::vector<double> buf(n);
    const std::uint64_t swaps = count_inversions(ys, buf, 0, n);
    const std::uint64_t ties_y = tied_pairs(n, [&](std::size_t i) { return ys[i] == ys[i - 1]; });

    if (ties_x == n0 || ties_y == n0) throw Error(ErrorCode::DegenerateInput, "kendall_tau: constant input vector");
    const double s = static_cast<double>(n0) - static_cast<double>(ties_x) - static_cast<double>(ties_y) +
                     static_cast<double>(ties_xy) - 2.0 * static_cast<double>(swaps);
    const double denom =
        std::sqrt(static_cast<double>(n0 - ties_x)) * std::sqrt(static_cast<double>(n0 - ties_y));
    return std::clamp(s / denom, -1.0, 1.0);
}

double tau_significance(double tau, std::size_t n) {
    if (n < 2) return 1.0;
    if (n < kTauExactBelow) {
        // Permutation distribution of the inversion count (Mahonian numbers).
        const std::size_t max_inv = n * (n - 1) / 2;
        std::vector<double> counts(max_inv + 1, 0.0);
        counts[0] = 1.0;
        std::size_t reach = 0;
        for (std::size_t m = 2; m <= n; ++m) {
            std::vector<double> next(max_inv + 1, 0.0);
            for (std::size_t k = 0; k <= reach; ++k) {
                if (counts[k] == 0.0) continue;
                for (std::size_t add = 0; add < m; ++add) next[k + add] += counts[k];
            }
            reach += m - 1;
            counts.swap(next);
        }
        double total = 0.0, tail = 0.0;
        const double pairs = static_cast<double>(max_inv);
        for (std::size_t k = 0; k <= max_inv; ++k) {
            total += counts[k];
            const double tau_k = 1.0 - 2.0 * static_cast<double>(k) / pairs;
            if (tau_k >= tau - 1e-12) tail += counts[k];
        }
        return clamp_p(tail / total);
    }
    const double nd = static_cast<double>(n);
    const double var = 2.0 * (2.0 * nd + 5.0) / (9.0 * nd * (nd - 1.0));
    return clamp_p(normal_sf(tau / std::sqrt(var)));
}

double pearson_r(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw Error(ErrorCode::LengthMismatch, "pearson_r: vectors differ in length");
    if (x.size() < 3) throw Error(ErrorCode::DegenerateInput, "pearson_r: need at least 3 observations");
    const double mx = mean(x), my = mean(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw Error(ErrorCode::DegenerateInput, "pearson_r: constant input vector");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

FisherAverage fisher_average(std::span<const double> rs) {
    if (rs.size() < 2) throw Error(ErrorCode::DegenerateInput, "fisher_average: need at least 2 correlations");
    std::vector<double> z;
    z.reserve(rs.size());
    for (double r : rs) {
        if (!(std::abs(r) < 1.0)) throw Error(ErrorCode::BoundaryR, "fisher_average: |r| must be below 1");
        z.push_back(std::atanh(r));
    }
    FisherAverage out;
    out.n = z.size();
    const double mz = mean(z);
    out.mean_r = std::tanh(mz);
    const double var = sample_variance(z);
    if (var == 0.0) {
        if (mz == 0.0) {
            out.t = 0.0;
            out.pvalue = 0.5;
        } else {
            out.t = mz > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
            out.pvalue = mz > 0 ? kMinPValue : 1.0;
            out.boundary_case = true;
        }
        return out;
    }
    out.t = mz / std::sqrt(var / static_cast<double>(z.size()));
    out.pvalue = clamp_p(student_t_sf(out.t, static_cast<double>(z.size() - 1)));
    return out;
}

std::vector<bool> fdr_by(std::span<const double> p, double q) {
    if (!(q > 0.0 && q < 1.0)) throw Error(ErrorCode::InvalidP, "fdr_by: q must lie in (0, 1)");
    const std::size_t m = p.size();
    for (double v : p)
        if (!(v > 0.0 && v <= 1.0)) throw Error(ErrorCode::InvalidP, "fdr_by: p-values must lie in (0, 1]");
    std::vector<bool> reject(m, false);
    if (m == 0) return reject;
    double c_m = 0.0;
    for (std::size_t i = 1; i <= m; ++i) c_m += 1.0 / static_cast<double>(i);
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
    const double md = static_cast<double>(m);
    std::size_t k_star = 0;
    for (std::size_t k = 1; k <= m; ++k)
        if (p[order[k - 1]] <= static_cast<double>(k) * q / (md * c_m)) k_star = k;
    for (std::size_t k = 0; k < k_star; ++k) reject[order[k]] = true;
    return reject;
}

namespace {

double tail_p(Tail tail, double upper, double lower) {
    switch (tail) {
        case Tail::Greater: return clamp_p(upper);
        case Tail::Less: return clamp_p(lower);
        case Tail::TwoSided: return clamp_p(std::min(1.0, 2.0 * std::min(upper, lower)));
    }
    return 1.0;
}

}  // namespace

TestResult paired_t(std::span<const double> diffs, Tail tail) {
    if (diffs.size() < 2) throw Error(ErrorCode::DegenerateInput, "paired_t: need at least 2 differences");
    const double var = sample_variance(diffs);
    if (var == 0.0) throw Error(ErrorCode::ZeroVariance, "paired_t: differences have zero variance");
    const double n = static_cast<double>(diffs.size());
    TestResult r;
    r.statistic = mean(diffs) / std::sqrt(var / n);
    r.tail = tail;
    r.n = diffs.size();
    const double df = n - 1.0;
    r.pvalue = tail_p(tail, student_t_sf(r.statistic, df), student_t_sf(-r.statistic, df));
    return r;
}

TestResult wilcoxon_signed_rank(std::span<const double> diffs, Tail tail) {
    std::vector<double> nz;
    for (double d : diffs)
        if (d != 0.0) nz.push_back(d);
    const std::size_t n = nz.size();
    if (n < 5) throw Error(ErrorCode::TooFewNonzero, "wilcoxon: need at least 5 nonzero differences");
    std::vector<double> mag(n);
    for (std::size_t i = 0; i < n; ++i) mag[i] = std::abs(nz[i]);
    const auto ranks = average_ranks(mag);
    double w = 0.0, sum_sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        w += nz[i] > 0 ? ranks[i] : -ranks[i];
        sum_sq += ranks[i] * ranks[i];
    }
    TestResult r;
    r.statistic = w;
    r.tail = tail;
    r.n = n;
    if (n <= kWilcoxonExactMax) {
        // Average ranks are multiples of 1/2; count subsets by doubled positive-rank sum.
        std::vector<int> doubled(n);
        int total = 0;
        for (std::size_t i = 0; i < n; ++i) {
            doubled[i] = static_cast<int>(std::lround(2.0 * ranks[i]));
            total += doubled[i];
        }
        std::vector<double> ways(static_cast<std::size_t>(total) + 1, 0.0);
        ways[0] = 1.0;
        int reach = 0;
        for (int d : doubled) {
            for (int s = reach; s >= 0; --s)
                if (ways[static_cast<std::size_t>(s)] != 0.0) ways[static_cast<std::size_t>(s + d)] += ways[static_cast<std::size_t>(s)];
            reach += d;
        }
        int observed = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (nz[i] > 0) observed += doubled[i];
        const double all = std::ldexp(1.0, static_cast<int>(n));
        double ge = 0.0, le = 0.0;
        for (int s = 0; s <= total; ++s) {
            if (s >= observed) ge += ways[static_cast<std::size_t>(s)];
            if (s <= observed) le += ways[static_cast<std::size_t>(s)];
        }
        r.pvalue = tail_p(tail, ge / all, le / all);
    } else {
        const double z = w / std::sqrt(sum_sq);
        r.pvalue = tail_p(tail, normal_sf(z), normal_cdf(z));
    }
    return r;
}

double icc(const Eigen::MatrixXd& ratings, IccForm form) {
    const auto n = ratings.rows();
    const auto k = ratings.cols();
    if (n < 2 || k < 2) throw Error(ErrorCode::DegenerateInput, "icc: need at least 2 targets and 2 raters");
    if (!ratings.allFinite()) throw Error(ErrorCode::MissingCell, "icc: ratings contain a missing cell");
    const double nd = static_cast<double>(n), kd = static_cast<double>(k);
    // Computational (uncentered) sums of squares.
    const double total = ratings.sum();
    const double correction = total * total / (nd * kd);
    const double ss_total = ratings.array().square().sum() - correction;
    const double ss_rows = ratings.rowwise().sum().array().square().sum() / kd - correction;
    const double ss_cols = ratings.colwise().sum().array().square().sum() / nd - correction;
    const double ss_within = ss_total - ss_rows;
    const double ss_error = ss_total - ss_rows - ss_cols;

    const double ms_rows = ss_rows / (nd - 1.0);
    const double ms_cols = ss_cols / (kd - 1.0);
    const double ms_within = ss_within / (nd * (kd - 1.0));
    const double ms_error = ss_error / ((nd - 1.0) * (kd - 1.0));

    const double scale = std::max(1.0, ratings.cwiseAbs().maxCoeff());
    if (ms_rows <= 1e-14 * scale * scale) throw Error(ErrorCode::DegenerateVariance, "icc: no between-target variance");
    switch (form) {
        case IccForm::ICC1k: return (ms_rows - ms_within) / ms_rows;
        case IccForm::ICC2k: return (ms_rows - ms_error) / (ms_rows + (ms_cols - ms_error) / nd);
    }
    return 0.0;
}

}  // namespace nrsa::stats
