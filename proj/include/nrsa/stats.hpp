#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nrsa/error.hpp"

namespace nrsa::stats {

enum class Tail { Greater, Less, TwoSided };

std::string_view to_string(Tail tail) noexcept;

/// Carrier for t, W and similar statistics.
struct TestResult {
    double statistic = 0.0;
    double pvalue = 1.0;  // always in (0, 1]
    Tail tail = Tail::Greater;
    std::size_t n = 0;
};

// ---------------------------------------------------------------------------
// Elementary helpers

double mean(std::span<const double> x);
double sample_variance(std::span<const double> x);
double normal_cdf(double z);
double normal_sf(double z);
/// Upper-tail probability of Student's t with `df` degrees of freedom.
double student_t_sf(double t, double df);
double student_t_quantile(double prob, double df);
/// 1-based average ranks (ties share the mean of their positions).
std::vector<double> average_ranks(std::span<const double> x);
/// Smallest p-value reported anywhere; keeps p strictly inside (0, 1].
inline constexpr double kMinPValue = 1e-300;

// ---------------------------------------------------------------------------
// Rank and product-moment correlation

/// Kendall's tau-b, computed with Knight's O(n log n) merge-sort algorithm.
/// Throws LengthMismatch for unequal lengths and DegenerateInput when n < 2
/// or either vector is constant.
double kendall_tau(std::span<const double> x, std::span<const double> y);

/// One-tailed (H1: tau > 0) p-value of a tau statistic over n items. For n < 10 the
/// exact no-ties permutation distribution is used; otherwise the normal approximation
/// with variance 2(2n+5) / (9n(n-1)).
double tau_significance(double tau, std::size_t n);

inline constexpr std::size_t kTauExactBelow = 10;

double pearson_r(std::span<const double> x, std::span<const double> y);

struct FisherAverage {
    double mean_r = 0.0;
    double t = 0.0;
    double pvalue = 0.5;
    std::size_t n = 0;
    /// Set when the Fisher-z sample has zero variance but a nonzero mean: t is infinite
    /// and the reported p is a boundary value rather than a test outcome.
    bool boundary_case = false;
};

/// mean_r = tanh(mean(atanh(r))); one-tailed t-test of the z sample against zero.
FisherAverage fisher_average(std::span<const double> rs);

// ---------------------------------------------------------------------------
// Multiple comparisons

/// Benjamini-Yekutieli step-up procedure. Returns rejection flags in input order.
std::vector<bool> fdr_by(std::span<const double> p, double q);

// ---------------------------------------------------------------------------
// Location tests

/// One-sample t-test on paired differences; throws ZeroVariance for constant input.
TestResult paired_t(std::span<const double> diffs, Tail tail = Tail::Greater);

/// Wilcoxon signed-rank test. Zeros are dropped, ties get average ranks.
/// The statistic is W = sum of signed ranks. Exact null (all 2^n sign patterns,
/// counted by dynamic programming) for n <= 15, tie-corrected normal approximation above.
TestResult wilcoxon_signed_rank(std::span<const double> diffs, Tail tail);

inline constexpr std::size_t kWilcoxonExactMax = 15;

// ---------------------------------------------------------------------------
// Agreement and reliability

template <typename Label>
double cohens_kappa(std::span<const Label> a, std::span<const Label> b) {
    if (a.size() != b.size()) throw Error(ErrorCode::LengthMismatch, "kappa: rater label vectors differ in length");
    if (a.size() < 2) throw Error(ErrorCode::DegenerateInput, "kappa: need at least 2 items");
    std::map<Label, std::size_t> index;
    for (const auto& l : a) index.emplace(l, 0);
    for (const auto& l : b) index.emplace(l, 0);
    std::size_t next = 0;
    for (auto& [label, idx] : index) idx = next++;
    std::vector<double> count_a(index.size(), 0.0), count_b(index.size(), 0.0);
    double agree = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto ia = index.at(a[i]);
        const auto ib = index.at(b[i]);
        count_a[ia] += 1.0;
        count_b[ib] += 1.0;
        if (ia == ib) agree += 1.0;
    }
    const double n = static_cast<double>(a.size());
    const double p_o = agree / n;
    double p_e = 0.0;
    for (std::size_t c = 0; c < index.size(); ++c) p_e += (count_a[c] / n) * (count_b[c] / n);
    if (p_e >= 1.0) throw Error(ErrorCode::DegenerateAgreement, "kappa: chance agreement is 1");
    return (p_o - p_e) / (1.0 - p_e);
}

enum class IccForm { ICC1k, ICC2k };

/// Average-rater intraclass correlation from ANOVA mean squares.
/// `ratings` is targets x raters; NaN marks a missing cell.
double icc(const Eigen::MatrixXd& ratings, IccForm form);

// ---------------------------------------------------------------------------
// Unimodality

struct DipResult {
    double dip = 0.0;
    double pvalue = 1.0;
    std::size_t n = 0;
};

/// Hartigan's dip statistic (sample need not be sorted). Always in [1/(2n), 1/4].
double dip_statistic(std::span<const double> sample);

/// Dip with a Monte-Carlo p-value against `boots` uniform(0,1) samples of the same size.
DipResult hartigan_dip(std::span<const double> sample, std::size_t boots = 10000, std::uint64_t seed = 0, int jobs = 1);

// ---------------------------------------------------------------------------
// Factor extraction

struct FactorSolution {
    Eigen::MatrixXd loadings;            // items x factors
    Eigen::VectorXd explained_variance;  // per factor (column sum of squared loadings)
    Eigen::MatrixXd rotation_matrix;     // factors x factors; identity when unrotated
    std::string rotation = "none";
    int sweeps = 0;
};

/// Principal components of the item correlation matrix, loadings scaled by sqrt(eigenvalue).
FactorSolution pca(const Eigen::MatrixXd& data, std::size_t factors);

/// Varimax with Kaiser row normalization, pairwise-rotation sweeps until the criterion
/// changes by less than `tolerance`.
FactorSolution varimax(const Eigen::MatrixXd& loadings, double tolerance = 1e-8, int max_sweeps = 1000);

/// The raw varimax criterion: sum over factors of the variance of squared loadings.
double varimax_criterion(const Eigen::MatrixXd& loadings);

Eigen::MatrixXd correlation_matrix(const Eigen::MatrixXd& data);

/// Number of leading components whose eigenvalue exceeds the given percentile of
/// eigenvalues obtained from column-wise independently permuted data.
std::size_t parallel_analysis(const Eigen::MatrixXd& data, std::size_t permutations, std::uint64_t seed,
                              double percentile = 0.95);

}  // namespace nrsa::stats
