#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "nrsa/rng.hpp"
#include "nrsa/stats.hpp"
#include "oracles/oracles.hpp"

using namespace nrsa;
using namespace nrsa::stats;

namespace {

std::vector<double> random_vector(Rng& rng, std::size_t n, int levels = 0) {
    std::vector<double> v(n);
    for (auto& x : v) x = levels > 0 ? static_cast<double>(rng.below(static_cast<std::uint64_t>(levels))) : rng.normal();
    return v;
}

template <typename F>
void check_code(F&& f, ErrorCode code) {
    try {
        f();
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == code);
    }
}

}  // namespace

TEST_CASE("kendall tau: fixed cases") {
    std::vector<double> x{1, 2, 3, 4, 5};
    std::vector<double> rev{5, 4, 3, 2, 1};
    CHECK(kendall_tau(x, x) == doctest::Approx(1.0));
    CHECK(kendall_tau(x, rev) == doctest::Approx(-1.0));
    std::vector<double> a{1, 2, 3, 4}, b{1, 3, 2, 4};
    CHECK(kendall_tau(a, b) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    check_code([&] { kendall_tau(a, std::vector<double>{1, 2, 3}); }, ErrorCode::LengthMismatch);
    check_code([&] { kendall_tau(a, std::vector<double>{2, 2, 2, 2}); }, ErrorCode::DegenerateInput);
}

TEST_CASE("kendall tau matches pair enumeration, with and without ties") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.below(60);
        const int levels = trial % 2 ? 4 : 0;
        auto x = random_vector(rng, n, levels), y = random_vector(rng, n, levels);
        if (oracle::kendall_tau_b(x, x) != oracle::kendall_tau_b(x, x)) continue;  // constant
        double expected;
        try {
            expected = oracle::kendall_tau_b(x, y);
        } catch (...) {
            continue;
        }
        if (!std::isfinite(expected)) continue;
        CHECK(std::abs(kendall_tau(x, y) - expected) <= 1e-12);
    }
}

TEST_CASE("kendall tau properties") {
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 5 + rng.below(40);
        auto x = random_vector(rng, n), y = random_vector(rng, n);
        std::vector<double> neg(n), mono(n);
        for (std::size_t i = 0; i < n; ++i) {
            neg[i] = -y[i];
            mono[i] = std::exp(y[i]) + 3.0 * y[i];
        }
        const double t = kendall_tau(x, y);
        CHECK(kendall_tau(x, neg) == doctest::Approx(-t).epsilon(1e-12));
        CHECK(kendall_tau(x, mono) == doctest::Approx(t).epsilon(1e-12));
        CHECK(t >= -1.0);
        CHECK(t <= 1.0);
    }
}

TEST_CASE("tau significance") {
    CHECK(tau_significance(0.0, 351) == doctest::Approx(0.5));
    CHECK(tau_significance(1.0, 351) < 1e-10);
    CHECK(tau_significance(1.0, 351) > 0.0);
    // exact regime: enumerate all 8! orderings
    for (double tau : {1.0, 0.5, 2.0 / 7.0, 0.0, -0.25}) {
        CHECK(tau_significance(tau, 8) == doctest::Approx(oracle::tau_exact_upper(tau, 8)).epsilon(1e-12));
    }
    CHECK(tau_significance(1.0, 5) == doctest::Approx(1.0 / 120.0));
}

TEST_CASE("pearson r") {
    std::vector<double> x{1, 2, 3, 4, 7};
    std::vector<double> y(5), z(5);
    for (int i = 0; i < 5; ++i) {
        y[i] = 2 * x[i] + 1;
        z[i] = -x[i];
    }
    CHECK(pearson_r(x, y) == doctest::Approx(1.0));
    CHECK(pearson_r(x, z) == doctest::Approx(-1.0));
    check_code([&] { pearson_r(x, std::vector<double>(5, 3.0)); }, ErrorCode::DegenerateInput);
}

TEST_CASE("fisher average") {
    std::vector<double> zeros(4, 0.0);
    auto f0 = fisher_average(zeros);
    CHECK(f0.mean_r == 0.0);
    CHECK(f0.pvalue == doctest::Approx(0.5));

    std::vector<double> halves(5, 0.5);
    auto fh = fisher_average(halves);
    CHECK(fh.mean_r == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(fh.boundary_case);

    std::vector<double> rs{0.3, 0.5, 0.7};
    const double z = (oracle::atanh_series(0.3) + oracle::atanh_series(0.5) + oracle::atanh_series(0.7)) / 3.0;
    CHECK(fisher_average(rs).mean_r == doctest::Approx(oracle::tanh_series(z)).epsilon(1e-12));
    check_code([] { fisher_average(std::vector<double>{0.2, 1.0}); }, ErrorCode::BoundaryR);
}

TEST_CASE("BY-FDR") {
    CHECK(fdr_by(std::vector<double>{0.004}, 0.01) == std::vector<bool>{true});
    CHECK(fdr_by(std::vector<double>(5, 1.0), 0.05) == std::vector<bool>(5, false));
    std::vector<double> p{0.001, 0.008, 0.039, 0.041};
    // c(4) = 25/12: thresholds 0.006, 0.012, 0.018, 0.024
    CHECK(fdr_by(p, 0.05) == std::vector<bool>{true, true, false, false});
    CHECK(fdr_by(p, 0.05) == oracle::fdr_by(p, 0.05));
    check_code([] { fdr_by(std::vector<double>{0.0}, 0.05); }, ErrorCode::InvalidP);
}

TEST_CASE("BY-FDR matches rule evaluation and is monotone in q") {
    Rng rng(13);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t m = 1 + rng.below(40);
        std::vector<double> p(m);
        for (auto& v : p) v = rng.uniform() < 0.3 ? std::pow(rng.uniform_open(), 6) : rng.uniform_open();
        const auto loose = fdr_by(p, 0.1);
        const auto tight = fdr_by(p, 0.01);
        CHECK(loose == oracle::fdr_by(p, 0.1));
        for (std::size_t i = 0; i < m; ++i) {
            if (tight[i]) CHECK(loose[i]);
            if (loose[i]) CHECK(p[i] <= 0.1);
        }
    }
}

TEST_CASE("paired t") {
    check_code([] { paired_t(std::vector<double>(4, 0.0)); }, ErrorCode::ZeroVariance);
    CHECK(paired_t(std::vector<double>{1, 1, 1, 1.0001}).pvalue < 1e-6);
    std::vector<double> d{2, -1, 3, 0, 1};
    auto r = paired_t(d);
    CHECK(r.statistic == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
    CHECK(r.statistic == doctest::Approx(oracle::t_statistic(d)).epsilon(1e-14));
    CHECK(r.n == 5);
    // upper tail of t(4) at sqrt(2)
    CHECK(r.pvalue == doctest::Approx(0.11509982054024949).epsilon(1e-9));
}

TEST_CASE("wilcoxon signed-rank") {
    std::vector<double> sym{1, -1, 2, -2, 3, -3};
    auto two = wilcoxon_signed_rank(sym, Tail::TwoSided);
    CHECK(two.statistic == 0.0);
    CHECK(two.pvalue == 1.0);
    std::vector<double> pos{0.5, 1.2, 2.0, 3.1, 4.4, 5.0};
    CHECK(wilcoxon_signed_rank(pos, Tail::Greater).pvalue == doctest::Approx(1.0 / 64.0));
    check_code([] { wilcoxon_signed_rank(std::vector<double>{1, 2, 0, 0, 3, 4}, Tail::Greater); },
               ErrorCode::TooFewNonzero);
}

TEST_CASE("wilcoxon exact regime matches sign-pattern enumeration") {
    Rng rng(14);
    for (int trial = 0; trial < 150; ++trial) {
        const std::size_t n = 5 + rng.below(11);
        std::vector<double> d(n);
        for (auto& v : d) v = trial % 3 == 0 ? static_cast<double>(static_cast<int>(rng.below(7)) - 3) : rng.normal(0.3, 1.0);
        std::size_t nonzero = 0;
        for (double v : d) nonzero += v != 0.0;
        if (nonzero < 5) continue;
        const auto ref = oracle::wilcoxon_enumerate(d);
        const auto up = wilcoxon_signed_rank(d, Tail::Greater);
        const auto lo = wilcoxon_signed_rank(d, Tail::Less);
        CHECK(up.statistic == doctest::Approx(ref.w));
        CHECK(std::abs(up.pvalue - ref.p_upper) <= 1e-12);
        CHECK(std::abs(lo.pvalue - ref.p_lower) <= 1e-12);
        // flipping every sign swaps the tails
        std::vector<double> flipped(d);
        for (auto& v : flipped) v = -v;
        CHECK(std::abs(wilcoxon_signed_rank(flipped, Tail::Greater).pvalue - lo.pvalue) <= 1e-12);
    }
}

TEST_CASE("cohen's kappa") {
    std::vector<int> a{1, 1, 0, 0}, b{1, 0, 1, 0};
    CHECK(cohens_kappa<int>(a, a) == doctest::Approx(1.0));
    CHECK(cohens_kappa<int>(a, b) == doctest::Approx(0.0));
    check_code([] {
        std::vector<int> c{1, 1, 1};
        cohens_kappa<int>(c, c);
    }, ErrorCode::DegenerateAgreement);
    Rng rng(15);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.below(50);
        std::vector<int> x(n), y(n), rx(n), ry(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = static_cast<int>(rng.below(3));
            y[i] = rng.uniform() < 0.6 ? x[i] : static_cast<int>(rng.below(3));
            rx[i] = 10 - 3 * x[i];  // consistent relabeling
            ry[i] = 10 - 3 * y[i];
        }
        double k;
        try {
            k = cohens_kappa<int>(x, y);
        } catch (const Error&) {
            continue;
        }
        CHECK(k == doctest::Approx(oracle::cohens_kappa(x, y)).epsilon(1e-12));
        CHECK(cohens_kappa<int>(rx, ry) == doctest::Approx(k).epsilon(1e-12));
    }
    std::vector<std::string> s1{"yes", "no", "yes"}, s2{"yes", "no", "no"};
    CHECK(cohens_kappa<std::string>(s1, s2) == doctest::Approx(0.4));
}

TEST_CASE("icc") {
    Eigen::MatrixXd same(5, 3);
    for (int i = 0; i < 5; ++i) same.row(i).setConstant(i * 1.5 - 2);
    CHECK(icc(same, IccForm::ICC1k) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(icc(same, IccForm::ICC2k) == doctest::Approx(1.0).epsilon(1e-12));

    Eigen::MatrixXd fixed(4, 3);
    fixed << 9, 2, 5, 6, 1, 3, 8, 4, 6, 7, 1, 2;
    std::vector<std::vector<double>> rows{{9, 2, 5}, {6, 1, 3}, {8, 4, 6}, {7, 1, 2}};
    CHECK(icc(fixed, IccForm::ICC1k) == doctest::Approx(oracle::icc1k(rows)).epsilon(1e-12));
    CHECK(icc(fixed, IccForm::ICC2k) == doctest::Approx(oracle::icc2k(rows)).epsilon(1e-12));

    Eigen::MatrixXd missing = fixed;
    missing(1, 1) = std::numeric_limits<double>::quiet_NaN();
    check_code([&] { icc(missing, IccForm::ICC2k); }, ErrorCode::MissingCell);
    check_code([] { icc(Eigen::MatrixXd::Ones(3, 3), IccForm::ICC1k); }, ErrorCode::DegenerateVariance);

    // independent noise raters: ICC near zero
    Rng rng(16);
    Eigen::MatrixXd noise(50, 4);
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise(i) = rng.normal();
    CHECK(std::abs(icc(noise, IccForm::ICC2k)) < 0.3);
}

TEST_CASE("dip statistic matches the linear-programming oracle") {
    const auto cases = oracle::load_dip_cases(std::string(NRSA_TEST_DATA) + "/dip_oracle.csv");
    REQUIRE(cases.size() >= 100);
    for (const auto& c : cases) CHECK(std::abs(dip_statistic(c.values) - c.dip) <= 1e-10);
}

TEST_CASE("dip bounds and special cases") {
    for (std::size_t n : {4u, 7u, 20u, 101u}) {
        std::vector<double> grid(n);
        for (std::size_t i = 0; i < n; ++i) grid[i] = static_cast<double>(i);
        CHECK(dip_statistic(grid) == doctest::Approx(1.0 / (2.0 * n)).epsilon(1e-12));
    }
    Rng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 4 + rng.below(60);
        auto s = random_vector(rng, n, trial % 2 ? 5 : 0);
        const double d = dip_statistic(s);
        CHECK(d >= 1.0 / (2.0 * n) - 1e-15);
        CHECK(d <= 0.25 + 1e-15);
    }
    check_code([] { dip_statistic(std::vector<double>{1, 2, 3}); }, ErrorCode::TooFewPoints);
    auto flat = hartigan_dip(std::vector<double>(12, 0.3), 500, 1);
    CHECK(flat.dip == doctest::Approx(1.0 / 24.0));
    CHECK(flat.pvalue == 1.0);
}

TEST_CASE("dip p-value: bimodal sample is significant, determinism across workers") {
    std::vector<double> bimodal;
    for (int i = 0; i < 25; ++i) bimodal.push_back(0.0 + 1e-3 * i);
    for (int i = 0; i < 25; ++i) bimodal.push_back(10.0 + 1e-3 * i);
    auto r = hartigan_dip(bimodal, 2000, 5);
    CHECK(r.pvalue < 0.01);
    auto r8 = hartigan_dip(bimodal, 2000, 5, 8);
    CHECK(r.pvalue == r8.pvalue);
}

TEST_CASE("pca, varimax and parallel analysis") {
    Rng rng(18);
    const int n = 400, items = 6;
    Eigen::MatrixXd data(n, items);
    for (int i = 0; i < n; ++i) {
        const double f1 = rng.normal(), f2 = rng.normal();
        for (int j = 0; j < items; ++j) data(i, j) = (j < 3 ? f1 : f2) * 0.9 + 0.45 * rng.normal();
    }
    // perfectly correlated pair loads equally
    Eigen::MatrixXd pair(n, 2);
    pair.col(0) = data.col(0);
    pair.col(1) = 2.0 * data.col(0).array() + 1.0;
    auto one = pca(pair, 1);
    CHECK(std::abs(one.loadings(0, 0)) == doctest::Approx(std::abs(one.loadings(1, 0))).epsilon(1e-9));
    check_code([&] { pca(pair, 2); }, ErrorCode::RankDeficient);

    const Eigen::MatrixXd corr = correlation_matrix(data);
    double previous = 1e9;
    for (std::size_t k = 1; k <= static_cast<std::size_t>(items); ++k) {
        auto sol = pca(data, k);
        const double resid = (corr - sol.loadings * sol.loadings.transpose()).norm();
        CHECK(resid <= previous + 1e-12);
        previous = resid;
    }

    auto sol = pca(data, 2);
    auto rot = varimax(sol.loadings);
    const Eigen::MatrixXd& r = rot.rotation_matrix;
    CHECK((r.transpose() * r - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-10);
    const Eigen::VectorXd before = sol.loadings.rowwise().squaredNorm();
    const Eigen::VectorXd after = rot.loadings.rowwise().squaredNorm();
    CHECK((before - after).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((sol.loadings * r - rot.loadings).cwiseAbs().maxCoeff() <= 1e-10);
    // rotating an optimum again leaves it in place
    auto again = varimax(rot.loadings);
    CHECK(std::abs(varimax_criterion(again.loadings) - varimax_criterion(rot.loadings)) < 1e-8);
    CHECK((again.rotation_matrix - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-3);

    CHECK(parallel_analysis(data, 100, 3) == 2);
    Eigen::MatrixXd noise(300, 5);
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise(i) = rng.normal();
    CHECK(parallel_analysis(noise, 100, 4) <= 5);
}

TEST_CASE("pca of independent items has unit eigenvalues") {
    Rng rng(19);
    Eigen::MatrixXd data(10000, 5);
    for (Eigen::Index i = 0; i < data.size(); ++i) data(i) = rng.normal();
    auto sol = pca(data, 5);
    for (Eigen::Index k = 0; k < 5; ++k) CHECK(std::abs(sol.explained_variance(k) - 1.0) < 0.1);
}

TEST_CASE("parallel analysis on pure noise retains nothing in most runs") {
    Rng rng(20);
    int zero = 0;
    const int runs = 30;
    for (int run = 0; run < runs; ++run) {
        Eigen::MatrixXd noise(120, 6);
        for (Eigen::Index i = 0; i < noise.size(); ++i) noise(i) = rng.normal();
        zero += parallel_analysis(noise, 100, static_cast<std::uint64_t>(run)) == 0;
    }
    CHECK(zero >= 0.9 * runs - 3);  // binomial slack around the 95% expectation
}
