#include <algorithm>
#include <cmath>

#include "nrsa/rng.hpp"
#include "nrsa/stats.hpp"

namespace nrsa::stats {

Eigen::MatrixXd correlation_matrix(const Eigen::MatrixXd& data) {
    const auto n = data.rows();
    if (n < 2) throw Error(ErrorCode::DegenerateInput, "correlation: need at least 2 observations");
    Eigen::MatrixXd centered = data.rowwise() - data.colwise().mean();
    Eigen::VectorXd sd = (centered.array().square().colwise().sum() / static_cast<double>(n - 1)).sqrt();
    for (Eigen::Index j = 0; j < sd.size(); ++j)
        if (!(sd(j) > 0.0)) throw Error(ErrorCode::DegenerateInput, "correlation: item " + std::to_string(j) + " is constant");
    Eigen::MatrixXd z = centered.array().rowwise() / sd.transpose().array();
    Eigen::MatrixXd r = (z.transpose() * z) / static_cast<double>(n - 1);
    r.diagonal().setOnes();
    return r;
}

namespace {

Eigen::VectorXd descending_eigenvalues(const Eigen::MatrixXd& corr) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(corr, Eigen::EigenvaluesOnly);
    return solver.eigenvalues().reverse();
}

// Flip each column so its largest-magnitude entry is positive.
void canonical_signs(Eigen::MatrixXd& loadings, Eigen::MatrixXd* rotation) {
    for (Eigen::Index j = 0; j < loadings.cols(); ++j) {
        Eigen::Index arg = 0;
        loadings.col(j).cwiseAbs().maxCoeff(&arg);
        if (loadings(arg, j) < 0.0) {
            loadings.col(j) *= -1.0;
            if (rotation) rotation->col(j) *= -1.0;
        }
    }
}

}  // namespace

FactorSolution pca(const Eigen::MatrixXd& data, std::size_t factors) {
    const auto items = static_cast<std::size_t>(data.cols());
    if (factors == 0 || factors > items) throw Error(ErrorCode::RankDeficient, "pca: factor count must be in [1, items]");
    const Eigen::MatrixXd corr = correlation_matrix(data);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(corr);
    const Eigen::VectorXd values = solver.eigenvalues().reverse();
    const Eigen::MatrixXd vectors = solver.eigenvectors().rowwise().reverse();
    const auto k = static_cast<Eigen::Index>(factors);
    const double floor = 1e-10 * static_cast<double>(items);
    if (values(k - 1) <= floor)
        throw Error(ErrorCode::RankDeficient, "pca: requested " + std::to_string(factors) + " factors but only " +
                                                  std::to_string((values.array() > floor).count()) +
                                                  " positive eigenvalues");
    FactorSolution out;
    out.loadings = vectors.leftCols(k) * values.head(k).cwiseSqrt().asDiagonal();
    canonical_signs(out.loadings, nullptr);
    out.explained_variance = values.head(k);
    out.rotation_matrix = Eigen::MatrixXd::Identity(k, k);
    out.rotation = "none";
    return out;
}

double varimax_criterion(const Eigen::MatrixXd& loadings) {
    const double p = static_cast<double>(loadings.rows());
    const Eigen::ArrayXXd sq = loadings.array().square();
    double v = 0.0;
    for (Eigen::Index j = 0; j < sq.cols(); ++j) {
        const double m = sq.col(j).sum() / p;
        v += sq.col(j).square().sum() / p - m * m;
    }
    return v;
}

FactorSolution varimax(const Eigen::MatrixXd& loadings, double tolerance, int max_sweeps) {
    const auto p = loadings.rows();
    const auto k = loadings.cols();
    if (k < 2) throw Error(ErrorCode::DegenerateInput, "varimax: need at least 2 factors");

    // Kaiser normalization.
    Eigen::VectorXd h = loadings.rowwise().norm();
    Eigen::MatrixXd a = loadings;
    for (Eigen::Index i = 0; i < p; ++i)
        if (h(i) > 0.0) a.row(i) /= h(i);

    Eigen::MatrixXd rot = Eigen::MatrixXd::Identity(k, k);
    const double pd = static_cast<double>(p);
    double previous = varimax_criterion(a);
    bool converged = false;
    int sweep = 0;
    while (sweep < max_sweeps) {
        ++sweep;
        for (Eigen::Index j = 0; j < k - 1; ++j) {
            for (Eigen::Index l = j + 1; l < k; ++l) {
                const Eigen::ArrayXd x = a.col(j).array();
                const Eigen::ArrayXd y = a.col(l).array();
                const Eigen::ArrayXd u = x.square() - y.square();
                const Eigen::ArrayXd v = 2.0 * x * y;
                const double sa = u.sum(), sb = v.sum();
                const double sc = (u.square() - v.square()).sum();
                const double sd = 2.0 * (u * v).sum();
                const double num = sd - 2.0 * sa * sb / pd;
                const double den = sc - (sa * sa - sb * sb) / pd;
                const double phi = 0.25 * std::atan2(num, den);
                const double c = std::cos(phi), s = std::sin(phi);
                const Eigen::VectorXd aj = a.col(j), al = a.col(l);
                a.col(j) = c * aj + s * al;
                a.col(l) = -s * aj + c * al;
                const Eigen::VectorXd rj = rot.col(j), rl = rot.col(l);
                rot.col(j) = c * rj + s * rl;
                rot.col(l) = -s * rj + c * rl;
            }
        }
        const double current = varimax_criterion(a);
        if (std::abs(current - previous) < tolerance) {
            converged = true;
            break;
        }
        previous = current;
    }
    if (!converged) throw Error(ErrorCode::NoConvergence, "varimax: no convergence after " + std::to_string(max_sweeps) + " sweeps");

    for (Eigen::Index i = 0; i < p; ++i) a.row(i) *= h(i);
    canonical_signs(a, &rot);
    FactorSolution out;
    out.loadings = a;
    out.explained_variance = a.array().square().colwise().sum().transpose();
    out.rotation_matrix = rot;
    out.rotation = "varimax";
    out.sweeps = sweep;
    return out;
}

std::size_t parallel_analysis(const Eigen::MatrixXd& data, std::size_t permutations, std::uint64_t seed,
                              double percentile) {
    if (permutations < 100) throw Error(ErrorCode::DegenerateInput, "parallel_analysis: need at least 100 permutations");
    const auto n = data.rows();
    const auto items = data.cols();
    const Eigen::VectorXd observed = descending_eigenvalues(correlation_matrix(data));

    Eigen::MatrixXd null_values(static_cast<Eigen::Index>(permutations), items);
    Rng rng(derive_seed(seed, {0x9a7ULL}));
    Eigen::MatrixXd shuffled = data;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (std::size_t b = 0; b < permutations; ++b) {
        for (Eigen::Index j = 0; j < items; ++j) {
            for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
            rng.shuffle(order);
            for (Eigen::Index i = 0; i < n; ++i) shuffled(i, j) = data(order[static_cast<std::size_t>(i)], j);
        }
        null_values.row(static_cast<Eigen::Index>(b)) = descending_eigenvalues(correlation_matrix(shuffled)).transpose();
    }

    std::size_t retained = 0;
    std::vector<double> column(permutations);
    for (Eigen::Index j = 0; j < items; ++j) {
        for (std::size_t b = 0; b < permutations; ++b) column[b] = null_values(static_cast<Eigen::Index>(b), j);
        std::sort(column.begin(), column.end());
        const double pos = percentile * static_cast<double>(permutations - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, permutations - 1);
        const double threshold = column[lo] + (pos - static_cast<double>(lo)) * (column[hi] - column[lo]);
        if (observed(j) > threshold)
            ++retained;
        else
            break;
    }
    return retained;
}

}  // namespace nrsa::stats
