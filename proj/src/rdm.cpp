#include "nrsa/rdm.hpp"

#include <cmath>

#include "nrsa/dataio.hpp"
#include "nrsa/error.hpp"

namespace nrsa::rdm {

Eigen::MatrixXd seed_means(const ActivationTensor& t) {
    const auto k = static_cast<Eigen::Index>(t.concepts.size());
    const auto l = static_cast<Eigen::Index>(t.neurons);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(k, l);
    for (std::size_t s = 0; s < t.seeds; ++s)
        for (Eigen::Index c = 0; c < k; ++c)
            for (Eigen::Index n = 0; n < l; ++n) out(c, n) += t.at(s, static_cast<std::size_t>(c), static_cast<std::size_t>(n));
    if (t.seeds > 0) out /= static_cast<double>(t.seeds);
    return out;
}

Rdm scalar_rdm(std::vector<std::string> concepts, std::span<const double> values) {
    if (concepts.size() != values.size()) throw Error(ErrorCode::LengthMismatch, "one value per concept is required");
    const auto k = static_cast<Eigen::Index>(values.size());
    Rdm out{std::move(concepts), Eigen::MatrixXd::Zero(k, k)};
    for (Eigen::Index i = 1; i < k; ++i)
        for (Eigen::Index j = 0; j < i; ++j) {
            const double d = std::abs(values[static_cast<std::size_t>(i)] - values[static_cast<std::size_t>(j)]);
            out.matrix(i, j) = d;
            out.matrix(j, i) = d;
        }
    return out;
}

Rdm neuron_rdm(const ActivationTensor& t, std::size_t neuron) {
    if (neuron >= t.neurons)
        throw Error(ErrorCode::IndexOutOfRange, "neuron " + std::to_string(neuron) + " >= " + std::to_string(t.neurons));
    std::vector<double> a(t.concepts.size(), 0.0);
    for (std::size_t c = 0; c < a.size(); ++c) {
        for (std::size_t s = 0; s < t.seeds; ++s) a[c] += t.at(s, c, neuron);
        a[c] /= static_cast<double>(t.seeds);
    }
    return scalar_rdm(t.concepts, a);
}

Rdm attribute_rdm(const RatingTable& r, const std::string& attribute) {
    const auto col = r.column(r.attribute_index(attribute));
    return scalar_rdm(r.concepts, col);
}

std::vector<double> lower_triangle(const Eigen::MatrixXd& m) {
    std::vector<double> out;
    out.reserve(triangle_size(static_cast<std::size_t>(m.rows())));
    for (Eigen::Index i = 1; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < i; ++j) out.push_back(m(i, j));
    return out;
}

std::vector<double> lower_triangle(const Rdm& m) { return lower_triangle(m.matrix); }

void scalar_triangle(std::span<const double> values, std::span<double> out) {
    std::size_t at = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        for (std::size_t j = 0; j < i; ++j) out[at++] = std::abs(values[i] - values[j]);
}

Violations audit(const Rdm& m, double triangle_tol) {
    Violations v;
    const auto& x = m.matrix;
    const Eigen::Index k = x.rows();
    if (x.cols() != k) {
        ++v.asymmetric;
        return v;
    }
    for (Eigen::Index i = 0; i < k; ++i) {
        if (x(i, i) != 0.0) ++v.nonzero_diagonal;
        for (Eigen::Index j = 0; j < k; ++j) {
            if (!std::isfinite(x(i, j))) ++v.non_finite;
            if (x(i, j) < 0.0) ++v.negative;
            if (j < i && x(i, j) != x(j, i)) ++v.asymmetric;
        }
    }
    for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = i + 1; j < k; ++j)
            for (Eigen::Index h = 0; h < k; ++h)
                if (x(i, j) > x(i, h) + x(h, j) + triangle_tol) ++v.triangle;
    return v;
}

Rdm permuted(const Rdm& m, std::span<const std::size_t> perm) {
    const auto k = static_cast<Eigen::Index>(perm.size());
    Rdm out{std::vector<std::string>(perm.size()), Eigen::MatrixXd(k, k)};
    for (Eigen::Index i = 0; i < k; ++i) {
        out.concepts[static_cast<std::size_t>(i)] = m.concepts[perm[static_cast<std::size_t>(i)]];
        for (Eigen::Index j = 0; j < k; ++j)
            out.matrix(i, j) = m.matrix(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)]),
                                        static_cast<Eigen::Index>(perm[static_cast<std::size_t>(j)]));
    }
    return out;
}

void write_rdm_csv(const Rdm& m, const std::filesystem::path& path) {
    std::string out = "concept";
    for (const auto& c : m.concepts) out += "," + c;
    out += "\n";
    for (std::size_t i = 0; i < m.concepts.size(); ++i) {
        out += m.concepts[i];
        for (std::size_t j = 0; j < m.concepts.size(); ++j)
            out += "," + dataio::format_number(m.matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        out += "\n";
    }
    dataio::write_text(path, out);
}

}  // namespace nrsa::rdm
