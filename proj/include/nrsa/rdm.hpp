#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nrsa/types.hpp"

namespace nrsa::rdm {

/// Symmetric concept-by-concept dissimilarity matrix with a zero diagonal.
struct Rdm {
    std::vector<std::string> concepts;
    Eigen::MatrixXd matrix;
};

/// Counts of invariant violations found by audit(); all zero for a valid RDM.
struct Violations {
    std::size_t asymmetric = 0;
    std::size_t nonzero_diagonal = 0;
    std::size_t negative = 0;
    std::size_t non_finite = 0;
    std::size_t triangle = 0;

    std::size_t total() const { return asymmetric + nonzero_diagonal + negative + non_finite + triangle; }
};

/// Concepts x neurons matrix of activations averaged over seeds.
Eigen::MatrixXd seed_means(const ActivationTensor& t);

/// |a_i - a_j| for one scalar per concept.
Rdm scalar_rdm(std::vector<std::string> concepts, std::span<const double> values);

Rdm neuron_rdm(const ActivationTensor& t, std::size_t neuron);
Rdm attribute_rdm(const RatingTable& r, const std::string& attribute);

/// Strictly-lower entries, row-major: (1,0), (2,0), (2,1), (3,0), ...
std::vector<double> lower_triangle(const Rdm& m);
std::vector<double> lower_triangle(const Eigen::MatrixXd& m);

/// lower_triangle(scalar_rdm(values)) without building the matrix.
void scalar_triangle(std::span<const double> values, std::span<double> out);

inline std::size_t triangle_size(std::size_t k) { return k * (k - 1) / 2; }

/// Checks symmetry, zero diagonal, non-negativity and finiteness exactly, and the triangle
/// inequality up to `triangle_tol`.
Violations audit(const Rdm& m, double triangle_tol = 1e-12);

/// Relabels concepts: row/column i of the result is row/column perm[i] of the input.
Rdm permuted(const Rdm& m, std::span<const std::size_t> perm);

/// CSV with a header row and a leading concept column.
void write_rdm_csv(const Rdm& m, const std::filesystem::path& path);

}  // namespace nrsa::rdm
