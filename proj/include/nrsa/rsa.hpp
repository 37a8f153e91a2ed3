#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nrsa/rdm.hpp"
#include "nrsa/types.hpp"

namespace nrsa::rsa {

enum class SigMethod {
    TauNormal,      // tau null distribution (exact below 10 pairs)
    SignrankPairs,  // one-tailed signed-rank on rank-distance deficits
};

SigMethod parse_sig_method(const std::string& name);  // "tau_normal" | "signrank_pairs"
std::string to_string(SigMethod method);

/// neurons x attributes.
struct TauMatrix {
    std::vector<std::string> attributes;
    Eigen::MatrixXd taus;
    Eigen::MatrixXd pvalues;
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> significant;

    std::size_t neurons() const { return static_cast<std::size_t>(taus.rows()); }
    std::size_t attribute_index(const std::string& name) const;
    bool operator==(const TauMatrix& o) const {
        return attributes == o.attributes && taus == o.taus && pvalues == o.pvalues && significant == o.significant;
    }
};

struct SearchlightOptions {
    double q = 0.01;
    SigMethod method = SigMethod::TauNormal;
    int jobs = 1;
};

/// p-value for one neuron/attribute triangle pair under `method`.
double relatedness_pvalue(std::span<const double> neuron_tri, std::span<const double> attribute_tri, double tau,
                          SigMethod method);

/// Neuron triangles whose activations are identical across concepts have no defined
/// tau; they are reported as tau 0, p 1.
TauMatrix searchlight(const ActivationTensor& t, const RatingTable& r, const SearchlightOptions& opt = {});

struct NeuronRanking {
    std::string attribute;
    std::vector<std::size_t> neurons;
    std::vector<double> taus;
    std::vector<bool> significant;
};

/// Top-n neurons by descending tau; equal taus keep ascending neuron index.
NeuronRanking rank_neurons(const TauMatrix& m, const std::string& attribute, std::size_t n);

struct AttributeWeight {
    std::string attribute;
    double mean_tau = 0.0;
    double pvalue = 1.0;
    bool significant = false;
    std::vector<double> participant_taus;
};

struct HumanRsaOptions {
    std::size_t boots = 1000;
    double q = 0.05;
    std::uint64_t seed = 0;
    int jobs = 1;
};

/// Mean participant tau against one attribute RDM. The p-value is the median over
/// bootstrap replicates (participants and concepts resampled with replacement) of a
/// two-tailed signed-rank test of the replicate taus against zero.
AttributeWeight human_rsa(const rdm::Rdm& attribute, const ParticipantRDMSet& people, const HumanRsaOptions& opt = {});

/// human_rsa for every attribute of `r`, BY-corrected across attributes.
std::vector<AttributeWeight> attribute_weights(const RatingTable& r, const ParticipantRDMSet& people,
                                               const HumanRsaOptions& opt = {});

void write_tau_matrix_csv(const TauMatrix& m, const std::filesystem::path& path);
TauMatrix read_tau_matrix_csv(const std::filesystem::path& path);
void write_ranking_csv(const NeuronRanking& r, const std::filesystem::path& path);
/// The attribute name is not stored in the file and is taken from the caller.
NeuronRanking read_ranking_csv(const std::filesystem::path& path, const std::string& attribute);
void write_attribute_weights_csv(const std::vector<AttributeWeight>& w, const std::filesystem::path& path);

}  // namespace nrsa::rsa
