#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace nrsa {

/// Concepts x attributes matrix of mean ratings (standardized rating units).
struct RatingTable {
    std::vector<std::string> concepts;
    std::vector<std::string> attributes;
    Eigen::MatrixXd scores;

    std::size_t attribute_index(const std::string& name) const;  // throws UnknownAttribute
    std::vector<double> column(std::size_t attribute) const;
    /// Checks shape, uniqueness and finiteness; throws on violation.
    void validate() const;
};

/// seeds x concepts x neurons pre-activation values, seed-major then concept then neuron.
struct ActivationTensor {
    std::size_t seeds = 0;
    std::vector<std::string> concepts;
    std::size_t neurons = 0;
    std::vector<double> values;

    ActivationTensor() = default;
    ActivationTensor(std::size_t seeds, std::vector<std::string> concepts, std::size_t neurons)
        : seeds(seeds), concepts(std::move(concepts)), neurons(neurons),
          values(seeds * this->concepts.size() * neurons, 0.0) {}

    std::size_t offset(std::size_t seed, std::size_t concept_idx, std::size_t neuron) const {
        return (seed * concepts.size() + concept_idx) * neurons + neuron;
    }
    double& at(std::size_t seed, std::size_t concept_idx, std::size_t neuron) { return values[offset(seed, concept_idx, neuron)]; }
    double at(std::size_t seed, std::size_t concept_idx, std::size_t neuron) const { return values[offset(seed, concept_idx, neuron)]; }

    void validate() const;
    bool operator==(const ActivationTensor&) const = default;
};

/// Per-participant concept dissimilarity matrices (10 - Likert similarity).
struct ParticipantRDMSet {
    std::vector<std::string> participants;
    std::vector<std::string> concepts;
    std::vector<Eigen::MatrixXd> rdms;
};

/// One raw row of the long similarity-judgment file; nullopt means the rating is missing.
struct SimilarityJudgment {
    std::string participant;
    std::string concept_a;
    std::string concept_b;
    std::optional<double> similarity;
};

struct TableS1Row {
    std::string emotion;
    double kappa = 0.0;
    double acc_mean = 0.0;  // percent
    double acc_sd = 0.0;    // percent
};

struct TableS1Fixture {
    std::vector<TableS1Row> rows;
};

/// One evaluation outcome of the ablation grid. `attribute` identifies the grid cell;
/// `condition` is "selective" (top-n attribute neurons) or "random" (matched control).
struct AblationRecord {
    std::string task;
    std::string attribute;
    std::string condition;
    std::size_t n = 0;
    std::size_t seed = 0;
    double accuracy = 0.0;

    /// The selector as reported: the attribute name, or "random" for controls.
    std::string selector() const { return condition == "random" ? std::string("random") : attribute; }
    bool operator==(const AblationRecord&) const = default;
};

}  // namespace nrsa
