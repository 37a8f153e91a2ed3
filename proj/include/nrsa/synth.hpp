#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include <string>

#include "nrsa/toylm.hpp"
#include "nrsa/types.hpp"

namespace nrsa::synth {

struct SynthSpec {
    std::size_t concepts = 12;
    std::size_t attributes = 14;
    std::size_t samples_per_task = 160;
    std::size_t seq_len = 6;
    std::size_t cues_per_sample = 3;
    std::size_t pool_size = 3;       // tokens per (attribute, sign) cue pool
    std::size_t filler_tokens = 16;
    double overlap_floor = 0.05;     // pool weight every concept keeps
    double noise = 0.1;              // chance a cue slot holds a random cue token instead
    std::uint64_t seed = 1;

    void validate() const;  // throws InvalidSpec
    /// Specials + cue pools + filler.
    std::size_t vocab() const { return static_cast<std::size_t>(toylm::token::kFirstContent) + 2 * attributes * pool_size + filler_tokens; }
    bool operator==(const SynthSpec&) const = default;
};

struct Task {
    std::string concept_name;
    toylm::Dataset train, dev, test;
};

struct SynthWorld {
    RatingTable ratings;           // concepts x attributes, the latent z
    Eigen::MatrixXd pool_weights;  // concepts x (2 * attributes), rows sum to 1
    std::vector<Task> tasks;
};

/// First token of the cue pool for (attribute, positive side?).
int pool_first_token(const SynthSpec& spec, std::size_t attribute, bool positive);

/// Normalized cue-pool weights for one latent vector.
Eigen::VectorXd pool_weights(const SynthSpec& spec, const Eigen::VectorXd& z);

/// Overlap (sum of elementwise minima) of two concepts' pool distributions.
double pool_overlap(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Draws z, builds per-concept cue distributions and balanced yes/no tasks:
/// "yes" texts carry cues drawn from the task concept, "no" texts cues from another concept.
SynthWorld gen_synthetic(const SynthSpec& spec);

/// Likert similarity judgments (1..9) from a latent-space distance weighted by
/// `attribute_weights`, with per-participant noise and `missing_per_participant` blanks.
std::vector<SimilarityJudgment> gen_similarity(const RatingTable& z, const std::vector<double>& attribute_weights,
                                               std::size_t participants, std::size_t missing_per_participant, double noise,
                                               std::uint64_t seed);

/// Ratings drawn i.i.d. standard normal; concepts c0.., attributes a0...
RatingTable random_ratings(std::size_t concepts, std::size_t attributes, std::uint64_t seed);

struct PlantedTensor {
    ActivationTensor tensor;
    /// planted[a] lists the neurons planted for attribute a.
    std::vector<std::vector<std::size_t>> planted;
};

/// Activation tensor where `per_attribute` neurons per attribute track that attribute's
/// scores after seed averaging, plus Gaussian noise of `relative_noise` times the
/// attribute's standard deviation. Remaining neurons are standard normal noise.
PlantedTensor planted_tensor(const RatingTable& ratings, std::size_t neurons, std::size_t per_attribute, std::size_t seeds,
                             double relative_noise, std::uint64_t seed);

}  // namespace nrsa::synth
