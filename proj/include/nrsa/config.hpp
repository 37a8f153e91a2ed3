#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "nrsa/experiment.hpp"
#include "nrsa/rsa.hpp"
#include "nrsa/synth.hpp"
#include "nrsa/toylm.hpp"

namespace nrsa::config {

/// Synthetic similarity-judgment study used when no real judgments are supplied.
struct SimilarityStudy {
    std::size_t participants = 20;
    std::size_t missing_per_participant = 2;
    double noise = 1.0;
    std::size_t boots = 1000;
    double q = 0.05;
};

/// Everything a run depends on. Serialized as one JSON document; the model vocabulary
/// is derived from the SynthSpec and never stored.
struct RunConfig {
    std::uint64_t seed = 1;
    std::string out = "out";
    int jobs = 1;
    synth::SynthSpec synth;
    toylm::ModelConfig model;
    toylm::TrainHyper train;
    experiment::BaseOptions base;
    std::size_t seeds = 4;
    double q = 0.01;        // searchlight FDR level
    double drop_q = 0.05;   // FDR level of the drop tests
    rsa::SigMethod sig_method = rsa::SigMethod::TauNormal;
    std::vector<std::size_t> n_levels{32, 64, 128, 192, 256};
    std::size_t ranking_depth = 256;
    std::size_t dip_boots = 10000;
    /// Level whose drops are correlated with attribute weights; 0 picks the middle level.
    std::size_t contribution_n = 0;
    SimilarityStudy similarity;

    /// Middle entry of the sorted n levels unless contribution_n is set.
    std::size_t focus_n() const;
    void validate() const;  // throws InvalidSpec
};

std::string to_json(const RunConfig& cfg);

/// Strict parse: unknown keys, wrong types and invalid values throw InvalidSpec.
/// Missing keys keep their defaults.
RunConfig from_json(const std::string& text);

RunConfig load(const std::filesystem::path& path);
void save(const RunConfig& cfg, const std::filesystem::path& path);

/// Sets one field by dotted path ("synth.concepts", "train.epochs", "n_levels").
/// The value is read as JSON when it parses, else as a plain string.
void set_path(RunConfig& cfg, const std::string& dotted, const std::string& value);

/// Applies several overrides in order and validates once at the end, so settings that
/// only make sense together (say a smaller model and smaller n levels) can be given at once.
void set_paths(RunConfig& cfg, const std::vector<std::pair<std::string, std::string>>& overrides);

}  // namespace nrsa::config
