#pragma once

#include <filesystem>
#include <string>

#include "nrsa/config.hpp"

namespace nrsa::commands {

/// File layout of one run directory.
struct Layout {
    std::filesystem::path root;

    std::filesystem::path config() const { return root / "config.json"; }
    std::filesystem::path ratings() const { return root / "ratings.csv"; }
    std::filesystem::path similarity() const { return root / "similarity.csv"; }
    std::filesystem::path task_split(const std::string& task, const std::string& split) const {
        return root / "tasks" / task / (split + ".csv");
    }
    std::filesystem::path model() const { return root / "base.modl"; }
    std::filesystem::path prompt(const std::string& task, std::size_t seed) const {
        return root / "prompts" / task / ("seed" + std::to_string(seed) + ".prmt");
    }
    std::filesystem::path activations() const { return root / "activations.bin"; }
    std::filesystem::path taus() const { return root / "taus.csv"; }
    std::filesystem::path ranking(const std::string& attribute) const { return root / "rankings" / (attribute + ".csv"); }
    std::filesystem::path ablation() const { return root / "ablation.jsonl"; }
    std::filesystem::path weights() const { return root / "weights.csv"; }
    std::filesystem::path reliability() const { return root / "reliability.csv"; }
    std::filesystem::path factors() const { return root / "factors.csv"; }
    std::filesystem::path drops() const { return root / "drops.csv"; }
    std::filesystem::path dip_table() const { return root / "dip_table.csv"; }
    std::filesystem::path correlation() const { return root / "correlation.csv"; }
    std::filesystem::path chart() const { return root / "drops.svg"; }
};

// Each step reads and writes only files under cfg.out.
void gen(const config::RunConfig& cfg);      // config.json, ratings, tasks, similarity judgments
void train(const config::RunConfig& cfg);    // base model and one prompt per (task, seed)
void extract(const config::RunConfig& cfg);  // activation tensor
void rsa(const config::RunConfig& cfg);      // tau matrix
void select(const config::RunConfig& cfg);   // per-attribute rankings
void ablate(const config::RunConfig& cfg);   // ablation records
void stats(const config::RunConfig& cfg);    // attribute weights, reliabilities, rating factors
void report(const config::RunConfig& cfg, bool svg);
void run_all(const config::RunConfig& cfg, bool svg = false);

/// Pearson r of the kappa and accuracy columns of a kappa / accuracy fixture.
double check_s1(const std::filesystem::path& fixture);

/// Command-line entry point: 0 success, 1 domain error, 2 usage error.
int main(int argc, char** argv);

}  // namespace nrsa::commands
