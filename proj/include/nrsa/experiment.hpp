#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nrsa/rsa.hpp"
#include "nrsa/stats.hpp"
#include "nrsa/synth.hpp"
#include "nrsa/toylm.hpp"
#include "nrsa/types.hpp"

namespace nrsa::experiment {

// ---------------------------------------------------------------------------
// Pipeline: tasks -> prompts -> activations -> searchlight -> rankings

/// Attribute knowledge wired into a freshly initialised encoder. A random base knows
/// nothing about the synthetic attributes, so prompts trained on it leave no attribute
/// trace in the FFN. The wiring stands in for pretraining:
///  - cue tokens of attribute a sit at +-lexicon_strength * init_std along a unit direction u_a;
///  - the first attention layer attends uniformly and copies the mean input (value gain copy_gain);
///  - per attribute, 4 * copies first-layer neurons read s * u_a + g * w_a (s, g = +-1), where
///    w_a is a gate direction the prompt can drive, and write s * g * evidence_gain along a
///    shared evidence direction;
///  - the verbalizer rows of "yes" / "no" are +- readout_gain along that evidence direction.
/// All directions are orthonormal. Every other weight keeps its random initialisation.
struct BaseOptions {
    bool wire = true;
    double position_scale = 0.1;  // positional embeddings are shrunk so they do not swamp the cues
    double lexicon_strength = 10.0;
    double copy_gain = 3.0;
    double detector_gain = 1.0;
    double detector_threshold = 1.0;
    double evidence_gain = 3.0;
    double readout_gain = 1.0;
    std::size_t copies = 4;
};

struct PipelineOptions {
    std::size_t seeds = 4;
    BaseOptions base;
    double q = 0.01;
    rsa::SigMethod method = rsa::SigMethod::TauNormal;
    toylm::TrainHyper hyper;
    /// Ranking depth kept per attribute; the ablation grid reads prefixes of it.
    std::size_t ranking_depth = 256;
    std::uint64_t master_seed = 1;
    int jobs = 1;
};

struct PipelineResult {
    synth::SynthWorld world;
    toylm::ModelParams model;
    std::vector<std::vector<toylm::PromptState>> prompts;  // [task][seed]
    ActivationTensor tensor;
    rsa::TauMatrix taus;
    std::vector<rsa::NeuronRanking> rankings;  // one per attribute, in attribute order
};

toylm::ModelParams build_base_model(const synth::SynthSpec& spec, const toylm::ModelConfig& cfg, std::uint64_t seed,
                                    const BaseOptions& base = {});

/// Global indices of the wired neurons, one list per attribute (empty lists when unwired).
std::vector<std::vector<std::size_t>> wired_neurons(const synth::SynthSpec& spec, const BaseOptions& base);

/// Prompt seed for (task, seed) under a master seed.
std::uint64_t prompt_seed(std::uint64_t master, std::size_t task, std::size_t seed);

/// Trains one prompt per (task, seed), extracts activations, runs the searchlight
/// against the ground-truth ratings and ranks neurons per attribute.
PipelineResult run_pipeline(const synth::SynthSpec& spec, const toylm::ModelConfig& cfg, const PipelineOptions& opt);

/// Extraction and searchlight only, for prompts trained elsewhere.
ActivationTensor extract_tensor(const toylm::ModelParams& model, const std::vector<std::vector<toylm::PromptState>>& prompts,
                                const std::vector<std::string>& concepts, int jobs = 1);

// ---------------------------------------------------------------------------
// Ablation grid

struct GridOptions {
    std::vector<std::size_t> n_levels{32, 64, 128, 192, 256};
    std::uint64_t master_seed = 1;
    int jobs = 1;
};

/// Seed of the random control mask for one grid cell.
std::uint64_t control_seed(std::uint64_t master, const std::string& task, const std::string& attribute, std::size_t n,
                           std::size_t seed);

/// Uniform random n-subset of [0, total) drawn from `control_seed`.
std::vector<std::size_t> control_mask(std::uint64_t seed, std::size_t n, std::size_t total);

/// For every (attribute, task, seed, n): accuracy on the task's test split with the top-n
/// neurons of the attribute ablated, and with a fresh random n-mask. Records come out
/// attribute-major, selective before random. Throws NTooLarge when an n exceeds the
/// ranking depth or the neuron count.
std::vector<AblationRecord> run_ablation_grid(const toylm::ModelParams& model, const std::vector<rsa::NeuronRanking>& rankings,
                                              const std::vector<synth::Task>& tasks,
                                              const std::vector<std::vector<toylm::PromptState>>& prompts,
                                              const GridOptions& opt);

// ---------------------------------------------------------------------------
// Drop analysis

/// Seed-averaged drops (random minus selective) keyed by (task, attribute, n).
struct DropTable {
    std::vector<std::string> tasks;
    std::vector<std::string> attributes;
    std::vector<std::size_t> n_levels;
    std::size_t seeds = 0;
    /// drops[n index](task, attribute)
    std::vector<Eigen::MatrixXd> drops;
};

/// Validates grid completeness (IncompleteGrid) and averages over seeds.
DropTable drop_table(const std::vector<AblationRecord>& records);

struct DropStat {
    std::string scope;  // attribute, task, or "all"
    std::size_t n = 0;
    std::size_t units = 0;
    double mean_drop = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    double t = 0.0;
    double pvalue = 1.0;
    bool significant = false;
};

struct DropSummary {
    std::vector<DropStat> by_attribute;  // units: tasks
    std::vector<DropStat> by_task;       // units: attributes
    std::vector<DropStat> overall;       // units: (task, attribute) cells
};

/// One-tailed paired t-tests of the seed-averaged drops with 95% confidence intervals.
/// BY-FDR runs across attributes x n, across tasks x n, and across n for the pooled rows.
DropSummary summarize_drops(const std::vector<AblationRecord>& records, double q = 0.05);

/// Mean, CI and one-tailed t-test of one sample of drops. Zero-variance samples get
/// t = 0, p = 1 when the mean is 0 and t = +-inf with a boundary p otherwise.
DropStat drop_stat(const std::string& scope, std::size_t n, std::span<const double> drops);

struct DipRow {
    std::size_t n = 0;
    std::string attribute;
    double dip = 0.0;
    double pvalue = 1.0;
    std::size_t tasks = 0;
};

struct HeterogeneityOptions {
    std::size_t boots = 10000;
    std::uint64_t seed = 1;
    int jobs = 1;
};

struct Heterogeneity {
    std::vector<DipRow> rows;
    /// Non-empty when the task count is small enough that the dip has little power.
    std::string warning;
};

/// Hartigan's dip over the task-level mean drops of every (attribute, n).
/// Throws TooFewTasks below 4 tasks.
Heterogeneity heterogeneity(const DropTable& table, const HeterogeneityOptions& opt = {});

inline constexpr std::size_t kMinDipTasks = 4;
inline constexpr std::size_t kDipWarnBelow = 8;

struct TaskCorrelation {
    std::string task;
    /// False when the task's drops are all equal at this level; r is undefined and the
    /// task is left out of the Fisher average.
    bool defined = true;
    double r = 0.0;
    double t = 0.0;
    double pvalue = 1.0;
};

struct Contribution {
    std::size_t n = 0;
    std::vector<TaskCorrelation> per_task;
    stats::FisherAverage overall;
};

/// Correlations of exactly +-1 enter the Fisher average at this magnitude.
inline constexpr double kMaxFisherR = 1.0 - 1e-12;

/// Per task: Pearson r between attribute drops at level `n` and attribute weights;
/// then the Fisher-z average across the tasks where r is defined, with a one-tailed test.
/// Throws DegenerateInput when the weights are constant or fewer than two tasks have
/// varying drops.
Contribution contribution_vs_weight(const DropTable& table, std::size_t n, const std::vector<rsa::AttributeWeight>& weights);

/// Pearson r between the kappa and mean-accuracy columns.
double table_s1_check(const TableS1Fixture& fixture);

}  // namespace nrsa::experiment
