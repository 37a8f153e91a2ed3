#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace nrsa::toylm {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

namespace token {
inline constexpr int kPad = 0;
inline constexpr int kMask = 1;
inline constexpr int kBos = 2;
inline constexpr int kYes = 3;
inline constexpr int kNo = 4;
inline constexpr int kFirstContent = 5;
}  // namespace token

struct ModelConfig {
    std::size_t layers = 4;
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t d_ff = 256;
    std::size_t vocab = 128;
    std::size_t max_len = 32;
    std::size_t prompt_len = 10;
    double init_std = 0.02;
    /// When positive, projection matrices use std weight_gain / sqrt(fan_in) instead of init_std.
    double weight_gain = 0.0;

    std::size_t neurons() const { return layers * d_ff; }
    void validate() const;  // throws InvalidConfig
    bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
    Matrix wq, wk, wv, wo;  // d x d, applied as x * W
    Vector bq, bk, bv, bo;
    Vector ln1_gain, ln1_bias;
    Matrix w1;  // d_ff x d, v = x * w1^T + b1
    Vector b1;
    Matrix w2;  // d_ff x d, out = gelu(v) * w2 + b2
    Vector b2;
    Vector ln2_gain, ln2_bias;

    bool operator==(const LayerParams&) const = default;
};

struct ModelParams {
    ModelConfig cfg;
    Matrix token_emb;     // vocab x d; the yes/no rows double as the verbalizer
    Matrix position_emb;  // max_len x d
    Vector emb_ln_gain, emb_ln_bias;
    std::vector<LayerParams> layers;
    Matrix head_w;  // d x d
    Vector head_b;
    Vector head_ln_gain, head_ln_bias;
    Vector out_bias;  // vocab

    /// FNV-1a over every parameter's bytes.
    std::uint64_t checksum() const;
    bool operator==(const ModelParams&) const = default;
};

/// Post-LN encoder, weights N(0, init_std), biases 0, layer-norm gains 1.
ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed);

struct TrainHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t epochs = 20;
    std::size_t batch = 32;

    bool operator==(const TrainHyper&) const = default;
};

struct PromptState {
    Matrix embeddings;  // prompt_len x d
    std::string task;
    std::uint64_t seed = 0;
    TrainHyper hyper;

    bool operator==(const PromptState&) const = default;
};

/// Global neuron indices in [0, layers * d_ff); layer-major.
class AblationMask {
public:
    AblationMask() = default;
    /// Throws IndexOutOfRange / DuplicateName for invalid index sets.
    AblationMask(std::vector<std::size_t> indices, std::size_t total_neurons);

    const std::vector<std::size_t>& indices() const { return indices_; }
    bool empty() const { return indices_.empty(); }
    /// Per-layer local indices.
    std::vector<std::vector<std::size_t>> by_layer(std::size_t layers, std::size_t d_ff) const;

private:
    std::vector<std::size_t> indices_;
};

struct Example {
    std::vector<int> tokens;
    bool label = false;  // true = "yes"

    bool operator==(const Example&) const = default;
};
using Dataset = std::vector<Example>;

struct Logits {
    double yes = 0.0;
    double no = 0.0;
    bool predicts_yes() const { return yes > no; }  // ties go to "no"
};

/// Called after each layer's FFN output is formed; `v` is the (masked) pre-activation
/// and `out` the FFN output, both position-major.
using FfnHook = std::function<void(std::size_t layer, const Matrix& v, Matrix& out)>;

struct ForwardResult {
    Logits logits;
    Matrix activations;  // positions x neurons, layer-major columns; empty unless captured
};

double gelu(double x);
double gelu_grad(double x);

/// Input layout: [MASK], prompt rows, <s>, tokens.
ForwardResult forward_mlm(const ModelParams& params, const PromptState& prompt, std::span<const int> tokens,
                          const AblationMask& mask = {}, bool capture = false, const FfnHook& hook = {});

/// Verbalizer logits for many sequences at once.
std::vector<Logits> forward_batch(const ModelParams& params, const Matrix& prompt, std::span<const Example> batch,
                                  const AblationMask& mask = {});

/// Mean two-way cross-entropy over `batch` and its gradient with respect to the prompt rows.
struct LossGrad {
    double loss = 0.0;
    Matrix grad;
};
LossGrad loss_and_grad(const ModelParams& params, const Matrix& prompt, std::span<const Example> batch);
double loss_only(const ModelParams& params, const Matrix& prompt, std::span<const Example> batch);

/// Adam on the prompt only; the base model is read-only.
PromptState train_prompt(const ModelParams& params, const Dataset& train, std::uint64_t seed, const TrainHyper& hyper = {},
                         const std::string& task = {});

double evaluate(const ModelParams& params, const PromptState& prompt, const Dataset& test, const AblationMask& mask = {});

/// Forward [MASK], prompt, <s> and average each neuron's pre-activation over those positions.
std::vector<double> extract_activations(const ModelParams& params, const PromptState& prompt);

// ---------------------------------------------------------------------------
// Persistence

void save_model(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_model(const std::filesystem::path& path);
void save_prompt(const PromptState& prompt, const std::filesystem::path& path);
PromptState load_prompt(const std::filesystem::path& path);

/// CSV `tokens,label`: space-separated ids and yes/no.
void write_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace nrsa::toylm
