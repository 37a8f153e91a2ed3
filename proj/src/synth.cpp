#include "nrsa/synth.hpp"

#include <algorithm>
#include <cmath>

#include "nrsa/error.hpp"
#include "nrsa/rng.hpp"
#include "nrsa/stats.hpp"

namespace nrsa::synth {

RatingTable random_ratings(std::size_t concepts, std::size_t attributes, std::uint64_t seed) {
    Rng rng(seed);
    RatingTable r;
    for (std::size_t c = 0; c < concepts; ++c) r.concepts.push_back("c" + std::to_string(c));
    for (std::size_t a = 0; a < attributes; ++a) r.attributes.push_back("a" + std::to_string(a));
    r.scores.resize(static_cast<Eigen::Index>(concepts), static_cast<Eigen::Index>(attributes));
    for (Eigen::Index a = 0; a < r.scores.cols(); ++a)
        for (Eigen::Index c = 0; c < r.scores.rows(); ++c) r.scores(c, a) = rng.normal();
    return r;
}

PlantedTensor planted_tensor(const RatingTable& ratings, std::size_t neurons, std::size_t per_attribute, std::size_t seeds,
                             double relative_noise, std::uint64_t seed) {
    const std::size_t n_attr = ratings.attributes.size();
    const std::size_t k = ratings.concepts.size();
    if (per_attribute * n_attr > neurons) throw Error(ErrorCode::InvalidSpec, "more planted neurons than neurons");
    if (seeds == 0) throw Error(ErrorCode::InvalidSpec, "at least one seed is required");
    Rng rng(seed);
    PlantedTensor out{ActivationTensor(seeds, ratings.concepts, neurons), std::vector<std::vector<std::size_t>>(n_attr)};
    const auto slots = rng.sample_without_replacement(neurons, per_attribute * n_attr);
    std::vector<long> owner(neurons, -1);
    for (std::size_t i = 0; i < slots.size(); ++i) {
        owner[slots[i]] = static_cast<long>(i / per_attribute);
        out.planted[i / per_attribute].push_back(slots[i]);
    }
    for (std::size_t n = 0; n < neurons; ++n) {
        std::vector<double> target(k);
        if (owner[n] >= 0) {
            const auto col = ratings.column(static_cast<std::size_t>(owner[n]));
            const double sd = std::sqrt(stats::sample_variance(col));
            for (std::size_t c = 0; c < k; ++c) target[c] = col[c] + relative_noise * sd * rng.normal();
        } else {
            for (auto& v : target) v = rng.normal();
        }
        // Per-seed jitter that cancels in the seed mean.
        for (std::size_t c = 0; c < k; ++c) {
            double sum = 0.0;
            for (std::size_t s = 0; s < seeds; ++s) {
                const double j = seeds > 1 ? 0.5 * rng.normal() : 0.0;
                out.tensor.at(s, c, n) = j;
                sum += j;
            }
            const double shift = target[c] - sum / static_cast<double>(seeds);
            for (std::size_t s = 0; s < seeds; ++s) out.tensor.at(s, c, n) += shift;
        }
    }
    return out;
}

}  // namespace nrsa::synth

namespace nrsa::synth {

void SynthSpec::validate() const {
    auto bad = [](const std::string& why) { throw Error(ErrorCode::InvalidSpec, why); };
    if (concepts < 4) bad("at least 4 concepts are required");
    if (attributes < 2) bad("at least 2 attributes are required");
    if (samples_per_task < 10) bad("samples_per_task must be at least 10");
    if (seq_len == 0 || cues_per_sample == 0 || cues_per_sample > seq_len) bad("cues_per_sample must lie in [1, seq_len]");
    if (pool_size == 0) bad("pool_size must be positive");
    if (filler_tokens == 0 && cues_per_sample < seq_len) bad("filler tokens are needed when cues do not fill the text");
    if (!(overlap_floor >= 0.0) || !std::isfinite(overlap_floor)) bad("overlap_floor must be non-negative");
    if (!(noise >= 0.0 && noise <= 1.0)) bad("noise must lie in [0, 1]");
}

int pool_first_token(const SynthSpec& spec, std::size_t attribute, bool positive) {
    return toylm::token::kFirstContent + static_cast<int>((2 * attribute + (positive ? 0 : 1)) * spec.pool_size);
}

Eigen::VectorXd pool_weights(const SynthSpec& spec, const Eigen::VectorXd& z) {
    Eigen::VectorXd w(2 * z.size());
    for (Eigen::Index a = 0; a < z.size(); ++a) {
        w[2 * a] = spec.overlap_floor + std::max(0.0, z[a]);
        w[2 * a + 1] = spec.overlap_floor + std::max(0.0, -z[a]);
    }
    const double total = w.sum();
    if (!(total > 0.0)) throw Error(ErrorCode::InvalidSpec, "a concept has no cue weight; raise overlap_floor");
    return w / total;
}

double pool_overlap(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return a.cwiseMin(b).sum(); }

namespace {

std::size_t draw(Rng& rng, const Eigen::VectorXd& w) {
    double u = rng.uniform() * w.sum();
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        u -= w[i];
        if (u < 0.0) return static_cast<std::size_t>(i);
    }
    return static_cast<std::size_t>(w.size() - 1);
}

std::vector<int> make_text(const SynthSpec& spec, const Eigen::VectorXd& weights, Rng& rng) {
    const int filler0 = pool_first_token(spec, spec.attributes, true);
    const std::size_t pools = 2 * spec.attributes;
    std::vector<int> text;
    for (std::size_t i = 0; i < spec.cues_per_sample; ++i) {
        const std::size_t pool = rng.uniform() < spec.noise ? rng.below(pools) : draw(rng, weights);
        text.push_back(toylm::token::kFirstContent + static_cast<int>(pool * spec.pool_size + rng.below(spec.pool_size)));
    }
    while (text.size() < spec.seq_len) text.push_back(filler0 + static_cast<int>(rng.below(spec.filler_tokens)));
    rng.shuffle(text);
    return text;
}

}  // namespace

SynthWorld gen_synthetic(const SynthSpec& spec) {
    spec.validate();
    SynthWorld world;
    world.ratings = random_ratings(spec.concepts, spec.attributes, derive_seed(spec.seed, {0x2a7}));
    const auto k = static_cast<Eigen::Index>(spec.concepts);
    world.pool_weights.resize(k, static_cast<Eigen::Index>(2 * spec.attributes));
    for (Eigen::Index c = 0; c < k; ++c) world.pool_weights.row(c) = pool_weights(spec, world.ratings.scores.row(c).transpose()).transpose();

    for (std::size_t c = 0; c < spec.concepts; ++c) {
        Rng rng(derive_seed(spec.seed, {0x7a5c, c}));
        toylm::Dataset all;
        for (std::size_t i = 0; i < spec.samples_per_task; ++i) {
            const bool yes = i % 2 == 0;
            std::size_t source = c;
            if (!yes) {
                source = rng.below(spec.concepts - 1);
                if (source >= c) ++source;
            }
            const Eigen::VectorXd w = world.pool_weights.row(static_cast<Eigen::Index>(source)).transpose();
            all.push_back({make_text(spec, w, rng), yes});
        }
        rng.shuffle(all);
        const std::size_t n_train = (spec.samples_per_task * 8 + 5) / 10;
        const std::size_t n_dev = (spec.samples_per_task + 5) / 10;
        Task task;
        task.concept_name = world.ratings.concepts[c];
        task.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
        task.dev.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train), all.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev));
        task.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev), all.end());
        world.tasks.push_back(std::move(task));
    }
    return world;
}

std::vector<SimilarityJudgment> gen_similarity(const RatingTable& z, const std::vector<double>& attribute_weights,
                                               std::size_t participants, std::size_t missing_per_participant, double noise,
                                               std::uint64_t seed) {
    const std::size_t k = z.concepts.size();
    if (attribute_weights.size() != z.attributes.size()) throw Error(ErrorCode::LengthMismatch, "one weight per attribute is required");
    // Weighted distances, scaled so the largest maps to similarity 1.
    Eigen::MatrixXd dist = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < i; ++j) {
            double s = 0.0;
            for (std::size_t a = 0; a < attribute_weights.size(); ++a) {
                const double diff = z.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) -
                                    z.scores(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(a));
                s += attribute_weights[a] * diff * diff;
            }
            dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::sqrt(s);
        }
    const double max_d = dist.maxCoeff();
    if (!(max_d > 0.0)) throw Error(ErrorCode::DegenerateInput, "all concepts coincide under the attribute weights");
    const std::size_t pairs = k * (k - 1) / 2;
    if (missing_per_participant >= pairs) throw Error(ErrorCode::InvalidSpec, "too many missing pairs per participant");

    std::vector<SimilarityJudgment> rows;
    for (std::size_t p = 0; p < participants; ++p) {
        Rng rng(derive_seed(seed, {0x51, p}));
        const auto missing = rng.sample_without_replacement(pairs, missing_per_participant);
        std::vector<bool> blank(pairs, false);
        for (auto m : missing) blank[m] = true;
        std::size_t h = 0;
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = i + 1; j < k; ++j, ++h) {
                const double sim = 9.0 - 8.0 * dist(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) / max_d + noise * rng.normal();
                const double likert = std::clamp(std::round(sim), 1.0, 9.0);
                SimilarityJudgment row{"p" + std::to_string(p), z.concepts[i], z.concepts[j], likert};
                if (blank[h]) row.similarity.reset();
                rows.push_back(std::move(row));
            }
    }
    return rows;
}

}  // namespace nrsa::synth
