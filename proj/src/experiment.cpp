#include "nrsa/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <tuple>

#include <Eigen/QR>

#include "nrsa/error.hpp"
#include "nrsa/parallel.hpp"
#include "nrsa/rng.hpp"

namespace nrsa::experiment {

namespace {

std::uint64_t text_key(const std::string& s) {
    // FNV-1a; stable across platforms, unlike std::hash.
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

std::uint64_t prompt_seed(std::uint64_t master, std::size_t task, std::size_t seed) { return derive_seed(master, {0x9a0b7, task, seed}); }

std::uint64_t control_seed(std::uint64_t master, const std::string& task, const std::string& attribute, std::size_t n, std::size_t seed) {
    return derive_seed(master, {0xc0a7, text_key(task), text_key(attribute), n, seed});
}

std::vector<std::size_t> control_mask(std::uint64_t seed, std::size_t n, std::size_t total) {
    Rng rng(seed);
    auto idx = rng.sample_without_replacement(total, n);
    std::sort(idx.begin(), idx.end());
    return idx;
}

// ---------------------------------------------------------------------------
// Base model

std::vector<std::vector<std::size_t>> wired_neurons(const synth::SynthSpec& spec, const BaseOptions& base) {
    std::vector<std::vector<std::size_t>> out(spec.attributes);
    if (!base.wire) return out;
    const std::size_t per = 4 * base.copies;
    for (std::size_t a = 0; a < spec.attributes; ++a)
        for (std::size_t j = 0; j < per; ++j) out[a].push_back(a * per + j);
    return out;
}

toylm::ModelParams build_base_model(const synth::SynthSpec& spec, const toylm::ModelConfig& cfg, std::uint64_t seed,
                                    const BaseOptions& base) {
    spec.validate();
    cfg.validate();
    if (cfg.vocab < spec.vocab())
        throw Error(ErrorCode::InvalidSpec, "model vocabulary " + std::to_string(cfg.vocab) + " is smaller than the task vocabulary " +
                                                std::to_string(spec.vocab()));
    auto p = toylm::init_model(cfg, seed);
    p.position_emb *= base.position_scale;
    if (!base.wire) return p;

    const auto d = static_cast<Eigen::Index>(cfg.d_model);
    const auto attrs = static_cast<Eigen::Index>(spec.attributes);
    if (2 * attrs + 1 > d) throw Error(ErrorCode::InvalidSpec, "d_model is too small for two directions per attribute plus one");
    if (4 * base.copies * spec.attributes > cfg.d_ff) throw Error(ErrorCode::InvalidSpec, "d_ff is too small for the wired neurons");
    if (base.copies == 0) throw Error(ErrorCode::InvalidSpec, "copies must be positive");

    // Orthonormal columns: cue directions, gate directions, evidence direction.
    Rng rng(derive_seed(seed, {0xb1}));
    Eigen::MatrixXd raw(d, 2 * attrs + 1);
    for (Eigen::Index i = 0; i < raw.size(); ++i) raw.data()[i] = rng.normal();
    const Eigen::MatrixXd basis = Eigen::HouseholderQR<Eigen::MatrixXd>(raw).householderQ() * Eigen::MatrixXd::Identity(d, 2 * attrs + 1);
    const Eigen::RowVectorXd evidence = basis.col(2 * attrs).transpose();

    for (Eigen::Index a = 0; a < attrs; ++a) {
        const Eigen::RowVectorXd cue = basis.col(a).transpose();
        for (bool positive : {true, false}) {
            const int first = synth::pool_first_token(spec, static_cast<std::size_t>(a), positive);
            for (std::size_t j = 0; j < spec.pool_size; ++j)
                p.token_emb.row(first + static_cast<int>(j)) += (positive ? 1.0 : -1.0) * base.lexicon_strength * cfg.init_std * cue;
        }
    }

    auto& first = p.layers.front();
    first.wq.setZero();
    first.wk.setZero();
    first.wv = base.copy_gain * toylm::Matrix::Identity(d, d);
    first.wo = toylm::Matrix::Identity(d, d);
    const auto wired = wired_neurons(spec, base);
    for (Eigen::Index a = 0; a < attrs; ++a) {
        const Eigen::RowVectorXd cue = basis.col(a).transpose();
        const Eigen::RowVectorXd gate = basis.col(attrs + a).transpose();
        std::size_t j = 0;
        for (double s : {1.0, -1.0})
            for (double g : {1.0, -1.0})
                for (std::size_t r = 0; r < base.copies; ++r) {
                    const auto n = static_cast<Eigen::Index>(wired[static_cast<std::size_t>(a)][j++]);
                    first.w1.row(n) = base.detector_gain * (s * cue + g * gate);
                    first.b1[n] = -base.detector_threshold;
                    first.w2.row(n) = base.evidence_gain * s * g * evidence;
                }
    }
    p.head_w = toylm::Matrix::Identity(d, d);
    p.token_emb.row(toylm::token::kYes) = base.readout_gain * evidence;
    p.token_emb.row(toylm::token::kNo) = -base.readout_gain * evidence;
    return p;
}

// ---------------------------------------------------------------------------
// Pipeline

ActivationTensor extract_tensor(const toylm::ModelParams& model, const std::vector<std::vector<toylm::PromptState>>& prompts,
                                const std::vector<std::string>& concepts, int jobs) {
    if (prompts.size() != concepts.size()) throw Error(ErrorCode::ConceptMismatch, "one prompt list per concept is required");
    const std::size_t seeds = prompts.empty() ? 0 : prompts.front().size();
    for (const auto& p : prompts)
        if (p.size() != seeds) throw Error(ErrorCode::IncompleteGrid, "every concept needs the same number of seeds");
    ActivationTensor t(seeds, concepts, model.cfg.neurons());
    parallel_for(concepts.size() * seeds, jobs, [&](std::size_t i) {
        const std::size_t c = i / seeds, s = i % seeds;
        const auto v = toylm::extract_activations(model, prompts[c][s]);
        std::copy(v.begin(), v.end(), t.values.begin() + static_cast<std::ptrdiff_t>(t.offset(s, c, 0)));
    });
    t.validate();
    return t;
}

PipelineResult run_pipeline(const synth::SynthSpec& spec, const toylm::ModelConfig& cfg, const PipelineOptions& opt) {
    if (opt.seeds == 0) throw Error(ErrorCode::InvalidSpec, "at least one prompt seed is required");
    PipelineResult out;
    out.world = synth::gen_synthetic(spec);
    out.model = build_base_model(spec, cfg, derive_seed(opt.master_seed, {0xba5e}), opt.base);
    const std::size_t k = out.world.tasks.size();
    out.prompts.assign(k, std::vector<toylm::PromptState>(opt.seeds));
    parallel_for(k * opt.seeds, opt.jobs, [&](std::size_t i) {
        const std::size_t c = i / opt.seeds, s = i % opt.seeds;
        const auto& task = out.world.tasks[c];
        out.prompts[c][s] = toylm::train_prompt(out.model, task.train, prompt_seed(opt.master_seed, c, s), opt.hyper, task.concept_name);
    });
    out.tensor = extract_tensor(out.model, out.prompts, out.world.ratings.concepts, opt.jobs);
    out.taus = rsa::searchlight(out.tensor, out.world.ratings, {opt.q, opt.method, opt.jobs});
    const std::size_t depth = std::min(opt.ranking_depth, out.tensor.neurons);
    for (const auto& a : out.world.ratings.attributes) out.rankings.push_back(rsa::rank_neurons(out.taus, a, depth));
    return out;
}

// ---------------------------------------------------------------------------
// Ablation grid

std::vector<AblationRecord> run_ablation_grid(const toylm::ModelParams& model, const std::vector<rsa::NeuronRanking>& rankings,
                                              const std::vector<synth::Task>& tasks,
                                              const std::vector<std::vector<toylm::PromptState>>& prompts, const GridOptions& opt) {
    const std::size_t total = model.cfg.neurons();
    if (prompts.size() != tasks.size()) throw Error(ErrorCode::ConceptMismatch, "one prompt list per task is required");
    const std::size_t seeds = prompts.empty() ? 0 : prompts.front().size();
    for (const auto& p : prompts)
        if (p.size() != seeds) throw Error(ErrorCode::IncompleteGrid, "every task needs the same number of seeds");
    for (auto n : opt.n_levels) {
        if (n == 0) throw Error(ErrorCode::NTooLarge, "n must be at least 1");
        if (n > total) throw Error(ErrorCode::NTooLarge, "n = " + std::to_string(n) + " exceeds the " + std::to_string(total) + " neurons");
        for (const auto& r : rankings)
            if (n > r.neurons.size())
                throw Error(ErrorCode::NTooLarge,
                            "n = " + std::to_string(n) + " exceeds the ranking depth " + std::to_string(r.neurons.size()) + " of " + r.attribute);
    }

    const std::size_t levels = opt.n_levels.size();
    const std::size_t cells = rankings.size() * tasks.size() * seeds * levels;
    std::vector<AblationRecord> records(2 * cells);
    parallel_for(cells, opt.jobs, [&](std::size_t i) {
        const std::size_t li = i % levels;
        const std::size_t s = (i / levels) % seeds;
        const std::size_t t = (i / (levels * seeds)) % tasks.size();
        const std::size_t a = i / (levels * seeds * tasks.size());
        const std::size_t n = opt.n_levels[li];
        const auto& ranking = rankings[a];
        const auto& task = tasks[t];
        const auto& prompt = prompts[t][s];

        const toylm::AblationMask selective(std::vector<std::size_t>(ranking.neurons.begin(), ranking.neurons.begin() + static_cast<std::ptrdiff_t>(n)), total);
        const toylm::AblationMask random(control_mask(control_seed(opt.master_seed, task.concept_name, ranking.attribute, n, s), n, total), total);
        records[2 * i] = {task.concept_name, ranking.attribute, "selective", n, s, toylm::evaluate(model, prompt, task.test, selective)};
        records[2 * i + 1] = {task.concept_name, ranking.attribute, "random", n, s, toylm::evaluate(model, prompt, task.test, random)};
    });
    return records;
}

// ---------------------------------------------------------------------------
// Drops

DropTable drop_table(const std::vector<AblationRecord>& records) {
    if (records.empty()) throw Error(ErrorCode::IncompleteGrid, "no ablation records");
    DropTable table;
    std::set<std::size_t> seed_set, n_set;
    auto note = [](std::vector<std::string>& order, const std::string& name) {
        if (std::find(order.begin(), order.end(), name) == order.end()) order.push_back(name);
    };
    for (const auto& r : records) {
        if (r.condition != "selective" && r.condition != "random")
            throw Error(ErrorCode::IncompleteGrid, "unknown condition '" + r.condition + "'");
        note(table.tasks, r.task);
        note(table.attributes, r.attribute);
        seed_set.insert(r.seed);
        n_set.insert(r.n);
    }
    table.n_levels.assign(n_set.begin(), n_set.end());
    table.seeds = seed_set.size();
    const std::vector<std::size_t> seed_list(seed_set.begin(), seed_set.end());

    // (task, attribute, n, seed) -> {selective, random}
    using Key = std::tuple<std::string, std::string, std::size_t, std::size_t>;
    std::map<Key, std::pair<std::optional<double>, std::optional<double>>> cells;
    for (const auto& r : records) {
        auto& slot = cells[{r.task, r.attribute, r.n, r.seed}];
        auto& side = r.condition == "selective" ? slot.first : slot.second;
        if (side)
            throw Error(ErrorCode::IncompleteGrid, "duplicate " + r.condition + " record for task " + r.task + ", attribute " + r.attribute +
                                                       ", n " + std::to_string(r.n) + ", seed " + std::to_string(r.seed));
        side = r.accuracy;
    }
    const auto n_tasks = static_cast<Eigen::Index>(table.tasks.size());
    const auto n_attr = static_cast<Eigen::Index>(table.attributes.size());
    for (auto n : table.n_levels) {
        Eigen::MatrixXd m(n_tasks, n_attr);
        for (Eigen::Index t = 0; t < n_tasks; ++t)
            for (Eigen::Index a = 0; a < n_attr; ++a) {
                double sum = 0.0;
                for (auto s : seed_list) {
                    const auto it = cells.find({table.tasks[static_cast<std::size_t>(t)], table.attributes[static_cast<std::size_t>(a)], n, s});
                    if (it == cells.end() || !it->second.first || !it->second.second)
                        throw Error(ErrorCode::IncompleteGrid, "missing cell: task " + table.tasks[static_cast<std::size_t>(t)] + ", attribute " +
                                                                   table.attributes[static_cast<std::size_t>(a)] + ", n " + std::to_string(n) +
                                                                   ", seed " + std::to_string(s));
                    sum += *it->second.second - *it->second.first;
                }
                m(t, a) = sum / static_cast<double>(seed_list.size());
            }
        table.drops.push_back(std::move(m));
    }
    return table;
}

DropStat drop_stat(const std::string& scope, std::size_t n, std::span<const double> drops) {
    if (drops.size() < 2) throw Error(ErrorCode::DegenerateInput, "a drop test needs at least 2 units");
    DropStat d;
    d.scope = scope;
    d.n = n;
    d.units = drops.size();
    d.mean_drop = stats::mean(drops);
    const double var = stats::sample_variance(drops);
    if (var == 0.0) {
        d.ci_low = d.ci_high = d.mean_drop;
        if (d.mean_drop == 0.0) {
            d.t = 0.0;
            d.pvalue = 1.0;
        } else {
            d.t = d.mean_drop > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
            d.pvalue = d.mean_drop > 0.0 ? stats::kMinPValue : 1.0;
        }
        return d;
    }
    const auto test = stats::paired_t(drops, stats::Tail::Greater);
    const double df = static_cast<double>(drops.size() - 1);
    const double half = stats::student_t_quantile(0.975, df) * std::sqrt(var / static_cast<double>(drops.size()));
    d.t = test.statistic;
    d.pvalue = test.pvalue;
    d.ci_low = d.mean_drop - half;
    d.ci_high = d.mean_drop + half;
    return d;
}

namespace {

void apply_by(std::vector<DropStat>& rows, double q) {
    if (rows.empty()) return;
    std::vector<double> p;
    for (const auto& r : rows) p.push_back(r.pvalue);
    const auto reject = stats::fdr_by(p, q);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].significant = reject[i];
}

}  // namespace

DropSummary summarize_drops(const std::vector<AblationRecord>& records, double q) {
    const DropTable table = drop_table(records);
    DropSummary out;
    for (std::size_t li = 0; li < table.n_levels.size(); ++li) {
        const auto& m = table.drops[li];
        const std::size_t n = table.n_levels[li];
        for (Eigen::Index a = 0; a < m.cols(); ++a) {
            const Eigen::VectorXd col = m.col(a);
            out.by_attribute.push_back(drop_stat(table.attributes[static_cast<std::size_t>(a)], n, {col.data(), static_cast<std::size_t>(col.size())}));
        }
        for (Eigen::Index t = 0; t < m.rows(); ++t) {
            const Eigen::VectorXd row = m.row(t).transpose();
            out.by_task.push_back(drop_stat(table.tasks[static_cast<std::size_t>(t)], n, {row.data(), static_cast<std::size_t>(row.size())}));
        }
        out.overall.push_back(drop_stat("all", n, {m.data(), static_cast<std::size_t>(m.size())}));
    }
    apply_by(out.by_attribute, q);
    apply_by(out.by_task, q);
    apply_by(out.overall, q);
    return out;
}

// ---------------------------------------------------------------------------
// Heterogeneity

Heterogeneity heterogeneity(const DropTable& table, const HeterogeneityOptions& opt) {
    const std::size_t k = table.tasks.size();
    if (k < kMinDipTasks)
        throw Error(ErrorCode::TooFewTasks, "the dip test needs at least " + std::to_string(kMinDipTasks) + " tasks, got " + std::to_string(k));
    Heterogeneity out;
    if (k < kDipWarnBelow) out.warning = "only " + std::to_string(k) + " tasks; the dip test has little power below " + std::to_string(kDipWarnBelow);
    for (std::size_t li = 0; li < table.n_levels.size(); ++li)
        for (std::size_t a = 0; a < table.attributes.size(); ++a) {
            const Eigen::VectorXd col = table.drops[li].col(static_cast<Eigen::Index>(a));
            const auto dip = stats::hartigan_dip({col.data(), static_cast<std::size_t>(col.size())}, opt.boots,
                                                 derive_seed(opt.seed, {0xd1b, table.n_levels[li], a}), opt.jobs);
            out.rows.push_back({table.n_levels[li], table.attributes[a], dip.dip, dip.pvalue, k});
        }
    return out;
}

// ---------------------------------------------------------------------------
// Contribution vs. human weight

Contribution contribution_vs_weight(const DropTable& table, std::size_t n, const std::vector<rsa::AttributeWeight>& weights) {
    const auto level = std::find(table.n_levels.begin(), table.n_levels.end(), n);
    if (level == table.n_levels.end()) throw Error(ErrorCode::IncompleteGrid, "no drops recorded at n = " + std::to_string(n));
    const auto& m = table.drops[static_cast<std::size_t>(level - table.n_levels.begin())];

    std::vector<double> w(table.attributes.size());
    for (std::size_t a = 0; a < table.attributes.size(); ++a) {
        const auto it = std::find_if(weights.begin(), weights.end(), [&](const auto& x) { return x.attribute == table.attributes[a]; });
        if (it == weights.end()) throw Error(ErrorCode::UnknownAttribute, "no weight for attribute " + table.attributes[a]);
        w[a] = it->mean_tau;
    }
    if (std::all_of(w.begin(), w.end(), [&](double v) { return v == w.front(); }))
        throw Error(ErrorCode::DegenerateInput, "attribute weights are all equal");
    const double df = static_cast<double>(w.size()) - 2.0;
    Contribution out;
    out.n = n;
    std::vector<double> rs;
    for (Eigen::Index t = 0; t < m.rows(); ++t) {
        const Eigen::VectorXd row = m.row(t).transpose();
        TaskCorrelation tc;
        tc.task = table.tasks[static_cast<std::size_t>(t)];
        if ((row.array() == row[0]).all()) {
            tc.defined = false;
            tc.r = tc.t = std::numeric_limits<double>::quiet_NaN();
            tc.pvalue = std::numeric_limits<double>::quiet_NaN();
            out.per_task.push_back(tc);
            continue;
        }
        tc.r = stats::pearson_r({row.data(), static_cast<std::size_t>(row.size())}, w);
        if (std::abs(tc.r) >= 1.0) {
            tc.t = std::copysign(std::numeric_limits<double>::infinity(), tc.r);
            tc.pvalue = tc.r > 0.0 ? stats::kMinPValue : 1.0;
        } else {
            tc.t = tc.r * std::sqrt(df / (1.0 - tc.r * tc.r));
            tc.pvalue = std::max(stats::kMinPValue, stats::student_t_sf(tc.t, df));
        }
        out.per_task.push_back(tc);
        // Perfect correlations are pulled just inside the open interval so the Fisher
        // transform stays finite.
        rs.push_back(std::clamp(tc.r, -kMaxFisherR, kMaxFisherR));
    }
    if (rs.size() < 2)
        throw Error(ErrorCode::DegenerateInput, "only " + std::to_string(rs.size()) + " task(s) have varying drops at n = " + std::to_string(n));
    out.overall = stats::fisher_average(rs);
    return out;
}

double table_s1_check(const TableS1Fixture& fixture) {
    std::vector<double> kappa, acc;
    for (const auto& r : fixture.rows) {
        kappa.push_back(r.kappa);
        acc.push_back(r.acc_mean);
    }
    return stats::pearson_r(kappa, acc);
}

}  // namespace nrsa::experiment
