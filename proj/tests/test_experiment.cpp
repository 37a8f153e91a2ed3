#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "doctest.h"
#include "nrsa/config.hpp"
#include "nrsa/dataio.hpp"
#include "nrsa/experiment.hpp"
#include "nrsa/rng.hpp"
#include "nrsa/stats.hpp"
#include "oracles/oracles.hpp"
#include "support.hpp"

using namespace nrsa;
using namespace nrsa::experiment;
using testsupport::check_code;

namespace {

synth::SynthSpec small_spec() {
    synth::SynthSpec s;
    s.concepts = 5;
    s.attributes = 3;
    s.samples_per_task = 40;
    return s;
}

toylm::ModelConfig small_model(const synth::SynthSpec& s) {
    toylm::ModelConfig c;
    c.layers = 2;
    c.d_model = 16;
    c.heads = 2;
    c.d_ff = 64;
    c.prompt_len = 3;
    c.max_len = 12;
    c.vocab = s.vocab();
    return c;
}

PipelineOptions small_options() {
    PipelineOptions o;
    o.seeds = 2;
    o.hyper.epochs = 3;
    o.ranking_depth = 40;
    o.master_seed = 11;
    return o;
}

// Records for a full grid where every drop is produced by `drop(task, attribute, n, seed)`.
template <typename F>
std::vector<AblationRecord> grid_records(std::size_t tasks, std::size_t attrs, std::vector<std::size_t> ns, std::size_t seeds, F drop) {
    std::vector<AblationRecord> out;
    for (std::size_t a = 0; a < attrs; ++a)
        for (std::size_t t = 0; t < tasks; ++t)
            for (std::size_t s = 0; s < seeds; ++s)
                for (auto n : ns) {
                    const std::string task = "t" + std::to_string(t), attr = "a" + std::to_string(a);
                    out.push_back({task, attr, "selective", n, s, 0.8 - drop(t, a, n, s)});
                    out.push_back({task, attr, "random", n, s, 0.8});
                }
    return out;
}

DropTable table_from(const std::vector<Eigen::VectorXd>& task_attr_rows, std::size_t n = 10) {
    DropTable t;
    for (std::size_t i = 0; i < task_attr_rows.size(); ++i) t.tasks.push_back("t" + std::to_string(i));
    for (Eigen::Index a = 0; a < task_attr_rows.front().size(); ++a) t.attributes.push_back("a" + std::to_string(a));
    t.n_levels = {n};
    t.seeds = 1;
    Eigen::MatrixXd m(static_cast<Eigen::Index>(task_attr_rows.size()), task_attr_rows.front().size());
    for (std::size_t i = 0; i < task_attr_rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = task_attr_rows[i].transpose();
    t.drops = {m};
    return t;
}

std::vector<rsa::AttributeWeight> weights_from(const std::vector<double>& w) {
    std::vector<rsa::AttributeWeight> out;
    for (std::size_t a = 0; a < w.size(); ++a) {
        rsa::AttributeWeight x;
        x.attribute = "a" + std::to_string(a);
        x.mean_tau = w[a];
        out.push_back(x);
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Kappa / accuracy fixture

TEST_CASE("the shipped kappa / accuracy fixture correlates at r = 0.797") {
    const auto fixture = dataio::read_table_s1(std::filesystem::path(NRSA_REPO_DATA) / "table_s1.csv");
    CHECK(fixture.rows.size() == 27);
    CHECK(table_s1_check(fixture) == doctest::Approx(0.797).epsilon(0.005 / 0.797));
}

TEST_CASE("fixture edge cases") {
    auto fixture = dataio::read_table_s1(std::filesystem::path(NRSA_REPO_DATA) / "table_s1.csv");
    auto same = fixture;
    for (auto& r : same.rows) r.acc_mean = r.kappa;
    CHECK(table_s1_check(same) == doctest::Approx(1.0).epsilon(1e-12));
    for (auto& r : fixture.rows) r.acc_mean = 90.0;
    check_code([&] { table_s1_check(fixture); }, ErrorCode::DegenerateInput);
}

// ---------------------------------------------------------------------------
// Synthetic world

TEST_CASE("identical latent vectors give identical cue distributions") {
    const auto spec = synth::SynthSpec{};
    Rng rng(3);
    Eigen::VectorXd z(static_cast<Eigen::Index>(spec.attributes));
    for (auto& v : z) v = rng.normal();
    const auto a = synth::pool_weights(spec, z), b = synth::pool_weights(spec, z);
    CHECK(a == b);
    CHECK(synth::pool_overlap(a, b) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("orthogonal latent vectors overlap only through the floor") {
    synth::SynthSpec spec;
    spec.attributes = 4;
    spec.overlap_floor = 0.05;
    Eigen::VectorXd z1 = Eigen::VectorXd::Zero(4), z2 = Eigen::VectorXd::Zero(4);
    z1[0] = 1.0;
    z2[1] = 1.0;
    const double floor_mass = 8 * 0.05 / (8 * 0.05 + 1.0);
    CHECK(synth::pool_overlap(synth::pool_weights(spec, z1), synth::pool_weights(spec, z2)) == doctest::Approx(floor_mass).epsilon(1e-12));
}

TEST_CASE("generated tasks are balanced and split 80/10/10") {
    const auto spec = synth::SynthSpec{};
    const auto world = synth::gen_synthetic(spec);
    CHECK(world.tasks.size() == spec.concepts);
    CHECK(world.ratings.scores.rows() == static_cast<Eigen::Index>(spec.concepts));
    for (const auto& t : world.tasks) {
        CHECK(t.train.size() == spec.samples_per_task * 8 / 10);
        CHECK(t.dev.size() == spec.samples_per_task / 10);
        CHECK(t.test.size() == spec.samples_per_task / 10);
        std::size_t yes = 0, total = 0;
        for (const auto* split : {&t.train, &t.dev, &t.test})
            for (const auto& e : *split) {
                yes += e.label;
                ++total;
                CHECK(e.tokens.size() == spec.seq_len);
            }
        CHECK(std::abs(static_cast<double>(yes) / static_cast<double>(total) - 0.5) <= 0.01);
    }
    CHECK(synth::gen_synthetic(spec).tasks[3].test == world.tasks[3].test);
}

// ---------------------------------------------------------------------------
// Wired base

TEST_CASE("wired base model layout and validation") {
    const auto spec = small_spec();
    const auto cfg = small_model(spec);
    BaseOptions base;
    const auto wired = wired_neurons(spec, base);
    REQUIRE(wired.size() == spec.attributes);
    std::set<std::size_t> all;
    for (const auto& w : wired) {
        CHECK(w.size() == 4 * base.copies);
        all.insert(w.begin(), w.end());
    }
    CHECK(all.size() == 4 * base.copies * spec.attributes);
    CHECK(*all.rbegin() < cfg.d_ff);  // all in the first layer

    const auto p = build_base_model(spec, cfg, 9, base);
    CHECK(p == build_base_model(spec, cfg, 9, base));
    // Copies of one (sign, gate) type share their weights.
    for (const auto& w : wired)
        for (std::size_t j = 0; j < w.size(); j += base.copies)
            for (std::size_t r = 1; r < base.copies; ++r)
                CHECK(p.layers[0].w1.row(static_cast<Eigen::Index>(w[j])) == p.layers[0].w1.row(static_cast<Eigen::Index>(w[j + r])));
    CHECK((p.token_emb.row(toylm::token::kYes) + p.token_emb.row(toylm::token::kNo)).norm() < 1e-15);

    BaseOptions off;
    off.wire = false;
    CHECK(wired_neurons(spec, off)[0].empty());

    auto narrow = cfg;
    narrow.d_ff = 8;
    check_code([&] { build_base_model(spec, narrow, 1); }, ErrorCode::InvalidSpec);
    auto thin = cfg;
    thin.d_model = 6;
    thin.heads = 2;
    check_code([&] { build_base_model(spec, thin, 1); }, ErrorCode::InvalidSpec);
    auto tiny_vocab = cfg;
    tiny_vocab.vocab = 10;
    check_code([&] { build_base_model(spec, tiny_vocab, 1); }, ErrorCode::InvalidSpec);
    BaseOptions none;
    none.copies = 0;
    check_code([&] { build_base_model(spec, cfg, 1, none); }, ErrorCode::InvalidSpec);
}

TEST_CASE("ablating an attribute's wired neurons removes the cue evidence") {
    synth::SynthSpec spec;
    spec.attributes = 2;
    toylm::ModelConfig cfg;
    cfg.vocab = spec.vocab();
    const auto p = build_base_model(spec, cfg, 4);
    const auto wired = wired_neurons(spec, BaseOptions{});
    // A gate pushed along +w_0 turns attribute-0 cues into yes/no evidence.
    toylm::Dataset pos, neg;
    for (int i = 0; i < 20; ++i) {
        pos.push_back({{synth::pool_first_token(spec, 0, true), synth::pool_first_token(spec, 0, true) + 1}, true});
        neg.push_back({{synth::pool_first_token(spec, 0, false), synth::pool_first_token(spec, 0, false) + 1}, false});
    }
    toylm::Dataset both = pos;
    both.insert(both.end(), neg.begin(), neg.end());
    const auto prompt = toylm::train_prompt(p, both, 2);
    const auto plain = toylm::forward_batch(p, prompt.embeddings, both);
    const auto cut = toylm::forward_batch(p, prompt.embeddings, both, toylm::AblationMask(wired[0], cfg.neurons()));
    double spread_plain = 0, spread_cut = 0;
    for (std::size_t i = 0; i < 20; ++i) {
        spread_plain += (plain[i].yes - plain[i].no) - (plain[20 + i].yes - plain[20 + i].no);
        spread_cut += (cut[i].yes - cut[i].no) - (cut[20 + i].yes - cut[20 + i].no);
    }
    CHECK(spread_plain > 0.0);
    CHECK(std::abs(spread_cut) < 0.2 * spread_plain);
    CHECK(toylm::evaluate(p, prompt, both) > toylm::evaluate(p, prompt, both, toylm::AblationMask(wired[0], cfg.neurons())));
}

// ---------------------------------------------------------------------------
// Pipeline

TEST_CASE("pipeline shapes, determinism and concept-order invariance") {
    const auto spec = small_spec();
    const auto cfg = small_model(spec);
    auto opt = small_options();
    const auto a = run_pipeline(spec, cfg, opt);
    CHECK(a.tensor.seeds == opt.seeds);
    CHECK(a.tensor.neurons == cfg.neurons());
    CHECK(a.tensor.concepts == a.world.ratings.concepts);
    CHECK(a.rankings.size() == spec.attributes);
    for (const auto& r : a.rankings) CHECK(r.neurons.size() == opt.ranking_depth);

    const auto b = run_pipeline(spec, cfg, opt);
    CHECK(a.taus.taus == b.taus.taus);
    CHECK(a.tensor == b.tensor);

    opt.jobs = 3;
    CHECK(run_pipeline(spec, cfg, opt).taus.taus == a.taus.taus);

    opt.jobs = 1;
    opt.seeds = 1;
    CHECK(run_pipeline(spec, cfg, opt).tensor.seeds == 1);
    opt.seeds = 0;
    check_code([&] { run_pipeline(spec, cfg, opt); }, ErrorCode::InvalidSpec);

    // Reverse the concept order of the tensor and the ratings together.
    const std::size_t k = spec.concepts;
    std::vector<std::string> rev(a.tensor.concepts.rbegin(), a.tensor.concepts.rend());
    ActivationTensor t(a.tensor.seeds, rev, a.tensor.neurons);
    RatingTable r = a.world.ratings;
    r.concepts = rev;
    for (std::size_t c = 0; c < k; ++c) {
        r.scores.row(static_cast<Eigen::Index>(c)) = a.world.ratings.scores.row(static_cast<Eigen::Index>(k - 1 - c));
        for (std::size_t s = 0; s < t.seeds; ++s)
            for (std::size_t n = 0; n < t.neurons; ++n) t.at(s, c, n) = a.tensor.at(s, k - 1 - c, n);
    }
    const auto permuted = rsa::searchlight(t, r, {});
    CHECK((permuted.taus - a.taus.taus).cwiseAbs().maxCoeff() < 1e-12);
}

// ---------------------------------------------------------------------------
// Ablation grid

TEST_CASE("grid record count, ordering and the full-ablation degenerate case") {
    const auto spec = small_spec();
    const auto cfg = small_model(spec);
    const auto res = run_pipeline(spec, cfg, small_options());
    GridOptions g;
    g.n_levels = {4, 16, cfg.neurons()};
    auto rankings = res.rankings;
    for (auto& r : rankings) {
        // Extend each ranking to every neuron so n = L is allowed.
        std::set<std::size_t> seen(r.neurons.begin(), r.neurons.end());
        for (std::size_t n = 0; n < cfg.neurons(); ++n)
            if (!seen.count(n)) r.neurons.push_back(n);
    }
    const auto records = run_ablation_grid(res.model, rankings, res.world.tasks, res.prompts, g);
    CHECK(records.size() == 2 * spec.attributes * spec.concepts * 2 * 3);
    for (std::size_t i = 0; i < records.size(); i += 2) {
        CHECK(records[i].condition == "selective");
        CHECK(records[i + 1].condition == "random");
        CHECK(records[i].task == records[i + 1].task);
        CHECK(records[i].attribute == records[i + 1].attribute);
        if (records[i].n == cfg.neurons()) CHECK(records[i].accuracy == records[i + 1].accuracy);
    }
    CHECK(records.front().attribute == res.world.ratings.attributes.front());
    CHECK(records.back().attribute == res.world.ratings.attributes.back());

    CHECK(run_ablation_grid(res.model, rankings, res.world.tasks, res.prompts, g) == records);
    g.jobs = 4;
    CHECK(run_ablation_grid(res.model, rankings, res.world.tasks, res.prompts, g) == records);

    const auto table = drop_table(records);
    CHECK(table.drops.back().cwiseAbs().maxCoeff() == 0.0);

    g.n_levels = {0};
    check_code([&] { run_ablation_grid(res.model, rankings, res.world.tasks, res.prompts, g); }, ErrorCode::NTooLarge);
    g.n_levels = {cfg.neurons() + 1};
    check_code([&] { run_ablation_grid(res.model, rankings, res.world.tasks, res.prompts, g); }, ErrorCode::NTooLarge);
    g.n_levels = {41};  // deeper than the stored rankings
    check_code([&] { run_ablation_grid(res.model, res.rankings, res.world.tasks, res.prompts, g); }, ErrorCode::NTooLarge);
}

TEST_CASE("a 14 x 27 x 12 x 7 grid performs one selective and one random operation per cell") {
    synth::SynthSpec spec;
    spec.attributes = 14;
    spec.concepts = 27;
    toylm::ModelConfig cfg;
    cfg.layers = 1;
    cfg.d_model = 4;
    cfg.heads = 1;
    cfg.d_ff = 8;
    cfg.prompt_len = 1;
    cfg.max_len = 4;
    cfg.vocab = 8;
    const auto model = toylm::init_model(cfg, 1);
    std::vector<synth::Task> tasks(27);
    std::vector<std::vector<toylm::PromptState>> prompts(27);
    for (std::size_t t = 0; t < 27; ++t) {
        tasks[t].concept_name = "task" + std::to_string(t);
        tasks[t].test = {{{5}, true}};
        for (std::size_t s = 0; s < 12; ++s) {
            toylm::PromptState p;
            p.embeddings = toylm::Matrix::Zero(1, 4);
            prompts[t].push_back(p);
        }
    }
    std::vector<rsa::NeuronRanking> rankings(14);
    for (std::size_t a = 0; a < 14; ++a) {
        rankings[a].attribute = "attr" + std::to_string(a);
        rankings[a].neurons = {0, 1, 2, 3, 4, 5, 6, 7};
        rankings[a].taus.assign(8, 0.0);
        rankings[a].significant.assign(8, false);
    }
    GridOptions g;
    g.n_levels = {1, 2, 3, 4, 5, 6, 7};
    const auto records = run_ablation_grid(model, rankings, tasks, prompts, g);
    const auto selective = std::count_if(records.begin(), records.end(), [](const auto& r) { return r.condition == "selective"; });
    CHECK(selective == 31752);
    CHECK(records.size() == 2 * 31752);
}

TEST_CASE("control masks are uniform subsets keyed by the grid cell") {
    const auto s = control_seed(1, "joy", "valence", 32, 0);
    CHECK(s == control_seed(1, "joy", "valence", 32, 0));
    CHECK(s != control_seed(1, "joy", "arousal", 32, 0));
    CHECK(s != control_seed(1, "fear", "valence", 32, 0));
    CHECK(s != control_seed(1, "joy", "valence", 64, 0));
    CHECK(s != control_seed(1, "joy", "valence", 32, 1));
    CHECK(s != control_seed(2, "joy", "valence", 32, 0));
    const auto m = control_mask(s, 32, 1024);
    CHECK(m.size() == 32);
    CHECK(std::set<std::size_t>(m.begin(), m.end()).size() == 32);
    CHECK(m.back() < 1024);
    // Each neuron is equally likely to be picked.
    std::vector<int> hits(20, 0);
    for (std::uint64_t i = 0; i < 4000; ++i)
        for (auto n : control_mask(i, 5, 20)) ++hits[n];
    for (int h : hits) CHECK(std::abs(h - 1000) < 150);
}

// ---------------------------------------------------------------------------
// Drop summaries

TEST_CASE("equal selective and random accuracy gives zero drops and no significance") {
    const auto records = grid_records(3, 4, {8, 16}, 2, [](auto...) { return 0.0; });
    const auto s = summarize_drops(records);
    for (const auto* rows : {&s.by_attribute, &s.by_task, &s.overall})
        for (const auto& r : *rows) {
            CHECK(r.mean_drop == 0.0);
            CHECK(r.pvalue == 1.0);
            CHECK_FALSE(r.significant);
        }
    CHECK(s.by_attribute.size() == 4 * 2);
    CHECK(s.by_task.size() == 3 * 2);
    CHECK(s.overall.size() == 2);
}

TEST_CASE("a uniform 0.1 shift is significant everywhere") {
    const auto records = grid_records(3, 4, {8, 16}, 2, [](auto...) { return 0.1; });
    const auto s = summarize_drops(records);
    for (const auto* rows : {&s.by_attribute, &s.by_task, &s.overall})
        for (const auto& r : *rows) {
            CHECK(r.mean_drop == doctest::Approx(0.1).epsilon(1e-12));
            CHECK(r.pvalue < 1e-6);
            CHECK(r.significant);
        }
}

TEST_CASE("drop tests on a hand-built 2 x 2 x 2 grid match direct recomputation") {
    // drop(task, attribute, n, seed)
    const double d[2][2][2][2] = {{{{0.10, 0.30}, {0.05, 0.00}}, {{-0.05, 0.15}, {0.20, 0.10}}},
                                  {{{0.00, 0.10}, {0.25, 0.05}}, {{0.40, 0.20}, {0.00, -0.10}}}};
    const auto records = grid_records(2, 2, {4, 8}, 2, [&](std::size_t t, std::size_t a, std::size_t n, std::size_t s) {
        return d[t][a][n == 4 ? 0 : 1][s];
    });
    const auto table = drop_table(records);
    REQUIRE(table.n_levels == std::vector<std::size_t>{4, 8});
    for (std::size_t li = 0; li < 2; ++li)
        for (std::size_t t = 0; t < 2; ++t)
            for (std::size_t a = 0; a < 2; ++a)
                CHECK(table.drops[li](static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(a)) ==
                      doctest::Approx((d[t][a][li][0] + d[t][a][li][1]) / 2).epsilon(1e-12));
    const auto s = summarize_drops(records);
    for (std::size_t li = 0; li < 2; ++li) {
        std::vector<double> cells;
        for (std::size_t a = 0; a < 2; ++a) {
            std::vector<double> col;
            for (std::size_t t = 0; t < 2; ++t) col.push_back((d[t][a][li][0] + d[t][a][li][1]) / 2);
            const auto& row = s.by_attribute[li * 2 + a];
            CHECK(row.t == doctest::Approx(oracle::t_statistic(col)).epsilon(1e-10));
            CHECK(row.pvalue == doctest::Approx(stats::student_t_sf(oracle::t_statistic(col), 1.0)).epsilon(1e-10));
        }
        for (std::size_t t = 0; t < 2; ++t) {
            std::vector<double> row;
            for (std::size_t a = 0; a < 2; ++a) row.push_back((d[t][a][li][0] + d[t][a][li][1]) / 2);
            CHECK(s.by_task[li * 2 + t].t == doctest::Approx(oracle::t_statistic(row)).epsilon(1e-10));
            cells.insert(cells.end(), row.begin(), row.end());
        }
        CHECK(s.overall[li].t == doctest::Approx(oracle::t_statistic(cells)).epsilon(1e-10));
        CHECK(s.overall[li].units == 4);
    }
}

TEST_CASE("drop confidence intervals use the t quantile") {
    const std::vector<double> x{0.1, 0.3, -0.05, 0.2, 0.15};
    const auto d = drop_stat("x", 4, x);
    const double m = std::accumulate(x.begin(), x.end(), 0.0) / 5;
    double ss = 0;
    for (double v : x) ss += (v - m) * (v - m);
    const double half = 2.7764451051977987 * std::sqrt(ss / 4 / 5);
    CHECK(d.ci_low == doctest::Approx(m - half).epsilon(1e-10));
    CHECK(d.ci_high == doctest::Approx(m + half).epsilon(1e-10));
    const std::vector<double> neg{-0.1, -0.1, -0.1};
    CHECK(drop_stat("x", 4, neg).pvalue == 1.0);
    check_code([] { drop_stat("x", 1, std::vector<double>{0.1}); }, ErrorCode::DegenerateInput);
}

TEST_CASE("incomplete or inconsistent grids are rejected") {
    auto records = grid_records(2, 2, {4, 8}, 2, [](auto...) { return 0.0; });
    check_code([] { drop_table({}); }, ErrorCode::IncompleteGrid);
    auto missing = records;
    missing.erase(missing.begin() + 5);
    check_code([&] { drop_table(missing); }, ErrorCode::IncompleteGrid);
    auto dup = records;
    dup.push_back(records.front());
    check_code([&] { summarize_drops(dup); }, ErrorCode::IncompleteGrid);
    auto odd = records;
    odd[0].condition = "other";
    check_code([&] { drop_table(odd); }, ErrorCode::IncompleteGrid);
    // A seed that only some cells have.
    auto extra = records;
    extra.push_back({"t0", "a0", "selective", 4, 7, 0.5});
    extra.push_back({"t0", "a0", "random", 4, 7, 0.5});
    check_code([&] { drop_table(extra); }, ErrorCode::IncompleteGrid);
}

// ---------------------------------------------------------------------------
// Heterogeneity

TEST_CASE("dip table schema, task floor and warning") {
    std::vector<Eigen::VectorXd> rows;
    Rng rng(5);
    for (int t = 0; t < 10; ++t) {
        Eigen::VectorXd r(3);
        for (auto& v : r) v = rng.normal();
        rows.push_back(r);
    }
    HeterogeneityOptions opt;
    opt.boots = 200;
    const auto h = heterogeneity(table_from(rows, 64), opt);
    REQUIRE(h.rows.size() == 3);
    CHECK(h.warning.empty());
    for (std::size_t a = 0; a < 3; ++a) {
        CHECK(h.rows[a].n == 64);
        CHECK(h.rows[a].attribute == "a" + std::to_string(a));
        CHECK(h.rows[a].tasks == 10);
        CHECK(h.rows[a].dip >= 1.0 / 20 - 1e-12);
        CHECK(h.rows[a].dip <= 0.25);
    }
    rows.resize(5);
    CHECK_FALSE(heterogeneity(table_from(rows), opt).warning.empty());
    rows.resize(3);
    check_code([&] { heterogeneity(table_from(rows), opt); }, ErrorCode::TooFewTasks);
}

TEST_CASE("identical task drops sit at the dip lower bound") {
    std::vector<Eigen::VectorXd> rows(8, Eigen::VectorXd::Constant(2, 0.05));
    HeterogeneityOptions opt;
    opt.boots = 200;
    const auto h = heterogeneity(table_from(rows), opt);
    for (const auto& r : h.rows) {
        CHECK(r.dip == doctest::Approx(1.0 / 16));
        CHECK(r.pvalue > 0.5);
    }
}

TEST_CASE("two tight clusters of task drops are flagged as multimodal") {
    std::vector<Eigen::VectorXd> rows;
    Rng rng(8);
    for (int t = 0; t < 24; ++t) rows.push_back(Eigen::VectorXd::Constant(1, (t < 12 ? 0.0 : 0.3) + 0.005 * rng.normal()));
    HeterogeneityOptions opt;
    opt.boots = 2000;
    const auto h = heterogeneity(table_from(rows), opt);
    CHECK(h.rows[0].pvalue < 0.05);
    CHECK(heterogeneity(table_from(rows), opt).rows[0].pvalue == h.rows[0].pvalue);
}

// ---------------------------------------------------------------------------
// Contribution vs. weights

TEST_CASE("weights equal to the drops give r = 1 for every task") {
    const std::vector<double> w{0.1, 0.4, 0.2, 0.05, 0.3};
    Eigen::VectorXd row = Eigen::Map<const Eigen::VectorXd>(w.data(), 5);
    const auto c = contribution_vs_weight(table_from({row, row, row}), 10, weights_from(w));
    for (const auto& t : c.per_task) CHECK(t.r == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(c.overall.mean_r == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(c.n == 10);
}

TEST_CASE("Fisher aggregation of three tasks matches the series oracle") {
    const std::vector<double> w{0.1, 0.4, 0.2, 0.05, 0.3};
    std::vector<Eigen::VectorXd> rows{Eigen::VectorXd(5), Eigen::VectorXd(5), Eigen::VectorXd(5)};
    rows[0] << 0.2, 0.3, 0.1, 0.0, 0.2;
    rows[1] << 0.0, 0.1, 0.3, 0.1, 0.0;
    rows[2] << 0.1, 0.5, 0.1, 0.1, 0.4;
    const auto c = contribution_vs_weight(table_from(rows), 10, weights_from(w));
    std::vector<double> z;
    for (std::size_t t = 0; t < 3; ++t) {
        std::vector<double> d(rows[t].data(), rows[t].data() + 5);
        const double r = stats::pearson_r(d, w);
        CHECK(c.per_task[t].r == doctest::Approx(r).epsilon(1e-12));
        z.push_back(oracle::atanh_series(r));
    }
    const double zbar = (z[0] + z[1] + z[2]) / 3;
    CHECK(c.overall.mean_r == doctest::Approx(oracle::tanh_series(zbar)).epsilon(1e-10));
    CHECK(c.overall.t == doctest::Approx(oracle::t_statistic(z)).epsilon(1e-10));
}

TEST_CASE("shuffled weights give no significant contribution in at least 90% of runs") {
    Rng rng(21);
    int significant = 0;
    const int runs = 200;
    for (int run = 0; run < runs; ++run) {
        std::vector<Eigen::VectorXd> rows;
        for (int t = 0; t < 12; ++t) {
            Eigen::VectorXd r(14);
            for (auto& v : r) v = rng.normal();
            rows.push_back(r);
        }
        std::vector<double> w(14);
        for (auto& v : w) v = rng.normal();
        significant += contribution_vs_weight(table_from(rows), 10, weights_from(w)).overall.pvalue < 0.05;
    }
    CHECK(significant <= runs / 10);
}

TEST_CASE("contribution input validation") {
    const std::vector<double> w{0.1, 0.4, 0.2};
    Eigen::VectorXd row(3);
    row << 0.1, 0.2, 0.3;
    check_code([&] { contribution_vs_weight(table_from({row, row}), 99, weights_from(w)); }, ErrorCode::IncompleteGrid);
    check_code([&] { contribution_vs_weight(table_from({row, row}), 10, weights_from({0.1, 0.2})); }, ErrorCode::UnknownAttribute);
    check_code([&] { contribution_vs_weight(table_from({Eigen::VectorXd::Zero(3), row}), 10, weights_from(w)); }, ErrorCode::DegenerateInput);
    check_code([&] { contribution_vs_weight(table_from({row, row}), 10, weights_from({0.2, 0.2, 0.2})); }, ErrorCode::DegenerateInput);
    Eigen::VectorXd other(3);
    other << 0.3, 0.0, 0.1;
    const auto c = contribution_vs_weight(table_from({Eigen::VectorXd::Zero(3), row, other}), 10, weights_from(w));
    CHECK_FALSE(c.per_task[0].defined);
    CHECK(c.per_task[1].defined);
    CHECK(c.overall.n == 2);
}

// ---------------------------------------------------------------------------
// Run configuration

TEST_CASE("configs round-trip through JSON") {
    config::RunConfig c;
    c.seed = 42;
    c.jobs = 3;
    c.synth.concepts = 9;
    c.base.copies = 3;
    c.n_levels = {16, 48, 96};
    c.ranking_depth = 96;
    c.sig_method = rsa::SigMethod::SignrankPairs;
    c.model.vocab = c.synth.vocab();
    c.synth.seed = c.seed;
    const auto back = config::from_json(config::to_json(c));
    CHECK(config::to_json(back) == config::to_json(c));
    CHECK(back.synth == c.synth);
    CHECK(back.model == c.model);
    CHECK(back.n_levels == c.n_levels);
    CHECK(back.focus_n() == 48);

    const auto dir = testsupport::scratch("config");
    config::save(c, dir / "c.json");
    CHECK(config::to_json(config::load(dir / "c.json")) == config::to_json(c));
}

TEST_CASE("config parsing is strict") {
    check_code([] { config::from_json("{\"sed\": 1}"); }, ErrorCode::InvalidSpec);
    check_code([] { config::from_json("{\"synth\": {\"concept\": 4}}"); }, ErrorCode::InvalidSpec);
    check_code([] { config::from_json("{\"seed\": \"one\"}"); }, ErrorCode::InvalidSpec);
    check_code([] { config::from_json("{\"seeds\": -1}"); }, ErrorCode::InvalidSpec);
    check_code([] { config::from_json("{\"n_levels\": [32, 32]}"); }, ErrorCode::InvalidSpec);
    check_code([] { config::from_json("{\"n_levels\": [2000]}"); }, ErrorCode::InvalidSpec);
    check_code([] { config::from_json("{\"sig_method\": \"guess\"}"); }, ErrorCode::InvalidSpec);
    check_code([] { config::from_json("{\"q\": 1.5}"); }, ErrorCode::InvalidSpec);
    check_code([] { config::from_json("not json"); }, ErrorCode::InvalidSpec);
    CHECK(config::from_json("{}").seed == 1);
    CHECK(config::from_json("{}").model.vocab == synth::SynthSpec{}.vocab());
}

TEST_CASE("dotted overrides") {
    config::RunConfig c;
    config::set_path(c, "synth.concepts", "6");
    config::set_path(c, "seed", "9");
    config::set_path(c, "out", "somewhere");
    config::set_path(c, "n_levels", "[8,16,24]");
    config::set_path(c, "ranking_depth", "24");
    CHECK(c.synth.concepts == 6);
    CHECK(c.seed == 9);
    CHECK(c.synth.seed == 9);
    CHECK(c.out == "somewhere");
    CHECK(c.focus_n() == 16);
    check_code([&] { config::set_path(c, "synth.nope", "1"); }, ErrorCode::InvalidSpec);
    check_code([&] { config::set_path(c, "synth.concepts", "many"); }, ErrorCode::InvalidSpec);
    config::set_path(c, "synth.attributes", "4");
    CHECK(c.model.vocab == c.synth.vocab());
}
