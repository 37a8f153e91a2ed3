#include "nrsa/commands.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"

#include "nrsa/dataio.hpp"
#include "nrsa/error.hpp"
#include "nrsa/experiment.hpp"
#include "nrsa/parallel.hpp"
#include "nrsa/rdm.hpp"
#include "nrsa/report.hpp"
#include "nrsa/rng.hpp"
#include "nrsa/rsa.hpp"
#include "nrsa/stats.hpp"
#include "nrsa/synth.hpp"
#include "nrsa/toylm.hpp"

namespace nrsa::commands {

namespace fs = std::filesystem;

namespace {

void log(const std::string& line) { std::cerr << "nrsa: " << line << "\n"; }

std::uint64_t base_seed(const config::RunConfig& cfg) { return derive_seed(cfg.seed, {0xba5e}); }

std::vector<std::vector<toylm::PromptState>> load_prompts(const Layout& out, const config::RunConfig& cfg,
                                                          const std::vector<std::string>& tasks) {
    std::vector<std::vector<toylm::PromptState>> prompts(tasks.size());
    for (std::size_t t = 0; t < tasks.size(); ++t)
        for (std::size_t s = 0; s < cfg.seeds; ++s) prompts[t].push_back(toylm::load_prompt(out.prompt(tasks[t], s)));
    return prompts;
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

}  // namespace

void gen(const config::RunConfig& cfg) {
    const Layout out{cfg.out};
    const auto world = synth::gen_synthetic(cfg.synth);
    config::save(cfg, out.config());
    dataio::write_rating_table(world.ratings, out.ratings());
    for (const auto& task : world.tasks) {
        toylm::write_dataset(task.train, out.task_split(task.concept_name, "train"));
        toylm::write_dataset(task.dev, out.task_split(task.concept_name, "dev"));
        toylm::write_dataset(task.test, out.task_split(task.concept_name, "test"));
    }
    // Simulated judges weight the attributes unevenly, so the weights have something to find.
    Rng rng(derive_seed(cfg.seed, {0x5e1}));
    std::vector<double> weights(world.ratings.attributes.size());
    for (auto& w : weights) w = rng.uniform();
    const auto judgments = synth::gen_similarity(world.ratings, weights, cfg.similarity.participants,
                                                 cfg.similarity.missing_per_participant, cfg.similarity.noise,
                                                 derive_seed(cfg.seed, {0x5e2}));
    dataio::write_similarity_judgments(judgments, out.similarity());
    log("gen: " + std::to_string(world.tasks.size()) + " tasks, " + std::to_string(judgments.size()) + " similarity rows");
}

void train(const config::RunConfig& cfg) {
    const Layout out{cfg.out};
    const auto ratings = dataio::read_rating_table(out.ratings());
    const auto model = experiment::build_base_model(cfg.synth, cfg.model, base_seed(cfg), cfg.base);
    toylm::save_model(model, out.model());
    const auto& tasks = ratings.concepts;
    std::vector<toylm::Dataset> data;
    for (const auto& t : tasks) {
        data.push_back(toylm::read_dataset(out.task_split(t, "train")));
        fs::create_directories(out.prompt(t, 0).parent_path());
    }
    parallel_for(tasks.size() * cfg.seeds, cfg.jobs, [&](std::size_t i) {
        const std::size_t t = i / cfg.seeds, s = i % cfg.seeds;
        const auto p = toylm::train_prompt(model, data[t], experiment::prompt_seed(cfg.seed, t, s), cfg.train, tasks[t]);
        toylm::save_prompt(p, out.prompt(tasks[t], s));
    });
    log("train: " + std::to_string(tasks.size() * cfg.seeds) + " prompts");
}

void extract(const config::RunConfig& cfg) {
    const Layout out{cfg.out};
    const auto ratings = dataio::read_rating_table(out.ratings());
    const auto model = toylm::load_model(out.model());
    const auto prompts = load_prompts(out, cfg, ratings.concepts);
    dataio::write_activation_tensor(experiment::extract_tensor(model, prompts, ratings.concepts, cfg.jobs), out.activations());
    log("extract: " + std::to_string(model.cfg.neurons()) + " neurons");
}

void rsa(const config::RunConfig& cfg) {
    const Layout out{cfg.out};
    const auto ratings = dataio::read_rating_table(out.ratings());
    const auto tensor = dataio::read_activation_tensor(out.activations());
    const auto taus = rsa::searchlight(tensor, ratings, {cfg.q, cfg.sig_method, cfg.jobs});
    rsa::write_tau_matrix_csv(taus, out.taus());
    log("rsa: " + std::to_string(taus.significant.count()) + " significant neuron-attribute pairs");
}

void select(const config::RunConfig& cfg) {
    const Layout out{cfg.out};
    const auto taus = rsa::read_tau_matrix_csv(out.taus());
    const std::size_t depth = std::min(cfg.ranking_depth, taus.neurons());
    for (const auto& a : taus.attributes) rsa::write_ranking_csv(rsa::rank_neurons(taus, a, depth), out.ranking(a));
    log("select: top " + std::to_string(depth) + " neurons for " + std::to_string(taus.attributes.size()) + " attributes");
}

void ablate(const config::RunConfig& cfg) {
    const Layout out{cfg.out};
    const auto ratings = dataio::read_rating_table(out.ratings());
    const auto model = toylm::load_model(out.model());
    std::vector<rsa::NeuronRanking> rankings;
    for (const auto& a : ratings.attributes) rankings.push_back(rsa::read_ranking_csv(out.ranking(a), a));
    std::vector<synth::Task> tasks;
    for (const auto& c : ratings.concepts) {
        synth::Task t;
        t.concept_name = c;
        t.test = toylm::read_dataset(out.task_split(c, "test"));
        tasks.push_back(std::move(t));
    }
    const auto prompts = load_prompts(out, cfg, ratings.concepts);
    const auto records = experiment::run_ablation_grid(model, rankings, tasks, prompts, {cfg.n_levels, cfg.seed, cfg.jobs});
    dataio::write_ablation_jsonl(records, out.ablation());
    log("ablate: " + std::to_string(records.size()) + " records");
}

void stats(const config::RunConfig& cfg) {
    const Layout out{cfg.out};
    const auto ratings = dataio::read_rating_table(out.ratings());
    const auto people = dataio::read_similarity_judgments(out.similarity(), ratings.concepts);
    const auto weights = rsa::attribute_weights(
        ratings, people, {cfg.similarity.boots, cfg.similarity.q, derive_seed(cfg.seed, {0x3e19}), cfg.jobs});
    rsa::write_attribute_weights_csv(weights, out.weights());

    // Reliability of the averaged judgments: concept pairs are the targets, people the raters.
    const std::size_t pairs = rdm::triangle_size(people.concepts.size());
    Eigen::MatrixXd grid(static_cast<Eigen::Index>(pairs), static_cast<Eigen::Index>(people.rdms.size()));
    for (std::size_t p = 0; p < people.rdms.size(); ++p) {
        const auto tri = rdm::lower_triangle(people.rdms[p]);
        for (std::size_t i = 0; i < pairs; ++i) grid(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)) = tri[i];
    }
    std::string rel = "form,value\n";
    rel += "ICC1k," + dataio::format_number(stats::icc(grid, stats::IccForm::ICC1k)) + "\n";
    rel += "ICC2k," + dataio::format_number(stats::icc(grid, stats::IccForm::ICC2k)) + "\n";
    dataio::write_text(out.reliability(), rel);

    // Attribute factors of the rating table, retained by parallel analysis.
    const std::size_t kept = std::max<std::size_t>(1, stats::parallel_analysis(ratings.scores, 1000, derive_seed(cfg.seed, {0xfa})));
    auto solution = stats::pca(ratings.scores, kept);
    if (kept > 1) solution = stats::varimax(solution.loadings);
    std::string fac = "attribute";
    for (std::size_t f = 0; f < kept; ++f) fac += ",f" + std::to_string(f + 1);
    fac += "\n";
    for (std::size_t a = 0; a < ratings.attributes.size(); ++a) {
        fac += ratings.attributes[a];
        for (std::size_t f = 0; f < kept; ++f)
            fac += "," + dataio::format_number(solution.loadings(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(f)));
        fac += "\n";
    }
    dataio::write_text(out.factors(), fac);
    log("stats: " + std::to_string(people.participants.size()) + " participants, " + std::to_string(kept) + " rating factors");
}

void report(const config::RunConfig& cfg, bool svg) {
    const Layout out{cfg.out};
    const auto records = dataio::read_ablation_jsonl(out.ablation());
    const auto summary = experiment::summarize_drops(records, cfg.drop_q);
    report::write_drops_csv(summary, out.drops());
    const auto table = experiment::drop_table(records);
    const auto het = experiment::heterogeneity(table, {cfg.dip_boots, derive_seed(cfg.seed, {0xd1b}), cfg.jobs});
    if (!het.warning.empty()) log("report: " + het.warning);
    report::write_dip_table_csv(het, out.dip_table());
    const auto weights = report::read_attribute_weights_csv(out.weights());
    const std::size_t focus = cfg.focus_n();
    const auto contribution = experiment::contribution_vs_weight(table, focus, weights);
    report::write_correlation_csv(contribution, out.correlation());
    if (svg) report::write_drop_svg(summary, focus, out.chart());
    for (const auto& d : summary.overall)
        std::cout << "n = " << d.n << ": mean drop " << fixed(d.mean_drop, 4) << ", t = " << fixed(d.t, 3) << ", p = " << d.pvalue
                  << (d.significant ? " *" : "") << "\n";
    std::cout << "drop vs weight at n = " << focus << ": Fisher mean r = " << fixed(contribution.overall.mean_r, 3)
              << ", p = " << contribution.overall.pvalue << "\n";
}

void run_all(const config::RunConfig& cfg, bool svg) {
    gen(cfg);
    train(cfg);
    extract(cfg);
    rsa(cfg);
    select(cfg);
    ablate(cfg);
    stats(cfg);
    report(cfg, svg);
}

double check_s1(const fs::path& fixture) { return experiment::table_s1_check(dataio::read_table_s1(fixture)); }

int main(int argc, char** argv) {
    CLI::App app{"Searchlight RSA and neuron ablation on a desk-scale encoder"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, out_dir, n_list;
    std::uint64_t seed = 0;
    double q = 0.0;
    int jobs = 0;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "master seed (default: PIPELINE_SEED or the config)");
    app.add_option("--q", q, "searchlight FDR level");
    app.add_option("--n", n_list, "comma-separated neuron counts for the ablation grid");
    app.add_option("--out", out_dir, "run directory");
    app.add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
    app.add_option("--set", overrides, "dotted.path=value config override (repeatable)");

    bool svg = false;
    std::string fixture;
    struct Step {
        const char* name;
        const char* help;
        void (*fn)(const config::RunConfig&);
    };
    const Step steps[] = {
        {"gen", "generate ratings, tasks and similarity judgments", gen},
        {"train", "build the base model and train prompts", train},
        {"extract", "extract FFN activations per prompt", extract},
        {"rsa", "searchlight RSA against the rating table", rsa},
        {"select", "rank neurons per attribute", select},
        {"ablate", "run the selective / random ablation grid", ablate},
        {"stats", "attribute weights, reliabilities and rating factors", stats},
    };
    std::vector<std::pair<CLI::App*, const Step*>> plain;
    for (const auto& s : steps) plain.emplace_back(app.add_subcommand(s.name, s.help), &s);
    auto* rep = app.add_subcommand("report", "drop tests, dip table, weight correlations");
    rep->add_flag("--svg", svg, "also draw the per-attribute drop chart");
    auto* run = app.add_subcommand("run", "every step in order");
    run->add_flag("--svg", svg, "also draw the per-attribute drop chart");
    auto* s1 = app.add_subcommand("check-s1", "correlate kappa with accuracy in a fixture");
    s1->add_option("--fixture", fixture, "CSV with emotion,kappa,acc_mean,acc_sd")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (s1->parsed()) {
            std::cout << "r = " << fixed(check_s1(fixture), 3) << "\n";
            return 0;
        }
        config::RunConfig cfg = config_path.empty() ? config::RunConfig{} : config::load(config_path);
        std::vector<std::pair<std::string, std::string>> changes;
        if (const char* env = std::getenv("PIPELINE_SEED"); env && app.count("--seed") == 0) changes.emplace_back("seed", env);
        for (const auto& o : overrides) {
            const auto eq = o.find('=');
            if (eq == std::string::npos) {
                std::cerr << "--set expects dotted.path=value, got '" << o << "'\n" << app.help();
                return 2;
            }
            changes.emplace_back(o.substr(0, eq), o.substr(eq + 1));
        }
        if (app.count("--seed")) changes.emplace_back("seed", std::to_string(seed));
        if (app.count("--q")) changes.emplace_back("q", dataio::format_number(q));
        if (app.count("--n")) changes.emplace_back("n_levels", "[" + n_list + "]");
        if (app.count("--out")) changes.emplace_back("out", out_dir);
        if (app.count("--jobs")) changes.emplace_back("jobs", std::to_string(jobs));
        config::set_paths(cfg, changes);

        for (const auto& [cmd, step] : plain)
            if (cmd->parsed()) step->fn(cfg);
        if (rep->parsed()) report(cfg, svg);
        if (run->parsed()) run_all(cfg, svg);
        return 0;
    } catch (const Error& e) {
        std::cerr << "nrsa: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "nrsa: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace nrsa::commands
