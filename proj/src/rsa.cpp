#include "nrsa/rsa.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "nrsa/dataio.hpp"
#include "nrsa/error.hpp"
#include "nrsa/parallel.hpp"
#include "nrsa/rng.hpp"
#include "nrsa/stats.hpp"

namespace nrsa::rsa {

SigMethod parse_sig_method(const std::string& name) {
    if (name == "tau_normal") return SigMethod::TauNormal;
    if (name == "signrank_pairs") return SigMethod::SignrankPairs;
    throw Error(ErrorCode::InvalidConfig, "unknown sig_method '" + name + "'");
}

std::string to_string(SigMethod method) { return method == SigMethod::TauNormal ? "tau_normal" : "signrank_pairs"; }

std::size_t TauMatrix::attribute_index(const std::string& name) const {
    for (std::size_t i = 0; i < attributes.size(); ++i)
        if (attributes[i] == name) return i;
    throw Error(ErrorCode::UnknownAttribute, "no attribute named '" + name + "'");
}

double relatedness_pvalue(std::span<const double> neuron_tri, std::span<const double> attribute_tri, double tau,
                          SigMethod method) {
    if (method == SigMethod::TauNormal) return stats::tau_significance(tau, neuron_tri.size());
    // Each pair contributes how much closer its two ranks are than expected under independence.
    const auto rx = stats::average_ranks(neuron_tri);
    const auto ry = stats::average_ranks(attribute_tri);
    const double p = static_cast<double>(rx.size());
    const double expected_gap = (p * p - 1.0) / (3.0 * p);
    std::vector<double> deficits(rx.size());
    for (std::size_t i = 0; i < rx.size(); ++i) deficits[i] = expected_gap - std::abs(rx[i] - ry[i]);
    try {
        return stats::wilcoxon_signed_rank(deficits, stats::Tail::Greater).pvalue;
    } catch (const Error& e) {
        if (e.code() == ErrorCode::TooFewNonzero) return 1.0;
        throw;
    }
}

TauMatrix searchlight(const ActivationTensor& t, const RatingTable& r, const SearchlightOptions& opt) {
    if (t.concepts != r.concepts) throw Error(ErrorCode::ConceptMismatch, "activation and rating concept lists differ");
    if (!(opt.q > 0.0 && opt.q < 1.0)) throw Error(ErrorCode::InvalidConfig, "q must lie in (0, 1)");
    t.validate();
    r.validate();
    const std::size_t k = t.concepts.size();
    const std::size_t pairs = rdm::triangle_size(k);
    if (pairs < 2) throw Error(ErrorCode::DegenerateInput, "searchlight needs at least 3 concepts");
    const std::size_t n_attr = r.attributes.size();

    std::vector<std::vector<double>> attr_tri(n_attr, std::vector<double>(pairs));
    for (std::size_t a = 0; a < n_attr; ++a) {
        const auto col = r.column(a);
        rdm::scalar_triangle(col, attr_tri[a]);
        if (std::all_of(attr_tri[a].begin(), attr_tri[a].end(), [&](double v) { return v == attr_tri[a][0]; }))
            throw Error(ErrorCode::DegenerateInput, "attribute '" + r.attributes[a] + "' has a constant RDM");
    }

    const Eigen::MatrixXd means = rdm::seed_means(t);
    TauMatrix m;
    m.attributes = r.attributes;
    const auto rows = static_cast<Eigen::Index>(t.neurons);
    const auto cols = static_cast<Eigen::Index>(n_attr);
    m.taus = Eigen::MatrixXd::Zero(rows, cols);
    m.pvalues = Eigen::MatrixXd::Ones(rows, cols);

    parallel_for(t.neurons, opt.jobs, [&](std::size_t n) {
        std::vector<double> activ(k), tri(pairs);
        for (std::size_t c = 0; c < k; ++c) activ[c] = means(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(n));
        rdm::scalar_triangle(activ, tri);
        if (std::all_of(tri.begin(), tri.end(), [&](double v) { return v == tri[0]; })) return;
        for (std::size_t a = 0; a < n_attr; ++a) {
            const double tau = stats::kendall_tau(tri, attr_tri[a]);
            const auto i = static_cast<Eigen::Index>(n), j = static_cast<Eigen::Index>(a);
            m.taus(i, j) = tau;
            m.pvalues(i, j) = relatedness_pvalue(tri, attr_tri[a], tau, opt.method);
        }
    });

    // BY over the whole neurons x attributes grid at once.
    std::vector<double> flat(static_cast<std::size_t>(m.pvalues.size()));
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) flat[static_cast<std::size_t>(i * cols + j)] = m.pvalues(i, j);
    const auto reject = stats::fdr_by(flat, opt.q);
    m.significant.resize(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m.significant(i, j) = reject[static_cast<std::size_t>(i * cols + j)];
    return m;
}

NeuronRanking rank_neurons(const TauMatrix& m, const std::string& attribute, std::size_t n) {
    const auto a = static_cast<Eigen::Index>(m.attribute_index(attribute));
    const std::size_t total = m.neurons();
    if (n > total) throw Error(ErrorCode::NTooLarge, "n = " + std::to_string(n) + " exceeds " + std::to_string(total) + " neurons");
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return m.taus(static_cast<Eigen::Index>(x), a) > m.taus(static_cast<Eigen::Index>(y), a);
    });
    NeuronRanking out;
    out.attribute = attribute;
    out.neurons.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
    for (auto idx : out.neurons) {
        out.taus.push_back(m.taus(static_cast<Eigen::Index>(idx), a));
        out.significant.push_back(m.significant(static_cast<Eigen::Index>(idx), a));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Human representation RSA

namespace {

// Taus of each participant against the attribute over the pairs of `idx` (repeated
// concepts skipped). Participants with a constant triangle are left out.
std::vector<double> participant_taus(const Eigen::MatrixXd& attr, const ParticipantRDMSet& people,
                                     std::span<const std::size_t> who, std::span<const std::size_t> idx) {
    std::vector<double> at, pt;
    std::vector<double> taus;
    for (std::size_t i = 1; i < idx.size(); ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (idx[i] != idx[j]) at.push_back(attr(static_cast<Eigen::Index>(idx[i]), static_cast<Eigen::Index>(idx[j])));
    pt.resize(at.size());
    for (auto p : who) {
        const auto& m = people.rdms[p];
        std::size_t h = 0;
        for (std::size_t i = 1; i < idx.size(); ++i)
            for (std::size_t j = 0; j < i; ++j)
                if (idx[i] != idx[j]) pt[h++] = m(static_cast<Eigen::Index>(idx[i]), static_cast<Eigen::Index>(idx[j]));
        try {
            taus.push_back(stats::kendall_tau(at, pt));
        } catch (const Error& e) {
            if (e.code() != ErrorCode::DegenerateInput) throw;
        }
    }
    return taus;
}

double two_tailed_signrank(std::span<const double> taus) {
    try {
        return stats::wilcoxon_signed_rank(taus, stats::Tail::TwoSided).pvalue;
    } catch (const Error& e) {
        if (e.code() == ErrorCode::TooFewNonzero) return 1.0;
        throw;
    }
}

}  // namespace

AttributeWeight human_rsa(const rdm::Rdm& attribute, const ParticipantRDMSet& people, const HumanRsaOptions& opt) {
    if (people.rdms.size() < 2) throw Error(ErrorCode::TooFewParticipants, "human RSA needs at least 2 participants");
    if (opt.boots < 1) throw Error(ErrorCode::InvalidConfig, "boots must be at least 1");
    if (attribute.concepts != people.concepts) throw Error(ErrorCode::ConceptMismatch, "attribute and participant concept lists differ");
    const std::size_t k = people.concepts.size();
    const std::size_t np = people.rdms.size();

    std::vector<std::size_t> everyone(np), all_concepts(k);
    std::iota(everyone.begin(), everyone.end(), std::size_t{0});
    std::iota(all_concepts.begin(), all_concepts.end(), std::size_t{0});

    AttributeWeight w;
    w.participant_taus = participant_taus(attribute.matrix, people, everyone, all_concepts);
    if (w.participant_taus.size() != np)
        throw Error(ErrorCode::DegenerateInput, "a participant or the attribute has a constant RDM");
    w.mean_tau = stats::mean(w.participant_taus);

    std::vector<double> replicate_p(opt.boots);
    parallel_for(opt.boots, opt.jobs, [&](std::size_t b) {
        Rng rng(derive_seed(opt.seed, {0xb0075, b}));
        std::vector<std::size_t> who(np), idx(k);
        for (auto& p : who) p = rng.below(np);
        for (auto& c : idx) c = rng.below(k);
        const auto taus = participant_taus(attribute.matrix, people, who, idx);
        replicate_p[b] = taus.size() < 5 ? 1.0 : two_tailed_signrank(taus);
    });
    std::sort(replicate_p.begin(), replicate_p.end());
    const std::size_t mid = opt.boots / 2;
    w.pvalue = opt.boots % 2 ? replicate_p[mid] : 0.5 * (replicate_p[mid - 1] + replicate_p[mid]);
    w.significant = w.pvalue <= opt.q;
    return w;
}

std::vector<AttributeWeight> attribute_weights(const RatingTable& r, const ParticipantRDMSet& people, const HumanRsaOptions& opt) {
    std::vector<AttributeWeight> out;
    for (std::size_t a = 0; a < r.attributes.size(); ++a) {
        HumanRsaOptions sub = opt;
        sub.seed = derive_seed(opt.seed, {a});
        auto w = human_rsa(rdm::attribute_rdm(r, r.attributes[a]), people, sub);
        w.attribute = r.attributes[a];
        out.push_back(std::move(w));
    }
    std::vector<double> ps;
    for (const auto& w : out) ps.push_back(w.pvalue);
    const auto reject = stats::fdr_by(ps, opt.q);
    for (std::size_t a = 0; a < out.size(); ++a) out[a].significant = reject[a];
    return out;
}

// ---------------------------------------------------------------------------

void write_tau_matrix_csv(const TauMatrix& m, const std::filesystem::path& path) {
    using dataio::format_number;
    std::string out = "neuron,attribute,tau,p,significant\n";
    for (Eigen::Index i = 0; i < m.taus.rows(); ++i)
        for (Eigen::Index j = 0; j < m.taus.cols(); ++j)
            out += std::to_string(i) + "," + m.attributes[static_cast<std::size_t>(j)] + "," + format_number(m.taus(i, j)) + "," +
                   format_number(m.pvalues(i, j)) + "," + (m.significant(i, j) ? "1" : "0") + "\n";
    dataio::write_text(path, out);
}

TauMatrix read_tau_matrix_csv(const std::filesystem::path& path) {
    const auto csv = dataio::read_csv(path);
    const std::vector<std::string> expected{"neuron", "attribute", "tau", "p", "significant"};
    if (csv.header != expected) throw Error(ErrorCode::MalformedCsv, path.string() + ": expected header neuron,attribute,tau,p,significant");
    TauMatrix m;
    std::map<std::string, std::size_t> attr_index;
    std::size_t neurons = 0;
    for (std::size_t r = 0; r < csv.rows.size(); ++r) {
        const auto& c = csv.rows[r];
        if (attr_index.emplace(c[1], m.attributes.size()).second) m.attributes.push_back(c[1]);
        neurons = std::max(neurons, static_cast<std::size_t>(dataio::parse_number(c[0], r + 1, "neuron")) + 1);
    }
    const auto rows = static_cast<Eigen::Index>(neurons), cols = static_cast<Eigen::Index>(m.attributes.size());
    if (csv.rows.size() != neurons * m.attributes.size())
        throw Error(ErrorCode::MalformedCsv, path.string() + ": tau table does not cover every neuron and attribute");
    m.taus.resize(rows, cols);
    m.pvalues.resize(rows, cols);
    m.significant.resize(rows, cols);
    for (std::size_t r = 0; r < csv.rows.size(); ++r) {
        const auto& c = csv.rows[r];
        const auto i = static_cast<Eigen::Index>(dataio::parse_number(c[0], r + 1, "neuron"));
        const auto j = static_cast<Eigen::Index>(attr_index.at(c[1]));
        m.taus(i, j) = dataio::parse_number(c[2], r + 1, "tau");
        m.pvalues(i, j) = dataio::parse_number(c[3], r + 1, "p");
        if (c[4] != "0" && c[4] != "1") throw Error(ErrorCode::MalformedCsv, "row " + std::to_string(r + 1) + ", column 'significant': expected 0 or 1");
        m.significant(i, j) = c[4] == "1";
    }
    return m;
}

void write_ranking_csv(const NeuronRanking& r, const std::filesystem::path& path) {
    std::string out = "rank,neuron,tau,significant\n";
    for (std::size_t i = 0; i < r.neurons.size(); ++i)
        out += std::to_string(i + 1) + "," + std::to_string(r.neurons[i]) + "," + dataio::format_number(r.taus[i]) + "," +
               (r.significant[i] ? "1" : "0") + "\n";
    dataio::write_text(path, out);
}

NeuronRanking read_ranking_csv(const std::filesystem::path& path, const std::string& attribute) {
    const auto csv = dataio::read_csv(path);
    const std::vector<std::string> expected{"rank", "neuron", "tau", "significant"};
    if (csv.header != expected) throw Error(ErrorCode::MalformedCsv, path.string() + ": expected header rank,neuron,tau,significant");
    NeuronRanking r;
    r.attribute = attribute;
    for (std::size_t i = 0; i < csv.rows.size(); ++i) {
        const auto& c = csv.rows[i];
        const double rank = dataio::parse_number(c[0], i + 1, "rank");
        const double neuron = dataio::parse_number(c[1], i + 1, "neuron");
        if (rank != static_cast<double>(i + 1) || neuron < 0 || neuron != std::floor(neuron))
            throw Error(ErrorCode::MalformedCsv, path.string() + ": row " + std::to_string(i + 1) + " is out of order or not an index");
        if (c[3] != "0" && c[3] != "1") throw Error(ErrorCode::MalformedCsv, path.string() + ": significant must be 0 or 1");
        r.neurons.push_back(static_cast<std::size_t>(neuron));
        r.taus.push_back(dataio::parse_number(c[2], i + 1, "tau"));
        r.significant.push_back(c[3] == "1");
    }
    return r;
}

void write_attribute_weights_csv(const std::vector<AttributeWeight>& w, const std::filesystem::path& path) {
    std::string out = "attribute,mean_tau,p,significant\n";
    for (const auto& a : w)
        out += a.attribute + "," + dataio::format_number(a.mean_tau) + "," + dataio::format_number(a.pvalue) + "," +
               (a.significant ? "1" : "0") + "\n";
    dataio::write_text(path, out);
}

}  // namespace nrsa::rsa
