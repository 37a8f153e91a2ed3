#include <algorithm>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "nrsa/rng.hpp"
#include "nrsa/rsa.hpp"
#include "nrsa/stats.hpp"
#include "nrsa/synth.hpp"
#include "oracles/oracles.hpp"
#include "support.hpp"

using namespace nrsa;
using namespace nrsa::rsa;
using testsupport::check_code;

namespace {

ActivationTensor noise_tensor(const RatingTable& r, std::size_t neurons, std::size_t seeds, std::uint64_t seed) {
    Rng rng(seed);
    ActivationTensor t(seeds, r.concepts, neurons);
    for (auto& v : t.values) v = rng.normal();
    return t;
}

TauMatrix matrix_from_taus(const std::vector<double>& taus) {
    TauMatrix m;
    m.attributes = {"a"};
    m.taus = Eigen::Map<const Eigen::VectorXd>(taus.data(), static_cast<Eigen::Index>(taus.size()));
    m.pvalues = Eigen::MatrixXd::Constant(m.taus.rows(), 1, 0.5);
    m.significant = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(m.taus.rows(), 1, false);
    return m;
}

}  // namespace

TEST_CASE("searchlight: a neuron copying an attribute is perfectly related") {
    const auto r = synth::random_ratings(12, 3, 1);
    auto t = noise_tensor(r, 20, 2, 2);
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t c = 0; c < 12; ++c) t.at(s, c, 7) = r.scores(static_cast<Eigen::Index>(c), 1);
    for (auto method : {SigMethod::TauNormal, SigMethod::SignrankPairs}) {
        const auto m = searchlight(t, r, {0.01, method, 1});
        CHECK(m.taus(7, 1) == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(m.significant(7, 1));
        CHECK((m.taus.array() >= -1.0).all());
        CHECK((m.taus.array() <= 1.0).all());
        CHECK((m.pvalues.array() > 0.0).all());
        CHECK((m.pvalues.array() <= 1.0).all());
    }
}

TEST_CASE("searchlight taus match the brute-force tau on the triangles") {
    const auto r = synth::random_ratings(9, 2, 3);
    const auto t = noise_tensor(r, 15, 3, 4);
    const auto m = searchlight(t, r);
    for (std::size_t n = 0; n < 15; ++n)
        for (std::size_t a = 0; a < 2; ++a) {
            const auto x = rdm::lower_triangle(rdm::neuron_rdm(t, n));
            const auto y = rdm::lower_triangle(rdm::attribute_rdm(r, r.attributes[a]));
            CHECK(std::abs(m.taus(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(a)) - oracle::kendall_tau_b(x, y)) <= 1e-12);
        }
}

TEST_CASE("searchlight input checks") {
    const auto r = synth::random_ratings(6, 2, 3);
    auto t = noise_tensor(r, 4, 1, 4);
    t.concepts[0] = "other";
    check_code([&] { searchlight(t, r); }, ErrorCode::ConceptMismatch);
    auto flat = noise_tensor(r, 4, 1, 4);
    for (std::size_t c = 0; c < 6; ++c) flat.at(0, c, 2) = 1.0;
    const auto m = searchlight(flat, r);
    CHECK(m.taus(2, 0) == 0.0);
    CHECK(m.pvalues(2, 0) == 1.0);
}

TEST_CASE("searchlight on pure noise keeps BY false discoveries below q") {
    const auto r = synth::random_ratings(12, 1, 9);
    const double q = 0.01;
    double fraction_sum = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        const auto t = noise_tensor(r, 1000, 1, 100 + static_cast<std::uint64_t>(rep));
        const auto m = searchlight(t, r, {q, SigMethod::TauNormal, 1});
        const auto count = m.significant.count();
        fraction_sum += static_cast<double>(count) / 1000.0;
    }
    CHECK(fraction_sum / 100.0 <= q);
}

TEST_CASE("searchlight is equivariant to neuron order and independent of worker count") {
    const auto r = synth::random_ratings(10, 3, 5);
    const auto t = noise_tensor(r, 40, 2, 6);
    std::vector<std::size_t> perm(40);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(1);
    rng.shuffle(perm);
    ActivationTensor moved(2, t.concepts, 40);
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t c = 0; c < 10; ++c)
            for (std::size_t n = 0; n < 40; ++n) moved.at(s, c, n) = t.at(s, c, perm[n]);
    const auto a = searchlight(t, r);
    const auto b = searchlight(moved, r);
    for (std::size_t n = 0; n < 40; ++n) {
        CHECK(b.taus.row(static_cast<Eigen::Index>(n)) == a.taus.row(static_cast<Eigen::Index>(perm[n])));
        CHECK(b.pvalues.row(static_cast<Eigen::Index>(n)) == a.pvalues.row(static_cast<Eigen::Index>(perm[n])));
    }
    CHECK(searchlight(t, r, {0.01, SigMethod::TauNormal, 8}) == a);
}

TEST_CASE("significance set shrinks as q decreases") {
    const auto r = synth::random_ratings(12, 4, 8);
    const auto planted = synth::planted_tensor(r, 200, 5, 2, 1.0, 9);
    std::size_t previous = 200 * 4 + 1;
    TauMatrix last;
    for (double q : {0.2, 0.1, 0.05, 0.01, 0.001, 1e-6}) {
        const auto m = searchlight(planted.tensor, r, {q, SigMethod::TauNormal, 1});
        const auto count = static_cast<std::size_t>(m.significant.count());
        CHECK(count <= previous);
        if (previous <= 200 * 4) CHECK((m.significant.array() <= last.significant.array()).all());
        previous = count;
        last = m;
    }
}

TEST_CASE("rank_neurons: order, ties, prefixes") {
    const auto m = matrix_from_taus({0.3, 0.9, 0.5});
    const auto top2 = rank_neurons(m, "a", 2);
    CHECK(top2.neurons == std::vector<std::size_t>{1, 2});
    CHECK(top2.taus == std::vector<double>{0.9, 0.5});
    CHECK(rank_neurons(m, "a", 3).neurons == std::vector<std::size_t>{1, 2, 0});
    const auto tied = matrix_from_taus({0.2, 0.7, 0.2, 0.7});
    CHECK(rank_neurons(tied, "a", 4).neurons == std::vector<std::size_t>{1, 3, 0, 2});
    check_code([&] { rank_neurons(m, "a", 4); }, ErrorCode::NTooLarge);
    check_code([&] { rank_neurons(m, "b", 1); }, ErrorCode::UnknownAttribute);

    Rng rng(12);
    std::vector<double> taus(300);
    for (auto& v : taus) v = static_cast<double>(rng.below(21)) / 10.0 - 1.0;
    const auto big = matrix_from_taus(taus);
    const auto full = rank_neurons(big, "a", 300);
    CHECK(std::is_sorted(full.taus.rbegin(), full.taus.rend()));
    auto sorted = full.neurons;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 300; ++i) CHECK(sorted[i] == i);
    for (std::size_t n1 : {1, 10, 77})
        for (std::size_t n2 : {100, 250}) {
            const auto a = rank_neurons(big, "a", n1).neurons;
            const auto b = rank_neurons(big, "a", n2).neurons;
            CHECK(std::equal(a.begin(), a.end(), b.begin()));
        }
}

TEST_CASE("planted neurons are recovered near the top of the ranking") {
    int good_trials = 0;
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        const auto r = synth::random_ratings(12, 14, 500 + trial);
        const auto planted = synth::planted_tensor(r, 1024, 8, 4, 0.1, 900 + trial);
        const auto m = searchlight(planted.tensor, r);
        std::size_t found = 0, total = 0;
        for (std::size_t a = 0; a < 14; ++a) {
            const auto top = rank_neurons(m, r.attributes[a], 16).neurons;
            for (auto n : planted.planted[a]) found += std::count(top.begin(), top.end(), n) > 0;
            total += planted.planted[a].size();
        }
        good_trials += static_cast<double>(found) >= 0.9 * static_cast<double>(total);
    }
    CHECK(good_trials >= 18);
}

TEST_CASE("signrank_pairs p-values are centred on noise") {
    const auto r = synth::random_ratings(12, 1, 41);
    const auto t = noise_tensor(r, 400, 1, 42);
    const auto m = searchlight(t, r, {0.01, SigMethod::SignrankPairs, 1});
    const double mean_p = m.pvalues.mean();
    CHECK(mean_p > 0.4);
    CHECK(mean_p < 0.6);
    check_code([] { parse_sig_method("bogus"); }, ErrorCode::InvalidConfig);
    CHECK(parse_sig_method(to_string(SigMethod::SignrankPairs)) == SigMethod::SignrankPairs);
}

namespace {

ParticipantRDMSet people_from(const rdm::Rdm& base, std::size_t count, bool shuffle, Rng& rng) {
    ParticipantRDMSet set;
    set.concepts = base.concepts;
    const auto k = static_cast<Eigen::Index>(base.concepts.size());
    for (std::size_t p = 0; p < count; ++p) {
        set.participants.push_back("p" + std::to_string(p));
        if (!shuffle) {
            set.rdms.push_back(base.matrix);
            continue;
        }
        auto tri = rdm::lower_triangle(base);
        for (auto& v : tri) v += rng.normal();
        rng.shuffle(tri);
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(k, k);
        std::size_t h = 0;
        for (Eigen::Index i = 1; i < k; ++i)
            for (Eigen::Index j = 0; j < i; ++j) m(i, j) = m(j, i) = tri[h++];
        set.rdms.push_back(m);
    }
    return set;
}

}  // namespace

TEST_CASE("human rsa: identical participants") {
    const auto r = synth::random_ratings(15, 1, 77);
    const auto attr = rdm::attribute_rdm(r, "a0");
    Rng rng(1);
    const auto people = people_from(attr, 30, false, rng);
    const auto w = human_rsa(attr, people, {200, 0.001, 3, 1});
    CHECK(w.mean_tau == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(w.pvalue < 1e-4);
    CHECK(w.significant);
    auto two = people;
    two.rdms.resize(1);
    two.participants.resize(1);
    check_code([&] { human_rsa(attr, two); }, ErrorCode::TooFewParticipants);
}

TEST_CASE("human rsa: shuffled participants are rarely significant") {
    int significant = 0;
    for (std::uint64_t run = 0; run < 40; ++run) {
        const auto r = synth::random_ratings(12, 1, 300 + run);
        const auto attr = rdm::attribute_rdm(r, "a0");
        Rng rng(700 + run);
        const auto people = people_from(attr, 20, true, rng);
        const auto w = human_rsa(attr, people, {100, 0.001, run, 1});
        CHECK(std::abs(w.mean_tau) < 0.2);
        significant += w.significant;
    }
    CHECK(significant <= 2);
}

TEST_CASE("human rsa: per-participant taus on a tiny case match pair counting") {
    rdm::Rdm attr{{"a", "b", "c", "d"}, Eigen::MatrixXd::Zero(4, 4)};
    const std::vector<double> scores{0.0, 1.0, 3.0, 7.0};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) attr.matrix(i, j) = std::abs(scores[i] - scores[j]);
    ParticipantRDMSet people;
    people.concepts = attr.concepts;
    people.participants = {"x", "y"};
    const std::vector<std::vector<double>> tris{{2, 5, 4, 6, 1, 3}, {1, 1, 2, 3, 3, 9}};
    for (const auto& tri : tris) {
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(4, 4);
        std::size_t h = 0;
        for (int i = 1; i < 4; ++i)
            for (int j = 0; j < i; ++j) m(i, j) = m(j, i) = tri[h++];
        people.rdms.push_back(m);
    }
    const auto w = human_rsa(attr, people, {5, 0.05, 1, 1});
    const auto at = rdm::lower_triangle(attr);
    REQUIRE(w.participant_taus.size() == 2);
    CHECK(std::abs(w.participant_taus[0] - oracle::kendall_tau_b(at, tris[0])) <= 1e-12);
    CHECK(std::abs(w.participant_taus[1] - oracle::kendall_tau_b(at, tris[1])) <= 1e-12);
    CHECK(w.mean_tau == doctest::Approx((w.participant_taus[0] + w.participant_taus[1]) / 2));
}

TEST_CASE("attribute weights are deterministic and worker-count independent") {
    const auto r = synth::random_ratings(10, 3, 55);
    Rng rng(2);
    const auto people = people_from(rdm::attribute_rdm(r, "a1"), 12, true, rng);
    const auto a = attribute_weights(r, people, {50, 0.05, 9, 1});
    const auto b = attribute_weights(r, people, {50, 0.05, 9, 8});
    REQUIRE(a.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a[i].attribute == r.attributes[i]);
        CHECK(a[i].pvalue == b[i].pvalue);
        CHECK(a[i].mean_tau == b[i].mean_tau);
    }
}

TEST_CASE("tau matrix csv round trip") {
    const auto r = synth::random_ratings(8, 2, 5);
    const auto m = searchlight(noise_tensor(r, 6, 1, 1), r);
    const auto dir = testsupport::scratch("taucsv");
    write_tau_matrix_csv(m, dir / "tau.csv");
    CHECK(read_tau_matrix_csv(dir / "tau.csv") == m);
}
