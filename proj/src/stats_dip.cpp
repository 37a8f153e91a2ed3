#include <algorithm>
#include <cmath>
#include <vector>

#include "nrsa/parallel.hpp"
#include "nrsa/rng.hpp"
#include "nrsa/stats.hpp"

namespace nrsa::stats {

namespace {

// Hartigan & Hartigan (1985) dip on sorted data, with the later corrections to the
// original AS 217 routine (symmetric G-branch distance, explicit termination when the
// modal interval stops changing). Works in units of 2n * dip until the end.
// Arrays are 1-based to keep the index arithmetic close to the published algorithm.
double dip_sorted(const std::vector<double>& sorted) {
    const int n = static_cast<int>(sorted.size());
    if (n < 2 || sorted.front() == sorted.back()) return 1.0 / (2.0 * n);

    std::vector<double> x(static_cast<std::size_t>(n) + 1);
    for (int i = 1; i <= n; ++i) x[static_cast<std::size_t>(i)] = sorted[static_cast<std::size_t>(i - 1)];
    auto X = [&](int i) { return x[static_cast<std::size_t>(i)]; };

    std::vector<int> mn(static_cast<std::size_t>(n) + 1), mj(static_cast<std::size_t>(n) + 1);
    std::vector<int> gcm(static_cast<std::size_t>(n) + 2), lcm(static_cast<std::size_t>(n) + 2);
    auto MN = [&](int i) -> int& { return mn[static_cast<std::size_t>(i)]; };
    auto MJ = [&](int i) -> int& { return mj[static_cast<std::size_t>(i)]; };
    auto G = [&](int i) -> int& { return gcm[static_cast<std::size_t>(i)]; };
    auto L = [&](int i) -> int& { return lcm[static_cast<std::size_t>(i)]; };

    int low = 1, high = n;
    double dip = 1.0;

    // Index chains for the convex minorant fit.
    MN(1) = 1;
    for (int j = 2; j <= n; ++j) {
        MN(j) = j - 1;
        for (;;) {
            const int mnj = MN(j);
            const int mnmnj = MN(mnj);
            if (mnj == 1 || (X(j) - X(mnj)) * (mnj - mnmnj) < (X(mnj) - X(mnmnj)) * (j - mnj)) break;
            MN(j) = mnmnj;
        }
    }
    // Index chains for the concave majorant fit.
    MJ(n) = n;
    for (int k = n - 1; k >= 1; --k) {
        MJ(k) = k + 1;
        for (;;) {
            const int mjk = MJ(k);
            const int mjmjk = MJ(mjk);
            if (mjk == n || (X(k) - X(mjk)) * (mjk - mjmjk) < (X(mjk) - X(mjmjk)) * (k - mjk)) break;
            MJ(k) = mjmjk;
        }
    }

    for (;;) {
        // GCM change points from high down to low.
        G(1) = high;
        int i = 1;
        for (; G(i) > low; ++i) G(i + 1) = MN(G(i));
        const int l_gcm = i;
        int ig = l_gcm;
        int ix = ig - 1;

        // LCM change points from low up to high.
        L(1) = low;
        i = 1;
        for (; L(i) < high; ++i) L(i + 1) = MJ(L(i));
        const int l_lcm = i;
        int ih = l_lcm;
        int iv = 2;

        // Largest distance between the GCM and the LCM over [low, high].
        long double d = 0.0L;
        if (l_gcm != 2 || l_lcm != 2) {
            do {
                long double dx;
                const int gcmix = G(ix);
                const int lcmiv = L(iv);
                if (gcmix > lcmiv) {
                    const int gcmi1 = G(ix + 1);
                    dx = static_cast<long double>(lcmiv - gcmi1 + 1) -
                         (static_cast<long double>(X(lcmiv)) - X(gcmi1)) * (gcmix - gcmi1) / (X(gcmix) - X(gcmi1));
                    ++iv;
                    if (dx >= d) {
                        d = dx;
                        ig = ix + 1;
                        ih = iv - 1;
                    }
                } else {
                    const int lcmiv1 = L(iv - 1);
                    dx = (static_cast<long double>(X(gcmix)) - X(lcmiv1)) * (lcmiv - lcmiv1) / (X(lcmiv) - X(lcmiv1)) -
                         static_cast<long double>(gcmix - lcmiv1 - 1);
                    --ix;
                    if (dx >= d) {
                        d = dx;
                        ig = ix + 1;
                        ih = iv;
                    }
                }
                if (ix < 1) ix = 1;
                if (iv > l_lcm) iv = l_lcm;
            } while (G(ix) != L(iv));
        } else {
            d = 1.0L;
        }

        if (d < dip) break;

        // Dip for the convex minorant.
        double dip_l = 0.0;
        for (int j = ig; j < l_gcm; ++j) {
            double max_t = 1.0;
            const int jb = G(j + 1), je = G(j);
            if (je - jb > 1 && X(je) != X(jb)) {
                const double c = (je - jb) / (X(je) - X(jb));
                for (int jj = jb; jj <= je; ++jj) {
                    const double t = (jj - jb + 1) - (X(jj) - X(jb)) * c;
                    max_t = std::max(max_t, t);
                }
            }
            dip_l = std::max(dip_l, max_t);
        }
        // Dip for the concave majorant.
        double dip_u = 0.0;
        for (int j = ih; j < l_lcm; ++j) {
            double max_t = 1.0;
            const int jb = L(j), je = L(j + 1);
            if (je - jb > 1 && X(je) != X(jb)) {
                const double c = (je - jb) / (X(je) - X(jb));
                for (int jj = jb; jj <= je; ++jj) {
                    const double t = (X(jj) - X(jb)) * c - (jj - jb - 1);
                    max_t = std::max(max_t, t);
                }
            }
            dip_u = std::max(dip_u, max_t);
        }
        dip = std::max(dip, std::max(dip_l, dip_u));

        // Without this check the cycle can repeat forever.
        if (low == G(ig) && high == L(ih)) break;
        low = G(ig);
        high = L(ih);
    }
    return dip / (2.0 * n);
}

}  // namespace

double dip_statistic(std::span<const double> sample) {
    if (sample.size() < 4) throw Error(ErrorCode::TooFewPoints, "dip: need at least 4 points");
    std::vector<double> sorted(sample.begin(), sample.end());
    for (double v : sorted)
        if (!std::isfinite(v)) throw Error(ErrorCode::DegenerateInput, "dip: non-finite sample value");
    std::sort(sorted.begin(), sorted.end());
    return dip_sorted(sorted);
}

DipResult hartigan_dip(std::span<const double> sample, std::size_t boots, std::uint64_t seed, int jobs) {
    DipResult out;
    out.n = sample.size();
    out.dip = dip_statistic(sample);
    if (boots == 0) {
        out.pvalue = 1.0;
        return out;
    }
    // Replicates are grouped into fixed-size chunks, each with its own derived stream,
    // so the count is the same for any worker count.
    constexpr std::size_t kChunk = 500;
    const std::size_t chunks = (boots + kChunk - 1) / kChunk;
    std::vector<std::size_t> exceed(chunks, 0);
    const double threshold = out.dip * (1.0 - 1e-12);
    parallel_for(chunks, jobs, [&](std::size_t c) {
        Rng rng(derive_seed(seed, {0xd1bULL, c}));
        std::vector<double> null(out.n);
        const std::size_t begin = c * kChunk;
        const std::size_t end = std::min(boots, begin + kChunk);
        std::size_t count = 0;
        for (std::size_t b = begin; b < end; ++b) {
            for (auto& v : null) v = rng.uniform();
            std::sort(null.begin(), null.end());
            if (dip_sorted(null) >= threshold) ++count;
        }
        exceed[c] = count;
    });
    std::size_t total = 0;
    for (auto e : exceed) total += e;
    out.pvalue = static_cast<double>(total + 1) / static_cast<double>(boots + 1);
    return out;
}

}  // namespace nrsa::stats
