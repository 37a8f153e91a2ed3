#include "nrsa/toylm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <numeric>
#include <set>

#ifdef __AVX512F__
#include <immintrin.h>
#endif

#include "nrsa/error.hpp"
#include "nrsa/rng.hpp"

namespace nrsa::toylm {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Normal CDF from a piecewise quintic Hermite table matching Phi, phi and phi' at
// every node; absolute error stays below 1e-13. The derivative of the same
// polynomial serves as phi, so gradients are exact for the function evaluated.
class NormalCdfTable {
public:
    static constexpr double kLimit = 9.0;
    static constexpr int kPerUnit = 32;
    static constexpr int kCells = static_cast<int>(2 * kLimit) * kPerUnit;

    NormalCdfTable() {
        const double h = 1.0 / kPerUnit;
        auto node = [&](int i, double& f, double& d1, double& d2) {
            const double x = -kLimit + i * h;
            f = 0.5 * std::erfc(-x * kInvSqrt2);
            d1 = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            d2 = -x * d1;
        };
        for (int i = 0; i < kCells; ++i) {
            double f0, a0, b0, f1, a1, b1;
            node(i, f0, a0, b0);
            node(i + 1, f1, a1, b1);
            // Local variable t in [0, 1); derivatives scaled by h.
            a0 *= h, a1 *= h, b0 *= h * h, b1 *= h * h;
            c_[0][i] = f0;
            c_[1][i] = a0;
            c_[2][i] = 0.5 * b0;
            c_[3][i] = 10.0 * (f1 - f0) - 6.0 * a0 - 4.0 * a1 - 1.5 * b0 + 0.5 * b1;
            c_[4][i] = -15.0 * (f1 - f0) + 8.0 * a0 + 7.0 * a1 + 1.5 * b0 - b1;
            c_[5][i] = 6.0 * (f1 - f0) - 3.0 * (a0 + a1) - 0.5 * (b0 - b1);
        }
    }

    void gelu(const double* x, double* y, double* grad, Eigen::Index n) const {
        if (grad) kernel<true>(x, y, grad, n);
        else kernel<false>(x, y, grad, n);
    }

private:
    // The AVX-512 block and the scalar tail use the same fused operations in the
    // same order, so a value never depends on its position in the buffer.
    template <bool WithGrad>
    void kernel(const double* __restrict x, double* __restrict y, double* __restrict grad, Eigen::Index n) const {
        Eigen::Index k = 0;
#ifdef __AVX512F__
        const __m512d lo = _mm512_set1_pd(-kLimit), hi = _mm512_set1_pd(kLimit);
        const __m512d per = _mm512_set1_pd(kPerUnit), zero = _mm512_setzero_pd(), one = _mm512_set1_pd(1.0);
        const __m256i last = _mm256_set1_epi32(kCells - 1);
        for (; k + 8 <= n; k += 8) {
            const __m512d xv = _mm512_loadu_pd(x + k);
            const __m512d u = _mm512_mul_pd(_mm512_add_pd(_mm512_min_pd(_mm512_max_pd(xv, lo), hi), hi), per);
            const __m256i i = _mm256_min_epi32(_mm512_cvttpd_epi32(u), last);
            const __m512d t = _mm512_sub_pd(u, _mm512_cvtepi32_pd(i));
            const __m512d c0 = _mm512_i32gather_pd(i, c_[0], 8), c1 = _mm512_i32gather_pd(i, c_[1], 8);
            const __m512d c2 = _mm512_i32gather_pd(i, c_[2], 8), c3 = _mm512_i32gather_pd(i, c_[3], 8);
            const __m512d c4 = _mm512_i32gather_pd(i, c_[4], 8), c5 = _mm512_i32gather_pd(i, c_[5], 8);
            __m512d p = _mm512_fmadd_pd(t, c5, c4);
            p = _mm512_fmadd_pd(t, p, c3);
            p = _mm512_fmadd_pd(t, p, c2);
            p = _mm512_fmadd_pd(t, p, c1);
            p = _mm512_fmadd_pd(t, p, c0);
            const __mmask8 above = _mm512_cmp_pd_mask(xv, hi, _CMP_GE_OQ);
            const __mmask8 below = _mm512_cmp_pd_mask(xv, lo, _CMP_LE_OQ);
            const __m512d phi = _mm512_mask_blend_pd(below, _mm512_mask_blend_pd(above, p, one), zero);
            _mm512_storeu_pd(y + k, _mm512_mul_pd(xv, phi));
            if constexpr (WithGrad) {
                __m512d dp = _mm512_fmadd_pd(t, _mm512_mul_pd(_mm512_set1_pd(5.0), c5), _mm512_mul_pd(_mm512_set1_pd(4.0), c4));
                dp = _mm512_fmadd_pd(t, dp, _mm512_mul_pd(_mm512_set1_pd(3.0), c3));
                dp = _mm512_fmadd_pd(t, dp, _mm512_mul_pd(_mm512_set1_pd(2.0), c2));
                dp = _mm512_mul_pd(_mm512_fmadd_pd(t, dp, c1), per);
                const __m512d slope = _mm512_maskz_mul_pd(static_cast<__mmask8>(~(above | below)), xv, dp);
                _mm512_storeu_pd(grad + k, _mm512_add_pd(phi, slope));
            }
        }
#endif
        for (; k < n; ++k) {
            const double xv = x[k];
            const double u = (std::clamp(xv, -kLimit, kLimit) + kLimit) * kPerUnit;
            const int i = std::min(static_cast<int>(u), kCells - 1);
            const double t = u - i;
            const double c0 = c_[0][i], c1 = c_[1][i], c2 = c_[2][i], c3 = c_[3][i], c4 = c_[4][i], c5 = c_[5][i];
            double p = std::fma(t, c5, c4);
            p = std::fma(t, p, c3);
            p = std::fma(t, p, c2);
            p = std::fma(t, p, c1);
            p = std::fma(t, p, c0);
            const bool outside = xv >= kLimit || xv <= -kLimit;
            const double phi = outside ? (xv > 0.0 ? 1.0 : 0.0) : p;
            y[k] = xv * phi;
            if constexpr (WithGrad) {
                double dp = std::fma(t, 5.0 * c5, 4.0 * c4);
                dp = std::fma(t, dp, 3.0 * c3);
                dp = std::fma(t, dp, 2.0 * c2);
                dp = std::fma(t, dp, c1) * kPerUnit;
                grad[k] = phi + (outside ? 0.0 : xv * dp);
            }
        }
    }

    alignas(64) double c_[6][kCells];
};

const NormalCdfTable& cdf_table() {
    static const NormalCdfTable table;
    return table;
}

}  // namespace

double gelu(double x) {
    double y;
    cdf_table().gelu(&x, &y, nullptr, 1);
    return y;
}

double gelu_grad(double x) {
    double y, g;
    cdf_table().gelu(&x, &y, &g, 1);
    return g;
}

void ModelConfig::validate() const {
    auto bad = [](const std::string& why) { throw Error(ErrorCode::InvalidConfig, why); };
    if (layers == 0) bad("layers must be positive");
    if (d_model == 0 || heads == 0) bad("d_model and heads must be positive");
    if (d_model % heads != 0) bad("d_model = " + std::to_string(d_model) + " is not divisible by heads = " + std::to_string(heads));
    if (d_ff == 0) bad("d_ff must be positive");
    if (vocab <= static_cast<std::size_t>(token::kFirstContent)) bad("vocab must include content tokens after the specials");
    if (prompt_len == 0) bad("prompt_len must be at least 1");
    if (max_len < prompt_len + 2) bad("max_len must fit [MASK], the prompt and <s>");
    if (!(init_std > 0.0) || !std::isfinite(init_std)) bad("init_std must be positive");
    if (!(weight_gain >= 0.0) || !std::isfinite(weight_gain)) bad("weight_gain must be non-negative");
}

std::uint64_t ModelParams::checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    auto feed = [&](const double* p, Eigen::Index n) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < static_cast<std::size_t>(n) * sizeof(double); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    };
    auto m = [&](const Matrix& x) { feed(x.data(), x.size()); };
    auto v = [&](const Vector& x) { feed(x.data(), x.size()); };
    m(token_emb);
    m(position_emb);
    v(emb_ln_gain);
    v(emb_ln_bias);
    for (const auto& l : layers) {
        m(l.wq), m(l.wk), m(l.wv), m(l.wo);
        v(l.bq), v(l.bk), v(l.bv), v(l.bo);
        v(l.ln1_gain), v(l.ln1_bias);
        m(l.w1), v(l.b1), m(l.w2), v(l.b2);
        v(l.ln2_gain), v(l.ln2_bias);
    }
    m(head_w);
    v(head_b);
    v(head_ln_gain);
    v(head_ln_bias);
    v(out_bias);
    return h;
}

ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(derive_seed(seed, {0x3a9e1}));
    const auto d = static_cast<Eigen::Index>(cfg.d_model);
    const auto ff = static_cast<Eigen::Index>(cfg.d_ff);
    auto draw = [&](Eigen::Index r, Eigen::Index c, double sd) {
        Matrix m(r, c);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd * rng.normal();
        return m;
    };
    auto embedding = [&](Eigen::Index r, Eigen::Index c) { return draw(r, c, cfg.init_std); };
    auto normal = [&](Eigen::Index r, Eigen::Index c, Eigen::Index fan_in) {
        return draw(r, c, cfg.weight_gain > 0.0 ? cfg.weight_gain / std::sqrt(static_cast<double>(fan_in)) : cfg.init_std);
    };
    ModelParams p;
    p.cfg = cfg;
    p.token_emb = embedding(static_cast<Eigen::Index>(cfg.vocab), d);
    p.position_emb = embedding(static_cast<Eigen::Index>(cfg.max_len), d);
    p.emb_ln_gain = Vector::Ones(d);
    p.emb_ln_bias = Vector::Zero(d);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        LayerParams L;
        L.wq = normal(d, d, d);
        L.wk = normal(d, d, d);
        L.wv = normal(d, d, d);
        L.wo = normal(d, d, d);
        L.bq = L.bk = L.bv = L.bo = Vector::Zero(d);
        L.ln1_gain = L.ln2_gain = Vector::Ones(d);
        L.ln1_bias = L.ln2_bias = Vector::Zero(d);
        L.w1 = normal(ff, d, d);
        L.b1 = Vector::Zero(ff);
        L.w2 = normal(ff, d, ff);
        L.b2 = Vector::Zero(d);
        p.layers.push_back(std::move(L));
    }
    p.head_w = normal(d, d, d);
    p.head_b = Vector::Zero(d);
    p.head_ln_gain = Vector::Ones(d);
    p.head_ln_bias = Vector::Zero(d);
    p.out_bias = Vector::Zero(static_cast<Eigen::Index>(cfg.vocab));
    return p;
}

AblationMask::AblationMask(std::vector<std::size_t> indices, std::size_t total_neurons) : indices_(std::move(indices)) {
    std::set<std::size_t> seen;
    for (auto i : indices_) {
        if (i >= total_neurons)
            throw Error(ErrorCode::IndexOutOfRange, "mask index " + std::to_string(i) + " >= " + std::to_string(total_neurons));
        if (!seen.insert(i).second) throw Error(ErrorCode::DuplicateName, "mask index " + std::to_string(i) + " repeated");
    }
}

std::vector<std::vector<std::size_t>> AblationMask::by_layer(std::size_t layers, std::size_t d_ff) const {
    std::vector<std::vector<std::size_t>> out(layers);
    for (auto i : indices_) {
        if (i >= layers * d_ff) throw Error(ErrorCode::IndexOutOfRange, "mask index " + std::to_string(i) + " outside the model");
        out[i / d_ff].push_back(i % d_ff);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Forward / backward engine over a stack of sequences

namespace {

struct Span {
    Eigen::Index offset;
    Eigen::Index length;
};

struct LnCache {
    Matrix xhat;
    Vector rstd;
};

struct LayerCache {
    bool tail = false;  // only the [MASK] rows were carried through this layer
    Matrix q, k, v;
    std::vector<Matrix> probs;  // [seq * heads + head]
    Matrix ctx;
    LnCache ln1;
    Matrix h1, pre, dgelu;
    LnCache ln2;
};

struct Trace {
    bool keep = true;  // retain what the backward pass needs
    Eigen::Index rows = 0;
    std::vector<Span> spans;
    std::vector<std::vector<std::size_t>> masked;
    LnCache emb_ln;
    std::vector<LayerCache> layers;
    Matrix head_in, head_u, head_dgelu;
    LnCache head_ln;
    Matrix head_z;
    std::vector<Logits> logits;
    Matrix captured;
};

void layer_norm(const Matrix& x, const Vector& gain, const Vector& bias, Matrix& y, LnCache* cache) {
    const Eigen::Index rows = x.rows(), d = x.cols();
    y.resize(rows, d);
    if (cache) {
        cache->xhat.resize(rows, d);
        cache->rstd.resize(rows);
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
        const double mu = x.row(r).mean();
        const double var = (x.row(r).array() - mu).square().mean();
        const double rstd = 1.0 / std::sqrt(var + kLnEps);
        for (Eigen::Index c = 0; c < d; ++c) {
            const double xh = (x(r, c) - mu) * rstd;
            y(r, c) = xh * gain[c] + bias[c];
            if (cache) cache->xhat(r, c) = xh;
        }
        if (cache) cache->rstd[r] = rstd;
    }
}

Matrix layer_norm_backward(const Matrix& dy, const Vector& gain, const LnCache& cache) {
    const Eigen::Index rows = dy.rows(), d = dy.cols();
    Matrix dx(rows, d);
    for (Eigen::Index r = 0; r < rows; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (Eigen::Index c = 0; c < d; ++c) {
            const double g = dy(r, c) * gain[c];
            m1 += g;
            m2 += g * cache.xhat(r, c);
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        for (Eigen::Index c = 0; c < d; ++c) dx(r, c) = cache.rstd[r] * (dy(r, c) * gain[c] - m1 - cache.xhat(r, c) * m2);
    }
    return dx;
}

void add_row(Matrix& m, const Vector& b) { m.rowwise() += b.transpose(); }

// out = gelu(pre); grad keeps d gelu / d pre for the backward pass when requested.
void gelu_rows(const Matrix& pre, Matrix& out, Matrix* grad) {
    out.resize(pre.rows(), pre.cols());
    if (grad) grad->resize(pre.rows(), pre.cols());
    cdf_table().gelu(pre.data(), out.data(), grad ? grad->data() : nullptr, pre.size());
}

void check_prompt(const ModelParams& params, const Matrix& prompt) {
    if (prompt.rows() != static_cast<Eigen::Index>(params.cfg.prompt_len) || prompt.cols() != static_cast<Eigen::Index>(params.cfg.d_model))
        throw Error(ErrorCode::InvalidConfig, "prompt shape does not match the model");
    if (!prompt.allFinite()) throw Error(ErrorCode::NonFiniteValue, "prompt contains a non-finite value");
}

Matrix embed(const ModelParams& params, const Matrix& prompt, const std::vector<std::span<const int>>& texts, std::vector<Span>& spans) {
    const auto& cfg = params.cfg;
    const auto l = static_cast<Eigen::Index>(cfg.prompt_len);
    Eigen::Index total = 0;
    spans.clear();
    for (const auto& t : texts) {
        const auto len = l + 2 + static_cast<Eigen::Index>(t.size());
        if (len > static_cast<Eigen::Index>(cfg.max_len))
            throw Error(ErrorCode::SequenceTooLong, "sequence of " + std::to_string(len) + " positions exceeds max_len " + std::to_string(cfg.max_len));
        for (int tok : t)
            if (tok < token::kFirstContent || tok >= static_cast<int>(cfg.vocab))
                throw Error(ErrorCode::UnknownToken, "token id " + std::to_string(tok) + " is not a content token");
        spans.push_back({total, len});
        total += len;
    }
    Matrix x(total, static_cast<Eigen::Index>(cfg.d_model));
    for (std::size_t s = 0; s < texts.size(); ++s) {
        const Eigen::Index o = spans[s].offset;
        x.row(o) = params.token_emb.row(token::kMask);
        x.block(o + 1, 0, l, x.cols()) = prompt;
        x.row(o + l + 1) = params.token_emb.row(token::kBos);
        for (std::size_t i = 0; i < texts[s].size(); ++i)
            x.row(o + l + 2 + static_cast<Eigen::Index>(i)) = params.token_emb.row(texts[s][i]);
        x.block(o, 0, spans[s].length, x.cols()) += params.position_emb.topRows(spans[s].length);
    }
    return x;
}

void forward(const ModelParams& params, const Matrix& x, const std::vector<std::vector<std::size_t>>& masked, bool capture,
             const FfnHook& hook, Trace& tr) {
    const auto& cfg = params.cfg;
    const auto d = static_cast<Eigen::Index>(cfg.d_model);
    const auto heads = static_cast<Eigen::Index>(cfg.heads);
    const Eigen::Index dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto ff = static_cast<Eigen::Index>(cfg.d_ff);

    tr.masked = masked;
    Matrix h;
    layer_norm(x, params.emb_ln_gain, params.emb_ln_bias, h, (tr.keep ? &tr.emb_ln : nullptr));
    tr.layers.resize(cfg.layers);
    if (capture) tr.captured.resize(x.rows(), ff * static_cast<Eigen::Index>(cfg.layers));

    tr.rows = x.rows();
    const auto batch = static_cast<Eigen::Index>(tr.spans.size());
    for (std::size_t li = 0; li < cfg.layers; ++li) {
        const auto& L = params.layers[li];
        auto& c = tr.layers[li];
        // Past the last attention only the [MASK] rows reach the head, so the final
        // layer carries just those unless every position is being observed.
        c.tail = li + 1 == cfg.layers && !capture && !hook;
        Matrix hq;
        if (c.tail) {
            hq.resize(batch, d);
            for (Eigen::Index s = 0; s < batch; ++s) hq.row(s) = h.row(tr.spans[static_cast<std::size_t>(s)].offset);
        }
        const Matrix& hrows = c.tail ? hq : h;
        c.q.noalias() = hrows * L.wq;
        add_row(c.q, L.bq);
        c.k.noalias() = h * L.wk;
        add_row(c.k, L.bk);
        c.v.noalias() = h * L.wv;
        add_row(c.v, L.bv);
        c.ctx.resize(hrows.rows(), d);
        c.probs.resize(tr.spans.size() * static_cast<std::size_t>(heads));
        for (std::size_t s = 0; s < tr.spans.size(); ++s) {
            const auto [o, n] = tr.spans[s];
            const Eigen::Index qo = c.tail ? static_cast<Eigen::Index>(s) : o;
            const Eigen::Index qn = c.tail ? 1 : n;
            for (Eigen::Index hd = 0; hd < heads; ++hd) {
                auto& a = c.probs[s * static_cast<std::size_t>(heads) + static_cast<std::size_t>(hd)];
                a.noalias() = c.q.block(qo, hd * dh, qn, dh) * c.k.block(o, hd * dh, n, dh).transpose();
                a *= scale;
                for (Eigen::Index r = 0; r < qn; ++r) {
                    const double mx = a.row(r).maxCoeff();
                    a.row(r) = (a.row(r).array() - mx).exp();
                    a.row(r) /= a.row(r).sum();
                }
                c.ctx.block(qo, hd * dh, qn, dh).noalias() = a * c.v.block(o, hd * dh, n, dh);
            }
        }
        Matrix r1 = hrows;
        r1.noalias() += c.ctx * L.wo;
        add_row(r1, L.bo);
        layer_norm(r1, L.ln1_gain, L.ln1_bias, c.h1, (tr.keep ? &c.ln1 : nullptr));

        c.pre.noalias() = c.h1 * L.w1.transpose();
        add_row(c.pre, L.b1);
        for (auto n : masked[li]) c.pre.col(static_cast<Eigen::Index>(n)).setZero();
        if (capture) tr.captured.middleCols(static_cast<Eigen::Index>(li) * ff, ff) = c.pre;
        Matrix act;
        gelu_rows(c.pre, act, tr.keep ? &c.dgelu : nullptr);
        Matrix f = act * L.w2;
        add_row(f, L.b2);
        if (hook) hook(li, c.pre, f);
        Matrix r2 = c.h1 + f;
        layer_norm(r2, L.ln2_gain, L.ln2_bias, h, (tr.keep ? &c.ln2 : nullptr));
    }

    // Verbalizer head at each sequence's [MASK] position.
    const bool compact = !tr.layers.empty() && tr.layers.back().tail;
    tr.head_in.resize(batch, d);
    for (Eigen::Index s = 0; s < batch; ++s) tr.head_in.row(s) = h.row(compact ? s : tr.spans[static_cast<std::size_t>(s)].offset);
    tr.head_u.noalias() = tr.head_in * params.head_w;
    add_row(tr.head_u, params.head_b);
    Matrix a;
    gelu_rows(tr.head_u, a, tr.keep ? &tr.head_dgelu : nullptr);
    layer_norm(a, params.head_ln_gain, params.head_ln_bias, tr.head_z, (tr.keep ? &tr.head_ln : nullptr));
    tr.logits.resize(static_cast<std::size_t>(batch));
    const auto yes = params.token_emb.row(token::kYes);
    const auto no = params.token_emb.row(token::kNo);
    for (Eigen::Index s = 0; s < batch; ++s) {
        tr.logits[static_cast<std::size_t>(s)].yes = tr.head_z.row(s).dot(yes) + params.out_bias[token::kYes];
        tr.logits[static_cast<std::size_t>(s)].no = tr.head_z.row(s).dot(no) + params.out_bias[token::kNo];
    }
}

// d loss / d input embeddings, given d loss / d logits per sequence.
Matrix backward(const ModelParams& params, const Trace& tr, const std::vector<std::pair<double, double>>& dlogits) {
    const auto& cfg = params.cfg;
    const auto d = static_cast<Eigen::Index>(cfg.d_model);
    const auto heads = static_cast<Eigen::Index>(cfg.heads);
    const Eigen::Index dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto batch = static_cast<Eigen::Index>(tr.spans.size());

    Matrix dz(batch, d);
    for (Eigen::Index s = 0; s < batch; ++s)
        dz.row(s) = dlogits[static_cast<std::size_t>(s)].first * params.token_emb.row(token::kYes) +
                    dlogits[static_cast<std::size_t>(s)].second * params.token_emb.row(token::kNo);
    const Matrix da = layer_norm_backward(dz, params.head_ln_gain, tr.head_ln);
    const Matrix du = da.cwiseProduct(tr.head_dgelu);
    const Matrix dhead = du * params.head_w.transpose();

    const Eigen::Index rows = tr.rows;
    Matrix dh_out;
    if (!tr.layers.empty() && tr.layers.back().tail) {
        dh_out = dhead;
    } else {
        dh_out = Matrix::Zero(rows, d);
        for (Eigen::Index s = 0; s < batch; ++s) dh_out.row(tr.spans[static_cast<std::size_t>(s)].offset) = dhead.row(s);
    }

    for (std::size_t li = cfg.layers; li-- > 0;) {
        const auto& L = params.layers[li];
        const auto& c = tr.layers[li];
        const Matrix dr2 = layer_norm_backward(dh_out, L.ln2_gain, c.ln2);
        Matrix dh1 = dr2;
        const Matrix dact = dr2 * L.w2.transpose();
        Matrix dpre = dact.cwiseProduct(c.dgelu);
        for (auto n : tr.masked[li]) dpre.col(static_cast<Eigen::Index>(n)).setZero();
        dh1.noalias() += dpre * L.w1;
        const Matrix dr1 = layer_norm_backward(dh1, L.ln1_gain, c.ln1);
        const Matrix dctx = dr1 * L.wo.transpose();
        Matrix dq(dr1.rows(), d), dk(rows, d), dv(rows, d);
        for (std::size_t s = 0; s < tr.spans.size(); ++s) {
            const auto [o, n] = tr.spans[s];
            const Eigen::Index qo = c.tail ? static_cast<Eigen::Index>(s) : o;
            const Eigen::Index qn = c.tail ? 1 : n;
            for (Eigen::Index hd = 0; hd < heads; ++hd) {
                const auto& a = c.probs[s * static_cast<std::size_t>(heads) + static_cast<std::size_t>(hd)];
                const auto dctx_b = dctx.block(qo, hd * dh, qn, dh);
                Matrix dA = dctx_b * c.v.block(o, hd * dh, n, dh).transpose();
                dv.block(o, hd * dh, n, dh).noalias() = a.transpose() * dctx_b;
                Matrix dS(qn, n);
                for (Eigen::Index r = 0; r < qn; ++r) {
                    const double dot = a.row(r).dot(dA.row(r));
                    dS.row(r) = a.row(r).array() * (dA.row(r).array() - dot);
                }
                dS *= scale;
                dq.block(qo, hd * dh, qn, dh).noalias() = dS * c.k.block(o, hd * dh, n, dh);
                dk.block(o, hd * dh, n, dh).noalias() = dS.transpose() * c.q.block(qo, hd * dh, qn, dh);
            }
        }
        Matrix dres(rows, d);
        dres.noalias() = dk * L.wk.transpose();
        dres.noalias() += dv * L.wv.transpose();
        Matrix dqrows = dr1;
        dqrows.noalias() += dq * L.wq.transpose();
        if (c.tail) {
            for (Eigen::Index s = 0; s < batch; ++s) dres.row(tr.spans[static_cast<std::size_t>(s)].offset) += dqrows.row(s);
        } else {
            dres += dqrows;
        }
        dh_out = std::move(dres);
    }
    return layer_norm_backward(dh_out, params.emb_ln_gain, tr.emb_ln);
}

std::vector<std::span<const int>> texts_of(std::span<const Example> batch) {
    std::vector<std::span<const int>> out;
    out.reserve(batch.size());
    for (const auto& e : batch) out.emplace_back(e.tokens);
    return out;
}

std::vector<std::vector<std::size_t>> no_mask(std::size_t layers) { return std::vector<std::vector<std::size_t>>(layers); }

double two_way_loss(const Logits& lg, bool label, double* dyes, double* dno) {
    const double mx = std::max(lg.yes, lg.no);
    const double ey = std::exp(lg.yes - mx), en = std::exp(lg.no - mx);
    const double lse = mx + std::log(ey + en);
    const double py = ey / (ey + en), pn = en / (ey + en);
    if (dyes) *dyes = py - (label ? 1.0 : 0.0);
    if (dno) *dno = pn - (label ? 0.0 : 1.0);
    return lse - (label ? lg.yes : lg.no);
}

}  // namespace

ForwardResult forward_mlm(const ModelParams& params, const PromptState& prompt, std::span<const int> tokens, const AblationMask& mask,
                          bool capture, const FfnHook& hook) {
    check_prompt(params, prompt.embeddings);
    Trace tr;
    tr.keep = false;
    const Matrix x = embed(params, prompt.embeddings, {tokens}, tr.spans);
    forward(params, x, mask.by_layer(params.cfg.layers, params.cfg.d_ff), capture, hook, tr);
    return {tr.logits[0], capture ? std::move(tr.captured) : Matrix()};
}

std::vector<Logits> forward_batch(const ModelParams& params, const Matrix& prompt, std::span<const Example> batch, const AblationMask& mask) {
    check_prompt(params, prompt);
    Trace tr;
    tr.keep = false;
    const Matrix x = embed(params, prompt, texts_of(batch), tr.spans);
    forward(params, x, mask.by_layer(params.cfg.layers, params.cfg.d_ff), false, {}, tr);
    return tr.logits;
}

double loss_only(const ModelParams& params, const Matrix& prompt, std::span<const Example> batch) {
    if (batch.empty()) throw Error(ErrorCode::EmptyDataset, "empty batch");
    const auto logits = forward_batch(params, prompt, batch);
    double loss = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) loss += two_way_loss(logits[i], batch[i].label, nullptr, nullptr);
    return loss / static_cast<double>(batch.size());
}

LossGrad loss_and_grad(const ModelParams& params, const Matrix& prompt, std::span<const Example> batch) {
    if (batch.empty()) throw Error(ErrorCode::EmptyDataset, "empty batch");
    check_prompt(params, prompt);
    Trace tr;
    const Matrix x = embed(params, prompt, texts_of(batch), tr.spans);
    forward(params, x, no_mask(params.cfg.layers), false, {}, tr);
    const double inv = 1.0 / static_cast<double>(batch.size());
    std::vector<std::pair<double, double>> dlogits(batch.size());
    LossGrad out;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        double dy = 0.0, dn = 0.0;
        out.loss += two_way_loss(tr.logits[i], batch[i].label, &dy, &dn) * inv;
        dlogits[i] = {dy * inv, dn * inv};
    }
    const Matrix dx = backward(params, tr, dlogits);
    const auto l = static_cast<Eigen::Index>(params.cfg.prompt_len);
    out.grad = Matrix::Zero(l, dx.cols());
    for (const auto& sp : tr.spans) out.grad += dx.block(sp.offset + 1, 0, l, dx.cols());
    return out;
}

PromptState train_prompt(const ModelParams& params, const Dataset& train, std::uint64_t seed, const TrainHyper& hyper, const std::string& task) {
    if (train.empty()) throw Error(ErrorCode::EmptyDataset, "training split is empty");
    if (hyper.batch == 0) throw Error(ErrorCode::InvalidConfig, "batch size must be positive");
    const auto& cfg = params.cfg;
    Rng rng(derive_seed(seed, {0x9e7}));
    PromptState ps;
    ps.task = task;
    ps.seed = seed;
    ps.hyper = hyper;
    ps.embeddings.resize(static_cast<Eigen::Index>(cfg.prompt_len), static_cast<Eigen::Index>(cfg.d_model));
    for (Eigen::Index i = 0; i < ps.embeddings.size(); ++i) ps.embeddings.data()[i] = cfg.init_std * rng.normal();

    Matrix m1 = Matrix::Zero(ps.embeddings.rows(), ps.embeddings.cols());
    Matrix m2 = m1;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Dataset batch;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
            const std::size_t stop = std::min(order.size(), start + hyper.batch);
            batch.clear();
            for (std::size_t i = start; i < stop; ++i) batch.push_back(train[order[i]]);
            const auto lg = loss_and_grad(params, ps.embeddings, batch);
            if (!std::isfinite(lg.loss) || !lg.grad.allFinite())
                throw Error(ErrorCode::DivergenceDetected, "loss became non-finite at epoch " + std::to_string(epoch));
            ++step;
            m1 = hyper.beta1 * m1 + (1.0 - hyper.beta1) * lg.grad;
            m2 = hyper.beta2 * m2 + (1.0 - hyper.beta2) * lg.grad.cwiseProduct(lg.grad);
            const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
            ps.embeddings.array() -= hyper.lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + hyper.eps);
        }
    }
    return ps;
}

double evaluate(const ModelParams& params, const PromptState& prompt, const Dataset& test, const AblationMask& mask) {
    if (test.empty()) throw Error(ErrorCode::EmptyDataset, "test split is empty");
    std::size_t correct = 0;
    constexpr std::size_t kChunk = 64;
    for (std::size_t start = 0; start < test.size(); start += kChunk) {
        const std::span<const Example> part(test.data() + start, std::min(kChunk, test.size() - start));
        const auto logits = forward_batch(params, prompt.embeddings, part, mask);
        for (std::size_t i = 0; i < part.size(); ++i) correct += logits[i].predicts_yes() == part[i].label;
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

std::vector<double> extract_activations(const ModelParams& params, const PromptState& prompt) {
    const auto res = forward_mlm(params, prompt, {}, {}, true);
    const Eigen::VectorXd mean = res.activations.colwise().mean().transpose();
    return {mean.data(), mean.data() + mean.size()};
}

}  // namespace nrsa::toylm
