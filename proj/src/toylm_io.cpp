#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <sstream>

#include "nrsa/dataio.hpp"
#include "nrsa/error.hpp"
#include "nrsa/toylm.hpp"

namespace nrsa::toylm {

namespace {

constexpr std::string_view kModelMagic = "MODL1\n";
constexpr std::string_view kPromptMagic = "PRMT1\n";

class Writer {
public:
    explicit Writer(std::string_view magic) : out_(magic) {}
    void u32(std::uint64_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u32(s.size());
        out_ += s;
    }
    void matrix(const Matrix& m) {
        u32(static_cast<std::uint64_t>(m.rows()));
        u32(static_cast<std::uint64_t>(m.cols()));
        for (Eigen::Index i = 0; i < m.size(); ++i) f64(m.data()[i]);
    }
    void vector(const Vector& v) {
        u32(static_cast<std::uint64_t>(v.size()));
        for (Eigen::Index i = 0; i < v.size(); ++i) f64(v[i]);
    }
    const std::string& bytes() const { return out_; }

private:
    std::string out_;
};

class Reader {
public:
    Reader(std::string data, std::string_view magic, std::string source) : data_(std::move(data)), source_(std::move(source)) {
        if (data_.compare(0, magic.size(), magic) != 0) throw Error(ErrorCode::BadMagic, source_ + ": wrong file type");
        pos_ = magic.size();
    }
    std::uint64_t uint(int bytes) {
        if (data_.size() - pos_ < static_cast<std::size_t>(bytes)) throw Error(ErrorCode::TruncatedFile, source_ + ": unexpected end of file");
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
        pos_ += static_cast<std::size_t>(bytes);
        return v;
    }
    std::uint64_t u32() { return uint(4); }
    std::uint64_t u64() { return uint(8); }
    double f64() {
        const double v = std::bit_cast<double>(u64());
        if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, source_ + ": non-finite parameter");
        return v;
    }
    std::string str() {
        const auto n = u32();
        if (data_.size() - pos_ < n) throw Error(ErrorCode::TruncatedFile, source_ + ": unexpected end of file");
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    Matrix matrix(Eigen::Index rows, Eigen::Index cols) {
        if (static_cast<Eigen::Index>(u32()) != rows || static_cast<Eigen::Index>(u32()) != cols)
            throw Error(ErrorCode::InvalidConfig, source_ + ": matrix shape does not match the configuration");
        Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = f64();
        return m;
    }
    Vector vector(Eigen::Index n) {
        if (static_cast<Eigen::Index>(u32()) != n) throw Error(ErrorCode::InvalidConfig, source_ + ": vector length does not match the configuration");
        Vector v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = f64();
        return v;
    }
    void finish() const {
        if (pos_ != data_.size()) throw Error(ErrorCode::TruncatedFile, source_ + ": trailing bytes");
    }

private:
    std::string data_;
    std::string source_;
    std::size_t pos_ = 0;
};

void write_hyper(Writer& w, const TrainHyper& h) {
    w.f64(h.lr);
    w.f64(h.beta1);
    w.f64(h.beta2);
    w.f64(h.eps);
    w.u32(h.epochs);
    w.u32(h.batch);
}

TrainHyper read_hyper(Reader& r) {
    TrainHyper h;
    h.lr = r.f64();
    h.beta1 = r.f64();
    h.beta2 = r.f64();
    h.eps = r.f64();
    h.epochs = r.u32();
    h.batch = r.u32();
    return h;
}

}  // namespace

void save_model(const ModelParams& p, const std::filesystem::path& path) {
    const auto& c = p.cfg;
    Writer w(kModelMagic);
    for (auto v : {c.layers, c.d_model, c.heads, c.d_ff, c.vocab, c.max_len, c.prompt_len}) w.u32(v);
    w.f64(c.init_std);
    w.f64(c.weight_gain);
    w.matrix(p.token_emb);
    w.matrix(p.position_emb);
    w.vector(p.emb_ln_gain);
    w.vector(p.emb_ln_bias);
    for (const auto& L : p.layers) {
        for (const Matrix* m : {&L.wq, &L.wk, &L.wv, &L.wo}) w.matrix(*m);
        for (const Vector* v : {&L.bq, &L.bk, &L.bv, &L.bo, &L.ln1_gain, &L.ln1_bias}) w.vector(*v);
        w.matrix(L.w1);
        w.vector(L.b1);
        w.matrix(L.w2);
        w.vector(L.b2);
        w.vector(L.ln2_gain);
        w.vector(L.ln2_bias);
    }
    w.matrix(p.head_w);
    w.vector(p.head_b);
    w.vector(p.head_ln_gain);
    w.vector(p.head_ln_bias);
    w.vector(p.out_bias);
    dataio::write_text(path, w.bytes());
}

ModelParams load_model(const std::filesystem::path& path) {
    Reader r(dataio::read_text(path), kModelMagic, path.string());
    ModelParams p;
    auto& c = p.cfg;
    for (auto* v : {&c.layers, &c.d_model, &c.heads, &c.d_ff, &c.vocab, &c.max_len, &c.prompt_len}) *v = r.u32();
    c.init_std = r.f64();
    c.weight_gain = r.f64();
    c.validate();
    const auto d = static_cast<Eigen::Index>(c.d_model), ff = static_cast<Eigen::Index>(c.d_ff);
    p.token_emb = r.matrix(static_cast<Eigen::Index>(c.vocab), d);
    p.position_emb = r.matrix(static_cast<Eigen::Index>(c.max_len), d);
    p.emb_ln_gain = r.vector(d);
    p.emb_ln_bias = r.vector(d);
    for (std::size_t l = 0; l < c.layers; ++l) {
        LayerParams L;
        for (Matrix* m : {&L.wq, &L.wk, &L.wv, &L.wo}) *m = r.matrix(d, d);
        for (Vector* v : {&L.bq, &L.bk, &L.bv, &L.bo, &L.ln1_gain, &L.ln1_bias}) *v = r.vector(d);
        L.w1 = r.matrix(ff, d);
        L.b1 = r.vector(ff);
        L.w2 = r.matrix(ff, d);
        L.b2 = r.vector(d);
        L.ln2_gain = r.vector(d);
        L.ln2_bias = r.vector(d);
        p.layers.push_back(std::move(L));
    }
    p.head_w = r.matrix(d, d);
    p.head_b = r.vector(d);
    p.head_ln_gain = r.vector(d);
    p.head_ln_bias = r.vector(d);
    p.out_bias = r.vector(static_cast<Eigen::Index>(c.vocab));
    r.finish();
    return p;
}

void save_prompt(const PromptState& prompt, const std::filesystem::path& path) {
    if (!prompt.embeddings.allFinite()) throw Error(ErrorCode::NonFiniteValue, "prompt contains a non-finite value");
    Writer w(kPromptMagic);
    w.str(prompt.task);
    w.u64(prompt.seed);
    write_hyper(w, prompt.hyper);
    w.matrix(prompt.embeddings);
    dataio::write_text(path, w.bytes());
}

PromptState load_prompt(const std::filesystem::path& path) {
    Reader r(dataio::read_text(path), kPromptMagic, path.string());
    PromptState p;
    p.task = r.str();
    p.seed = r.u64();
    p.hyper = read_hyper(r);
    const auto rows = static_cast<Eigen::Index>(r.u32());
    const auto cols = static_cast<Eigen::Index>(r.u32());
    p.embeddings.resize(rows, cols);
    for (Eigen::Index i = 0; i < p.embeddings.size(); ++i) p.embeddings.data()[i] = r.f64();
    r.finish();
    return p;
}

void write_dataset(const Dataset& data, const std::filesystem::path& path) {
    std::string out = "tokens,label\n";
    for (const auto& e : data) {
        for (std::size_t i = 0; i < e.tokens.size(); ++i) {
            if (i) out += ' ';
            out += std::to_string(e.tokens[i]);
        }
        out += e.label ? ",yes\n" : ",no\n";
    }
    dataio::write_text(path, out);
}

Dataset read_dataset(const std::filesystem::path& path) {
    const auto csv = dataio::read_csv(path);
    if (csv.header != std::vector<std::string>{"tokens", "label"}) throw Error(ErrorCode::MalformedCsv, path.string() + ": expected header tokens,label");
    Dataset data;
    for (std::size_t r = 0; r < csv.rows.size(); ++r) {
        const auto& c = csv.rows[r];
        Example e;
        std::istringstream in(c[0]);
        std::string tok;
        while (in >> tok) {
            int v = 0;
            auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
            if (ec != std::errc() || ptr != tok.data() + tok.size())
                throw Error(ErrorCode::MalformedCsv, "row " + std::to_string(r + 1) + ", column 'tokens': bad token '" + tok + "'");
            e.tokens.push_back(v);
        }
        if (c[1] == "yes") e.label = true;
        else if (c[1] == "no") e.label = false;
        else throw Error(ErrorCode::MalformedCsv, "row " + std::to_string(r + 1) + ", column 'label': expected yes or no");
        data.push_back(std::move(e));
    }
    return data;
}

}  // namespace nrsa::toylm
