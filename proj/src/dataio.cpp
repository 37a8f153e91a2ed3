#include "nrsa/dataio.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nrsa/error.hpp"

namespace nrsa {

std::size_t RatingTable::attribute_index(const std::string& name) const {
    for (std::size_t i = 0; i < attributes.size(); ++i)
        if (attributes[i] == name) return i;
    throw Error(ErrorCode::UnknownAttribute, "no attribute named '" + name + "'");
}

std::vector<double> RatingTable::column(std::size_t attribute) const {
    std::vector<double> out(concepts.size());
    for (std::size_t c = 0; c < concepts.size(); ++c) out[c] = scores(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(attribute));
    return out;
}

namespace {

void require_unique(const std::vector<std::string>& names, std::string_view what) {
    std::set<std::string> seen;
    for (const auto& n : names)
        if (!seen.insert(n).second) throw Error(ErrorCode::DuplicateName, std::string(what) + " '" + n + "' appears twice");
}

}  // namespace

void RatingTable::validate() const {
    if (concepts.empty() || attributes.empty()) throw Error(ErrorCode::EmptyTable, "rating table has no rows or no attributes");
    if (scores.rows() != static_cast<Eigen::Index>(concepts.size()) || scores.cols() != static_cast<Eigen::Index>(attributes.size()))
        throw Error(ErrorCode::MalformedCsv, "rating table shape does not match its name lists");
    require_unique(concepts, "concept");
    require_unique(attributes, "attribute");
    if (!scores.allFinite()) throw Error(ErrorCode::NonFiniteValue, "rating table contains a non-finite score");
}

void ActivationTensor::validate() const {
    if (neurons == 0) throw Error(ErrorCode::InvalidConfig, "activation tensor has no neurons");
    if (values.size() != seeds * concepts.size() * neurons)
        throw Error(ErrorCode::TruncatedFile, "activation tensor value count does not match its dimensions");
    for (std::size_t i = 0; i < values.size(); ++i)
        if (!std::isfinite(values[i])) throw Error(ErrorCode::NonFiniteValue, "activation value " + std::to_string(i) + " is not finite");
}

namespace dataio {

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, std::string_view content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

namespace {

std::vector<std::string> split(std::string_view line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            cells.emplace_back(line.substr(start));
            return cells;
        }
        cells.emplace_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

}  // namespace

CsvTable read_csv(const fs::path& path) {
    const std::string text = read_text(path);
    if (text.find('\r') != std::string::npos) throw Error(ErrorCode::MalformedCsv, path.string() + ": CR line endings are not accepted");
    CsvTable table;
    std::size_t pos = 0, line_no = 0;
    bool have_header = false;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        std::string_view line(text.data() + pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (line.empty()) {
            if (pos < text.size()) throw Error(ErrorCode::MalformedCsv, path.string() + ": blank line " + std::to_string(line_no));
            continue;
        }
        auto cells = split(line);
        if (!have_header) {
            table.header = std::move(cells);
            have_header = true;
            continue;
        }
        if (cells.size() != table.header.size())
            throw Error(ErrorCode::MalformedCsv, path.string() + ": row " + std::to_string(line_no - 1) + " has " +
                                                     std::to_string(cells.size()) + " cells, header has " +
                                                     std::to_string(table.header.size()));
        table.rows.push_back(std::move(cells));
    }
    if (!have_header) throw Error(ErrorCode::EmptyTable, path.string() + ": file is empty");
    return table;
}

double parse_number(std::string_view cell, std::size_t row, std::string_view column) {
    double v = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    if (!cell.empty() && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (cell.empty() || ec != std::errc() || ptr != last || !std::isfinite(v))
        throw Error(ErrorCode::MalformedCsv, "row " + std::to_string(row) + ", column '" + std::string(column) +
                                                 "': not a number: '" + std::string(cell) + "'");
    return v;
}

std::string format_number(double value) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    (void)ec;
    return std::string(buf.data(), ptr);
}

RatingTable read_rating_table(const fs::path& path) {
    const auto csv = read_csv(path);
    if (csv.header.empty() || csv.header[0] != "concept")
        throw Error(ErrorCode::MalformedCsv, path.string() + ": header must start with 'concept'");
    RatingTable t;
    t.attributes.assign(csv.header.begin() + 1, csv.header.end());
    for (const auto& a : t.attributes)
        if (a.empty()) throw Error(ErrorCode::MalformedCsv, path.string() + ": empty attribute name in header");
    if (csv.rows.empty() || t.attributes.empty()) throw Error(ErrorCode::EmptyTable, path.string() + ": no ratings");
    t.scores.resize(static_cast<Eigen::Index>(csv.rows.size()), static_cast<Eigen::Index>(t.attributes.size()));
    for (std::size_t r = 0; r < csv.rows.size(); ++r) {
        t.concepts.push_back(csv.rows[r][0]);
        for (std::size_t a = 0; a < t.attributes.size(); ++a)
            t.scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(a)) = parse_number(csv.rows[r][a + 1], r + 1, t.attributes[a]);
    }
    t.validate();
    return t;
}

void write_rating_table(const RatingTable& table, const fs::path& path) {
    table.validate();
    std::string out = "concept";
    for (const auto& a : table.attributes) out += "," + a;
    out += "\n";
    for (std::size_t c = 0; c < table.concepts.size(); ++c) {
        out += table.concepts[c];
        for (std::size_t a = 0; a < table.attributes.size(); ++a)
            out += "," + format_number(table.scores(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(a)));
        out += "\n";
    }
    write_text(path, out);
}

// ---------------------------------------------------------------------------
// Binary activation container

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f64(std::string& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

class ByteReader {
public:
    ByteReader(const std::string& data, std::string source) : data_(data), source_(std::move(source)) {}

    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw Error(ErrorCode::TruncatedFile, source_ + ": unexpected end of file at byte " + std::to_string(pos_));
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
        pos_ += 4;
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
        pos_ += 8;
        return std::bit_cast<double>(v);
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == data_.size(); }

private:
    const std::string& data_;
    std::string source_;
    std::size_t pos_ = 0;
};

}  // namespace

ActivationTensor read_activation_tensor(const fs::path& path) {
    const std::string data = read_text(path);
    if (data.size() < kActivationMagic.size() || data.compare(0, kActivationMagic.size(), kActivationMagic) != 0)
        throw Error(ErrorCode::BadMagic, path.string() + ": not an ACTV1 activation file");
    const std::string body = data.substr(kActivationMagic.size());
    ByteReader in(body, path.string());
    ActivationTensor t;
    t.seeds = in.u32();
    const std::uint32_t n_concepts = in.u32();
    t.neurons = in.u32();
    for (std::uint32_t c = 0; c < n_concepts; ++c) t.concepts.push_back(in.bytes(in.u32()));
    const std::size_t count = t.seeds * t.concepts.size() * t.neurons;
    in.need(count * 8);
    t.values.resize(count);
    for (auto& v : t.values) {
        v = in.f64();
        if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, path.string() + ": non-finite activation value");
    }
    if (!in.done()) throw Error(ErrorCode::TruncatedFile, path.string() + ": trailing bytes after payload");
    t.validate();
    return t;
}

void write_activation_tensor(const ActivationTensor& tensor, const fs::path& path) {
    tensor.validate();
    std::string out(kActivationMagic);
    put_u32(out, static_cast<std::uint32_t>(tensor.seeds));
    put_u32(out, static_cast<std::uint32_t>(tensor.concepts.size()));
    put_u32(out, static_cast<std::uint32_t>(tensor.neurons));
    for (const auto& c : tensor.concepts) {
        put_u32(out, static_cast<std::uint32_t>(c.size()));
        out += c;
    }
    for (double v : tensor.values) put_f64(out, v);
    write_text(path, out);
}

// ---------------------------------------------------------------------------
// Similarity judgments

std::span<const std::string> default_excluded() {
    static const std::array<std::string, 1> kExcluded{"neutral"};
    return kExcluded;
}

std::vector<SimilarityJudgment> read_similarity_rows(const fs::path& path) {
    const auto csv = read_csv(path);
    const std::vector<std::string> expected{"participant_id", "concept_a", "concept_b", "similarity"};
    if (csv.header != expected) throw Error(ErrorCode::MalformedCsv, path.string() + ": expected header participant_id,concept_a,concept_b,similarity");
    std::vector<SimilarityJudgment> rows;
    rows.reserve(csv.rows.size());
    for (std::size_t r = 0; r < csv.rows.size(); ++r) {
        const auto& cells = csv.rows[r];
        SimilarityJudgment j{cells[0], cells[1], cells[2], std::nullopt};
        if (!cells[3].empty()) j.similarity = parse_number(cells[3], r + 1, "similarity");
        rows.push_back(std::move(j));
    }
    return rows;
}

void write_similarity_judgments(std::span<const SimilarityJudgment> judgments, const fs::path& path) {
    std::string out = "participant_id,concept_a,concept_b,similarity\n";
    for (const auto& j : judgments) {
        out += j.participant + "," + j.concept_a + "," + j.concept_b + ",";
        if (j.similarity) out += format_number(*j.similarity);
        out += "\n";
    }
    write_text(path, out);
}

ParticipantRDMSet assemble_participant_rdms(std::span<const SimilarityJudgment> judgments, std::span<const std::string> concepts,
                                            std::span<const std::string> excluded) {
    std::map<std::string, std::size_t> concept_index;
    for (std::size_t i = 0; i < concepts.size(); ++i) concept_index[concepts[i]] = i;
    const std::set<std::string> drop(excluded.begin(), excluded.end());
    const std::size_t k = concepts.size();

    ParticipantRDMSet set;
    set.concepts.assign(concepts.begin(), concepts.end());
    std::map<std::string, std::size_t> participant_index;
    // per participant: k*k similarity, NaN when missing
    std::vector<std::vector<double>> raw;
    std::vector<std::vector<bool>> seen;

    for (std::size_t r = 0; r < judgments.size(); ++r) {
        const auto& j = judgments[r];
        const std::string where = "row " + std::to_string(r + 1);
        if (drop.count(j.concept_a) || drop.count(j.concept_b)) continue;
        const auto ia = concept_index.find(j.concept_a);
        const auto ib = concept_index.find(j.concept_b);
        if (ia == concept_index.end()) throw Error(ErrorCode::UnknownConcept, where + ", column 'concept_a': '" + j.concept_a + "'");
        if (ib == concept_index.end()) throw Error(ErrorCode::UnknownConcept, where + ", column 'concept_b': '" + j.concept_b + "'");
        if (ia->second == ib->second) throw Error(ErrorCode::MalformedCsv, where + ": a concept paired with itself");
        if (j.similarity && !(*j.similarity >= 1.0 && *j.similarity <= 9.0))
            throw Error(ErrorCode::OutOfRangeScore, where + ", column 'similarity': " + format_number(*j.similarity) + " outside 1..9");
        auto [it, inserted] = participant_index.emplace(j.participant, set.participants.size());
        if (inserted) {
            set.participants.push_back(j.participant);
            raw.emplace_back(k * k, std::numeric_limits<double>::quiet_NaN());
            seen.emplace_back(k * k, false);
        }
        const std::size_t p = it->second;
        const std::size_t lo = std::min(ia->second, ib->second), hi = std::max(ia->second, ib->second);
        if (seen[p][hi * k + lo]) throw Error(ErrorCode::MalformedCsv, where + ": pair rated twice by participant '" + j.participant + "'");
        seen[p][hi * k + lo] = true;
        if (j.similarity) raw[p][hi * k + lo] = *j.similarity;
    }

    // Impute with the per-pair mean over participants who rated it, then transform.
    for (std::size_t i = 1; i < k; ++i)
        for (std::size_t jj = 0; jj < i; ++jj) {
            double sum = 0.0;
            std::size_t count = 0;
            for (const auto& m : raw)
                if (!std::isnan(m[i * k + jj])) {
                    sum += m[i * k + jj];
                    ++count;
                }
            if (count == 0) throw Error(ErrorCode::PairFullyMissing, "no participant rated '" + concepts[i] + "' vs '" + concepts[jj] + "'");
            const double fill = sum / static_cast<double>(count);
            for (auto& m : raw)
                if (std::isnan(m[i * k + jj])) m[i * k + jj] = fill;
        }
    for (const auto& m : raw) {
        Eigen::MatrixXd rdm = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
        for (std::size_t i = 1; i < k; ++i)
            for (std::size_t jj = 0; jj < i; ++jj) {
                const double d = 10.0 - m[i * k + jj];
                rdm(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(jj)) = d;
                rdm(static_cast<Eigen::Index>(jj), static_cast<Eigen::Index>(i)) = d;
            }
        set.rdms.push_back(std::move(rdm));
    }
    return set;
}

ParticipantRDMSet read_similarity_judgments(const fs::path& path, std::span<const std::string> concepts,
                                            std::span<const std::string> excluded) {
    const auto rows = read_similarity_rows(path);
    return assemble_participant_rdms(rows, concepts, excluded);
}

// ---------------------------------------------------------------------------

TableS1Fixture read_table_s1(const fs::path& path) {
    const auto csv = read_csv(path);
    const std::vector<std::string> expected{"emotion", "kappa", "acc_mean", "acc_sd"};
    if (csv.header != expected) throw Error(ErrorCode::MalformedCsv, path.string() + ": expected header emotion,kappa,acc_mean,acc_sd");
    if (csv.rows.empty()) throw Error(ErrorCode::EmptyTable, path.string() + ": no rows");
    TableS1Fixture fx;
    std::vector<std::string> names;
    for (std::size_t r = 0; r < csv.rows.size(); ++r) {
        const auto& c = csv.rows[r];
        TableS1Row row{c[0], parse_number(c[1], r + 1, "kappa"), parse_number(c[2], r + 1, "acc_mean"),
                       parse_number(c[3], r + 1, "acc_sd")};
        if (row.kappa < -1.0 || row.kappa > 1.0) throw Error(ErrorCode::OutOfRangeScore, "row " + std::to_string(r + 1) + ", column 'kappa' outside [-1, 1]");
        if (row.acc_mean < 0.0 || row.acc_mean > 100.0) throw Error(ErrorCode::OutOfRangeScore, "row " + std::to_string(r + 1) + ", column 'acc_mean' outside [0, 100]");
        if (row.acc_sd < 0.0 || row.acc_sd > 100.0) throw Error(ErrorCode::OutOfRangeScore, "row " + std::to_string(r + 1) + ", column 'acc_sd' outside [0, 100]");
        names.push_back(row.emotion);
        fx.rows.push_back(std::move(row));
    }
    require_unique(names, "emotion");
    return fx;
}

void write_ablation_jsonl(std::span<const AblationRecord> records, const fs::path& path) {
    std::string out;
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["task"] = r.task;
        j["selector"] = r.selector();
        j["attribute"] = r.attribute;
        j["condition"] = r.condition;
        j["n"] = r.n;
        j["seed"] = r.seed;
        j["accuracy"] = r.accuracy;
        out += j.dump();
        out += "\n";
    }
    write_text(path, out);
}

std::vector<AblationRecord> read_ablation_jsonl(const fs::path& path) {
    const std::string text = read_text(path);
    std::vector<AblationRecord> records;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            AblationRecord r;
            r.task = j.at("task").get<std::string>();
            r.attribute = j.at("attribute").get<std::string>();
            r.condition = j.at("condition").get<std::string>();
            r.n = j.at("n").get<std::size_t>();
            r.seed = j.at("seed").get<std::size_t>();
            r.accuracy = j.at("accuracy").get<double>();
            records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::MalformedCsv, path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return records;
}

}  // namespace dataio
}  // namespace nrsa
