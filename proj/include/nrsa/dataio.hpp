#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nrsa/types.hpp"

namespace nrsa::dataio {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// CSV dialect: UTF-8, LF line endings, '.' decimal separator, no quoting.

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;  // each row has header.size() cells
};

/// Reads a whole CSV file; throws IoFailure / MalformedCsv (ragged rows, CR line endings).
CsvTable read_csv(const fs::path& path);

/// Strict numeric parse. The error message names the 1-based data row and the column.
double parse_number(std::string_view cell, std::size_t row, std::string_view column);

/// Shortest decimal text that round-trips to the same double.
std::string format_number(double value);

void write_text(const fs::path& path, std::string_view content);
std::string read_text(const fs::path& path);

// ---------------------------------------------------------------------------
// Artifacts

RatingTable read_rating_table(const fs::path& path);
void write_rating_table(const RatingTable& table, const fs::path& path);

ActivationTensor read_activation_tensor(const fs::path& path);
void write_activation_tensor(const ActivationTensor& tensor, const fs::path& path);

inline constexpr std::string_view kActivationMagic = "ACTV1\n";

/// Concepts dropped from similarity judgments by default ("neutral").
std::span<const std::string> default_excluded();

/// Long-format judgments -> per-participant RDMs over `concepts` (in that order).
/// Rows naming a concept in `excluded` are dropped; missing cells are imputed with the
/// pair mean over the participants who rated it, then every score becomes 10 - s.
ParticipantRDMSet read_similarity_judgments(const fs::path& path, std::span<const std::string> concepts,
                                            std::span<const std::string> excluded = default_excluded());
ParticipantRDMSet assemble_participant_rdms(std::span<const SimilarityJudgment> judgments,
                                            std::span<const std::string> concepts,
                                            std::span<const std::string> excluded = default_excluded());
std::vector<SimilarityJudgment> read_similarity_rows(const fs::path& path);
void write_similarity_judgments(std::span<const SimilarityJudgment> judgments, const fs::path& path);

TableS1Fixture read_table_s1(const fs::path& path);

void write_ablation_jsonl(std::span<const AblationRecord> records, const fs::path& path);
std::vector<AblationRecord> read_ablation_jsonl(const fs::path& path);

}  // namespace nrsa::dataio
