#pragma once

#include <filesystem>
#include <vector>

#include "nrsa/experiment.hpp"
#include "nrsa/rsa.hpp"

namespace nrsa::report {

/// kind,scope,n,units,mean_drop,ci_low,ci_high,t,p,significant
void write_drops_csv(const experiment::DropSummary& summary, const std::filesystem::path& path);

/// n,attribute,dip,p,N
void write_dip_table_csv(const experiment::Heterogeneity& table, const std::filesystem::path& path);

/// scope,n,r,t,p: one row per task, then the Fisher average as scope "fisher_mean".
void write_correlation_csv(const experiment::Contribution& c, const std::filesystem::path& path);

/// Horizontal bar chart of per-attribute mean drops at level `n`, with CI whiskers.
void write_drop_svg(const experiment::DropSummary& summary, std::size_t n, const std::filesystem::path& path);

std::vector<rsa::AttributeWeight> read_attribute_weights_csv(const std::filesystem::path& path);

}  // namespace nrsa::report
