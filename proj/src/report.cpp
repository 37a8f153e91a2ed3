#include "nrsa/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "nrsa/dataio.hpp"
#include "nrsa/error.hpp"

namespace nrsa::report {

using dataio::format_number;

namespace {

void drop_rows(std::string& out, const char* kind, const std::vector<experiment::DropStat>& rows) {
    for (const auto& d : rows)
        out += std::string(kind) + "," + d.scope + "," + std::to_string(d.n) + "," + std::to_string(d.units) + "," + format_number(d.mean_drop) + "," +
               format_number(d.ci_low) + "," + format_number(d.ci_high) + "," + format_number(d.t) + "," + format_number(d.pvalue) + "," +
               (d.significant ? "1" : "0") + "\n";
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string escape_xml(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

void write_drops_csv(const experiment::DropSummary& summary, const std::filesystem::path& path) {
    std::string out = "kind,scope,n,units,mean_drop,ci_low,ci_high,t,p,significant\n";
    drop_rows(out, "all", summary.overall);
    drop_rows(out, "attribute", summary.by_attribute);
    drop_rows(out, "task", summary.by_task);
    dataio::write_text(path, out);
}

void write_dip_table_csv(const experiment::Heterogeneity& table, const std::filesystem::path& path) {
    std::string out = "n,attribute,dip,p,N\n";
    for (const auto& r : table.rows)
        out += std::to_string(r.n) + "," + r.attribute + "," + format_number(r.dip) + "," + format_number(r.pvalue) + "," + std::to_string(r.tasks) + "\n";
    dataio::write_text(path, out);
}

void write_correlation_csv(const experiment::Contribution& c, const std::filesystem::path& path) {
    std::string out = "scope,n,r,t,p\n";
    for (const auto& t : c.per_task) {
        out += t.task + "," + std::to_string(c.n);
        // Undefined correlations leave their cells empty.
        out += t.defined ? "," + format_number(t.r) + "," + format_number(t.t) + "," + format_number(t.pvalue) + "\n" : ",,,\n";
    }
    out += "fisher_mean," + std::to_string(c.n) + "," + format_number(c.overall.mean_r) + "," + format_number(c.overall.t) + "," +
           format_number(c.overall.pvalue) + "\n";
    dataio::write_text(path, out);
}

void write_drop_svg(const experiment::DropSummary& summary, std::size_t n, const std::filesystem::path& path) {
    std::vector<const experiment::DropStat*> rows;
    for (const auto& d : summary.by_attribute)
        if (d.n == n) rows.push_back(&d);
    if (rows.empty()) throw Error(ErrorCode::IncompleteGrid, "no per-attribute drops at n = " + std::to_string(n));

    double lo = 0.0, hi = 0.0;
    for (const auto* d : rows) {
        lo = std::min({lo, d->mean_drop, d->ci_low});
        hi = std::max({hi, d->mean_drop, d->ci_high});
    }
    if (hi - lo < 1e-9) hi = lo + 1e-3;
    const double label_w = 120, plot_w = 420, row_h = 22, top = 40, width = label_w + plot_w + 40;
    const double height = top + row_h * static_cast<double>(rows.size()) + 40;
    auto x_of = [&](double v) { return label_w + (v - lo) / (hi - lo) * plot_w; };

    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fixed(width, 0) + "\" height=\"" + fixed(height, 0) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s += "<text x=\"" + fixed(label_w, 0) + "\" y=\"20\">Accuracy drop (random - selective), n = " + std::to_string(n) + "</text>\n";
    const double x0 = x_of(0.0);
    s += "<line x1=\"" + fixed(x0, 1) + "\" y1=\"" + fixed(top - 6, 1) + "\" x2=\"" + fixed(x0, 1) + "\" y2=\"" +
         fixed(top + row_h * static_cast<double>(rows.size()), 1) + "\" stroke=\"#444\"/>\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& d = *rows[i];
        const double y = top + row_h * static_cast<double>(i);
        const double xm = x_of(d.mean_drop);
        s += "<text x=\"" + fixed(label_w - 8, 0) + "\" y=\"" + fixed(y + 14, 1) + "\" text-anchor=\"end\">" + escape_xml(d.scope) + "</text>\n";
        s += "<rect x=\"" + fixed(std::min(x0, xm), 1) + "\" y=\"" + fixed(y + 3, 1) + "\" width=\"" + fixed(std::abs(xm - x0), 1) +
             "\" height=\"" + fixed(row_h - 6, 1) + "\" fill=\"" + (d.significant ? "#c0392b" : "#95a5a6") + "\"/>\n";
        s += "<line x1=\"" + fixed(x_of(d.ci_low), 1) + "\" y1=\"" + fixed(y + row_h / 2, 1) + "\" x2=\"" + fixed(x_of(d.ci_high), 1) + "\" y2=\"" +
             fixed(y + row_h / 2, 1) + "\" stroke=\"#222\"/>\n";
    }
    const double axis_y = top + row_h * static_cast<double>(rows.size()) + 16;
    s += "<text x=\"" + fixed(label_w, 0) + "\" y=\"" + fixed(axis_y, 1) + "\">" + fixed(lo, 3) + "</text>\n";
    s += "<text x=\"" + fixed(label_w + plot_w, 0) + "\" y=\"" + fixed(axis_y, 1) + "\" text-anchor=\"end\">" + fixed(hi, 3) + "</text>\n";
    s += "</svg>\n";
    dataio::write_text(path, s);
}

std::vector<rsa::AttributeWeight> read_attribute_weights_csv(const std::filesystem::path& path) {
    const auto csv = dataio::read_csv(path);
    const std::vector<std::string> expected{"attribute", "mean_tau", "p", "significant"};
    if (csv.header != expected) throw Error(ErrorCode::MalformedCsv, path.string() + ": expected header attribute,mean_tau,p,significant");
    std::vector<rsa::AttributeWeight> out;
    for (std::size_t r = 0; r < csv.rows.size(); ++r) {
        const auto& c = csv.rows[r];
        rsa::AttributeWeight w;
        w.attribute = c[0];
        w.mean_tau = dataio::parse_number(c[1], r + 1, "mean_tau");
        w.pvalue = dataio::parse_number(c[2], r + 1, "p");
        if (c[3] != "0" && c[3] != "1") throw Error(ErrorCode::MalformedCsv, "row " + std::to_string(r + 1) + ", column 'significant': expected 0 or 1");
        w.significant = c[3] == "1";
        out.push_back(std::move(w));
    }
    return out;
}

}  // namespace nrsa::report
