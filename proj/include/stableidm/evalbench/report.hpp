#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "stableidm/config.hpp"
#include "stableidm/evalbench/benchmark.hpp"

namespace stableidm::evalbench {

enum class ReportFormat { csv, json, svg };

inline ReportFormat report_format_from_string(const std::string& s) {
    if (s == "csv") return ReportFormat::csv;
    if (s == "json") return ReportFormat::json;
    if (s == "svg") return ReportFormat::svg;
    throw ConfigError("unknown report format '" + s + "' (csv, json or svg)");
}

inline std::string report_csv(const BenchmarkReport& r) {
    std::string out = "variant,split,acc,acc_per_dim,l1,n\n";
    for (const auto& row : r.rows) {
        out += row.variant + "," + row.split + "," + format_double(row.acc) + "," + format_double(row.acc_per_dim) + "," +
               format_double(row.l1) + "," + std::to_string(row.n) + "\n";
    }
    return out;
}

inline nlohmann::ordered_json report_json(const BenchmarkReport& r) {
    nlohmann::ordered_json j;
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& row : r.rows) {
        nlohmann::ordered_json o;
        o["variant"] = row.variant;
        o["split"] = row.split;
        o["acc"] = row.acc;
        o["acc_per_dim"] = row.acc_per_dim;
        o["l1"] = row.l1;
        o["n"] = row.n;
        j["rows"].push_back(o);
    }
    j["curves"] = nlohmann::ordered_json::array();
    for (const auto& c : r.curves) {
        j["curves"].push_back({{"variant", c.variant}, {"bin_lo", c.bin_lo}, {"l1", c.l1}, {"n", c.n}});
    }
    j["config"] = r.config;
    return j;
}

inline std::string xml_escape(const std::string& s) {
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

/// Line chart of L1 against occupancy bin, one polyline per variant.
inline std::string report_svg(const BenchmarkReport& r) {
    const double W = 640, H = 400, left = 60, right = 150, top = 30, bottom = 50;
    const double pw = W - left - right, ph = H - top - bottom;
    double xmax = 0.0, ymax = 0.0;
    for (const auto& c : r.curves) {
        if (!c.bin_lo.empty()) xmax = std::max(xmax, c.bin_lo.back());
        for (std::size_t b = 0; b < c.l1.size(); ++b) {
            if (c.n[b]) ymax = std::max(ymax, c.l1[b]);
        }
    }
    if (xmax <= 0.0) xmax = 1.0;
    if (ymax <= 0.0) ymax = 1.0;
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << " "
      << H << "\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
      << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n";
    s << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"12\">occupancy bin</text>\n";
    s << "<text x=\"16\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 16 " << top + ph / 2
      << ")\" text-anchor=\"middle\" font-size=\"12\">mean L1</text>\n";
    s << "<text x=\"" << left - 6 << "\" y=\"" << top + 4 << "\" text-anchor=\"end\" font-size=\"10\">" << format_double(ymax)
      << "</text>\n";
    s << "<text x=\"" << left + pw << "\" y=\"" << top + ph + 14 << "\" text-anchor=\"middle\" font-size=\"10\">"
      << format_double(xmax) << "</text>\n";
    for (std::size_t i = 0; i < r.curves.size(); ++i) {
        const auto& c = r.curves[i];
        const char* color = colors[i % 8];
        s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        bool first = true;
        for (std::size_t b = 0; b < c.bin_lo.size(); ++b) {
            if (!c.n[b]) continue;
            const double x = left + pw * c.bin_lo[b] / xmax;
            const double y = top + ph * (1.0 - c.l1[b] / ymax);
            s << (first ? "" : " ") << x << "," << y;
            first = false;
        }
        s << "\"/>\n";
        s << "<text x=\"" << left + pw + 10 << "\" y=\"" << top + 14 + 16.0 * static_cast<double>(i) << "\" font-size=\"11\" fill=\""
          << color << "\">" << xml_escape(c.variant) << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

inline void emit_report(const BenchmarkReport& r, const std::filesystem::path& path, ReportFormat format) {
    if (r.rows.empty()) throw ParameterError("emit_report: no rows");
    std::string text;
    switch (format) {
        case ReportFormat::csv: text = report_csv(r); break;
        case ReportFormat::json: text = report_json(r).dump(2) + "\n"; break;
        case ReportFormat::svg: text = report_svg(r); break;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write report " + path.string());
    f << text;
    if (!f) throw IoError("failed writing report " + path.string());
}

}  // namespace stableidm::evalbench
