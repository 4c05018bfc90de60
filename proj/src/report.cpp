#include "tsattr/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace tsattr {

std::string format_number(double value) {
  if (value == 0.0) return "0";  // folds -0
  std::array<char, 64> buf{};
  std::snprintf(buf.data(), buf.size(), "%.10g", value);
  return buf.data();
}

std::string csv_field(std::string_view text) {
  if (text.find_first_of(",\"\n") == std::string_view::npos) return std::string(text);
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string xml_escape(std::string_view text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

namespace {

std::string optional_cell(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

std::string k_grid_cell(const std::vector<double>& grid) {
  std::string out;
  for (std::size_t i = 0; i < grid.size(); ++i) out += (i ? ";" : "") + format_number(grid[i]);
  return out;
}

}  // namespace

std::string metrics_csv(std::span<const MetricsRow> rows, std::string_view config_hash) {
  std::ostringstream out;
  out << kMetricsHeader << '\n';
  for (const MetricsRow& r : rows) {
    const EvalMetrics& m = r.metrics;
    out << csv_field(r.task) << ',' << csv_field(r.model) << ',' << optional_cell(m.pr_auc) << ','
        << optional_cell(m.roc_auc) << ',' << format_number(m.accuracy) << ',' << optional_cell(m.f1) << ','
        << optional_cell(m.f1_weighted) << ',' << optional_cell(m.f1_macro) << ',' << optional_cell(m.f1_micro) << ','
        << config_hash << '\n';
  }
  return out.str();
}

std::string faithfulness_csv(std::span<const FaithfulnessReport> reports, std::string_view config_hash) {
  std::ostringstream out;
  out << "task,model,method,comprehensiveness,sufficiency,composite,n_records,k_grid,config_hash\n";
  for (const FaithfulnessReport& r : reports) {
    out << csv_field(r.task) << ',' << csv_field(r.model) << ',' << csv_field(r.method) << ','
        << format_number(r.comprehensiveness) << ',' << format_number(r.sufficiency) << ','
        << format_number(r.composite) << ',' << r.n_records << ',' << k_grid_cell(r.k_grid) << ',' << config_hash
        << '\n';
  }
  return out.str();
}

std::string record_faithfulness_csv(std::span<const RecordFaithfulness> rows, std::string_view config_hash) {
  std::ostringstream out;
  out << "task,model,method,record_id,predicted_class,comprehensiveness,sufficiency,composite,config_hash\n";
  for (const RecordFaithfulness& r : rows) {
    out << csv_field(r.task) << ',' << csv_field(r.model) << ',' << csv_field(r.method) << ',' << r.record_id << ','
        << r.scores.predicted_class << ',' << format_number(r.scores.comprehensiveness) << ','
        << format_number(r.scores.sufficiency) << ','
        << format_number(composite_score(r.scores.comprehensiveness, r.scores.sufficiency)) << ',' << config_hash
        << '\n';
  }
  return out.str();
}

std::string runtime_csv(std::span<const RuntimeProfile> profiles, double population, std::string_view config_hash) {
  std::ostringstream out;
  out << "task,model,method,seconds_per_record,n_records,population,extrapolated_hours,config_hash\n";
  for (const RuntimeProfile& p : profiles) {
    out << csv_field(p.task) << ',' << csv_field(p.model) << ',' << csv_field(p.method) << ','
        << format_number(p.seconds_per_record) << ',' << p.n_records << ',' << format_number(population) << ','
        << format_number(p.extrapolate_hours(population)) << ',' << config_hash << '\n';
  }
  return out.str();
}

std::string scatter_svg(const ScatterSpec& spec, std::span<const ScatterPoint> points) {
  constexpr double width = 640, height = 480, left = 70, right = 170, top = 40, bottom = 60;
  constexpr std::array<const char*, 8> palette = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                                  "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  auto tx = [&](double x) { return spec.log_x ? std::log10(std::max(x, 1e-12)) : x; };
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (!points.empty()) {
    x0 = x1 = tx(points[0].x);
    y0 = y1 = points[0].y;
    for (const ScatterPoint& p : points) {
      x0 = std::min(x0, tx(p.x));
      x1 = std::max(x1, tx(p.x));
      y0 = std::min(y0, p.y);
      y1 = std::max(y1, p.y);
    }
  }
  const double xpad = x1 > x0 ? 0.05 * (x1 - x0) : 0.5;
  const double ypad = y1 > y0 ? 0.05 * (y1 - y0) : 0.5;
  x0 -= xpad, x1 += xpad, y0 -= ypad, y1 += ypad;
  const double pw = width - left - right, ph = height - top - bottom;
  auto px = [&](double x) { return left + (tx(x) - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::map<std::string, std::size_t> series;
  for (const ScatterPoint& p : points) series.emplace(p.series, 0);
  std::size_t idx = 0;
  for (auto& [name, i] : series) i = idx++;

  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
      << "<!-- config_hash: " << xml_escape(spec.config_hash) << " -->\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << xml_escape(spec.title)
      << "</text>\n"
      << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double fx = x0 + (x1 - x0) * t / 4.0, fy = y0 + (y1 - y0) * t / 4.0;
    const double sx = left + pw * t / 4.0, sy = top + ph * (1.0 - t / 4.0);
    const double label_x = spec.log_x ? std::pow(10.0, fx) : fx;
    out << "<text x=\"" << format_number(sx) << "\" y=\"" << top + ph + 18
        << "\" text-anchor=\"middle\" font-size=\"11\">" << format_number(std::round(label_x * 1e4) / 1e4)
        << "</text>\n"
        << "<text x=\"" << left - 6 << "\" y=\"" << format_number(sy + 4)
        << "\" text-anchor=\"end\" font-size=\"11\">" << format_number(std::round(fy * 1e4) / 1e4) << "</text>\n";
  }
  out << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 16 << "\" text-anchor=\"middle\" font-size=\"13\">"
      << xml_escape(spec.x_label) << "</text>\n"
      << "<text x=\"18\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 "
      << top + ph / 2 << ")\">" << xml_escape(spec.y_label) << "</text>\n";
  for (const ScatterPoint& p : points) {
    const char* colour = palette[series.at(p.series) % palette.size()];
    out << "<circle cx=\"" << format_number(px(p.x)) << "\" cy=\"" << format_number(py(p.y))
        << "\" r=\"5\" fill=\"" << colour << "\"><title>" << xml_escape(p.series + " " + p.label) << "</title></circle>\n";
    if (!p.label.empty()) {
      out << "<text x=\"" << format_number(px(p.x) + 7) << "\" y=\"" << format_number(py(p.y) + 4)
          << "\" font-size=\"9\">" << xml_escape(p.label) << "</text>\n";
    }
  }
  for (const auto& [name, i] : series) {
    const double ly = top + 10 + 18.0 * static_cast<double>(i);
    out << "<circle cx=\"" << width - right + 20 << "\" cy=\"" << ly << "\" r=\"5\" fill=\""
        << palette[i % palette.size()] << "\"/>\n"
        << "<text x=\"" << width - right + 30 << "\" y=\"" << ly + 4 << "\" font-size=\"12\">" << xml_escape(name)
        << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace tsattr
