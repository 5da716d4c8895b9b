#pragma once

#include <cstdint>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "raven/robustness.hpp"
#include "raven/tensor.hpp"
#include "raven/trainer.hpp"

namespace raven {

inline std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(s.data(), s.size(), h);
}

inline std::uint64_t fnv1a64_file(const std::string& path, std::uint64_t h) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("hash: cannot open " + path);
  char buf[1 << 16];
  while (f.read(buf, sizeof(buf)) || f.gcount() > 0)
    h = fnv1a64(buf, static_cast<std::size_t>(f.gcount()), h);
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(v));
  return out;
}

// Full-fidelity, locale-independent float formatting for csv/json payloads.
inline std::string fmt_double(double v) {
  char out[40];
  std::snprintf(out, sizeof(out), "%.17g", v);
  return out;
}

// Content-addressed record of one command invocation. The hash covers the
// command, the resolved configuration, and the bytes of any input files, so
// identical manifests imply identical outputs. Timestamps live only here.
struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config;  // resolved flags, sorted by key
  std::uint64_t seed = 0;
  std::vector<std::string> input_files;
  std::string started_at;
  std::string finished_at;

  std::string hash() const {
    std::uint64_t h = fnv1a64(command);
    h = fnv1a64("seed=" + std::to_string(seed), h);
    for (const auto& [k, v] : config) h = fnv1a64(k + "=" + v + "\n", h);
    for (const auto& f : input_files) h = fnv1a64_file(f, fnv1a64(f, h));
    return hex64(h);
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = config;
    j["seed"] = seed;
    j["input_files"] = input_files;
    j["hash"] = hash();
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    return j;
  }

  void write(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw Error("manifest: cannot write " + path);
    f << to_json().dump(2) << "\n";
  }
};

inline std::string now_iso8601() {
  std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
  return buf;
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows,
                              const std::string& manifest_hash) {
  std::ofstream f(path);
  if (!f) throw Error("metrics csv: cannot write " + path);
  f << "# manifest " << manifest_hash << "\n";
  f << "step,epoch,regime,loss,recon_x,recon_xp,kl_term,total\n";
  for (const auto& r : rows)
    f << r.step << "," << r.epoch << "," << r.regime << "," << fmt_double(r.loss) << ","
      << fmt_double(r.breakdown.recon_x) << "," << fmt_double(r.breakdown.recon_xp) << ","
      << fmt_double(r.breakdown.kl_term) << "," << fmt_double(r.breakdown.total) << "\n";
}

// Wall clock goes to a sidecar so the metrics bytes stay reproducible.
inline void write_timing_csv(const std::string& path, const std::vector<MetricsRow>& rows,
                             const std::string& manifest_hash) {
  std::ofstream f(path);
  if (!f) throw Error("timing csv: cannot write " + path);
  f << "# manifest " << manifest_hash << "\n";
  f << "step,wall_seconds\n";
  for (const auto& r : rows) f << r.step << "," << fmt_double(r.wall_seconds) << "\n";
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("csv: cannot open " + path);
  CsvTable table;
  std::string line;
  bool have_header = false;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!have_header) {
      table.header = std::move(cells);
      have_header = true;
    } else {
      table.rows.push_back(std::move(cells));
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// SVG report: accuracy versus attack budget, one polyline per series.
// Plain text output, fixed 800x500 canvas, no plotting dependency.
// ---------------------------------------------------------------------------

struct PlotSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (delta, accuracy)
};

inline std::string render_accuracy_svg(const std::vector<PlotSeries>& series,
                                       const std::string& manifest_hash,
                                       const std::string& title = "accuracy vs attack budget") {
  const double width = 800, height = 500;
  const double ml = 70, mr = 170, mt = 40, mb = 55;
  const double pw = width - ml - mr, ph = height - mt - mb;

  double xmin = 0.0, xmax = 0.0;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) xmax = std::max(xmax, x);
  if (xmax <= xmin) xmax = xmin + 1.0;
  const double ymin = 0.0, ymax = 1.0;

  auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
  auto sy = [&](double y) { return mt + (ymax - y) / (ymax - ymin) * ph; };
  auto c2 = [](double v) {
    char out[24];
    std::snprintf(out, sizeof(out), "%.2f", v);
    return std::string(out);
  };

  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                  "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"500\" "
         "viewBox=\"0 0 800 500\">\n";
  svg << "<!-- manifest " << manifest_hash << " -->\n";
  svg << "<rect width=\"800\" height=\"500\" fill=\"white\"/>\n";
  svg << "<text x=\"" << c2(ml + pw / 2) << "\" y=\"24\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"16\">"
      << title << "</text>\n";

  // axes
  svg << "<line x1=\"" << c2(ml) << "\" y1=\"" << c2(mt + ph) << "\" x2=\"" << c2(ml + pw)
      << "\" y2=\"" << c2(mt + ph) << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << c2(ml) << "\" y1=\"" << c2(mt) << "\" x2=\"" << c2(ml) << "\" y2=\""
      << c2(mt + ph) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 5.0;
    const double yv = ymin + (ymax - ymin) * i / 5.0;
    svg << "<line x1=\"" << c2(sx(xv)) << "\" y1=\"" << c2(mt + ph) << "\" x2=\"" << c2(sx(xv))
        << "\" y2=\"" << c2(mt + ph + 5) << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << c2(sx(xv)) << "\" y=\"" << c2(mt + ph + 20)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << c2(xv)
        << "</text>\n";
    svg << "<line x1=\"" << c2(ml - 5) << "\" y1=\"" << c2(sy(yv)) << "\" x2=\"" << c2(ml)
        << "\" y2=\"" << c2(sy(yv)) << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << c2(ml - 10) << "\" y=\"" << c2(sy(yv) + 4)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << c2(yv)
        << "</text>\n";
  }
  svg << "<text x=\"" << c2(ml + pw / 2) << "\" y=\"" << c2(height - 12)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">attack budget "
         "&#948;</text>\n";
  svg << "<text x=\"18\" y=\"" << c2(mt + ph / 2)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 "
         "18 "
      << c2(mt + ph / 2) << ")\">accuracy</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kColors[s % 8];
    std::ostringstream pts;
    for (const auto& [x, y] : series[s].points) pts << c2(sx(x)) << "," << c2(sy(y)) << " ";
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\""
        << pts.str() << "\"/>\n";
    for (const auto& [x, y] : series[s].points)
      svg << "<circle cx=\"" << c2(sx(x)) << "\" cy=\"" << c2(sy(y)) << "\" r=\"3\" fill=\"" << color
          << "\"/>\n";
    const double ly = mt + 14 + 20 * static_cast<double>(s);
    svg << "<line x1=\"" << c2(ml + pw + 12) << "\" y1=\"" << c2(ly) << "\" x2=\""
        << c2(ml + pw + 36) << "\" y2=\"" << c2(ly) << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << c2(ml + pw + 42) << "\" y=\"" << c2(ly + 4)
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << series[s].label << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

inline void write_eval_csv(const std::string& path, const EvalReport& report,
                           const std::string& manifest_hash) {
  std::ofstream f(path);
  if (!f) throw Error("eval csv: cannot write " + path);
  f << "# manifest " << manifest_hash << "\n";
  f << "delta,objective,accuracy,failures,mean_best_objective\n";
  for (const auto& r : report.rows)
    f << fmt_double(r.delta) << "," << r.objective << "," << fmt_double(r.accuracy) << ","
      << r.failures << "," << fmt_double(r.mean_best_objective) << "\n";
}

inline void write_latents_csv(const std::string& path, const Tensor& z,
                              const std::vector<int>& labels, const std::string& manifest_hash) {
  if (z.rows() != labels.size()) throw Error("latents csv: row/label mismatch");
  std::ofstream f(path);
  if (!f) throw Error("latents csv: cannot write " + path);
  f << "# manifest " << manifest_hash << "\n";
  f << "label";
  for (std::size_t j = 0; j < z.cols(); ++j) f << ",z" << j;
  f << "\n";
  for (std::size_t i = 0; i < z.rows(); ++i) {
    f << labels[i];
    for (std::size_t j = 0; j < z.cols(); ++j) f << "," << fmt_double(z.at(i, j));
    f << "\n";
  }
}

}  // namespace raven
