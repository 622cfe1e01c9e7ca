#include "tme/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "tme/experiments.hpp"

namespace tme::report {

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

bool is_percent(const std::string& metric) { return metric == "accuracy"; }

double display_scale(const proto::ResultCell& c) { return is_percent(c.metric_name) ? 100.0 : 1.0; }

// "61.00±0.50" for multi-seed cells, a single number for one seed,
// "err" when every seed failed.
std::string render_cell(const proto::ResultCell& c) {
  if (c.scores.empty()) return c.errors.empty() ? "n/a" : "err";
  const double s = display_scale(c);
  if (c.scores.size() == 1) return fmt("%.2f", c.mean * s);
  return exp::format_mean_std(c.mean * s, c.std * s);
}

std::string row_label(const proto::ResultCell& c) {
  if (c.encoder == "-") return c.model;
  return c.model + " (" + c.encoder + ")";
}

std::string group_label(const proto::ResultCell& c) {
  return "mode=" + enc::to_string(c.mode) + ", policy=" + cfg::to_string(c.policy);
}

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                          "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string svg_open(int w, int h) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" viewBox=\"0 0 " << w << " " << h << "\">\n"
     << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  return os.str();
}

std::string svg_text(double x, double y, const std::string& s, int size = 12,
                     const std::string& anchor = "start") {
  std::ostringstream os;
  os << "<text x=\"" << fmt("%.1f", x) << "\" y=\"" << fmt("%.1f", y)
     << "\" font-family=\"sans-serif\" font-size=\"" << size << "\" text-anchor=\"" << anchor
     << "\">" << s << "</text>\n";
  return os.str();
}

std::string svg_footer(int w, int h, const std::string& config_hex) {
  if (config_hex.empty()) return "";
  return svg_text(w - 8, h - 6, "config " + config_hex, 9, "end");
}

}  // namespace

std::string cells_csv(const std::vector<proto::ResultCell>& cells, const std::string& config_hex) {
  std::ostringstream os;
  os << "dataset,encoder,model,mode,policy,mask_ratio,metric,n_seeds,mean,std,scores,seeds,"
        "errors,config\n";
  for (const auto& c : cells) {
    std::string scores;
    for (std::size_t i = 0; i < c.scores.size(); ++i) {
      if (i) scores += ';';
      scores += fmt("%.10g", c.scores[i]);
    }
    std::string seeds;
    for (std::size_t i = 0; i < c.seeds.size(); ++i) {
      if (i) seeds += ';';
      seeds += std::to_string(c.seeds[i]);
    }
    os << csv_escape(c.dataset) << ',' << c.encoder << ',' << c.model << ','
       << enc::to_string(c.mode) << ',' << cfg::to_string(c.policy) << ','
       << fmt("%.2f", c.mask_ratio) << ',' << c.metric_name << ',' << c.scores.size() << ','
       << (std::isfinite(c.mean) ? fmt("%.6f", c.mean) : "") << ','
       << (std::isfinite(c.std) ? fmt("%.6f", c.std) : "") << ',' << csv_escape(scores) << ','
       << seeds << ',' << c.errors.size() << ',' << config_hex << "\n";
  }
  return os.str();
}

std::string benchmark_markdown(const std::vector<proto::ResultCell>& cells,
                               const std::string& config_hex) {
  std::ostringstream os;
  os << "## Benchmark results\n\n"
     << "Classification scores are accuracy in percent, mean±std over seeds; "
        "regression scores are MSE. Best per column in bold.\n";
  if (!config_hex.empty()) os << "\nConfig " << config_hex << ".\n";

  std::vector<std::string> groups;
  for (const auto& c : cells) {
    const auto g = group_label(c);
    if (std::find(groups.begin(), groups.end(), g) == groups.end()) groups.push_back(g);
  }
  std::vector<std::string> datasets;
  for (const auto& c : cells)
    if (std::find(datasets.begin(), datasets.end(), c.dataset) == datasets.end())
      datasets.push_back(c.dataset);

  for (const auto& group : groups) {
    os << "\n### " << group << "\n\n";

    std::vector<std::string> rows;  // first-seen row order
    std::map<std::string, const proto::ResultCell*> lookup;
    for (const auto& c : cells) {
      if (group_label(c) != group || c.mask_ratio != 0.0) continue;
      const std::string key = row_label(c);
      if (std::find(rows.begin(), rows.end(), key) == rows.end()) rows.push_back(key);
      lookup[key + "\n" + c.dataset] = &c;
    }

    os << "| Model |";
    for (const auto& d : datasets) os << ' ' << d << " |";
    os << "\n| --- |";
    for (std::size_t i = 0; i < datasets.size(); ++i) os << " --- |";
    os << "\n";

    // column best among model rows, direction per metric
    std::map<std::string, std::string> best;
    for (const auto& d : datasets) {
      double best_v = 0.0;
      std::string best_row;
      for (const auto& r : rows) {
        auto it = lookup.find(r + "\n" + d);
        if (it == lookup.end() || it->second->scores.empty()) continue;
        const bool higher = it->second->metric_name != "mse";
        const double v = it->second->mean;
        if (best_row.empty() || (higher ? v > best_v : v < best_v)) {
          best_v = v;
          best_row = r;
        }
      }
      best[d] = best_row;
    }

    std::vector<std::string> encoders;  // fused-row encoders, first seen
    for (const auto& r : rows) {
      os << "| " << r << " |";
      for (const auto& d : datasets) {
        auto it = lookup.find(r + "\n" + d);
        std::string v = it == lookup.end() ? "n/a" : render_cell(*it->second);
        if (it != lookup.end() && best[d] == r && !it->second->scores.empty())
          v = "**" + v + "**";
        os << ' ' << v << " |";
      }
      os << "\n";
    }

    for (const auto& c : cells) {
      if (group_label(c) != group || c.mask_ratio != 0.0) continue;
      if (c.model.rfind("time-", 0) != 0) continue;
      if (std::find(encoders.begin(), encoders.end(), c.encoder) == encoders.end())
        encoders.push_back(c.encoder);
    }
    for (const auto& e : encoders) {
      os << "| mean (" << e << ") |";
      for (const auto& d : datasets) {
        double sum = 0.0;
        long n = 0;
        double scale = 1.0;
        for (const auto& r : rows) {
          auto it = lookup.find(r + "\n" + d);
          if (it == lookup.end() || it->second->encoder != e ||
              it->second->model.rfind("time-", 0) != 0 || it->second->scores.empty())
            continue;
          sum += it->second->mean;
          scale = display_scale(*it->second);
          n++;
        }
        os << ' ' << (n ? fmt("%.2f", sum / n * scale) : "n/a") << " |";
      }
      os << "\n";
    }
  }
  return os.str();
}

std::string ranking_svg(const std::vector<proto::ResultCell>& cells,
                        const std::string& config_hex) {
  // models with a complete cell on every dataset, ratio-0 cells only
  std::vector<std::string> datasets, models;
  std::map<std::string, const proto::ResultCell*> lookup;
  for (const auto& c : cells) {
    if (c.mask_ratio != 0.0 || c.scores.empty()) continue;
    if (std::find(datasets.begin(), datasets.end(), c.dataset) == datasets.end())
      datasets.push_back(c.dataset);
    const std::string m = row_label(c) + " [" + enc::to_string(c.mode) + "]";
    if (std::find(models.begin(), models.end(), m) == models.end()) models.push_back(m);
    lookup[m + "\n" + c.dataset] = &c;
  }
  std::vector<std::string> ranked;
  for (const auto& m : models) {
    bool complete = true;
    for (const auto& d : datasets) complete &= lookup.count(m + "\n" + d) > 0;
    if (complete) ranked.push_back(m);
  }
  if (ranked.size() < 2 || datasets.empty()) return "";

  Eigen::MatrixXd table(static_cast<long>(ranked.size()), static_cast<long>(datasets.size()));
  std::vector<bool> directions;
  for (std::size_t j = 0; j < datasets.size(); ++j) {
    for (std::size_t i = 0; i < ranked.size(); ++i)
      table(static_cast<long>(i), static_cast<long>(j)) =
          lookup[ranked[i] + "\n" + datasets[j]]->mean;
    directions.push_back(lookup[ranked[0] + "\n" + datasets[j]]->metric_name != "mse");
  }
  auto ranks = exp::rank_models(table, directions);

  std::vector<std::pair<double, std::string>> order;
  for (std::size_t i = 0; i < ranked.size(); ++i)
    order.emplace_back(ranks.row(static_cast<long>(i)).mean(), ranked[i]);
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });

  const int w = 640, row_h = 28, top = 40;
  const int h = top + row_h * static_cast<int>(order.size()) + 20;
  std::ostringstream os;
  os << svg_open(w, h);
  os << svg_text(20, 24, "Mean rank across datasets (1 = best)", 14);
  const double max_rank = static_cast<double>(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const double y = top + row_h * static_cast<double>(i);
    const double bar = 40.0 + (order[i].first / max_rank) * 360.0;
    os << "<rect x=\"200\" y=\"" << fmt("%.1f", y) << "\" width=\"" << fmt("%.1f", bar)
       << "\" height=\"18\" fill=\"" << kPalette[i % 8] << "\"/>\n";
    os << svg_text(195, y + 14, order[i].second, 12, "end");
    os << svg_text(205 + bar, y + 14, fmt("%.2f", order[i].first), 12);
  }
  os << svg_footer(w, h, config_hex) << "</svg>\n";
  return os.str();
}

std::string sweep_svg(const std::vector<proto::ResultCell>& cells,
                      const std::string& config_hex) {
  struct Curve {
    std::string label;
    std::vector<std::pair<double, double>> pts;  // ratio, display score
  };
  std::vector<Curve> curves;
  std::vector<std::pair<std::string, double>> baselines;

  double xmax = 0.0, ymin = 1e300, ymax = -1e300;
  for (const auto& c : cells) {
    if (c.scores.empty()) continue;
    const double v = c.mean * display_scale(c);
    if (c.model.rfind("time-", 0) == 0) {
      const std::string label = row_label(c) + " [" + enc::to_string(c.mode) + "]";
      auto it = std::find_if(curves.begin(), curves.end(),
                             [&](const Curve& cu) { return cu.label == label; });
      if (it == curves.end()) {
        curves.push_back({label, {}});
        it = curves.end() - 1;
      }
      it->pts.emplace_back(c.mask_ratio, v);
      xmax = std::max(xmax, c.mask_ratio);
    } else {
      baselines.emplace_back(row_label(c) + " [" + enc::to_string(c.mode) + "]", v);
    }
    ymin = std::min(ymin, v);
    ymax = std::max(ymax, v);
  }
  if (curves.empty()) return "";
  if (xmax <= 0.0) xmax = 0.5;
  const double pad = std::max(1e-6, (ymax - ymin) * 0.08);
  ymin -= pad;
  ymax += pad;

  const double x0 = 60, x1 = 620, y0 = 360, y1 = 30;
  auto fx = [&](double r) { return x0 + (r / xmax) * (x1 - x0); };
  auto fy = [&](double v) { return y0 - (v - ymin) / (ymax - ymin) * (y0 - y1); };

  std::ostringstream os;
  os << svg_open(640, 420);
  // axes and ticks
  os << "<line x1=\"60\" y1=\"360\" x2=\"620\" y2=\"360\" stroke=\"black\"/>\n"
     << "<line x1=\"60\" y1=\"30\" x2=\"60\" y2=\"360\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    const double r = xmax * t / 5.0;
    os << svg_text(fx(r), 378, fmt("%.2f", r), 11, "middle");
    const double v = ymin + (ymax - ymin) * t / 5.0;
    os << svg_text(52, fy(v) + 4, fmt("%.1f", v), 11, "end");
  }
  os << svg_text(340, 404, "mask ratio", 12, "middle");

  for (std::size_t bi = 0; bi < baselines.size(); ++bi) {
    const double y = fy(baselines[bi].second);
    os << "<line x1=\"60\" y1=\"" << fmt("%.1f", y) << "\" x2=\"620\" y2=\"" << fmt("%.1f", y)
       << "\" stroke=\"#555555\" stroke-dasharray=\"6,4\"/>\n";
    os << svg_text(64, y - 4, baselines[bi].first + " " + fmt("%.2f", baselines[bi].second), 10);
  }

  for (std::size_t ci = 0; ci < curves.size(); ++ci) {
    auto pts = curves[ci].pts;
    std::sort(pts.begin(), pts.end());
    const char* color = kPalette[ci % 8];
    std::ostringstream line;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i) line << ' ';
      line << fmt("%.1f", fx(pts[i].first)) << ',' << fmt("%.1f", fy(pts[i].second));
    }
    if (pts.size() > 1)
      os << "<polyline points=\"" << line.str() << "\" fill=\"none\" stroke=\"" << color
         << "\" stroke-width=\"2\"/>\n";
    for (const auto& [r, v] : pts)
      os << "<circle cx=\"" << fmt("%.1f", fx(r)) << "\" cy=\"" << fmt("%.1f", fy(v))
         << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    // legend
    const double ly = 40 + 16 * static_cast<double>(ci);
    os << "<rect x=\"470\" y=\"" << fmt("%.1f", ly - 9) << "\" width=\"10\" height=\"10\" fill=\""
       << color << "\"/>\n";
    os << svg_text(484, ly, curves[ci].label, 11);
  }
  os << svg_footer(640, 420, config_hex) << "</svg>\n";
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  const auto dir = std::filesystem::path(path).parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw EngineError("cannot write " + path);
  os << content;
  if (!os) throw EngineError("write failed: " + path);
}

}  // namespace tme::report
