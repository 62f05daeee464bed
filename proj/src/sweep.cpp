#include "car/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

#include "car/error.hpp"
#include "car/io.hpp"

namespace car::experiment {

SweepParam parse_sweep_param(std::string_view name) {
  if (name == "beta") return SweepParam::kBeta;
  if (name == "r0") return SweepParam::kR0;
  if (name == "alpha") return SweepParam::kAlpha;
  if (name == "gamma") return SweepParam::kGamma;
  throw ParameterError("sweep: --param must be one of beta, r0, alpha, gamma (got '" +
                       std::string(name) + "')");
}

std::string_view sweep_param_name(SweepParam p) {
  switch (p) {
    case SweepParam::kBeta: return "beta";
    case SweepParam::kR0: return "r0";
    case SweepParam::kAlpha: return "alpha";
    case SweepParam::kGamma: return "gamma";
  }
  return "?";
}

ExperimentSpec with_param(ExperimentSpec spec, SweepParam p, double value) {
  switch (p) {
    case SweepParam::kBeta: spec.train.beta = value; break;
    case SweepParam::kR0: spec.train.r0 = value; break;
    case SweepParam::kAlpha: spec.train.alpha = value; break;
    case SweepParam::kGamma: spec.train.gamma = value; break;
  }
  return spec;
}

std::vector<SweepRow> run_sweep(const ExperimentSpec& spec, SweepParam p,
                                const std::vector<double>& values,
                                const std::filesystem::path& out_dir, unsigned threads) {
  for (double v : values) {
    if (!std::isfinite(v)) throw ParameterError("sweep: values must be finite");
  }
  std::vector<SweepRow> rows(values.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < values.size(); i = next++) {
      SweepRow& row = rows[i];
      row.value = values[i];
      try {
        const ExperimentSpec s = with_param(spec, p, values[i]);
        s.train.validate();
        const auto dir = out_dir / "runs" / (std::string(sweep_param_name(p)) + "_" + std::to_string(i));
        const ExperimentResult r = run_to_directory(s, dir);
        const auto& m = r.test_metrics ? *r.test_metrics : r.train_metrics;
        row.overall_accuracy = m.overall_accuracy;
        row.worst_class_accuracy = m.worst_class_accuracy;
      } catch (const std::exception& e) {
        row.overall_accuracy = std::numeric_limits<double>::quiet_NaN();
        row.worst_class_accuracy = std::numeric_limits<double>::quiet_NaN();
        row.status = e.what();
        std::replace(row.status.begin(), row.status.end(), ',', ';');
        std::replace(row.status.begin(), row.status.end(), '\n', ' ');
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(values.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return rows;
}

std::string sweep_csv(SweepParam p, const std::vector<SweepRow>& rows) {
  std::string out = std::string(sweep_param_name(p)) + ",overall_accuracy,worst_class_accuracy,status\n";
  for (const auto& r : rows) {
    out += io::format_double(r.value) + ',' + io::format_double(r.overall_accuracy) + ',' +
           io::format_double(r.worst_class_accuracy) + ',' + r.status + '\n';
  }
  return out;
}

std::vector<SweepRow> parse_sweep_csv(std::string_view text) {
  std::vector<SweepRow> rows;
  bool header = true;
  for (auto line : io::split(text, '\n')) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    const auto f = io::split(line);
    if (f.size() != 4) throw FormatError("sweep csv: expected 4 fields");
    rows.push_back({io::parse_double(f[0]), io::parse_double(f[1]), io::parse_double(f[2]),
                    std::string(f[3])});
  }
  return rows;
}

std::string line_plot_svg(const std::string& title, const std::string& x_label,
                          const std::string& y_label, const std::vector<double>& xs,
                          const std::vector<double>& ys) {
  constexpr double kW = 480, kH = 320, kL = 60, kR = 20, kT = 36, kB = 48;
  double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo;
  double y_lo = x_lo, y_hi = -x_lo;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!std::isfinite(ys[i])) continue;
    x_lo = std::min(x_lo, xs[i]);
    x_hi = std::max(x_hi, xs[i]);
    y_lo = std::min(y_lo, ys[i]);
    y_hi = std::max(y_hi, ys[i]);
  }
  if (!std::isfinite(x_lo)) x_lo = 0, x_hi = 1, y_lo = 0, y_hi = 1;
  if (x_hi == x_lo) x_lo -= 0.5, x_hi += 0.5;
  if (y_hi == y_lo) y_lo -= 0.05, y_hi += 0.05;
  auto px = [&](double x) { return kL + (x - x_lo) / (x_hi - x_lo) * (kW - kL - kR); };
  auto py = [&](double y) { return kH - kB - (y - y_lo) / (y_hi - y_lo) * (kH - kT - kB); };
  auto f = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"320\" "
                  "font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<text x=\"240\" y=\"20\" text-anchor=\"middle\">" + title + "</text>\n";
  s += "<line x1=\"" + f(kL) + "\" y1=\"" + f(kH - kB) + "\" x2=\"" + f(kW - kR) + "\" y2=\"" +
       f(kH - kB) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + f(kL) + "\" y1=\"" + f(kT) + "\" x2=\"" + f(kL) + "\" y2=\"" + f(kH - kB) +
       "\" stroke=\"black\"/>\n";
  s += "<text x=\"240\" y=\"" + f(kH - 10) + "\" text-anchor=\"middle\">" + x_label + "</text>\n";
  s += "<text x=\"14\" y=\"" + f(kH / 2) + "\" transform=\"rotate(-90 14 " + f(kH / 2) +
       ")\" text-anchor=\"middle\">" + y_label + "</text>\n";
  s += "<text x=\"" + f(kL - 4) + "\" y=\"" + f(py(y_lo) + 4) + "\" text-anchor=\"end\">" +
       io::format_double(y_lo) + "</text>\n";
  s += "<text x=\"" + f(kL - 4) + "\" y=\"" + f(py(y_hi) + 4) + "\" text-anchor=\"end\">" +
       io::format_double(y_hi) + "</text>\n";

  std::string points;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    s += "<text x=\"" + f(px(xs[i])) + "\" y=\"" + f(kH - kB + 14) + "\" text-anchor=\"middle\">" +
         io::format_double(xs[i]) + "</text>\n";
    if (!std::isfinite(ys[i])) continue;
    points += f(px(xs[i])) + "," + f(py(ys[i])) + " ";
    s += "<circle cx=\"" + f(px(xs[i])) + "\" cy=\"" + f(py(ys[i])) + "\" r=\"3\" fill=\"#c00000\"/>\n";
  }
  s += "<polyline fill=\"none\" stroke=\"#c00000\" points=\"" + points + "\"/>\n";
  s += "</svg>\n";
  return s;
}

}  // namespace car::experiment
