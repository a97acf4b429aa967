#include "sleeprad/svg_report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sleeprad/bundle_io.hpp"
#include "sleeprad/error.hpp"
#include "sleeprad/stats.hpp"

namespace sleeprad::report {
namespace fs = std::filesystem;

namespace {

constexpr double kWidth = 480.0, kHeight = 360.0;
constexpr double kLeft = 60.0, kRight = 20.0, kTop = 36.0, kBottom = 50.0;

std::string num(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string escape(const std::string& s) {
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

struct Range {
  double lo = 0.0, hi = 1.0;
};

Range padded(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) return {0.0, 1.0};
  if (hi - lo < 1e-9) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

// Plot area with linear data-to-pixel mapping and shared chrome.
class Canvas {
 public:
  Canvas(const std::string& title, Range x, Range y) : x_(x), y_(y) {
    os_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kWidth, 0) << "\" height=\""
        << num(kHeight, 0) << "\" viewBox=\"0 0 " << num(kWidth, 0) << ' ' << num(kHeight, 0)
        << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os_ << "<rect x=\"0\" y=\"0\" width=\"" << num(kWidth, 0) << "\" height=\"" << num(kHeight, 0)
        << "\" fill=\"white\"/>\n";
    os_ << "<text class=\"title\" x=\"" << num(kWidth / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">"
        << escape(title) << "</text>\n";
  }

  double px(double x) const { return kLeft + (x - x_.lo) / (x_.hi - x_.lo) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - y_.lo) / (y_.hi - y_.lo) * (kHeight - kTop - kBottom); }

  void axes(const std::string& x_label, const std::string& y_label) {
    const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
    os_ << "<g class=\"axes\" stroke=\"black\" fill=\"none\">\n";
    os_ << "<polyline points=\"" << num(x0) << ',' << num(y1) << ' ' << num(x0) << ',' << num(y0) << ' ' << num(x1)
        << ',' << num(y0) << "\"/>\n</g>\n";
    for (int i = 0; i <= 4; ++i) {
      const double xv = x_.lo + (x_.hi - x_.lo) * i / 4.0, yv = y_.lo + (y_.hi - y_.lo) * i / 4.0;
      os_ << "<text class=\"tick\" x=\"" << num(px(xv)) << "\" y=\"" << num(y0 + 14) << "\" text-anchor=\"middle\">"
          << num(xv, 1) << "</text>\n";
      os_ << "<text class=\"tick\" x=\"" << num(x0 - 4) << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">"
          << num(yv, 1) << "</text>\n";
    }
    os_ << "<text class=\"xlabel\" x=\"" << num((x0 + x1) / 2) << "\" y=\"" << num(kHeight - 12)
        << "\" text-anchor=\"middle\">" << escape(x_label) << "</text>\n";
    os_ << "<text class=\"ylabel\" x=\"14\" y=\"" << num((y0 + y1) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
        << num((y0 + y1) / 2) << ")\">" << escape(y_label) << "</text>\n";
  }

  void line(double xa, double ya, double xb, double yb, const std::string& cls, const std::string& style) {
    os_ << "<line class=\"" << cls << "\" x1=\"" << num(px(xa)) << "\" y1=\"" << num(py(ya)) << "\" x2=\""
        << num(px(xb)) << "\" y2=\"" << num(py(yb)) << "\" " << style << "/>\n";
  }

  void hline(double y, const std::string& label, const std::string& dash) {
    line(x_.lo, y, x_.hi, y, "ref-line", "stroke=\"#c0392b\" stroke-dasharray=\"" + dash + "\"");
    os_ << "<text class=\"ref-label\" x=\"" << num(kWidth - kRight - 2) << "\" y=\"" << num(py(y) - 3)
        << "\" text-anchor=\"end\" fill=\"#c0392b\">" << escape(label) << "</text>\n";
  }

  void point(double x, double y) {
    os_ << "<circle class=\"point\" cx=\"" << num(px(x)) << "\" cy=\"" << num(py(y))
        << "\" r=\"3\" fill=\"#2c7fb8\" fill-opacity=\"0.7\"/>\n";
  }

  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& colour) {
    os_ << "<polyline class=\"curve\" fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      os_ << (i ? " " : "") << num(px(pts[i].first)) << ',' << num(py(pts[i].second));
    }
    os_ << "\"/>\n";
  }

  std::ostream& raw() { return os_; }

  std::string finish() {
    os_ << "</svg>\n";
    return os_.str();
  }

 private:
  Range x_, y_;
  std::ostringstream os_;
};

void require_same_size(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("plot series differ in length");
}

std::string csv_field(const nlohmann::json& v) {
  if (v.is_null()) return "";
  if (v.is_number_integer() || v.is_number_unsigned()) return std::to_string(v.get<long long>());
  if (v.is_number()) return num(v.get<double>(), 4);
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

}  // namespace

std::string scatter_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                        const std::vector<double>& reference, const std::vector<double>& device) {
  require_same_size(reference, device);
  double lo = 0.0, hi = 1.0;
  if (!reference.empty()) {
    lo = std::min(*std::min_element(reference.begin(), reference.end()), *std::min_element(device.begin(), device.end()));
    hi = std::max(*std::max_element(reference.begin(), reference.end()), *std::max_element(device.begin(), device.end()));
  }
  const Range r = padded(std::min(lo, 0.0), hi);
  Canvas c(title, r, r);
  c.axes(x_label, y_label);
  c.line(r.lo, r.lo, r.hi, r.hi, "identity", "stroke=\"#888\" stroke-dasharray=\"4 3\"");
  for (std::size_t i = 0; i < reference.size(); ++i) c.point(reference[i], device[i]);
  return c.finish();
}

std::string bland_altman_svg(const std::string& title, const std::string& unit, const std::vector<double>& reference,
                             const std::vector<double>& device) {
  require_same_size(reference, device);
  if (reference.empty()) throw EmptyInputError("Bland-Altman plot needs at least one pair");
  std::vector<stats::Pair> pairs;
  for (std::size_t i = 0; i < reference.size(); ++i) pairs.push_back({std::to_string(i), device[i], reference[i]});
  const auto ba = stats::bland_altman(pairs);

  std::vector<double> means, diffs;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    means.push_back(0.5 * (device[i] + reference[i]));
    diffs.push_back(device[i] - reference[i]);
  }
  const Range xr = padded(*std::min_element(means.begin(), means.end()), *std::max_element(means.begin(), means.end()));
  const double dlo = std::min(*std::min_element(diffs.begin(), diffs.end()), ba.loa_low);
  const double dhi = std::max(*std::max_element(diffs.begin(), diffs.end()), ba.loa_high);
  Canvas c(title, xr, padded(dlo, dhi));
  c.axes("Mean of device and reference (" + unit + ")", "Device minus reference (" + unit + ")");
  c.hline(ba.loa_high, "+1.96 SD " + num(ba.loa_high), "6 3");
  c.hline(ba.bias, "bias " + num(ba.bias), "0");
  c.hline(ba.loa_low, "-1.96 SD " + num(ba.loa_low), "6 3");
  for (std::size_t i = 0; i < means.size(); ++i) c.point(means[i], diffs[i]);
  return c.finish();
}

std::string roc_svg(const std::string& title, const std::vector<Series>& curves) {
  static const char* colours[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a"};
  Canvas c(title, {0.0, 1.0}, {0.0, 1.0});
  c.axes("1 - specificity", "Sensitivity");
  c.line(0.0, 0.0, 1.0, 1.0, "diagonal", "stroke=\"#888\" stroke-dasharray=\"4 3\"");
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const std::string colour = colours[k % 4];
    c.polyline(curves[k].points, colour);
    c.raw() << "<text class=\"legend\" x=\"" << num(c.px(0.55)) << "\" y=\"" << num(c.py(0.25 - 0.07 * k))
            << "\" fill=\"" << colour << "\">" << escape(curves[k].label) << "</text>\n";
  }
  return c.finish();
}

std::string heatmap_svg(const std::string& title, const std::vector<std::string>& classes,
                        const std::vector<std::vector<double>>& counts) {
  const std::size_t k = classes.size();
  if (counts.size() != k) throw std::invalid_argument("heatmap needs one row per class");
  const double cell = std::min((kWidth - 2 * kLeft) / static_cast<double>(k), (kHeight - kTop - kBottom) / static_cast<double>(k));
  const double x0 = kLeft + 20, y0 = kTop + 10;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kWidth, 0) << "\" height=\"" << num(kHeight, 0)
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << num(kWidth, 0) << "\" height=\"" << num(kHeight, 0) << "\" fill=\"white\"/>\n";
  os << "<text class=\"title\" x=\"" << num(kWidth / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">"
     << escape(title) << "</text>\n";
  for (std::size_t i = 0; i < k; ++i) {
    if (counts[i].size() != k) throw std::invalid_argument("heatmap rows must be square");
    double row_total = 0.0;
    for (double v : counts[i]) row_total += v;
    for (std::size_t j = 0; j < k; ++j) {
      const double share = row_total > 0 ? counts[i][j] / row_total : 0.0;
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - share)));
      os << "<rect class=\"cell\" x=\"" << num(x0 + j * cell) << "\" y=\"" << num(y0 + i * cell) << "\" width=\""
         << num(cell) << "\" height=\"" << num(cell) << "\" fill=\"rgb(" << shade << ',' << shade
         << ",255)\" stroke=\"white\"/>\n";
      os << "<text x=\"" << num(x0 + (j + 0.5) * cell) << "\" y=\"" << num(y0 + (i + 0.5) * cell + 4)
         << "\" text-anchor=\"middle\" fill=\"" << (share > 0.5 ? "white" : "black") << "\">" << num(counts[i][j], 0)
         << " (" << num(100.0 * share, 1) << "%)</text>\n";
    }
    os << "<text class=\"row-label\" x=\"" << num(x0 - 4) << "\" y=\"" << num(y0 + (i + 0.5) * cell + 4)
       << "\" text-anchor=\"end\">" << escape(classes[i]) << "</text>\n";
    os << "<text class=\"col-label\" x=\"" << num(x0 + (i + 0.5) * cell) << "\" y=\"" << num(y0 + k * cell + 14)
       << "\" text-anchor=\"middle\">" << escape(classes[i]) << "</text>\n";
  }
  os << "<text x=\"" << num(x0 + k * cell / 2) << "\" y=\"" << num(y0 + k * cell + 30)
     << "\" text-anchor=\"middle\">Device</text>\n";
  os << "<text x=\"12\" y=\"" << num(y0 + k * cell / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 12 "
     << num(y0 + k * cell / 2) << ")\">Reference</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::vector<std::string> write_report(const nlohmann::json& agreement, const fs::path& out_dir,
                                      const PlotToggles& toggles) {
  if (!agreement.is_object()) throw DataError("agreement report is not a JSON object");
  const auto subjects = agreement.find("subjects");
  if (subjects != agreement.end() && !subjects->is_null() && !subjects->is_array()) {
    throw DataError("agreement report: 'subjects' is not an array");
  }
  if (subjects == agreement.end() || subjects->is_null() || subjects->empty()) {
    throw EmptyInputError("agreement report contains no subjects");
  }
  std::vector<std::string> written;
  fs::create_directories(out_dir);
  auto emit = [&](const std::string& name, const std::string& text) {
    io::write_text(out_dir / name, text);
    written.push_back(name);
  };

  try {
    const auto& subjects = agreement.at("subjects");
    auto column = [&](const char* side, auto&& get) {
      std::vector<double> v;
      for (const auto& s : subjects) v.push_back(get(s.at(side)));
      return v;
    };
    auto field = [](const char* key) { return [key](const nlohmann::json& r) { return r.at(key).get<double>(); }; };
    auto stage_minutes = [](std::vector<const char*> stages) {
      return [stages](const nlohmann::json& r) {
        double pct = 0.0;
        for (const char* s : stages) pct += r.at("stage_pct").at(s).get<double>();
        return pct / 100.0 * r.at("tst_h").get<double>() * 60.0;
      };
    };

    if (toggles.oahi) {
      const auto ref = column("truth", field("oahi")), dev = column("device", field("oahi"));
      emit("oahi_scatter.svg", scatter_svg("OAHI: device vs reference", "Reference OAHI (events/h)",
                                           "Device OAHI (events/h)", ref, dev));
      emit("oahi_bland_altman.svg", bland_altman_svg("OAHI agreement", "events/h", ref, dev));
    }

    if (toggles.roc) {
      std::vector<Series> curves;
      for (const auto& row : agreement.at("cutoffs")) {
        if (row.at("roc").is_null()) continue;
        Series s;
        s.label = "OAHI > " + num(row.at("cutoff").get<double>(), 0) + ", AUC " +
                  num(row.at("roc").at("auc").get<double>(), 3);
        for (const auto& p : row.at("roc").at("curve")) s.points.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
        curves.push_back(std::move(s));
      }
      emit("roc.svg", roc_svg("ROC at the severity cutoffs", curves));
    }

    if (toggles.confusion) {
      for (const auto& [scheme, cj] : agreement.at("staging").items()) {
        const auto classes = cj.at("classes").get<std::vector<std::string>>();
        const auto counts = cj.at("confusion").get<std::vector<std::vector<double>>>();
        emit("confusion_" + scheme + ".svg", heatmap_svg("Sleep stages (" + scheme + ")", classes, counts));
      }
    }

    if (toggles.sleep_time) {
      struct Quantity {
        const char* slug;
        const char* title;
        std::function<double(const nlohmann::json&)> get;
      };
      const std::vector<Quantity> quantities = {
          {"tst", "Total sleep time", [](const nlohmann::json& r) { return r.at("tst_h").get<double>() * 60.0; }},
          {"light", "Light sleep", stage_minutes({"N1", "N2"})},
          {"deep", "Deep sleep", stage_minutes({"N3"})},
          {"rem", "REM sleep", stage_minutes({"REM"})},
      };
      for (const auto& q : quantities) {
        const auto ref = column("truth", q.get), dev = column("device", q.get);
        emit(std::string(q.slug) + "_scatter.svg",
             scatter_svg(std::string(q.title) + ": device vs reference", "Reference (min)", "Device (min)", ref, dev));
        emit(std::string(q.slug) + "_bland_altman.svg",
             bland_altman_svg(std::string(q.title) + " agreement", "min", ref, dev));
      }
    }

    std::ostringstream cut;
    cut << "cutoff,tp,fn,tn,fp,sensitivity,sens_ci_low,sens_ci_high,specificity,spec_ci_low,spec_ci_high,auc\n";
    for (const auto& row : agreement.at("cutoffs")) {
      const auto& se = row.at("sensitivity");
      const auto& sp = row.at("specificity");
      cut << csv_field(row.at("cutoff")) << ',' << csv_field(row.at("tp")) << ',' << csv_field(row.at("fn")) << ','
          << csv_field(row.at("tn")) << ',' << csv_field(row.at("fp")) << ',' << csv_field(se.at("value")) << ','
          << csv_field(se.at("ci95").at(0)) << ',' << csv_field(se.at("ci95").at(1)) << ','
          << csv_field(sp.at("value")) << ',' << csv_field(sp.at("ci95").at(0)) << ','
          << csv_field(sp.at("ci95").at(1)) << ','
          << (row.at("roc").is_null() ? std::string() : csv_field(row.at("roc").at("auc"))) << '\n';
    }
    emit("cutoffs.csv", cut.str());

    std::ostringstream staging;
    staging << "scheme,class,recall,precision\n";
    for (const auto& [scheme, cj] : agreement.at("staging").items()) {
      const auto& classes = cj.at("classes");
      for (std::size_t i = 0; i < classes.size(); ++i) {
        staging << scheme << ',' << classes[i].get<std::string>() << ',' << csv_field(cj.at("recall").at(i)) << ','
                << csv_field(cj.at("precision").at(i)) << '\n';
      }
      staging << scheme << ",macro," << csv_field(cj.at("macro_recall")) << ',' << csv_field(cj.at("macro_precision"))
              << '\n';
      staging << scheme << ",accuracy," << csv_field(cj.at("accuracy")) << ",\n";
      staging << scheme << ",kappa," << csv_field(cj.at("kappa")) << ",\n";

      std::ostringstream cm;
      cm << "reference\\device";
      for (const auto& c : classes) cm << ',' << c.get<std::string>();
      cm << '\n';
      for (std::size_t i = 0; i < classes.size(); ++i) {
        cm << classes[i].get<std::string>();
        for (const auto& v : cj.at("confusion").at(i)) cm << ',' << csv_field(v);
        cm << '\n';
      }
      emit("confusion_" + scheme + ".csv", cm.str());
    }
    emit("staging.csv", staging.str());

    std::ostringstream subj;
    subj << "subject_id,truth_severity,device_severity,truth_oahi,device_oahi,truth_cai,device_cai,truth_tst_h,"
            "device_tst_h,events_matched,events_missed,events_spurious\n";
    for (const auto& s : subjects) {
      subj << s.at("subject_id").get<std::string>() << ',' << s.at("truth_severity").get<std::string>() << ','
           << s.at("device").at("severity").get<std::string>() << ',' << csv_field(s.at("truth").at("oahi")) << ','
           << csv_field(s.at("device").at("oahi")) << ',' << csv_field(s.at("truth").at("cai")) << ','
           << csv_field(s.at("device").at("cai")) << ',' << csv_field(s.at("truth").at("tst_h")) << ','
           << csv_field(s.at("device").at("tst_h")) << ',' << csv_field(s.at("events_matched")) << ','
           << csv_field(s.at("events_missed")) << ',' << csv_field(s.at("events_spurious")) << '\n';
    }
    emit("subjects.csv", subj.str());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed agreement report: ") + e.what());
  }
  return written;
}

}  // namespace sleeprad::report
