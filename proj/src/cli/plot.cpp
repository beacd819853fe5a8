#include <algorithm>
#include <cstdio>
#include <sstream>

#include "domprompt/cli.hpp"

namespace domprompt {

namespace {

constexpr double kW = 480, kH = 300, kLeft = 56, kRight = 16, kTop = 32, kBottom = 48;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
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

void header(std::ostringstream& o, const std::string& title) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kW / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << escape(title)
    << "</text>\n"
    << "<line x1=\"" << kLeft << "\" y1=\"" << kH - kBottom << "\" x2=\"" << kW - kRight << "\" y2=\""
    << kH - kBottom << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kH - kBottom
    << "\" stroke=\"black\"/>\n";
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<double>& ys) {
  std::ostringstream o;
  header(o, title);
  const double lo = ys.empty() ? 0.0 : std::min(0.0, *std::min_element(ys.begin(), ys.end()));
  double hi = ys.empty() ? 1.0 : *std::max_element(ys.begin(), ys.end());
  if (hi <= lo) hi = lo + 1.0;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto px = [&](std::size_t i) { return kLeft + (ys.size() > 1 ? pw * i / (ys.size() - 1) : pw / 2); };
  auto py = [&](double v) { return kTop + ph * (1.0 - (v - lo) / (hi - lo)); };
  o << "<text x=\"" << kLeft - 4 << "\" y=\"" << py(hi) + 4 << "\" text-anchor=\"end\">" << num(hi) << "</text>\n"
    << "<text x=\"" << kLeft - 4 << "\" y=\"" << py(lo) + 4 << "\" text-anchor=\"end\">" << num(lo) << "</text>\n"
    << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">" << escape(x_label)
    << " (1.." << ys.size() << ")</text>\n"
    << "<text x=\"14\" y=\"" << kTop + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
    << kTop + ph / 2 << ")\">" << escape(y_label) << "</text>\n";
  if (!ys.empty()) {
    o << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < ys.size(); ++i) o << (i ? " " : "") << num(px(i)) << "," << num(py(ys[i]));
    o << "\"/>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string svg_bar_chart(const std::string& title,
                          const std::vector<std::pair<std::string, double>>& bars) {
  std::ostringstream o;
  header(o, title);
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  o << "<text x=\"" << kLeft - 4 << "\" y=\"" << kTop + 4 << "\" text-anchor=\"end\">1</text>\n"
    << "<text x=\"" << kLeft - 4 << "\" y=\"" << kTop + ph + 4 << "\" text-anchor=\"end\">0</text>\n";
  const double slot = bars.empty() ? pw : pw / bars.size();
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double v = std::clamp(bars[i].second, 0.0, 1.0);
    const double x = kLeft + slot * i + slot * 0.15;
    o << "<rect x=\"" << num(x) << "\" y=\"" << num(kTop + ph * (1 - v)) << "\" width=\"" << num(slot * 0.7)
      << "\" height=\"" << num(ph * v) << "\" fill=\"steelblue\"/>\n"
      << "<text x=\"" << num(x + slot * 0.35) << "\" y=\"" << kH - kBottom + 14
      << "\" text-anchor=\"middle\" font-size=\"9\">" << escape(bars[i].first) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace domprompt
