#include "safesign/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "safesign/image.hpp"
#include "safesign/tensor.hpp"

namespace safesign::plots {

namespace {

// Classic 5x7 column-major font, LSB = top row.
const std::map<char, std::array<unsigned char, 5>>& font() {
  static const std::map<char, std::array<unsigned char, 5>> f = {
      {'0', {0x3E, 0x51, 0x49, 0x45, 0x3E}}, {'1', {0x00, 0x42, 0x7F, 0x40, 0x00}},
      {'2', {0x42, 0x61, 0x51, 0x49, 0x46}}, {'3', {0x21, 0x41, 0x45, 0x4B, 0x31}},
      {'4', {0x18, 0x14, 0x12, 0x7F, 0x10}}, {'5', {0x27, 0x45, 0x45, 0x45, 0x39}},
      {'6', {0x3C, 0x4A, 0x49, 0x49, 0x30}}, {'7', {0x01, 0x71, 0x09, 0x05, 0x03}},
      {'8', {0x36, 0x49, 0x49, 0x49, 0x36}}, {'9', {0x06, 0x49, 0x49, 0x29, 0x1E}},
      {'A', {0x7E, 0x11, 0x11, 0x11, 0x7E}}, {'B', {0x7F, 0x49, 0x49, 0x49, 0x36}},
      {'C', {0x3E, 0x41, 0x41, 0x41, 0x22}}, {'D', {0x7F, 0x41, 0x41, 0x22, 0x1C}},
      {'E', {0x7F, 0x49, 0x49, 0x49, 0x41}}, {'F', {0x7F, 0x09, 0x09, 0x09, 0x01}},
      {'G', {0x3E, 0x41, 0x49, 0x49, 0x7A}}, {'H', {0x7F, 0x08, 0x08, 0x08, 0x7F}},
      {'I', {0x00, 0x41, 0x7F, 0x41, 0x00}}, {'J', {0x20, 0x40, 0x41, 0x3F, 0x01}},
      {'K', {0x7F, 0x08, 0x14, 0x22, 0x41}}, {'L', {0x7F, 0x40, 0x40, 0x40, 0x40}},
      {'M', {0x7F, 0x02, 0x0C, 0x02, 0x7F}}, {'N', {0x7F, 0x04, 0x08, 0x10, 0x7F}},
      {'O', {0x3E, 0x41, 0x41, 0x41, 0x3E}}, {'P', {0x7F, 0x09, 0x09, 0x09, 0x06}},
      {'Q', {0x3E, 0x41, 0x51, 0x21, 0x5E}}, {'R', {0x7F, 0x09, 0x19, 0x29, 0x46}},
      {'S', {0x46, 0x49, 0x49, 0x49, 0x31}}, {'T', {0x01, 0x01, 0x7F, 0x01, 0x01}},
      {'U', {0x3F, 0x40, 0x40, 0x40, 0x3F}}, {'V', {0x1F, 0x20, 0x40, 0x20, 0x1F}},
      {'W', {0x3F, 0x40, 0x38, 0x40, 0x3F}}, {'X', {0x63, 0x14, 0x08, 0x14, 0x63}},
      {'Y', {0x07, 0x08, 0x70, 0x08, 0x07}}, {'Z', {0x61, 0x51, 0x49, 0x45, 0x43}},
      {'.', {0x00, 0x60, 0x60, 0x00, 0x00}}, {'-', {0x08, 0x08, 0x08, 0x08, 0x08}},
      {'_', {0x40, 0x40, 0x40, 0x40, 0x40}}, {'%', {0x62, 0x64, 0x08, 0x13, 0x23}},
      {'/', {0x20, 0x10, 0x08, 0x04, 0x02}}, {':', {0x00, 0x36, 0x36, 0x00, 0x00}},
      {'=', {0x14, 0x14, 0x14, 0x14, 0x14}}, {' ', {0x00, 0x00, 0x00, 0x00, 0x00}},
  };
  return f;
}

constexpr int kW = 640;
constexpr int kH = 420;
constexpr int kLeft = 64, kRight = 24, kTop = 34, kBottom = 56;

struct Canvas {
  Tensor img{std::vector<int>{3, kH, kW}};

  Canvas() { img.fill(1.0); }

  void put(int x, int y, const std::array<double, 3>& c) {
    if (x < 0 || x >= kW || y < 0 || y >= kH) return;
    for (int k = 0; k < 3; ++k) img(k, y, x) = c[static_cast<size_t>(k)];
  }

  void fill_rect(int x0, int y0, int x1, int y1, const std::array<double, 3>& c) {
    for (int y = std::max(0, y0); y <= std::min(kH - 1, y1); ++y)
      for (int x = std::max(0, x0); x <= std::min(kW - 1, x1); ++x) put(x, y, c);
  }

  void line(double x0, double y0, double x1, double y1, const std::array<double, 3>& c) {
    const int steps = static_cast<int>(std::max(std::abs(x1 - x0), std::abs(y1 - y0))) + 1;
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      put(static_cast<int>(std::lround(x0 + t * (x1 - x0))),
          static_cast<int>(std::lround(y0 + t * (y1 - y0))), c);
    }
  }

  void text(int x, int y, const std::string& s, const std::array<double, 3>& c) {
    int cx = x;
    for (char raw : s) {
      char ch = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
      auto it = font().find(ch);
      if (it == font().end()) it = font().find(' ');
      for (int col = 0; col < 5; ++col)
        for (int row = 0; row < 7; ++row)
          if (it->second[static_cast<size_t>(col)] & (1u << row)) put(cx + col, y + row, c);
      cx += 6;
    }
  }

  void save(const std::string& path) const { write_png(path, img); }
};

constexpr std::array<double, 3> kBlack{0.05, 0.05, 0.05};
constexpr std::array<double, 3> kGrid{0.85, 0.85, 0.85};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

void draw_frame(Canvas& cv, const std::string& title, double y_min, double y_max) {
  cv.text(kLeft, 12, title, kBlack);
  for (int t = 0; t <= 5; ++t) {
    const double v = y_min + (y_max - y_min) * t / 5.0;
    const int y = kH - kBottom - static_cast<int>((kH - kTop - kBottom) * t / 5.0);
    cv.line(kLeft, y, kW - kRight, y, kGrid);
    cv.text(6, y - 3, fmt(v), kBlack);
  }
  cv.line(kLeft, kTop, kLeft, kH - kBottom, kBlack);
  cv.line(kLeft, kH - kBottom, kW - kRight, kH - kBottom, kBlack);
}

int y_pix(double v, double y_min, double y_max) {
  const double t = (v - y_min) / (y_max - y_min);
  return kH - kBottom - static_cast<int>(std::lround((kH - kTop - kBottom) * std::clamp(t, 0.0, 1.0)));
}

void draw_legend(Canvas& cv, const std::vector<Series>& series) {
  int x = kLeft + 8;
  for (const Series& s : series) {
    cv.fill_rect(x, kTop - 14, x + 8, kTop - 6, s.color);
    cv.text(x + 12, kTop - 14, s.label, kBlack);
    x += 12 + 6 * static_cast<int>(s.label.size()) + 14;
  }
}

}  // namespace

void bar_chart(const std::string& path, const std::string& title,
               const std::vector<std::string>& categories, const std::vector<Series>& series,
               double y_min, double y_max) {
  Canvas cv;
  if (y_max <= y_min) {
    y_max = 0.0;
    for (const Series& s : series)
      for (double v : s.values) y_max = std::max(y_max, v);
    y_max = y_max <= 0 ? 1.0 : y_max * 1.1;
    y_min = 0.0;
  }
  draw_frame(cv, title, y_min, y_max);
  draw_legend(cv, series);

  const int plot_w = kW - kLeft - kRight;
  const int ncat = static_cast<int>(categories.size());
  const int nser = std::max<size_t>(1, series.size());
  const int group_w = plot_w / std::max(1, ncat);
  const int bar_w = std::max(3, (group_w - 10) / static_cast<int>(nser));
  for (int ci = 0; ci < ncat; ++ci) {
    const int gx = kLeft + ci * group_w + 5;
    for (size_t si = 0; si < series.size(); ++si) {
      if (ci >= static_cast<int>(series[si].values.size())) continue;
      const double v = series[si].values[static_cast<size_t>(ci)];
      const int x0 = gx + static_cast<int>(si) * bar_w;
      cv.fill_rect(x0, y_pix(v, y_min, y_max), x0 + bar_w - 2, kH - kBottom - 1, series[si].color);
    }
    // truncated category label
    std::string lab = categories[static_cast<size_t>(ci)];
    const size_t max_chars = static_cast<size_t>(std::max(1, (group_w - 4) / 6));
    if (lab.size() > max_chars) lab = lab.substr(0, max_chars);
    cv.text(gx, kH - kBottom + 8, lab, kBlack);
  }
  cv.save(path);
}

void line_chart(const std::string& path, const std::string& title, const std::vector<double>& xs,
                const std::vector<Series>& series) {
  Canvas cv;
  double y_min = 1e300, y_max = -1e300;
  for (const Series& s : series)
    for (double v : s.values) {
      y_min = std::min(y_min, v);
      y_max = std::max(y_max, v);
    }
  if (y_min > y_max) {
    y_min = 0;
    y_max = 1;
  }
  if (y_max - y_min < 1e-12) {
    y_max += 0.5;
    y_min -= 0.5;
  } else {
    const double pad = 0.08 * (y_max - y_min);
    y_min -= pad;
    y_max += pad;
  }
  draw_frame(cv, title, y_min, y_max);
  draw_legend(cv, series);

  const double x_min = xs.empty() ? 0.0 : xs.front();
  const double x_max = xs.empty() ? 1.0 : xs.back();
  auto x_pix = [&](double x) {
    const double t = x_max > x_min ? (x - x_min) / (x_max - x_min) : 0.5;
    return kLeft + static_cast<int>(std::lround((kW - kLeft - kRight) * t));
  };
  for (const Series& s : series) {
    for (size_t i = 1; i < s.values.size() && i < xs.size(); ++i) {
      cv.line(x_pix(xs[i - 1]), y_pix(s.values[i - 1], y_min, y_max), x_pix(xs[i]),
              y_pix(s.values[i], y_min, y_max), s.color);
      cv.fill_rect(x_pix(xs[i]) - 1, y_pix(s.values[i], y_min, y_max) - 1, x_pix(xs[i]) + 1,
                   y_pix(s.values[i], y_min, y_max) + 1, s.color);
    }
  }
  for (size_t i = 0; i < xs.size(); ++i)
    cv.text(x_pix(xs[i]) - 6, kH - kBottom + 8, fmt(xs[i]), kBlack);
  cv.save(path);
}

void histogram(const std::string& path, const std::string& title,
               const std::vector<Series>& samples, int bins) {
  double lo = 1e300, hi = -1e300;
  for (const Series& s : samples)
    for (double v : s.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (lo > hi) {
    lo = 0;
    hi = 1;
  }
  if (hi - lo < 1e-12) hi = lo + 1.0;

  std::vector<Series> counts;
  double peak = 0;
  for (const Series& s : samples) {
    Series c;
    c.label = s.label;
    c.color = s.color;
    c.values.assign(static_cast<size_t>(bins), 0.0);
    for (double v : s.values) {
      int b = static_cast<int>((v - lo) / (hi - lo) * bins);
      b = std::clamp(b, 0, bins - 1);
      c.values[static_cast<size_t>(b)] += 1.0;
    }
    for (double v : c.values) peak = std::max(peak, v);
    counts.push_back(std::move(c));
  }
  std::vector<std::string> labels;
  for (int b = 0; b < bins; ++b)
    labels.push_back(b % std::max(1, bins / 6) == 0 ? fmt(lo + (hi - lo) * b / bins) : "");
  bar_chart(path, title, labels, counts, 0.0, peak <= 0 ? 1.0 : peak * 1.1);
}

}  // namespace safesign::plots
