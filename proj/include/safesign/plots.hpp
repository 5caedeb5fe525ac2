#pragma once

#include <array>
#include <string>
#include <vector>

namespace safesign::plots {

struct Series {
  std::string label;
  std::vector<double> values;
  std::array<double, 3> color{0.2, 0.4, 0.8};
};

// Grouped bars, one group per category.
void bar_chart(const std::string& path, const std::string& title,
               const std::vector<std::string>& categories, const std::vector<Series>& series,
               double y_min = 0.0, double y_max = 0.0);

// One polyline per series over shared x values.
void line_chart(const std::string& path, const std::string& title, const std::vector<double>& xs,
                const std::vector<Series>& series);

// Overlaid value distributions.
void histogram(const std::string& path, const std::string& title,
               const std::vector<Series>& samples, int bins = 20);

}  // namespace safesign::plots
