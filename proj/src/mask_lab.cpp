#include "safesign/mask_lab.hpp"

#include <json.hpp>

#include <stdexcept>

namespace safesign::mask_lab {

MaskGrid make_grid(int h_lines, int v_lines) {
  if (h_lines < 0 || v_lines < 0) throw std::invalid_argument("make_grid: negative line count");
  if (h_lines + v_lines < 1) throw std::invalid_argument("make_grid: at least one segmentation line required");
  return MaskGrid{h_lines, v_lines};
}

std::vector<std::vector<uint8_t>> enumerate_patterns(const MaskGrid& grid, PatternPolicy policy, int k) {
  const int n = grid.blocks();
  std::vector<std::vector<uint8_t>> out;
  switch (policy) {
    case PatternPolicy::SingleBlock:
      for (int i = 0; i < n; ++i) {
        std::vector<uint8_t> bits(static_cast<size_t>(n), 0);
        bits[static_cast<size_t>(i)] = 1;
        out.push_back(std::move(bits));
      }
      break;
    case PatternPolicy::AllProperSubsets: {
      if (n > 20) throw std::invalid_argument("enumerate_patterns: grid too large for exhaustive subsets");
      // lexicographic over the bit vector, block 0 most significant
      const uint32_t full = (1u << n) - 1u;
      for (uint32_t code = 1; code < full; ++code) {
        std::vector<uint8_t> bits(static_cast<size_t>(n), 0);
        for (int i = 0; i < n; ++i)
          bits[static_cast<size_t>(i)] = (code >> (n - 1 - i)) & 1u;
        out.push_back(std::move(bits));
      }
      break;
    }
    case PatternPolicy::KOfN: {
      if (k <= 0 || k >= n) throw std::invalid_argument("enumerate_patterns: k must be in [1, blocks)");
      std::vector<uint8_t> bits(static_cast<size_t>(n), 0);
      // lexicographic combinations
      std::vector<int> idx(static_cast<size_t>(k));
      for (int i = 0; i < k; ++i) idx[static_cast<size_t>(i)] = i;
      while (true) {
        std::fill(bits.begin(), bits.end(), 0);
        for (int i : idx) bits[static_cast<size_t>(i)] = 1;
        out.push_back(bits);
        int i = k - 1;
        while (i >= 0 && idx[static_cast<size_t>(i)] == n - k + i) --i;
        if (i < 0) break;
        ++idx[static_cast<size_t>(i)];
        for (int j = i + 1; j < k; ++j) idx[static_cast<size_t>(j)] = idx[static_cast<size_t>(j - 1)] + 1;
      }
      break;
    }
  }
  return out;
}

BinaryMask rasterize(const MaskGrid& grid, const std::vector<uint8_t>& block_bits) {
  const int n = grid.blocks();
  if (static_cast<int>(block_bits.size()) != n)
    throw std::invalid_argument("rasterize: block_bits length must equal rows*cols");
  int ones = 0;
  for (uint8_t b : block_bits) ones += b ? 1 : 0;
  if (ones == 0) throw std::invalid_argument("rasterize: all-zero mask is not a valid gate");
  if (ones == n) throw std::invalid_argument("rasterize: all-one mask is not a valid gate");

  BinaryMask mask;
  mask.grid = grid;
  mask.block_bits.assign(block_bits.begin(), block_bits.end());
  mask.bits = Tensor({kSignSize, kSignSize});
  for (int bi = 0; bi < grid.rows(); ++bi) {
    const int y0 = grid.row_edge(bi), y1 = grid.row_edge(bi + 1);
    for (int bj = 0; bj < grid.cols(); ++bj) {
      const int x0 = grid.col_edge(bj), x1 = grid.col_edge(bj + 1);
      const double v = block_bits[static_cast<size_t>(bi * grid.cols() + bj)] ? 1.0 : 0.0;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) mask.bits(y, x) = v;
    }
  }
  return mask;
}

std::vector<BinaryMask> default_mask_suite(const std::vector<int>& levels) {
  std::vector<BinaryMask> suite;
  for (int level : levels) {
    std::vector<MaskGrid> grids;
    if (level == 1) {
      grids.push_back(make_grid(1, 0));
      grids.push_back(make_grid(0, 1));
    } else {
      if (level % 2 != 0) throw std::invalid_argument("default_mask_suite: levels above 1 must be even");
      grids.push_back(make_grid(level / 2, level / 2));
    }
    for (const MaskGrid& g : grids)
      for (const auto& bits : enumerate_patterns(g, PatternPolicy::SingleBlock))
        suite.push_back(rasterize(g, bits));
  }
  return suite;
}

std::string patterns_to_json(const MaskGrid& grid, const std::vector<std::vector<uint8_t>>& patterns) {
  nlohmann::ordered_json j;
  j["grid"] = {{"h_lines", grid.h_lines}, {"v_lines", grid.v_lines}};
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& p : patterns) arr.push_back(std::vector<int>(p.begin(), p.end()));
  j["patterns"] = arr;
  return j.dump(2);
}

}  // namespace safesign::mask_lab
