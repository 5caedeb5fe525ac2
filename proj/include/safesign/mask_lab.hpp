#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "safesign/image.hpp"
#include "safesign/tensor.hpp"

namespace safesign::mask_lab {

// Axis-aligned segmentation grid over the 64x64 frame. h_lines horizontal and
// v_lines vertical lines split it into (h_lines+1) x (v_lines+1) blocks with
// edges at floor(64*i/rows), floor(64*j/cols).
struct MaskGrid {
  int h_lines = 0;
  int v_lines = 0;

  int rows() const { return h_lines + 1; }
  int cols() const { return v_lines + 1; }
  int blocks() const { return rows() * cols(); }

  int row_edge(int i) const { return kSignSize * i / rows(); }
  int col_edge(int j) const { return kSignSize * j / cols(); }
};

MaskGrid make_grid(int h_lines, int v_lines);

// Block-constant binary gate; never all-zero or all-one.
struct BinaryMask {
  Tensor bits;  // (64,64) of {0,1}
  MaskGrid grid;
  std::vector<uint8_t> block_bits;  // row-major, rows*cols entries

  long ones() const {
    long n = 0;
    for (long i = 0; i < bits.size(); ++i) n += bits[i] > 0.5 ? 1 : 0;
    return n;
  }
};

enum class PatternPolicy { SingleBlock, AllProperSubsets, KOfN };

std::vector<std::vector<uint8_t>> enumerate_patterns(const MaskGrid& grid, PatternPolicy policy,
                                                     int k = 0);

BinaryMask rasterize(const MaskGrid& grid, const std::vector<uint8_t>& block_bits);

// The default experiment suite: single-block masks at every granularity level.
// Levels give the segmentation line count; level 1 contributes both the (1,0)
// and (0,1) splits, level L>1 the balanced (L/2,L/2) grid.
std::vector<BinaryMask> default_mask_suite(const std::vector<int>& levels = {1, 2, 4, 6});

std::string patterns_to_json(const MaskGrid& grid,
                             const std::vector<std::vector<uint8_t>>& patterns);

}  // namespace safesign::mask_lab
