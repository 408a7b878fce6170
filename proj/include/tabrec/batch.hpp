#pragma once

#include <cstdint>
#include <vector>

#include "tabrec/image_io.hpp"

namespace tabrec {

/// Where a supervised cell sits: its sample within the batch and the row of
/// that sample's shared-decoder output whose target is the cell's trigger token.
struct CellAlignment {
  std::size_t sample = 0;
  std::size_t position = 0;
};

/// Teacher-forcing inputs and targets for a group of samples. Sequences are
/// right-padded with PAD; cells are ordered by sample, then by trigger order.
/// Images are borrowed from the sample storage the batch was built from.
struct Batch {
  std::vector<const Image*> images;

  std::size_t seq_len = 0;       // T
  std::vector<int> struct_in;    // B x T: SOS, tokens..., PAD...
  std::vector<int> struct_out;   // B x T: tokens..., EOS, PAD...

  std::size_t cell_len = 0;      // L
  std::vector<CellAlignment> cells;
  std::vector<int> cell_in;      // N x L: SOS, chars..., PAD...
  std::vector<int> cell_out;     // N x L: chars..., EOS, PAD...
  std::vector<float> bbox;       // N x 4, (x0, y0, x1, y1) / (w, h, w, h)
  std::vector<std::uint8_t> bbox_mask;  // N, 1 for non-empty cells

  std::size_t size() const { return images.size(); }
};

}  // namespace tabrec
