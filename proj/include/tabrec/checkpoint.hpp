#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>

#include "tabrec/model.hpp"
#include "tabrec/optim.hpp"

namespace tabrec {

struct TrainingState {
  std::uint64_t step = 0;   // optimizer steps taken
  std::uint64_t seed = 0;   // seed the model was initialized with
  int epoch = 0;            // completed epochs
};

struct Checkpoint {
  std::unique_ptr<TableModel<float>> model;
  std::unique_ptr<Adam<float>> optimizer;  // null when saved without one
  TrainingState state;
};

/// File layout: u64 little-endian header length, the JSON header
/// (config, manifest of {name, shape, offset} per tensor, optimizer and
/// training state), then little-endian float32 blobs: every parameter in
/// registration order, then Adam first moments, then second moments.
/// Written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const TableModel<float>& model, const Adam<float>* optimizer,
                     const TrainingState& state);

/// Throws FormatError on a truncated or inconsistent file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tabrec
