#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tabrec/batch.hpp"
#include "tabrec/image_io.hpp"
#include "tabrec/model.hpp"
#include "tabrec/rng.hpp"

namespace tabrec {

using BBox = std::array<double, 4>;  // x0, y0, x1, y1 in pixels

struct CellAnnotation {
  std::vector<std::string> tokens;  // content characters
  std::optional<BBox> bbox;         // absent for empty cells

  bool operator==(const CellAnnotation&) const = default;
};

struct TableAnnotation {
  std::string filename;
  std::string split = "train";
  std::vector<std::string> structure_tokens;
  std::vector<CellAnnotation> cells;
  int height = 0;  // image extents
  int width = 0;
  int channels = 0;

  /// Cell/trigger agreement, bbox presence and bounds. Throws FormatError.
  void validate() const;
  /// Structure with contents inserted, wrapped in <table>.
  std::string html() const;
  /// True when any cell spans more than one row or column.
  bool is_complex() const;

  bool operator==(const TableAnnotation&) const = default;
};

struct Sample {
  Image image;
  TableAnnotation annotation;
};

enum class RuleStyle { kFull, kHorizontal };

struct GenConfig {
  int image_height = 160;
  int image_width = 160;
  int channels = 1;
  int min_rows = 2;
  int max_rows = 6;
  int min_cols = 2;
  int max_cols = 5;
  double span_prob = 0.15;
  double empty_prob = 0.1;
  double header_prob = 0.5;           // chance of a one-row <thead>
  double horizontal_rule_prob = 0.0;  // chance of row rules only instead of a full grid
  int max_span = 10;
  int glyph_scale = 2;
  int margin = 4;        // blank border around the table
  int cell_padding = 2;  // minimum gap between a rule and text
  int max_text_len = 8;
  int span_attempts = 8;

  void validate() const;
  static GenConfig desk();
  /// 480x480x3 canvas with larger grids.
  static GenConfig full_scale();
};

struct CellSpec {
  int row = 0;
  int col = 0;
  int rowspan = 1;
  int colspan = 1;
  std::string text;
};

struct TableSpec {
  int rows = 0;
  int cols = 0;
  int header_rows = 0;
  RuleStyle rules = RuleStyle::kFull;
  bool centered = false;  // text alignment within cells
  std::vector<CellSpec> cells;  // row-major by origin
  std::uint64_t seed = 0;

  /// Spans tile the grid exactly and stay within bounds. Throws std::logic_error.
  void check_tiling(int max_span) const;
  std::vector<std::string> structure_tokens() const;
};

TableSpec sample_table_spec(Rng& rng, const GenConfig& config);

/// Draws the table and builds its annotation. Text that does not fit its cell
/// is cut to the longest fitting prefix (trailing spaces dropped).
Sample render(const TableSpec& spec, const GenConfig& config);

/// Sample i of a dataset is a pure function of (seed, i, config).
Sample generate_sample(std::uint64_t seed, std::size_t index, const GenConfig& config);

nlohmann::json to_json(const TableAnnotation& annotation);
/// PubTabNet-style record. Image extents are left 0. Throws FormatError.
TableAnnotation annotation_from_json(const nlohmann::json& j);

/// Writes DIR/annotations.jsonl and DIR/<split>/<filename> PNGs.
void write_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir);

struct LoadReport {
  std::size_t loaded = 0;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;  // one per skipped line, with its line number
};

/// Reads annotations from DIR/annotations.jsonl, or from a JSONL path whose
/// images live under its parent directory as <split>/<filename>. Malformed
/// lines and unreadable images are skipped and reported.
std::vector<Sample> load_dataset(const std::filesystem::path& path, LoadReport* report = nullptr);

/// Only the annotations (no images).
std::vector<TableAnnotation> load_annotations(const std::filesystem::path& path, LoadReport* report = nullptr);

struct BatchReport {
  std::size_t skipped = 0;
  std::vector<std::string> warnings;
};

/// Teacher-forcing batches of up to batch_size samples in the given order.
/// Samples whose framed structure or cell sequences exceed the model limits,
/// or whose image does not match the model input, are skipped with a warning.
std::vector<Batch> batchify(const std::vector<const Sample*>& samples, std::size_t batch_size,
                            const ModelConfig& config, BatchReport* report = nullptr);
std::vector<Batch> batchify(const std::vector<Sample>& samples, std::size_t batch_size, const ModelConfig& config,
                            BatchReport* report = nullptr);

}  // namespace tabrec
