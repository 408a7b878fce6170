#pragma once

#include <array>
#include <string>
#include <vector>

#include "json.hpp"
#include "tabrec/image_io.hpp"
#include "tabrec/model.hpp"
#include "tabrec/vocab.hpp"

namespace tabrec {

struct DecodeOptions {
  int beam_width = 1;  // only greedy (1) is implemented
};

template <typename T>
struct StructureDecode {
  std::vector<int> ids;                // emitted tokens, EOS excluded
  std::vector<double> probabilities;   // softmax probability of each emitted token
  std::vector<std::vector<T>> hidden;  // shared-decoder row that produced each token
  bool truncated = false;              // no EOS within max_struct_len - 1 steps
};

struct CellPrediction {
  std::string content;
  std::array<double, 4> bbox{};  // normalized (x0, y0, x1, y1), x0 <= x1, y0 <= y1
  bool truncated = false;
};

struct CellResult {
  std::string content;
  std::array<double, 4> bbox{};  // pixels
  double confidence = 0;
};

struct TableResult {
  std::string filename;
  std::vector<std::string> emitted_tokens;    // raw decoder output
  std::vector<double> token_probabilities;    // per emitted token
  std::vector<std::string> structure_tokens;  // after repair
  std::vector<CellResult> cells;
  std::string html;
  bool truncated = false;
  int repairs = 0;
};

/// Greedy structure decoding from SOS. Argmax skips PAD, SOS and UNK.
template <typename T>
StructureDecode<T> decode_structure(const TableModel<T>& model, const EncoderMemory<T>& memory,
                                    const DecodeOptions& options = {});

/// One bbox and one greedy character sequence per trigger hidden state, in
/// order. Characters of all unfinished cells are decoded together.
template <typename T>
std::vector<CellPrediction> decode_cells(const TableModel<T>& model, const EncoderMemory<T>& memory,
                                         const std::vector<std::vector<T>>& trigger_hidden);

struct RepairResult {
  std::vector<std::string> tokens;
  int repairs = 0;
};

/// Makes an emitted token stream well formed without adding or removing cell
/// triggers: orphan span attributes, `>` and `</td>` are dropped, unfinished
/// spanning cells are closed, cells outside a row get one, and sections and
/// rows are balanced. Each inserted or dropped token counts as one repair.
RepairResult repair_structure(const std::vector<std::string>& tokens);

/// encode -> decode_structure -> decode_cells -> assemble_html. The image must
/// already match the configured input size.
template <typename T>
TableResult recognize_table(const TableModel<T>& model, const Image& image, const DecodeOptions& options = {});

nlohmann::json to_json(const TableResult& result);
/// Throws FormatError.
TableResult table_result_from_json(const nlohmann::json& j);

/// RGB copy of `image` with every cell box outlined.
Image draw_overlay(const Image& image, const TableResult& result);

}  // namespace tabrec
