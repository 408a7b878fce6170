#pragma once

// Random teacher-forcing batches for model-level tests. Token ids are drawn
// uniformly from the non-special part of each vocabulary; every sample gets at
// least one cell trigger.

#include <algorithm>
#include <array>
#include <memory>
#include <vector>

#include "tabrec/batch.hpp"
#include "tabrec/model.hpp"
#include "tabrec/rng.hpp"
#include "tabrec/vocab.hpp"

namespace testing {

struct OwnedBatch {
  std::vector<std::shared_ptr<tabrec::Image>> images;
  tabrec::Batch batch;
};

inline tabrec::Image random_image(tabrec::Rng& rng, const tabrec::ModelConfig& c) {
  tabrec::Image img(c.image_height, c.image_width, c.image_channels);
  for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
  return img;
}

struct SampleTokens {
  std::vector<int> structure;                // without SOS/EOS
  std::vector<std::vector<int>> cell_chars;  // one per trigger, without SOS/EOS
  std::vector<std::array<float, 4>> boxes;
};

inline SampleTokens random_tokens(tabrec::Rng& rng, const tabrec::ModelConfig& c, std::size_t max_tokens,
                                  std::size_t max_chars) {
  const tabrec::StructVocab sv;
  SampleTokens s;
  const auto n = static_cast<std::size_t>(
      rng.uniform_int(1, static_cast<std::int64_t>(std::min<std::size_t>(max_tokens, static_cast<std::size_t>(c.max_struct_len - 2)))));
  for (std::size_t i = 0; i < n; ++i) s.structure.push_back(static_cast<int>(rng.uniform_int(4, c.struct_vocab_size - 1)));
  s.structure[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1))] = sv.id("<td></td>");
  const auto chars_cap = static_cast<std::int64_t>(std::min<std::size_t>(max_chars, static_cast<std::size_t>(c.max_cell_len - 2)));
  for (int id : s.structure) {
    if (!sv.is_cell_trigger(id)) continue;
    std::vector<int> chars(static_cast<std::size_t>(rng.uniform_int(0, chars_cap)));
    for (auto& ch : chars) ch = static_cast<int>(rng.uniform_int(4, c.content_vocab_size - 1));
    s.cell_chars.push_back(chars);
    const auto draw = [&](double lo, double hi) { return static_cast<float>(lo + (hi - lo) * rng.uniform()); };
    const float x0 = draw(0.0, 0.5), y0 = draw(0.0, 0.5);
    s.boxes.push_back({x0, y0, x0 + draw(0.05, 0.5), y0 + draw(0.05, 0.5)});
  }
  return s;
}

/// Pads and aligns per-sample tokens exactly as batchify does, padding to at
/// least min_seq / min_cell.
inline OwnedBatch assemble(const std::vector<std::shared_ptr<tabrec::Image>>& images,
                           const std::vector<SampleTokens>& samples, std::size_t min_seq = 0,
                           std::size_t min_cell = 0) {
  using tabrec::Vocab;
  const tabrec::StructVocab sv;
  OwnedBatch ob;
  ob.images = images;
  auto& b = ob.batch;
  for (const auto& img : images) b.images.push_back(img.get());
  b.seq_len = min_seq;
  b.cell_len = min_cell;
  for (const auto& s : samples) {
    b.seq_len = std::max(b.seq_len, s.structure.size() + 1);
    for (const auto& c : s.cell_chars) b.cell_len = std::max(b.cell_len, c.size() + 1);
  }
  b.cell_len = std::max<std::size_t>(b.cell_len, 1);
  for (std::size_t si = 0; si < samples.size(); ++si) {
    const auto& s = samples[si];
    std::vector<int> in(b.seq_len, Vocab::kPad), out(b.seq_len, Vocab::kPad);
    in[0] = Vocab::kSos;
    for (std::size_t i = 0; i < s.structure.size(); ++i) {
      in[i + 1] = s.structure[i];
      out[i] = s.structure[i];
    }
    out[s.structure.size()] = Vocab::kEos;
    b.struct_in.insert(b.struct_in.end(), in.begin(), in.end());
    b.struct_out.insert(b.struct_out.end(), out.begin(), out.end());
    std::size_t k = 0;
    for (std::size_t p = 0; p < s.structure.size(); ++p) {
      if (!sv.is_cell_trigger(s.structure[p])) continue;
      const auto& chars = s.cell_chars[k];
      b.cells.push_back({si, p});
      std::vector<int> cin(b.cell_len, Vocab::kPad), cout(b.cell_len, Vocab::kPad);
      cin[0] = Vocab::kSos;
      for (std::size_t i = 0; i < chars.size(); ++i) {
        cin[i + 1] = chars[i];
        cout[i] = chars[i];
      }
      cout[chars.size()] = Vocab::kEos;
      b.cell_in.insert(b.cell_in.end(), cin.begin(), cin.end());
      b.cell_out.insert(b.cell_out.end(), cout.begin(), cout.end());
      b.bbox.insert(b.bbox.end(), s.boxes[k].begin(), s.boxes[k].end());
      b.bbox_mask.push_back(chars.empty() ? 0 : 1);
      ++k;
    }
  }
  return ob;
}

inline OwnedBatch random_batch(tabrec::Rng& rng, const tabrec::ModelConfig& c, std::size_t size,
                               std::size_t max_tokens = 10, std::size_t max_chars = 4) {
  std::vector<std::shared_ptr<tabrec::Image>> images;
  std::vector<SampleTokens> samples;
  for (std::size_t i = 0; i < size; ++i) {
    images.push_back(std::make_shared<tabrec::Image>(random_image(rng, c)));
    samples.push_back(random_tokens(rng, c, max_tokens, max_chars));
  }
  return assemble(images, samples);
}

/// Tiny geometry with the full-size vocabularies.
inline tabrec::ModelConfig tiny_full_vocab() {
  tabrec::ModelConfig c = tabrec::ModelConfig::tiny();
  c.content_vocab_size = tabrec::ContentVocab().size();
  c.struct_vocab_size = tabrec::StructVocab().size();
  return c;
}

}  // namespace testing
