#pragma once

// Internal fast-path runtime shared between model.cpp and model_fast.cpp.
// Weight data is copied into GEMM-friendly combined layouts; sequences are
// processed through a growing attention K/V cache. Everything here is
// read-only w.r.t. the model and safe to use from multiple threads on
// separate state objects.

#include <vector>

#include "vrt/model.hpp"

namespace vrt::detail_fast {

struct FastWeights {
  int dm = 0, hd = 0, heads = 0, n_layers = 0, ff = 0, vocab = 0;
  struct Layer {
    std::vector<double> ln1g, ln1b, ln2g, ln2b;
    std::vector<double> wqkv;  // [dm, 3*dm]: q block, k block, v block
    std::vector<double> wo;    // [dm, dm], head h occupies rows h*hd..
    std::vector<double> w1, b1, w2, b2;
  };
  std::vector<Layer> layers;
  std::vector<double> lnfg, lnfb;
  const VLAModel* model = nullptr;

  explicit FastWeights(const VLAModel& m);
};

struct KvState {
  int rows = 0;                        // rows appended so far
  std::vector<std::vector<double>> k;  // per layer, [rows * dm]
  std::vector<std::vector<double>> v;
  std::vector<double> final_rows;      // pre-final-LN residuals, [rows * dm]
};

// Processes `rows` new sequence rows (embedded inputs, row-major [rows, dm],
// consumed in place) through all layers, appending their K/V and final
// residuals to the state.
void append_rows(const FastWeights& fw, KvState& st, std::vector<double>& x,
                 int rows);

// Final-LN + tied output head for one stored row.
void row_logits(const FastWeights& fw, const KvState& st, int row,
                std::vector<double>& logits_out);

// Embedding assembly: token embedding + positional embedding at absolute
// sequence position pos0 + i.
void embed_tokens(const VLAModel& m, std::span<const int> ids, int pos0,
                  std::vector<double>& out);
// Image rows: z + positional embeddings 0..m-1.
void embed_image(const VLAModel& m, const Tensor& z, std::vector<double>& out);

}  // namespace vrt::detail_fast
