#pragma once

// Instance-level self-attention over the proposals of one bag. Each output
// row is a softmax-weighted average of the input rows, with weights from
// inner products in a learned embedding. There is no residual path, so each
// output stays inside the convex hull of the inputs.

#include <cstddef>
#include <string>
#include <vector>

#include "dsmil/random.hpp"
#include "dsmil/sgd.hpp"
#include "dsmil/tensor.hpp"

namespace dsmil {

struct DiscoveryParams {
  std::vector<Tensor> embeddings;  // one D x E matrix per stacked module

  static DiscoveryParams init(std::size_t feature_dim, std::size_t embed_dim, std::size_t count,
                              Rng& rng);
  std::size_t count_modules() const { return embeddings.size(); }
  void register_into(ParameterSet& params, const std::string& prefix) const;
  static DiscoveryParams from(const ParameterSet& params, const std::string& prefix,
                              std::size_t count);
};

struct AttentionRecord {
  Tensor weights;  // N x N, rows sum to 1
  Tensor output;   // N x D
};

// Default embedding width: ceil(D / 2).
std::size_t default_embed_dim(std::size_t feature_dim);

AttentionRecord attention_forward(Tape& tape, const Tensor& features, const Tensor& w_embed);

// Runs the stacked modules in order; the last record's output is the
// discovered feature map. Empty when count_modules() == 0.
std::vector<AttentionRecord> discovery_forward(Tape& tape, const Tensor& features,
                                               const DiscoveryParams& params);

// "i: w_i0 w_i1 ..." per row, shortest round-trip decimal form.
std::string dump_attention(const AttentionRecord& record);
Tensor parse_attention_dump(const std::string& text);

}  // namespace dsmil
