#include "dsmil/discovery.hpp"

#include <sstream>

#include "dsmil/error.hpp"
#include "dsmil/format.hpp"

namespace dsmil {

DiscoveryParams DiscoveryParams::init(std::size_t feature_dim, std::size_t embed_dim,
                                      std::size_t count, Rng& rng) {
  if (embed_dim == 0) throw ValidationError("discovery: embedding width must be >= 1");
  DiscoveryParams p;
  for (std::size_t m = 0; m < count; ++m) p.embeddings.push_back(glorot_parameter(feature_dim, embed_dim, rng));
  return p;
}

void DiscoveryParams::register_into(ParameterSet& params, const std::string& prefix) const {
  for (std::size_t m = 0; m < embeddings.size(); ++m) {
    params.add(prefix + std::to_string(m) + ".w_embed", embeddings[m]);
  }
}

DiscoveryParams DiscoveryParams::from(const ParameterSet& params, const std::string& prefix,
                                      std::size_t count) {
  DiscoveryParams p;
  for (std::size_t m = 0; m < count; ++m) {
    p.embeddings.push_back(params.get(prefix + std::to_string(m) + ".w_embed"));
  }
  return p;
}

std::size_t default_embed_dim(std::size_t feature_dim) { return (feature_dim + 1) / 2; }

AttentionRecord attention_forward(Tape& tape, const Tensor& features, const Tensor& w_embed) {
  if (features.rows() == 0) throw DimensionError("discovery: bag has no proposals");
  if (features.cols() != w_embed.rows()) {
    throw DimensionError("discovery: features " + features.shape_string() +
                         " do not match embedding " + w_embed.shape_string());
  }
  const Tensor embedded = tape.matmul(features, w_embed);
  AttentionRecord rec;
  rec.weights = tape.softmax_rows(tape.matmul_transposed(embedded, embedded));
  rec.output = tape.matmul(rec.weights, features);
  return rec;
}

std::vector<AttentionRecord> discovery_forward(Tape& tape, const Tensor& features,
                                               const DiscoveryParams& params) {
  std::vector<AttentionRecord> records;
  Tensor current = features;
  for (const Tensor& w : params.embeddings) {
    records.push_back(attention_forward(tape, current, w));
    current = records.back().output;
  }
  return records;
}

std::string dump_attention(const AttentionRecord& record) {
  const Tensor& w = record.weights;
  std::string out;
  for (std::size_t i = 0; i < w.rows(); ++i) {
    out += std::to_string(i) + ":";
    for (std::size_t j = 0; j < w.cols(); ++j) {
      out += ' ';
      out += format_double(w(i, j));
    }
    out += '\n';
  }
  return out;
}

Tensor parse_attention_dump(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw ParseError("attention dump: missing ':' on row " + std::to_string(rows));
    if (std::stoul(line.substr(0, colon)) != rows) {
      throw ParseError("attention dump: row index out of order at row " + std::to_string(rows));
    }
    std::istringstream cells(line.substr(colon + 1));
    std::string tok;
    std::size_t n = 0;
    while (cells >> tok) {
      values.push_back(parse_double(tok));
      ++n;
    }
    if (rows == 0) cols = n;
    if (n != cols) throw ParseError("attention dump: ragged row " + std::to_string(rows));
    ++rows;
  }
  return Tensor(rows, cols, std::move(values));
}

}  // namespace dsmil
