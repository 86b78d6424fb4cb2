#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "batchrl/q_function.hpp"

namespace batchrl {

// Text checkpoint, version 1:
//
//   batchrl-checkpoint 1
//   kind feedforward|tabular
//   seed <uint64>
//   dropout_rate <hexfloat>            (feedforward)
//   layers <L>                         (feedforward)
//   layer <inputs> <outputs> <activation>   x L
//   shape <states> <actions>           (tabular)
//   params <N>
//   <hexfloat>                         x N, row-major per layer
//
// Hex floats make save/load bit-exact.
struct Checkpoint {
  QFunction q;
  std::uint64_t seed = 0;
};

void write_checkpoint(std::ostream& out, const QFunction& q, std::uint64_t seed);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const QFunction& q, std::uint64_t seed);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Shared by the prior checkpoint format.
std::string format_hex(double value);
double parse_hex(const std::string& token);
void write_hex_values(std::ostream& out, std::span<const double> values);
std::vector<double> read_hex_values(std::istream& in, std::size_t count);

}  // namespace batchrl
