#include "batchrl/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "batchrl/errors.hpp"

namespace batchrl {

namespace {

constexpr int kCheckpointVersion = 1;

std::string expect_key(std::istream& in, const std::string& key) {
  std::string word;
  if (!(in >> word) || word != key) {
    throw FormatError("checkpoint: expected '" + key + "', found '" + word + "'");
  }
  std::string value;
  if (!(in >> value)) throw FormatError("checkpoint: missing value for '" + key + "'");
  return value;
}

std::uint64_t to_unsigned(const std::string& token) {
  std::uint64_t value = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw FormatError("checkpoint: bad integer '" + token + "'");
  }
  return value;
}

}  // namespace

std::string format_hex(double value) {
  char buffer[64];
  auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value, std::chars_format::hex);
  if (ec != std::errc()) throw FormatError("cannot format value");
  return std::string(buffer, ptr);
}

double parse_hex(const std::string& token) {
  double value = 0.0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  bool negative = false;
  if (first != last && *first == '-') {
    negative = true;
    ++first;
  }
  auto [ptr, ec] = std::from_chars(first, last, value, std::chars_format::hex);
  if (ec != std::errc() || ptr != last) throw FormatError("bad hex float '" + token + "'");
  return negative ? -value : value;
}

void write_hex_values(std::ostream& out, std::span<const double> values) {
  for (double v : values) out << format_hex(v) << '\n';
}

std::vector<double> read_hex_values(std::istream& in, std::size_t count) {
  std::vector<double> values;
  values.reserve(count);
  std::string token;
  for (std::size_t i = 0; i < count; ++i) {
    if (!(in >> token)) throw FormatError("truncated parameter list");
    values.push_back(parse_hex(token));
  }
  return values;
}

void write_checkpoint(std::ostream& out, const QFunction& q, std::uint64_t seed) {
  out << "batchrl-checkpoint " << kCheckpointVersion << '\n';
  if (const auto* table = q.tabular()) {
    out << "kind tabular\n";
    out << "seed " << seed << '\n';
    out << "shape " << table->state_count() << ' ' << table->action_count() << '\n';
  } else {
    const auto* net = q.network();
    out << "kind feedforward\n";
    out << "seed " << seed << '\n';
    out << "dropout_rate " << format_hex(net->dropout_rate()) << '\n';
    out << "layers " << net->layers().size() << '\n';
    for (const auto& layer : net->layers()) {
      out << "layer " << layer.inputs << ' ' << layer.outputs << ' ' << to_string(layer.activation)
          << '\n';
    }
  }
  out << "params " << q.parameter_count() << '\n';
  write_hex_values(out, q.parameters());
}

Checkpoint read_checkpoint(std::istream& in) {
  const std::string version = expect_key(in, "batchrl-checkpoint");
  if (to_unsigned(version) != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + version);
  }
  const std::string kind = expect_key(in, "kind");
  const std::uint64_t seed = to_unsigned(expect_key(in, "seed"));
  if (kind == "tabular") {
    const std::size_t states = to_unsigned(expect_key(in, "shape"));
    std::string actions_token;
    if (!(in >> actions_token)) throw FormatError("checkpoint: truncated shape");
    TabularQ table(states, to_unsigned(actions_token));
    const std::size_t count = to_unsigned(expect_key(in, "params"));
    if (count != table.parameters().size()) throw FormatError("checkpoint: parameter count mismatch");
    const auto values = read_hex_values(in, count);
    std::copy(values.begin(), values.end(), table.parameters().begin());
    return {QFunction(std::move(table)), seed};
  }
  if (kind != "feedforward") throw FormatError("checkpoint: unknown kind '" + kind + "'");
  const double dropout = parse_hex(expect_key(in, "dropout_rate"));
  const std::size_t layer_count = to_unsigned(expect_key(in, "layers"));
  std::vector<LayerShape> layers;
  for (std::size_t l = 0; l < layer_count; ++l) {
    const std::size_t inputs = to_unsigned(expect_key(in, "layer"));
    std::string outputs, activation;
    if (!(in >> outputs >> activation)) throw FormatError("checkpoint: truncated layer line");
    layers.push_back({inputs, to_unsigned(outputs), activation_from_string(activation)});
  }
  FeedforwardQ net(std::move(layers), dropout);
  const std::size_t count = to_unsigned(expect_key(in, "params"));
  if (count != net.parameter_count()) throw FormatError("checkpoint: parameter count mismatch");
  const auto values = read_hex_values(in, count);
  std::copy(values.begin(), values.end(), net.parameters().begin());
  return {QFunction(std::move(net)), seed};
}

void save_checkpoint(const std::filesystem::path& path, const QFunction& q, std::uint64_t seed) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot open checkpoint for writing: " + path.string());
  write_checkpoint(out, q, seed);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open checkpoint: " + path.string());
  return read_checkpoint(in);
}

}  // namespace batchrl
