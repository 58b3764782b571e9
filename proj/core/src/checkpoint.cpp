#include "pda/checkpoint.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "pda/errors.hpp"

namespace pda {

const Matrix& Checkpoint::prediction_weights() const {
  return target_classifiers.empty() ? prototypes.weights() : target_classifiers.front();
}

namespace {

constexpr const char* kMagic = "#pda-checkpoint v1";

void append_double(std::string& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  out.append(buf, res.ptr);
}

void append_row(std::string& out, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    append_double(out, values[i]);
  }
  out += '\n';
}

void append_matrix(std::string& out, const Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) append_row(out, m.row(r));
}

class LineReader {
 public:
  explicit LineReader(const std::string& text) : in_(text) {}

  std::string next(const char* what) {
    std::string line;
    if (!std::getline(in_, line)) throw ParseError("unexpected end of checkpoint, expected " + std::string(what), lineno_ + 1);
    ++lineno_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  }

  std::size_t line() const { return lineno_; }

  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, lineno_); }

 private:
  std::istringstream in_;
  std::size_t lineno_ = 0;
};

std::vector<std::string> tokens(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string field(const LineReader& r, const std::string& tok, const std::string& key) {
  if (tok.rfind(key + "=", 0) != 0) r.fail("expected '" + key + "='");
  return tok.substr(key.size() + 1);
}

template <typename T>
T number(const LineReader& r, const std::string& text) {
  T v{};
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    r.fail("invalid number '" + text + "'");
  }
  return v;
}

void read_row(LineReader& r, std::span<double> dst, const char* what) {
  const auto line = r.next(what);
  const auto parts = tokens(line, ',');
  if (parts.size() != dst.size()) {
    r.fail(std::string(what) + ": expected " + std::to_string(dst.size()) + " values");
  }
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] = number<double>(r, parts[i]);
    if (!std::isfinite(dst[i])) r.fail("non-finite parameter");
  }
}

Matrix read_matrix(LineReader& r, std::size_t rows, std::size_t cols, const char* what) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) read_row(r, m.row(i), what);
  return m;
}

}  // namespace

std::string format_checkpoint(const Checkpoint& ckpt) {
  const auto& arch = ckpt.encoder.architecture();
  std::string out = std::string(kMagic) + "\n";
  out += "encoder d_x=" + std::to_string(arch.input_dim) + " d_z=" + std::to_string(arch.code_dim) +
         " hidden=";
  for (std::size_t i = 0; i < arch.hidden.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(arch.hidden[i]);
  }
  out += " activation=" + to_string(arch.activation) +
         " seed=" + std::to_string(ckpt.encoder.init_seed()) + "\n";
  const auto& layers = ckpt.encoder.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    out += "layer " + std::to_string(l) + "\n";
    append_matrix(out, layers[l].weights);
    append_row(out, layers[l].bias);
  }
  const auto& mu = ckpt.prototypes.weights();
  out += "prototypes d_z=" + std::to_string(mu.rows()) + " k=" + std::to_string(mu.cols()) +
         " frozen=" + (ckpt.prototypes.frozen() ? "1" : "0") + "\n";
  append_matrix(out, mu);
  out += "target_classifiers n=" + std::to_string(ckpt.target_classifiers.size()) + "\n";
  for (std::size_t m = 0; m < ckpt.target_classifiers.size(); ++m) {
    out += "classifier " + std::to_string(m) + "\n";
    append_matrix(out, ckpt.target_classifiers[m]);
  }
  return out;
}

Checkpoint parse_checkpoint(const std::string& text) {
  LineReader r(text);
  if (r.next("header") != kMagic) r.fail("not a pda checkpoint (bad header)");

  const auto enc = tokens(r.next("encoder line"), ' ');
  if (enc.size() != 6 || enc[0] != "encoder") r.fail("malformed encoder line");
  EncoderArchitecture arch;
  arch.input_dim = number<std::size_t>(r, field(r, enc[1], "d_x"));
  arch.code_dim = number<std::size_t>(r, field(r, enc[2], "d_z"));
  arch.hidden.clear();
  const auto hidden = field(r, enc[3], "hidden");
  if (!hidden.empty()) {
    for (const auto& h : tokens(hidden, ',')) arch.hidden.push_back(number<std::size_t>(r, h));
  }
  try {
    arch.activation = activation_from_string(field(r, enc[4], "activation"));
  } catch (const ConfigError& e) {
    r.fail(e.what());
  }
  const auto seed = number<std::uint64_t>(r, field(r, enc[5], "seed"));

  std::vector<std::size_t> dims{arch.input_dim};
  dims.insert(dims.end(), arch.hidden.begin(), arch.hidden.end());
  dims.push_back(arch.code_dim);
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    if (r.next("layer header") != "layer " + std::to_string(l)) r.fail("expected 'layer " + std::to_string(l) + "'");
    DenseLayer layer;
    layer.weights = read_matrix(r, dims[l + 1], dims[l], "layer weights");
    layer.bias.resize(dims[l + 1]);
    read_row(r, layer.bias, "layer bias");
    layers.push_back(std::move(layer));
  }

  const auto proto = tokens(r.next("prototypes line"), ' ');
  if (proto.size() != 4 || proto[0] != "prototypes") r.fail("malformed prototypes line");
  const auto dz = number<std::size_t>(r, field(r, proto[1], "d_z"));
  const auto k = number<std::size_t>(r, field(r, proto[2], "k"));
  const auto frozen = field(r, proto[3], "frozen");
  if (dz != arch.code_dim) r.fail("prototype dimension does not match encoder d_z");
  if (frozen != "0" && frozen != "1") r.fail("frozen must be 0 or 1");
  Matrix mu = read_matrix(r, dz, k, "prototypes");

  const auto tc = tokens(r.next("target_classifiers line"), ' ');
  if (tc.size() != 2 || tc[0] != "target_classifiers") r.fail("malformed target_classifiers line");
  const auto n = number<std::size_t>(r, field(r, tc[1], "n"));
  std::vector<Matrix> classifiers;
  for (std::size_t m = 0; m < n; ++m) {
    if (r.next("classifier header") != "classifier " + std::to_string(m)) r.fail("expected 'classifier " + std::to_string(m) + "'");
    classifiers.push_back(read_matrix(r, dz, k, "classifier"));
  }

  Checkpoint ckpt{Encoder(std::move(arch), std::move(layers), seed),
                  PrototypeMatrix(std::move(mu), frozen == "1"), std::move(classifiers)};
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << format_checkpoint(ckpt);
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

}  // namespace pda
