#include "car/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "car/error.hpp"
#include "car/io.hpp"
#include "car/rng.hpp"
#include "car/spectral.hpp"

namespace car::model {

namespace {

std::pair<std::size_t, std::size_t> layer_shape(std::size_t l, std::size_t n, std::size_t h,
                                                std::size_t d, std::size_t k) {
  const std::size_t rows = l + 1 == n ? k : h;
  const std::size_t cols = l == 0 ? d : h;
  return {rows, cols};
}

}  // namespace

std::size_t ModelParams::parameter_count() const {
  std::size_t total = 0;
  for (const auto& w : layers) total += w.size();
  for (const auto& b : biases) total += b.size();
  return total;
}

void ModelParams::validate() const {
  if (depth < 1 || layers.size() != depth) {
    throw DimensionError("model: depth " + std::to_string(depth) + " but " +
                         std::to_string(layers.size()) + " layers");
  }
  for (std::size_t l = 0; l < depth; ++l) {
    const auto [rows, cols] = layer_shape(l, depth, width, input_dim, num_classes);
    if (layers[l].rows() != rows || layers[l].cols() != cols) {
      throw DimensionError("model: layer " + std::to_string(l + 1) + " is " +
                           layers[l].shape_string() + ", expected " + std::to_string(rows) +
                           "x" + std::to_string(cols));
    }
    if (!layers[l].all_finite()) {
      throw NumericError("model: layer " + std::to_string(l + 1) + " has non-finite entries");
    }
  }
  if (!biases.empty()) {
    if (biases.size() != depth) throw DimensionError("model: bias count differs from depth");
    for (std::size_t l = 0; l < depth; ++l) {
      if (biases[l].rows() != layers[l].rows() || biases[l].cols() != 1) {
        throw DimensionError("model: bias " + std::to_string(l + 1) + " has wrong shape");
      }
    }
  }
}

ModelParams init_mlp(std::size_t n, std::size_t h, std::size_t d, std::size_t k,
                     std::uint64_t seed, bool with_biases) {
  if (n < 1 || h < 1 || d < 1 || k < 2) {
    throw ParameterError("init_mlp: need n>=1, h>=1, d>=1, k>=2 (got n=" + std::to_string(n) +
                         " h=" + std::to_string(h) + " d=" + std::to_string(d) +
                         " k=" + std::to_string(k) + ")");
  }
  ModelParams p;
  p.depth = n;
  p.width = h;
  p.input_dim = d;
  p.num_classes = k;
  p.seed = seed;
  Rng rng(seed);
  for (std::size_t l = 0; l < n; ++l) {
    const auto [rows, cols] = layer_shape(l, n, h, d, k);
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Matrix w(rows, cols);
    for (double& x : w.values()) x = rng.uniform(-a, a);
    p.layers.push_back(std::move(w));
    if (with_biases) p.biases.emplace_back(rows, 1);
  }
  return p;
}

ad::Tensor forward(std::span<const ad::Tensor> layers, std::span<const ad::Tensor> biases,
                   const ad::Tensor& x) {
  if (layers.empty()) throw ParameterError("forward: no layers");
  if (!biases.empty() && biases.size() != layers.size()) {
    throw DimensionError("forward: bias count differs from layer count");
  }
  if (x.cols() != layers.front().cols()) {
    throw DimensionError("forward: input has " + std::to_string(x.cols()) +
                         " features, model expects " + std::to_string(layers.front().cols()));
  }
  ad::Tensor act = ad::transpose(x);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    act = ad::matmul(layers[l], act);
    if (!biases.empty()) act = ad::add_column(act, biases[l]);
    if (l + 1 < layers.size()) act = ad::relu(act);
  }
  return ad::transpose(act);
}

Matrix predict_logits(const ModelParams& params, const Matrix& x) {
  ad::Graph g;
  std::vector<ad::Tensor> ws, bs;
  for (const auto& w : params.layers) ws.push_back(g.constant(w));
  for (const auto& b : params.biases) bs.push_back(g.constant(b));
  return forward(ws, bs, g.constant(x)).value();
}

int argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i)
    if (row[i] > row[best]) best = i;
  return static_cast<int>(best);
}

std::vector<int> predict(const ModelParams& params, const Matrix& x) {
  const Matrix logits = predict_logits(params, x);
  std::vector<int> out(logits.rows());
  for (std::size_t q = 0; q < logits.rows(); ++q) out[q] = argmax(logits.row(q));
  return out;
}

std::vector<LayerNorms> weight_norms(const ModelParams& params) {
  std::vector<LayerNorms> out;
  for (const auto& w : params.layers) {
    const auto t = spectral::power_iteration(w, 1000, 1e-13);
    out.push_back({t.sigma, frobenius_norm(w)});
  }
  return out;
}

// ---- checkpoint -----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'C', 'A', 'R', 'M'};
constexpr std::uint32_t kVersionPlain = 1;
constexpr std::uint32_t kVersionWithBiases = 2;

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits;
  std::memcpy(&bits, &value, sizeof bits);
  for (std::size_t i = 0; i < sizeof bits; ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    if (pos_ + sizeof(U) > bytes_.size()) throw FormatError("checkpoint: truncated");
    U bits = 0;
    for (std::size_t i = 0; i < sizeof bits; ++i) {
      bits |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof bits;
    T value;
    std::memcpy(&value, &bits, sizeof value);
    return value;
  }

  void read_matrix(Matrix& m) {
    for (double& x : m.values()) x = get<double>();
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 4;
};

}  // namespace

std::string encode_checkpoint(const ModelParams& params) {
  params.validate();
  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, params.has_biases() ? kVersionWithBiases : kVersionPlain);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.depth));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.width));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.input_dim));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.num_classes));
  for (const auto& w : params.layers)
    for (double x : w.values()) put_le<double>(out, x);
  for (const auto& b : params.biases)
    for (double x : b.values()) put_le<double>(out, x);
  return out;
}

ModelParams decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic bytes");
  }
  Reader in(bytes);
  const auto version = in.get<std::uint32_t>();
  if (version != kVersionPlain && version != kVersionWithBiases) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  ModelParams p;
  p.depth = in.get<std::uint32_t>();
  p.width = in.get<std::uint32_t>();
  p.input_dim = in.get<std::uint32_t>();
  p.num_classes = in.get<std::uint32_t>();
  p.init_scheme = "checkpoint";
  if (p.depth < 1 || p.depth > 4096 || p.width < 1 || p.input_dim < 1 || p.num_classes < 2) {
    throw FormatError("checkpoint: implausible dimensions");
  }
  for (std::size_t l = 0; l < p.depth; ++l) {
    const auto [rows, cols] = layer_shape(l, p.depth, p.width, p.input_dim, p.num_classes);
    Matrix w(rows, cols);
    in.read_matrix(w);
    p.layers.push_back(std::move(w));
  }
  if (version == kVersionWithBiases) {
    for (std::size_t l = 0; l < p.depth; ++l) {
      Matrix b(p.layers[l].rows(), 1);
      in.read_matrix(b);
      p.biases.push_back(std::move(b));
    }
  }
  if (!in.at_end()) throw FormatError("checkpoint: trailing bytes");
  p.validate();
  return p;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  io::write_text_file(path, encode_checkpoint(params));
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_text_file(path));
}

}  // namespace car::model
