#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "car/autodiff.hpp"
#include "car/matrix.hpp"

namespace car::model {

// n-layer feedforward ReLU network: W₁ (h×d), W₂..W_{n−1} (h×h), W_n (K×h).
// Bias-free unless constructed with biases, in which case bound evaluation
// refuses the model.
struct ModelParams {
  std::vector<Matrix> layers;
  std::vector<Matrix> biases;  // empty, or one column vector per layer
  std::size_t depth = 0;
  std::size_t width = 0;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::uint64_t seed = 0;
  std::string init_scheme = "uniform-fan-avg";

  bool has_biases() const noexcept { return !biases.empty(); }
  std::size_t parameter_count() const;
  // Throws DimensionError/NumericError if shapes do not chain or entries
  // are not finite.
  void validate() const;
};

ModelParams init_mlp(std::size_t n, std::size_t h, std::size_t d, std::size_t k,
                     std::uint64_t seed, bool with_biases = false);

// Graph-connected logits (m×K) for inputs x (m×d), given tensors holding the
// layer weights (and biases, if the model has them) in order.
ad::Tensor forward(std::span<const ad::Tensor> layers, std::span<const ad::Tensor> biases,
                   const ad::Tensor& x);

// Convenience: builds a throwaway graph and returns plain logits.
Matrix predict_logits(const ModelParams& params, const Matrix& x);
std::vector<int> predict(const ModelParams& params, const Matrix& x);

// Index of the largest entry; ties resolve to the smallest index.
int argmax(std::span<const double> row);

struct LayerNorms {
  double spectral = 0.0;
  double frobenius = 0.0;
};
std::vector<LayerNorms> weight_norms(const ModelParams& params);

// Binary checkpoint: "CARM", u32 version, u32 n/h/d/K, then every layer as
// row-major little-endian float64. Version 2 appends bias vectors.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);
std::string encode_checkpoint(const ModelParams& params);
ModelParams decode_checkpoint(std::string_view bytes);

}  // namespace car::model
