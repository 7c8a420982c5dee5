#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cxr/rng.hpp"
#include "cxr/tensor.hpp"

namespace cxr {

// One learnable array plus its gradient accumulator.
struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;

  void resize(std::string n, std::vector<int> s);
  std::size_t count() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

struct ConvSpec {
  int in_ch = 0, out_ch = 0, kernel = 3, stride = 1, pad = 1;
  int out_h(int h) const { return (h + 2 * pad - kernel) / stride + 1; }
  int out_w(int w) const { return (w + 2 * pad - kernel) / stride + 1; }
};

struct ConvLayer {
  ConvSpec spec;
  ParamTensor weight;  // [out_ch][in_ch][k][k]
  ParamTensor bias;    // [out_ch]

  void configure(const std::string& name, ConvSpec s);
  void he_init(Rng& rng);
};

Tensor4 conv2d_forward(const Tensor4& x, const ConvLayer& layer);

// Accumulates into grad_w / grad_b (sized like weight/bias) and, when grad_x
// is non-null, into *grad_x (sized like x).
void conv2d_backward(const Tensor4& x, const ConvLayer& layer,
                     const Tensor4& grad_out, Tensor4* grad_x,
                     std::span<double> grad_w, std::span<double> grad_b);

// Writes the normalized 3x3 binomial kernel [1,2,1;2,4,2;1,2,1]/16 on each
// filter's matching input channel and zero elsewhere, so the layer starts out
// as a low-pass stride-2 downsampler. Requires in_ch == out_ch, kernel 3.
void gaussian_downsample_init(ConvLayer& layer);

Tensor4 avg_pool2x2_forward(const Tensor4& x);
Tensor4 avg_pool2x2_backward(const Tensor4& grad_out, const Tensor4& x);

// Mean over all spatial positions per channel.
Matrix global_avg_pool_forward(const Tensor4& x);
Tensor4 global_avg_pool_backward(const Matrix& grad_out, int h, int w);

double stable_sigmoid(double x);

// A DenseNet-style block: every inner layer sees the channel-concatenation of
// the block input and all previous layer outputs, and emits `growth` channels
// through a 3x3 convolution (optionally batch-normalized) and ReLU.
class DenseBlock {
 public:
  DenseBlock() = default;
  DenseBlock(int in_ch, int layers, int growth, bool norm, const std::string& name);

  int in_channels() const { return in_ch_; }
  int out_channels() const { return in_ch_ + growth_ * static_cast<int>(layers_.size()); }
  int layer_count() const { return static_cast<int>(layers_.size()); }

  struct Cache {
    std::vector<Tensor4> inputs;   // concat state before each layer; inputs[L] = output
    std::vector<Tensor4> z;        // pre-activation per layer
    std::vector<Tensor4> xhat;     // normalized pre-activation (norm mode)
    std::vector<std::vector<double>> invstd;  // per-channel 1/sqrt(var+eps)
  };

  Tensor4 forward(const Tensor4& x, Cache& cache, bool training);
  // Returns grad wrt the block input; parameter grads accumulate into
  // grad_flat, which must cover exactly this block's parameters.
  Tensor4 backward(const Cache& cache, const Tensor4& grad_out,
                   std::span<double> grad_flat) const;

  void init(Rng& rng);
  std::vector<ParamTensor*> params();
  std::size_t param_count() const;
  // Batch-norm running statistics (empty when norm is off).
  std::vector<std::vector<double>*> state();
  std::vector<const std::vector<double>*> state() const;

 private:
  struct Layer {
    ConvLayer conv;
    bool norm = false;
    ParamTensor gamma, beta;
    std::vector<double> run_mean, run_var;
  };
  int in_ch_ = 0;
  int growth_ = 0;
  std::vector<Layer> layers_;
};

// Architecture description. The downsampling front-end is fixed: two 3-filter
// 3x3 stride-2 pad-1 convolutions, so spatial dims are quartered before the
// dense blocks. Consecutive blocks are joined by a plain 2x2 average pool
// when pool_between_blocks is set.
struct ModelSpec {
  int input_channels = 3;
  int input_h = 64;
  int input_w = 64;
  int num_outputs = 35;
  int num_blocks = 2;
  int layers_per_block = 4;
  int growth = 8;
  bool pool_between_blocks = true;
  bool norm_layers = false;  // batch-norm-style layers for qualitative runs

  void validate() const;
  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
  bool operator==(const ModelSpec&) const = default;
};

// The full classifier: downsampler -> dense blocks -> global average pool ->
// linear -> sigmoid. Deterministic given (spec, seed, input); forward is
// reentrant as long as norm_layers is off.
class Model {
 public:
  Model(const ModelSpec& spec, std::uint64_t seed);
  // The flat parameter list points into this object, so copies and moves
  // rebuild it instead of inheriting stale pointers.
  Model(const Model& other);
  Model(Model&& other) noexcept;
  Model& operator=(const Model& other);
  Model& operator=(Model&& other) noexcept;

  struct Cache {
    Tensor4 input;
    Tensor4 ds1_out, ds2_out;
    std::vector<DenseBlock::Cache> blocks;
    std::vector<Tensor4> block_out;  // output of each block, pre-transition
    Matrix features;
    Matrix preds;
    int head_h = 0, head_w = 0;
  };

  // Predictions in (0,1), clamped away from the boundaries to match the loss
  // domain. Throws std::invalid_argument on input shape mismatch.
  Matrix forward(const Tensor4& images, Cache& cache, bool training = true);

  // Gradient of the objective wrt every parameter, accumulated into grad_flat
  // (size param_count()), given dL/dpred from the loss.
  void backward(const Cache& cache, const Matrix& grad_pred,
                std::span<double> grad_flat) const;

  const ModelSpec& spec() const { return spec_; }
  int feature_count() const;

  std::vector<ParamTensor*> params();
  std::vector<const ParamTensor*> params() const;
  std::size_t param_count() const;
  void zero_grad();
  // Adds a flat gradient buffer into the per-parameter grad accumulators.
  void accumulate_grad(std::span<const double> grad_flat);
  // Batch-norm running statistics, in checkpoint order (empty when off).
  std::vector<std::vector<double>*> state();
  std::vector<const std::vector<double>*> state() const;

 private:
  ModelSpec spec_;
  ConvLayer ds1_, ds2_;
  std::vector<DenseBlock> blocks_;
  ParamTensor fc_w_, fc_b_;
  std::vector<ParamTensor*> param_list_;
  std::vector<std::size_t> param_offset_;

  void build_param_list();
};

}  // namespace cxr
