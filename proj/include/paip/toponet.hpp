#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "paip/gridmap.hpp"
#include "paip/rng.hpp"

namespace paip::topo {

struct TopoConfig {
  int c_init = 8;
  int c_bot = 32;
  int height = 64;
  int width = 64;
  double mask_rate = 0.9;
  double learning_rate = 1e-3;
  int batch_size = 16;

  /// Throws InvalidParameter on any violated constraint.
  void validate() const;
  bool operator==(const TopoConfig&) const = default;
};

/// Number of trainable scalars (conv kernels and biases, normalization scale and shift).
std::int64_t param_count(const TopoConfig& config);

/// Dense NCHW tensor.
template <class T>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  T* channel(int i, int ch) { return data.data() + (static_cast<std::size_t>(i) * c + ch) * plane(); }
  const T* channel(int i, int ch) const { return data.data() + (static_cast<std::size_t>(i) * c + ch) * plane(); }
  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

template <class T>
struct ParamBlock {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
};

enum class Mode { Train, Inference };

/// Convolutional occupancy completion network: three-level encoder/decoder with skip
/// connections and a dilated bottleneck. Single-channel input and sigmoid output.
template <class T>
class TopoNet {
 public:
  explicit TopoNet(const TopoConfig& config, std::uint64_t seed = 0);

  const TopoConfig& config() const { return config_; }
  std::vector<ParamBlock<T>>& params() { return params_; }
  const std::vector<ParamBlock<T>>& params() const { return params_; }
  std::int64_t parameter_count() const;
  void zero_parameters();

  /// Per-normalization running mean and variance used in inference mode.
  std::vector<std::vector<T>>& running_mean() { return running_mean_; }
  std::vector<std::vector<T>>& running_var() { return running_var_; }
  const std::vector<std::vector<T>>& running_mean() const { return running_mean_; }
  const std::vector<std::vector<T>>& running_var() const { return running_var_; }

  /// Probabilities in (0,1), shape (n,1,h,w). Input must be (n,1,height,width).
  /// Train mode normalizes with batch statistics; running statistics are left untouched.
  Tensor<T> forward(const Tensor<T>& input, Mode mode = Mode::Inference) const;

  struct Gradients {
    std::vector<std::vector<T>> blocks;  // aligned with params()
    double loss = 0.0;
  };
  /// Mean squared error against `label` and its gradient for every parameter block.
  /// When `update_running_stats` is set the normalization running estimates are advanced.
  Gradients backward(const Tensor<T>& input, const Tensor<T>& label, Mode mode = Mode::Train,
                     bool update_running_stats = false);

 private:
  struct ConvSpec {
    int weight, bias, in, out, kernel, dilation;
  };
  struct NormSpec {
    int gamma, beta, channels;
  };
  struct UpSpec {
    int weight, bias, in, out;
  };
  struct Workspace;

  int add_block(std::string name, std::vector<int> shape);
  int add_conv(const std::string& name, int in, int out, int kernel, int dilation);
  int add_norm(const std::string& name, int channels);
  int add_up(const std::string& name, int in, int out);
  int run(const Tensor<T>& input, Mode mode, Workspace& ws) const;

  TopoConfig config_;
  std::vector<ParamBlock<T>> params_;
  std::vector<ConvSpec> convs_;
  std::vector<NormSpec> norms_;
  std::vector<UpSpec> ups_;
  std::vector<std::vector<T>> running_mean_;
  std::vector<std::vector<T>> running_var_;
};

extern template class TopoNet<float>;
extern template class TopoNet<double>;

/// Partial observation paired with its full map; both row-major h*w with values in {0,1}.
struct TrainSample {
  int height = 0;
  int width = 0;
  std::vector<float> partial;
  std::vector<float> full;
};

/// Zeroes exactly floor(mask_rate*h*w) uniformly chosen cells of `full`.
TrainSample mask_map(const std::vector<float>& full, int height, int width, double mask_rate, std::uint64_t seed);

/// Produces one full binary map (row-major h*w) per call.
using MapGenerator = std::function<std::vector<float>(Rng&)>;

struct TrainOptions {
  int epochs = 30;
  int samples_per_epoch = 512;
  int validation_samples = 64;
  std::uint64_t seed = 1;
  std::function<void(int epoch, double loss)> on_epoch;
};

struct TrainResult {
  std::vector<double> loss_history;  // mean minibatch loss per epoch
  double validation_mse = 0.0;       // held-out maps, inference mode
};

/// Adam on minibatches of freshly generated, masked maps. Throws TrainingDiverged on a
/// non-finite loss. Zero epochs leave the network untouched.
TrainResult train(TopoNet<float>& net, const MapGenerator& generator, const TrainOptions& options);

/// Inference-mode MSE over masked samples drawn from `generator` with the given seed.
double evaluate_mse(const TopoNet<float>& net, const MapGenerator& generator, int samples, std::uint64_t seed);

/// Occupancy probabilities for an observed binary map of the configured size.
gridmap::GridMap predict(const TopoNet<float>& net, const gridmap::GridMap& observed);

// Model file: text lines `PAIPNET v1`, the config, `blocks <n>`, then per block
// `<name> <rank> <dims...>` followed by little-endian float32 values; running statistics last.
void write_model(std::ostream& os, const TopoNet<float>& net);
TopoNet<float> read_model(std::istream& is);
void save_model(const std::string& path, const TopoNet<float>& net);
TopoNet<float> load_model(const std::string& path);

}  // namespace paip::topo
