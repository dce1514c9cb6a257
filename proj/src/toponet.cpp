#include "paip/toponet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "paip/error.hpp"

namespace paip::topo {

void TopoConfig::validate() const {
  if (c_init <= 0 || c_bot <= 0) throw InvalidParameter("channel counts must be positive");
  if (height <= 0 || width <= 0 || height % 8 != 0 || width % 8 != 0)
    throw InvalidParameter("grid size must be a positive multiple of 8");
  if (!(mask_rate >= 0.0 && mask_rate < 1.0)) throw InvalidParameter("mask rate must lie in [0,1)");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InvalidParameter("learning rate must be positive");
  if (batch_size <= 0) throw InvalidParameter("batch size must be positive");
}

std::int64_t param_count(const TopoConfig& cfg) {
  const std::int64_t c = cfg.c_init, b = cfg.c_bot;
  auto conv = [](std::int64_t in, std::int64_t out, std::int64_t k) { return k * k * in * out + out; };
  auto norm = [](std::int64_t ch) { return 2 * ch; };
  auto block = [&](std::int64_t in, std::int64_t out) { return conv(in, out, 3) + norm(out) + conv(out, out, 3) + norm(out); };
  auto up = [](std::int64_t in, std::int64_t out) { return 4 * in * out + out; };
  std::int64_t n = block(1, c) + block(c, 2 * c) + block(2 * c, 4 * c);
  n += conv(4 * c, b, 3) + 2 * conv(b, b, 3);
  n += up(b, 4 * c) + block(8 * c, 4 * c);
  n += up(4 * c, 2 * c) + block(4 * c, 2 * c);
  n += up(2 * c, c) + block(2 * c, c);
  n += conv(c, 1, 3);
  return n;
}

namespace {

constexpr double kNormEps = 1e-5;
constexpr double kNormMomentum = 0.1;
constexpr int kColumnBlock = 256;

template <class T>
T lane_sum(const T (&a)[8]) {
  return ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7]));
}

template <class T>
T dot(const T* a, const T* b, int n) {
  T acc[8] = {};
  int j = 0;
  for (; j + 8 <= n; j += 8)
    for (int l = 0; l < 8; ++l) acc[l] += a[j + l] * b[j + l];
  T tail = 0;
  for (; j < n; ++j) tail += a[j] * b[j];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

// Column matrix of a "same" k x k convolution with dilation d; rows are (channel, ky, kx).
template <class T>
void im2col(const T* x, int channels, int h, int w, int k, int d, T* col) {
  const int pad = d * (k - 1) / 2;
  const int hw = h * w;
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * hw;
        const T* src = x + static_cast<std::size_t>(c) * hw;
        const int oy = ky * d - pad, ox = kx * d - pad;
        for (int y = 0; y < h; ++y) {
          const int iy = y + oy;
          T* dst = row + y * w;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + w, T(0));
            continue;
          }
          const T* s = src + iy * w;
          const int x0 = std::max(0, -ox), x1 = std::min(w, w - ox);
          for (int x = 0; x < x0; ++x) dst[x] = 0;
          for (int x = x0; x < x1; ++x) dst[x] = s[x + ox];
          for (int x = std::max(x1, x0); x < w; ++x) dst[x] = 0;
        }
      }
}

template <class T>
void col2im(const T* col, int channels, int h, int w, int k, int d, T* x) {
  const int pad = d * (k - 1) / 2;
  const int hw = h * w;
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * hw;
        T* dst = x + static_cast<std::size_t>(c) * hw;
        const int oy = ky * d - pad, ox = kx * d - pad;
        for (int y = 0; y < h; ++y) {
          const int iy = y + oy;
          if (iy < 0 || iy >= h) continue;
          const T* r = row + y * w;
          T* dd = dst + iy * w;
          const int x0 = std::max(0, -ox), x1 = std::min(w, w - ox);
          for (int x = x0; x < x1; ++x) dd[x + ox] += r[x];
        }
      }
}

template <class T>
Tensor<T> conv_forward(const Tensor<T>& x, const T* weight, const T* bias, int out, int k, int d) {
  Tensor<T> y(x.n, out, x.h, x.w);
  const int hw = x.h * x.w;
  const int kk = x.c * k * k;
  std::vector<T> col(static_cast<std::size_t>(kk) * hw);
  for (int i = 0; i < x.n; ++i) {
    im2col(x.channel(i, 0), x.c, x.h, x.w, k, d, col.data());
    T* yi = y.channel(i, 0);
    for (int j0 = 0; j0 < hw; j0 += kColumnBlock) {
      const int jn = std::min(kColumnBlock, hw - j0);
      int o = 0;
      // Four output rows at a time so each column load feeds four accumulators.
      for (; o + 4 <= out; o += 4) {
        T* r0 = yi + static_cast<std::size_t>(o) * hw + j0;
        T* r1 = r0 + hw;
        T* r2 = r1 + hw;
        T* r3 = r2 + hw;
        std::fill(r0, r0 + jn, bias[o]);
        std::fill(r1, r1 + jn, bias[o + 1]);
        std::fill(r2, r2 + jn, bias[o + 2]);
        std::fill(r3, r3 + jn, bias[o + 3]);
        const T* w0 = weight + static_cast<std::size_t>(o) * kk;
        const T* w1 = w0 + kk;
        const T* w2 = w1 + kk;
        const T* w3 = w2 + kk;
        for (int q = 0; q < kk; ++q) {
          const T a0 = w0[q], a1 = w1[q], a2 = w2[q], a3 = w3[q];
          const T* cr = col.data() + static_cast<std::size_t>(q) * hw + j0;
          for (int j = 0; j < jn; ++j) {
            const T cv = cr[j];
            r0[j] += a0 * cv;
            r1[j] += a1 * cv;
            r2[j] += a2 * cv;
            r3[j] += a3 * cv;
          }
        }
      }
      for (; o < out; ++o) {
        T* row = yi + static_cast<std::size_t>(o) * hw + j0;
        std::fill(row, row + jn, bias[o]);
        const T* wo = weight + static_cast<std::size_t>(o) * kk;
        for (int q = 0; q < kk; ++q) {
          const T wv = wo[q];
          const T* cr = col.data() + static_cast<std::size_t>(q) * hw + j0;
          for (int j = 0; j < jn; ++j) row[j] += wv * cr[j];
        }
      }
    }
  }
  return y;
}

template <class T>
void conv_backward(const Tensor<T>& x, const T* weight, const Tensor<T>& dy, int k, int d, Tensor<T>* dx, T* dweight,
                   T* dbias) {
  const int out = dy.c;
  const int hw = x.h * x.w;
  const int kk = x.c * k * k;
  std::vector<T> col(static_cast<std::size_t>(kk) * hw);
  std::vector<T> dcol;
  if (dx) {
    *dx = Tensor<T>(x.n, x.c, x.h, x.w);
    dcol.resize(col.size());
  }
  for (int i = 0; i < x.n; ++i) {
    im2col(x.channel(i, 0), x.c, x.h, x.w, k, d, col.data());
    const T* dyi = dy.channel(i, 0);
    for (int o = 0; o < out; ++o) {
      const T* g = dyi + static_cast<std::size_t>(o) * hw;
      dbias[o] += std::accumulate(g, g + hw, T(0));
      T* dw = dweight + static_cast<std::size_t>(o) * kk;
      int q = 0;
      for (; q + 4 <= kk; q += 4) {
        const T* c0 = col.data() + static_cast<std::size_t>(q) * hw;
        const T* c1 = c0 + hw;
        const T* c2 = c1 + hw;
        const T* c3 = c2 + hw;
        T a0[8] = {}, a1[8] = {}, a2[8] = {}, a3[8] = {};
        int j = 0;
        for (; j + 8 <= hw; j += 8)
          for (int l = 0; l < 8; ++l) {
            const T gv = g[j + l];
            a0[l] += gv * c0[j + l];
            a1[l] += gv * c1[j + l];
            a2[l] += gv * c2[j + l];
            a3[l] += gv * c3[j + l];
          }
        T t0 = 0, t1 = 0, t2 = 0, t3 = 0;
        for (; j < hw; ++j) {
          t0 += g[j] * c0[j];
          t1 += g[j] * c1[j];
          t2 += g[j] * c2[j];
          t3 += g[j] * c3[j];
        }
        dw[q] += lane_sum(a0) + t0;
        dw[q + 1] += lane_sum(a1) + t1;
        dw[q + 2] += lane_sum(a2) + t2;
        dw[q + 3] += lane_sum(a3) + t3;
      }
      for (; q < kk; ++q) dw[q] += dot(g, col.data() + static_cast<std::size_t>(q) * hw, hw);
    }
    if (dx) {
      std::fill(dcol.begin(), dcol.end(), T(0));
      for (int j0 = 0; j0 < hw; j0 += kColumnBlock) {
        const int jn = std::min(kColumnBlock, hw - j0);
        int q = 0;
        for (; q + 4 <= kk; q += 4) {
          T* d0 = dcol.data() + static_cast<std::size_t>(q) * hw + j0;
          T* d1 = d0 + hw;
          T* d2 = d1 + hw;
          T* d3 = d2 + hw;
          for (int o = 0; o < out; ++o) {
            const T* wo = weight + static_cast<std::size_t>(o) * kk + q;
            const T a0 = wo[0], a1 = wo[1], a2 = wo[2], a3 = wo[3];
            const T* g = dyi + static_cast<std::size_t>(o) * hw + j0;
            for (int j = 0; j < jn; ++j) {
              const T gv = g[j];
              d0[j] += a0 * gv;
              d1[j] += a1 * gv;
              d2[j] += a2 * gv;
              d3[j] += a3 * gv;
            }
          }
        }
        for (; q < kk; ++q) {
          T* dr = dcol.data() + static_cast<std::size_t>(q) * hw + j0;
          for (int o = 0; o < out; ++o) {
            const T wv = weight[static_cast<std::size_t>(o) * kk + q];
            const T* g = dyi + static_cast<std::size_t>(o) * hw + j0;
            for (int j = 0; j < jn; ++j) dr[j] += wv * g[j];
          }
        }
      }
      col2im(dcol.data(), x.c, x.h, x.w, k, d, dx->channel(i, 0));
    }
  }
}

// 2x2 stride-2 transposed convolution; weight layout [in][out][2][2].
template <class T>
Tensor<T> up_forward(const Tensor<T>& x, const T* weight, const T* bias, int out) {
  Tensor<T> y(x.n, out, 2 * x.h, 2 * x.w);
  const int w2 = 2 * x.w;
  for (int i = 0; i < x.n; ++i)
    for (int o = 0; o < out; ++o) {
      T* yo = y.channel(i, o);
      std::fill(yo, yo + y.plane(), bias[o]);
      for (int c = 0; c < x.c; ++c) {
        const T* wv = weight + (static_cast<std::size_t>(c) * out + o) * 4;
        const T* xc = x.channel(i, c);
        for (int r = 0; r < x.h; ++r) {
          T* top = yo + (2 * r) * w2;
          T* bot = top + w2;
          const T* xr = xc + r * x.w;
          for (int q = 0; q < x.w; ++q) {
            const T v = xr[q];
            top[2 * q] += wv[0] * v;
            top[2 * q + 1] += wv[1] * v;
            bot[2 * q] += wv[2] * v;
            bot[2 * q + 1] += wv[3] * v;
          }
        }
      }
    }
  return y;
}

template <class T>
void up_backward(const Tensor<T>& x, const T* weight, const Tensor<T>& dy, Tensor<T>* dx, T* dweight, T* dbias) {
  const int out = dy.c;
  const int w2 = 2 * x.w;
  if (dx) *dx = Tensor<T>(x.n, x.c, x.h, x.w);
  for (int i = 0; i < x.n; ++i)
    for (int o = 0; o < out; ++o) {
      const T* go = dy.channel(i, o);
      dbias[o] += std::accumulate(go, go + dy.plane(), T(0));
      for (int c = 0; c < x.c; ++c) {
        const std::size_t wi = (static_cast<std::size_t>(c) * out + o) * 4;
        const T* wv = weight + wi;
        const T* xc = x.channel(i, c);
        T* dxc = dx ? dx->channel(i, c) : nullptr;
        T acc[4] = {};
        for (int r = 0; r < x.h; ++r) {
          const T* top = go + (2 * r) * w2;
          const T* bot = top + w2;
          const T* xr = xc + r * x.w;
          for (int q = 0; q < x.w; ++q) {
            const T v = xr[q];
            acc[0] += top[2 * q] * v;
            acc[1] += top[2 * q + 1] * v;
            acc[2] += bot[2 * q] * v;
            acc[3] += bot[2 * q + 1] * v;
            if (dxc)
              dxc[r * x.w + q] +=
                  wv[0] * top[2 * q] + wv[1] * top[2 * q + 1] + wv[2] * bot[2 * q] + wv[3] * bot[2 * q + 1];
          }
        }
        for (int l = 0; l < 4; ++l) dweight[wi + l] += acc[l];
      }
    }
}

template <class T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

template <class T>
struct TopoNet<T>::Workspace {
  enum class Kind { Conv, Norm, Relu, Pool, Up, Concat, Sigmoid };
  struct Op {
    Kind kind;
    int in, in2, out, layer, aux;
  };
  struct NormCache {
    Tensor<T> xhat;
    std::vector<T> inv_std;
    std::vector<double> mean, var;
  };

  Mode mode = Mode::Inference;
  std::vector<Tensor<T>> values;
  std::vector<Op> tape;
  std::vector<std::vector<int>> argmax;
  std::vector<NormCache> norms;

  int push(Tensor<T> t) {
    values.push_back(std::move(t));
    return static_cast<int>(values.size()) - 1;
  }
};

template <class T>
TopoNet<T>::TopoNet(const TopoConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const int c = config_.c_init, b = config_.c_bot;
  auto block = [&](const std::string& name, int in, int out) {
    add_conv(name + ".conv1", in, out, 3, 1);
    add_norm(name + ".norm1", out);
    add_conv(name + ".conv2", out, out, 3, 1);
    add_norm(name + ".norm2", out);
  };
  block("enc1", 1, c);
  block("enc2", c, 2 * c);
  block("enc3", 2 * c, 4 * c);
  add_conv("mid1", 4 * c, b, 3, 2);
  add_conv("mid2", b, b, 3, 3);
  add_conv("mid3", b, b, 3, 1);
  add_up("up3", b, 4 * c);
  block("dec3", 8 * c, 4 * c);
  add_up("up2", 4 * c, 2 * c);
  block("dec2", 4 * c, 2 * c);
  add_up("up1", 2 * c, c);
  block("dec1", 2 * c, c);
  add_conv("head", c, 1, 3, 1);

  Rng rng(seed);
  auto fill_uniform = [&](int block_index, int fan_in) {
    const double bound = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& v : params_[block_index].value) v = static_cast<T>(u(rng));
  };
  for (const auto& s : convs_) fill_uniform(s.weight, s.in * s.kernel * s.kernel);
  for (const auto& s : ups_) fill_uniform(s.weight, s.in);
  for (const auto& s : norms_) std::fill(params_[s.gamma].value.begin(), params_[s.gamma].value.end(), T(1));
}

template <class T>
int TopoNet<T>::add_block(std::string name, std::vector<int> shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  params_.push_back({std::move(name), std::move(shape), std::vector<T>(n, T(0))});
  return static_cast<int>(params_.size()) - 1;
}

template <class T>
int TopoNet<T>::add_conv(const std::string& name, int in, int out, int kernel, int dilation) {
  const int w = add_block(name + ".weight", {out, in, kernel, kernel});
  const int b = add_block(name + ".bias", {out});
  convs_.push_back({w, b, in, out, kernel, dilation});
  return static_cast<int>(convs_.size()) - 1;
}

template <class T>
int TopoNet<T>::add_norm(const std::string& name, int channels) {
  const int g = add_block(name + ".scale", {channels});
  const int b = add_block(name + ".shift", {channels});
  norms_.push_back({g, b, channels});
  running_mean_.emplace_back(channels, T(0));
  running_var_.emplace_back(channels, T(1));
  return static_cast<int>(norms_.size()) - 1;
}

template <class T>
int TopoNet<T>::add_up(const std::string& name, int in, int out) {
  const int w = add_block(name + ".weight", {in, out, 2, 2});
  const int b = add_block(name + ".bias", {out});
  ups_.push_back({w, b, in, out});
  return static_cast<int>(ups_.size()) - 1;
}

template <class T>
std::int64_t TopoNet<T>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += static_cast<std::int64_t>(p.value.size());
  return n;
}

template <class T>
void TopoNet<T>::zero_parameters() {
  for (auto& p : params_) std::fill(p.value.begin(), p.value.end(), T(0));
}

template <class T>
int TopoNet<T>::run(const Tensor<T>& input, Mode mode, Workspace& ws) const {
  if (input.c != 1 || input.h != config_.height || input.w != config_.width || input.n <= 0 ||
      input.data.size() != static_cast<std::size_t>(input.n) * input.h * input.w)
    throw InvalidArgument("network input must be (n,1," + std::to_string(config_.height) + "," +
                          std::to_string(config_.width) + ")");
  using Kind = typename Workspace::Kind;
  ws.mode = mode;
  ws.values.clear();
  ws.tape.clear();
  ws.argmax.clear();
  ws.norms.clear();
  int conv_i = 0, norm_i = 0, up_i = 0;

  auto conv = [&](int in) {
    const auto& s = convs_[conv_i];
    Tensor<T> y = conv_forward(ws.values[in], params_[s.weight].value.data(), params_[s.bias].value.data(), s.out,
                               s.kernel, s.dilation);
    const int out = ws.push(std::move(y));
    ws.tape.push_back({Kind::Conv, in, -1, out, conv_i++, 0});
    return out;
  };
  auto relu = [&](int in) {
    Tensor<T> y = ws.values[in];
    for (auto& v : y.data) v = v > T(0) ? v : T(0);
    const int out = ws.push(std::move(y));
    ws.tape.push_back({Kind::Relu, in, -1, out, 0, 0});
    return out;
  };
  auto norm = [&](int in) {
    const auto& s = norms_[norm_i];
    const Tensor<T>& x = ws.values[in];
    const T* gamma = params_[s.gamma].value.data();
    const T* beta = params_[s.beta].value.data();
    typename Workspace::NormCache cache;
    cache.xhat = Tensor<T>(x.n, x.c, x.h, x.w);
    cache.inv_std.resize(x.c);
    cache.mean.resize(x.c);
    cache.var.resize(x.c);
    Tensor<T> y(x.n, x.c, x.h, x.w);
    const std::size_t hw = x.plane();
    for (int ch = 0; ch < x.c; ++ch) {
      double mean, var;
      if (mode == Mode::Train) {
        double sum = 0.0;
        for (int i = 0; i < x.n; ++i) {
          const T* p = x.channel(i, ch);
          for (std::size_t j = 0; j < hw; ++j) sum += p[j];
        }
        const double m = static_cast<double>(x.n) * hw;
        mean = sum / m;
        double sq = 0.0;
        for (int i = 0; i < x.n; ++i) {
          const T* p = x.channel(i, ch);
          for (std::size_t j = 0; j < hw; ++j) sq += (p[j] - mean) * (p[j] - mean);
        }
        var = sq / m;
      } else {
        mean = running_mean_[norm_i][ch];
        var = running_var_[norm_i][ch];
      }
      cache.mean[ch] = mean;
      cache.var[ch] = var;
      const T inv = static_cast<T>(1.0 / std::sqrt(var + kNormEps));
      cache.inv_std[ch] = inv;
      const T tm = static_cast<T>(mean);
      for (int i = 0; i < x.n; ++i) {
        const T* p = x.channel(i, ch);
        T* xh = cache.xhat.channel(i, ch);
        T* q = y.channel(i, ch);
        for (std::size_t j = 0; j < hw; ++j) {
          xh[j] = (p[j] - tm) * inv;
          q[j] = gamma[ch] * xh[j] + beta[ch];
        }
      }
    }
    ws.norms.push_back(std::move(cache));
    const int out = ws.push(std::move(y));
    ws.tape.push_back({Kind::Norm, in, -1, out, norm_i++, static_cast<int>(ws.norms.size()) - 1});
    return out;
  };
  auto pool = [&](int in) {
    const Tensor<T>& x = ws.values[in];
    Tensor<T> y(x.n, x.c, x.h / 2, x.w / 2);
    std::vector<int> arg(y.size());
    std::size_t o = 0;
    for (int i = 0; i < x.n; ++i)
      for (int ch = 0; ch < x.c; ++ch) {
        const T* p = x.channel(i, ch);
        const int base = (i * x.c + ch) * x.h * x.w;
        for (int r = 0; r < y.h; ++r)
          for (int q = 0; q < y.w; ++q, ++o) {
            int best = (2 * r) * x.w + 2 * q;
            const int cand[3] = {best + 1, best + x.w, best + x.w + 1};
            for (int k : cand)
              if (p[k] > p[best]) best = k;
            y.data[o] = p[best];
            arg[o] = base + best;
          }
      }
    ws.argmax.push_back(std::move(arg));
    const int out = ws.push(std::move(y));
    ws.tape.push_back({Kind::Pool, in, -1, out, 0, static_cast<int>(ws.argmax.size()) - 1});
    return out;
  };
  auto up = [&](int in) {
    const auto& s = ups_[up_i];
    Tensor<T> y = up_forward(ws.values[in], params_[s.weight].value.data(), params_[s.bias].value.data(), s.out);
    const int out = ws.push(std::move(y));
    ws.tape.push_back({Kind::Up, in, -1, out, up_i++, 0});
    return out;
  };
  auto concat = [&](int a, int b) {
    const Tensor<T>& x = ws.values[a];
    const Tensor<T>& z = ws.values[b];
    Tensor<T> y(x.n, x.c + z.c, x.h, x.w);
    for (int i = 0; i < x.n; ++i) {
      std::copy(x.channel(i, 0), x.channel(i, 0) + x.c * x.plane(), y.channel(i, 0));
      std::copy(z.channel(i, 0), z.channel(i, 0) + z.c * z.plane(), y.channel(i, x.c));
    }
    const int out = ws.push(std::move(y));
    ws.tape.push_back({Kind::Concat, a, b, out, 0, 0});
    return out;
  };
  auto sigmoid = [&](int in) {
    Tensor<T> y = ws.values[in];
    // Keep probabilities strictly inside (0,1) at the working precision.
    const double margin = std::numeric_limits<T>::epsilon();
    for (auto& v : y.data) {
      const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(v)));
      v = static_cast<T>(std::clamp(p, margin, 1.0 - margin));
    }
    const int out = ws.push(std::move(y));
    ws.tape.push_back({Kind::Sigmoid, in, -1, out, 0, 0});
    return out;
  };
  auto block = [&](int in) { return relu(norm(conv(relu(norm(conv(in)))))); };

  const int x0 = ws.push(input);
  const int e1 = block(x0);
  const int e2 = block(pool(e1));
  const int e3 = block(pool(e2));
  int m = relu(conv(pool(e3)));
  m = relu(conv(m));
  m = relu(conv(m));
  const int d3 = block(concat(up(m), e3));
  const int d2 = block(concat(up(d3), e2));
  const int d1 = block(concat(up(d2), e1));
  return sigmoid(conv(d1));
}

template <class T>
Tensor<T> TopoNet<T>::forward(const Tensor<T>& input, Mode mode) const {
  Workspace ws;
  const int out = run(input, mode, ws);
  return std::move(ws.values[out]);
}

template <class T>
typename TopoNet<T>::Gradients TopoNet<T>::backward(const Tensor<T>& input, const Tensor<T>& label, Mode mode,
                                                    bool update_running_stats) {
  Workspace ws;
  const int out = run(input, mode, ws);
  const Tensor<T>& pred = ws.values[out];
  if (!label.same_shape(pred)) throw InvalidArgument("label shape must match network output");

  using Kind = typename Workspace::Kind;
  Gradients g;
  g.blocks.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) g.blocks[i].assign(params_[i].value.size(), T(0));

  std::vector<Tensor<T>> grads(ws.values.size());
  const double inv_m = 1.0 / static_cast<double>(pred.size());
  {
    double loss = 0.0;
    Tensor<T> d(pred.n, pred.c, pred.h, pred.w);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double r = static_cast<double>(pred.data[i]) - static_cast<double>(label.data[i]);
      loss += r * r;
      d.data[i] = static_cast<T>(2.0 * r * inv_m);
    }
    g.loss = loss * inv_m;
    grads[out] = std::move(d);
  }
  auto accumulate = [&](int id, Tensor<T>&& t) {
    if (grads[id].data.empty())
      grads[id] = std::move(t);
    else
      add_into(grads[id], t);
  };

  for (auto it = ws.tape.rbegin(); it != ws.tape.rend(); ++it) {
    const auto& op = *it;
    Tensor<T>& dy = grads[op.out];
    if (dy.data.empty()) continue;
    const Tensor<T>& x = ws.values[op.in];
    const bool need_dx = op.in != 0;
    switch (op.kind) {
      case Kind::Sigmoid: {
        Tensor<T> dx = dy;
        const Tensor<T>& p = ws.values[op.out];
        for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] *= p.data[i] * (T(1) - p.data[i]);
        accumulate(op.in, std::move(dx));
        break;
      }
      case Kind::Conv: {
        const auto& s = convs_[op.layer];
        Tensor<T> dx;
        conv_backward(x, params_[s.weight].value.data(), dy, s.kernel, s.dilation, need_dx ? &dx : nullptr,
                      g.blocks[s.weight].data(), g.blocks[s.bias].data());
        if (need_dx) accumulate(op.in, std::move(dx));
        break;
      }
      case Kind::Relu: {
        Tensor<T> dx = dy;
        const Tensor<T>& y = ws.values[op.out];
        for (std::size_t i = 0; i < dx.size(); ++i)
          if (!(y.data[i] > T(0))) dx.data[i] = 0;
        accumulate(op.in, std::move(dx));
        break;
      }
      case Kind::Norm: {
        const auto& s = norms_[op.layer];
        const auto& cache = ws.norms[op.aux];
        const T* gamma = params_[s.gamma].value.data();
        T* dgamma = g.blocks[s.gamma].data();
        T* dbeta = g.blocks[s.beta].data();
        Tensor<T> dx(x.n, x.c, x.h, x.w);
        const std::size_t hw = x.plane();
        const double m = static_cast<double>(x.n) * hw;
        for (int ch = 0; ch < x.c; ++ch) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int i = 0; i < x.n; ++i) {
            const T* gy = dy.channel(i, ch);
            const T* xh = cache.xhat.channel(i, ch);
            for (std::size_t j = 0; j < hw; ++j) {
              sum_dy += gy[j];
              sum_dy_xhat += static_cast<double>(gy[j]) * xh[j];
            }
          }
          dgamma[ch] += static_cast<T>(sum_dy_xhat);
          dbeta[ch] += static_cast<T>(sum_dy);
          const T gi = gamma[ch] * cache.inv_std[ch];
          for (int i = 0; i < x.n; ++i) {
            const T* gy = dy.channel(i, ch);
            const T* xh = cache.xhat.channel(i, ch);
            T* d = dx.channel(i, ch);
            if (mode == Mode::Train) {
              const T a = static_cast<T>(sum_dy / m), b = static_cast<T>(sum_dy_xhat / m);
              for (std::size_t j = 0; j < hw; ++j) d[j] = gi * (gy[j] - a - xh[j] * b);
            } else {
              for (std::size_t j = 0; j < hw; ++j) d[j] = gi * gy[j];
            }
          }
          if (update_running_stats && mode == Mode::Train) {
            const double unbiased = m > 1.0 ? cache.var[ch] * m / (m - 1.0) : cache.var[ch];
            auto& rm = running_mean_[op.layer][ch];
            auto& rv = running_var_[op.layer][ch];
            rm = static_cast<T>((1.0 - kNormMomentum) * rm + kNormMomentum * cache.mean[ch]);
            rv = static_cast<T>((1.0 - kNormMomentum) * rv + kNormMomentum * unbiased);
          }
        }
        accumulate(op.in, std::move(dx));
        break;
      }
      case Kind::Pool: {
        Tensor<T> dx(x.n, x.c, x.h, x.w);
        const auto& arg = ws.argmax[op.aux];
        for (std::size_t i = 0; i < dy.size(); ++i) dx.data[arg[i]] += dy.data[i];
        accumulate(op.in, std::move(dx));
        break;
      }
      case Kind::Up: {
        const auto& s = ups_[op.layer];
        Tensor<T> dx;
        up_backward(x, params_[s.weight].value.data(), dy, &dx, g.blocks[s.weight].data(), g.blocks[s.bias].data());
        accumulate(op.in, std::move(dx));
        break;
      }
      case Kind::Concat: {
        const Tensor<T>& z = ws.values[op.in2];
        Tensor<T> da(x.n, x.c, x.h, x.w), db(z.n, z.c, z.h, z.w);
        for (int i = 0; i < x.n; ++i) {
          std::copy(dy.channel(i, 0), dy.channel(i, 0) + x.c * x.plane(), da.channel(i, 0));
          std::copy(dy.channel(i, x.c), dy.channel(i, x.c) + z.c * z.plane(), db.channel(i, 0));
        }
        accumulate(op.in, std::move(da));
        accumulate(op.in2, std::move(db));
        break;
      }
    }
    // Free activations' gradients once consumed.
    dy = Tensor<T>();
  }
  return g;
}

template class TopoNet<float>;
template class TopoNet<double>;

TrainSample mask_map(const std::vector<float>& full, int height, int width, double mask_rate, std::uint64_t seed) {
  if (!(mask_rate >= 0.0 && mask_rate < 1.0)) throw InvalidParameter("mask rate must lie in [0,1)");
  const std::size_t n = static_cast<std::size_t>(height) * width;
  if (full.size() != n) throw InvalidArgument("map size does not match dimensions");
  TrainSample s{height, width, full, full};
  const auto masked = static_cast<std::size_t>(std::floor(mask_rate * static_cast<double>(n)));
  std::vector<std::uint32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0u);
  Rng rng(seed);
  // Partial Fisher-Yates: the first `masked` slots end up a uniform subset.
  for (std::size_t i = 0; i < masked; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
    std::swap(idx[i], idx[j]);
    s.partial[idx[i]] = 0.0f;
  }
  return s;
}

namespace {

struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<float>> m, v;

  void apply(std::vector<ParamBlock<float>>& params, const std::vector<std::vector<float>>& grads, double lr) {
    if (m.empty()) {
      for (const auto& p : params) {
        m.emplace_back(p.value.size(), 0.0f);
        v.emplace_back(p.value.size(), 0.0f);
      }
    }
    ++step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    const float a = static_cast<float>(lr / c1);
    const float rc2 = static_cast<float>(1.0 / c2);
    const float b1 = static_cast<float>(beta1), b2 = static_cast<float>(beta2);
    const float e = static_cast<float>(eps);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& pv = params[k].value;
      auto& mk = m[k];
      auto& vk = v[k];
      const auto& gk = grads[k];
      for (std::size_t i = 0; i < pv.size(); ++i) {
        mk[i] = b1 * mk[i] + (1.0f - b1) * gk[i];
        vk[i] = b2 * vk[i] + (1.0f - b2) * gk[i] * gk[i];
        pv[i] -= a * mk[i] / (std::sqrt(vk[i] * rc2) + e);
      }
    }
  }
};

void fill_batch(const MapGenerator& gen, Rng& map_rng, const TopoConfig& cfg, std::uint64_t mask_seed_base,
                std::int64_t first_index, int count, Tensor<float>& in, Tensor<float>& label) {
  const int h = cfg.height, w = cfg.width;
  in = Tensor<float>(count, 1, h, w);
  label = Tensor<float>(count, 1, h, w);
  for (int i = 0; i < count; ++i) {
    const std::vector<float> full = gen(map_rng);
    const TrainSample s =
        mask_map(full, h, w, cfg.mask_rate, derive_seed({mask_seed_base, static_cast<std::uint64_t>(first_index + i)}));
    std::copy(s.partial.begin(), s.partial.end(), in.channel(i, 0));
    std::copy(s.full.begin(), s.full.end(), label.channel(i, 0));
  }
}

}  // namespace

double evaluate_mse(const TopoNet<float>& net, const MapGenerator& generator, int samples, std::uint64_t seed) {
  if (samples <= 0) return 0.0;
  const auto& cfg = net.config();
  Rng map_rng(derive_seed({seed, 0x5a1}));
  const std::uint64_t mask_base = derive_seed({seed, 0x5a2});
  double sum = 0.0;
  std::size_t count = 0;
  for (int first = 0; first < samples; first += cfg.batch_size) {
    const int n = std::min(cfg.batch_size, samples - first);
    Tensor<float> in, label;
    fill_batch(generator, map_rng, cfg, mask_base, first, n, in, label);
    const Tensor<float> out = net.forward(in, Mode::Inference);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double r = static_cast<double>(out.data[i]) - label.data[i];
      sum += r * r;
    }
    count += out.size();
  }
  return sum / static_cast<double>(count);
}

TrainResult train(TopoNet<float>& net, const MapGenerator& generator, const TrainOptions& options) {
  const auto& cfg = net.config();
  cfg.validate();
  if (options.epochs < 0 || options.samples_per_epoch <= 0) throw InvalidParameter("bad training schedule");
  TrainResult result;
  if (options.epochs == 0) return result;

  Adam adam;
  Rng map_rng(derive_seed({options.seed, 0x7a1}));
  const std::uint64_t mask_base = derive_seed({options.seed, 0x7a2});
  std::int64_t index = 0;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    double sum = 0.0;
    int batches = 0;
    for (int first = 0; first < options.samples_per_epoch; first += cfg.batch_size) {
      const int n = std::min(cfg.batch_size, options.samples_per_epoch - first);
      Tensor<float> in, label;
      fill_batch(generator, map_rng, cfg, mask_base, index, n, in, label);
      index += n;
      auto g = net.backward(in, label, Mode::Train, true);
      if (!std::isfinite(g.loss)) throw TrainingDiverged("loss became non-finite in epoch " + std::to_string(epoch));
      adam.apply(net.params(), g.blocks, cfg.learning_rate);
      sum += g.loss;
      ++batches;
    }
    const double mean = sum / batches;
    result.loss_history.push_back(mean);
    if (options.on_epoch) options.on_epoch(epoch, mean);
  }
  result.validation_mse = evaluate_mse(net, generator, options.validation_samples, derive_seed({options.seed, 0x7a3}));
  return result;
}

gridmap::GridMap predict(const TopoNet<float>& net, const gridmap::GridMap& observed) {
  const auto& cfg = net.config();
  if (observed.width() != cfg.width || observed.height() != cfg.height)
    throw InvalidArgument("observed map size does not match the network");
  Tensor<float> in(1, 1, cfg.height, cfg.width);
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x) in.data[static_cast<std::size_t>(y) * cfg.width + x] = observed.blocked({x, y}) ? 1.0f : 0.0f;
  const Tensor<float> out = net.forward(in, Mode::Inference);
  gridmap::GridMap pred(observed.geometry(), 0.0);
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x) pred.set(x, y, out.data[static_cast<std::size_t>(y) * cfg.width + x]);
  return pred;
}

namespace {

void write_floats(std::ostream& os, const std::vector<float>& v) {
  std::vector<unsigned char> bytes(v.size() * 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint32_t u;
    std::memcpy(&u, &v[i], 4);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<unsigned char>((u >> (8 * b)) & 0xffu);
  }
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  os << '\n';
}

void read_floats(std::istream& is, std::vector<float>& v) {
  std::vector<unsigned char> bytes(v.size() * 4);
  if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
    throw IoError("model file truncated");
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
    std::memcpy(&v[i], &u, 4);
  }
  if (is.get() != '\n') throw IoError("model block not terminated");
}

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_model(std::ostream& os, const TopoNet<float>& net) {
  const auto& c = net.config();
  os << "PAIPNET v1\n";
  os << "config " << c.c_init << ' ' << c.c_bot << ' ' << c.height << ' ' << c.width << ' ' << format_real(c.mask_rate)
     << ' ' << format_real(c.learning_rate) << ' ' << c.batch_size << '\n';
  os << "blocks " << net.params().size() << '\n';
  for (const auto& p : net.params()) {
    os << p.name << ' ' << p.shape.size();
    for (int d : p.shape) os << ' ' << d;
    os << '\n';
    write_floats(os, p.value);
  }
  os << "running " << net.running_mean().size() << '\n';
  for (std::size_t i = 0; i < net.running_mean().size(); ++i) {
    os << net.running_mean()[i].size() << '\n';
    write_floats(os, net.running_mean()[i]);
    write_floats(os, net.running_var()[i]);
  }
}

TopoNet<float> read_model(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "PAIPNET v1") throw IoError("not a PAIPNET v1 model");
  std::string tag;
  TopoConfig cfg;
  if (!std::getline(is, line)) throw IoError("model config missing");
  {
    std::istringstream ls(line);
    if (!(ls >> tag >> cfg.c_init >> cfg.c_bot >> cfg.height >> cfg.width >> cfg.mask_rate >> cfg.learning_rate >>
          cfg.batch_size) ||
        tag != "config")
      throw IoError("malformed model config");
  }
  TopoNet<float> net(cfg);
  std::size_t blocks = 0;
  if (!std::getline(is, line) || std::sscanf(line.c_str(), "blocks %zu", &blocks) != 1 || blocks != net.params().size())
    throw IoError("model block count does not match its config");
  for (auto& p : net.params()) {
    if (!std::getline(is, line)) throw IoError("model file truncated");
    std::istringstream ls(line);
    std::string name;
    std::size_t rank = 0;
    ls >> name >> rank;
    std::vector<int> shape(rank);
    for (auto& d : shape) ls >> d;
    if (!ls || name != p.name || shape != p.shape) throw IoError("unexpected model block '" + name + "'");
    read_floats(is, p.value);
  }
  std::size_t norms = 0;
  if (!std::getline(is, line) || std::sscanf(line.c_str(), "running %zu", &norms) != 1 ||
      norms != net.running_mean().size())
    throw IoError("running statistics missing");
  for (std::size_t i = 0; i < norms; ++i) {
    std::size_t ch = 0;
    if (!std::getline(is, line) || std::sscanf(line.c_str(), "%zu", &ch) != 1 || ch != net.running_mean()[i].size())
      throw IoError("running statistics malformed");
    read_floats(is, net.running_mean()[i]);
    read_floats(is, net.running_var()[i]);
  }
  return net;
}

void save_model(const std::string& path, const TopoNet<float>& net) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  write_model(os, net);
}

TopoNet<float> load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  return read_model(is);
}

}  // namespace paip::topo
