#include "cxr/net.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "cxr/errors.hpp"
#include "cxr/loss.hpp"

namespace cxr {

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

int ceil_div(int a, int b) {  // b > 0
  return a > 0 ? (a + b - 1) / b : a / b;
}

std::size_t numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (const int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

}  // namespace

void ParamTensor::resize(std::string n, std::vector<int> s) {
  name = std::move(n);
  shape = std::move(s);
  value.assign(numel(shape), 0.0);
  grad.assign(value.size(), 0.0);
}

void ConvLayer::configure(const std::string& name, ConvSpec s) {
  spec = s;
  weight.resize(name + ".weight", {s.out_ch, s.in_ch, s.kernel, s.kernel});
  bias.resize(name + ".bias", {s.out_ch});
}

void ConvLayer::he_init(Rng& rng) {
  const double fan_in = static_cast<double>(spec.in_ch) * spec.kernel * spec.kernel;
  const double stddev = std::sqrt(2.0 / fan_in);
  for (auto& w : weight.value) w = rng.normal(0.0, stddev);
  std::fill(bias.value.begin(), bias.value.end(), 0.0);
}

Tensor4 conv2d_forward(const Tensor4& x, const ConvLayer& layer) {
  const ConvSpec& cs = layer.spec;
  if (x.c != cs.in_ch) throw std::invalid_argument("conv2d: channel mismatch");
  if (cs.stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  const int k = cs.kernel, s = cs.stride, p = cs.pad;
  const int oh = cs.out_h(x.h), ow = cs.out_w(x.w);
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: empty output");
  Tensor4 out(x.n, cs.out_ch, oh, ow);
  for (int b = 0; b < x.n; ++b) {
    for (int oc = 0; oc < cs.out_ch; ++oc) {
      double* op = out.plane(b, oc);
      const double bias = layer.bias.value[oc];
      std::fill(op, op + static_cast<std::size_t>(oh) * ow, bias);
      for (int ic = 0; ic < cs.in_ch; ++ic) {
        const double* ip = x.plane(b, ic);
        const double* wk = &layer.weight.value[((static_cast<std::size_t>(oc) * cs.in_ch) + ic) * k * k];
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const double wv = wk[ky * k + kx];
            const int oy0 = std::max(0, ceil_div(p - ky, s));
            const int oy1 = std::min(oh - 1, (x.h - 1 + p - ky) / s);
            const int ox0 = std::max(0, ceil_div(p - kx, s));
            const int ox1 = std::min(ow - 1, (x.w - 1 + p - kx) / s);
            if (oy1 < oy0 || ox1 < ox0) continue;
            for (int oy = oy0; oy <= oy1; ++oy) {
              const double* irow = ip + static_cast<std::size_t>(oy * s - p + ky) * x.w + (ox0 * s - p + kx);
              double* orow = op + static_cast<std::size_t>(oy) * ow + ox0;
              const int span = ox1 - ox0;
              if (s == 1) {
                for (int i = 0; i <= span; ++i) orow[i] += wv * irow[i];
              } else {
                for (int i = 0; i <= span; ++i) orow[i] += wv * irow[static_cast<std::size_t>(i) * s];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

void conv2d_backward(const Tensor4& x, const ConvLayer& layer,
                     const Tensor4& grad_out, Tensor4* grad_x,
                     std::span<double> grad_w, std::span<double> grad_b) {
  const ConvSpec& cs = layer.spec;
  const int k = cs.kernel, s = cs.stride, p = cs.pad;
  const int oh = cs.out_h(x.h), ow = cs.out_w(x.w);
  if (grad_out.n != x.n || grad_out.c != cs.out_ch || grad_out.h != oh || grad_out.w != ow) {
    throw std::invalid_argument("conv2d_backward: grad shape mismatch");
  }
  if (grad_w.size() != layer.weight.count() || grad_b.size() != layer.bias.count()) {
    throw std::invalid_argument("conv2d_backward: grad buffer mismatch");
  }
  if (grad_x && !grad_x->same_shape(x)) {
    throw std::invalid_argument("conv2d_backward: grad_x shape mismatch");
  }
  for (int b = 0; b < x.n; ++b) {
    for (int oc = 0; oc < cs.out_ch; ++oc) {
      const double* gop = grad_out.plane(b, oc);
      double acc = 0.0;
      for (std::size_t i = 0; i < static_cast<std::size_t>(oh) * ow; ++i) acc += gop[i];
      grad_b[oc] += acc;
      for (int ic = 0; ic < cs.in_ch; ++ic) {
        const double* ip = x.plane(b, ic);
        double* gxp = grad_x ? grad_x->plane(b, ic) : nullptr;
        double* gwk = &grad_w[((static_cast<std::size_t>(oc) * cs.in_ch) + ic) * k * k];
        const double* wk = &layer.weight.value[((static_cast<std::size_t>(oc) * cs.in_ch) + ic) * k * k];
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const int oy0 = std::max(0, ceil_div(p - ky, s));
            const int oy1 = std::min(oh - 1, (x.h - 1 + p - ky) / s);
            const int ox0 = std::max(0, ceil_div(p - kx, s));
            const int ox1 = std::min(ow - 1, (x.w - 1 + p - kx) / s);
            if (oy1 < oy0 || ox1 < ox0) continue;
            const double wv = wk[ky * k + kx];
            double wacc = 0.0;
            for (int oy = oy0; oy <= oy1; ++oy) {
              const std::size_t ibase = static_cast<std::size_t>(oy * s - p + ky) * x.w + (ox0 * s - p + kx);
              const double* irow = ip + ibase;
              const double* gorow = gop + static_cast<std::size_t>(oy) * ow + ox0;
              const int span = ox1 - ox0;
              if (s == 1) {
                for (int i = 0; i <= span; ++i) wacc += gorow[i] * irow[i];
                if (gxp) {
                  double* gxrow = gxp + ibase;
                  for (int i = 0; i <= span; ++i) gxrow[i] += wv * gorow[i];
                }
              } else {
                for (int i = 0; i <= span; ++i) wacc += gorow[i] * irow[static_cast<std::size_t>(i) * s];
                if (gxp) {
                  double* gxrow = gxp + ibase;
                  for (int i = 0; i <= span; ++i) gxrow[static_cast<std::size_t>(i) * s] += wv * gorow[i];
                }
              }
            }
            gwk[ky * k + kx] += wacc;
          }
        }
      }
    }
  }
}

void gaussian_downsample_init(ConvLayer& layer) {
  const ConvSpec& cs = layer.spec;
  if (cs.in_ch != cs.out_ch || cs.kernel != 3) {
    throw std::invalid_argument("gaussian_downsample_init expects square channel map and 3x3 kernel");
  }
  static const double kKernel[9] = {1 / 16.0, 2 / 16.0, 1 / 16.0,
                                    2 / 16.0, 4 / 16.0, 2 / 16.0,
                                    1 / 16.0, 2 / 16.0, 1 / 16.0};
  std::fill(layer.weight.value.begin(), layer.weight.value.end(), 0.0);
  std::fill(layer.bias.value.begin(), layer.bias.value.end(), 0.0);
  for (int c = 0; c < cs.out_ch; ++c) {
    double* wk = &layer.weight.value[((static_cast<std::size_t>(c) * cs.in_ch) + c) * 9];
    std::copy(kKernel, kKernel + 9, wk);
  }
}

Tensor4 avg_pool2x2_forward(const Tensor4& x) {
  const int oh = x.h / 2, ow = x.w / 2;
  if (oh == 0 || ow == 0) throw std::invalid_argument("avg_pool2x2: input too small");
  Tensor4 out(x.n, x.c, oh, ow);
  for (int b = 0; b < x.n; ++b) {
    for (int c = 0; c < x.c; ++c) {
      const double* ip = x.plane(b, c);
      double* op = out.plane(b, c);
      for (int oy = 0; oy < oh; ++oy) {
        const double* r0 = ip + static_cast<std::size_t>(2 * oy) * x.w;
        const double* r1 = r0 + x.w;
        for (int ox = 0; ox < ow; ++ox) {
          op[static_cast<std::size_t>(oy) * ow + ox] =
              0.25 * (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]);
        }
      }
    }
  }
  return out;
}

Tensor4 avg_pool2x2_backward(const Tensor4& grad_out, const Tensor4& x) {
  Tensor4 gx(x.n, x.c, x.h, x.w);
  const int oh = grad_out.h, ow = grad_out.w;
  for (int b = 0; b < x.n; ++b) {
    for (int c = 0; c < x.c; ++c) {
      const double* gop = grad_out.plane(b, c);
      double* gxp = gx.plane(b, c);
      for (int oy = 0; oy < oh; ++oy) {
        double* r0 = gxp + static_cast<std::size_t>(2 * oy) * x.w;
        double* r1 = r0 + x.w;
        for (int ox = 0; ox < ow; ++ox) {
          const double g = 0.25 * gop[static_cast<std::size_t>(oy) * ow + ox];
          r0[2 * ox] += g;
          r0[2 * ox + 1] += g;
          r1[2 * ox] += g;
          r1[2 * ox + 1] += g;
        }
      }
    }
  }
  return gx;
}

Matrix global_avg_pool_forward(const Tensor4& x) {
  Matrix out(x.n, x.c);
  const double inv = 1.0 / (static_cast<double>(x.h) * x.w);
  for (int b = 0; b < x.n; ++b) {
    for (int c = 0; c < x.c; ++c) {
      const double* ip = x.plane(b, c);
      double acc = 0.0;
      for (std::size_t i = 0; i < static_cast<std::size_t>(x.h) * x.w; ++i) acc += ip[i];
      out.at(b, c) = acc * inv;
    }
  }
  return out;
}

Tensor4 global_avg_pool_backward(const Matrix& grad_out, int h, int w) {
  Tensor4 gx(grad_out.rows, grad_out.cols, h, w);
  const double inv = 1.0 / (static_cast<double>(h) * w);
  for (int b = 0; b < gx.n; ++b) {
    for (int c = 0; c < gx.c; ++c) {
      const double g = grad_out.at(b, c) * inv;
      double* p = gx.plane(b, c);
      std::fill(p, p + static_cast<std::size_t>(h) * w, g);
    }
  }
  return gx;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// DenseBlock

DenseBlock::DenseBlock(int in_ch, int layers, int growth, bool norm,
                       const std::string& name)
    : in_ch_(in_ch), growth_(growth) {
  layers_.resize(layers);
  for (int i = 0; i < layers; ++i) {
    auto& l = layers_[i];
    const std::string lname = name + ".layer" + std::to_string(i);
    l.conv.configure(lname, {in_ch + i * growth, growth, 3, 1, 1});
    l.norm = norm;
    if (norm) {
      l.gamma.resize(lname + ".gamma", {growth});
      l.beta.resize(lname + ".beta", {growth});
      l.run_mean.assign(growth, 0.0);
      l.run_var.assign(growth, 1.0);
    }
  }
}

void DenseBlock::init(Rng& rng) {
  for (auto& l : layers_) {
    l.conv.he_init(rng);
    if (l.norm) {
      std::fill(l.gamma.value.begin(), l.gamma.value.end(), 1.0);
      std::fill(l.beta.value.begin(), l.beta.value.end(), 0.0);
    }
  }
}

std::vector<ParamTensor*> DenseBlock::params() {
  std::vector<ParamTensor*> out;
  for (auto& l : layers_) {
    out.push_back(&l.conv.weight);
    out.push_back(&l.conv.bias);
    if (l.norm) {
      out.push_back(&l.gamma);
      out.push_back(&l.beta);
    }
  }
  return out;
}

std::size_t DenseBlock::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) {
    n += l.conv.weight.count() + l.conv.bias.count();
    if (l.norm) n += l.gamma.count() + l.beta.count();
  }
  return n;
}

std::vector<std::vector<double>*> DenseBlock::state() {
  std::vector<std::vector<double>*> out;
  for (auto& l : layers_) {
    if (l.norm) {
      out.push_back(&l.run_mean);
      out.push_back(&l.run_var);
    }
  }
  return out;
}

std::vector<const std::vector<double>*> DenseBlock::state() const {
  std::vector<const std::vector<double>*> out;
  for (const auto& l : layers_) {
    if (l.norm) {
      out.push_back(&l.run_mean);
      out.push_back(&l.run_var);
    }
  }
  return out;
}

Tensor4 DenseBlock::forward(const Tensor4& x, Cache& cache, bool training) {
  if (x.c != in_ch_) throw std::invalid_argument("dense block: channel mismatch");
  const int nlayers = layer_count();
  cache.inputs.clear();
  cache.z.clear();
  cache.xhat.clear();
  cache.invstd.clear();
  cache.inputs.reserve(nlayers + 1);
  cache.inputs.push_back(x);
  for (int i = 0; i < nlayers; ++i) {
    auto& l = layers_[i];
    const Tensor4& cur = cache.inputs.back();
    Tensor4 z = conv2d_forward(cur, l.conv);
    Tensor4 act;  // post-norm pre-relu source
    if (l.norm) {
      const std::size_t m = static_cast<std::size_t>(z.n) * z.h * z.w;
      Tensor4 xhat(z.n, z.c, z.h, z.w);
      std::vector<double> invstd(z.c);
      for (int c = 0; c < z.c; ++c) {
        double sum = 0.0, sq = 0.0;
        for (int b = 0; b < z.n; ++b) {
          const double* zp = z.plane(b, c);
          for (std::size_t k = 0; k < static_cast<std::size_t>(z.h) * z.w; ++k) {
            sum += zp[k];
            sq += zp[k] * zp[k];
          }
        }
        const double mean = sum / m;
        const double var = std::max(0.0, sq / m - mean * mean);
        const double is = 1.0 / std::sqrt(var + kBnEps);
        invstd[c] = is;
        if (training) {
          l.run_mean[c] = (1.0 - kBnMomentum) * l.run_mean[c] + kBnMomentum * mean;
          l.run_var[c] = (1.0 - kBnMomentum) * l.run_var[c] + kBnMomentum * var;
        }
        const double use_mean = training ? mean : l.run_mean[c];
        const double use_is = training ? is : 1.0 / std::sqrt(l.run_var[c] + kBnEps);
        for (int b = 0; b < z.n; ++b) {
          const double* zp = z.plane(b, c);
          double* xp = xhat.plane(b, c);
          for (std::size_t k = 0; k < static_cast<std::size_t>(z.h) * z.w; ++k) {
            xp[k] = (zp[k] - use_mean) * use_is;
          }
        }
      }
      act = Tensor4(z.n, z.c, z.h, z.w);
      for (int c = 0; c < z.c; ++c) {
        const double g = l.gamma.value[c], be = l.beta.value[c];
        for (int b = 0; b < z.n; ++b) {
          const double* xp = xhat.plane(b, c);
          double* ap = act.plane(b, c);
          for (std::size_t k = 0; k < static_cast<std::size_t>(z.h) * z.w; ++k) {
            ap[k] = g * xp[k] + be;
          }
        }
      }
      cache.xhat.push_back(std::move(xhat));
      cache.invstd.push_back(std::move(invstd));
    } else {
      act = z;
      cache.xhat.emplace_back();
      cache.invstd.emplace_back();
    }
    cache.z.push_back(std::move(z));
    // concat(cur, relu(act))
    Tensor4 next(cur.n, cur.c + growth_, cur.h, cur.w);
    for (int b = 0; b < cur.n; ++b) {
      std::copy(cur.plane(b, 0), cur.plane(b, 0) + static_cast<std::size_t>(cur.c) * cur.h * cur.w,
                next.plane(b, 0));
      for (int g = 0; g < growth_; ++g) {
        const double* ap = act.plane(b, g);
        double* np = next.plane(b, cur.c + g);
        for (std::size_t k = 0; k < static_cast<std::size_t>(cur.h) * cur.w; ++k) {
          np[k] = ap[k] > 0.0 ? ap[k] : 0.0;
        }
      }
    }
    cache.inputs.push_back(std::move(next));
  }
  return cache.inputs.back();
}

Tensor4 DenseBlock::backward(const Cache& cache, const Tensor4& grad_out,
                             std::span<double> grad_flat) const {
  const int nlayers = layer_count();
  if (static_cast<int>(cache.inputs.size()) != nlayers + 1) {
    throw std::invalid_argument("dense block backward: stale cache");
  }
  // Flat offset of each layer's parameters.
  std::vector<std::size_t> offs(nlayers + 1, 0);
  for (int i = 0; i < nlayers; ++i) {
    const auto& l = layers_[i];
    offs[i + 1] = offs[i] + l.conv.weight.count() + l.conv.bias.count() +
                  (l.norm ? l.gamma.count() + l.beta.count() : 0);
  }
  if (grad_flat.size() != offs[nlayers]) {
    throw std::invalid_argument("dense block backward: grad buffer mismatch");
  }
  Tensor4 gcur = grad_out;
  for (int i = nlayers - 1; i >= 0; --i) {
    const auto& l = layers_[i];
    const Tensor4& cur = cache.inputs[i];
    const Tensor4& z = cache.z[i];
    // Split gcur into the pass-through part and the relu'd layer output part,
    // and push the latter through relu and (optionally) the norm.
    Tensor4 gact(z.n, z.c, z.h, z.w);
    for (int b = 0; b < z.n; ++b) {
      for (int g = 0; g < growth_; ++g) {
        const double* gp = gcur.plane(b, cur.c + g);
        double* gap = gact.plane(b, g);
        const Tensor4& pre = l.norm ? cache.xhat[i] : z;
        // relu mask from the post-norm pre-relu activation
        const double* prep = l.norm ? pre.plane(b, g) : z.plane(b, g);
        const double gamma = l.norm ? l.gamma.value[g] : 1.0;
        const double beta = l.norm ? l.beta.value[g] : 0.0;
        for (std::size_t k = 0; k < static_cast<std::size_t>(z.h) * z.w; ++k) {
          const double a = l.norm ? gamma * prep[k] + beta : prep[k];
          gap[k] = a > 0.0 ? gp[k] : 0.0;
        }
      }
    }
    Tensor4 gz;
    const std::size_t base = offs[i];
    if (l.norm) {
      const Tensor4& xhat = cache.xhat[i];
      const auto& invstd = cache.invstd[i];
      const std::size_t m = static_cast<std::size_t>(z.n) * z.h * z.w;
      std::span<double> ggamma = grad_flat.subspan(base + l.conv.weight.count() + l.conv.bias.count(), l.gamma.count());
      std::span<double> gbeta = grad_flat.subspan(base + l.conv.weight.count() + l.conv.bias.count() + l.gamma.count(), l.beta.count());
      gz = Tensor4(z.n, z.c, z.h, z.w);
      for (int c = 0; c < z.c; ++c) {
        double sum_gy = 0.0, sum_gy_xhat = 0.0;
        for (int b = 0; b < z.n; ++b) {
          const double* gp = gact.plane(b, c);
          const double* xp = xhat.plane(b, c);
          for (std::size_t k = 0; k < static_cast<std::size_t>(z.h) * z.w; ++k) {
            sum_gy += gp[k];
            sum_gy_xhat += gp[k] * xp[k];
          }
        }
        ggamma[c] += sum_gy_xhat;
        gbeta[c] += sum_gy;
        const double g = l.gamma.value[c];
        const double is = invstd[c];
        for (int b = 0; b < z.n; ++b) {
          const double* gp = gact.plane(b, c);
          const double* xp = xhat.plane(b, c);
          double* gzp = gz.plane(b, c);
          for (std::size_t k = 0; k < static_cast<std::size_t>(z.h) * z.w; ++k) {
            gzp[k] = g * is * (gp[k] - sum_gy / m - xp[k] * sum_gy_xhat / m);
          }
        }
      }
    } else {
      gz = std::move(gact);
    }
    // Conv backward into (grad wrt cur) plus parameter grads.
    Tensor4 gx(cur.n, cur.c, cur.h, cur.w);
    for (int b = 0; b < cur.n; ++b) {
      std::copy(gcur.plane(b, 0), gcur.plane(b, 0) + static_cast<std::size_t>(cur.c) * cur.h * cur.w,
                gx.plane(b, 0));
    }
    conv2d_backward(cur, l.conv, gz, &gx,
                    grad_flat.subspan(base, l.conv.weight.count()),
                    grad_flat.subspan(base + l.conv.weight.count(), l.conv.bias.count()));
    gcur = std::move(gx);
  }
  return gcur;
}

// ---------------------------------------------------------------------------
// ModelSpec

void ModelSpec::validate() const {
  if (input_channels != 3) throw std::invalid_argument("model expects 3 input channels");
  if (input_h < 8 || input_w < 8) throw std::invalid_argument("input too small");
  if (input_h % 4 != 0 || input_w % 4 != 0) {
    throw std::invalid_argument("input dims must be divisible by 4 for the downsampler");
  }
  if (num_outputs <= 0 || num_blocks < 1 || layers_per_block < 0 || growth < 1) {
    throw std::invalid_argument("invalid model spec");
  }
  if (pool_between_blocks) {
    const int div = 1 << (num_blocks - 1);
    if ((input_h / 4) % div != 0 || (input_w / 4) % div != 0) {
      throw std::invalid_argument("input dims incompatible with between-block pooling");
    }
  }
}

nlohmann::json ModelSpec::to_json() const {
  return {{"input_channels", input_channels}, {"input_h", input_h},
          {"input_w", input_w},               {"num_outputs", num_outputs},
          {"num_blocks", num_blocks},         {"layers_per_block", layers_per_block},
          {"growth", growth},                 {"pool_between_blocks", pool_between_blocks},
          {"norm_layers", norm_layers}};
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.input_channels = j.at("input_channels").get<int>();
  s.input_h = j.at("input_h").get<int>();
  s.input_w = j.at("input_w").get<int>();
  s.num_outputs = j.at("num_outputs").get<int>();
  s.num_blocks = j.at("num_blocks").get<int>();
  s.layers_per_block = j.at("layers_per_block").get<int>();
  s.growth = j.at("growth").get<int>();
  s.pool_between_blocks = j.at("pool_between_blocks").get<bool>();
  s.norm_layers = j.at("norm_layers").get<bool>();
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Model

Model::Model(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  ds1_.configure("downsample1", {spec_.input_channels, spec_.input_channels, 3, 2, 1});
  ds2_.configure("downsample2", {spec_.input_channels, spec_.input_channels, 3, 2, 1});
  gaussian_downsample_init(ds1_);
  gaussian_downsample_init(ds2_);
  int ch = spec_.input_channels;
  blocks_.reserve(spec_.num_blocks);
  for (int b = 0; b < spec_.num_blocks; ++b) {
    blocks_.emplace_back(ch, spec_.layers_per_block, spec_.growth, spec_.norm_layers,
                         "block" + std::to_string(b));
    ch = blocks_.back().out_channels();
  }
  fc_w_.resize("head.weight", {spec_.num_outputs, ch});
  fc_b_.resize("head.bias", {spec_.num_outputs});

  Rng rng(derive_seed(seed, "model_init"));
  for (auto& blk : blocks_) blk.init(rng);
  const double stddev = std::sqrt(1.0 / ch);
  for (auto& w : fc_w_.value) w = rng.normal(0.0, stddev);
  build_param_list();
}

Model::Model(const Model& other)
    : spec_(other.spec_), ds1_(other.ds1_), ds2_(other.ds2_),
      blocks_(other.blocks_), fc_w_(other.fc_w_), fc_b_(other.fc_b_) {
  build_param_list();
}

Model::Model(Model&& other) noexcept
    : spec_(std::move(other.spec_)), ds1_(std::move(other.ds1_)),
      ds2_(std::move(other.ds2_)), blocks_(std::move(other.blocks_)),
      fc_w_(std::move(other.fc_w_)), fc_b_(std::move(other.fc_b_)) {
  build_param_list();
}

Model& Model::operator=(const Model& other) {
  if (this != &other) {
    spec_ = other.spec_;
    ds1_ = other.ds1_;
    ds2_ = other.ds2_;
    blocks_ = other.blocks_;
    fc_w_ = other.fc_w_;
    fc_b_ = other.fc_b_;
    build_param_list();
  }
  return *this;
}

Model& Model::operator=(Model&& other) noexcept {
  if (this != &other) {
    spec_ = std::move(other.spec_);
    ds1_ = std::move(other.ds1_);
    ds2_ = std::move(other.ds2_);
    blocks_ = std::move(other.blocks_);
    fc_w_ = std::move(other.fc_w_);
    fc_b_ = std::move(other.fc_b_);
    build_param_list();
  }
  return *this;
}

void Model::build_param_list() {
  param_list_.clear();
  param_list_.push_back(&ds1_.weight);
  param_list_.push_back(&ds1_.bias);
  param_list_.push_back(&ds2_.weight);
  param_list_.push_back(&ds2_.bias);
  for (auto& blk : blocks_) {
    for (auto* p : blk.params()) param_list_.push_back(p);
  }
  param_list_.push_back(&fc_w_);
  param_list_.push_back(&fc_b_);
  param_offset_.assign(param_list_.size() + 1, 0);
  for (std::size_t i = 0; i < param_list_.size(); ++i) {
    param_offset_[i + 1] = param_offset_[i] + param_list_[i]->count();
  }
}

int Model::feature_count() const { return fc_w_.shape[1]; }

std::vector<ParamTensor*> Model::params() { return param_list_; }

std::vector<const ParamTensor*> Model::params() const {
  return {param_list_.begin(), param_list_.end()};
}

std::size_t Model::param_count() const { return param_offset_.back(); }

void Model::zero_grad() {
  for (auto* p : param_list_) p->zero_grad();
}

void Model::accumulate_grad(std::span<const double> grad_flat) {
  if (grad_flat.size() != param_count()) {
    throw std::invalid_argument("accumulate_grad: buffer size mismatch");
  }
  for (std::size_t i = 0; i < param_list_.size(); ++i) {
    auto& g = param_list_[i]->grad;
    const double* src = grad_flat.data() + param_offset_[i];
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += src[k];
  }
}

std::vector<std::vector<double>*> Model::state() {
  std::vector<std::vector<double>*> out;
  for (auto& blk : blocks_) {
    for (auto* s : blk.state()) out.push_back(s);
  }
  return out;
}

std::vector<const std::vector<double>*> Model::state() const {
  std::vector<const std::vector<double>*> out;
  for (const auto& blk : blocks_) {
    for (const auto* s : blk.state()) out.push_back(s);
  }
  return out;
}

Matrix Model::forward(const Tensor4& images, Cache& cache, bool training) {
  if (images.c != spec_.input_channels || images.h != spec_.input_h ||
      images.w != spec_.input_w || images.n < 1) {
    throw std::invalid_argument("model forward: input shape mismatch");
  }
  cache.input = images;
  cache.ds1_out = conv2d_forward(cache.input, ds1_);
  cache.ds2_out = conv2d_forward(cache.ds1_out, ds2_);
  cache.blocks.assign(blocks_.size(), DenseBlock::Cache{});
  cache.block_out.assign(blocks_.size(), Tensor4{});
  Tensor4 cur = cache.ds2_out;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    cache.block_out[b] = blocks_[b].forward(cur, cache.blocks[b], training);
    cur = cache.block_out[b];
    if (spec_.pool_between_blocks && b + 1 < blocks_.size()) {
      cur = avg_pool2x2_forward(cur);
    }
  }
  cache.head_h = cur.h;
  cache.head_w = cur.w;
  cache.features = global_avg_pool_forward(cur);
  const int batch = images.n;
  const int nf = feature_count();
  Matrix preds(batch, spec_.num_outputs);
  for (int s = 0; s < batch; ++s) {
    const double* f = cache.features.row(s);
    double* out = preds.row(s);
    for (int o = 0; o < spec_.num_outputs; ++o) {
      const double* wr = &fc_w_.value[static_cast<std::size_t>(o) * nf];
      double z = fc_b_.value[o];
      for (int k = 0; k < nf; ++k) z += wr[k] * f[k];
      out[o] = clamp_prob(stable_sigmoid(z));
    }
  }
  cache.preds = preds;
  return preds;
}

void Model::backward(const Cache& cache, const Matrix& grad_pred,
                     std::span<double> grad_flat) const {
  if (grad_flat.size() != param_count()) {
    throw std::invalid_argument("model backward: grad buffer mismatch");
  }
  if (grad_pred.rows != cache.preds.rows || grad_pred.cols != cache.preds.cols) {
    throw std::invalid_argument("model backward: grad_pred shape mismatch");
  }
  const int batch = grad_pred.rows;
  const int nf = feature_count();
  // sigmoid + linear head
  const std::size_t fc_w_off = param_offset_[param_list_.size() - 2];
  const std::size_t fc_b_off = param_offset_[param_list_.size() - 1];
  Matrix gfeat(batch, nf);
  for (int s = 0; s < batch; ++s) {
    const double* gp = grad_pred.row(s);
    const double* y = cache.preds.row(s);
    const double* f = cache.features.row(s);
    double* gf = gfeat.row(s);
    for (int o = 0; o < spec_.num_outputs; ++o) {
      const double gz = gp[o] * y[o] * (1.0 - y[o]);
      if (gz == 0.0) continue;
      grad_flat[fc_b_off + o] += gz;
      double* gw = grad_flat.data() + fc_w_off + static_cast<std::size_t>(o) * nf;
      const double* wr = &fc_w_.value[static_cast<std::size_t>(o) * nf];
      for (int k = 0; k < nf; ++k) {
        gw[k] += gz * f[k];
        gf[k] += gz * wr[k];
      }
    }
  }
  Tensor4 gcur = global_avg_pool_backward(gfeat, cache.head_h, cache.head_w);
  // blocks in reverse, undoing the transition pools
  std::size_t block_param_base = param_offset_[4];  // after the two downsampler layers
  std::vector<std::size_t> block_bases(blocks_.size());
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    block_bases[b] = block_param_base;
    block_param_base += blocks_[b].param_count();
  }
  for (int b = static_cast<int>(blocks_.size()) - 1; b >= 0; --b) {
    if (spec_.pool_between_blocks && b + 1 < static_cast<int>(blocks_.size())) {
      gcur = avg_pool2x2_backward(gcur, cache.block_out[b]);
    }
    gcur = blocks_[b].backward(cache.blocks[b], gcur,
                               grad_flat.subspan(block_bases[b], blocks_[b].param_count()));
  }
  // downsampler
  Tensor4 gds1(cache.ds1_out.n, cache.ds1_out.c, cache.ds1_out.h, cache.ds1_out.w);
  conv2d_backward(cache.ds1_out, ds2_, gcur, &gds1,
                  grad_flat.subspan(param_offset_[2], ds2_.weight.count()),
                  grad_flat.subspan(param_offset_[3], ds2_.bias.count()));
  conv2d_backward(cache.input, ds1_, gds1, nullptr,
                  grad_flat.subspan(param_offset_[0], ds1_.weight.count()),
                  grad_flat.subspan(param_offset_[1], ds1_.bias.count()));
}

}  // namespace cxr
