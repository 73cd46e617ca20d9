// SPDX-License-Identifier: Apache-2.0
#include "raterbayes/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Core>

#include "conv_kernels.hpp"
#include "raterbayes/error.hpp"

namespace raterbayes {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

// Probabilities below this are treated as this value inside the log.
constexpr double kProbFloor = 1e-300;

void require_rank(const Tensor& t, std::size_t rank, std::string_view op, std::string_view what) {
  if (!t.defined()) throw UsageError(std::string(op) + ": undefined " + std::string(what));
  if (t.ndim() != rank) {
    throw DimensionError(std::string(op) + ": " + std::string(what) + " must have rank " +
                         std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

void accumulate(Tensor& dst, std::span<const double> src) {
  auto g = dst.grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, pad, stride, ho, wo;
  std::size_t patch() const { return cin * kh * kw; }
  std::size_t out_pixels() const { return ho * wo; }
};

// Unfold one sample [cin, h, w] into [cin*kh*kw, ho*wo].
void im2col(const ConvGeometry& g, const double* in, double* col) {
  const auto opix = g.out_pixels();
  for (std::size_t c = 0; c < g.cin; ++c) {
    const double* plane = in + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = col + ((c * g.kh + ky) * g.kw + kx) * opix;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.pad);
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w))
                          ? 0.0
                          : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into [cin, h, w].
void col2im(const ConvGeometry& g, const double* col, double* in) {
  const auto opix = g.out_pixels();
  for (std::size_t c = 0; c < g.cin; ++c) {
    double* plane = in + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row = col + ((c * g.kh + ky) * g.kw + kx) * opix;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * g.w;
          const double* src = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) {
              dst[static_cast<std::size_t>(ix)] += src[ox];
            }
          }
        }
      }
    }
  }
}

// Copy [c, h, w] into a zero-filled [c, h+2p, w+2p] buffer.
void pad_planes(const double* src, std::size_t c, std::size_t h, std::size_t w, std::size_t p,
                std::vector<double>& dst) {
  const std::size_t hp = h + 2 * p, wp = w + 2 * p;
  dst.assign(c * hp * wp, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      std::copy_n(src + (ch * h + y) * w, w, dst.data() + (ch * hp + y + p) * wp + p);
    }
  }
}

// Stride-1 square kernels take the vectorised direct path.
bool use_direct_kernels(const ConvGeometry& g) {
  return g.stride == 1 && g.kh == g.kw && (g.kh == 1 || g.kh == 3) && g.pad < g.kh;
}

Tensor conv2d_direct(Graph& g, const Tensor& input, const Tensor& kernel, const Tensor& bias,
                     const ConvGeometry& geo) {
  const std::size_t k = geo.kh;
  const std::size_t in_sz = geo.cin * geo.h * geo.w;
  const std::size_t out_sz = geo.cout * geo.ho * geo.wo;
  const std::size_t hp = geo.h + 2 * geo.pad, wp = geo.w + 2 * geo.pad;
  Tensor out = Tensor::zeros({geo.n, geo.cout, geo.ho, geo.wo});
  std::vector<double> padded;
  for (std::size_t n = 0; n < geo.n; ++n) {
    const double* sample = input.data().data() + n * in_sz;
    if (geo.pad > 0) pad_planes(sample, geo.cin, geo.h, geo.w, geo.pad, padded);
    kernels::conv_forward(geo.pad > 0 ? padded.data() : sample, geo.cin, hp, wp,
                          kernel.data().data(), bias.data().data(), geo.cout, k,
                          out.data().data() + n * out_sz, geo.ho, geo.wo);
  }
  require_finite(out.data(), "conv2d");
  if (!g.tracks({&input, &kernel, &bias})) return out;

  g.record("conv2d", out, [input = input, kernel = kernel, bias = bias, out, geo]() mutable {
    const std::size_t k = geo.kh;
    const std::size_t in_sz = geo.cin * geo.h * geo.w;
    const std::size_t opix = geo.ho * geo.wo;
    const std::size_t out_sz = geo.cout * opix;
    const std::size_t hp = geo.h + 2 * geo.pad, wp = geo.w + 2 * geo.pad;
    const double* dy_all = out.grad().data();

    // dX is a stride-1 convolution of dY, padded by k-1-p, with the kernel
    // transposed over channels and flipped spatially.
    const std::size_t q = k - 1 - geo.pad;
    std::vector<double> wt;
    if (input.requires_grad()) {
      wt.resize(kernel.numel());
      const double* w = kernel.data().data();
      for (std::size_t co = 0; co < geo.cout; ++co) {
        for (std::size_t ci = 0; ci < geo.cin; ++ci) {
          for (std::size_t t = 0; t < k * k; ++t) {
            wt[(ci * geo.cout + co) * k * k + (k * k - 1 - t)] = w[(co * geo.cin + ci) * k * k + t];
          }
        }
      }
    }
    std::vector<double> padded, dx_tmp(input.requires_grad() ? in_sz : 0);
    for (std::size_t n = 0; n < geo.n; ++n) {
      const double* dy = dy_all + n * out_sz;
      if (kernel.requires_grad()) {
        const double* sample = input.data().data() + n * in_sz;
        if (geo.pad > 0) pad_planes(sample, geo.cin, geo.h, geo.w, geo.pad, padded);
        kernels::conv_weight_grad(geo.pad > 0 ? padded.data() : sample, geo.cin, hp, wp, dy,
                                  geo.cout, k, geo.ho, geo.wo, kernel.grad().data());
      }
      if (bias.requires_grad()) {
        double* db = bias.grad().data();
        for (std::size_t co = 0; co < geo.cout; ++co) {
          const double* row = dy + co * opix;
          db[co] += std::accumulate(row, row + opix, 0.0);
        }
      }
      if (input.requires_grad()) {
        if (q > 0) pad_planes(dy, geo.cout, geo.ho, geo.wo, q, padded);
        kernels::conv_forward(q > 0 ? padded.data() : dy, geo.cout, geo.ho + 2 * q,
                              geo.wo + 2 * q, wt.data(), nullptr, geo.cin, k, dx_tmp.data(),
                              geo.h, geo.w);
        double* dx = input.grad().data() + n * in_sz;
        for (std::size_t i = 0; i < in_sz; ++i) dx[i] += dx_tmp[i];
      }
    }
  });
  return out;
}

} // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : s_(std::make_shared<Storage>()) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("Tensor: shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  s_->shape = std::move(shape);
  s_->data = std::move(data);
  set_requires_grad(requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!s_) throw UsageError("Tensor: access to undefined tensor");
  return s_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& sh = shape();
  if (axis >= sh.size()) throw DimensionError("Tensor::dim: axis out of range");
  return sh[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<double> Tensor::data() {
  shape();
  return s_->data;
}

std::span<const double> Tensor::data() const {
  shape();
  return s_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("Tensor::item: tensor is not a scalar");
  return s_->data[0];
}

void Tensor::set_requires_grad(bool flag) {
  shape();
  s_->requires_grad = flag;
  if (flag) {
    s_->grad.assign(s_->data.size(), 0.0);
  } else {
    s_->grad.clear();
    s_->grad.shrink_to_fit();
  }
}

std::span<double> Tensor::grad() {
  if (!requires_grad()) throw UsageError("Tensor::grad: tensor does not require grad");
  return s_->grad;
}

std::span<const double> Tensor::grad() const {
  if (!requires_grad()) throw UsageError("Tensor::grad: tensor does not require grad");
  return s_->grad;
}

void Tensor::zero_grad() {
  if (requires_grad()) std::fill(s_->grad.begin(), s_->grad.end(), 0.0);
}

Tensor Tensor::clone() const { return Tensor(shape(), s_->data, false); }

// ----------------------------------------------------------------- Graph

bool Graph::tracks(std::initializer_list<const Tensor*> inputs) const {
  if (!recording()) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->defined() && t->requires_grad(); });
}

void Graph::record(std::string_view op, Tensor output, std::function<void()> backward) {
  if (!recording()) throw UsageError("Graph::record on an inference graph");
  if (backward_done_) throw UsageError("Graph::record after backward; call reset() first");
  output.set_requires_grad(true);
  nodes_.push_back({std::string(op), std::move(output), std::move(backward)});
}

void Graph::backward(Tensor& loss) {
  if (backward_done_) throw UsageError("Graph::backward called twice without reset");
  if (loss.numel() != 1) {
    throw UsageError("Graph::backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw UsageError("Graph::backward: loss does not depend on any tracked tensor");
  }
  backward_done_ = true;
  loss.grad()[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
}

void Graph::reset() {
  nodes_.clear();
  backward_done_ = false;
}

void require_finite(std::span<const double> values, std::string_view op) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value produced");
  }
}

// ------------------------------------------------------------ operations

Tensor conv2d(Graph& g, const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::size_t padding, std::size_t stride) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  require_rank(bias, 1, "conv2d", "bias");
  if (stride == 0) throw ConfigError("conv2d: stride must be >= 1");
  ConvGeometry geo{input.dim(0), input.dim(1), input.dim(2), input.dim(3),
                   kernel.dim(0), kernel.dim(2), kernel.dim(3), padding, stride, 0, 0};
  if (kernel.dim(1) != geo.cin) {
    throw DimensionError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                         " input channels, input has " + std::to_string(geo.cin));
  }
  if (bias.dim(0) != geo.cout) throw DimensionError("conv2d: bias length != output channels");
  const std::size_t ph = geo.h + 2 * padding;
  const std::size_t pw = geo.w + 2 * padding;
  if (geo.kh > ph || geo.kw > pw) throw DimensionError("conv2d: kernel larger than padded input");
  if ((ph - geo.kh) % stride != 0 || (pw - geo.kw) % stride != 0) {
    throw ConfigError("conv2d: output extent is not integral for stride " +
                      std::to_string(stride));
  }
  geo.ho = (ph - geo.kh) / stride + 1;
  geo.wo = (pw - geo.kw) / stride + 1;

  if (use_direct_kernels(geo)) return conv2d_direct(g, input, kernel, bias, geo);

  // General case: unfold and multiply.
  const auto opix = geo.out_pixels();
  const auto patch = geo.patch();
  Tensor out = Tensor::zeros({geo.n, geo.cout, geo.ho, geo.wo});

  ConstMatMap wmat(kernel.data().data(), static_cast<Eigen::Index>(geo.cout),
                   static_cast<Eigen::Index>(patch));
  Eigen::Map<const Eigen::VectorXd> bvec(bias.data().data(),
                                         static_cast<Eigen::Index>(geo.cout));
  std::vector<double> col(patch * opix);
  const double* in = input.data().data();
  double* o = out.data().data();
  for (std::size_t n = 0; n < geo.n; ++n) {
    const double* sample = in + n * geo.cin * geo.h * geo.w;
    im2col(geo, sample, col.data());
    ConstMatMap cmat(col.data(), static_cast<Eigen::Index>(patch),
                     static_cast<Eigen::Index>(opix));
    MatMap y(o + n * geo.cout * opix, static_cast<Eigen::Index>(geo.cout),
             static_cast<Eigen::Index>(opix));
    y.noalias() = wmat * cmat;
    y.colwise() += bvec;
  }
  require_finite(out.data(), "conv2d");

  if (g.tracks({&input, &kernel, &bias})) {
    g.record("conv2d", out, [input = input, kernel = kernel, bias = bias, out, geo]() mutable {
      const auto opix = geo.out_pixels();
      const auto patch = geo.patch();
      const double* dy_all = out.grad().data();
      const double* in = input.data().data();
      ConstMatMap wmat(kernel.data().data(), static_cast<Eigen::Index>(geo.cout),
                       static_cast<Eigen::Index>(patch));
      std::vector<double> col(patch * opix);
      std::vector<double> dcol(patch * opix);
      for (std::size_t n = 0; n < geo.n; ++n) {
        ConstMatMap dy(dy_all + n * geo.cout * opix, static_cast<Eigen::Index>(geo.cout),
                       static_cast<Eigen::Index>(opix));
        const double* sample = in + n * geo.cin * geo.h * geo.w;
        if (kernel.requires_grad()) {
          im2col(geo, sample, col.data());
          ConstMatMap cmat(col.data(), static_cast<Eigen::Index>(patch),
                           static_cast<Eigen::Index>(opix));
          MatMap dw(kernel.grad().data(), static_cast<Eigen::Index>(geo.cout),
                    static_cast<Eigen::Index>(patch));
          dw.noalias() += dy * cmat.transpose();
        }
        if (bias.requires_grad()) {
          Eigen::Map<Eigen::VectorXd> db(bias.grad().data(), static_cast<Eigen::Index>(geo.cout));
          db += dy.rowwise().sum();
        }
        if (input.requires_grad()) {
          double* dx = input.grad().data() + n * geo.cin * geo.h * geo.w;
          MatMap dc(dcol.data(), static_cast<Eigen::Index>(patch),
                    static_cast<Eigen::Index>(opix));
          dc.noalias() = wmat.transpose() * dy;
          col2im(geo, dcol.data(), dx);
        }
      }
    });
  }
  return out;
}

Tensor max_pool2d(Graph& g, const Tensor& input, std::size_t window) {
  require_rank(input, 4, "max_pool2d", "input");
  if (window == 0) throw ConfigError("max_pool2d: window must be >= 1");
  const auto n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % window != 0 || w % window != 0) {
    throw DimensionError("max_pool2d: extents " + shape_str(input.shape()) +
                         " not divisible by window " + std::to_string(window));
  }
  const auto ho = h / window, wo = w / window;
  Tensor out = Tensor::zeros({n, c, ho, wo});
  std::vector<std::size_t> argmax(out.numel());
  const double* in = input.data().data();
  double* o = out.data().data();
  std::size_t k = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* p = in + plane * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox, ++k) {
        // Scan in row-major order; strict '>' keeps the first maximum.
        std::size_t best = (oy * window) * w + ox * window;
        for (std::size_t dy = 0; dy < window; ++dy) {
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t idx = (oy * window + dy) * w + ox * window + dx;
            if (p[idx] > p[best]) best = idx;
          }
        }
        o[k] = p[best];
        argmax[k] = plane * h * w + best;
      }
    }
  }
  require_finite(out.data(), "max_pool2d");
  if (g.tracks({&input})) {
    g.record("max_pool2d", out, [input = input, out, argmax = std::move(argmax)]() mutable {
      auto dx = input.grad();
      auto dy = out.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax[i]] += dy[i];
    });
  }
  return out;
}

Tensor upsample_nearest(Graph& g, const Tensor& input, std::size_t factor) {
  require_rank(input, 4, "upsample_nearest", "input");
  if (factor == 0) throw ConfigError("upsample_nearest: factor must be >= 1");
  const auto n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const auto ho = h * factor, wo = w * factor;
  Tensor out = Tensor::zeros({n, c, ho, wo});
  const double* in = input.data().data();
  double* o = out.data().data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    for (std::size_t y = 0; y < ho; ++y) {
      const double* src = in + plane * h * w + (y / factor) * w;
      double* dst = o + plane * ho * wo + y * wo;
      for (std::size_t x = 0; x < wo; ++x) dst[x] = src[x / factor];
    }
  }
  if (g.tracks({&input})) {
    g.record("upsample_nearest", out, [input = input, out, n, c, h, w, factor]() mutable {
      const auto ho = h * factor, wo = w * factor;
      double* dx = input.grad().data();
      const double* dy = out.grad().data();
      for (std::size_t plane = 0; plane < n * c; ++plane) {
        for (std::size_t y = 0; y < ho; ++y) {
          double* dst = dx + plane * h * w + (y / factor) * w;
          const double* src = dy + plane * ho * wo + y * wo;
          for (std::size_t x = 0; x < wo; ++x) dst[x / factor] += src[x];
        }
      }
    });
  }
  return out;
}

Tensor concat_channels(Graph& g, const Tensor& a, const Tensor& b) {
  require_rank(a, 4, "concat_channels", "a");
  require_rank(b, 4, "concat_channels", "b");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw DimensionError("concat_channels: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const auto n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor out = Tensor::zeros({n, ca + cb, a.dim(2), a.dim(3)});
  double* o = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data().data() + i * ca * hw, ca * hw, o + i * (ca + cb) * hw);
    std::copy_n(b.data().data() + i * cb * hw, cb * hw, o + i * (ca + cb) * hw + ca * hw);
  }
  if (g.tracks({&a, &b})) {
    g.record("concat_channels", out, [a = a, b = b, out, n, ca, cb, hw]() mutable {
      const double* dy = out.grad().data();
      for (std::size_t i = 0; i < n; ++i) {
        const double* src = dy + i * (ca + cb) * hw;
        if (a.requires_grad()) {
          double* da = a.grad().data() + i * ca * hw;
          for (std::size_t k = 0; k < ca * hw; ++k) da[k] += src[k];
        }
        if (b.requires_grad()) {
          double* db = b.grad().data() + i * cb * hw;
          for (std::size_t k = 0; k < cb * hw; ++k) db[k] += src[ca * hw + k];
        }
      }
    });
  }
  return out;
}

Tensor relu(Graph& g, const Tensor& input) {
  Tensor out = Tensor::zeros(input.shape());
  auto x = input.data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  require_finite(y, "relu");
  if (g.tracks({&input})) {
    g.record("relu", out, [input = input, out]() mutable {
      auto dx = input.grad();
      auto dy = out.grad();
      auto x = input.data();
      for (std::size_t i = 0; i < dx.size(); ++i) {
        if (x[i] > 0.0) dx[i] += dy[i];
      }
    });
  }
  return out;
}

Tensor softmax_channels(Graph& g, const Tensor& logits) {
  require_rank(logits, 4, "softmax_channels", "logits");
  require_finite(logits.data(), "softmax_channels");
  const auto n = logits.dim(0), k = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  if (k < 2) throw DimensionError("softmax_channels: need at least 2 classes");
  Tensor out = Tensor::zeros(logits.shape());
  const double* x = logits.data().data();
  double* y = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* xs = x + i * k * hw;
    double* ys = y + i * k * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      double mx = xs[p];
      for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, xs[c * hw + p]);
      double total = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        ys[c * hw + p] = std::exp(xs[c * hw + p] - mx);
        total += ys[c * hw + p];
      }
      for (std::size_t c = 0; c < k; ++c) ys[c * hw + p] /= total;
    }
  }
  if (g.tracks({&logits})) {
    g.record("softmax_channels", out, [logits = logits, out, n, k, hw]() mutable {
      const double* y = out.data().data();
      const double* dy = out.grad().data();
      double* dx = logits.grad().data();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t base = i * k * hw;
        for (std::size_t p = 0; p < hw; ++p) {
          double dot = 0.0;
          for (std::size_t c = 0; c < k; ++c) dot += y[base + c * hw + p] * dy[base + c * hw + p];
          for (std::size_t c = 0; c < k; ++c) {
            const auto idx = base + c * hw + p;
            dx[idx] += y[idx] * (dy[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor cross_entropy(Graph& g, const Tensor& probs, const LabelMap& target) {
  require_rank(probs, 4, "cross_entropy", "probs");
  const auto n = probs.dim(0), k = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
  if (target.n != n || target.h != h || target.w != w || target.labels.size() != n * h * w) {
    throw DimensionError("cross_entropy: target shape does not match " + shape_str(probs.shape()));
  }
  const auto hw = h * w;
  for (auto label : target.labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw DataError("cross_entropy: class id " + std::to_string(label) + " outside [0, " +
                      std::to_string(k) + ")");
    }
  }
  const double* p = probs.data().data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t q = 0; q < hw; ++q) {
      const auto c = static_cast<std::size_t>(target.labels[i * hw + q]);
      total -= std::log(std::max(p[(i * k + c) * hw + q], kProbFloor));
    }
  }
  const double count = static_cast<double>(n * hw);
  Tensor out = Tensor::scalar(total / count);
  require_finite(out.data(), "cross_entropy");
  if (g.tracks({&probs})) {
    g.record("cross_entropy", out, [probs = probs, out, target, n, k, hw, count]() mutable {
      const double upstream = out.grad()[0];
      const double* p = probs.data().data();
      double* dp = probs.grad().data();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t q = 0; q < hw; ++q) {
          const auto c = static_cast<std::size_t>(target.labels[i * hw + q]);
          const auto idx = (i * k + c) * hw + q;
          dp[idx] -= upstream / (count * std::max(p[idx], kProbFloor));
        }
      }
    });
  }
  return out;
}

Tensor dropout(Graph& g, const Tensor& input, double rate, Rng& rng, bool active) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!active || rate == 0.0) return input;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(input.numel());
  for (auto& m : mask) m = rng.bernoulli(rate) ? 0.0 : keep_scale;
  Tensor out = Tensor::zeros(input.shape());
  auto x = input.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * mask[i];
  if (g.tracks({&input})) {
    g.record("dropout", out, [input = input, out, mask = std::move(mask)]() mutable {
      auto dx = input.grad();
      auto dy = out.grad();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * mask[i];
    });
  }
  return out;
}

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros(a.shape());
  auto x = a.data(), y = b.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  require_finite(o, "add");
  if (g.tracks({&a, &b})) {
    g.record("add", out, [a = a, b = b, out]() mutable {
      if (a.requires_grad()) accumulate(a, out.grad());
      if (b.requires_grad()) accumulate(b, out.grad());
    });
  }
  return out;
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros(a.shape());
  auto x = a.data(), y = b.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  require_finite(o, "mul");
  if (g.tracks({&a, &b})) {
    g.record("mul", out, [a = a, b = b, out]() mutable {
      auto dy = out.grad();
      if (a.requires_grad()) {
        auto da = a.grad();
        auto y = b.data();
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * y[i];
      }
      if (b.requires_grad()) {
        auto db = b.grad();
        auto x = a.data();
        for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[i] * x[i];
      }
    });
  }
  return out;
}

Tensor scale(Graph& g, const Tensor& a, double factor) {
  Tensor out = Tensor::zeros(a.shape());
  auto x = a.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
  require_finite(o, "scale");
  if (g.tracks({&a})) {
    g.record("scale", out, [a = a, out, factor]() mutable {
      auto da = a.grad();
      auto dy = out.grad();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * factor;
    });
  }
  return out;
}

Tensor sum(Graph& g, const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  Tensor out = Tensor::scalar(total);
  require_finite(out.data(), "sum");
  if (g.tracks({&a})) {
    g.record("sum", out, [a = a, out]() mutable {
      const double up = out.grad()[0];
      for (auto& d : a.grad()) d += up;
    });
  }
  return out;
}

Tensor mean(Graph& g, const Tensor& a) {
  return scale(g, sum(g, a), 1.0 / static_cast<double>(a.numel()));
}

} // namespace raterbayes
