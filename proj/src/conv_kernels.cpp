// SPDX-License-Identifier: Apache-2.0
#include "conv_kernels.hpp"

#include <cstring>

#include "raterbayes/error.hpp"

namespace raterbayes::kernels {

namespace {

// Eight doubles; lowered to whatever vector width the target offers.
typedef double v8d __attribute__((vector_size(64)));
constexpr std::size_t kLanes = 8;

inline v8d load(const double* p) {
  v8d v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void store(double* p, v8d v) { std::memcpy(p, &v, sizeof v); }

inline double hsum(v8d v) {
  double s = 0.0;
  for (std::size_t i = 0; i < kLanes; ++i) s += v[i];
  return s;
}

struct Plane {
  const double* xp;
  std::size_t cin, hp, wp;
};

// CB output channels x VB*8 output columns of one output row.
template <std::size_t k, std::size_t CB, std::size_t VB>
void forward_tile(const Plane& in, const double* w, const double* bias, std::size_t co0,
                  double* y, std::size_t ho, std::size_t wo, std::size_t oy, std::size_t ox0) {
  const std::size_t cs = in.cin * k * k;
  v8d acc[CB][VB];
  for (std::size_t c = 0; c < CB; ++c) {
    const double b = bias ? bias[co0 + c] : 0.0;
    for (std::size_t v = 0; v < VB; ++v) acc[c][v] = v8d{} + b;
  }
  for (std::size_t ci = 0; ci < in.cin; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      const double* row = in.xp + (ci * in.hp + oy + ky) * in.wp + ox0;
      const double* wk = w + ((co0 * in.cin + ci) * k + ky) * k;
      for (std::size_t kx = 0; kx < k; ++kx) {
        v8d s[VB];
        for (std::size_t v = 0; v < VB; ++v) s[v] = load(row + kx + kLanes * v);
        for (std::size_t c = 0; c < CB; ++c) {
          const double wv = wk[c * cs + kx];
          for (std::size_t v = 0; v < VB; ++v) acc[c][v] += wv * s[v];
        }
      }
    }
  }
  for (std::size_t c = 0; c < CB; ++c) {
    double* dst = y + ((co0 + c) * ho + oy) * wo + ox0;
    for (std::size_t v = 0; v < VB; ++v) store(dst + kLanes * v, acc[c][v]);
  }
}

void forward_scalar(const Plane& in, const double* w, const double* bias, std::size_t k,
                    std::size_t co, double* y, std::size_t ho, std::size_t wo, std::size_t oy,
                    std::size_t ox) {
  double acc = bias ? bias[co] : 0.0;
  for (std::size_t ci = 0; ci < in.cin; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      const double* row = in.xp + (ci * in.hp + oy + ky) * in.wp + ox;
      const double* wk = w + ((co * in.cin + ci) * k + ky) * k;
      for (std::size_t kx = 0; kx < k; ++kx) acc += wk[kx] * row[kx];
    }
  }
  y[(co * ho + oy) * wo + ox] = acc;
}

template <std::size_t k, std::size_t CB>
void forward_rows(const Plane& in, const double* w, const double* bias, std::size_t co0,
                  double* y, std::size_t ho, std::size_t wo) {
  for (std::size_t oy = 0; oy < ho; ++oy) {
    std::size_t ox = 0;
    for (; ox + 2 * kLanes <= wo; ox += 2 * kLanes) {
      forward_tile<k, CB, 2>(in, w, bias, co0, y, ho, wo, oy, ox);
    }
    if (ox + kLanes <= wo) {
      forward_tile<k, CB, 1>(in, w, bias, co0, y, ho, wo, oy, ox);
      ox += kLanes;
    }
    for (; ox < wo; ++ox) {
      for (std::size_t c = 0; c < CB; ++c) {
        forward_scalar(in, w, bias, k, co0 + c, y, ho, wo, oy, ox);
      }
    }
  }
}

template <std::size_t k>
void forward_all(const Plane& in, const double* w, const double* bias, std::size_t cout,
                 double* y, std::size_t ho, std::size_t wo) {
  std::size_t co = 0;
  for (; co + 4 <= cout; co += 4) forward_rows<k, 4>(in, w, bias, co, y, ho, wo);
  for (; co < cout; ++co) forward_rows<k, 1>(in, w, bias, co, y, ho, wo);
}

template <std::size_t K, std::size_t CB>
void weight_grad_block(const Plane& in, const double* dy, std::size_t co0, std::size_t ho,
                       std::size_t wo, double* dw) {
  constexpr std::size_t KK = K * K;
  for (std::size_t ci = 0; ci < in.cin; ++ci) {
    v8d acc[CB][KK];
    double tail[CB][KK];
    for (std::size_t c = 0; c < CB; ++c) {
      for (std::size_t t = 0; t < KK; ++t) {
        acc[c][t] = v8d{};
        tail[c][t] = 0.0;
      }
    }
    for (std::size_t oy = 0; oy < ho; ++oy) {
      const double* drow[CB];
      for (std::size_t c = 0; c < CB; ++c) drow[c] = dy + ((co0 + c) * ho + oy) * wo;
      std::size_t ox = 0;
      for (; ox + kLanes <= wo; ox += kLanes) {
        v8d d[CB];
        for (std::size_t c = 0; c < CB; ++c) d[c] = load(drow[c] + ox);
        for (std::size_t ky = 0; ky < K; ++ky) {
          const double* row = in.xp + (ci * in.hp + oy + ky) * in.wp + ox;
          for (std::size_t kx = 0; kx < K; ++kx) {
            const v8d s = load(row + kx);
            for (std::size_t c = 0; c < CB; ++c) acc[c][ky * K + kx] += d[c] * s;
          }
        }
      }
      for (; ox < wo; ++ox) {
        for (std::size_t ky = 0; ky < K; ++ky) {
          const double* row = in.xp + (ci * in.hp + oy + ky) * in.wp + ox;
          for (std::size_t kx = 0; kx < K; ++kx) {
            for (std::size_t c = 0; c < CB; ++c) tail[c][ky * K + kx] += drow[c][ox] * row[kx];
          }
        }
      }
    }
    for (std::size_t c = 0; c < CB; ++c) {
      double* dst = dw + ((co0 + c) * in.cin + ci) * KK;
      for (std::size_t t = 0; t < KK; ++t) dst[t] += hsum(acc[c][t]) + tail[c][t];
    }
  }
}

template <std::size_t K>
void weight_grad(const Plane& in, const double* dy, std::size_t cout, std::size_t ho,
                 std::size_t wo, double* dw) {
  std::size_t co = 0;
  for (; co + 2 <= cout; co += 2) weight_grad_block<K, 2>(in, dy, co, ho, wo, dw);
  for (; co < cout; ++co) weight_grad_block<K, 1>(in, dy, co, ho, wo, dw);
}

} // namespace

void conv_forward(const double* xp, std::size_t cin, std::size_t hp, std::size_t wp,
                  const double* w, const double* bias, std::size_t cout, std::size_t k,
                  double* y, std::size_t ho, std::size_t wo) {
  const Plane in{xp, cin, hp, wp};
  switch (k) {
    case 1: forward_all<1>(in, w, bias, cout, y, ho, wo); break;
    case 3: forward_all<3>(in, w, bias, cout, y, ho, wo); break;
    default: throw UsageError("conv_forward: unsupported kernel size " + std::to_string(k));
  }
}

void conv_weight_grad(const double* xp, std::size_t cin, std::size_t hp, std::size_t wp,
                      const double* dy, std::size_t cout, std::size_t k, std::size_t ho,
                      std::size_t wo, double* dw) {
  const Plane in{xp, cin, hp, wp};
  switch (k) {
    case 1: weight_grad<1>(in, dy, cout, ho, wo, dw); break;
    case 3: weight_grad<3>(in, dy, cout, ho, wo, dw); break;
    default: throw UsageError("conv_weight_grad: unsupported kernel size " + std::to_string(k));
  }
}

} // namespace raterbayes::kernels
