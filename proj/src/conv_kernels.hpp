// SPDX-License-Identifier: Apache-2.0
//
// Direct stride-1 convolution kernels over zero-padded planes, for square
// kernels of size 1 or 3. Internal to the tensor implementation.
#pragma once

#include <cstddef>

namespace raterbayes::kernels {

/// y[co][oy][ox] = bias[co] + sum_{ci,ky,kx} w[co][ci][ky][kx] * xp[ci][oy+ky][ox+kx]
/// xp is one padded sample [cin][hp][wp]; y is [cout][ho][wo] and is
/// overwritten. bias may be null (treated as zero).
void conv_forward(const double* xp, std::size_t cin, std::size_t hp, std::size_t wp,
                  const double* w, const double* bias, std::size_t cout, std::size_t k,
                  double* y, std::size_t ho, std::size_t wo);

/// dw[co][ci][ky][kx] += sum_{oy,ox} dy[co][oy][ox] * xp[ci][oy+ky][ox+kx]
void conv_weight_grad(const double* xp, std::size_t cin, std::size_t hp, std::size_t wp,
                      const double* dy, std::size_t cout, std::size_t k, std::size_t ho,
                      std::size_t wo, double* dw);

} // namespace raterbayes::kernels
