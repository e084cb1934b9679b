// Copyright 2026 The patchforge Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstddef>
#include <utility>
#include <vector>

#include "patchforge/core/parallel.hpp"
#include "patchforge/core/reduce.hpp"
#include "patchforge/core/tensor.hpp"

namespace patchforge {

/// Geometry of a 2-D (possibly atrous) convolution. Taps sit at offsets
/// 0, d, 2d, ... where d is the dilation rate; d = 1 is ordinary convolution.
struct ConvSpec {
  Dim in_channels = 1;
  Dim out_channels = 1;
  Dim kernel_h = 3, kernel_w = 3;
  Dim stride_h = 1, stride_w = 1;
  Dim dilation = 1;
  Dim pad_top = 0, pad_bottom = 0, pad_left = 0, pad_right = 0;
  bool bias = true;

  /// Stride 1, zero padding that preserves spatial size (odd kernels).
  static ConvSpec same(Dim in, Dim out, Dim kernel, Dim dilation = 1, bool bias = true) {
    ConvSpec s;
    s.in_channels = in;
    s.out_channels = out;
    s.kernel_h = s.kernel_w = kernel;
    s.dilation = dilation;
    const Dim p = dilation * (kernel - 1) / 2;
    s.pad_top = s.pad_bottom = s.pad_left = s.pad_right = p;
    s.bias = bias;
    return s;
  }

  Dim extent_h() const { return dilation * (kernel_h - 1) + 1; }
  Dim extent_w() const { return dilation * (kernel_w - 1) + 1; }

  Dim out_h(Dim in_h) const { return (in_h + pad_top + pad_bottom - extent_h()) / stride_h + 1; }
  Dim out_w(Dim in_w) const { return (in_w + pad_left + pad_right - extent_w()) / stride_w + 1; }

  Shape weight_shape() const { return {out_channels, in_channels, kernel_h, kernel_w}; }

  void validate() const {
    if (in_channels < 1 || out_channels < 1 || kernel_h < 1 || kernel_w < 1 || stride_h < 1 ||
        stride_w < 1 || dilation < 1)
      throw InvalidShape("conv spec: channels, kernel, stride and dilation must be >= 1");
    if (pad_top < 0 || pad_bottom < 0 || pad_left < 0 || pad_right < 0)
      throw InvalidShape("conv spec: negative padding");
  }
};

/// Effective kernel extent (height, width) = dilation * (k - 1) + 1.
inline std::pair<Dim, Dim> receptive_extent(const ConvSpec& spec) {
  return {spec.extent_h(), spec.extent_w()};
}

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
  ConvSpec spec;
  Dim batch, in_h, in_w, out_h, out_w;

  std::size_t patch_rows() const {
    return static_cast<std::size_t>(spec.in_channels * spec.kernel_h * spec.kernel_w);
  }
  std::size_t out_pixels() const { return static_cast<std::size_t>(out_h * out_w); }
  std::size_t in_plane() const { return static_cast<std::size_t>(in_h * in_w); }
  bool pointwise() const {
    return spec.kernel_h == 1 && spec.kernel_w == 1 && spec.stride_h == 1 && spec.stride_w == 1 &&
           spec.pad_top == 0 && spec.pad_bottom == 0 && spec.pad_left == 0 && spec.pad_right == 0;
  }
};

// Y (OC x P) = W (OC x K) . X (K x P), every output accumulated from zero in
// ascending k. Inserting all-zero taps therefore never changes a result, and
// the value does not depend on OC, P or the tile an element lands in. A
// library GEMM splits k differently depending on shape, which breaks both.
template <class T, std::size_t OT, std::size_t PT>
void ordered_gemm_tile(const T* w, const T* x, T* y, std::size_t o0, std::size_t on, std::size_t p0,
                       std::size_t pn, std::size_t K, std::size_t P) {
  T acc[OT][PT] = {};
  if (on == OT && pn == PT) {
    for (std::size_t k = 0; k < K; ++k) {
      const T* xk = x + k * P + p0;
      for (std::size_t o = 0; o < OT; ++o) {
        const T wk = w[(o0 + o) * K + k];
        for (std::size_t p = 0; p < PT; ++p) acc[o][p] += wk * xk[p];
      }
    }
  } else {
    for (std::size_t k = 0; k < K; ++k) {
      const T* xk = x + k * P + p0;
      for (std::size_t o = 0; o < on; ++o) {
        const T wk = w[(o0 + o) * K + k];
        for (std::size_t p = 0; p < pn; ++p) acc[o][p] += wk * xk[p];
      }
    }
  }
  for (std::size_t o = 0; o < on; ++o) std::copy(acc[o], acc[o] + pn, y + (o0 + o) * P + p0);
}

template <class T>
void ordered_gemm(const T* w, const T* x, T* y, std::size_t OC, std::size_t K, std::size_t P) {
  constexpr std::size_t OT = 4, PT = 256 / sizeof(T);
  for (std::size_t p0 = 0; p0 < P; p0 += PT)
    for (std::size_t o0 = 0; o0 < OC; o0 += OT)
      ordered_gemm_tile<T, OT, PT>(w, x, y, o0, std::min(OT, OC - o0), p0, std::min(PT, P - p0), K, P);
}

// Column matrix (C*KH*KW) x (OH*OW) for one sample.
template <class T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  const auto& s = g.spec;
  const std::size_t P = g.out_pixels();
  for (Dim c = 0; c < s.in_channels; ++c)
    for (Dim i = 0; i < s.kernel_h; ++i)
      for (Dim j = 0; j < s.kernel_w; ++j) {
        T* row = col + ((c * s.kernel_h + i) * s.kernel_w + j) * P;
        const T* plane = x + c * g.in_plane();
        for (Dim oh = 0; oh < g.out_h; ++oh) {
          const Dim ih = oh * s.stride_h + i * s.dilation - s.pad_top;
          T* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= g.in_h) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = plane + ih * g.in_w;
          for (Dim ow = 0; ow < g.out_w; ++ow) {
            const Dim iw = ow * s.stride_w + j * s.dilation - s.pad_left;
            dst[ow] = (iw >= 0 && iw < g.in_w) ? src[iw] : T(0);
          }
        }
      }
}

template <class T>
void col2im_add(const ConvGeometry& g, const T* col, T* x) {
  const auto& s = g.spec;
  const std::size_t P = g.out_pixels();
  for (Dim c = 0; c < s.in_channels; ++c)
    for (Dim i = 0; i < s.kernel_h; ++i)
      for (Dim j = 0; j < s.kernel_w; ++j) {
        const T* row = col + ((c * s.kernel_h + i) * s.kernel_w + j) * P;
        T* plane = x + c * g.in_plane();
        for (Dim oh = 0; oh < g.out_h; ++oh) {
          const Dim ih = oh * s.stride_h + i * s.dilation - s.pad_top;
          if (ih < 0 || ih >= g.in_h) continue;
          const T* src = row + oh * g.out_w;
          T* dst = plane + ih * g.in_w;
          for (Dim ow = 0; ow < g.out_w; ++ow) {
            const Dim iw = ow * s.stride_w + j * s.dilation - s.pad_left;
            if (iw >= 0 && iw < g.in_w) dst[iw] += src[ow];
          }
        }
      }
}

}  // namespace detail

/// Cross-correlation (no kernel flip) of an NCHW input with weights of shape
/// (out, in, kh, kw). Each sample is one GEMM of fixed shape, so batched and
/// single-sample calls produce identical bits.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 const ConvSpec& spec) {
  spec.validate();
  if (input.ndim() != 4 || input.dim(1) != spec.in_channels)
    throw InvalidShape("conv2d: input " + to_string(input.shape()) + " does not match " +
                       std::to_string(spec.in_channels) + " input channels");
  if (weight.shape() != spec.weight_shape())
    throw InvalidShape("conv2d: weight " + to_string(weight.shape()) + ", expected " +
                       to_string(spec.weight_shape()));
  if (spec.bias != bias.defined())
    throw InvalidShape("conv2d: bias presence does not match spec");
  if (bias.defined() && bias.numel() != static_cast<std::size_t>(spec.out_channels))
    throw InvalidShape("conv2d: bias " + to_string(bias.shape()));
  const Dim in_h = input.dim(2), in_w = input.dim(3);
  if (in_h + spec.pad_top + spec.pad_bottom < spec.extent_h() ||
      in_w + spec.pad_left + spec.pad_right < spec.extent_w())
    throw InvalidShape("conv2d: padded input " + to_string(input.shape()) +
                       " smaller than the effective kernel extent");

  detail::ConvGeometry g{spec, input.dim(0), in_h, in_w, spec.out_h(in_h), spec.out_w(in_w)};
  const std::size_t K = g.patch_rows(), P = g.out_pixels();
  const std::size_t OC = static_cast<std::size_t>(spec.out_channels);
  const std::size_t in_sample = static_cast<std::size_t>(spec.in_channels) * g.in_plane();
  std::vector<T> out(static_cast<std::size_t>(g.batch) * OC * P);

  using Mat = detail::RowMatrix<T>;
  const T* w = weight.data().data();
  const T* x = input.data().data();
  const T* b = bias.defined() ? bias.data().data() : nullptr;

  parallel_for(static_cast<std::size_t>(g.batch), [&](std::size_t n) {
    T* y = out.data() + n * OC * P;
    if (g.pointwise()) {
      detail::ordered_gemm(w, x + n * in_sample, y, OC, K, P);
    } else {
      std::vector<T> col(K * P);
      detail::im2col(g, x + n * in_sample, col.data());
      detail::ordered_gemm(w, col.data(), y, OC, K, P);
    }
    if (b != nullptr)
      for (std::size_t o = 0; o < OC; ++o) Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>(y + o * P, P) += b[o];
  });

  auto xn = input.node();
  auto wn = weight.node();
  auto bn = bias.defined() ? bias.node() : detail::NodePtr<T>{};
  return detail::make_result<T>(
      "conv2d", Shape{g.batch, spec.out_channels, g.out_h, g.out_w}, std::move(out),
      {&input, &weight, &bias}, [xn, wn, bn, g, K, P, OC, in_sample](detail::Node<T>& o) {
        Eigen::Map<const Mat> Wm(wn->value.data(), OC, K);
        std::vector<T> col(g.pointwise() ? 0 : K * P);
        std::vector<T> gcol(K * P);
        for (Dim n = 0; n < g.batch; ++n) {
          Eigen::Map<const Mat> G(o.grad.data() + n * OC * P, OC, P);
          const T* xs = xn->value.data() + n * in_sample;
          if (wn->requires_grad) {
            Eigen::Map<Mat> GW(wn->grad_buffer().data(), OC, K);
            if (g.pointwise()) {
              GW.noalias() += G * Eigen::Map<const Mat>(xs, K, P).transpose();
            } else {
              detail::im2col(g, xs, col.data());
              GW.noalias() += G * Eigen::Map<const Mat>(col.data(), K, P).transpose();
            }
          }
          if (bn && bn->requires_grad) {
            auto& gb = bn->grad_buffer();
            for (std::size_t c = 0; c < OC; ++c) gb[c] += static_cast<T>(lane_sum(o.grad.data() + (n * OC + c) * P, P));
          }
          if (xn->requires_grad) {
            T* gx = xn->grad_buffer().data() + n * in_sample;
            if (g.pointwise()) {
              Eigen::Map<Mat> GX(gx, K, P);
              GX.noalias() += Wm.transpose() * G;
            } else {
              Eigen::Map<Mat> GC(gcol.data(), K, P);
              GC.noalias() = Wm.transpose() * G;
              detail::col2im_add(g, gcol.data(), gx);
            }
          }
        }
      });
}

}  // namespace patchforge
