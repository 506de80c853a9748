#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "soz/rng.hpp"
#include "soz/tensor.hpp"

namespace soz {

/// floor((length + 2*padding - kernel) / stride) + 1
constexpr Index conv_output_length(Index length, Index kernel, Index stride, Index padding) {
  return (length + 2 * padding - kernel) / stride + 1;
}

/// floor((length - kernel) / stride) + 1
constexpr Index pool_output_length(Index length, Index kernel, Index stride) {
  return (length - kernel) / stride + 1;
}

#ifndef SOZ_CONV_GEMM_MIN_CK
#define SOZ_CONV_GEMM_MIN_CK 48
#endif

namespace detail {

struct ConvGeometry {
  Index batch, in_channels, length, out_channels, kernel, stride, padding, out_length;

  // Output positions whose tap k reads inside the unpadded input.
  std::pair<Index, Index> tap_range(Index k) const {
    const Index shift = padding - k;
    const Index lo = shift > 0 ? (shift + stride - 1) / stride : 0;
    const Index last = length - 1 + shift;
    const Index hi = last >= 0 ? std::min(out_length, last / stride + 1) : 0;
    return {std::min(lo, hi), hi};
  }
};

// Stride-1 correlation of padded rows: y[o][l] = bias[o] + sum_c sum_k
// w[o][c][k] * xp[c][l + k] for l < out_length, where xp rows have length
// `row`. Tiles of 32 outputs stay in registers; the accumulation order is
// fixed.
template <typename Scalar>
void correlate_tiled(const Scalar* xp, Index channels, Index row, const Scalar* w, const Scalar* bias, Index outs,
                     Index kernel, Index out_length, Scalar* y) {
  constexpr Index tile = 32;
  for (Index o = 0; o < outs; ++o) {
    Scalar* yr = y + o * out_length;
    const Scalar b0 = bias != nullptr ? bias[o] : Scalar(0);
    Index l0 = 0;
    for (; l0 + tile <= out_length; l0 += tile) {
      Scalar acc[tile];
      for (Index j = 0; j < tile; ++j) acc[j] = b0;
      for (Index c = 0; c < channels; ++c) {
        const Scalar* src = xp + c * row + l0;
        const Scalar* wr = w + (o * channels + c) * kernel;
        for (Index k = 0; k < kernel; ++k) {
          const Scalar wv = wr[k];
          for (Index j = 0; j < tile; ++j) acc[j] += wv * src[j + k];
        }
      }
      for (Index j = 0; j < tile; ++j) yr[l0 + j] = acc[j];
    }
    for (Index l = l0; l < out_length; ++l) {
      Scalar acc = b0;
      for (Index c = 0; c < channels; ++c) {
        for (Index k = 0; k < kernel; ++k) acc += w[(o * channels + c) * kernel + k] * xp[c * row + l + k];
      }
      yr[l] = acc;
    }
  }
}

// Copies `channels` rows of length `length` into rows of length + 2*pad with
// zero margins.
template <typename Scalar>
void pad_rows(const Scalar* x, Index channels, Index length, Index pad, std::vector<Scalar>& out) {
  const Index row = length + 2 * pad;
  out.assign(static_cast<std::size_t>(channels * row), Scalar(0));
  for (Index c = 0; c < channels; ++c) std::copy(x + c * length, x + (c + 1) * length, out.data() + c * row + pad);
}

// Sum of a[l] * b[l * stride] with a fixed 16-lane accumulation order, so the
// result does not depend on buffer alignment.
template <typename Scalar>
inline Scalar dot_strided(const Scalar* a, const Scalar* b, Index n, Index stride) {
  constexpr Index lanes = 16;
  Scalar acc[lanes] = {};
  Index l = 0;
  if (stride == 1) {
    for (; l + lanes <= n; l += lanes) {
      for (Index j = 0; j < lanes; ++j) acc[j] += a[l + j] * b[l + j];
    }
  }
  for (; l < n; ++l) acc[l % lanes] += a[l] * b[l * stride];
  Scalar total = 0;
  for (Index j = 0; j < lanes; ++j) total += acc[j];
  return total;
}


template <typename Scalar>
using ColMatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Transposed im2col for samples [first, first + count): row (n*out_length + l),
// column (c*kernel + k) holds x[n][c][l*stride + k - padding] or 0 outside.
template <typename Scalar>
void im2col_t(const Scalar* x, const ConvGeometry& g, Index first, Index count, ColMatrixX<Scalar>& cols) {
  cols.resize(count * g.out_length, g.in_channels * g.kernel);
  for (Index c = 0; c < g.in_channels; ++c) {
    for (Index k = 0; k < g.kernel; ++k) {
      const auto [lo, hi] = g.tap_range(k);
      Scalar* dst = cols.col(c * g.kernel + k).data();
      for (Index n = 0; n < count; ++n) {
        const Scalar* src = x + ((first + n) * g.in_channels + c) * g.length + k - g.padding;
        Scalar* out = dst + n * g.out_length;
        std::fill(out, out + lo, Scalar(0));
        for (Index l = lo; l < hi; ++l) out[l] = src[l * g.stride];
        std::fill(out + hi, out + g.out_length, Scalar(0));
      }
    }
  }
}

template <typename Scalar>
void col2im_t(const ColMatrixX<Scalar>& dcols, const ConvGeometry& g, Index first, Index count, Scalar* dx) {
  for (Index c = 0; c < g.in_channels; ++c) {
    for (Index k = 0; k < g.kernel; ++k) {
      const auto [lo, hi] = g.tap_range(k);
      const Scalar* src = dcols.col(c * g.kernel + k).data();
      for (Index n = 0; n < count; ++n) {
        Scalar* dst = dx + ((first + n) * g.in_channels + c) * g.length + k - g.padding;
        const Scalar* in = src + n * g.out_length;
        for (Index l = lo; l < hi; ++l) dst[l * g.stride] += in[l];
      }
    }
  }
}

// Eight interleaved partial sums combined in a fixed order. The result depends
// only on the operands, never on their addresses.
template <typename Scalar>
Scalar dot_fixed(const Scalar* a, const Scalar* b, Index n) {
  Scalar acc[8] = {};
  Index i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  }
  for (; i < n; ++i) acc[i % 8] += a[i] * b[i];
  return ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]));
}

// Samples per GEMM chunk; bounds the im2col buffer to ~1M scalars.
inline Index gemm_chunk(const ConvGeometry& g) {
  const Index per_sample = std::max<Index>(1, g.out_length * g.in_channels * g.kernel);
  return std::clamp<Index>((Index{1} << 20) / per_sample, 1, std::max<Index>(g.batch, 1));
}

// Narrow layers over long rows run faster as direct loops; wide layers as GEMM.
inline bool use_gemm(const ConvGeometry& g) {
  return g.stride != 1 || g.out_length < 512 || g.in_channels * g.kernel >= SOZ_CONV_GEMM_MIN_CK;
}

}  // namespace detail

/// 1-d convolution (cross-correlation). `input` is [N x C_in x L] or
/// [C_in x L]; `weight` is [C_out x C_in x K]; `bias` is [C_out].
template <typename Scalar>
Variable<Scalar> conv1d(const Variable<Scalar>& input, const Variable<Scalar>& weight, const Variable<Scalar>& bias,
                        Index stride = 1, Index padding = 0) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 2 && xs.size() != 3) throw ShapeError("conv1d: input must be [N x C x L] or [C x L], got " + to_string(xs));
  if (ws.size() != 3) throw ShapeError("conv1d: weight must be [C_out x C_in x K], got " + to_string(ws));
  const bool batched = xs.size() == 3;
  detail::ConvGeometry g{};
  g.batch = batched ? xs[0] : 1;
  g.in_channels = xs[xs.size() - 2];
  g.length = xs.back();
  g.out_channels = ws[0];
  g.kernel = ws[2];
  g.stride = stride;
  g.padding = padding;
  if (ws[1] != g.in_channels) {
    throw ShapeError("conv1d: input has " + std::to_string(g.in_channels) + " channels but weight expects " +
                     std::to_string(ws[1]));
  }
  if (bias.shape() != Shape{g.out_channels}) throw ShapeError("conv1d: bias must be [" + std::to_string(g.out_channels) + "]");
  if (stride < 1 || padding < 0) throw ShapeError("conv1d: stride must be >= 1 and padding >= 0");
  if (g.kernel < 1 || g.kernel > g.length + 2 * padding) {
    throw ShapeError("conv1d: kernel " + std::to_string(g.kernel) + " longer than padded input " +
                     std::to_string(g.length + 2 * padding));
  }
  g.out_length = conv_output_length(g.length, g.kernel, stride, padding);

  Shape out_shape = batched ? Shape{g.batch, g.out_channels, g.out_length} : Shape{g.out_channels, g.out_length};
  Tensor<Scalar> out(out_shape);
  const Scalar* x = input.value().data().data();
  const Scalar* w = weight.value().data().data();
  const Scalar* b = bias.value().data().data();
  if (detail::use_gemm(g)) {
    using detail::ColMatrixX;
    const Index ck = g.in_channels * g.kernel;
    // Weight [C_out][C_in][K] row-major is W^T in column-major order.
    Eigen::Map<const ColMatrixX<Scalar>> wt(w, ck, g.out_channels);
    // One sample per product: Eigen's kernels round differently by row
    // offset, and a window's output must not depend on its batch position.
    ColMatrixX<Scalar> cols, y;
    for (Index n = 0; n < g.batch; ++n) {
      detail::im2col_t(x, g, n, 1, cols);
      y.noalias() = cols * wt;
      for (Index o = 0; o < g.out_channels; ++o) {
        Scalar* dst = out.data().data() + (n * g.out_channels + o) * g.out_length;
        const Scalar* src = y.col(o).data();
        for (Index l = 0; l < g.out_length; ++l) dst[l] = src[l] + b[o];
      }
    }
  } else {
    std::vector<Scalar> xp;
    for (Index n = 0; n < g.batch; ++n) {
      detail::pad_rows(x + n * g.in_channels * g.length, g.in_channels, g.length, g.padding, xp);
      detail::correlate_tiled(xp.data(), g.in_channels, g.length + 2 * g.padding, w, b, g.out_channels, g.kernel,
                              g.out_length, out.data().data() + n * g.out_channels * g.out_length);
    }
  }

  return Variable<Scalar>::make_result(
      std::move(out), {input, weight, bias}, [g](typename Variable<Scalar>::NodeT& node) {
        auto& in = *node.parents[0];
        auto& wn = *node.parents[1];
        auto& bn = *node.parents[2];
        const Scalar* dy = node.grad.data().data();
        const Scalar* x = in.value.data().data();
        const Scalar* w = wn.value.data().data();
        if (bn.requires_grad) {
          VectorX<Scalar> db = VectorX<Scalar>::Zero(g.out_channels);
          for (Index n = 0; n < g.batch; ++n) {
            for (Index o = 0; o < g.out_channels; ++o) {
              const Scalar* row = dy + (n * g.out_channels + o) * g.out_length;
              Scalar s = 0;
              for (Index l = 0; l < g.out_length; ++l) s += row[l];
              db[o] += s;
            }
          }
          bn.accumulate(db);
        }
        if (detail::use_gemm(g) && (wn.requires_grad || in.requires_grad)) {
          using detail::ColMatrixX;
          const Index ck = g.in_channels * g.kernel;
          Eigen::Map<const ColMatrixX<Scalar>> wt(w, ck, g.out_channels);
          ColMatrixX<Scalar> dwt = ColMatrixX<Scalar>::Zero(ck, g.out_channels);
          VectorX<Scalar> dx;
          if (in.requires_grad) dx = VectorX<Scalar>::Zero(in.value.size());
          const Index chunk = detail::gemm_chunk(g);
          ColMatrixX<Scalar> cols, dyc, dcols;
          for (Index first = 0; first < g.batch; first += chunk) {
            const Index count = std::min(chunk, g.batch - first);
            dyc.resize(count * g.out_length, g.out_channels);
            for (Index n = 0; n < count; ++n) {
              for (Index o = 0; o < g.out_channels; ++o) {
                const Scalar* src = dy + ((first + n) * g.out_channels + o) * g.out_length;
                std::copy(src, src + g.out_length, dyc.col(o).data() + n * g.out_length);
              }
            }
            if (wn.requires_grad) {
              detail::im2col_t(x, g, first, count, cols);
              dwt.noalias() += cols.transpose() * dyc;
            }
            if (in.requires_grad) {
              dcols.noalias() = dyc * wt.transpose();
              detail::col2im_t(dcols, g, first, count, dx.data());
            }
          }
          if (wn.requires_grad) wn.accumulate(Eigen::Map<const VectorX<Scalar>>(dwt.data(), dwt.size()));
          if (in.requires_grad) in.accumulate(dx);
          return;
        }
        // Stride 1 from here on: dx is a full correlation of dy with the
        // flipped, transposed kernel; dw is a dot product per tap.
        const Index row = g.length + 2 * g.padding;
        std::vector<Scalar> xp;
        if (wn.requires_grad) {
          VectorX<Scalar> dw = VectorX<Scalar>::Zero(wn.value.size());
          for (Index n = 0; n < g.batch; ++n) {
            detail::pad_rows(x + n * g.in_channels * g.length, g.in_channels, g.length, g.padding, xp);
            for (Index o = 0; o < g.out_channels; ++o) {
              const Scalar* dyr = dy + (n * g.out_channels + o) * g.out_length;
              for (Index c = 0; c < g.in_channels; ++c) {
                for (Index k = 0; k < g.kernel; ++k) {
                  dw[(o * g.in_channels + c) * g.kernel + k] +=
                      detail::dot_strided(dyr, xp.data() + c * row + k, g.out_length, Index{1});
                }
              }
            }
          }
          wn.accumulate(dw);
        }
        if (in.requires_grad) {
          std::vector<Scalar> wf(static_cast<std::size_t>(g.in_channels * g.out_channels * g.kernel));
          for (Index o = 0; o < g.out_channels; ++o) {
            for (Index c = 0; c < g.in_channels; ++c) {
              for (Index k = 0; k < g.kernel; ++k) {
                wf[static_cast<std::size_t>((c * g.out_channels + o) * g.kernel + (g.kernel - 1 - k))] =
                    w[(o * g.in_channels + c) * g.kernel + k];
              }
            }
          }
          VectorX<Scalar> dx(in.value.size());
          std::vector<Scalar> dyp, dxp(static_cast<std::size_t>(g.in_channels * row));
          for (Index n = 0; n < g.batch; ++n) {
            detail::pad_rows(dy + n * g.out_channels * g.out_length, g.out_channels, g.out_length, g.kernel - 1, dyp);
            detail::correlate_tiled(dyp.data(), g.out_channels, g.out_length + 2 * (g.kernel - 1), wf.data(),
                                    static_cast<const Scalar*>(nullptr), g.in_channels, g.kernel, row, dxp.data());
            for (Index c = 0; c < g.in_channels; ++c) {
              std::copy(dxp.data() + c * row + g.padding, dxp.data() + c * row + g.padding + g.length,
                        dx.data() + (n * g.in_channels + c) * g.length);
            }
          }
          in.accumulate(dx);
        }
      });
}

/// Output of maxpool1d together with the flat input index each output came from.
template <typename Scalar>
struct PoolResult {
  Variable<Scalar> output;
  std::vector<Index> argmax;
};

/// Max pooling over the last axis of [N x C x L] or [C x L]. Ties resolve to the
/// lowest index; backward routes gradient to the argmax only.
template <typename Scalar>
PoolResult<Scalar> maxpool1d_with_indices(const Variable<Scalar>& input, Index kernel, Index stride) {
  const Shape& xs = input.shape();
  if (xs.size() < 1) throw ShapeError("maxpool1d: input must have at least one axis");
  if (kernel < 1 || stride < 1) throw ShapeError("maxpool1d: kernel and stride must be >= 1");
  const Index length = xs.back();
  if (length < kernel) {
    throw ShapeError("maxpool1d: length " + std::to_string(length) + " shorter than kernel " + std::to_string(kernel));
  }
  const Index rows = numel(xs) / length;
  const Index out_length = pool_output_length(length, kernel, stride);
  Shape out_shape = xs;
  out_shape.back() = out_length;
  Tensor<Scalar> out(out_shape);
  std::vector<Index> argmax(static_cast<std::size_t>(rows * out_length));
  const Scalar* x = input.value().data().data();
  for (Index r = 0; r < rows; ++r) {
    const Scalar* row = x + r * length;
    for (Index l = 0; l < out_length; ++l) {
      Index best = l * stride;
      for (Index k = 1; k < kernel; ++k) {
        if (row[l * stride + k] > row[best]) best = l * stride + k;
      }
      out[r * out_length + l] = row[best];
      argmax[static_cast<std::size_t>(r * out_length + l)] = r * length + best;
    }
  }
  auto result = Variable<Scalar>::make_result(std::move(out), {input}, [argmax](typename Variable<Scalar>::NodeT& node) {
    auto& in = *node.parents[0];
    VectorX<Scalar> dx = VectorX<Scalar>::Zero(in.value.size());
    const auto& g = node.grad.data();
    for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += g[static_cast<Index>(i)];
    in.accumulate(dx);
  });
  return {std::move(result), std::move(argmax)};
}

template <typename Scalar>
Variable<Scalar> maxpool1d(const Variable<Scalar>& input, Index kernel, Index stride) {
  return maxpool1d_with_indices(input, kernel, stride).output;
}

/// y = x W^T + b with x [N x F_in], W [F_out x F_in], b [F_out].
template <typename Scalar>
Variable<Scalar> linear(const Variable<Scalar>& input, const Variable<Scalar>& weight, const Variable<Scalar>& bias) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 2 || ws.size() != 2) {
    throw ShapeError("linear: expected [N x F_in] input and [F_out x F_in] weight, got " + to_string(xs) + " and " +
                     to_string(ws));
  }
  if (xs[1] != ws[1]) {
    throw ShapeError("linear: input width " + std::to_string(xs[1]) + " does not match weight width " +
                     std::to_string(ws[1]));
  }
  if (bias.shape() != Shape{ws[0]}) throw ShapeError("linear: bias must be [" + std::to_string(ws[0]) + "]");
  Tensor<Scalar> out({xs[0], ws[0]});
  // Fixed-order dot products keep each row independent of the batch around it.
  const Index n_in = xs[1];
  const Scalar* x = input.value().data().data();
  const Scalar* w = weight.value().data().data();
  const Scalar* b = bias.value().data().data();
  Scalar* y = out.data().data();
  for (Index n = 0; n < xs[0]; ++n) {
    for (Index f = 0; f < ws[0]; ++f) y[n * ws[0] + f] = detail::dot_fixed(x + n * n_in, w + f * n_in, n_in) + b[f];
  }
  return Variable<Scalar>::make_result(std::move(out), {input, weight, bias}, [](typename Variable<Scalar>::NodeT& node) {
    auto& in = *node.parents[0];
    auto& w = *node.parents[1];
    auto& b = *node.parents[2];
    const auto dy = node.grad.matrix();
    if (in.requires_grad) {
      RowMatrixX<Scalar> dx = dy * w.value.matrix();
      in.accumulate(Eigen::Map<const VectorX<Scalar>>(dx.data(), dx.size()));
    }
    if (w.requires_grad) {
      RowMatrixX<Scalar> dw = dy.transpose() * in.value.matrix();
      w.accumulate(Eigen::Map<const VectorX<Scalar>>(dw.data(), dw.size()));
    }
    if (b.requires_grad) b.accumulate(dy.colwise().sum().transpose());
  });
}

template <typename Scalar>
Variable<Scalar> relu(const Variable<Scalar>& input) {
  Tensor<Scalar> out(input.shape(), input.value().data().cwiseMax(Scalar(0)));
  return Variable<Scalar>::make_result(std::move(out), {input}, [](typename Variable<Scalar>::NodeT& node) {
    auto& in = *node.parents[0];
    in.accumulate((in.value.data().array() > Scalar(0)).select(node.grad.data(), Scalar(0)).matrix());
  });
}

/// Inverted dropout. Element j of row r (rows run along axis 0) is dropped when
/// unit_uniform(mix64(row_keys[r], j)) < p, so a row's mask depends only on its
/// own key and not on the rest of the batch.
template <typename Scalar>
Variable<Scalar> dropout(const Variable<Scalar>& input, double p, bool training, std::span<const std::uint64_t> row_keys) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout: probability must be in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return input;
  const Index rows = input.shape().empty() ? 1 : input.shape()[0];
  if (static_cast<Index>(row_keys.size()) != rows) {
    throw ShapeError("dropout: need one key per row (" + std::to_string(rows) + "), got " + std::to_string(row_keys.size()));
  }
  const Index width = rows == 0 ? 0 : input.value().size() / rows;
  const Scalar keep_scale = Scalar(1.0 / (1.0 - p));
  VectorX<Scalar> mask(input.value().size());
  for (Index r = 0; r < rows; ++r) {
    const std::uint64_t key = row_keys[static_cast<std::size_t>(r)];
    for (Index j = 0; j < width; ++j) {
      mask[r * width + j] = unit_uniform(mix64(key, static_cast<std::uint64_t>(j))) < p ? Scalar(0) : keep_scale;
    }
  }
  Tensor<Scalar> out(input.shape(), input.value().data().cwiseProduct(mask));
  return Variable<Scalar>::make_result(std::move(out), {input}, [mask = std::move(mask)](typename Variable<Scalar>::NodeT& node) {
    node.parents[0]->accumulate(node.grad.data().cwiseProduct(mask));
  });
}

/// Dropout with row keys derived from a single seed.
template <typename Scalar>
Variable<Scalar> dropout(const Variable<Scalar>& input, double p, bool training, std::uint64_t seed) {
  const Index rows = input.shape().empty() ? 1 : input.shape()[0];
  std::vector<std::uint64_t> keys(static_cast<std::size_t>(rows));
  for (Index r = 0; r < rows; ++r) keys[static_cast<std::size_t>(r)] = mix64(seed, static_cast<std::uint64_t>(r));
  return dropout(input, p, training, std::span<const std::uint64_t>(keys));
}

/// Same data viewed with new extents; element count must match.
template <typename Scalar>
Variable<Scalar> reshape(const Variable<Scalar>& input, Shape shape) {
  Tensor<Scalar> out = input.value().reshaped(std::move(shape));
  return Variable<Scalar>::make_result(std::move(out), {input}, [](typename Variable<Scalar>::NodeT& node) {
    node.parents[0]->accumulate(node.grad.data());
  });
}

/// [N x ...] -> [N x prod(...)]
template <typename Scalar>
Variable<Scalar> flatten(const Variable<Scalar>& input) {
  const Shape& s = input.shape();
  if (s.empty()) throw ShapeError("flatten: scalar input");
  return reshape(input, Shape{s[0], numel(s) / std::max<Index>(s[0], 1)});
}

/// Weighted mean cross-entropy: sum_i w_i * -log softmax(z_i)[y_i] / sum_i w_i.
template <typename Scalar>
Variable<Scalar> cross_entropy(const Variable<Scalar>& logits, std::span<const int> labels, std::span<const Scalar> weights) {
  const Shape& s = logits.shape();
  if (s.size() != 2) throw ShapeError("cross_entropy: logits must be [N x C], got " + to_string(s));
  const Index n = s[0];
  const Index classes = s[1];
  if (static_cast<Index>(labels.size()) != n || static_cast<Index>(weights.size()) != n) {
    throw ShapeError("cross_entropy: need " + std::to_string(n) + " labels and weights");
  }
  Scalar total_weight = 0;
  for (Index i = 0; i < n; ++i) {
    const Scalar w = weights[static_cast<std::size_t>(i)];
    if (!(w >= Scalar(0))) throw ConfigError("cross_entropy: sample weights must be non-negative");
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= classes) throw ConfigError("cross_entropy: label " + std::to_string(y) + " out of range");
    total_weight += w;
  }
  if (!(total_weight > Scalar(0))) throw ConfigError("cross_entropy: sample weights sum to zero");

  const auto z = logits.value().matrix();
  RowMatrixX<Scalar> probs(n, classes);
  Scalar loss = 0;
  for (Index i = 0; i < n; ++i) {
    const Scalar m = z.row(i).maxCoeff();
    probs.row(i) = (z.row(i).array() - m).exp().matrix();
    const Scalar denom = probs.row(i).sum();
    probs.row(i) /= denom;
    const int y = labels[static_cast<std::size_t>(i)];
    const Scalar nll = -(z(i, y) - m - std::log(denom));
    loss += weights[static_cast<std::size_t>(i)] * nll;
  }
  loss /= total_weight;

  std::vector<int> ys(labels.begin(), labels.end());
  VectorX<Scalar> ws = Eigen::Map<const VectorX<Scalar>>(weights.data(), n) / total_weight;
  return Variable<Scalar>::make_result(
      Tensor<Scalar>::scalar(loss), {logits},
      [probs = std::move(probs), ys = std::move(ys), ws = std::move(ws)](typename Variable<Scalar>::NodeT& node) {
        const Scalar upstream = node.grad[0];
        RowMatrixX<Scalar> d = probs;
        for (Index i = 0; i < d.rows(); ++i) {
          d(i, ys[static_cast<std::size_t>(i)]) -= Scalar(1);
          d.row(i) *= ws[i] * upstream;
        }
        node.parents[0]->accumulate(Eigen::Map<const VectorX<Scalar>>(d.data(), d.size()));
      });
}

/// Unweighted mean cross-entropy.
template <typename Scalar>
Variable<Scalar> cross_entropy(const Variable<Scalar>& logits, std::span<const int> labels) {
  std::vector<Scalar> ones(labels.size(), Scalar(1));
  return cross_entropy(logits, labels, std::span<const Scalar>(ones));
}

// Small elementwise helpers, mostly for composing test objectives.

template <typename Scalar>
Variable<Scalar> sum(const Variable<Scalar>& input) {
  return Variable<Scalar>::make_result(Tensor<Scalar>::scalar(input.value().data().sum()), {input},
                                       [](typename Variable<Scalar>::NodeT& node) {
                                         auto& in = *node.parents[0];
                                         in.accumulate(VectorX<Scalar>::Constant(in.value.size(), node.grad[0]));
                                       });
}

template <typename Scalar>
Variable<Scalar> mul(const Variable<Scalar>& a, const Variable<Scalar>& b) {
  if (a.shape() != b.shape()) throw ShapeError("mul: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  Tensor<Scalar> out(a.shape(), a.value().data().cwiseProduct(b.value().data()));
  return Variable<Scalar>::make_result(std::move(out), {a, b}, [](typename Variable<Scalar>::NodeT& node) {
    auto& x = *node.parents[0];
    auto& y = *node.parents[1];
    if (x.requires_grad) x.accumulate(node.grad.data().cwiseProduct(y.value.data()));
    if (y.requires_grad) y.accumulate(node.grad.data().cwiseProduct(x.value.data()));
  });
}

template <typename Scalar>
Variable<Scalar> scale(const Variable<Scalar>& input, Scalar factor) {
  Tensor<Scalar> out(input.shape(), input.value().data() * factor);
  return Variable<Scalar>::make_result(std::move(out), {input}, [factor](typename Variable<Scalar>::NodeT& node) {
    node.parents[0]->accumulate(node.grad.data() * factor);
  });
}

}  // namespace soz
