#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include "ssmic/error.hpp"
#include "ssmic/ops.hpp"
#include "ssmic/ssm.hpp"
#include "ssmic/tensor.hpp"

namespace ssmic::nn {

inline constexpr double kNormEps = 1e-6;

using ops::rms_norm;

// ---------------------------------------------------------------------------
// Patch merge / expand

// Sub-pixel order inside each 2x2 block, both for space-to-depth and its
// inverse: top-left, top-right, bottom-left, bottom-right.
ops::IndexMap space_to_depth_index(std::size_t height, std::size_t width, std::size_t channels);
ops::IndexMap depth_to_space_index(std::size_t height, std::size_t width, std::size_t channels);

template <class T>
T space_to_depth(const T& f) {
  const Shape& s = f.shape();
  require(s.size() == 3, ErrorCode::kShapeMismatch, "space_to_depth: expected H x W x C");
  require(s[0] % 2 == 0 && s[1] % 2 == 0, ErrorCode::kShapeMismatch,
          "patch merge needs even spatial extents, got " + shape_str(s));
  return ops::gather(f, space_to_depth_index(s[0], s[1], s[2]), {s[0] / 2, s[1] / 2, 4 * s[2]});
}

template <class T>
T depth_to_space(const T& f) {
  const Shape& s = f.shape();
  require(s.size() == 3, ErrorCode::kShapeMismatch, "depth_to_space: expected H x W x C");
  require(s[2] % 4 == 0, ErrorCode::kShapeMismatch,
          "patch expand needs a channel count divisible by 4, got " + shape_str(s));
  return ops::gather(f, depth_to_space_index(s[0], s[1], s[2] / 4), {s[0] * 2, s[1] * 2, s[2] / 4});
}

template <class T>
struct PatchMergeParamsT {
  std::optional<T> norm;  // RMSNorm scale over 4 C_in; absent means no norm
  T weight;               // 4C_in x C_out
  T bias;                 // C_out
};
using PatchMergeParams = PatchMergeParamsT<Tensor>;

template <class T>
struct PatchExpandParamsT {
  T weight;  // C_in x 4C_out
  T bias;    // 4C_out
};
using PatchExpandParams = PatchExpandParamsT<Tensor>;

// Space-to-depth by 2, RMSNorm, linear projection to C_out.
template <class T>
T patch_merge(const T& f, const PatchMergeParamsT<T>& p) {
  T x = space_to_depth(f);
  if (p.norm) x = ops::rms_norm(x, *p.norm, kNormEps);
  return ops::linear(x, p.weight, p.bias);
}

// Linear projection to 4 C_out, then depth-to-space by 2.
template <class T>
T patch_expand(const T& f, const PatchExpandParamsT<T>& p) {
  require(p.weight.shape().size() == 2 && p.weight.shape()[1] % 4 == 0, ErrorCode::kShapeMismatch,
          "patch expand projection width must be divisible by 4");
  return depth_to_space(ops::linear(f, p.weight, p.bias));
}

// ---------------------------------------------------------------------------
// Cross scan / cross merge

enum class ScanPath { kRowForward = 0, kColForward = 1, kRowBackward = 2, kColBackward = 3 };
inline constexpr std::array<ScanPath, 4> kScanPaths = {ScanPath::kRowForward, ScanPath::kColForward,
                                                       ScanPath::kRowBackward, ScanPath::kColBackward};

// Grid cell (row-major) visited at sequence step s of a path.
std::size_t scan_cell(ScanPath path, std::size_t step, std::size_t height, std::size_t width);
ops::IndexMap scan_index(ScanPath path, std::size_t height, std::size_t width, std::size_t channels);
ops::IndexMap merge_index(ScanPath path, std::size_t height, std::size_t width, std::size_t channels);

template <class T>
std::array<T, 4> cross_scan(const T& f) {
  const Shape& s = f.shape();
  require(s.size() == 3, ErrorCode::kShapeMismatch, "cross_scan: expected H x W x D");
  std::array<T, 4> out;
  for (ScanPath p : kScanPaths)
    out[static_cast<std::size_t>(p)] = ops::gather(f, scan_index(p, s[0], s[1], s[2]), {s[0] * s[1], s[2]});
  return out;
}

// Folds each sequence back onto the grid and sums them in path order.
template <class T>
T cross_merge(const std::array<T, 4>& ys, std::size_t height, std::size_t width) {
  std::optional<T> acc;
  for (ScanPath p : kScanPaths) {
    const T& y = ys[static_cast<std::size_t>(p)];
    const Shape& s = y.shape();
    require(s.size() == 2 && s[0] == height * width, ErrorCode::kShapeMismatch,
            "cross_merge: sequence " + shape_str(s) + " does not cover a " + std::to_string(height) + "x" +
                std::to_string(width) + " grid");
    T grid = ops::gather(y, merge_index(p, height, width, s[1]), {height, width, s[1]});
    acc = acc ? ops::add(*acc, grid) : grid;
  }
  return *acc;
}

// ---------------------------------------------------------------------------
// SS2D and the VSS block

// One S6 path: delta = softplus(x Wd + bd), B = x Wb, C = x Wc.
template <class T>
struct S6PathParamsT {
  T delta_weight;  // D x D
  T delta_bias;    // D
  T b_weight;      // D x N
  T c_weight;      // D x N
  T a_log;         // D x N
  T d_skip;        // D
};

template <class T>
struct Ss2dParamsT {
  std::array<S6PathParamsT<T>, 4> paths;
  ssm::ScanDiscretization mode = ssm::ScanDiscretization::kSimplified;
};
using Ss2dParams = Ss2dParamsT<Tensor>;

template <class T>
T s6_path(const T& seq, const S6PathParamsT<T>& p, ssm::ScanDiscretization mode) {
  T delta = ops::softplus(ops::linear(seq, p.delta_weight, p.delta_bias));
  T b = ops::linear(seq, p.b_weight);
  T c = ops::linear(seq, p.c_weight);
  return ops::selective_scan(seq, delta, b, c, p.a_log, p.d_skip, mode);
}

template <class T>
T ss2d(const T& f, const Ss2dParamsT<T>& p) {
  const Shape& s = f.shape();
  require(s.size() == 3, ErrorCode::kShapeMismatch, "ss2d: expected H x W x D");
  std::array<T, 4> seqs = cross_scan(f);
  std::array<T, 4> ys;
  for (std::size_t k = 0; k < 4; ++k) ys[k] = s6_path(seqs[k], p.paths[k], p.mode);
  return cross_merge(ys, s[0], s[1]);
}

template <class T>
struct VssBlockParamsT {
  T norm1;  // C
  T mlp1_weight, mlp1_bias;  // C x D, D
  T dwconv;                  // k x k x D
  Ss2dParamsT<T> ss2d;
  T norm2;                   // D
  T mlp2_weight, mlp2_bias;  // D x C, C
  T norm3;                   // C
  T mlp3_fc1_weight, mlp3_fc1_bias;  // C x rC, rC
  T mlp3_fc2_weight, mlp3_fc2_bias;  // rC x C, C
};
using VssBlockParams = VssBlockParamsT<Tensor>;

// f'' = f + MLP2(Norm2(SS2D(SiLU(DWConv(MLP1(Norm1(f)))))))
// out = MLP3(Norm3(f'')) + f''
template <class T>
T vss_block(const T& f, const VssBlockParamsT<T>& p) {
  T a = ops::rms_norm(f, p.norm1, kNormEps);
  a = ops::linear(a, p.mlp1_weight, p.mlp1_bias);
  a = ops::silu(ops::dwconv(a, p.dwconv));
  a = ss2d(a, p.ss2d);
  a = ops::rms_norm(a, p.norm2, kNormEps);
  T mid = ops::add(f, ops::linear(a, p.mlp2_weight, p.mlp2_bias));
  T b = ops::rms_norm(mid, p.norm3, kNormEps);
  b = ops::silu(ops::linear(b, p.mlp3_fc1_weight, p.mlp3_fc1_bias));
  b = ops::linear(b, p.mlp3_fc2_weight, p.mlp3_fc2_bias);
  return ops::add(b, mid);
}

}  // namespace ssmic::nn
