#include "ssmic/ops.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "ssmic/entropy.hpp"
#include "ssmic/error.hpp"
#include "ssmic/parallel.hpp"

namespace ssmic::ops {
namespace {

std::size_t last_dim(const Tensor& t) {
  require(t.rank() >= 1, ErrorCode::kShapeMismatch, "expected a tensor with a channel axis");
  return t.shape().back();
}

Shape with_last(Shape s, std::size_t c) {
  s.back() = c;
  return s;
}

ad::Tape& tape_of(const Var& v) {
  require(v.valid(), ErrorCode::kInternal, "autodiff: uninitialized variable");
  return *v.tape();
}

std::vector<Tensor> values(std::span<const Var> vs) {
  std::vector<Tensor> out;
  out.reserve(vs.size());
  for (const Var& v : vs) out.push_back(v.value());
  return out;
}

void linear_check(const Tensor& x, const Tensor& w) {
  require(w.rank() == 2, ErrorCode::kShapeMismatch, "linear: weight must be C_in x C_out");
  require(last_dim(x) == w.dim(0), ErrorCode::kShapeMismatch,
          "linear: input " + shape_str(x.shape()) + " does not match weight " + shape_str(w.shape()));
}

Tensor linear_impl(const Tensor& x, const Tensor& w, const Tensor* b) {
  linear_check(x, w);
  const std::size_t cin = w.dim(0), cout = w.dim(1), tokens = x.size() / cin;
  if (b) require_shape(*b, {cout}, "linear: bias");
  std::vector<double> out(tokens * cout, 0.0);
  const double* px = x.raw();
  const double* pw = w.raw();
  const double* pb = b ? b->raw() : nullptr;
  parallel_for(tokens, std::max<std::size_t>(1, 8192 / std::max<std::size_t>(1, cin * cout)),
               [&](std::size_t t0, std::size_t t1) {
                 for (std::size_t t = t0; t < t1; ++t) {
                   double* row = out.data() + t * cout;
                   for (std::size_t i = 0; i < cin; ++i) {
                     const double xv = px[t * cin + i];
                     const double* wr = pw + i * cout;
                     for (std::size_t o = 0; o < cout; ++o) row[o] += xv * wr[o];
                   }
                   if (pb)
                     for (std::size_t o = 0; o < cout; ++o) row[o] += pb[o];
                 }
               });
  return Tensor(with_last(x.shape(), cout), std::move(out));
}

void linear_backward(const Tensor& x, const Tensor& w, const Tensor& g, ad::Tape& tape, const Var& vx,
                     const Var& vw, const Var* vb) {
  const std::size_t cin = w.dim(0), cout = w.dim(1), tokens = x.size() / cin;
  if (tape.requires_grad(vx)) {
    std::vector<double> gx(tokens * cin, 0.0);
    parallel_for(tokens, 64, [&](std::size_t t0, std::size_t t1) {
      for (std::size_t t = t0; t < t1; ++t)
        for (std::size_t i = 0; i < cin; ++i) {
          double s = 0.0;
          for (std::size_t o = 0; o < cout; ++o) s += g[t * cout + o] * w[i * cout + o];
          gx[t * cin + i] = s;
        }
    });
    tape.accumulate(vx, gx);
  }
  if (tape.requires_grad(vw)) {
    std::vector<double> gw(cin * cout, 0.0);
    parallel_for(cin, 4, [&](std::size_t i0, std::size_t i1) {
      for (std::size_t t = 0; t < tokens; ++t)
        for (std::size_t i = i0; i < i1; ++i) {
          const double xv = x[t * cin + i];
          for (std::size_t o = 0; o < cout; ++o) gw[i * cout + o] += xv * g[t * cout + o];
        }
    });
    tape.accumulate(vw, gw);
  }
  if (vb && tape.requires_grad(*vb)) {
    std::vector<double> gb(cout, 0.0);
    for (std::size_t t = 0; t < tokens; ++t)
      for (std::size_t o = 0; o < cout; ++o) gb[o] += g[t * cout + o];
    tape.accumulate(*vb, gb);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// linear

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return linear_impl(x, w, &b); }
Tensor linear(const Tensor& x, const Tensor& w) { return linear_impl(x, w, nullptr); }

Var linear(const Var& x, const Var& w, const Var& b) {
  ad::Tape& tape = tape_of(x);
  return tape.record(linear(x.value(), w.value(), b.value()), {x, w, b},
                     [x, w, b](const Tensor& g, ad::Tape& t) {
                       linear_backward(x.value(), w.value(), g, t, x, w, &b);
                     });
}

Var linear(const Var& x, const Var& w) {
  ad::Tape& tape = tape_of(x);
  return tape.record(linear(x.value(), w.value()), {x, w}, [x, w](const Tensor& g, ad::Tape& t) {
    linear_backward(x.value(), w.value(), g, t, x, w, nullptr);
  });
}

// ---------------------------------------------------------------------------
// elementwise

Tensor add(const Tensor& a, const Tensor& b) { return ssmic::add(a, b); }
Var add(const Var& a, const Var& b) {
  return tape_of(a).record(ops::add(a.value(), b.value()), {a, b}, [a, b](const Tensor& g, ad::Tape& t) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) { return ssmic::mul(a, b); }
Var mul(const Var& a, const Var& b) {
  return tape_of(a).record(ops::mul(a.value(), b.value()), {a, b}, [a, b](const Tensor& g, ad::Tape& t) {
    t.accumulate(a, ssmic::mul(g, b.value()));
    t.accumulate(b, ssmic::mul(g, a.value()));
  });
}

Tensor scale(const Tensor& a, double s) { return ssmic::scale(a, s); }
Var scale(const Var& a, double s) {
  return tape_of(a).record(ops::scale(a.value(), s), {a},
                           [a, s](const Tensor& g, ad::Tape& t) { t.accumulate(a, ssmic::scale(g, s)); });
}

Tensor silu(const Tensor& x) { return ssmic::silu(x); }
Var silu(const Var& x) {
  return tape_of(x).record(ops::silu(x.value()), {x}, [x](const Tensor& g, ad::Tape& t) {
    const Tensor& v = x.value();
    std::vector<double> gx(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double s = ssmic::sigmoid(v[i]);
      gx[i] = g[i] * (s + v[i] * s * (1.0 - s));
    }
    t.accumulate(x, gx);
  });
}

Tensor softplus(const Tensor& x) { return ssmic::softplus(x); }
Var softplus(const Var& x) {
  return tape_of(x).record(ops::softplus(x.value()), {x}, [x](const Tensor& g, ad::Tape& t) {
    const Tensor& v = x.value();
    std::vector<double> gx(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) gx[i] = g[i] * ssmic::sigmoid(v[i]);
    t.accumulate(x, gx);
  });
}

Tensor reshape(const Tensor& x, const Shape& shape) { return x.reshape(shape); }
Var reshape(const Var& x, const Shape& shape) {
  return tape_of(x).record(x.value().reshape(shape), {x}, [x](const Tensor& g, ad::Tape& t) {
    t.accumulate(x, g.reshape(x.shape()));
  });
}

// ---------------------------------------------------------------------------
// rms_norm

Tensor rms_norm(const Tensor& x, const Tensor& scale, double eps) {
  const std::size_t c = last_dim(x);
  require_shape(scale, {c}, "rms_norm: scale");
  const std::size_t tokens = x.size() / c;
  std::vector<double> out(x.size());
  for (std::size_t t = 0; t < tokens; ++t) {
    const double* row = x.raw() + t * c;
    double ss = 0.0;
    for (std::size_t i = 0; i < c; ++i) ss += row[i] * row[i];
    const double r = 1.0 / std::sqrt(ss / static_cast<double>(c) + eps);
    for (std::size_t i = 0; i < c; ++i) out[t * c + i] = row[i] * r * scale[i];
  }
  return Tensor(x.shape(), std::move(out));
}

Var rms_norm(const Var& x, const Var& scale, double eps) {
  return tape_of(x).record(
      rms_norm(x.value(), scale.value(), eps), {x, scale}, [x, scale, eps](const Tensor& g, ad::Tape& t) {
        const Tensor& v = x.value();
        const Tensor& s = scale.value();
        const std::size_t c = s.size(), tokens = v.size() / c;
        std::vector<double> gx(v.size()), gs(c, 0.0);
        for (std::size_t k = 0; k < tokens; ++k) {
          const double* row = v.raw() + k * c;
          double ss = 0.0;
          for (std::size_t i = 0; i < c; ++i) ss += row[i] * row[i];
          const double r = 1.0 / std::sqrt(ss / static_cast<double>(c) + eps);
          double dot = 0.0;
          for (std::size_t i = 0; i < c; ++i) {
            dot += s[i] * g[k * c + i] * row[i];
            gs[i] += g[k * c + i] * row[i] * r;
          }
          const double coef = r * r * r * dot / static_cast<double>(c);
          for (std::size_t i = 0; i < c; ++i) gx[k * c + i] = r * s[i] * g[k * c + i] - coef * row[i];
        }
        t.accumulate(x, gx);
        t.accumulate(scale, gs);
      });
}

// ---------------------------------------------------------------------------
// depthwise convolution

Tensor dwconv(const Tensor& x, const Tensor& kernel) { return conv2d_depthwise(x, kernel); }

Var dwconv(const Var& x, const Var& kernel) {
  return tape_of(x).record(dwconv(x.value(), kernel.value()), {x, kernel}, [x, kernel](const Tensor& g, ad::Tape& t) {
    const Tensor& v = x.value();
    const Tensor& kw = kernel.value();
    const std::size_t H = v.dim(0), W = v.dim(1), C = v.dim(2), k = kw.dim(0);
    const long r = static_cast<long>(k / 2);
    std::vector<double> gx(v.size(), 0.0), gk(kw.size(), 0.0);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx) {
        const double* go = g.raw() + (y * W + xx) * C;
        for (long dy = -r; dy <= r; ++dy) {
          const long sy = static_cast<long>(y) + dy;
          if (sy < 0 || sy >= static_cast<long>(H)) continue;
          for (long dx = -r; dx <= r; ++dx) {
            const long sx = static_cast<long>(xx) + dx;
            if (sx < 0 || sx >= static_cast<long>(W)) continue;
            const std::size_t in = (static_cast<std::size_t>(sy) * W + static_cast<std::size_t>(sx)) * C;
            const std::size_t kk = (static_cast<std::size_t>(dy + r) * k + static_cast<std::size_t>(dx + r)) * C;
            for (std::size_t c = 0; c < C; ++c) {
              gx[in + c] += go[c] * kw[kk + c];
              gk[kk + c] += go[c] * v[in + c];
            }
          }
        }
      }
    t.accumulate(x, gx);
    t.accumulate(kernel, gk);
  });
}

// ---------------------------------------------------------------------------
// gather

Tensor gather(const Tensor& x, const IndexMap& index, const Shape& out_shape) {
  require(numel(out_shape) == index.size(), ErrorCode::kShapeMismatch, "gather: index/shape mismatch");
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    require(index[i] < x.size(), ErrorCode::kShapeMismatch, "gather: index out of range");
    out[i] = x[index[i]];
  }
  return Tensor(out_shape, std::move(out));
}

Var gather(const Var& x, const IndexMap& index, const Shape& out_shape) {
  return tape_of(x).record(gather(x.value(), index, out_shape), {x}, [x, index](const Tensor& g, ad::Tape& t) {
    std::vector<double> gx(x.value().size(), 0.0);
    for (std::size_t i = 0; i < index.size(); ++i) gx[index[i]] += g[i];
    t.accumulate(x, gx);
  });
}

// ---------------------------------------------------------------------------
// selective scan

Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& b, const Tensor& c,
                      const Tensor& a_log, const Tensor& d_skip, ssm::ScanDiscretization mode) {
  return ssm::selective_scan({x, delta, b, c, a_log, d_skip}, mode);
}

Var selective_scan(const Var& x, const Var& delta, const Var& b, const Var& c, const Var& a_log,
                   const Var& d_skip, ssm::ScanDiscretization mode) {
  return tape_of(x).record(
      selective_scan(x.value(), delta.value(), b.value(), c.value(), a_log.value(), d_skip.value(), mode),
      {x, delta, b, c, a_log, d_skip}, [=](const Tensor& g, ad::Tape& t) {
        const ssm::SelectiveScanGrads gr = ssm::selective_scan_backward(
            {x.value(), delta.value(), b.value(), c.value(), a_log.value(), d_skip.value()}, g, mode);
        t.accumulate(x, gr.x);
        t.accumulate(delta, gr.delta);
        t.accumulate(b, gr.b);
        t.accumulate(c, gr.c);
        t.accumulate(a_log, gr.a_log);
        t.accumulate(d_skip, gr.d_skip);
      });
}

// ---------------------------------------------------------------------------
// masked (causal) convolution

namespace {

void masked_conv_check(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.rank() == 3, ErrorCode::kShapeMismatch, "masked_conv2d: input must be H x W x C");
  require(w.rank() == 4 && w.dim(0) == w.dim(1) && w.dim(0) % 2 == 1, ErrorCode::kShapeMismatch,
          "masked_conv2d: weight must be k x k x C_in x C_out with odd k, got " + shape_str(w.shape()));
  require(w.dim(2) == x.dim(2), ErrorCode::kShapeMismatch, "masked_conv2d: channel mismatch");
  require_shape(b, {w.dim(3)}, "masked_conv2d: bias");
}

}  // namespace

Tensor masked_conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
  masked_conv_check(x, w, b);
  const std::size_t H = x.dim(0), W = x.dim(1), cout = w.dim(3);
  entropy::ContextParams p{w, b};
  std::vector<double> out(H * W * cout);
  parallel_for(H, 4, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t r = r0; r < r1; ++r)
      for (std::size_t c = 0; c < W; ++c)
        entropy::context_at(x.data(), H, W, p, r, c, std::span<double>(out.data() + (r * W + c) * cout, cout));
  });
  return Tensor({H, W, cout}, std::move(out));
}

Var masked_conv2d(const Var& x, const Var& w, const Var& b) {
  return tape_of(x).record(masked_conv2d(x.value(), w.value(), b.value()), {x, w, b},
                           [x, w, b](const Tensor& g, ad::Tape& t) {
    const Tensor& v = x.value();
    const Tensor& kw = w.value();
    const std::size_t H = v.dim(0), W = v.dim(1), cin = kw.dim(2), cout = kw.dim(3), k = kw.dim(0);
    const long r = static_cast<long>(k / 2);
    std::vector<double> gx(v.size(), 0.0), gw(kw.size(), 0.0), gb(cout, 0.0);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx) {
        const double* go = g.raw() + (y * W + xx) * cout;
        for (std::size_t o = 0; o < cout; ++o) gb[o] += go[o];
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx) {
            if (!entropy::causal_tap(ky, kx, k)) continue;
            const long sy = static_cast<long>(y) + static_cast<long>(ky) - r;
            const long sx = static_cast<long>(xx) + static_cast<long>(kx) - r;
            if (sy < 0 || sy >= static_cast<long>(H) || sx < 0 || sx >= static_cast<long>(W)) continue;
            const std::size_t in = (static_cast<std::size_t>(sy) * W + static_cast<std::size_t>(sx)) * cin;
            const std::size_t tap = (ky * k + kx) * cin * cout;
            for (std::size_t i = 0; i < cin; ++i) {
              double acc = 0.0;
              for (std::size_t o = 0; o < cout; ++o) {
                acc += go[o] * kw[tap + i * cout + o];
                gw[tap + i * cout + o] += go[o] * v[in + i];
              }
              gx[in + i] += acc;
            }
          }
      }
    t.accumulate(x, gx);
    t.accumulate(w, gw);
    t.accumulate(b, gb);
  });
}

// ---------------------------------------------------------------------------
// channel concat / slice

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const std::size_t ca = last_dim(a), cb = last_dim(b);
  require(a.size() / ca == b.size() / cb && Shape(a.shape().begin(), a.shape().end() - 1) ==
                                                 Shape(b.shape().begin(), b.shape().end() - 1),
          ErrorCode::kShapeMismatch,
          "concat_channels: misaligned " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t tokens = a.size() / ca, c = ca + cb;
  std::vector<double> out(tokens * c);
  for (std::size_t t = 0; t < tokens; ++t) {
    for (std::size_t i = 0; i < ca; ++i) out[t * c + i] = a[t * ca + i];
    for (std::size_t i = 0; i < cb; ++i) out[t * c + ca + i] = b[t * cb + i];
  }
  return Tensor(with_last(a.shape(), c), std::move(out));
}

Var concat_channels(const Var& a, const Var& b) {
  return tape_of(a).record(concat_channels(a.value(), b.value()), {a, b}, [a, b](const Tensor& g, ad::Tape& t) {
    const std::size_t ca = a.shape().back(), cb = b.shape().back(), c = ca + cb;
    t.accumulate(a, slice_channels(g, 0, ca));
    t.accumulate(b, slice_channels(g, ca, c));
  });
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end) {
  const std::size_t c = last_dim(x);
  require(begin < end && end <= c, ErrorCode::kShapeMismatch, "slice_channels: bad range");
  const std::size_t tokens = x.size() / c, w = end - begin;
  std::vector<double> out(tokens * w);
  for (std::size_t t = 0; t < tokens; ++t)
    for (std::size_t i = 0; i < w; ++i) out[t * w + i] = x[t * c + begin + i];
  return Tensor(with_last(x.shape(), w), std::move(out));
}

Var slice_channels(const Var& x, std::size_t begin, std::size_t end) {
  return tape_of(x).record(slice_channels(x.value(), begin, end), {x}, [x, begin, end](const Tensor& g, ad::Tape& t) {
    const std::size_t c = x.shape().back(), w = end - begin, tokens = g.size() / w;
    std::vector<double> gx(x.value().size(), 0.0);
    for (std::size_t k = 0; k < tokens; ++k)
      for (std::size_t i = 0; i < w; ++i) gx[k * c + begin + i] = g[k * w + i];
    t.accumulate(x, gx);
  });
}

// ---------------------------------------------------------------------------
// bounds, likelihoods, reductions

Tensor lower_bound(const Tensor& x, double bound) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::max(x[i], bound);
  return Tensor(x.shape(), std::move(out));
}

Var lower_bound(const Var& x, double bound) {
  return tape_of(x).record(lower_bound(x.value(), bound), {x}, [x, bound](const Tensor& g, ad::Tape& t) {
    std::vector<double> gx(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = x.value()[i] > bound ? g[i] : 0.0;
    t.accumulate(x, gx);
  });
}

Tensor gaussian_likelihood(const Tensor& y, const Tensor& mu, const Tensor& sigma) {
  return entropy::gaussian_likelihood(y, mu, sigma);
}

Var gaussian_likelihood(const Var& y, const Var& mu, const Var& sigma) {
  return tape_of(y).record(gaussian_likelihood(y.value(), mu.value(), sigma.value()), {y, mu, sigma},
                           [y, mu, sigma](const Tensor& g, ad::Tape& t) {
                             const entropy::GaussianGrads gr =
                                 entropy::gaussian_likelihood_backward(y.value(), mu.value(), sigma.value(), g);
                             t.accumulate(y, gr.y);
                             t.accumulate(mu, gr.mu);
                             t.accumulate(sigma, gr.sigma);
                           });
}

Tensor factorized_likelihood(const Tensor& z, std::span<const Tensor> matrices, std::span<const Tensor> biases,
                             std::span<const Tensor> factors) {
  entropy::FactorizedPrior prior{{matrices.begin(), matrices.end()},
                                 {biases.begin(), biases.end()},
                                 {factors.begin(), factors.end()}};
  return entropy::factorized_likelihood(z, prior);
}

Var factorized_likelihood(const Var& z, std::span<const Var> matrices, std::span<const Var> biases,
                          std::span<const Var> factors) {
  std::vector<Var> parents{z};
  parents.insert(parents.end(), matrices.begin(), matrices.end());
  parents.insert(parents.end(), biases.begin(), biases.end());
  parents.insert(parents.end(), factors.begin(), factors.end());
  entropy::FactorizedPrior prior{values(matrices), values(biases), values(factors)};
  std::vector<Var> mv(matrices.begin(), matrices.end()), bv(biases.begin(), biases.end()),
      fv(factors.begin(), factors.end());
  return tape_of(z).record(entropy::factorized_likelihood(z.value(), prior), parents,
                           [z, prior, mv, bv, fv](const Tensor& g, ad::Tape& t) {
                             const entropy::FactorizedGrads gr =
                                 entropy::factorized_likelihood_backward(z.value(), prior, g);
                             t.accumulate(z, gr.z);
                             for (std::size_t k = 0; k < mv.size(); ++k) t.accumulate(mv[k], gr.matrices[k]);
                             for (std::size_t k = 0; k < bv.size(); ++k) t.accumulate(bv[k], gr.biases[k]);
                             for (std::size_t k = 0; k < fv.size(); ++k) t.accumulate(fv[k], gr.factors[k]);
                           });
}

Tensor sum_neg_log2(const Tensor& p) { return Tensor::scalar(entropy::rate_estimate(p)); }

Var sum_neg_log2(const Var& p) {
  return tape_of(p).record(sum_neg_log2(p.value()), {p}, [p](const Tensor& g, ad::Tape& t) {
    const Tensor& v = p.value();
    std::vector<double> gp(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) gp[i] = -g[0] / (v[i] * std::numbers::ln2);
    t.accumulate(p, gp);
  });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require(same_shape(a, b), ErrorCode::kShapeMismatch,
          "mse: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return Tensor::scalar(s / static_cast<double>(a.size()));
}

Var mse(const Var& a, const Var& b) {
  return tape_of(a).record(mse(a.value(), b.value()), {a, b}, [a, b](const Tensor& g, ad::Tape& t) {
    const Tensor& va = a.value();
    const Tensor& vb = b.value();
    const double k = 2.0 * g[0] / static_cast<double>(va.size());
    std::vector<double> ga(va.size()), gb(va.size());
    for (std::size_t i = 0; i < va.size(); ++i) {
      ga[i] = k * (va[i] - vb[i]);
      gb[i] = -ga[i];
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

}  // namespace ssmic::ops
