#include "kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ddvkit/error.hpp"

namespace ddv::detail {
namespace {

void dense_forward(const Layer& l, std::span<const float> x, std::span<float> y) {
  const float* w = l.weights.data().data();
  for (std::size_t o = 0; o < l.out_features; ++o) {
    const float* row = w + o * l.in_features;
    double acc = l.bias[o];
    for (std::size_t i = 0; i < l.in_features; ++i) acc += static_cast<double>(row[i]) * x[i];
    y[o] = static_cast<float>(acc);
  }
}

void dense_backward(const Layer& l, std::span<const float> x, std::span<const float> dy,
                    std::vector<double>* dw, std::vector<double>* db, std::span<float> dx) {
  const float* w = l.weights.data().data();
  if (!dx.empty()) {
    std::vector<double> acc(l.in_features, 0.0);
    for (std::size_t o = 0; o < l.out_features; ++o) {
      const double g = dy[o];
      if (g == 0.0) continue;
      const float* row = w + o * l.in_features;
      for (std::size_t i = 0; i < l.in_features; ++i) acc[i] += g * row[i];
    }
    for (std::size_t i = 0; i < l.in_features; ++i) dx[i] = static_cast<float>(acc[i]);
  }
  if (dw) {
    for (std::size_t o = 0; o < l.out_features; ++o) {
      const double g = dy[o];
      (*db)[o] += g;
      if (g == 0.0) continue;
      double* drow = dw->data() + o * l.in_features;
      for (std::size_t i = 0; i < l.in_features; ++i) drow[i] += g * x[i];
    }
  }
}

struct ConvGeom {
  std::size_t ic, ih, iw, oc, oh, ow, k, s, p;
};

ConvGeom geometry(const Layer& l, const Shape& in, const Shape& out) {
  return {in[0], in[1], in[2], out[0], out[1], out[2], l.kernel, l.stride, l.padding};
}

// Valid output range [lo, hi) along one axis for kernel offset `kofs`.
std::pair<std::ptrdiff_t, std::ptrdiff_t> valid_range(std::ptrdiff_t in, std::ptrdiff_t out, std::ptrdiff_t s,
                                                      std::ptrdiff_t p, std::ptrdiff_t kofs) {
  const std::ptrdiff_t lo = p > kofs ? (p - kofs + s - 1) / s : 0;
  const std::ptrdiff_t last = in - 1 + p - kofs;
  const std::ptrdiff_t hi = last < 0 ? 0 : std::min(out, last / s + 1);
  return {lo, std::max(lo, hi)};
}

// Per output: bias, then ic, ky, kx in order, so results do not depend on
// the loop nest below.
void conv_forward(const Layer& l, const ConvGeom& g, std::span<const float> x,
                  std::span<float> y) {
  const float* w = l.weights.data().data();
  thread_local std::vector<double> acc;
  acc.resize(g.oh * g.ow);
  const auto s = static_cast<std::ptrdiff_t>(g.s);
  const auto p = static_cast<std::ptrdiff_t>(g.p);
  for (std::size_t oc = 0; oc < g.oc; ++oc) {
    std::fill(acc.begin(), acc.end(), static_cast<double>(l.bias[oc]));
    for (std::size_t ic = 0; ic < g.ic; ++ic) {
      const float* wk = w + ((oc * g.ic + ic) * g.k) * g.k;
      const float* xc = x.data() + ic * g.ih * g.iw;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        const auto [y0, y1] = valid_range(static_cast<std::ptrdiff_t>(g.ih), static_cast<std::ptrdiff_t>(g.oh), s,
                                          p, static_cast<std::ptrdiff_t>(ky));
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const auto [x0, x1] = valid_range(static_cast<std::ptrdiff_t>(g.iw), static_cast<std::ptrdiff_t>(g.ow),
                                            s, p, static_cast<std::ptrdiff_t>(kx));
          const double wv = wk[ky * g.k + kx];
          for (std::ptrdiff_t oy = y0; oy < y1; ++oy) {
            const float* xr = xc + (oy * s + static_cast<std::ptrdiff_t>(ky) - p) * static_cast<std::ptrdiff_t>(g.iw) +
                              static_cast<std::ptrdiff_t>(kx) - p;
            double* ar = acc.data() + oy * static_cast<std::ptrdiff_t>(g.ow);
            if (s == 1) {
              for (std::ptrdiff_t ox = x0; ox < x1; ++ox) ar[ox] += wv * xr[ox];
            } else {
              for (std::ptrdiff_t ox = x0; ox < x1; ++ox) ar[ox] += wv * xr[ox * s];
            }
          }
        }
      }
    }
    float* yo = y.data() + oc * g.oh * g.ow;
    for (std::size_t i = 0; i < acc.size(); ++i) yo[i] = static_cast<float>(acc[i]);
  }
}

void conv_backward(const Layer& l, const ConvGeom& g, std::span<const float> x,
                   std::span<const float> dy, std::vector<double>* dw, std::vector<double>* db,
                   std::span<float> dx) {
  const float* w = l.weights.data().data();
  std::vector<double> dxa;
  if (!dx.empty()) dxa.assign(dx.size(), 0.0);
  for (std::size_t oc = 0; oc < g.oc; ++oc) {
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        const double grad = dy[(oc * g.oh + oy) * g.ow + ox];
        if (dw) (*db)[oc] += grad;
        if (grad == 0.0) continue;
        for (std::size_t ic = 0; ic < g.ic; ++ic) {
          const std::size_t wbase = ((oc * g.ic + ic) * g.k) * g.k;
          const std::size_t xbase = ic * g.ih * g.iw;
          for (std::size_t ky = 0; ky < g.k; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.s + ky) -
                                      static_cast<std::ptrdiff_t>(g.p);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.ih)) continue;
            for (std::size_t kx = 0; kx < g.k; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.s + kx) -
                                        static_cast<std::ptrdiff_t>(g.p);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.iw)) continue;
              const std::size_t xi =
                  xbase + static_cast<std::size_t>(iy) * g.iw + static_cast<std::size_t>(ix);
              const std::size_t wi = wbase + ky * g.k + kx;
              if (dw) (*dw)[wi] += grad * x[xi];
              if (!dxa.empty()) dxa[xi] += grad * w[wi];
            }
          }
        }
      }
    }
  }
  for (std::size_t i = 0; i < dxa.size(); ++i) dx[i] = static_cast<float>(dxa[i]);
}

void maxpool_forward(const Layer& l, const Shape& in, const Shape& out, std::span<const float> x,
                     std::span<float> y, std::vector<std::uint32_t>& argmax) {
  argmax.resize(y.size());
  for (std::size_t c = 0; c < out[0]; ++c) {
    for (std::size_t oy = 0; oy < out[1]; ++oy) {
      for (std::size_t ox = 0; ox < out[2]; ++ox) {
        std::size_t best = (c * in[1] + oy * l.pool) * in[2] + ox * l.pool;
        for (std::size_t py = 0; py < l.pool; ++py) {
          for (std::size_t px = 0; px < l.pool; ++px) {
            const std::size_t xi = (c * in[1] + oy * l.pool + py) * in[2] + ox * l.pool + px;
            if (x[xi] > x[best]) best = xi;
          }
        }
        const std::size_t yi = (c * out[1] + oy) * out[2] + ox;
        y[yi] = x[best];
        argmax[yi] = static_cast<std::uint32_t>(best);
      }
    }
  }
}

void softmax_forward(std::span<const float> x, std::span<float> y) {
  const float mx = *std::max_element(x.begin(), x.end());
  double sum = 0.0;
  std::vector<double> e(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    e[i] = std::exp(static_cast<double>(x[i]) - mx);
    sum += e[i];
  }
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = static_cast<float>(e[i] / sum);
}

}  // namespace

void ParamGrads::reset(const Model& model) {
  const auto& layers = model.layers();
  weights.resize(layers.size());
  bias.resize(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    weights[i].assign(layers[i].weights.size(), 0.0);
    bias[i].assign(layers[i].bias.size(), 0.0);
  }
}

void forward_sample(const Model& model, std::span<const float> x, std::size_t last,
                    Trace& trace) {
  const auto& layers = model.layers();
  const auto& shapes = model.activation_shapes();
  trace.acts.resize(last + 2);
  trace.argmax.resize(last + 1);
  trace.acts[0].assign(x.begin(), x.end());
  for (std::size_t i = 0; i <= last; ++i) {
    const Layer& l = layers[i];
    const Shape& in_shape = i == 0 ? model.input_shape() : shapes[i - 1];
    const auto& in = trace.acts[i];
    auto& out = trace.acts[i + 1];
    out.assign(numel(shapes[i]), 0.0f);
    switch (l.kind) {
      case LayerKind::dense: dense_forward(l, in, out); break;
      case LayerKind::conv2d: conv_forward(l, geometry(l, in_shape, shapes[i]), in, out); break;
      case LayerKind::relu:
        for (std::size_t k = 0; k < in.size(); ++k) out[k] = in[k] > 0.0f ? in[k] : 0.0f;
        break;
      case LayerKind::maxpool:
        maxpool_forward(l, in_shape, shapes[i], in, out, trace.argmax[i]);
        break;
      case LayerKind::softmax: softmax_forward(in, out); break;
    }
  }
}

void backward_sample(const Model& model, const Trace& trace, std::size_t top,
                     std::span<const float> grad_top, ParamGrads* grads,
                     const std::vector<bool>* trainable, std::span<float> dinput,
                     const Injection* injection) {
  const auto& layers = model.layers();
  const auto& shapes = model.activation_shapes();
  std::vector<float> dy(grad_top.begin(), grad_top.end());
  std::vector<float> dx;
  // Lowest layer whose input gradient is needed.
  std::size_t stop = 0;
  if (dinput.empty()) {
    stop = top + 1;
    for (std::size_t i = 0; i <= top; ++i) {
      if (layers[i].has_params() && (!trainable || (*trainable)[i])) {
        stop = i;
        break;
      }
    }
  }
  for (std::size_t i = top + 1; i-- > stop;) {
    if (injection && injection->layer == i) {
      for (std::size_t k = 0; k < dy.size(); ++k) dy[k] += injection->grad[k];
    }
    const Layer& l = layers[i];
    const Shape& in_shape = i == 0 ? model.input_shape() : shapes[i - 1];
    const auto& in = trace.acts[i];
    const auto& out = trace.acts[i + 1];
    const bool need_dx = i > stop || !dinput.empty();
    dx.assign(need_dx ? in.size() : 0, 0.0f);
    const bool accumulate = grads && l.has_params() && (!trainable || (*trainable)[i]);
    std::vector<double>* dw = accumulate ? &grads->weights[i] : nullptr;
    std::vector<double>* db = accumulate ? &grads->bias[i] : nullptr;
    switch (l.kind) {
      case LayerKind::dense: dense_backward(l, in, dy, dw, db, dx); break;
      case LayerKind::conv2d:
        conv_backward(l, geometry(l, in_shape, shapes[i]), in, dy, dw, db, dx);
        break;
      case LayerKind::relu:
        for (std::size_t k = 0; k < dx.size(); ++k) dx[k] = in[k] > 0.0f ? dy[k] : 0.0f;
        break;
      case LayerKind::maxpool:
        for (std::size_t k = 0; k < dy.size() && !dx.empty(); ++k) {
          dx[trace.argmax[i][k]] += dy[k];
        }
        break;
      case LayerKind::softmax: {
        double inner = 0.0;
        for (std::size_t k = 0; k < dy.size(); ++k) inner += static_cast<double>(dy[k]) * out[k];
        for (std::size_t k = 0; k < dx.size(); ++k) {
          dx[k] = static_cast<float>(out[k] * (dy[k] - inner));
        }
        break;
      }
    }
    if (!need_dx) break;
    dy.swap(dx);
  }
  if (!dinput.empty()) std::copy(dy.begin(), dy.end(), dinput.begin());
}

void check_batch(const Model& model, const Tensor& batch) {
  const Shape& want = model.input_shape();
  const Shape& got = batch.shape();
  const bool ok = got.size() == want.size() + 1 && std::equal(want.begin(), want.end(), got.begin() + 1);
  if (!ok) {
    throw ShapeError("model '" + model.id() + "': batch shape " + to_string(got) +
                     " does not match [n]+" + to_string(want) + " expected by layer 0 (" +
                     std::string(to_string(model.layers().front().kind)) + ")");
  }
}

Tensor run_forward(const Model& model, const Tensor& batch, std::size_t last) {
  check_batch(model, batch);
  const std::size_t n = batch.rows();
  const Shape& out_shape = model.activation_shapes()[last];
  Tensor out(batched(n, out_shape));
  Trace trace;
  for (std::size_t s = 0; s < n; ++s) {
    forward_sample(model, batch.row(s), last, trace);
    std::copy(trace.acts[last + 1].begin(), trace.acts[last + 1].end(), out.row(s).begin());
  }
  return out;
}

}  // namespace ddv::detail
