#include "prl/ops.hpp"

#include <algorithm>
#include <cmath>

namespace prl {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

template <typename F>
Tensor elementwise(const Tensor& input, F&& f, std::function<void(detail::Node&)> bw) {
  auto in = input.data();
  std::vector<double> out(in.size());
  std::transform(in.begin(), in.end(), out.begin(), f);
  return Tensor::make_result(input.shape(), std::move(out), {input}, std::move(bw));
}

}  // namespace

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "linear");
  require_rank(weight, 2, "linear");
  const std::size_t batch = input.dim(0), in = input.dim(1), out = weight.dim(1);
  if (weight.dim(0) != in || bias.numel() != out) {
    throw DimensionError("linear: input " + shape_string(input.shape()) + " incompatible with weight " +
                         shape_string(weight.shape()) + " and bias " + shape_string(bias.shape()));
  }
  const auto x = input.data();
  const auto w = weight.data();
  const auto b = bias.data();
  std::vector<double> y(batch * out);
  for (std::size_t r = 0; r < batch; ++r) {
    double* yr = y.data() + r * out;
    std::copy(b.begin(), b.end(), yr);
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = x[r * in + i];
      if (xi == 0.0) continue;
      const double* wi = w.data() + i * out;
      for (std::size_t o = 0; o < out; ++o) yr[o] += xi * wi[o];
    }
  }
  return Tensor::make_result({batch, out}, std::move(y), {input, weight, bias},
                             [batch, in, out](detail::Node& self) {
    auto& xn = *self.parents[0];
    auto& wn = *self.parents[1];
    auto& bn = *self.parents[2];
    const auto& gy = self.grad;
    if (xn.requires_grad) {
      auto& gx = xn.ensure_grad();
      for (std::size_t r = 0; r < batch; ++r) {
        const double* gyr = gy.data() + r * out;
        for (std::size_t i = 0; i < in; ++i) {
          const double* wi = wn.data.data() + i * out;
          double acc = 0.0;
          for (std::size_t o = 0; o < out; ++o) acc += gyr[o] * wi[o];
          gx[r * in + i] += acc;
        }
      }
    }
    if (wn.requires_grad) {
      auto& gw = wn.ensure_grad();
      for (std::size_t r = 0; r < batch; ++r) {
        const double* gyr = gy.data() + r * out;
        for (std::size_t i = 0; i < in; ++i) {
          const double xi = xn.data[r * in + i];
          if (xi == 0.0) continue;
          double* gwi = gw.data() + i * out;
          for (std::size_t o = 0; o < out; ++o) gwi[o] += xi * gyr[o];
        }
      }
    }
    if (bn.requires_grad) {
      auto& gb = bn.ensure_grad();
      for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t o = 0; o < out; ++o) gb[o] += gy[r * out + o];
      }
    }
  });
}

Tensor relu(const Tensor& input) {
  return elementwise(input, [](double v) { return v > 0.0 ? v : 0.0; }, [](detail::Node& self) {
    auto& xn = *self.parents[0];
    auto& gx = xn.ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xn.data[i] > 0.0) gx[i] += self.grad[i];
    }
  });
}

Tensor sigmoid(const Tensor& input) {
  auto fn = [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  return elementwise(input, fn, [](detail::Node& self) {
    auto& gx = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double s = self.data[i];
      gx[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

Tensor layer_norm(const Tensor& input, double epsilon) {
  require_rank(input, 2, "layer_norm");
  const std::size_t rows = input.dim(0), n = input.dim(1);
  const auto x = input.data();
  std::vector<double> y(x.size());
  std::vector<double> sigma(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * n;
    // Shifted by the first element so a constant row has mean == x exactly.
    double shift = 0.0;
    for (std::size_t i = 0; i < n; ++i) shift += xr[i] - xr[0];
    const double mean = xr[0] + shift / static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= static_cast<double>(n);
    sigma[r] = std::sqrt(var);
    const double denom = sigma[r] + epsilon;
    for (std::size_t i = 0; i < n; ++i) y[r * n + i] = (xr[i] - mean) / denom;
  }
  return Tensor::make_result(input.shape(), std::move(y), {input},
                             [rows, n, epsilon, sigma = std::move(sigma)](detail::Node& self) {
    auto& gx = self.parents[0]->ensure_grad();
    const double nd = static_cast<double>(n);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = self.grad.data() + r * n;
      const double* yr = self.data.data() + r * n;
      const double denom = sigma[r] + epsilon;
      double g_mean = 0.0, g_dot_y = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        g_mean += g[i];
        g_dot_y += g[i] * yr[i];
      }
      g_mean /= nd;
      // y = xc / (sigma + eps); d sigma / d x_j = xc_j / (n sigma).
      // With xc = y * denom the sigma term reduces to y_j * denom * sum(g y) / (n sigma).
      const double sigma_term = sigma[r] > 0.0 ? g_dot_y * denom / (nd * sigma[r]) : 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        gx[r * n + i] += (g[i] - g_mean - yr[i] * sigma_term) / denom;
      }
    }
  });
}

Tensor batch_norm(const Tensor& input, BatchNormState& state, const Tensor& gain, const Tensor& bias,
                  Mode mode, double epsilon) {
  require_rank(input, 4, "batch_norm");
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  if (gain.numel() != channels || bias.numel() != channels || state.running_mean.size() != channels ||
      state.running_var.size() != channels) {
    throw DimensionError("batch_norm: channel count " + std::to_string(channels) +
                         " does not match gain " + shape_string(gain.shape()));
  }
  if (mode == Mode::train && batch < 2) {
    throw ValidationError("batch_norm: train mode needs a batch of at least 2, got " +
                          std::to_string(batch));
  }
  const auto x = input.data();
  const auto gm = gain.data();
  const auto bs = bias.data();
  const double count = static_cast<double>(batch * plane);
  std::vector<double> mean(channels), inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double mu, var;
    if (mode == Mode::train) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* p = x.data() + (b * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      mu = s / count;
      double ss = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* p = x.data() + (b * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      var = ss / count;
      // Running variance tracks the unbiased estimate.
      const double unbiased = count > 1.0 ? ss / (count - 1.0) : var;
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mu;
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    } else {
      mu = state.running_mean[c];
      var = state.running_var[c];
    }
    mean[c] = mu;
    inv_std[c] = 1.0 / std::sqrt(var + epsilon);
  }
  std::vector<double> xhat(x.size()), y(x.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (b * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        xhat[base + i] = (x[base + i] - mean[c]) * inv_std[c];
        y[base + i] = gm[c] * xhat[base + i] + bs[c];
      }
    }
  }
  const bool train = mode == Mode::train;
  return Tensor::make_result(
      input.shape(), std::move(y), {input, gain, bias},
      [batch, channels, plane, count, train, inv_std = std::move(inv_std),
       xhat = std::move(xhat)](detail::Node& self) {
        auto& xn = *self.parents[0];
        auto& gn = *self.parents[1];
        auto& bn = *self.parents[2];
        const auto& gy = self.grad;
        std::vector<double> sum_g(channels, 0.0), sum_gx(channels, 0.0);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (b * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_g[c] += gy[base + i];
              sum_gx[c] += gy[base + i] * xhat[base + i];
            }
          }
        }
        if (gn.requires_grad) {
          auto& gg = gn.ensure_grad();
          for (std::size_t c = 0; c < channels; ++c) gg[c] += sum_gx[c];
        }
        if (bn.requires_grad) {
          auto& gb = bn.ensure_grad();
          for (std::size_t c = 0; c < channels; ++c) gb[c] += sum_g[c];
        }
        if (!xn.requires_grad) return;
        auto& gx = xn.ensure_grad();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (b * channels + c) * plane;
            const double scale = gn.data[c] * inv_std[c];
            for (std::size_t i = 0; i < plane; ++i) {
              if (train) {
                gx[base + i] += scale * (gy[base + i] - sum_g[c] / count -
                                         xhat[base + i] * sum_gx[c] / count);
              } else {
                gx[base + i] += scale * gy[base + i];
              }
            }
          }
        }
      });
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank(input, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  if (stride == 0) throw ValidationError("conv2d: stride must be positive");
  const std::size_t batch = input.dim(0), cin = input.dim(1), height = input.dim(2), width = input.dim(3);
  const std::size_t cout = weight.dim(0), kernel = weight.dim(2);
  if (weight.dim(1) != cin || weight.dim(3) != kernel || bias.numel() != cout) {
    throw DimensionError("conv2d: input " + shape_string(input.shape()) + " incompatible with weight " +
                         shape_string(weight.shape()));
  }
  if (kernel > height + 2 * padding || kernel > width + 2 * padding) {
    throw DimensionError("conv2d: kernel " + shape_string(weight.shape()) + " larger than padded input " +
                         shape_string(input.shape()));
  }
  const std::size_t oh = (height + 2 * padding - kernel) / stride + 1;
  const std::size_t ow = (width + 2 * padding - kernel) / stride + 1;
  const auto x = input.data();
  const auto w = weight.data();
  const auto bs = bias.data();
  std::vector<double> y(batch * cout * oh * ow);

  // Visits every (output pixel, input pixel, weight) triple of one channel pair.
  auto for_taps = [=](std::size_t kh, std::size_t kw, auto&& body) {
    for (std::size_t r = 0; r < oh; ++r) {
      const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(r * stride + kh) - static_cast<std::ptrdiff_t>(padding);
      if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(height)) continue;
      for (std::size_t c = 0; c < ow; ++c) {
        const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(c * stride + kw) - static_cast<std::ptrdiff_t>(padding);
        if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(width)) continue;
        body(r * ow + c, static_cast<std::size_t>(ih) * width + static_cast<std::size_t>(iw));
      }
    }
  };

  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      double* out = y.data() + (b * cout + co) * oh * ow;
      std::fill(out, out + oh * ow, bs[co]);
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* in = x.data() + (b * cin + ci) * height * width;
        for (std::size_t kh = 0; kh < kernel; ++kh) {
          for (std::size_t kw = 0; kw < kernel; ++kw) {
            const double wv = w[((co * cin + ci) * kernel + kh) * kernel + kw];
            for_taps(kh, kw, [&](std::size_t o, std::size_t i) { out[o] += wv * in[i]; });
          }
        }
      }
    }
  }

  return Tensor::make_result(
      {batch, cout, oh, ow}, std::move(y), {input, weight, bias},
      [=](detail::Node& self) {
        auto& xn = *self.parents[0];
        auto& wn = *self.parents[1];
        auto& bn = *self.parents[2];
        const auto& gy = self.grad;
        std::vector<double>* gx = xn.requires_grad ? &xn.ensure_grad() : nullptr;
        std::vector<double>* gw = wn.requires_grad ? &wn.ensure_grad() : nullptr;
        std::vector<double>* gb = bn.requires_grad ? &bn.ensure_grad() : nullptr;
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t co = 0; co < cout; ++co) {
            const double* g = gy.data() + (b * cout + co) * oh * ow;
            if (gb) {
              double s = 0.0;
              for (std::size_t o = 0; o < oh * ow; ++o) s += g[o];
              (*gb)[co] += s;
            }
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const std::size_t in_base = (b * cin + ci) * height * width;
              const double* in = xn.data.data() + in_base;
              for (std::size_t kh = 0; kh < kernel; ++kh) {
                for (std::size_t kw = 0; kw < kernel; ++kw) {
                  const std::size_t widx = ((co * cin + ci) * kernel + kh) * kernel + kw;
                  const double wv = wn.data[widx];
                  double gwv = 0.0;
                  for_taps(kh, kw, [&](std::size_t o, std::size_t i) {
                    gwv += g[o] * in[i];
                    if (gx) (*gx)[in_base + i] += g[o] * wv;
                  });
                  if (gw) (*gw)[widx] += gwv;
                }
              }
            }
          }
        }
      });
}

Tensor bce_loss(const Tensor& prediction, const Tensor& target, const std::optional<Tensor>& weight_mask) {
  require_same_shape(prediction, target, "bce_loss");
  if (weight_mask) require_same_shape(prediction, *weight_mask, "bce_loss");
  const auto p = prediction.data();
  const auto t = target.data();
  for (double v : t) {
    if (v != 0.0 && v != 1.0) throw ValidationError("bce_loss: target values must be 0 or 1");
  }
  const std::size_t n = p.size();
  std::vector<double> weights = weight_mask ? std::vector<double>(weight_mask->data().begin(),
                                                                  weight_mask->data().end())
                                            : std::vector<double>(n, 1.0);
  double total_weight = 0.0;
  for (double w : weights) total_weight += w;
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double q = std::clamp(p[i], kLossClamp, 1.0 - kLossClamp);
    loss -= weights[i] * (t[i] * std::log(q) + (1.0 - t[i]) * std::log(1.0 - q));
  }
  const double norm = total_weight > 0.0 ? 1.0 / total_weight : 0.0;
  return Tensor::make_result({1}, {loss * norm}, {prediction},
                             [norm, weights = std::move(weights), target](detail::Node& self) {
    auto& pn = *self.parents[0];
    auto& gp = pn.ensure_grad();
    const auto tv = target.data();
    const double g = self.grad[0] * norm;
    for (std::size_t i = 0; i < gp.size(); ++i) {
      const double q = pn.data[i];
      if (q < kLossClamp || q > 1.0 - kLossClamp) continue;
      gp[i] += g * weights[i] * (-tv[i] / q + (1.0 - tv[i]) / (1.0 - q));
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (auto& parent : self.parents) {
      if (!parent->requires_grad) continue;
      auto& g = parent->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sum(const Tensor& input) {
  double s = 0.0;
  for (double v : input.data()) s += v;
  return Tensor::make_result({1}, {s}, {input}, [](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor reshape(const Tensor& input, Shape shape) {
  if (shape_numel(shape) != input.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(input.shape()) + " as " + shape_string(shape));
  }
  auto in = input.data();
  return Tensor::make_result(std::move(shape), std::vector<double>(in.begin(), in.end()), {input},
                             [](detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ValidationError("concat_cols: no inputs");
  const std::size_t rows = parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows) {
      throw DimensionError("concat_cols: row mismatch " + shape_string(parts[0].shape()) + " vs " +
                           shape_string(p.shape()));
    }
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(src.data() + r * widths[k], widths[k], out.data() + r * total + offset);
    }
    offset += widths[k];
  }
  return Tensor::make_result({rows, total}, std::move(out), parts,
                             [rows, total, widths = std::move(widths)](detail::Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      auto& parent = *self.parents[k];
      if (parent.requires_grad) {
        auto& g = parent.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < widths[k]; ++c) g[r * widths[k] + c] += self.grad[r * total + offset + c];
        }
      }
      offset += widths[k];
    }
  });
}

}  // namespace prl
