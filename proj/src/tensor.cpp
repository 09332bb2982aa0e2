#include "nmt/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "nmt/errors.hpp"
#include "nmt/rng.hpp"

namespace nmt {

namespace {

using EMat =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

long product(const std::vector<int>& shape) {
  long n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

int resolve_axis(int axis, int rank, const char* where) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw InvalidAxis(std::string(where) + ": axis " + std::to_string(axis) +
                      " out of range for rank " + std::to_string(rank));
  }
  return a;
}

std::vector<long> row_major_strides(const std::vector<int>& shape) {
  std::vector<long> strides(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    strides[static_cast<std::size_t>(i)] =
        strides[static_cast<std::size_t>(i) + 1] * shape[static_cast<std::size_t>(i) + 1];
  }
  return strides;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch(std::string(where) + ": " + shape_str(a.shape()) +
                        " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  Tensor t;
  t.d_ = std::make_shared<Data>();
  t.d_->value.assign(static_cast<std::size_t>(product(shape)), 0.0f);
  t.d_->shape = std::move(shape);
  t.d_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(std::vector<int> shape, float value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.d_->value.begin(), t.d_->value.end(), value);
  return t;
}

Tensor Tensor::from_values(std::vector<int> shape, std::vector<float> values,
                           bool requires_grad) {
  if (product(shape) != static_cast<long>(values.size())) {
    throw ShapeMismatch("from_values: " + shape_str(shape) + " needs " +
                        std::to_string(product(shape)) + " values, got " +
                        std::to_string(values.size()));
  }
  Tensor t;
  t.d_ = std::make_shared<Data>();
  t.d_->shape = std::move(shape);
  t.d_->value = std::move(values);
  t.d_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

const std::vector<int>& Tensor::shape() const { return d_->shape; }

int Tensor::rank() const { return static_cast<int>(d_->shape.size()); }

int Tensor::dim(int axis) const {
  int a = axis < 0 ? axis + rank() : axis;
  return d_->shape.at(static_cast<std::size_t>(a));
}

long Tensor::numel() const { return static_cast<long>(d_->value.size()); }

std::vector<float>& Tensor::value() const { return d_->value; }

bool Tensor::requires_grad() const { return d_ && d_->requires_grad; }

void Tensor::set_requires_grad(bool flag) { d_->requires_grad = flag; }

std::vector<float>& Tensor::grad() const {
  if (d_->grad.size() != d_->value.size()) {
    d_->grad.assign(d_->value.size(), 0.0f);
  }
  return d_->grad;
}

bool Tensor::has_grad() const { return d_ && !d_->grad.empty(); }

void Tensor::zero_grad() const {
  if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0f);
}

float Tensor::item() const {
  if (numel() != 1) {
    throw ShapeMismatch("item: tensor has " + std::to_string(numel()) +
                        " elements");
  }
  return d_->value[0];
}

void Tape::record(const Tensor& out, std::function<void()> fn) {
  if (grad_enabled_ && out.requires_grad()) nodes_.push_back(std::move(fn));
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || (a.rank() != 2 && a.rank() != 3)) {
    throw ShapeMismatch("matmul: ranks " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  }
  const int batch = a.rank() == 3 ? a.dim(0) : 1;
  const int m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  if (b.dim(-2) != k || (a.rank() == 3 && b.dim(0) != batch)) {
    throw ShapeMismatch("matmul: " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()));
  }
  Tensor out = a.rank() == 3 ? Tensor::zeros({batch, m, n})
                             : Tensor::zeros({m, n});
  for (int i = 0; i < batch; ++i) {
    ECMap A(a.value().data() + static_cast<long>(i) * m * k, m, k);
    ECMap B(b.value().data() + static_cast<long>(i) * k * n, k, n);
    EMap C(out.value().data() + static_cast<long>(i) * m * n, m, n);
    C.noalias() = A * B;
  }
  out.set_requires_grad(a.requires_grad() || b.requires_grad());
  record(out, [a, b, out, batch, m, k, n]() mutable {
    for (int i = 0; i < batch; ++i) {
      ECMap A(a.value().data() + static_cast<long>(i) * m * k, m, k);
      ECMap B(b.value().data() + static_cast<long>(i) * k * n, k, n);
      ECMap dC(out.grad().data() + static_cast<long>(i) * m * n, m, n);
      if (a.requires_grad()) {
        EMap dA(a.grad().data() + static_cast<long>(i) * m * k, m, k);
        dA.noalias() += dC * B.transpose();
      }
      if (b.requires_grad()) {
        EMap dB(b.grad().data() + static_cast<long>(i) * k * n, k, n);
        dB.noalias() += A.transpose() * dC;
      }
    }
  });
  return out;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  auto& ov = out.value();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  out.set_requires_grad(a.requires_grad() || b.requires_grad());
  record(out, [a, b, out]() mutable {
    const auto& go = out.grad();
    if (a.requires_grad()) {
      auto& ga = a.grad();
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
    }
  });
  return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  auto& ov = out.value();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  out.set_requires_grad(a.requires_grad() || b.requires_grad());
  record(out, [a, b, out]() mutable {
    const auto& go = out.grad();
    if (a.requires_grad()) {
      auto& ga = a.grad();
      const auto& bv = b.value();
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      const auto& av = a.value();
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
    }
  });
  return out;
}

Tensor Tape::scale(const Tensor& a, float factor) {
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.value();
  auto& ov = out.value();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * factor;
  out.set_requires_grad(a.requires_grad());
  record(out, [a, out, factor]() mutable {
    if (!a.requires_grad()) return;
    auto& ga = a.grad();
    const auto& go = out.grad();
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * factor;
  });
  return out;
}

Tensor Tape::add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || bias.dim(0) != x.dim(-1)) {
    throw ShapeMismatch("add_bias: " + shape_str(x.shape()) + " + " +
                        shape_str(bias.shape()));
  }
  const long d = bias.dim(0);
  const long rows = x.numel() / d;
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.value();
  const auto& bv = bias.value();
  auto& ov = out.value();
  for (long r = 0; r < rows; ++r) {
    for (long j = 0; j < d; ++j) {
      ov[static_cast<std::size_t>(r * d + j)] =
          xv[static_cast<std::size_t>(r * d + j)] + bv[static_cast<std::size_t>(j)];
    }
  }
  out.set_requires_grad(x.requires_grad() || bias.requires_grad());
  record(out, [x, bias, out, rows, d]() mutable {
    const auto& go = out.grad();
    if (x.requires_grad()) {
      auto& gx = x.grad();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    }
    if (bias.requires_grad()) {
      auto& gb = bias.grad();
      for (long r = 0; r < rows; ++r) {
        for (long j = 0; j < d; ++j) {
          gb[static_cast<std::size_t>(j)] += go[static_cast<std::size_t>(r * d + j)];
        }
      }
    }
  });
  return out;
}

Tensor Tape::transpose(const Tensor& a) {
  if (a.rank() < 2) throw ShapeMismatch("transpose: rank < 2");
  std::vector<int> axes(static_cast<std::size_t>(a.rank()));
  for (int i = 0; i < a.rank(); ++i) axes[static_cast<std::size_t>(i)] = i;
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(a, axes);
}

Tensor Tape::permute(const Tensor& a, const std::vector<int>& axes) {
  const int rank = a.rank();
  if (static_cast<int>(axes.size()) != rank) {
    throw InvalidAxis("permute: need " + std::to_string(rank) + " axes");
  }
  std::vector<bool> seen(static_cast<std::size_t>(rank), false);
  std::vector<int> out_shape(static_cast<std::size_t>(rank));
  for (int i = 0; i < rank; ++i) {
    int ax = resolve_axis(axes[static_cast<std::size_t>(i)], rank, "permute");
    if (seen[static_cast<std::size_t>(ax)]) throw InvalidAxis("permute: repeated axis");
    seen[static_cast<std::size_t>(ax)] = true;
    out_shape[static_cast<std::size_t>(i)] = a.dim(ax);
  }

  const auto in_strides = row_major_strides(a.shape());
  const auto out_strides = row_major_strides(out_shape);
  // out flat index -> in flat index map, reused by the backward pass
  auto in_index = [rank, axes, in_strides, out_strides](long oi) {
    long ii = 0;
    for (int k = 0; k < rank; ++k) {
      long coord = (oi / out_strides[static_cast<std::size_t>(k)]);
      oi -= coord * out_strides[static_cast<std::size_t>(k)];
      ii += coord * in_strides[static_cast<std::size_t>(axes[static_cast<std::size_t>(k)])];
    }
    return ii;
  };

  Tensor out = Tensor::zeros(out_shape);
  const auto& av = a.value();
  auto& ov = out.value();
  for (long oi = 0; oi < static_cast<long>(ov.size()); ++oi) {
    ov[static_cast<std::size_t>(oi)] = av[static_cast<std::size_t>(in_index(oi))];
  }
  out.set_requires_grad(a.requires_grad());
  record(out, [a, out, in_index]() mutable {
    if (!a.requires_grad()) return;
    auto& ga = a.grad();
    const auto& go = out.grad();
    for (long oi = 0; oi < static_cast<long>(go.size()); ++oi) {
      ga[static_cast<std::size_t>(in_index(oi))] += go[static_cast<std::size_t>(oi)];
    }
  });
  return out;
}

Tensor Tape::reshape(const Tensor& a, std::vector<int> shape) {
  if (product(shape) != a.numel()) {
    throw ShapeMismatch("reshape: " + shape_str(a.shape()) + " -> " +
                        shape_str(shape));
  }
  Tensor out = Tensor::from_values(std::move(shape), a.value());
  out.set_requires_grad(a.requires_grad());
  record(out, [a, out]() mutable {
    if (!a.requires_grad()) return;
    auto& ga = a.grad();
    const auto& go = out.grad();
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
  });
  return out;
}

Tensor Tape::concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeMismatch("concat: no inputs");
  const int rank = parts[0].rank();
  const int ax = resolve_axis(axis, rank, "concat");
  std::vector<int> out_shape = parts[0].shape();
  for (std::size_t p = 1; p < parts.size(); ++p) {
    if (parts[p].rank() != rank) throw ShapeMismatch("concat: rank mismatch");
    for (int i = 0; i < rank; ++i) {
      if (i == ax) continue;
      if (parts[p].dim(i) != out_shape[static_cast<std::size_t>(i)]) {
        throw ShapeMismatch("concat: incompatible " +
                            shape_str(parts[p].shape()));
      }
    }
    out_shape[static_cast<std::size_t>(ax)] += parts[p].dim(ax);
  }

  long outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= out_shape[static_cast<std::size_t>(i)];
  for (int i = ax + 1; i < rank; ++i) inner *= out_shape[static_cast<std::size_t>(i)];
  const long out_ax = out_shape[static_cast<std::size_t>(ax)];

  Tensor out = Tensor::zeros(out_shape);
  auto& ov = out.value();
  bool track = false;
  long offset = 0;
  for (const Tensor& part : parts) {
    const long part_ax = part.dim(ax);
    const auto& pv = part.value();
    for (long o = 0; o < outer; ++o) {
      for (long j = 0; j < part_ax * inner; ++j) {
        ov[static_cast<std::size_t>((o * out_ax + offset) * inner + j)] =
            pv[static_cast<std::size_t>(o * part_ax * inner + j)];
      }
    }
    offset += part_ax;
    track = track || part.requires_grad();
  }
  out.set_requires_grad(track);
  record(out, [parts, out, outer, inner, out_ax, ax]() mutable {
    const auto& go = out.grad();
    long offset = 0;
    for (Tensor part : parts) {
      const long part_ax = part.dim(ax);
      if (part.requires_grad()) {
        auto& gp = part.grad();
        for (long o = 0; o < outer; ++o) {
          for (long j = 0; j < part_ax * inner; ++j) {
            gp[static_cast<std::size_t>(o * part_ax * inner + j)] +=
                go[static_cast<std::size_t>((o * out_ax + offset) * inner + j)];
          }
        }
      }
      offset += part_ax;
    }
  });
  return out;
}

Tensor Tape::slice(const Tensor& a, int axis, int start, int length) {
  const int rank = a.rank();
  const int ax = resolve_axis(axis, rank, "slice");
  if (start < 0 || length < 0 || start + length > a.dim(ax)) {
    throw ShapeMismatch("slice: [" + std::to_string(start) + "," +
                        std::to_string(start + length) + ") out of " +
                        std::to_string(a.dim(ax)));
  }
  std::vector<int> out_shape = a.shape();
  out_shape[static_cast<std::size_t>(ax)] = length;
  long outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= a.dim(i);
  for (int i = ax + 1; i < rank; ++i) inner *= a.dim(i);
  const long in_ax = a.dim(ax);

  Tensor out = Tensor::zeros(out_shape);
  const auto& av = a.value();
  auto& ov = out.value();
  for (long o = 0; o < outer; ++o) {
    for (long j = 0; j < static_cast<long>(length) * inner; ++j) {
      ov[static_cast<std::size_t>(o * length * inner + j)] =
          av[static_cast<std::size_t>((o * in_ax + start) * inner + j)];
    }
  }
  out.set_requires_grad(a.requires_grad());
  record(out, [a, out, outer, inner, in_ax, start, length]() mutable {
    if (!a.requires_grad()) return;
    auto& ga = a.grad();
    const auto& go = out.grad();
    for (long o = 0; o < outer; ++o) {
      for (long j = 0; j < static_cast<long>(length) * inner; ++j) {
        ga[static_cast<std::size_t>((o * in_ax + start) * inner + j)] +=
            go[static_cast<std::size_t>(o * length * inner + j)];
      }
    }
  });
  return out;
}

Tensor Tape::relu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.value();
  auto& ov = out.value();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > 0.0f ? av[i] : 0.0f;
  out.set_requires_grad(a.requires_grad());
  record(out, [a, out]() mutable {
    if (!a.requires_grad()) return;
    auto& ga = a.grad();
    const auto& av = a.value();
    const auto& go = out.grad();
    for (std::size_t i = 0; i < go.size(); ++i) {
      if (av[i] > 0.0f) ga[i] += go[i];
    }
  });
  return out;
}

Tensor Tape::softmax(const Tensor& a, int axis) {
  const int rank = a.rank();
  const int ax = resolve_axis(axis, rank, "softmax");
  long outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= a.dim(i);
  for (int i = ax + 1; i < rank; ++i) inner *= a.dim(i);
  const long n = a.dim(ax);

  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.value();
  auto& ov = out.value();
  for (long o = 0; o < outer; ++o) {
    for (long j = 0; j < inner; ++j) {
      const long base = o * n * inner + j;
      float maxv = av[static_cast<std::size_t>(base)];
      for (long i = 1; i < n; ++i) {
        maxv = std::max(maxv, av[static_cast<std::size_t>(base + i * inner)]);
      }
      double denom = 0.0;
      for (long i = 0; i < n; ++i) {
        const float e = std::exp(av[static_cast<std::size_t>(base + i * inner)] - maxv);
        ov[static_cast<std::size_t>(base + i * inner)] = e;
        denom += e;
      }
      const float inv = static_cast<float>(1.0 / denom);
      for (long i = 0; i < n; ++i) ov[static_cast<std::size_t>(base + i * inner)] *= inv;
    }
  }
  out.set_requires_grad(a.requires_grad());
  record(out, [a, out, outer, inner, n]() mutable {
    if (!a.requires_grad()) return;
    auto& ga = a.grad();
    const auto& ov = out.value();
    const auto& go = out.grad();
    for (long o = 0; o < outer; ++o) {
      for (long j = 0; j < inner; ++j) {
        const long base = o * n * inner + j;
        double dot = 0.0;
        for (long i = 0; i < n; ++i) {
          const std::size_t idx = static_cast<std::size_t>(base + i * inner);
          dot += static_cast<double>(go[idx]) * ov[idx];
        }
        for (long i = 0; i < n; ++i) {
          const std::size_t idx = static_cast<std::size_t>(base + i * inner);
          ga[idx] += ov[idx] * (go[idx] - static_cast<float>(dot));
        }
      }
    }
  });
  return out;
}

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                        float eps) {
  const long d = x.dim(-1);
  if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 ||
      bias.dim(0) != d) {
    throw ShapeMismatch("layer_norm: params must be (" + std::to_string(d) +
                        ")");
  }
  const long rows = x.numel() / d;
  Tensor out = Tensor::zeros(x.shape());
  std::vector<float> mean(static_cast<std::size_t>(rows));
  std::vector<float> inv_std(static_cast<std::size_t>(rows));
  const auto& xv = x.value();
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  auto& ov = out.value();
  for (long r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (long j = 0; j < d; ++j) sum += xv[static_cast<std::size_t>(r * d + j)];
    const double mu = sum / d;
    double var = 0.0;
    for (long j = 0; j < d; ++j) {
      const double diff = xv[static_cast<std::size_t>(r * d + j)] - mu;
      var += diff * diff;
    }
    var /= d;
    const double istd = 1.0 / std::sqrt(var + eps);
    mean[static_cast<std::size_t>(r)] = static_cast<float>(mu);
    inv_std[static_cast<std::size_t>(r)] = static_cast<float>(istd);
    for (long j = 0; j < d; ++j) {
      const std::size_t idx = static_cast<std::size_t>(r * d + j);
      const float xhat = static_cast<float>((xv[idx] - mu) * istd);
      ov[idx] = gv[static_cast<std::size_t>(j)] * xhat + bv[static_cast<std::size_t>(j)];
    }
  }
  out.set_requires_grad(x.requires_grad() || gain.requires_grad() ||
                        bias.requires_grad());
  record(out, [x, gain, bias, out, mean, inv_std, rows, d]() mutable {
    const auto& xv = x.value();
    const auto& gv = gain.value();
    const auto& go = out.grad();
    float* gx = x.requires_grad() ? x.grad().data() : nullptr;
    float* gg = gain.requires_grad() ? gain.grad().data() : nullptr;
    float* gb = bias.requires_grad() ? bias.grad().data() : nullptr;
    for (long r = 0; r < rows; ++r) {
      const double mu = mean[static_cast<std::size_t>(r)];
      const double istd = inv_std[static_cast<std::size_t>(r)];
      // dxhat = go * gain; reduce the two coupling sums first
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (long j = 0; j < d; ++j) {
        const std::size_t idx = static_cast<std::size_t>(r * d + j);
        const double xhat = (xv[idx] - mu) * istd;
        const double dxhat = static_cast<double>(go[idx]) * gv[static_cast<std::size_t>(j)];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
      }
      for (long j = 0; j < d; ++j) {
        const std::size_t idx = static_cast<std::size_t>(r * d + j);
        const double xhat = (xv[idx] - mu) * istd;
        const double dxhat = static_cast<double>(go[idx]) * gv[static_cast<std::size_t>(j)];
        if (gx) {
          gx[idx] += static_cast<float>(
              istd * (dxhat - sum_dxhat / d - xhat * sum_dxhat_xhat / d));
        }
        if (gg) gg[j] += static_cast<float>(go[idx] * xhat);
        if (gb) gb[j] += go[idx];
      }
    }
  });
  return out;
}

Tensor Tape::dropout(const Tensor& a, float p, bool train, std::uint64_t seed) {
  if (p < 0.0f || p >= 1.0f) {
    throw ShapeMismatch("dropout: p must be in [0,1), got " + std::to_string(p));
  }
  if (!train || p == 0.0f) return a;
  Rng rng(seed);
  const float keep_scale = 1.0f / (1.0f - p);
  std::vector<float> mask(static_cast<std::size_t>(a.numel()));
  for (auto& m : mask) m = rng.uniform() < p ? 0.0f : keep_scale;
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.value();
  auto& ov = out.value();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * mask[i];
  out.set_requires_grad(a.requires_grad());
  record(out, [a, out, mask]() mutable {
    if (!a.requires_grad()) return;
    auto& ga = a.grad();
    const auto& go = out.grad();
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * mask[i];
  });
  return out;
}

Tensor Tape::embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw ShapeMismatch("embedding_lookup: table not 2-D");
  const int vocab = table.dim(0);
  const long d = table.dim(1);
  for (int id : ids) {
    if (id < 0 || id >= vocab) {
      throw IndexOutOfVocab("id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(vocab));
    }
  }
  Tensor out = Tensor::zeros({static_cast<int>(ids.size()), static_cast<int>(d)});
  const auto& tv = table.value();
  auto& ov = out.value();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(tv.begin() + static_cast<long>(ids[i]) * d, d,
                ov.begin() + static_cast<long>(i) * d);
  }
  out.set_requires_grad(table.requires_grad());
  record(out, [table, out, ids, d]() mutable {
    if (!table.requires_grad()) return;
    auto& gt = table.grad();
    const auto& go = out.grad();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      for (long j = 0; j < d; ++j) {
        gt[static_cast<std::size_t>(ids[i] * d + j)] +=
            go[static_cast<std::size_t>(static_cast<long>(i) * d + j)];
      }
    }
  });
  return out;
}

Tensor Tape::cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                           int pad_index, float label_smoothing) {
  if (logits.rank() != 2) throw ShapeMismatch("cross_entropy: logits not 2-D");
  const long n = logits.dim(0);
  const long v = logits.dim(1);
  if (static_cast<long>(targets.size()) != n) {
    throw ShapeMismatch("cross_entropy: " + std::to_string(targets.size()) +
                        " targets for " + std::to_string(n) + " rows");
  }
  for (int t : targets) {
    if (t < 0 || t >= v) {
      throw IndexOutOfVocab("target " + std::to_string(t) +
                            " outside vocabulary of " + std::to_string(v));
    }
  }

  // softmax rows are kept for the backward pass
  std::vector<float> probs(static_cast<std::size_t>(n * v));
  const auto& lv = logits.value();
  long n_live = 0;
  double loss_sum = 0.0;  // accumulated in double to keep f32 noise down
  const double eps = label_smoothing;
  for (long r = 0; r < n; ++r) {
    float maxv = lv[static_cast<std::size_t>(r * v)];
    for (long j = 1; j < v; ++j) {
      maxv = std::max(maxv, lv[static_cast<std::size_t>(r * v + j)]);
    }
    double denom = 0.0;
    for (long j = 0; j < v; ++j) {
      const double e = std::exp(static_cast<double>(lv[static_cast<std::size_t>(r * v + j)]) - maxv);
      probs[static_cast<std::size_t>(r * v + j)] = static_cast<float>(e);
      denom += e;
    }
    const double log_denom = std::log(denom);
    for (long j = 0; j < v; ++j) {
      probs[static_cast<std::size_t>(r * v + j)] =
          static_cast<float>(probs[static_cast<std::size_t>(r * v + j)] / denom);
    }
    if (targets[static_cast<std::size_t>(r)] == pad_index) continue;
    ++n_live;
    const long t = targets[static_cast<std::size_t>(r)];
    const double logp_t =
        static_cast<double>(lv[static_cast<std::size_t>(r * v + t)]) - maxv - log_denom;
    if (eps == 0.0) {
      loss_sum -= logp_t;
    } else {
      double sum_logp = 0.0;
      for (long j = 0; j < v; ++j) {
        sum_logp += static_cast<double>(lv[static_cast<std::size_t>(r * v + j)]) - maxv - log_denom;
      }
      loss_sum -= (1.0 - eps) * logp_t + (eps / v) * sum_logp;
    }
  }
  const float loss = n_live ? static_cast<float>(loss_sum / n_live) : 0.0f;

  Tensor out = Tensor::scalar(loss);
  out.set_requires_grad(logits.requires_grad());
  record(out, [logits, out, probs, targets, pad_index, n, v, n_live, eps]() mutable {
    if (!logits.requires_grad() || n_live == 0) return;
    auto& gl = logits.grad();
    const float go = out.grad()[0];
    const float inv = go / static_cast<float>(n_live);
    for (long r = 0; r < n; ++r) {
      const long t = targets[static_cast<std::size_t>(r)];
      if (t == pad_index) continue;
      for (long j = 0; j < v; ++j) {
        const std::size_t idx = static_cast<std::size_t>(r * v + j);
        double q = eps / v;
        if (j == t) q += 1.0 - eps;
        gl[idx] += inv * (probs[idx] - static_cast<float>(q));
      }
    }
  });
  return out;
}

Tensor Tape::sum(const Tensor& a) {
  double total = 0.0;
  for (float x : a.value()) total += x;
  Tensor out = Tensor::scalar(static_cast<float>(total));
  out.set_requires_grad(a.requires_grad());
  record(out, [a, out]() mutable {
    if (!a.requires_grad()) return;
    auto& ga = a.grad();
    const float go = out.grad()[0];
    for (auto& g : ga) g += go;
  });
  return out;
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw NonScalarLoss("backward: loss has " + std::to_string(loss.numel()) +
                        " elements");
  }
  Tensor seed = loss;
  seed.grad()[0] = 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

}  // namespace nmt
