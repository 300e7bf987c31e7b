#include "mcinet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mcinet {

namespace {

template <typename Scalar>
using RowMatrix = typename Tensor<Scalar>::RowMatrix;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

template <typename Scalar>
void accumulate(Node<Scalar>& node, std::size_t parent, const Tensor<Scalar>& g) {
  auto& p = node.parents[parent];
  if (p && p->requires_grad) p->grad_buffer().data() += g.data();
}

template <typename Scalar>
bool wants(const Node<Scalar>& node, std::size_t parent) {
  const auto& p = node.parents[parent];
  return p && p->requires_grad;
}

struct ConvGeometry {
  Index n, cin, h, w, cout, k, ho, wo;
  Conv2dSpec spec;
  Index patch() const { return cin * k * k; }
  Index positions() const { return ho * wo; }
};

// Column buffer is row-major (cin*k*k) x (n*ho*wo); item b owns columns
// [b*ho*wo, (b+1)*ho*wo).
template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, Scalar* col) {
  const Index ld = g.n * g.positions();
  for (Index b = 0; b < g.n; ++b) {
    for (Index c = 0; c < g.cin; ++c) {
      const Scalar* plane = x + (b * g.cin + c) * g.h * g.w;
      for (Index ki = 0; ki < g.k; ++ki) {
        for (Index kj = 0; kj < g.k; ++kj) {
          Scalar* row = col + ((c * g.k + ki) * g.k + kj) * ld + b * g.positions();
          for (Index oy = 0; oy < g.ho; ++oy) {
            const Index iy = oy * g.spec.stride - g.spec.padding + ki * g.spec.dilation;
            Scalar* out = row + oy * g.wo;
            if (iy < 0 || iy >= g.h) {
              std::fill(out, out + g.wo, Scalar(0));
              continue;
            }
            const Scalar* in = plane + iy * g.w;
            for (Index ox = 0; ox < g.wo; ++ox) {
              const Index ix = ox * g.spec.stride - g.spec.padding + kj * g.spec.dilation;
              out[ox] = (ix >= 0 && ix < g.w) ? in[ix] : Scalar(0);
            }
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const Scalar* col, const ConvGeometry& g, Scalar* dx) {
  const Index ld = g.n * g.positions();
  for (Index b = 0; b < g.n; ++b) {
    for (Index c = 0; c < g.cin; ++c) {
      Scalar* plane = dx + (b * g.cin + c) * g.h * g.w;
      for (Index ki = 0; ki < g.k; ++ki) {
        for (Index kj = 0; kj < g.k; ++kj) {
          const Scalar* row = col + ((c * g.k + ki) * g.k + kj) * ld + b * g.positions();
          for (Index oy = 0; oy < g.ho; ++oy) {
            const Index iy = oy * g.spec.stride - g.spec.padding + ki * g.spec.dilation;
            if (iy < 0 || iy >= g.h) continue;
            const Scalar* in = row + oy * g.wo;
            Scalar* out = plane + iy * g.w;
            for (Index ox = 0; ox < g.wo; ++ox) {
              const Index ix = ox * g.spec.stride - g.spec.padding + kj * g.spec.dilation;
              if (ix >= 0 && ix < g.w) out[ix] += in[ox];
            }
          }
        }
      }
    }
  }
}

// (cout x n*P) <-> [n, cout, P]
template <typename Scalar>
void scatter_output(const RowMatrix<Scalar>& y, Index n, Index cout, Index positions, Scalar* out) {
  for (Index b = 0; b < n; ++b)
    for (Index c = 0; c < cout; ++c)
      std::copy_n(y.data() + c * n * positions + b * positions, positions,
                  out + (b * cout + c) * positions);
}

template <typename Scalar>
void gather_output(const Scalar* in, Index n, Index cout, Index positions, RowMatrix<Scalar>& y) {
  y.resize(cout, n * positions);
  for (Index b = 0; b < n; ++b)
    for (Index c = 0; c < cout; ++c)
      std::copy_n(in + (b * cout + c) * positions, positions,
                  y.data() + c * n * positions + b * positions);
}

Shape strides_of(const Shape& shape) {
  Shape s(shape.size(), 1);
  for (Index i = static_cast<Index>(shape.size()) - 2; i >= 0; --i) s[i] = s[i + 1] * shape[i + 1];
  return s;
}

// Visits every output position of a permutation, passing (out_linear, in_linear).
template <typename Fn>
void for_each_permuted(const Shape& in_shape, const std::vector<Index>& perm, Fn&& fn) {
  const Index rank = static_cast<Index>(in_shape.size());
  const Shape in_strides = strides_of(in_shape);
  Shape out_shape(rank), stride_in_out_order(rank);
  for (Index i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[perm[i]];
    stride_in_out_order[i] = in_strides[perm[i]];
  }
  const Index total = shape_size(in_shape);
  if (rank == 0) {
    if (total) fn(0, 0);
    return;
  }
  Shape counter(rank, 0);
  Index in_index = 0;
  for (Index out_index = 0; out_index < total; ++out_index) {
    fn(out_index, in_index);
    for (Index ax = rank - 1; ax >= 0; --ax) {
      if (++counter[ax] < out_shape[ax]) {
        in_index += stride_in_out_order[ax];
        break;
      }
      in_index -= stride_in_out_order[ax] * (out_shape[ax] - 1);
      counter[ax] = 0;
    }
  }
}

}  // namespace

Index conv_output_size(Index input, Index kernel, const Conv2dSpec& spec) {
  const Index span = spec.dilation * (kernel - 1) + 1;
  return (input + 2 * spec.padding - span) / spec.stride + 1;
}

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias,
                   const Conv2dSpec& spec) {
  require_rank(x.shape(), 4, "conv2d input");
  require_rank(weight.shape(), 4, "conv2d weight");
  if (weight.dim(1) != x.dim(1) || weight.dim(2) != weight.dim(3)) {
    throw ShapeError("conv2d: weight " + to_string(weight.shape()) + " incompatible with input " +
                     to_string(x.shape()));
  }
  if (bias.defined() && (bias.value().size() != weight.dim(0))) {
    throw ShapeError("conv2d: bias size does not match output channels");
  }
  if (spec.stride < 1 || spec.dilation < 1 || spec.padding < 0) {
    throw ShapeError("conv2d: invalid stride/dilation/padding");
  }
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), 0, 0, spec};
  g.ho = conv_output_size(g.h, g.k, spec);
  g.wo = conv_output_size(g.w, g.k, spec);
  if (g.ho < 1 || g.wo < 1) throw ShapeError("conv2d: empty output for input " + to_string(x.shape()));

  RowMatrix<Scalar> col(g.patch(), g.n * g.positions());
  im2col(x.value().ptr(), g, col.data());
  ConstMatrixMap<Scalar> wmat(weight.value().ptr(), g.cout, g.patch());
  RowMatrix<Scalar> y(g.cout, g.n * g.positions());
  y.noalias() = wmat * col;
  if (bias.defined()) {
    y.colwise() += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bias.value().ptr(), g.cout);
  }
  Tensor<Scalar> out(Shape{g.n, g.cout, g.ho, g.wo});
  scatter_output(y, g.n, g.cout, g.positions(), out.ptr());

  std::vector<Var<Scalar>> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return Var<Scalar>::make(std::move(out), parents, [g](Node<Scalar>& self) {
    RowMatrix<Scalar> dy;
    gather_output(self.grad.ptr(), g.n, g.cout, g.positions(), dy);
    const auto& xv = self.parents[0]->value;
    const auto& wv = self.parents[1]->value;
    if (wants(self, 1)) {
      RowMatrix<Scalar> col(g.patch(), g.n * g.positions());
      im2col(xv.ptr(), g, col.data());
      MatrixMap<Scalar> dw(self.parents[1]->grad_buffer().ptr(), g.cout, g.patch());
      dw.noalias() += dy * col.transpose();
    }
    if (self.parents.size() > 2 && wants(self, 2)) {
      self.parents[2]->grad_buffer().data() += dy.rowwise().sum();
    }
    if (wants(self, 0)) {
      ConstMatrixMap<Scalar> wmat(wv.ptr(), g.cout, g.patch());
      RowMatrix<Scalar> dcol(g.patch(), g.n * g.positions());
      dcol.noalias() = wmat.transpose() * dy;
      col2im(dcol.data(), g, self.parents[0]->grad_buffer().ptr());
    }
  });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape());
  out.data() = x.value().data().cwiseMax(Scalar(0));
  return Var<Scalar>::make(std::move(out), {x}, [](Node<Scalar>& self) {
    auto& dx = self.parents[0]->grad_buffer().data();
    dx.array() += (self.value.data().array() > Scalar(0)).select(self.grad.data().array(), Scalar(0));
  });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  Tensor<Scalar> out(a.shape());
  out.data() = a.value().data() + b.value().data();
  return Var<Scalar>::make(std::move(out), {a, b}, [](Node<Scalar>& self) {
    accumulate(self, 0, self.grad);
    accumulate(self, 1, self.grad);
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar factor) {
  Tensor<Scalar> out(x.shape());
  out.data() = x.value().data() * factor;
  return Var<Scalar>::make(std::move(out), {x}, [factor](Node<Scalar>& self) {
    self.parents[0]->grad_buffer().data() += self.grad.data() * factor;
  });
}

template <typename Scalar>
Var<Scalar> mul_mask(const Var<Scalar>& x, const Tensor<Scalar>& mask) {
  require_rank(x.shape(), 4, "mul_mask input");
  require_rank(mask.shape(), 4, "mul_mask mask");
  if (mask.dim(0) != x.dim(0) || mask.dim(1) != 1 || mask.dim(2) != x.dim(2) ||
      mask.dim(3) != x.dim(3)) {
    throw ShapeError("mul_mask: mask " + to_string(mask.shape()) + " vs input " +
                     to_string(x.shape()));
  }
  const Index n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<Scalar> out(x.shape());
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch)
      out.data().segment((b * c + ch) * plane, plane) =
          x.value().data().segment((b * c + ch) * plane, plane).cwiseProduct(mask.data().segment(b * plane, plane));
  return Var<Scalar>::make(std::move(out), {x}, [mask, n, c, plane](Node<Scalar>& self) {
    auto& dx = self.parents[0]->grad_buffer().data();
    for (Index b = 0; b < n; ++b)
      for (Index ch = 0; ch < c; ++ch)
        dx.segment((b * c + ch) * plane, plane) +=
            self.grad.data().segment((b * c + ch) * plane, plane).cwiseProduct(mask.data().segment(b * plane, plane));
  });
}

template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, Index axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  const Index rank = static_cast<Index>(first.size());
  if (axis < 0 || axis >= rank) throw ShapeError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = static_cast<Index>(s.size()) == rank;
    for (Index i = 0; ok && i < rank; ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) throw ShapeError("concat: " + to_string(s) + " incompatible with " + to_string(first));
    out_shape[axis] += s[axis];
  }
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= first[i];
  for (Index i = axis + 1; i < rank; ++i) inner *= first[i];
  std::vector<Index> widths;
  for (const auto& p : parts) widths.push_back(p.dim(axis) * inner);
  const Index out_width = out_shape[axis] * inner;

  Tensor<Scalar> out(out_shape);
  Index offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Scalar* src = parts[k].value().ptr();
    for (Index o = 0; o < outer; ++o)
      std::copy_n(src + o * widths[k], widths[k], out.ptr() + o * out_width + offset);
    offset += widths[k];
  }
  return Var<Scalar>::make(std::move(out), parts, [widths, outer, out_width](Node<Scalar>& self) {
    Index offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (wants(self, k)) {
        auto& g = self.parents[k]->grad_buffer();
        for (Index o = 0; o < outer; ++o) {
          g.data().segment(o * widths[k], widths[k]) +=
              self.grad.data().segment(o * out_width + offset, widths[k]);
        }
      }
      offset += widths[k];
    }
  });
}

template <typename Scalar>
Var<Scalar> slice_leading(const Var<Scalar>& x, Index start, Index count) {
  if (x.value().rank() < 1 || start < 0 || count < 1 || start + count > x.dim(0)) {
    throw ShapeError("slice_leading: range out of bounds for " + to_string(x.shape()));
  }
  const Index inner = x.value().size() / x.dim(0);
  Shape out_shape = x.shape();
  out_shape[0] = count;
  Tensor<Scalar> out(out_shape);
  out.data() = x.value().data().segment(start * inner, count * inner);
  return Var<Scalar>::make(std::move(out), {x}, [start, inner](Node<Scalar>& self) {
    self.parents[0]->grad_buffer().data().segment(start * inner, self.grad.size()) += self.grad.data();
  });
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape) {
  Tensor<Scalar> out = x.value().reshaped(std::move(shape));
  return Var<Scalar>::make(std::move(out), {x}, [](Node<Scalar>& self) {
    self.parents[0]->grad_buffer().data() += self.grad.data();
  });
}

template <typename Scalar>
Var<Scalar> permute(const Var<Scalar>& x, const std::vector<Index>& perm) {
  const Shape& in_shape = x.shape();
  const Index rank = static_cast<Index>(in_shape.size());
  if (static_cast<Index>(perm.size()) != rank) throw ShapeError("permute: rank mismatch");
  std::vector<bool> seen(rank, false);
  Shape out_shape(rank);
  for (Index i = 0; i < rank; ++i) {
    if (perm[i] < 0 || perm[i] >= rank || seen[perm[i]]) throw ShapeError("permute: invalid permutation");
    seen[perm[i]] = true;
    out_shape[i] = in_shape[perm[i]];
  }
  Tensor<Scalar> out(out_shape);
  const Scalar* src = x.value().ptr();
  Scalar* dst = out.ptr();
  for_each_permuted(in_shape, perm, [&](Index o, Index i) { dst[o] = src[i]; });
  return Var<Scalar>::make(std::move(out), {x}, [in_shape, perm](Node<Scalar>& self) {
    Scalar* dx = self.parents[0]->grad_buffer().ptr();
    const Scalar* dy = self.grad.ptr();
    for_each_permuted(in_shape, perm, [&](Index o, Index i) { dx[i] += dy[o]; });
  });
}

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b, bool trans_a, bool trans_b) {
  const Index rank = a.value().rank();
  if ((rank != 2 && rank != 3) || b.value().rank() != rank) {
    throw ShapeError("matmul: operands must both be rank 2 or rank 3");
  }
  const Index batch = rank == 3 ? a.dim(0) : 1;
  if (rank == 3 && b.dim(0) != batch) throw ShapeError("matmul: batch mismatch");
  const Index ar = a.dim(rank - 2), ac = a.dim(rank - 1);
  const Index br = b.dim(rank - 2), bc = b.dim(rank - 1);
  const Index m = trans_a ? ac : ar, k = trans_a ? ar : ac;
  const Index kb = trans_b ? bc : br, n = trans_b ? br : bc;
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions differ (" + to_string(a.shape()) + ", " +
                     to_string(b.shape()) + ")");
  }
  Shape out_shape = rank == 3 ? Shape{batch, m, n} : Shape{m, n};
  Tensor<Scalar> out(out_shape);
  for (Index bi = 0; bi < batch; ++bi) {
    ConstMatrixMap<Scalar> am(a.value().ptr() + bi * ar * ac, ar, ac);
    ConstMatrixMap<Scalar> bm(b.value().ptr() + bi * br * bc, br, bc);
    MatrixMap<Scalar> cm(out.ptr() + bi * m * n, m, n);
    if (!trans_a && !trans_b) cm.noalias() = am * bm;
    else if (trans_a && !trans_b) cm.noalias() = am.transpose() * bm;
    else if (!trans_a && trans_b) cm.noalias() = am * bm.transpose();
    else cm.noalias() = am.transpose() * bm.transpose();
  }
  return Var<Scalar>::make(std::move(out), {a, b},
                           [=](Node<Scalar>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    for (Index bi = 0; bi < batch; ++bi) {
      ConstMatrixMap<Scalar> am(av.ptr() + bi * ar * ac, ar, ac);
      ConstMatrixMap<Scalar> bm(bv.ptr() + bi * br * bc, br, bc);
      ConstMatrixMap<Scalar> dc(self.grad.ptr() + bi * m * n, m, n);
      if (wants(self, 0)) {
        MatrixMap<Scalar> da(self.parents[0]->grad_buffer().ptr() + bi * ar * ac, ar, ac);
        // op(A) = A or Aᵀ; d op(A) = dC op(B)ᵀ
        if (!trans_a && !trans_b) da.noalias() += dc * bm.transpose();
        else if (!trans_a && trans_b) da.noalias() += dc * bm;
        else if (trans_a && !trans_b) da.noalias() += bm * dc.transpose();
        else da.noalias() += bm.transpose() * dc.transpose();
      }
      if (wants(self, 1)) {
        MatrixMap<Scalar> db(self.parents[1]->grad_buffer().ptr() + bi * br * bc, br, bc);
        // d op(B) = op(A)ᵀ dC
        if (!trans_a && !trans_b) db.noalias() += am.transpose() * dc;
        else if (trans_a && !trans_b) db.noalias() += am * dc;
        else if (!trans_a && trans_b) db.noalias() += dc.transpose() * am;
        else db.noalias() += dc.transpose() * am.transpose();
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> softmax_last(const Var<Scalar>& x) {
  if (x.value().rank() < 1) throw ShapeError("softmax_last: rank 0 input");
  const Index cols = x.dim(x.value().rank() - 1);
  const Index rows = x.value().size() / cols;
  Tensor<Scalar> out(x.shape());
  ConstMatrixMap<Scalar> in(x.value().ptr(), rows, cols);
  MatrixMap<Scalar> y(out.ptr(), rows, cols);
  y = (in.colwise() - in.rowwise().maxCoeff()).array().exp().matrix();
  y.array().colwise() /= y.rowwise().sum().array();
  return Var<Scalar>::make(std::move(out), {x}, [rows, cols](Node<Scalar>& self) {
    ConstMatrixMap<Scalar> y(self.value.ptr(), rows, cols);
    ConstMatrixMap<Scalar> dy(self.grad.ptr(), rows, cols);
    MatrixMap<Scalar> dx(self.parents[0]->grad_buffer().ptr(), rows, cols);
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots = dy.cwiseProduct(y).rowwise().sum();
    dx.array() += y.array() * (dy.colwise() - dots).array();
  });
}

template <typename Scalar>
Var<Scalar> resample(const Var<Scalar>& x, const Matrix<Scalar>& rows, const Matrix<Scalar>& cols) {
  const Index rank = x.value().rank();
  if (rank < 2) throw ShapeError("resample: rank < 2");
  const Index h = x.dim(rank - 2), w = x.dim(rank - 1);
  if (rows.cols() != h || cols.cols() != w) {
    throw ShapeError("resample: weights do not match input " + to_string(x.shape()));
  }
  const Index ho = rows.rows(), wo = cols.rows();
  const Index slices = x.value().size() / (h * w);
  Shape out_shape = x.shape();
  out_shape[rank - 2] = ho;
  out_shape[rank - 1] = wo;
  Tensor<Scalar> out(out_shape);
  // Contract the width axis for all slices at once, then the height axis.
  RowMatrix<Scalar> tmp = ConstMatrixMap<Scalar>(x.value().ptr(), slices * h, w) * cols.transpose();
  for (Index s = 0; s < slices; ++s) {
    MatrixMap<Scalar>(out.ptr() + s * ho * wo, ho, wo).noalias() = rows * tmp.middleRows(s * h, h);
  }
  return Var<Scalar>::make(std::move(out), {x}, [=](Node<Scalar>& self) {
    RowMatrix<Scalar> t(slices * h, wo);
    for (Index s = 0; s < slices; ++s) {
      t.middleRows(s * h, h).noalias() =
          rows.transpose() * ConstMatrixMap<Scalar>(self.grad.ptr() + s * ho * wo, ho, wo);
    }
    MatrixMap<Scalar>(self.parents[0]->grad_buffer().ptr(), slices * h, w).noalias() += t * cols;
  });
}

template <typename Scalar>
Matrix<Scalar> bilinear_weights(Index out, Index in) {
  if (out < 1 || in < 1) throw ShapeError("bilinear_weights: empty extent");
  Matrix<Scalar> m = Matrix<Scalar>::Zero(out, in);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (Index i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    Index i0 = static_cast<Index>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const Index i1 = std::min(i0 + 1, in - 1);
    const double frac = src - static_cast<double>(i0);
    m(i, i0) += static_cast<Scalar>(1.0 - frac);
    m(i, i1) += static_cast<Scalar>(frac);
  }
  return m;
}

template <typename Scalar>
Matrix<Scalar> area_weights(Index out, Index in) {
  if (out < 1 || in < 1) throw ShapeError("area_weights: empty extent");
  Matrix<Scalar> m = Matrix<Scalar>::Zero(out, in);
  for (Index i = 0; i < out; ++i) {
    const Index start = (i * in) / out;
    const Index end = ((i + 1) * in + out - 1) / out;
    for (Index j = start; j < end; ++j) m(i, j) = Scalar(1) / static_cast<Scalar>(end - start);
  }
  return m;
}

template <typename Scalar>
Var<Scalar> resize_bilinear(const Var<Scalar>& x, Extent out) {
  const Extent in = extent_of(x.value());
  if (in == out) return x;
  return resample(x, bilinear_weights<Scalar>(out.height, in.height),
                  bilinear_weights<Scalar>(out.width, in.width));
}

template <typename Scalar>
Var<Scalar> resize_area(const Var<Scalar>& x, Extent out) {
  const Extent in = extent_of(x.value());
  if (in == out) return x;
  return resample(x, area_weights<Scalar>(out.height, in.height),
                  area_weights<Scalar>(out.width, in.width));
}

template <typename Scalar>
Tensor<Scalar> resize_area(const Tensor<Scalar>& x, Extent out) {
  return resize_area(Var<Scalar>::constant(x), out).value();
}

template <typename Scalar>
Var<Scalar> global_avg_pool(const Var<Scalar>& x) {
  require_rank(x.shape(), 4, "global_avg_pool");
  const Extent e = extent_of(x.value());
  const Matrix<Scalar> rows = Matrix<Scalar>::Constant(1, e.height, Scalar(1) / static_cast<Scalar>(e.height));
  const Matrix<Scalar> cols = Matrix<Scalar>::Constant(1, e.width, Scalar(1) / static_cast<Scalar>(e.width));
  return resample(x, rows, cols);
}

template <typename Scalar>
Var<Scalar> mean_leading(const Var<Scalar>& x) {
  if (x.value().rank() < 1) throw ShapeError("mean_leading: rank 0 input");
  const Index n = x.dim(0);
  const Index inner = x.value().size() / n;
  Shape out_shape = x.shape();
  out_shape[0] = 1;
  Tensor<Scalar> out(out_shape);
  ConstMatrixMap<Scalar> in(x.value().ptr(), n, inner);
  out.data() = in.colwise().mean().transpose();
  return Var<Scalar>::make(std::move(out), {x}, [n, inner](Node<Scalar>& self) {
    MatrixMap<Scalar> dx(self.parents[0]->grad_buffer().ptr(), n, inner);
    dx.rowwise() += (self.grad.data() / static_cast<Scalar>(n)).transpose();
  });
}

template <typename Scalar>
Var<Scalar> bce_with_logits(const Var<Scalar>& logits, const Tensor<Scalar>& target) {
  if (logits.shape() != target.shape()) {
    throw ShapeError("bce: logits " + to_string(logits.shape()) + " vs target " +
                     to_string(target.shape()));
  }
  const auto z = logits.value().data().array();
  const auto m = target.data().array();
  const Index count = z.size();
  // max(z, 0) - z m + log(1 + exp(-|z|))
  const Scalar loss = (z.max(Scalar(0)) - z * m + (-z.abs()).exp().log1p()).sum() /
                      static_cast<Scalar>(count);
  return Var<Scalar>::make(Tensor<Scalar>::scalar(loss), {logits}, [target, count](Node<Scalar>& self) {
    const auto& zv = self.parents[0]->value.data().array();
    const Scalar g = self.grad[0] / static_cast<Scalar>(count);
    const auto sig = (Scalar(1) / (Scalar(1) + (-zv).exp()));
    self.parents[0]->grad_buffer().data().array() += g * (sig - target.data().array());
  });
}

#define MCINET_INSTANTIATE_OPS(S)                                                                  \
  template Var<S> conv2d<S>(const Var<S>&, const Var<S>&, const Var<S>&, const Conv2dSpec&);      \
  template Var<S> relu<S>(const Var<S>&);                                                          \
  template Var<S> add<S>(const Var<S>&, const Var<S>&);                                            \
  template Var<S> scale<S>(const Var<S>&, S);                                                      \
  template Var<S> mul_mask<S>(const Var<S>&, const Tensor<S>&);                                    \
  template Var<S> concat<S>(const std::vector<Var<S>>&, Index);                                    \
  template Var<S> slice_leading<S>(const Var<S>&, Index, Index);                                   \
  template Var<S> reshape<S>(const Var<S>&, Shape);                                                \
  template Var<S> permute<S>(const Var<S>&, const std::vector<Index>&);                            \
  template Var<S> matmul<S>(const Var<S>&, const Var<S>&, bool, bool);                             \
  template Var<S> softmax_last<S>(const Var<S>&);                                                  \
  template Var<S> resample<S>(const Var<S>&, const Matrix<S>&, const Matrix<S>&);                  \
  template Matrix<S> bilinear_weights<S>(Index, Index);                                            \
  template Matrix<S> area_weights<S>(Index, Index);                                                \
  template Var<S> resize_bilinear<S>(const Var<S>&, Extent);                                       \
  template Var<S> resize_area<S>(const Var<S>&, Extent);                                           \
  template Tensor<S> resize_area<S>(const Tensor<S>&, Extent);                                     \
  template Var<S> global_avg_pool<S>(const Var<S>&);                                               \
  template Var<S> mean_leading<S>(const Var<S>&);                                                  \
  template Var<S> bce_with_logits<S>(const Var<S>&, const Tensor<S>&);

MCINET_INSTANTIATE_OPS(float)
MCINET_INSTANTIATE_OPS(double)

}  // namespace mcinet
