#pragma once

#include <algorithm>
#include <vector>

#include "radinv/autodiff/tape.hpp"

// Elementwise, reduction, and linear-algebra ops on Tape tensors. Every op
// validates shapes eagerly so that mistakes surface at graph construction.

namespace radinv::ad {

namespace detail {
inline void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw StructuralError(std::string(op) + ": shape mismatch");
}
inline Tape& tape_of(const Var& a) {
  if (!a.valid()) throw StructuralError("op on invalid Var");
  return *a.tape;
}
}  // namespace detail

inline Var add(Var a, Var b) {
  detail::same_shape(a, b, "add");
  return detail::tape_of(a).push(a.value() + b.value(), {a, b}, [](Tape& t, int self) {
    const Mat& g = t.self_grad(self);
    t.accumulate(t.parent(self, 0), g);
    t.accumulate(t.parent(self, 1), g);
  });
}

inline Var sub(Var a, Var b) {
  detail::same_shape(a, b, "sub");
  return detail::tape_of(a).push(a.value() - b.value(), {a, b}, [](Tape& t, int self) {
    const Mat& g = t.self_grad(self);
    t.accumulate(t.parent(self, 0), g);
    t.accumulate(t.parent(self, 1), -g);
  });
}

inline Var mul(Var a, Var b) {
  detail::same_shape(a, b, "mul");
  return detail::tape_of(a).push(a.value().cwiseProduct(b.value()), {a, b}, [](Tape& t, int self) {
    const Mat& g = t.self_grad(self);
    const int pa = t.parent(self, 0), pb = t.parent(self, 1);
    if (t.requires_grad(pa)) t.accumulate(pa, g.cwiseProduct(t.value(pb)));
    if (t.requires_grad(pb)) t.accumulate(pb, g.cwiseProduct(t.value(pa)));
  });
}

inline Var scale(Var a, double c) {
  return detail::tape_of(a).push(a.value() * c, {a}, [c](Tape& t, int self) {
    t.accumulate(t.parent(self, 0), t.self_grad(self) * c);
  });
}

inline Var add_scalar(Var a, double c) {
  Mat v = a.value().array() + c;
  return detail::tape_of(a).push(std::move(v), {a}, [](Tape& t, int self) {
    t.accumulate(t.parent(self, 0), t.self_grad(self));
  });
}

/// a * s where s is a 1x1 tensor.
inline Var mul_scalar(Var a, Var s) {
  if (s.rows() != 1 || s.cols() != 1) throw StructuralError("mul_scalar: s must be 1x1");
  return detail::tape_of(a).push(a.value() * s.scalar(), {a, s}, [](Tape& t, int self) {
    const Mat& g = t.self_grad(self);
    const int pa = t.parent(self, 0), ps = t.parent(self, 1);
    const double sv = t.value(ps)(0, 0);
    if (t.requires_grad(pa)) t.accumulate(pa, g * sv);
    if (t.requires_grad(ps)) t.accumulate(ps, Mat::Constant(1, 1, g.cwiseProduct(t.value(pa)).sum()));
  });
}

/// a [N,M] + b [1,M] broadcast over rows.
inline Var add_rowvec(Var a, Var b) {
  if (b.rows() != 1 || b.cols() != a.cols()) throw StructuralError("add_rowvec: shape mismatch");
  Mat v = a.value().rowwise() + b.value().row(0);
  return detail::tape_of(a).push(std::move(v), {a, b}, [](Tape& t, int self) {
    const Mat& g = t.self_grad(self);
    t.accumulate(t.parent(self, 0), g);
    if (t.requires_grad(t.parent(self, 1))) t.accumulate(t.parent(self, 1), g.colwise().sum());
  });
}

/// a [N,M] scaled row-wise by b [N,1].
inline Var mul_colvec(Var a, Var b) {
  if (b.cols() != 1 || b.rows() != a.rows()) throw StructuralError("mul_colvec: shape mismatch");
  Mat v = a.value().array().colwise() * b.value().col(0).array();
  return detail::tape_of(a).push(std::move(v), {a, b}, [](Tape& t, int self) {
    const Mat& g = t.self_grad(self);
    const int pa = t.parent(self, 0), pb = t.parent(self, 1);
    if (t.requires_grad(pa)) {
      Mat ga = g.array().colwise() * t.value(pb).col(0).array();
      t.accumulate(pa, ga);
    }
    if (t.requires_grad(pb)) t.accumulate(pb, g.cwiseProduct(t.value(pa)).rowwise().sum());
  });
}

inline Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw StructuralError("matmul: inner dimension mismatch");
  Mat v = a.value() * b.value();
  return detail::tape_of(a).push(std::move(v), {a, b}, [](Tape& t, int self) {
    const Mat& g = t.self_grad(self);
    const int pa = t.parent(self, 0), pb = t.parent(self, 1);
    if (t.requires_grad(pa)) t.accumulate(pa, g * t.value(pb).transpose());
    if (t.requires_grad(pb)) t.accumulate(pb, t.value(pa).transpose() * g);
  });
}

/// x [N,in] * W [in,out] + b [1,out].
inline Var linear(Var x, Var W, Var b) { return add_rowvec(matmul(x, W), b); }

inline Var transpose(Var a) {
  Mat v = a.value().transpose();
  return detail::tape_of(a).push(std::move(v), {a}, [](Tape& t, int self) {
    t.accumulate(t.parent(self, 0), t.self_grad(self).transpose());
  });
}

inline Var reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) throw StructuralError("reshape: size mismatch");
  Mat v = Eigen::Map<const Mat>(a.value().data(), rows, cols);
  const Eigen::Index r0 = a.rows(), c0 = a.cols();
  return detail::tape_of(a).push(std::move(v), {a}, [r0, c0](Tape& t, int self) {
    const Mat& g = t.self_grad(self);
    t.accumulate(t.parent(self, 0), Eigen::Map<const Mat>(g.data(), r0, c0));
  });
}

inline Var softplus(Var a) {
  Mat v = a.value().unaryExpr([](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); });
  return detail::tape_of(a).push(std::move(v), {a}, [](Tape& t, int self) {
    const int p = t.parent(self, 0);
    Mat d = t.value(p).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    t.accumulate(p, t.self_grad(self).cwiseProduct(d));
  });
}

inline Var sigmoid(Var a) {
  Mat v = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return detail::tape_of(a).push(std::move(v), {a}, [](Tape& t, int self) {
    const Mat& s = t.value(self);
    Mat d = s.array() * (1.0 - s.array());
    t.accumulate(t.parent(self, 0), t.self_grad(self).cwiseProduct(d));
  });
}

inline Var leaky_relu(Var a, double slope = 0.2) {
  Mat v = a.value().unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  return detail::tape_of(a).push(std::move(v), {a}, [slope](Tape& t, int self) {
    const int p = t.parent(self, 0);
    Mat d = t.value(p).unaryExpr([slope](double x) { return x > 0.0 ? 1.0 : slope; });
    t.accumulate(p, t.self_grad(self).cwiseProduct(d));
  });
}

inline Var exp(Var a) {
  Mat v = a.value().array().exp();
  return detail::tape_of(a).push(std::move(v), {a}, [](Tape& t, int self) {
    t.accumulate(t.parent(self, 0), t.self_grad(self).cwiseProduct(t.value(self)));
  });
}

inline Var square(Var a) {
  Mat v = a.value().array().square();
  return detail::tape_of(a).push(std::move(v), {a}, [](Tape& t, int self) {
    const int p = t.parent(self, 0);
    t.accumulate(p, 2.0 * t.self_grad(self).cwiseProduct(t.value(p)));
  });
}

inline Var abs(Var a) {
  Mat v = a.value().cwiseAbs();
  return detail::tape_of(a).push(std::move(v), {a}, [](Tape& t, int self) {
    const int p = t.parent(self, 0);
    Mat s = t.value(p).unaryExpr([](double x) { return static_cast<double>((x > 0.0) - (x < 0.0)); });
    t.accumulate(p, t.self_grad(self).cwiseProduct(s));
  });
}

/// Sum of all entries as a 1x1 tensor.
inline Var sum(Var a) {
  Mat v = Mat::Constant(1, 1, a.value().sum());
  return detail::tape_of(a).push(std::move(v), {a}, [](Tape& t, int self) {
    const int p = t.parent(self, 0);
    const double g = t.self_grad(self)(0, 0);
    t.accumulate(p, Mat::Constant(t.value(p).rows(), t.value(p).cols(), g));
  });
}

inline Var mean(Var a) {
  const auto n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

/// Row sums: [N,M] -> [N,1].
inline Var sum_cols(Var a) {
  Mat v = a.value().rowwise().sum();
  return detail::tape_of(a).push(std::move(v), {a}, [](Tape& t, int self) {
    const int p = t.parent(self, 0);
    Mat g = t.self_grad(self).col(0).replicate(1, t.value(p).cols());
    t.accumulate(p, g);
  });
}

/// Euclidean norm of each row: [N,M] -> [N,1]. The subgradient at 0 is 0.
inline Var row_norm(Var a) {
  Mat v = a.value().rowwise().norm();
  return detail::tape_of(a).push(std::move(v), {a}, [](Tape& t, int self) {
    const int p = t.parent(self, 0);
    const Mat& x = t.value(p);
    const Mat& n = t.value(self);
    const Mat& g = t.self_grad(self);
    Mat gx(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double ni = n(i, 0);
      if (ni > 0.0)
        gx.row(i) = (g(i, 0) / ni) * x.row(i);
      else
        gx.row(i).setZero();
    }
    t.accumulate(p, gx);
  });
}

inline Var softmax_rows(Var a) {
  Mat v = a.value();
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const double m = v.row(i).maxCoeff();
    v.row(i) = (v.row(i).array() - m).exp();
    v.row(i) /= v.row(i).sum();
  }
  return detail::tape_of(a).push(std::move(v), {a}, [](Tape& t, int self) {
    const Mat& y = t.value(self);
    const Mat& g = t.self_grad(self);
    Mat dot = g.cwiseProduct(y).rowwise().sum();
    Mat gx = y.array() * (g.array().colwise() - dot.col(0).array());
    t.accumulate(t.parent(self, 0), gx);
  });
}

inline Var slice_cols(Var a, Eigen::Index c0, Eigen::Index n) {
  if (c0 < 0 || c0 + n > a.cols()) throw StructuralError("slice_cols: out of range");
  Mat v = a.value().middleCols(c0, n);
  return detail::tape_of(a).push(std::move(v), {a}, [c0, n](Tape& t, int self) {
    const int p = t.parent(self, 0);
    t.grad_ref(p).middleCols(c0, n) += t.self_grad(self);
  });
}

inline Var slice_rows(Var a, Eigen::Index r0, Eigen::Index n) {
  if (r0 < 0 || r0 + n > a.rows()) throw StructuralError("slice_rows: out of range");
  Mat v = a.value().middleRows(r0, n);
  return detail::tape_of(a).push(std::move(v), {a}, [r0, n](Tape& t, int self) {
    const int p = t.parent(self, 0);
    t.grad_ref(p).middleRows(r0, n) += t.self_grad(self);
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw StructuralError("concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw StructuralError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat v(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    offsets.push_back(off);
    off += p.cols();
  }
  return detail::tape_of(parts[0]).push(std::move(v), parts, [offsets](Tape& t, int self) {
    const Mat& g = t.self_grad(self);
    for (std::size_t k = 0; k < offsets.size(); ++k) {
      const int p = t.parent(self, static_cast<int>(k));
      if (!t.requires_grad(p)) continue;
      t.accumulate(p, g.middleCols(offsets[k], t.value(p).cols()));
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw StructuralError("concat_rows: no inputs");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw StructuralError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Mat v(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    offsets.push_back(off);
    off += p.rows();
  }
  return detail::tape_of(parts[0]).push(std::move(v), parts, [offsets](Tape& t, int self) {
    const Mat& g = t.self_grad(self);
    for (std::size_t k = 0; k < offsets.size(); ++k) {
      const int p = t.parent(self, static_cast<int>(k));
      if (!t.requires_grad(p)) continue;
      t.accumulate(p, g.middleRows(offsets[k], t.value(p).rows()));
    }
  });
}

/// Repeats each row k times consecutively: [N,M] -> [N*k,M].
inline Var repeat_rows(Var a, int k) {
  const Mat& x = a.value();
  Mat v(x.rows() * k, x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (int j = 0; j < k; ++j) v.row(i * k + j) = x.row(i);
  return detail::tape_of(a).push(std::move(v), {a}, [k](Tape& t, int self) {
    const int p = t.parent(self, 0);
    const Mat& g = t.self_grad(self);
    Mat gx = Mat::Zero(t.value(p).rows(), t.value(p).cols());
    for (Eigen::Index i = 0; i < gx.rows(); ++i)
      for (int j = 0; j < k; ++j) gx.row(i) += g.row(i * k + j);
    t.accumulate(p, gx);
  });
}

/// out[n*k + j, :] = a[n, :] * b[n*k + j, :]. Propagates per-sample
/// activation slopes onto k stacked tangent rows.
inline Var mul_repeat(Var a, Var b, int k) {
  if (b.rows() != a.rows() * k || b.cols() != a.cols()) throw StructuralError("mul_repeat: shape mismatch");
  const Mat& av = a.value();
  Mat v = b.value();
  for (Eigen::Index i = 0; i < av.rows(); ++i)
    for (int j = 0; j < k; ++j) v.row(i * k + j).array() *= av.row(i).array();
  return detail::tape_of(a).push(std::move(v), {a, b}, [k](Tape& t, int self) {
    const int pa = t.parent(self, 0), pb = t.parent(self, 1);
    const Mat& g = t.self_grad(self);
    const Mat& av = t.value(pa);
    const Mat& bv = t.value(pb);
    if (t.requires_grad(pa)) {
      Mat ga = Mat::Zero(av.rows(), av.cols());
      for (Eigen::Index i = 0; i < av.rows(); ++i)
        for (int j = 0; j < k; ++j) ga.row(i).array() += g.row(i * k + j).array() * bv.row(i * k + j).array();
      t.accumulate(pa, ga);
    }
    if (t.requires_grad(pb)) {
      Mat gb = g;
      for (Eigen::Index i = 0; i < av.rows(); ++i)
        for (int j = 0; j < k; ++j) gb.row(i * k + j).array() *= av.row(i).array();
      t.accumulate(pb, gb);
    }
  });
}

/// out.row(i) = a.row(idx[i]); rows may repeat (gradients scatter-add).
inline Var gather_rows(Var a, std::vector<Eigen::Index> idx) {
  const Mat& x = a.value();
  Mat v(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= x.rows()) throw StructuralError("gather_rows: index out of range");
    v.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
  }
  return detail::tape_of(a).push(std::move(v), {a}, [idx = std::move(idx)](Tape& t, int self) {
    const int p = t.parent(self, 0);
    const Mat& g = t.self_grad(self);
    Mat gx = Mat::Zero(t.value(p).rows(), t.value(p).cols());
    for (std::size_t i = 0; i < idx.size(); ++i) gx.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(p, gx);
  });
}

// Convenience overloads.
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }

}  // namespace radinv::ad
