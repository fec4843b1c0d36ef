#ifndef FORESTLPR_TAPE_HPP
#define FORESTLPR_TAPE_HPP

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "forestlpr/error.hpp"

namespace forestlpr::ad {

using Mat = Eigen::MatrixXd;

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense matrices. Forward calls record a backward
// closure per node; backward() replays them in reverse. Operation set covers
// exactly what the descriptor pipeline needs: linear maps, layernorm,
// softmax, GELU, pooling, normalization, and the hinge loss pieces.
class Tape {
 public:
  Var leaf(Mat value) { return push(std::move(value), nullptr); }

  const Mat& val(Var v) const {
    check(v);
    return nodes_[v.id].value;
  }

  const Mat& grad(Var v) const {
    check(v);
    const Node& n = nodes_[v.id];
    if (n.grad.size() == 0) {
      throw UsageError("gradient not available: run backward() over this value first");
    }
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  bool has_grad(Var v) const {
    check(v);
    return nodes_[v.id].grad.size() != 0;
  }

  // ---- arithmetic -------------------------------------------------------

  Var matmul(Var a, Var b) {
    Mat y = val(a) * val(b);
    return push(std::move(y), [this, a, b](const Mat& dy) {
      acc(a, dy * val(b).transpose());
      acc(b, val(a).transpose() * dy);
    });
  }

  // a * b^T
  Var matmul_nt(Var a, Var b) {
    Mat y = val(a) * val(b).transpose();
    return push(std::move(y), [this, a, b](const Mat& dy) {
      acc(a, dy * val(b));
      acc(b, dy.transpose() * val(a));
    });
  }

  Var add(Var a, Var b) {
    Mat y = val(a) + val(b);
    return push(std::move(y), [this, a, b](const Mat& dy) {
      acc(a, dy);
      acc(b, dy);
    });
  }

  Var sub(Var a, Var b) {
    Mat y = val(a) - val(b);
    return push(std::move(y), [this, a, b](const Mat& dy) {
      acc(a, dy);
      acc(b, -dy);
    });
  }

  // Broadcast a 1xC row over every row of a.
  Var add_rowvec(Var a, Var row) {
    Mat y = val(a).rowwise() + val(row).row(0);
    return push(std::move(y), [this, a, row](const Mat& dy) {
      acc(a, dy);
      acc(row, dy.colwise().sum());
    });
  }

  Var scale(Var a, double s) {
    Mat y = val(a) * s;
    return push(std::move(y), [this, a, s](const Mat& dy) { acc(a, dy * s); });
  }

  Var add_const(Var a, double c) {
    Mat y = val(a).array() + c;
    return push(std::move(y), [this, a](const Mat& dy) { acc(a, dy); });
  }

  // ---- shape ops --------------------------------------------------------

  Var concat_cols(const std::vector<Var>& parts) {
    Eigen::Index rows = val(parts.front()).rows(), cols = 0;
    for (Var p : parts) cols += val(p).cols();
    Mat y(rows, cols);
    Eigen::Index off = 0;
    for (Var p : parts) {
      y.middleCols(off, val(p).cols()) = val(p);
      off += val(p).cols();
    }
    return push(std::move(y), [this, parts](const Mat& dy) {
      Eigen::Index off = 0;
      for (Var p : parts) {
        acc(p, dy.middleCols(off, val(p).cols()));
        off += val(p).cols();
      }
    });
  }

  Var concat_rows(const std::vector<Var>& parts) {
    Eigen::Index cols = val(parts.front()).cols(), rows = 0;
    for (Var p : parts) rows += val(p).rows();
    Mat y(rows, cols);
    Eigen::Index off = 0;
    for (Var p : parts) {
      y.middleRows(off, val(p).rows()) = val(p);
      off += val(p).rows();
    }
    return push(std::move(y), [this, parts](const Mat& dy) {
      Eigen::Index off = 0;
      for (Var p : parts) {
        acc(p, dy.middleRows(off, val(p).rows()));
        off += val(p).rows();
      }
    });
  }

  Var slice_cols(Var a, Eigen::Index start, Eigen::Index n) {
    Mat y = val(a).middleCols(start, n);
    return push(std::move(y), [this, a, start, n](const Mat& dy) {
      Mat g = Mat::Zero(val(a).rows(), val(a).cols());
      g.middleCols(start, n) = dy;
      acc(a, g);
    });
  }

  Var slice_rows(Var a, Eigen::Index start, Eigen::Index n) {
    Mat y = val(a).middleRows(start, n);
    return push(std::move(y), [this, a, start, n](const Mat& dy) {
      Mat g = Mat::Zero(val(a).rows(), val(a).cols());
      g.middleRows(start, n) = dy;
      acc(a, g);
    });
  }

  // ---- nonlinearities ---------------------------------------------------

  Var layernorm_rows(Var x, Var gamma, Var beta, double eps = 1e-6) {
    const Mat& xv = val(x);
    const Eigen::Index rows = xv.rows(), cols = xv.cols();
    Mat xhat(rows, cols);
    Eigen::VectorXd inv_sigma(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
      const double mu = xv.row(i).mean();
      const double var = (xv.row(i).array() - mu).square().mean();
      inv_sigma(i) = 1.0 / std::sqrt(var + eps);
      xhat.row(i) = (xv.row(i).array() - mu) * inv_sigma(i);
    }
    Mat y = (xhat.array().rowwise() * val(gamma).row(0).array()).rowwise() +
            val(beta).row(0).array();
    return push(std::move(y),
                [this, x, gamma, beta, xhat, inv_sigma](const Mat& dy) {
                  const Eigen::Index rows = dy.rows(), cols = dy.cols();
                  acc(gamma, (dy.array() * xhat.array()).colwise().sum().matrix());
                  acc(beta, dy.colwise().sum());
                  Mat dx(rows, cols);
                  for (Eigen::Index i = 0; i < rows; ++i) {
                    Eigen::ArrayXd dxh =
                        (dy.row(i).array() * val(gamma).row(0).array()).transpose();
                    const double m1 = dxh.mean();
                    const double m2 = (dxh * xhat.row(i).transpose().array()).mean();
                    dx.row(i) =
                        ((dxh - m1 - xhat.row(i).transpose().array() * m2) * inv_sigma(i))
                            .matrix()
                            .transpose();
                  }
                  acc(x, dx);
                });
  }

  Var softmax_rows(Var x) {
    const Mat& xv = val(x);
    Mat y(xv.rows(), xv.cols());
    for (Eigen::Index i = 0; i < xv.rows(); ++i) {
      const Eigen::ArrayXd e = (xv.row(i).array() - xv.row(i).maxCoeff()).exp().transpose();
      y.row(i) = (e / e.sum()).matrix().transpose();
    }
    Var out = push(std::move(y), nullptr);
    nodes_[out.id].backward = [this, x, out](const Mat& dy) {
      const Mat& yv = val(out);
      Mat dx(dy.rows(), dy.cols());
      for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const double dot = dy.row(i).dot(yv.row(i));
        dx.row(i) = (yv.row(i).array() * (dy.row(i).array() - dot)).matrix();
      }
      acc(x, dx);
    };
    return out;
  }

  Var gelu(Var x) {
    const Mat& xv = val(x);
    Mat y = xv.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
    return push(std::move(y), [this, x](const Mat& dy) {
      const Mat d = val(x).unaryExpr([](double v) {
        const double phi = std::exp(-0.5 * v * v) * kInvSqrt2Pi;
        return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * phi;
      });
      acc(x, (dy.array() * d.array()).matrix());
    });
  }

  // Gradient passes only on the strictly unclamped side (x > m).
  Var clamp_min(Var x, double m) {
    Mat y = val(x).cwiseMax(m);
    return push(std::move(y), [this, x, m](const Mat& dy) {
      const Mat mask = (val(x).array() > m).cast<double>();
      acc(x, (dy.array() * mask.array()).matrix());
    });
  }

  Var relu(Var x) { return clamp_min(x, 0.0); }

  // Elementwise power; inputs are expected positive (clamp first).
  Var pow_elem(Var x, double e) {
    Mat y = val(x).array().pow(e);
    return push(std::move(y), [this, x, e](const Mat& dy) {
      acc(x, (dy.array() * e * val(x).array().pow(e - 1.0)).matrix());
    });
  }

  // 1xC column means over rows.
  Var mean_rows(Var x) {
    Mat y = val(x).colwise().mean();
    return push(std::move(y), [this, x](const Mat& dy) {
      const double inv = 1.0 / static_cast<double>(val(x).rows());
      acc(x, (Mat::Ones(val(x).rows(), 1) * dy) * inv);
    });
  }

  // Elementwise mean of same-shape inputs.
  Var average(const std::vector<Var>& parts) {
    Mat y = val(parts.front());
    for (std::size_t i = 1; i < parts.size(); ++i) y += val(parts[i]);
    y /= static_cast<double>(parts.size());
    return push(std::move(y), [this, parts](const Mat& dy) {
      const Mat g = dy / static_cast<double>(parts.size());
      for (Var p : parts) acc(p, g);
    });
  }

  Var sum(const std::vector<Var>& parts) {
    Mat y = val(parts.front());
    for (std::size_t i = 1; i < parts.size(); ++i) y += val(parts[i]);
    return push(std::move(y), [this, parts](const Mat& dy) {
      for (Var p : parts) acc(p, dy);
    });
  }

  // Elementwise max across inputs; ties route the gradient to the first.
  Var max_elem(const std::vector<Var>& parts) {
    Mat y = val(parts.front());
    Eigen::MatrixX<std::int32_t> which =
        Eigen::MatrixX<std::int32_t>::Zero(y.rows(), y.cols());
    for (std::size_t i = 1; i < parts.size(); ++i) {
      const Mat& v = val(parts[i]);
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        for (Eigen::Index c = 0; c < y.cols(); ++c) {
          if (v(r, c) > y(r, c)) {
            y(r, c) = v(r, c);
            which(r, c) = static_cast<std::int32_t>(i);
          }
        }
      }
    }
    return push(std::move(y), [this, parts, which](const Mat& dy) {
      for (std::size_t i = 0; i < parts.size(); ++i) {
        Mat g = Mat::Zero(dy.rows(), dy.cols());
        for (Eigen::Index r = 0; r < dy.rows(); ++r)
          for (Eigen::Index c = 0; c < dy.cols(); ++c)
            if (which(r, c) == static_cast<std::int32_t>(i)) g(r, c) = dy(r, c);
        acc(parts[i], g);
      }
    });
  }

  // Scale row i of m by w(i, 0).
  Var rowwise_scale(Var m, Var w) {
    Mat y = val(m).array().colwise() * val(w).col(0).array();
    return push(std::move(y), [this, m, w](const Mat& dy) {
      acc(m, (dy.array().colwise() * val(w).col(0).array()).matrix());
      acc(w, (dy.array() * val(m).array()).rowwise().sum().matrix());
    });
  }

  // L2-normalize a single row vector (1xK).
  Var l2_normalize_row(Var x) {
    const double n = val(x).norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw NumericError("l2_normalize_row: zero or non-finite norm");
    }
    Mat y = val(x) / n;
    Var out = push(std::move(y), nullptr);
    nodes_[out.id].backward = [this, x, out, n](const Mat& dy) {
      const Mat& yv = val(out);
      const double dot = (dy.array() * yv.array()).sum();
      acc(x, (dy - dot * yv) / n);
    };
    return out;
  }

  // ---- backward ---------------------------------------------------------

  void backward(Var loss) {
    check(loss);
    if (val(loss).rows() != 1 || val(loss).cols() != 1) {
      throw UsageError("backward: loss must be a 1x1 value");
    }
    for (Node& n : nodes_) n.grad.resize(0, 0);
    grad_ref(loss.id) = Mat::Ones(1, 1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0 || !n.backward) continue;
      n.backward(n.grad);
    }
  }

 private:
  static constexpr double kInvSqrt2 = 0.7071067811865475244;
  static constexpr double kInvSqrt2Pi = 0.3989422804014326779;

  struct Node {
    Mat value;
    Mat grad;
    std::function<void(const Mat&)> backward;
  };

  void check(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
      throw UsageError("value not recorded on this tape");
    }
  }

  Mat& grad_ref(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void acc(Var v, const Mat& g) { grad_ref(v.id) += g; }

  Var push(Mat value, std::function<void(const Mat&)> backward) {
    nodes_.push_back(Node{std::move(value), Mat(), std::move(backward)});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  // deque keeps references from val()/grad() stable while new ops are pushed
  std::deque<Node> nodes_;
};

}  // namespace forestlpr::ad

#endif
