#include <Eigen/Core>

#include "voxattn/ops.hpp"

namespace voxattn {

namespace {
template <typename T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatrixRM<T>>;
template <typename T>
using ConstMapRM = Eigen::Map<const MatrixRM<T>>;
}  // namespace

template <typename T>
int linear(Tape<T>& tape, int input, int weight, std::optional<int> bias) {
  const Tensor<T>& x = tape.value(input);
  const Tensor<T>& w = tape.value(weight);
  if (x.rank() != 2 || w.rank() != 2) {
    throw DimensionError("linear expects rank-2 input and weight, got " + x.shape_string() +
                         " and " + w.shape_string());
  }
  const std::int64_t n = x.extent(0), m = x.extent(1);
  const std::int64_t k = w.extent(0);
  if (w.extent(1) != m) {
    throw DimensionError("linear inner extents disagree: input " + x.shape_string() +
                         " vs weight " + w.shape_string());
  }
  const Tensor<T>* b = nullptr;
  if (bias) {
    b = &tape.value(*bias);
    if (b->numel() != k) {
      throw DimensionError("linear bias length " + std::to_string(b->numel()) +
                           " does not match output width " + std::to_string(k));
    }
  }

  Tensor<T> out({n, k});
  {
    ConstMapRM<T> xm(x.data(), n, m), wm(w.data(), k, m);
    MapRM<T> om(out.data(), n, k);
    om.noalias() = xm * wm.transpose();
    if (b) {
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < k; ++j) out[i * k + j] += (*b)[j];
    }
  }

  std::vector<int> inputs = {input, weight};
  if (bias) inputs.push_back(*bias);
  auto vjp = [input, weight, bias, n, m, k](Tape<T>& t, int, const Tensor<T>& dy) {
    ConstMapRM<T> dym(dy.data(), n, k);
    if (t.requires_grad(input)) {
      const Tensor<T>& w = t.value(weight);
      ConstMapRM<T> wm(w.data(), k, m);
      Tensor<T> dx({n, m});
      MapRM<T> dxm(dx.data(), n, m);
      dxm.noalias() = dym * wm;
      t.accumulate_adjoint(input, dx);
    }
    if (t.requires_grad(weight)) {
      const Tensor<T>& x = t.value(input);
      ConstMapRM<T> xm(x.data(), n, m);
      Tensor<T> dw({k, m});
      MapRM<T> dwm(dw.data(), k, m);
      dwm.noalias() = dym.transpose() * xm;
      t.accumulate_adjoint(weight, dw);
    }
    if (bias && t.requires_grad(*bias)) {
      Tensor<T> db({k});
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < k; ++j) db[j] += dy[i * k + j];
      t.accumulate_adjoint(*bias, db);
    }
  };
  return tape.push("linear", std::move(out), std::move(inputs), std::move(vjp));
}

template int linear<float>(Tape<float>&, int, int, std::optional<int>);
template int linear<double>(Tape<double>&, int, int, std::optional<int>);

}  // namespace voxattn
