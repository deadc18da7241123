#include "voxattn/tape.hpp"

namespace voxattn {

template <typename T>
void Tape<T>::backward(int root) {
  check_id(root);
  const Node& root_node = nodes_[static_cast<std::size_t>(root)];
  if (root_node.value.numel() != 1) {
    throw StateError("backward requires a scalar root, got shape " +
                     root_node.value.shape_string());
  }
  adjoints_.assign(nodes_.size(), std::nullopt);
  adjoints_[static_cast<std::size_t>(root)] = Tensor<T>::full(root_node.value.shape(), T(1));

  for (int id = root; id >= 0; --id) {
    auto& slot = adjoints_[static_cast<std::size_t>(id)];
    if (!slot) continue;
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.needs) continue;
    if (node.vjp) node.vjp(*this, id, *slot);
    // Fold this pass's adjoint into the persistent accumulator.
    if (!node.grad) {
      node.grad = *slot;
    } else {
      Tensor<T>& acc = *node.grad;
      const Tensor<T>& add = *slot;
      for (std::int64_t i = 0; i < acc.numel(); ++i) acc[i] += add[i];
    }
    slot.reset();
  }
  adjoints_.clear();
}

template <typename T>
void Tape<T>::accumulate_adjoint(int id, const Tensor<T>& delta) {
  check_id(id);
  const Node& node = nodes_[static_cast<std::size_t>(id)];
  if (!node.needs) return;  // dead branch, nothing downstream wants it
  if (!node.value.same_shape(delta)) {
    throw DimensionError("adjoint shape " + delta.shape_string() + " does not match node '" +
                         node.op + "' value shape " + node.value.shape_string());
  }
  auto& slot = adjoints_[static_cast<std::size_t>(id)];
  if (!slot) {
    slot = delta;
  } else {
    Tensor<T>& acc = *slot;
    for (std::int64_t i = 0; i < acc.numel(); ++i) acc[i] += delta[i];
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace voxattn
