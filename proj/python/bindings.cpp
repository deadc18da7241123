// Python surface over the native kernels: forward-only numpy wrappers for the
// differentiable ops plus the utilities (parameter audit, schedules, metrics,
// volume I/O, CLI dispatch). Gradients stay a C++ concern; the bindings here
// exist for inspection and scripting, not training.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <pybind11/numpy.h>

#include <cstring>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "voxattn/attention.hpp"
#include "voxattn/cli.hpp"
#include "voxattn/errors.hpp"
#include "voxattn/gradcheck_suite.hpp"
#include "voxattn/metrics.hpp"
#include "voxattn/network.hpp"
#include "voxattn/ops.hpp"
#include "voxattn/optim.hpp"
#include "voxattn/runconfig.hpp"
#include "voxattn/volume_io.hpp"

namespace py = pybind11;
using namespace voxattn;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

template <typename T, typename Array>
Tensor<T> to_tensor(const Array& a) {
  std::vector<std::int64_t> shape(static_cast<std::size_t>(a.ndim()));
  for (py::ssize_t i = 0; i < a.ndim(); ++i) {
    shape[static_cast<std::size_t>(i)] = a.shape(i);
  }
  Tensor<T> t(std::move(shape));
  std::memcpy(&t[0], a.data(), sizeof(T) * static_cast<std::size_t>(t.numel()));
  return t;
}

template <typename T>
py::array_t<T> to_numpy(const Tensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<T> a(shape);
  std::memcpy(a.mutable_data(), &t[0], sizeof(T) * static_cast<std::size_t>(t.numel()));
  return a;
}

// Runs one op on a throwaway tape and returns the root value.
template <typename Build>
py::array_t<double> run_op(std::vector<Tensor<double>> inputs, Build&& build) {
  Tape<double> tape;
  std::vector<int> ids;
  ids.reserve(inputs.size());
  for (auto& t : inputs) ids.push_back(tape.add_leaf(std::move(t)));
  const int root = build(tape, ids);
  return to_numpy(tape.value(root));
}

py::array_t<double> py_conv3d(DoubleArray x, DoubleArray w, py::object bias, Triple stride,
                              Triple padding) {
  if (w.ndim() != 5) throw DimensionError("conv3d: weight must have rank 5");
  ConvSpec spec;
  spec.out_channels = w.shape(0);
  spec.in_channels = w.shape(1);
  spec.kernel = {w.shape(2), w.shape(3), w.shape(4)};
  spec.stride = stride;
  spec.padding = padding;
  spec.bias = !bias.is_none();

  std::vector<Tensor<double>> inputs;
  inputs.push_back(to_tensor<double>(x));
  inputs.push_back(to_tensor<double>(w));
  if (spec.bias) inputs.push_back(to_tensor<double>(bias.cast<DoubleArray>()));
  return run_op(std::move(inputs), [&spec](Tape<double>& t, const std::vector<int>& ids) {
    std::optional<int> b;
    if (ids.size() > 2) b = ids[2];
    return conv3d(t, ids[0], ids[1], b, spec);
  });
}

py::object py_roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  const std::optional<double> auc = roc_auc(scores, labels);
  if (!auc.has_value()) return py::none();
  return py::float_(*auc);
}

py::dict py_param_count(const std::string& config_text) {
  const RunConfig cfg = parse_run_config_text(config_text);
  const ParamCount count = count_parameters(cfg.network);
  py::dict by_component;
  for (const auto& [name, n] : count.by_component) by_component[py::str(name)] = n;
  py::dict out;
  out["total"] = count.total;
  out["by_component"] = by_component;
  return out;
}

// The volume file carries voxels and an optional mask; labels and patient
// ids are manifest columns, so they have no place in this surface.
py::dict py_read_volume(const std::string& path) {
  const VolumeSample sample = read_volume(path);
  const auto& s = sample.voxels.shape();
  Tensor<float> flat({s[1], s[2], s[3]});
  std::memcpy(&flat[0], &sample.voxels[0],
              sizeof(float) * static_cast<std::size_t>(flat.numel()));
  py::dict out;
  out["voxels"] = to_numpy(flat);
  if (sample.lesion_mask.has_value()) {
    Tensor<float> mask({s[1], s[2], s[3]});
    std::memcpy(&mask[0], &(*sample.lesion_mask)[0],
                sizeof(float) * static_cast<std::size_t>(mask.numel()));
    out["lesion_mask"] = to_numpy(mask);
  } else {
    out["lesion_mask"] = py::none();
  }
  return out;
}

void py_write_volume(const std::string& path, FloatArray voxels, py::object mask) {
  if (voxels.ndim() != 3) throw DimensionError("write_volume: voxels must have rank 3");
  VolumeSample sample;
  Tensor<float> v = to_tensor<float>(voxels);
  sample.voxels = Tensor<float>({1, voxels.shape(0), voxels.shape(1), voxels.shape(2)});
  std::memcpy(&sample.voxels[0], &v[0], sizeof(float) * static_cast<std::size_t>(v.numel()));
  if (!mask.is_none()) {
    Tensor<float> m = to_tensor<float>(mask.cast<FloatArray>());
    Tensor<float> shaped({1, voxels.shape(0), voxels.shape(1), voxels.shape(2)});
    if (m.numel() != shaped.numel()) {
      throw DimensionError("write_volume: mask shape must match voxels");
    }
    std::memcpy(&shaped[0], &m[0], sizeof(float) * static_cast<std::size_t>(m.numel()));
    sample.lesion_mask = std::move(shaped);
  }
  write_volume(sample, path);
}

py::tuple py_run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return py::make_tuple(code, out.str(), err.str());
}

double py_gradcheck_worst(std::uint64_t seeds) {
  return run_gradcheck_suite(seeds).worst_rel_error;
}

}  // namespace

PYBIND11_MODULE(_voxattn, m) {
  m.doc() = "native kernels of the volumetric attention classifier";

  py::register_exception<DimensionError>(m, "DimensionError");
  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<StateError>(m, "StateError");
  py::register_exception<ParseError>(m, "ParseError");
  py::register_exception<IoError>(m, "IoError");
  py::register_exception<NumericError>(m, "NumericError");

  m.def("conv3d", &py_conv3d, py::arg("x"), py::arg("weight"), py::arg("bias") = py::none(),
        py::arg("stride") = Triple{1, 1, 1}, py::arg("padding") = Triple{0, 0, 0},
        "3D cross-correlation over an (N,C,D,H,W) input");
  m.def(
      "maxpool3d",
      [](DoubleArray x, Triple kernel, Triple stride, Triple padding) {
        std::vector<Tensor<double>> inputs;
        inputs.push_back(to_tensor<double>(x));
        return run_op(std::move(inputs), [&](Tape<double>& t, const std::vector<int>& ids) {
          return maxpool3d(t, ids[0], kernel, stride, padding);
        });
      },
      py::arg("x"), py::arg("kernel"), py::arg("stride"), py::arg("padding") = Triple{0, 0, 0},
      "windowed maximum over an (N,C,D,H,W) input");
  m.def(
      "relu",
      [](DoubleArray x) {
        std::vector<Tensor<double>> inputs;
        inputs.push_back(to_tensor<double>(x));
        return run_op(std::move(inputs), [](Tape<double>& t, const std::vector<int>& ids) {
          return relu(t, ids[0]);
        });
      },
      py::arg("x"));
  m.def(
      "sigmoid",
      [](DoubleArray x) {
        std::vector<Tensor<double>> inputs;
        inputs.push_back(to_tensor<double>(x));
        return run_op(std::move(inputs), [](Tape<double>& t, const std::vector<int>& ids) {
          return sigmoid(t, ids[0]);
        });
      },
      py::arg("x"));
  m.def(
      "gap_spatial",
      [](DoubleArray x) {
        std::vector<Tensor<double>> inputs;
        inputs.push_back(to_tensor<double>(x));
        return run_op(std::move(inputs), [](Tape<double>& t, const std::vector<int>& ids) {
          return gap_spatial(t, ids[0]);
        });
      },
      py::arg("x"), "per-(sample, channel, depth) spatial mean of an (N,C,D,H,W) input");
  m.def(
      "gap_global",
      [](DoubleArray x) {
        std::vector<Tensor<double>> inputs;
        inputs.push_back(to_tensor<double>(x));
        return run_op(std::move(inputs), [](Tape<double>& t, const std::vector<int>& ids) {
          return gap_global(t, ids[0]);
        });
      },
      py::arg("x"), "per-(sample, channel) mean over depth and space");
  m.def(
      "ca_forward",
      [](DoubleArray x, DoubleArray w1, DoubleArray w2) {
        std::vector<Tensor<double>> inputs;
        inputs.push_back(to_tensor<double>(x));
        inputs.push_back(to_tensor<double>(w1));
        inputs.push_back(to_tensor<double>(w2));
        return run_op(std::move(inputs), [](Tape<double>& t, const std::vector<int>& ids) {
          return ca_forward(t, ids[0], ids[1], ids[2]);
        });
      },
      py::arg("x"), py::arg("w1"), py::arg("w2"),
      "channel-wise attention gate applied to an (N,C,D,H,W) input");
  m.def(
      "da_forward",
      [](DoubleArray x, DoubleArray w1, DoubleArray w2, std::int64_t feature_depth) {
        std::vector<Tensor<double>> inputs;
        inputs.push_back(to_tensor<double>(x));
        inputs.push_back(to_tensor<double>(w1));
        inputs.push_back(to_tensor<double>(w2));
        return run_op(std::move(inputs),
                      [feature_depth](Tape<double>& t, const std::vector<int>& ids) {
                        return da_forward(t, ids[0], ids[1], ids[2], feature_depth);
                      });
      },
      py::arg("x"), py::arg("w1"), py::arg("w2"), py::arg("feature_depth"),
      "depth-wise attention gate applied to an (N,C,D,H,W) input");

  m.def("cosine_lr", &cosine_lr, py::arg("t"), py::arg("total"), py::arg("lr_max"),
        py::arg("lr_min") = 0.0, "cosine-annealed learning rate at epoch t of total");
  m.def("roc_auc", &py_roc_auc, py::arg("scores"), py::arg("labels"),
        "rank-based AUC; None when a class is absent");
  m.def("param_count", &py_param_count, py::arg("config_json") = std::string("{}"),
        "trainable-parameter totals for the network section of a JSON config");
  m.def(
      "config_hash",
      [](const std::string& text) {
        char buf[20];
        std::snprintf(buf, sizeof buf, "%016llx",
                      static_cast<unsigned long long>(
                          run_config_hash(parse_run_config_text(text))));
        return std::string(buf);
      },
      py::arg("config_json") = std::string("{}"),
      "canonical hash of a JSON config document");
  m.def("read_volume", &py_read_volume, py::arg("path"),
        "load a volume file; labels and patient ids live in the manifest");
  m.def("write_volume", &py_write_volume, py::arg("path"), py::arg("voxels"),
        py::arg("lesion_mask") = py::none());
  m.def("gradcheck_worst", &py_gradcheck_worst, py::arg("seeds") = 1,
        "worst finite-difference relative error over the kernel suite");
  m.def("run_cli", &py_run_cli, py::arg("args"),
        "in-process CLI dispatch; returns (exit_code, stdout, stderr)");
}
