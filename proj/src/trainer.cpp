#include "voxattn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "voxattn/errors.hpp"
#include "voxattn/ops.hpp"

namespace voxattn {

template <typename T>
Tensor<T> stack_batch(const std::vector<const VolumeSample*>& samples) {
  if (samples.empty()) throw ConfigError("stack_batch: empty batch");
  const auto& first = samples.front()->voxels.shape();
  const std::int64_t b = static_cast<std::int64_t>(samples.size());
  Tensor<T> batch({b, 1, first[1], first[2], first[3]});
  const std::int64_t stride = samples.front()->voxels.numel();
  for (std::int64_t i = 0; i < b; ++i) {
    const auto& voxels = samples[static_cast<std::size_t>(i)]->voxels;
    if (voxels.numel() != stride || voxels.shape() != first) {
      throw DimensionError("stack_batch: sample " + std::to_string(i) + " has shape " +
                           voxels.shape_string() + ", expected " +
                           samples.front()->voxels.shape_string());
    }
    for (std::int64_t j = 0; j < stride; ++j) {
      batch[i * stride + j] = static_cast<T>(voxels[j]);
    }
  }
  return batch;
}

namespace {

std::int64_t argmax_row(const Tensor<float>& logits, std::int64_t row) {
  const std::int64_t k = logits.extent(1);
  std::int64_t best = 0;
  for (std::int64_t j = 1; j < k; ++j) {
    if (logits[row * k + j] > logits[row * k + best]) best = j;
  }
  return best;
}

}  // namespace

EpochSummary train_epoch(ModelParams<float>& params, AdamState<float>& opt, const Dataset& data,
                         const std::vector<std::int64_t>& indices, const TrainConfig& cfg,
                         std::int64_t epoch, double lr, Rng& aug_rng) {
  if (cfg.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (indices.empty()) throw ConfigError("train: no training samples");

  double loss_sum = 0.0;
  std::int64_t correct = 0;
  const std::int64_t n = static_cast<std::int64_t>(indices.size());
  std::int64_t batch_index = 0;

  for (std::int64_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
    const std::int64_t end = std::min<std::int64_t>(n, start + cfg.batch_size);
    std::vector<VolumeSample> augmented;
    std::vector<const VolumeSample*> views;
    std::vector<std::int64_t> labels;
    for (std::int64_t i = start; i < end; ++i) {
      const VolumeSample& sample = data.samples[static_cast<std::size_t>(indices[i])];
      labels.push_back(sample.label);
      if (cfg.augment) {
        augmented.push_back(voxattn::augment(sample, aug_rng, cfg.augment_cfg));
      }
    }
    if (cfg.augment) {
      for (const auto& s : augmented) views.push_back(&s);
    } else {
      for (std::int64_t i = start; i < end; ++i) {
        views.push_back(&data.samples[static_cast<std::size_t>(indices[i])]);
      }
    }

    Tape<float> tape;
    const int x = tape.add_leaf(stack_batch<float>(views));
    ForwardResult<float> result = network_forward(tape, params, x, Mode::kTrain);
    const int loss_id = softmax_cross_entropy(tape, result.logits, labels);
    const double loss = tape.value(loss_id)[0];
    if (!std::isfinite(loss)) {
      throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                         std::to_string(batch_index));
    }
    const Tensor<float>& logits = tape.value(result.logits);
    for (std::int64_t r = 0; r < end - start; ++r) {
      if (argmax_row(logits, r) == labels[static_cast<std::size_t>(r)]) ++correct;
    }
    loss_sum += loss * static_cast<double>(end - start);

    tape.backward(loss_id);
    std::unordered_map<std::string, Tensor<float>> grads;
    for (const auto& [name, id] : result.param_ids) {
      if (tape.has_gradient(id)) grads.emplace(name, tape.gradient(id));
    }
    adam_step(params.tensors, grads, opt, lr);
  }

  EpochSummary summary;
  summary.epoch = epoch;
  summary.mean_loss = loss_sum / static_cast<double>(n);
  summary.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  summary.lr = lr;
  return summary;
}

std::vector<EpochSummary> train_run(ModelParams<float>& params, const Dataset& data,
                                    const std::vector<std::int64_t>& indices,
                                    const TrainConfig& cfg, const std::string& log_path,
                                    const std::function<void(const EpochSummary&)>& on_epoch) {
  if (cfg.epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (cfg.lr_min > cfg.lr_max) throw ConfigError("train: lr_min exceeds lr_max");

  AdamState<float> opt = adam_init(params.tensors, cfg.adam);
  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, std::ios::trunc);
    if (!log) throw IoError("train: cannot open log '" + log_path + "'");
    log << "epoch,mean_loss,train_accuracy,lr\n";
  }

  std::vector<EpochSummary> history;
  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::int64_t> order = indices;
    Rng shuffle_rng = Rng::derive(cfg.seed, 0x5348, static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
    }
    Rng aug_rng = Rng::derive(cfg.seed, 0x4147, static_cast<std::uint64_t>(epoch));
    const double lr = cosine_lr(epoch, cfg.epochs, cfg.lr_max, cfg.lr_min);
    EpochSummary summary = train_epoch(params, opt, data, order, cfg, epoch, lr, aug_rng);
    history.push_back(summary);
    if (log.is_open()) {
      char line[160];
      std::snprintf(line, sizeof(line), "%lld,%.9g,%.6g,%.9g\n",
                    static_cast<long long>(summary.epoch), summary.mean_loss, summary.accuracy,
                    summary.lr);
      log << line;
      log.flush();
    }
    if (on_epoch) on_epoch(summary);
  }
  return history;
}

Tensor<float> predict_probabilities(ModelParams<float>& params, const Dataset& data,
                                    const std::vector<std::int64_t>& indices,
                                    std::int64_t batch_size) {
  if (batch_size < 1) throw ConfigError("predict: batch_size must be >= 1");
  const std::int64_t n = static_cast<std::int64_t>(indices.size());
  const std::int64_t k = params.config.num_classes;
  Tensor<float> probabilities({std::max<std::int64_t>(n, 1), k});
  for (std::int64_t start = 0; start < n; start += batch_size) {
    const std::int64_t end = std::min<std::int64_t>(n, start + batch_size);
    std::vector<const VolumeSample*> views;
    for (std::int64_t i = start; i < end; ++i) {
      views.push_back(&data.samples[static_cast<std::size_t>(indices[i])]);
    }
    Tape<float> tape;
    const int x = tape.add_leaf(stack_batch<float>(views));
    ForwardResult<float> result = network_forward(tape, params, x, Mode::kEval);
    const Tensor<float> probs = softmax(tape.value(result.logits));
    for (std::int64_t r = 0; r < end - start; ++r) {
      for (std::int64_t j = 0; j < k; ++j) {
        probabilities[(start + r) * k + j] = probs[r * k + j];
      }
    }
  }
  return probabilities;
}

template Tensor<float> stack_batch<float>(const std::vector<const VolumeSample*>&);
template Tensor<double> stack_batch<double>(const std::vector<const VolumeSample*>&);

}  // namespace voxattn
