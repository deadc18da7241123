#pragma once

#include <functional>
#include <string>
#include <vector>

#include "voxattn/dataset.hpp"
#include "voxattn/network.hpp"
#include "voxattn/optim.hpp"
#include "voxattn/resample.hpp"

namespace voxattn {

struct TrainConfig {
  std::int64_t epochs = 30;
  std::int64_t batch_size = 4;
  double lr_max = 1e-3;
  double lr_min = 0.0;
  std::uint64_t seed = 0;
  bool augment = true;
  AugmentConfig augment_cfg;
  std::int64_t checkpoint_every = 0;  // epochs between snapshots, 0 = final only
  AdamConfig adam;
};

struct EpochSummary {
  std::int64_t epoch = 0;
  double mean_loss = 0.0;
  double accuracy = 0.0;  // training accuracy, measured before each update
  double lr = 0.0;
};

// Stacks the given samples into a (B,1,D,H,W) batch tensor plus labels.
template <typename T>
Tensor<T> stack_batch(const std::vector<const VolumeSample*>& samples);

// One full pass over `indices` into the dataset, in order, batched by
// cfg.batch_size. Augmentation draws come from `aug_rng` in consumption
// order. A non-finite loss aborts with a NumericError naming the batch.
EpochSummary train_epoch(ModelParams<float>& params, AdamState<float>& opt,
                         const Dataset& data, const std::vector<std::int64_t>& indices,
                         const TrainConfig& cfg, std::int64_t epoch, double lr, Rng& aug_rng);

// Full training loop: per-epoch cosine learning rate, deterministic shuffle
// and augmentation streams derived from cfg.seed, epoch summaries appended to
// `log_path` as `epoch,mean_loss,train_accuracy,lr` lines when non-empty.
// `on_epoch`, when set, observes each summary.
std::vector<EpochSummary> train_run(
    ModelParams<float>& params, const Dataset& data, const std::vector<std::int64_t>& indices,
    const TrainConfig& cfg, const std::string& log_path = "",
    const std::function<void(const EpochSummary&)>& on_epoch = nullptr);

// Eval-mode class probabilities, batched; rows follow `indices`.
// Returns an (n, num_classes) tensor of softmax probabilities.
Tensor<float> predict_probabilities(ModelParams<float>& params, const Dataset& data,
                                    const std::vector<std::int64_t>& indices,
                                    std::int64_t batch_size);

extern template Tensor<float> stack_batch<float>(const std::vector<const VolumeSample*>&);
extern template Tensor<double> stack_batch<double>(const std::vector<const VolumeSample*>&);

}  // namespace voxattn
