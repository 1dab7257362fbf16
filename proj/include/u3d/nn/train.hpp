#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "u3d/errors.hpp"
#include "u3d/nn/layers.hpp"
#include "u3d/nn/model.hpp"
#include "u3d/nn/sgd.hpp"
#include "u3d/random.hpp"
#include "u3d/tensor.hpp"

namespace u3d::nn {

struct TrainConfig {
  double learning_rate = 1e-6;
  double momentum = 0.99;
  std::size_t batch_size = 2;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
};

/// Model inputs ([W, H, D] tensors) with binary labels.
struct Dataset {
  std::vector<TensorF> inputs;
  std::vector<int> labels;

  std::size_t size() const { return inputs.size(); }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Everything needed to resume or serialize a training run.
struct ModelState {
  Network<float> network;
  SgdMomentum<float> optimizer;
  std::uint64_t seed = 0;
  std::size_t epochs_done = 0;
};

struct TrainOutcome {
  ModelState state;
  std::vector<EpochRecord> history;
};

/// Seed streams of one run.
enum class SeedStream : std::uint64_t { Init = 0, Shuffle = 1, Dropout = 2 };

inline std::uint64_t stream_seed(std::uint64_t seed, SeedStream s) {
  return derive_seed(seed, static_cast<std::uint64_t>(s));
}

/// Copies the selected samples into a [B, 1, X, Y, Z] batch.
template <typename T = float>
Tensor<T> make_batch(std::span<const TensorF> inputs, std::span<const std::size_t> idx) {
  if (idx.empty()) throw EmptyInputError("empty batch");
  const Shape& s = inputs[idx[0]].shape();
  if (s.size() != 3) throw ShapeError("model inputs must be rank-3 [W,H,D], got " + shape_string(s));
  const std::size_t n = inputs[idx[0]].size();
  Tensor<T> batch({idx.size(), 1, s[0], s[1], s[2]});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& t = inputs[idx[b]];
    if (t.shape() != s) throw ShapeError("inconsistent input shapes in batch");
    std::copy(t.data().begin(), t.data().end(), batch.data().begin() + static_cast<std::ptrdiff_t>(b * n));
  }
  return batch;
}

/// Runs `epochs` more epochs of minibatch SGD on `state`. Each epoch reshuffles
/// with the run's shuffle stream; dropout masks come from the dropout stream.
/// Both streams are re-derived from (seed, epoch) so resuming is exact.
inline std::vector<EpochRecord> train_epochs(ModelState& state, const Dataset& data, const TrainConfig& tc) {
  if (data.size() == 0) throw EmptyInputError("training set is empty");
  if (data.labels.size() != data.size()) throw ShapeError("label count does not match input count");
  if (tc.batch_size == 0) throw ConfigError("batch size must be positive");
  auto& net = state.network;
  const std::size_t classes = net.config().classes;
  std::vector<EpochRecord> history;
  std::vector<std::size_t> order(data.size());
  for (std::size_t e = 0; e < tc.epochs; ++e) {
    const std::size_t epoch = state.epochs_done + 1;
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(stream_seed(state.seed, SeedStream::Shuffle), epoch));
    Rng dropout_rng(derive_seed(stream_seed(state.seed, SeedStream::Dropout), epoch));
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t stop = std::min(order.size(), start + tc.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const TensorF batch = make_batch(data.inputs, idx);
      std::vector<int> labels;
      for (auto i : idx) labels.push_back(data.labels[i]);
      const TensorF target = one_hot<float>(labels, classes);
      const TensorF probs = net.forward(batch, Mode::Train, &dropout_rng);
      const auto loss = mae_loss(probs, target);
      net.backward(loss.grad);
      state.optimizer.step(net.parameters());
      loss_sum += static_cast<double>(loss.loss) * static_cast<double>(idx.size());
      for (std::size_t b = 0; b < idx.size(); ++b) {
        const int predicted = probs[b * classes + 1] >= 0.5f ? 1 : 0;
        if (predicted == labels[b]) ++correct;
      }
    }
    state.epochs_done = epoch;
    history.push_back({epoch, loss_sum / static_cast<double>(data.size()),
                       static_cast<double>(correct) / static_cast<double>(data.size())});
  }
  return history;
}

/// Fresh Glorot-initialized model trained for `tc.epochs` epochs.
inline TrainOutcome train(const Dataset& data, const ModelConfig& mc, const TrainConfig& tc) {
  if (data.size() == 0) throw EmptyInputError("training set is empty");
  TrainOutcome out{ModelState{Network<float>(mc, stream_seed(tc.seed, SeedStream::Init)),
                              SgdMomentum<float>(tc.learning_rate, tc.momentum), tc.seed, 0},
                   {}};
  out.history = train_epochs(out.state, data, tc);
  return out;
}

/// Eval-mode probability of class 1 for each input.
inline std::vector<double> predict(Network<float>& net, std::span<const TensorF> inputs, std::size_t batch = 4) {
  std::vector<double> scores;
  scores.reserve(inputs.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < inputs.size(); start += batch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(inputs.size(), start + batch); ++i) idx.push_back(i);
    const TensorF probs = net.forward(make_batch(inputs, idx), Mode::Eval);
    for (std::size_t b = 0; b < idx.size(); ++b) scores.push_back(probs[b * net.config().classes + 1]);
  }
  return scores;
}

}  // namespace u3d::nn
