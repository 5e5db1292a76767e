#ifndef TRACELENS_TOY_TRAINER_H_
#define TRACELENS_TOY_TRAINER_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tracelens/graph.h"
#include "tracelens/toy_model.h"
#include "tracelens/trace_model.h"

namespace tracelens::toy {

inline constexpr const char* kDefaultCategory = "default";
inline constexpr const char* kLongSequenceCategory = "long_sequence";
inline constexpr const char* kMainLoss = "main";
inline constexpr const char* kAuxLoss = "aux";

struct TrainConfig {
  std::uint64_t steps = 100;
  std::uint64_t seed = 0;
  double growth = 1.5;
  std::size_t batch = 16;
  std::size_t seq_len = 4;  // long_sequence batches use twice this
  std::size_t hidden = 8;
  double learning_rate = 0.05;
  std::uint32_t max_samples = 8;
  // Every n-th batch (1-based) is a long_sequence batch.
  std::uint64_t long_every = 7;
  // Detach the aux-loss path: it then trains nothing but is still logged.
  bool inject_bug = false;
  std::string run_id;
  std::string trial_id = "trial_0";
};

// Deterministic training loop. Batches, categories and updates depend only on
// the config, so a second Trainer with the same config replays a run exactly.
class Trainer {
 public:
  explicit Trainer(const TrainConfig& config);

  struct Step {
    std::uint64_t index = 0;
    std::string category;
    Batch batch;
    Activations activations;
    LossGradients gradients;
    ToyModel model_before;  // parameters the forward pass used
  };

  // Draws the next batch, runs forward and backward, applies the update.
  Step step();

  const ToyModel& model() const { return model_; }
  const TrainConfig& config() const { return config_; }
  std::uint64_t steps_done() const { return next_step_; }

  std::string category_of(std::uint64_t step) const;

 private:
  TrainConfig config_;
  Rng rng_;
  ToyModel model_;
  std::uint64_t next_step_ = 0;
};

// Named nodes of the toy model, with variants for every position up to
// `max_seq_len`.
std::vector<NodeSpec> node_specs(std::size_t max_seq_len);

// Operation-level computation graph for sequences of `seq_len`, with recorded
// tensors bound to the nodes of node_specs(seq_len).
RawGraph raw_graph(std::size_t seq_len);

ModuleTreeNode network_tree(const ToyModel& model);

// All records (forward plus every per-loss gradient that exists) for one step.
StepRecord make_step_record(const TrainConfig& config, const Trainer::Step& step);

struct TrainSummary {
  std::filesystem::path run_dir;
  std::map<std::string, std::vector<std::uint64_t>> recorded_steps;  // per category
  std::vector<double> loss_main;  // one per training step
  std::vector<double> loss_aux;
};

// Trains for config.steps steps, recording scheduled steps into a new run at
// `out`, and finalizes it.
TrainSummary train_and_record(const TrainConfig& config,
                              const std::filesystem::path& out);

}  // namespace tracelens::toy

#endif  // TRACELENS_TOY_TRAINER_H_
