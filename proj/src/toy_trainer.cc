#include "tracelens/toy_trainer.h"

#include <cmath>
#include <string>

#include "tracelens/error.h"
#include "tracelens/run_store.h"
#include "tracelens/scheduler.h"
#include "tracelens/stats.h"

namespace tracelens::toy {
namespace {

std::string position_key(std::size_t t) { return "t" + std::to_string(t); }
std::string partial_sum_key(std::size_t t) {
  return "partial_sum_t" + std::to_string(t);
}

std::vector<double> column(const std::vector<double>& rows, std::size_t width,
                           std::size_t col) {
  std::vector<double> out(rows.size() / width);
  for (std::size_t b = 0; b < out.size(); ++b) out[b] = rows[b * width + col];
  return out;
}

}  // namespace

Trainer::Trainer(const TrainConfig& config)
    : config_(config), rng_(config.seed) {
  if (config.steps == 0 || config.batch == 0 || config.seq_len < 2 ||
      config.hidden == 0 || config.long_every == 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "toy trainer: steps, batch, hidden and long_every must be >= 1 "
                "and seq_len >= 2");
  }
  model_ = ToyModel::init(config.hidden, rng_);
}

std::string Trainer::category_of(std::uint64_t step) const {
  return (step + 1) % config_.long_every == 0 ? kLongSequenceCategory
                                              : kDefaultCategory;
}

Trainer::Step Trainer::step() {
  Step s;
  s.index = next_step_++;
  s.category = category_of(s.index);
  s.batch.batch = config_.batch;
  s.batch.seq_len =
      s.category == kLongSequenceCategory ? 2 * config_.seq_len : config_.seq_len;
  s.batch.x.resize(s.batch.batch * s.batch.seq_len);
  for (auto& v : s.batch.x) v = rng_.uniform(-1.0, 1.0);
  s.model_before = model_;
  s.activations = forward(model_, s.batch);
  s.gradients = backward(model_, s.activations, s.activations.targets,
                         config_.inject_bug);
  apply_update(model_, s.gradients.combined, config_.learning_rate);
  return s;
}

std::vector<NodeSpec> node_specs(std::size_t max_seq_len) {
  std::vector<std::string> positions, sums;
  for (std::size_t t = 0; t < max_seq_len; ++t) {
    positions.push_back(position_key(t));
    sums.push_back(partial_sum_key(t));
  }
  return {
      {"input", Role::kInput, positions},
      {"target", Role::kTarget, {"default"}},
      {"W1", Role::kParameter, {"default"}},
      {"b1", Role::kParameter, {"default"}},
      {"W2", Role::kParameter, {"default"}},
      {"b2", Role::kParameter, {"default"}},
      {"hidden", Role::kCalculated, positions},
      {"helper_partial_sums", Role::kCalculated, sums},
      {"output", Role::kOutput, {"default"}},
      {"loss_main", Role::kLoss, {"default"}},
      {"loss_aux", Role::kLoss, {"default"}},
  };
}

RawGraph raw_graph(std::size_t seq_len) {
  RawGraph g;
  g.nodes = node_specs(seq_len);
  for (const char* p : {"W1", "b1", "W2", "b2"}) g.name(p, p);
  for (std::size_t t = 0; t < seq_len; ++t) {
    const std::string k = std::to_string(t);
    g.name("x" + k, "input", position_key(t));
    // running sum p[t] = p[t-1] + x[t]
    if (t == 0) {
      g.add_edge("x0", "cumsum0");
    } else {
      g.add_edge("cumsum" + std::to_string(t - 1), "add_cumsum" + k);
      g.add_edge("x" + k, "add_cumsum" + k);
      g.add_edge("add_cumsum" + k, "cumsum" + k);
    }
    // a[t] = (x[t], p[t-1])
    g.add_edge("x" + k, "concat" + k);
    g.add_edge(t == 0 ? std::string("zeros") : "cumsum" + std::to_string(t - 1),
               "concat" + k);
    g.add_edge("concat" + k, "matmul1_" + k);
    g.add_edge("W1", "matmul1_" + k);
    g.add_edge("matmul1_" + k, "add_b1_" + k);
    g.add_edge("b1", "add_b1_" + k);
    g.name("tanh" + k, "hidden", position_key(t));
    g.add_edge("add_b1_" + k, "tanh" + k);
    g.add_edge("tanh" + k, "matmul2_" + k);
    g.add_edge("W2", "matmul2_" + k);
    g.name("y" + k, "helper_partial_sums", partial_sum_key(t));
    g.add_edge("matmul2_" + k, "y" + k);
    g.add_edge("b2", "y" + k);
  }
  const std::string last = std::to_string(seq_len - 1);
  g.name("final_sum", "target");
  g.add_edge("cumsum" + last, "final_sum");
  g.name("output", "output");
  g.add_edge("y" + last, "output");
  g.add_edge("output", "sub_main");
  g.add_edge("final_sum", "sub_main");
  g.add_edge("sub_main", "square_main");
  g.name("loss_main", "loss_main");
  g.add_edge("square_main", "loss_main");
  g.name("loss_aux", "loss_aux");
  for (std::size_t t = 0; t + 1 < seq_len; ++t) {
    const std::string k = std::to_string(t);
    g.add_edge("y" + k, "sub_aux" + k);
    g.add_edge("cumsum" + k, "sub_aux" + k);
    g.add_edge("sub_aux" + k, "square_aux" + k);
    g.add_edge("square_aux" + k, "mean_aux");
  }
  g.add_edge("mean_aux", "loss_aux");
  return g;
}

ModuleTreeNode network_tree(const ToyModel& model) {
  ModuleTreeNode encoder{"encoder", model.w1.size() + model.b1.size(), {}};
  ModuleTreeNode readout{"readout", model.w2.size() + model.b2.size(), {}};
  return ModuleTreeNode{"toy_model", 0, {encoder, readout}};
}

StepRecord make_step_record(const TrainConfig& config, const Trainer::Step& step) {
  const Activations& a = step.activations;
  const std::uint32_t B = static_cast<std::uint32_t>(a.batch);
  const std::uint32_t H = static_cast<std::uint32_t>(a.hidden);
  const std::size_t T = a.seq_len;
  const std::uint32_t S = config.max_samples;

  StepRecord rec;
  rec.trial_id = config.trial_id;
  rec.step = step.index;
  rec.category = step.category;
  rec.metadata["seq_len"] = static_cast<std::int64_t>(T);
  auto& out = rec.records;

  const Mode fwd = Mode::forward();
  for (std::size_t t = 0; t < T; ++t) {
    out.push_back(capture("input", position_key(t), fwd, column(a.inputs, T, t),
                          {B, 1}, S));
  }
  out.push_back(capture("target", "default", fwd, column(a.targets, T, T - 1),
                        {B, 1}, S));
  const ToyModel& m = step.model_before;
  out.push_back(capture_parameter("W1", "default", fwd, m.w1));
  out.push_back(capture_parameter("b1", "default", fwd, m.b1));
  out.push_back(capture_parameter("W2", "default", fwd, m.w2));
  out.push_back(capture_parameter("b2", "default", fwd, m.b2));
  for (std::size_t t = 0; t < T; ++t) {
    out.push_back(capture("hidden", position_key(t), fwd, a.hidden_state[t], {B, H}, S));
    out.push_back(capture("helper_partial_sums", partial_sum_key(t), fwd,
                          a.prediction[t], {B, 1}, S));
  }
  out.push_back(capture("output", "default", fwd, a.output(), {B, 1}, S));
  out.push_back(capture("loss_main", "default", fwd, a.loss_main_per_sample, {B, 1}, S));
  out.push_back(capture("loss_aux", "default", fwd, a.loss_aux_per_sample, {B, 1}, S));

  const std::pair<const char*, const Gradients*> losses[] = {
      {kMainLoss, &step.gradients.main},
      {kAuxLoss, &step.gradients.aux},
      {kCombinedLoss.data(), &step.gradients.combined},
  };
  for (const auto& [loss, g] : losses) {
    const Mode mode = Mode::gradient(loss);
    if (g->touched_params) {
      out.push_back(capture_parameter("W1", "default", mode, g->w1));
      out.push_back(capture_parameter("b1", "default", mode, g->b1));
      out.push_back(capture_parameter("W2", "default", mode, g->w2));
      out.push_back(capture_parameter("b2", "default", mode, g->b2));
    }
    for (std::size_t t = 0; t < T; ++t) {
      if (!g->touched_position[t]) continue;
      out.push_back(capture("hidden", position_key(t), mode, g->hidden_state[t],
                            {B, H}, S));
      out.push_back(capture("helper_partial_sums", partial_sum_key(t), mode,
                            g->prediction[t], {B, 1}, S));
    }
    if (g->touched_output) {
      out.push_back(capture("output", "default", mode, g->output, {B, 1}, S));
    }
    if (g->touched_loss_main) {
      out.push_back(capture("loss_main", "default", mode, g->loss_main, {B, 1}, S));
    }
    if (g->touched_loss_aux) {
      out.push_back(capture("loss_aux", "default", mode, g->loss_aux, {B, 1}, S));
    }
  }
  return rec;
}

TrainSummary train_and_record(const TrainConfig& config,
                              const std::filesystem::path& out) {
  Trainer trainer(config);
  RunOptions options;
  options.run_id = config.run_id.empty() ? out.filename().string() : config.run_id;
  options.max_samples = config.max_samples;
  options.schedule_growth = config.growth;
  options.trial_ids = {config.trial_id};
  options.losses = {kMainLoss, kAuxLoss, std::string(kCombinedLoss)};
  RunWriter writer = RunWriter::create(out, options);

  writer.write_graph(contract(raw_graph(2 * config.seq_len)));
  writer.write_network(network_tree(trainer.model()));

  RecordingScheduler scheduler(config.growth);
  scheduler.register_category(kDefaultCategory, config.growth);
  scheduler.register_category(kLongSequenceCategory, config.growth);

  writer.add_note({0, "toy partial-sum run: seed " + std::to_string(config.seed) +
                          ", batch " + std::to_string(config.batch) + ", seq_len " +
                          std::to_string(config.seq_len) + ", hidden " +
                          std::to_string(config.hidden) +
                          (config.inject_bug ? ", aux path detached" : "")});

  TrainSummary summary;
  summary.run_dir = out;
  for (std::uint64_t i = 0; i < config.steps; ++i) {
    // the recording decision is taken before the step runs
    const bool record = scheduler.should_record(trainer.category_of(i));
    Trainer::Step s = trainer.step();
    summary.loss_main.push_back(s.activations.loss_main);
    summary.loss_aux.push_back(s.activations.loss_aux);
    writer.add_scalar({"loss_main", s.index, s.activations.loss_main});
    writer.add_scalar({"loss_aux", s.index, s.activations.loss_aux});
    if (!std::isfinite(s.activations.loss_main)) {
      writer.add_note({s.index, "non-finite main loss"});
    }
    if (record) {
      writer.write_step(make_step_record(config, s));
      summary.recorded_steps[s.category].push_back(s.index);
      writer.add_note({s.index, "recorded " + s.category + " step " +
                                    std::to_string(s.index) +
                                    ": loss_main=" + std::to_string(s.activations.loss_main)});
    }
  }
  writer.finalize();
  return summary;
}

}  // namespace tracelens::toy
