#include "tracelens/toy_model.h"

#include <cmath>
#include <string>

#include "tracelens/error.h"

namespace tracelens::toy {

Rng::Rng(std::uint64_t seed) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  state_ = z ^ (z >> 31);
  if (state_ == 0) state_ = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t Rng::next() {
  state_ ^= state_ >> 12;
  state_ ^= state_ << 25;
  state_ ^= state_ >> 27;
  return state_ * 0x2545F4914F6CDD1DULL;
}

double Rng::uniform() {
  return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

ToyModel ToyModel::zeros(std::size_t hidden) {
  ToyModel m;
  m.hidden = hidden;
  m.w1.assign(2 * hidden, 0.0);
  m.b1.assign(hidden, 0.0);
  m.w2.assign(hidden, 0.0);
  m.b2.assign(1, 0.0);
  return m;
}

ToyModel ToyModel::init(std::size_t hidden, Rng& rng) {
  ToyModel m = zeros(hidden);
  const double a1 = 1.0 / std::sqrt(2.0);
  const double a2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (auto& w : m.w1) w = rng.uniform(-a1, a1);
  for (auto& w : m.w2) w = rng.uniform(-a2, a2);
  return m;
}

std::vector<double> partial_sums(std::span<const double> x, std::size_t batch,
                                 std::size_t seq_len) {
  std::vector<double> p(x.size());
  for (std::size_t b = 0; b < batch; ++b) {
    double run = 0.0;
    for (std::size_t t = 0; t < seq_len; ++t) {
      run += x[b * seq_len + t];
      p[b * seq_len + t] = run;
    }
  }
  return p;
}

Activations forward(const ToyModel& model, const Batch& batch) {
  const std::size_t B = batch.batch;
  const std::size_t T = batch.seq_len;
  const std::size_t H = model.hidden;
  if (B == 0 || T < 2 || batch.x.size() != B * T) {
    throw Error(ErrorCode::kShape,
                "toy forward: need batch >= 1, seq_len >= 2 and batch*seq_len inputs");
  }
  Activations a;
  a.batch = B;
  a.seq_len = T;
  a.hidden = H;
  a.inputs = batch.x;
  a.targets = partial_sums(batch.x, B, T);
  a.layer_in.assign(T, std::vector<double>(B * 2));
  a.hidden_state.assign(T, std::vector<double>(B * H));
  a.prediction.assign(T, std::vector<double>(B));
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < B; ++b) {
      const double x = batch.x[b * T + t];
      const double carried = t == 0 ? 0.0 : a.targets[b * T + t - 1];
      a.layer_in[t][b * 2] = x;
      a.layer_in[t][b * 2 + 1] = carried;
      double y = model.b2[0];
      for (std::size_t h = 0; h < H; ++h) {
        const double z = model.w1[h * 2] * x + model.w1[h * 2 + 1] * carried + model.b1[h];
        const double act = std::tanh(z);
        a.hidden_state[t][b * H + h] = act;
        y += model.w2[h] * act;
      }
      a.prediction[t][b] = y;
    }
  }
  a.loss_main_per_sample.resize(B);
  a.loss_aux_per_sample.resize(B);
  for (std::size_t b = 0; b < B; ++b) {
    const double e = a.prediction[T - 1][b] - a.targets[b * T + T - 1];
    a.loss_main_per_sample[b] = e * e;
    double aux = 0.0;
    for (std::size_t t = 0; t + 1 < T; ++t) {
      const double d = a.prediction[t][b] - a.targets[b * T + t];
      aux += d * d;
    }
    a.loss_aux_per_sample[b] = aux / static_cast<double>(T - 1);
    a.loss_main += a.loss_main_per_sample[b];
    a.loss_aux += a.loss_aux_per_sample[b];
  }
  a.loss_main /= static_cast<double>(B);
  a.loss_aux /= static_cast<double>(B);
  return a;
}

Gradients backward_weighted(const ToyModel& model, const Activations& acts,
                            double weight_main, double weight_aux,
                            bool detach_aux) {
  const std::size_t B = acts.batch;
  const std::size_t T = acts.seq_len;
  const std::size_t H = acts.hidden;
  if (H != model.hidden) {
    throw Error(ErrorCode::kShape, "toy backward: activations use hidden width " +
                                       std::to_string(H) + ", model has " +
                                       std::to_string(model.hidden));
  }
  const double fb = static_cast<double>(B);
  const bool use_main = weight_main != 0.0;
  const bool use_aux = weight_aux != 0.0;

  Gradients g;
  g.w1.assign(2 * H, 0.0);
  g.b1.assign(H, 0.0);
  g.w2.assign(H, 0.0);
  g.b2.assign(1, 0.0);
  g.hidden_state.assign(T, std::vector<double>(B * H, 0.0));
  g.prediction.assign(T, std::vector<double>(B, 0.0));
  g.touched_position.assign(T, false);
  g.output.assign(B, 0.0);
  g.loss_main.assign(B, use_main ? weight_main / fb : 0.0);
  g.loss_aux.assign(B, use_aux ? weight_aux / fb : 0.0);
  g.touched_loss_main = use_main;
  g.touched_loss_aux = use_aux;

  if (use_main) {
    g.touched_output = true;
    g.touched_position[T - 1] = true;
    for (std::size_t b = 0; b < B; ++b) {
      const double e = acts.prediction[T - 1][b] - acts.targets[b * T + T - 1];
      g.output[b] = g.loss_main[b] * 2.0 * e;
      g.prediction[T - 1][b] = g.output[b];
    }
  }
  if (use_aux && !detach_aux) {
    const double per_pos = 1.0 / static_cast<double>(T - 1);
    for (std::size_t t = 0; t + 1 < T; ++t) {
      g.touched_position[t] = true;
      for (std::size_t b = 0; b < B; ++b) {
        const double d = acts.prediction[t][b] - acts.targets[b * T + t];
        g.prediction[t][b] = g.loss_aux[b] * per_pos * 2.0 * d;
      }
    }
  }

  for (std::size_t t = 0; t < T; ++t) {
    if (!g.touched_position[t]) continue;
    g.touched_params = true;
    for (std::size_t b = 0; b < B; ++b) {
      const double dy = g.prediction[t][b];
      g.b2[0] += dy;
      const double x = acts.layer_in[t][b * 2];
      const double carried = acts.layer_in[t][b * 2 + 1];
      for (std::size_t h = 0; h < H; ++h) {
        const double act = acts.hidden_state[t][b * H + h];
        g.w2[h] += dy * act;
        const double dh = dy * model.w2[h];
        g.hidden_state[t][b * H + h] = dh;
        const double dz = dh * (1.0 - act * act);
        g.b1[h] += dz;
        g.w1[h * 2] += dz * x;
        g.w1[h * 2 + 1] += dz * carried;
      }
    }
  }
  return g;
}

LossGradients backward(const ToyModel& model, const Activations& acts,
                       std::span<const double> targets, bool detach_aux) {
  if (targets.size() != acts.batch * acts.seq_len ||
      acts.prediction.size() != acts.seq_len ||
      acts.hidden_state.size() != acts.seq_len) {
    throw Error(ErrorCode::kShape,
                "toy backward: targets and activations disagree in shape");
  }
  Activations with_targets = acts;
  with_targets.targets.assign(targets.begin(), targets.end());
  LossGradients out;
  out.main = backward_weighted(model, with_targets, 1.0, 0.0, detach_aux);
  out.aux = backward_weighted(model, with_targets, 0.0, 1.0, detach_aux);
  out.combined = backward_weighted(model, with_targets, 1.0, 1.0, detach_aux);
  return out;
}

void apply_update(ToyModel& model, const Gradients& grads, double learning_rate) {
  auto step = [&](std::vector<double>& p, const std::vector<double>& d) {
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= learning_rate * d[i];
  };
  step(model.w1, grads.w1);
  step(model.b1, grads.b1);
  step(model.w2, grads.w2);
  step(model.b2, grads.b2);
}

}  // namespace tracelens::toy
