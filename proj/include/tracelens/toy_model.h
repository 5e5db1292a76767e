#ifndef TRACELENS_TOY_MODEL_H_
#define TRACELENS_TOY_MODEL_H_

// A tiny differentiable sequence model used to produce traces whose contents
// can be checked analytically.
//
// Task: given x[0..T), predict every running partial sum p[t] = x[0] + ... +
// x[t]. Position t sees its own input plus the previous partial sum (teacher
// forced), through one tanh layer and a linear readout:
//
//   a[t] = (x[t], p[t-1])          p[-1] = 0
//   h[t] = tanh(W1 a[t] + b1)      W1: H x 2
//   y[t] = W2 . h[t] + b2          W2: 1 x H
//
// Losses, both averaged over the batch:
//   main = (y[T-1] - p[T-1])^2
//   aux  = mean over t < T-1 of (y[t] - p[t])^2
//
// The aux loss never reaches the final prediction, so some (node, loss)
// gradient pairs do not exist.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace tracelens::toy {

// xorshift64* (Vigna 2016): x ^= x >> 12; x ^= x << 25; x ^= x >> 27;
// output x * 0x2545F4914F6CDD1D. Seeds are expanded with one splitmix64 step
// (increment 0x9E3779B97F4A7C15) so that seed 0 is usable.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  std::uint64_t next();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

 private:
  std::uint64_t state_;
};

struct ToyModel {
  std::size_t hidden = 0;
  std::vector<double> w1;  // H x 2, row-major
  std::vector<double> b1;  // H
  std::vector<double> w2;  // H
  std::vector<double> b2;  // 1

  // W1, W2 ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero.
  static ToyModel init(std::size_t hidden, Rng& rng);
  static ToyModel zeros(std::size_t hidden);
  std::size_t param_count() const { return 4 * hidden + 1; }
};

struct Batch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<double> x;  // batch x seq_len, row-major
};

// Running sums along each row of `x` (batch x seq_len).
std::vector<double> partial_sums(std::span<const double> x, std::size_t batch,
                                 std::size_t seq_len);

struct Activations {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::size_t hidden = 0;
  std::vector<double> inputs;   // B x T
  std::vector<double> targets;  // B x T partial sums
  std::vector<std::vector<double>> layer_in;  // per t: B x 2
  std::vector<std::vector<double>> hidden_state;  // per t: B x H
  std::vector<std::vector<double>> prediction;  // per t: B
  std::vector<double> loss_main_per_sample;  // B
  std::vector<double> loss_aux_per_sample;   // B
  double loss_main = 0.0;
  double loss_aux = 0.0;

  std::span<const double> output() const { return prediction.back(); }
};

// Requires seq_len >= 2 and batch >= 1 (kShape otherwise).
Activations forward(const ToyModel& model, const Batch& batch);

// Gradient of some weighted loss with respect to the parameters and every
// named intermediate tensor. A `touched_*` flag is false when the loss does
// not depend on that tensor at all; its gradient is then absent rather than
// zero.
struct Gradients {
  std::vector<double> w1, b1, w2, b2;
  bool touched_params = false;
  std::vector<std::vector<double>> hidden_state;  // per t: B x H
  std::vector<std::vector<double>> prediction;    // per t: B
  std::vector<bool> touched_position;             // per t
  std::vector<double> output;                     // B
  bool touched_output = false;
  std::vector<double> loss_main;  // d loss / d per-sample main loss
  std::vector<double> loss_aux;
  bool touched_loss_main = false;
  bool touched_loss_aux = false;
};

struct LossGradients {
  Gradients main;
  Gradients aux;
  // Computed by its own backward pass seeded with both losses, not by adding
  // the two above.
  Gradients combined;
};

// Reverse-mode pass for `weight_main * main + weight_aux * aux`. With
// `detach_aux`, the aux gradient stops at the aux loss node.
Gradients backward_weighted(const ToyModel& model, const Activations& acts,
                            double weight_main, double weight_aux,
                            bool detach_aux = false);

// Per-loss and combined gradients. `targets` (B x T partial sums) must match
// the activations; kShape otherwise.
LossGradients backward(const ToyModel& model, const Activations& acts,
                       std::span<const double> targets, bool detach_aux = false);

// Plain gradient-descent update with the given gradients.
void apply_update(ToyModel& model, const Gradients& grads, double learning_rate);

}  // namespace tracelens::toy

#endif  // TRACELENS_TOY_MODEL_H_
