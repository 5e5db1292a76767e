#ifndef TRACELENS_TESTS_TEST_SUPPORT_H_
#define TRACELENS_TESTS_TEST_SUPPORT_H_

// Independent reference implementations and fixtures shared by the unit and
// acceptance tests. Nothing here calls the code it is used to check.

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "tracelens/graph.h"
#include "tracelens/toy_model.h"
#include "tracelens/trace_model.h"

namespace tracelens::testing {

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// ---- statistics -----------------------------------------------------------

// Two-pass statistics in long double: filter non-finite values, then sum,
// then sum squared deviations from the mean.
struct RefStats {
  std::uint64_t count = 0, nan = 0, inf = 0, finite = 0, zeros = 0;
  long double mean = 0, std = 0, abs_mean = 0, l2 = 0, min = 0, max = 0;
  double frac_zero = 0;
};
RefStats two_pass(const std::vector<double>& values);

// |a - b| <= tol * |b|, with exact equality required when b is 0.
bool rel_close(double a, long double b, double tol);
double rel_error(double a, long double b);

// ---- graphs ---------------------------------------------------------------

struct RandomDag {
  RawGraph raw;
  int vertex_count = 0;
  std::vector<int> order;  // a topological order of vertex indices
};
// Vertices "v0".."v{n-1}" with edges sampled along a random permutation, so
// the result is acyclic. `named` of them are bound to nodes; with
// `share_nodes`, some nodes get two variant vertices.
RandomDag random_dag(std::mt19937_64& rng, int vertices, int named, double density,
                     bool share_nodes);

using EdgeSet = std::set<std::pair<std::string, std::string>>;

// Dependency edges by Warshall closure restricted to unnamed vertices:
// (a, b) iff a -> b directly or a -> x ~> y -> b with x ~> y running through
// unnamed vertices only. Self-edges dropped.
EdgeSet contraction_by_closure(const RawGraph& raw);
// Same relation by enumerating every raw path from each named vertex and
// stopping at the first named vertex. Exponential; small graphs only.
EdgeSet contraction_by_paths(const RawGraph& raw);

// Reachability matrix (strict: u reaches v by a path of length >= 1).
std::map<std::string, std::set<std::string>> reachability(
    const std::vector<std::string>& vertices,
    const std::vector<std::pair<std::string, std::string>>& edges);

// Longest path from any source, by |V| rounds of edge relaxation.
std::map<std::string, std::uint32_t> longest_path_layers(
    const std::vector<std::string>& nodes,
    const std::vector<std::pair<std::string, std::string>>& edges);

bool has_cycle(const std::vector<std::string>& nodes, const EdgeSet& edges);

// ---- scheduler --------------------------------------------------------------

// Recorded occurrence indices below n for a growth given as decimal text
// ("1.5"), iterating r(k+1) = max(r(k)+1, floor(r(k) * g)) in exact rational
// arithmetic.
std::vector<std::uint64_t> schedule_oracle(const std::string& growth_decimal,
                                           std::uint64_t n);

// ---- toy model ----------------------------------------------------------------

struct FlatParams {
  std::vector<double*> slots;
  std::vector<std::string> names;  // "w1[3]" etc.
};
FlatParams flatten(toy::ToyModel& model);
std::vector<double> flatten_grads(const toy::Gradients& g);

// Central differences of main and aux losses for every parameter.
struct FdGradients {
  std::vector<double> main, aux;
};
FdGradients finite_differences(const toy::ToyModel& model, const toy::Batch& batch,
                               double eps);

// Straightforward re-implementation of the toy forward equations.
struct ReferenceForward {
  std::vector<std::vector<double>> hidden;      // per t, B x H
  std::vector<std::vector<double>> prediction;  // per t, B
  double loss_main = 0, loss_aux = 0;
};
ReferenceForward reference_forward(const toy::ToyModel& model, const toy::Batch& batch);

// ---- traces ---------------------------------------------------------------

// Random record consistent with every trace_model invariant.
TensorRecord random_record(std::mt19937_64& rng, const std::string& node,
                           const std::string& variant, const Mode& mode,
                           std::uint32_t max_samples);
StepRecord random_step(std::mt19937_64& rng, const std::string& trial, std::uint64_t step,
                       const std::vector<std::string>& losses, std::uint32_t max_samples);

// Graph whose nodes cover every node/variant the random steps use.
DependencyGraph random_step_graph();

// Chain in -> early -> mid -> late (layers 0..3) of D=4 forward records at
// step 0, batch 128, retaining samples {5, 9}. Sample 5 sits 10 batch-stds
// (computed without it) above the rest on neuron 2 of `early`, and both
// downstream nodes carry it along. Returns the run directory.
std::filesystem::path write_outlier_fixture(const std::filesystem::path& root);

// Node "a" with successors "b" and "c" whose gradient records (loss "main",
// step 0) have abs_mean 0.1 and 0.001. A third successor "d" has only
// forward records.
std::filesystem::path write_balance_fixture(const std::filesystem::path& root);

// Steps 0..11 of trial "t"; steps 4 and 9 carry target_value = 7, the rest
// other values; every third step is category "rare".
std::filesystem::path write_metadata_fixture(const std::filesystem::path& root);

}  // namespace tracelens::testing

#endif  // TRACELENS_TESTS_TEST_SUPPORT_H_
