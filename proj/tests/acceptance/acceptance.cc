// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "test_support.h"
#include "tracelens/chunk_format.h"
#include "tracelens/graph.h"
#include "tracelens/query.h"
#include "tracelens/run_store.h"
#include "tracelens/scheduler.h"
#include "tracelens/stats.h"
#include "tracelens/toy_model.h"
#include "tracelens/toy_trainer.h"

using namespace tracelens;
namespace fs = std::filesystem;
namespace tt = tracelens::testing;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void fail(const std::string& why) {
    if (pass) detail << "first failure: " << why << "; ";
    pass = false;
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------- contraction

void graph_contraction(Outcome& o) {
  std::mt19937_64 rng(20240601);
  double contract_s = 0;
  long long oracle_edges = 0;
  const auto t_all = Clock::now();
  for (int i = 0; i < 200; ++i) {
    const int vertices = std::uniform_int_distribution<int>(2, 40)(rng);
    const int named = std::uniform_int_distribution<int>(1, std::min(12, vertices))(rng);
    const double density = std::uniform_real_distribution<double>(0.1, 0.4)(rng);
    auto dag = tt::random_dag(rng, vertices, named, density, false);

    const auto t0 = Clock::now();
    DependencyGraph g = contract(dag.raw);
    contract_s += seconds_since(t0);

    tt::EdgeSet got(g.edges.begin(), g.edges.end());
    const tt::EdgeSet want = tt::contraction_by_paths(dag.raw);
    oracle_edges += static_cast<long long>(want.size());
    if (got != want) {
      o.fail("DAG " + std::to_string(i) + " edge sets differ");
    }
  }
  const double total = seconds_since(t_all);
  if (total >= 10.0) o.fail("took " + std::to_string(total) + " s");
  o.detail << "200 DAGs, " << oracle_edges << " oracle edges, contraction " << contract_s
           << " s, total with oracle " << total << " s";
}

// ---------------------------------------------------------------- stats

double magnitude_value(std::mt19937_64& rng) {
  const double mag = std::pow(10.0, std::uniform_real_distribution<double>(-6, 6)(rng));
  return std::bernoulli_distribution(0.5)(rng) ? -mag : mag;
}

std::vector<double> random_tensor(std::mt19937_64& rng, std::size_t n) {
  std::vector<double> v(n);
  const double p_nan = std::bernoulli_distribution(0.3)(rng) ? 0.02 : 0.0;
  const double p_inf = std::bernoulli_distribution(0.3)(rng) ? 0.01 : 0.0;
  const double p_zero = std::bernoulli_distribution(0.5)(rng) ? 0.1 : 0.0;
  std::uniform_real_distribution<double> u(0, 1);
  for (auto& x : v) {
    const double r = u(rng);
    if (r < p_nan) {
      x = std::nan("");
    } else if (r < p_nan + p_inf) {
      x = u(rng) < 0.5 ? INFINITY : -INFINITY;
    } else if (r < p_nan + p_inf + p_zero) {
      x = 0.0;
    } else {
      x = magnitude_value(rng);
    }
  }
  return v;
}

struct Worst {
  double err = 0;
  std::string what;
  void see(double e, const std::string& w) {
    if (e > err || std::isnan(e)) {
      err = std::isnan(e) ? INFINITY : e;
      what = w;
    }
  }
};

void compare_moments(const TensorStats& s, const tt::RefStats& r, Worst& w, Outcome& o,
                     const std::string& tag) {
  if (s.count != r.count || s.count_nan != r.nan || s.count_inf != r.inf) {
    o.fail(tag + " counters differ");
  }
  if (r.finite == 0) return;
  w.see(tt::rel_error(s.mean, r.mean), tag + " mean");
  w.see(tt::rel_error(s.std, r.std), tag + " std");
  w.see(tt::rel_error(s.abs_mean, r.abs_mean), tag + " abs_mean");
  w.see(tt::rel_error(s.l2_norm, r.l2), tag + " l2");
  w.see(tt::rel_error(s.min, r.min), tag + " min");
  w.see(tt::rel_error(s.max, r.max), tag + " max");
  w.see(std::abs(s.frac_zero - r.frac_zero), tag + " frac_zero");
}

void stats_engine(Outcome& o) {
  std::mt19937_64 rng(777);
  Worst direct, merged;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t b = std::uniform_int_distribution<std::size_t>(1, 64)(rng);
    const std::size_t d = std::uniform_int_distribution<std::size_t>(1, 512)(rng);
    auto v = random_tensor(rng, b * d);
    const TensorStats s = summarize(v);
    compare_moments(s, tt::two_pass(v), direct, o, "tensor " + std::to_string(i));

    if (v.size() >= 2) {
      const std::size_t cut = std::uniform_int_distribution<std::size_t>(1, v.size() - 1)(rng);
      const TensorStats m =
          merge(summarize(std::span<const double>(v).first(cut)),
                summarize(std::span<const double>(v).subspan(cut)));
      if (m.count != s.count || m.count_nan != s.count_nan || m.count_inf != s.count_inf ||
          (s.finite_count() > 0 && (m.min != s.min || m.max != s.max))) {
        o.fail("merge counters/min/max differ on tensor " + std::to_string(i));
      }
      if (s.finite_count() > 0) {
        merged.see(tt::rel_error(m.mean, s.mean), "merge mean " + std::to_string(i));
        merged.see(tt::rel_error(m.std, s.std), "merge std " + std::to_string(i));
        merged.see(tt::rel_error(m.abs_mean, s.abs_mean), "merge abs_mean " + std::to_string(i));
        merged.see(tt::rel_error(m.l2_norm, s.l2_norm), "merge l2 " + std::to_string(i));
        merged.see(std::abs(m.frac_zero - s.frac_zero), "merge frac_zero " + std::to_string(i));
      }
    }
  }
  if (direct.err > 1e-9) o.fail("one-pass vs two-pass " + direct.what);
  if (merged.err > 1e-9) o.fail("merge vs direct " + merged.what);
  o.detail << "worst one-pass rel err " << direct.err << " (" << direct.what
           << "), worst merge rel err " << merged.err << " (" << merged.what << ")";
}

// ---------------------------------------------------------------- gradients

void gradients(Outcome& o) {
  toy::Rng rng(99);
  double worst_fd = 0, worst_sum = 0;
  std::size_t compared = 0, floor_used = 0;
  for (int draw = 0; draw < 25; ++draw) {
    toy::ToyModel m = toy::ToyModel::init(2 + draw % 7, rng);
    for (auto& v : m.b1) v = rng.uniform(-0.5, 0.5);
    m.b2[0] = rng.uniform(-0.5, 0.5);
    toy::Batch batch{static_cast<std::size_t>(1 + draw % 8),
                     static_cast<std::size_t>(2 + draw % 6), {}};
    for (std::size_t i = 0; i < batch.batch * batch.seq_len; ++i) {
      batch.x.push_back(rng.uniform(-1, 1));
    }
    auto acts = toy::forward(m, batch);
    auto g = toy::backward(m, acts, acts.targets);
    auto fd = tt::finite_differences(m, batch, 1e-6);
    const auto an_main = tt::flatten_grads(g.main), an_aux = tt::flatten_grads(g.aux),
               an_comb = tt::flatten_grads(g.combined);
    for (std::size_t i = 0; i < an_main.size(); ++i) {
      for (auto [an, num, loss] : {std::tuple{an_main[i], fd.main[i], acts.loss_main},
                                   std::tuple{an_aux[i], fd.aux[i], acts.loss_aux}}) {
        // Absolute floor at central-difference roundoff: 4 |L| u / eps.
        const double floor = 4 * std::abs(loss) * 2.3e-16 / 1e-6;
        const double err = std::abs(an - num);
        const double rel = err / std::max(std::abs(num), 1e-300);
        if (err > 1e-6 * std::abs(num)) {
          ++floor_used;
          if (err > floor) o.fail("FD mismatch in draw " + std::to_string(draw));
        } else {
          worst_fd = std::max(worst_fd, rel);
        }
        ++compared;
      }
      const double scale = std::abs(an_main[i]) + std::abs(an_aux[i]);
      const double e = std::abs(an_main[i] + an_aux[i] - an_comb[i]);
      if (e > 1e-9 * scale) o.fail("combined != main + aux in draw " + std::to_string(draw));
      if (scale > 0) worst_sum = std::max(worst_sum, e / scale);
    }
  }
  o.detail << "25 draws, " << compared << " parameter gradients; worst relative FD error "
           << worst_fd << "; " << floor_used
           << " near-zero gradients within the roundoff floor; worst |main+aux-combined|/scale "
           << worst_sum;
}

// ---------------------------------------------------------------- scheduler

void scheduler(Outcome& o) {
  constexpr std::uint64_t N = 1'000'000;
  for (const char* g : {"1.1", "1.5", "2", "3"}) {
    RecordingScheduler s(std::stod(g));
    std::vector<std::uint64_t> got;
    for (std::uint64_t i = 0; i < N; ++i) {
      if (s.should_record("c")) got.push_back(i);
    }
    const auto want = tt::schedule_oracle(g, N);
    if (got != want) o.fail(std::string("g=") + g + " index sets differ");
    o.detail << "g=" << g << ": " << got.size() << " recorded; ";
  }
  const auto count2 = tt::schedule_oracle("2", N).size();
  o.detail << "oracle count for g=2 is " << count2;
}

// ---------------------------------------------------------------- format

void format_round_trip(Outcome& o) {
  tt::TempDir tmp;
  std::mt19937_64 rng(31337);
  const std::vector<std::string> losses{"main", "aux"};
  std::vector<StepRecord> written;
  {
    RunOptions opts;
    opts.run_id = "rt";
    opts.losses = losses;
    auto w = RunWriter::create(tmp / "rt", opts);
    w.write_graph(tt::random_step_graph());
    for (std::uint64_t s = 0; s < 500; ++s) {
      written.push_back(tt::random_step(rng, s % 3 ? "a" : "b", s, losses, 8));
      w.write_step(written.back());
    }
    w.finalize();
  }
  auto reader = RunReader::open(tmp / "rt");
  std::size_t equal = 0;
  for (const auto& e : reader->chunks()) {
    const StepRecord back = reader->read_step(e);
    if (back == written.at(e.step)) ++equal;
  }
  if (equal != 500) o.fail(std::to_string(500 - equal) + " steps differ after round trip");
  if (!validate_run(tmp / "rt").empty()) o.fail("round-trip run does not validate");

  // Corruptions on a small run so each validate pass stays cheap.
  {
    RunOptions opts;
    opts.run_id = "c";
    opts.losses = losses;
    auto w = RunWriter::create(tmp / "c", opts);
    w.write_graph(tt::random_step_graph());
    for (std::uint64_t s = 0; s < 5; ++s) w.write_step(tt::random_step(rng, "a", s, losses, 8));
    w.finalize();
  }
  auto small = RunReader::open(tmp / "c");
  std::size_t caught = 0;
  for (int k = 0; k < 100; ++k) {
    const ChunkEntry& e = small->chunks()[rng() % small->chunks().size()];
    const fs::path file = tmp / "c" / e.file;
    auto bytes = read_file_bytes(file);
    auto damaged = bytes;
    const std::size_t pos = rng() % bytes.size();
    damaged[pos] ^= static_cast<std::uint8_t>(1 + rng() % 255);
    auto write = [&](const std::vector<std::uint8_t>& b) {
      std::FILE* f = std::fopen(file.c_str(), "wb");
      std::fwrite(b.data(), 1, b.size(), f);
      std::fclose(f);
    };
    write(damaged);
    const auto diags = validate_run(tmp / "c");
    if (std::any_of(diags.begin(), diags.end(), [&](const Diagnostic& d) {
          return d.file == e.file && d.severity == Diagnostic::Severity::kError;
        })) {
      ++caught;
    }
    write(bytes);
  }
  if (caught != 100) o.fail(std::to_string(100 - caught) + " corruptions missed");
  o.detail << equal << "/500 steps field-equal; " << caught << "/100 corruptions caught";
}

// ---------------------------------------------------------------- latency

void query_latency(Outcome& o) {
  tt::TempDir tmp;
  constexpr std::uint32_t kSteps = 1000, kNodes = 50, B = 4, D = 128;
  std::mt19937_64 rng(5150);
  std::normal_distribution<double> normal;
  {
    RunOptions opts;
    opts.run_id = "big";
    opts.max_samples = 1;
    auto w = RunWriter::create(tmp / "big", opts);
    DependencyGraph g;
    for (std::uint32_t n = 0; n < kNodes; ++n) {
      g.nodes.push_back({"node" + std::to_string(n), Role::kCalculated, {"default"}});
      g.layer["node" + std::to_string(n)] = n;
      if (n > 0) g.edges.push_back({"node" + std::to_string(n - 1), "node" + std::to_string(n)});
    }
    w.write_graph(g);
    std::vector<double> values(B * D);
    for (std::uint32_t s = 0; s < kSteps; ++s) {
      StepRecord step;
      step.trial_id = "t";
      step.step = s;
      step.category = "default";
      for (std::uint32_t n = 0; n < kNodes; ++n) {
        for (auto& v : values) v = normal(rng);
        step.records.push_back(
            capture("node" + std::to_string(n), "default", Mode::forward(), values, {B, D}, 1));
      }
      w.write_step(step);
    }
    w.finalize();
  }
  QueryService q(tmp.path());
  const auto t_index = Clock::now();
  q.run("big");
  const double index_s = seconds_since(t_index);

  std::vector<double> ms;
  ms.reserve(10000);
  for (int i = 0; i < 10000; ++i) {
    SelectorTuple sel;
    sel.trial_id = "t";
    sel.step = rng() % kSteps;
    sel.node_id = "node" + std::to_string(rng() % kNodes);
    sel.variant_key = "default";
    switch (rng() % 3) {
      case 0: sel.view = View::aggregate(); break;
      case 1: sel.view = View::per_neuron(); break;
      default: sel.view = View::sample(0); break;
    }
    const auto t0 = Clock::now();
    auto p = q.get_record("big", sel);
    ms.push_back(seconds_since(t0) * 1e3);
    if (p.features != D) o.fail("wrong payload");
  }
  std::vector<double> sorted = ms;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[sorted.size() / 2], worst = sorted.back();
  if (worst >= 50.0) o.fail("slowest call " + std::to_string(worst) + " ms");
  if (median >= 5.0) o.fail("median " + std::to_string(median) + " ms");
  o.detail << "run " << RunReader::open(tmp / "big")->storage_bytes() / (1 << 20)
           << " MiB, load " << index_s << " s; 10000 calls median " << median << " ms, p99 "
           << sorted[9899] << " ms, max " << worst << " ms";
}

// ---------------------------------------------------------------- storage

void storage_bound(Outcome& o) {
  constexpr std::uint32_t D = 64, kNodes = 10;
  std::mt19937_64 rng(8);
  std::normal_distribution<double> normal;
  std::vector<double> per_pair;
  for (std::uint32_t B : {1u, 8u, 64u, 512u}) {
    StepRecord step;
    step.trial_id = "t";
    step.category = "default";
    std::vector<double> values(std::size_t{B} * D);
    for (std::uint32_t n = 0; n < kNodes; ++n) {
      for (auto& v : values) v = normal(rng);
      step.records.push_back(capture("node" + std::to_string(n), "default", Mode::forward(),
                                     values, {B, D}, 0));
    }
    per_pair.push_back(static_cast<double>(encode_chunk(step).bytes.size()) / kNodes);
  }
  const auto [lo, hi] = std::minmax_element(per_pair.begin(), per_pair.end());
  if (*hi - *lo > 64) o.fail("bytes per (step, node) vary by " + std::to_string(*hi - *lo));
  o.detail << "bytes per (step, node) at D=" << D << " for B=1/8/64/512:";
  for (double b : per_pair) o.detail << " " << b;
}

// ---------------------------------------------------------------- end to end

int run_cli(const std::string& args) {
  const std::string cmd = std::string("'") + TRACELENS_CLI + "' " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void end_to_end(Outcome& o) {
  tt::TempDir tmp;
  const std::string run = (tmp / "demo").string();
  const int train = run_cli("demo-train --steps 2000 --out '" + run + "'");
  const int valid = run_cli("validate '" + run + "'");
  if (train != 0) o.fail("demo-train exit " + std::to_string(train));
  if (valid != 0) o.fail("validate exit " + std::to_string(valid));

  tt::write_outlier_fixture(tmp.path());
  tt::write_balance_fixture(tmp.path());
  QueryService q(tmp.path());
  auto hits = q.outlier_trace("outlier", "trial_0", 0, 5, 3.0);
  if (hits.empty() || hits.front().node_id != "early") o.fail("outlier trace does not start at early");
  auto b = q.gradient_balance("balance", "trial_0", 0, "a");
  if (std::abs(b.ratio - 100.0) > 1e-6) o.fail("ratio " + std::to_string(b.ratio));
  o.detail << "demo-train exit " << train << ", validate exit " << valid
           << "; outlier trace first node " << (hits.empty() ? "-" : hits.front().node_id)
           << " (z " << (hits.empty() ? 0.0 : hits.front().z) << ")";
  o.detail.precision(17);
  o.detail << "; balance ratio " << b.ratio;
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<void(Outcome&)>> criteria[] = {
      {"graph contraction matches path enumeration", graph_contraction},
      {"stats engine matches two-pass oracle", stats_engine},
      {"toy gradients match finite differences", gradients},
      {"scheduler matches integer recurrence", scheduler},
      {"chunk format round trip and corruption detection", format_round_trip},
      {"query latency", query_latency},
      {"storage independent of batch size", storage_bound},
      {"end to end", end_to_end},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
      fn(o);
    } catch (const std::exception& e) {
      o.fail(std::string("exception: ") + e.what());
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << " [" << seconds_since(t0)
              << " s]: " << o.detail.str() << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " failed")
            << std::endl;
  return failed == 0 ? 0 : 1;
}
