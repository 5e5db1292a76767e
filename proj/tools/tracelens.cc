// tracelens: record, validate, inspect and serve training traces.
//
// Exit codes: 0 success, 1 validation failure, 2 usage error, 3 IO error.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "tracelens/error.h"
#include "tracelens/http_api.h"
#include "tracelens/query.h"
#include "tracelens/report.h"
#include "tracelens/run_store.h"
#include "tracelens/toy_trainer.h"

namespace fs = std::filesystem;
using namespace tracelens;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo:
    case ErrorCode::kVersion:
    case ErrorCode::kCorrupt:
      return kExitIo;
    default:
      return kExitUsage;
  }
}

int cmd_serve(const std::string& root, const std::string& host, int port,
              const std::string& ui_dir) {
  if (!fs::is_directory(root)) {
    std::cerr << "tracelens serve: data root " << root << " is not a directory\n";
    return kExitUsage;
  }
  // Handle SIGINT/SIGTERM on a dedicated thread so the server stops cleanly.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  auto service = std::make_shared<QueryService>(root);
  HttpApi api(service, ui_dir.empty() ? std::nullopt : std::optional<fs::path>(ui_dir));
  const int bound = api.bind(host, port);
  std::cout << "serving " << fs::absolute(root).string() << " at http://" << host << ":"
            << bound << "/" << std::endl;
  std::thread([&api, signals] {
    int sig = 0;
    sigwait(&signals, &sig);
    api.stop();
  }).detach();
  api.run();
  return kExitOk;
}

int cmd_validate(const std::string& dir) {
  const auto diags = validate_run(dir);
  for (const auto& d : diags) {
    std::cerr << (d.severity == Diagnostic::Severity::kError ? "error" : "warning") << " ["
              << d.code << "] " << (d.file.empty() ? "" : d.file + ": ") << d.message
              << '\n';
  }
  if (!diags.empty()) {
    std::cerr << diags.size() << " diagnostic(s) in " << dir << '\n';
    return kExitInvalid;
  }
  std::cout << dir << ": ok\n";
  return kExitOk;
}

int cmd_demo_train(toy::TrainConfig config, const std::string& out) {
  const auto summary = toy::train_and_record(config, out);
  std::cout << "wrote " << summary.run_dir.string() << ": " << config.steps << " steps";
  for (const auto& [cat, steps] : summary.recorded_steps) {
    std::cout << ", " << steps.size() << " recorded " << cat;
  }
  std::cout << "\nloss_main " << summary.loss_main.front() << " -> "
            << summary.loss_main.back() << '\n';
  return kExitOk;
}

int cmd_export(const std::string& run_dir, std::string trial, std::uint64_t step,
               const std::string& node, const std::string& format,
               const std::string& output) {
  LoadedRun run(RunReader::open(run_dir));
  if (trial.empty()) {
    if (run.manifest().trial_ids.size() != 1) {
      std::cerr << "tracelens export: run has several trials; pass --trial\n";
      return kExitUsage;
    }
    trial = run.manifest().trial_ids.front();
  }
  const auto rows = export_rows(run, trial, step, node);
  std::ofstream file;
  if (!output.empty()) {
    file.open(output, std::ios::binary);
    if (!file) throw Error(ErrorCode::kIo, "cannot write " + output);
  }
  std::ostream& out = output.empty() ? std::cout : file;
  if (format == "csv") {
    write_csv(out, rows);
  } else {
    write_jsonl(out, rows);
  }
  out.flush();
  if (!out) throw Error(ErrorCode::kIo, "write failed");
  return kExitOk;
}

int cmd_stats(const std::string& dir) {
  write_run_stats(std::cout, run_stats(*RunReader::open(dir)));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Record, validate, inspect and serve neural-network training traces."};
  app.require_subcommand(1);

  const char* env_root = std::getenv("TRACELENS_DATA_ROOT");
  std::string data_root = env_root ? env_root : ".";
  std::string host = "127.0.0.1";
  int port = 8765;
  std::string ui_dir;
  auto* serve = app.add_subcommand("serve", "Serve runs below a data root over HTTP");
  serve->add_option("--data-root", data_root,
                    "Directory holding run directories (default: $TRACELENS_DATA_ROOT or .)");
  serve->add_option("--host", host, "Address to bind")->capture_default_str();
  serve->add_option("--port", port, "Port; 0 picks a free one")
      ->capture_default_str()
      ->check(CLI::Range(0, 65535));
  serve->add_option("--ui-dir", ui_dir, "Static UI assets to serve at /");

  std::string run_dir;
  auto* validate = app.add_subcommand("validate", "Check a run directory");
  validate->add_option("run_dir", run_dir, "Run directory")->required();

  toy::TrainConfig config;
  std::string out;
  auto* demo = app.add_subcommand("demo-train", "Train the toy model and record a run");
  demo->add_option("--out", out, "New run directory")->required();
  demo->add_option("--steps", config.steps, "Training steps")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  demo->add_option("--seed", config.seed, "PRNG seed")->capture_default_str();
  demo->add_option("--growth", config.growth, "Recording schedule growth (> 1)")
      ->capture_default_str();
  demo->add_option("--batch", config.batch, "Batch size")->capture_default_str();
  demo->add_option("--seq-len", config.seq_len, "Sequence length (>= 2)")
      ->capture_default_str();
  demo->add_option("--hidden", config.hidden, "Hidden width")->capture_default_str();
  demo->add_option("--lr", config.learning_rate, "Learning rate")->capture_default_str();
  demo->add_option("--max-samples", config.max_samples, "Samples retained per record")
      ->capture_default_str()
      ->check(CLI::Range(1, 255));
  demo->add_option("--long-every", config.long_every,
                   "Every n-th batch is a long_sequence batch")
      ->capture_default_str();
  demo->add_option("--run-id", config.run_id, "Run id (default: directory name)");
  demo->add_flag("--inject-bug", config.inject_bug,
                 "Detach the aux-loss gradient path");

  std::string trial, node, format = "csv", output;
  std::uint64_t step = 0;
  auto* exp = app.add_subcommand("export", "Export every record of one node at one step");
  exp->add_option("--run", run_dir, "Run directory")->required();
  exp->add_option("--trial", trial, "Trial id (optional for single-trial runs)");
  exp->add_option("--step", step, "Recorded step")->required();
  exp->add_option("--node", node, "Node id")->required();
  exp->add_option("--format", format, "csv or jsonl")
      ->capture_default_str()
      ->check(CLI::IsMember({"csv", "jsonl"}));
  exp->add_option("-o,--output", output, "Output file (default: stdout)");

  auto* stats = app.add_subcommand("stats", "Summarize a run");
  stats->add_option("run_dir", run_dir, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*serve) return cmd_serve(data_root, host, port, ui_dir);
    if (*validate) return cmd_validate(run_dir);
    if (*demo) return cmd_demo_train(config, out);
    if (*exp) return cmd_export(run_dir, trial, step, node, format, output);
    if (*stats) return cmd_stats(run_dir);
  } catch (const Error& e) {
    std::cerr << "tracelens: " << error_code_name(e.code()) << ": " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "tracelens: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitUsage;
}
