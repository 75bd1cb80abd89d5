#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "prood/error.hpp"
#include "prood/experiment.hpp"
#include "prood/parallel.hpp"

namespace fs = std::filesystem;

namespace {

void log_line(const std::string& msg) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%H:%M:%S", std::localtime(&now));
  std::cerr << '[' << stamp << "] " << msg << '\n';
}

struct Options {
  std::string config;
  std::optional<std::string> out;
  std::string disc;
  std::string joint;
  int seeds = 1;
};

fs::path output_dir(const Options& o, const prood::ExperimentConfig& cfg) {
  return o.out ? fs::path(*o.out) : cfg.output_dir;
}

int run(const std::string& command, const Options& o) {
  const auto cfg = prood::load_experiment_config(o.config);
  const fs::path out = output_dir(o, cfg);
  fs::create_directories(out);
  log_line(command + ": writing to " + out.string() + " with " +
           std::to_string(prood::thread_count()) + " thread(s)");

  if (command == "train-disc") {
    const auto r = prood::cmd_train_disc(cfg, out, log_line);
    log_line("checkpoint " + r.checkpoint.string());
  } else if (command == "train-joint") {
    const fs::path disc = o.disc.empty() ? out / "discriminator.prood" : fs::path(o.disc);
    prood::cmd_train_joint(cfg, disc, out, log_line);
  } else if (command == "eval") {
    const fs::path joint = o.joint.empty() ? out / "joint.prood" : fs::path(o.joint);
    const auto report = prood::cmd_eval(cfg, joint, out, o.seeds, log_line);
    std::cout << prood::report_csv(report);
  } else if (command == "probe") {
    const fs::path joint = o.joint.empty() ? out / "joint.prood" : fs::path(o.joint);
    const auto r = prood::cmd_probe(cfg, joint, out, log_line);
    if (!r.all_passed) {
      log_line("asymptotic confidence check failed for at least one direction");
      return 1;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Certified out-of-distribution detection experiments"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "experiment JSON")->required();
    sub->add_option("--out", o.out, "output directory (overrides the config)");
  };
  auto* train_disc = app.add_subcommand("train-disc", "train the certified discriminator");
  add_common(train_disc);
  auto* train_joint = app.add_subcommand("train-joint", "semi-joint training and delta sweep");
  add_common(train_joint);
  train_joint->add_option("--disc", o.disc, "discriminator checkpoint (default <out>/discriminator.prood)");
  auto* eval = app.add_subcommand("eval", "clean, attacked and certified metrics");
  add_common(eval);
  eval->add_option("--joint", o.joint, "joint checkpoint (default <out>/joint.prood)");
  eval->add_option("--seeds", o.seeds, "number of evaluation seeds")->check(CLI::PositiveNumber);
  auto* probe = app.add_subcommand("probe", "confidence far away from the data");
  add_common(probe);
  probe->add_option("--joint", o.joint, "joint checkpoint (default <out>/joint.prood)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, o);
  } catch (const prood::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const prood::FormatError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
