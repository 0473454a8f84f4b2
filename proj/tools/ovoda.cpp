#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "ovoda/commands.hpp"

namespace {

int fail(const ovoda::Error& e) {
  std::cerr << ovoda::error_json(e) << "\n";
  return static_cast<int>(e.exit_code());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Open-vocabulary 3D object and attribute detection"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string seed, out, dataset, proposals, vocabulary, detections, provider_url, noise;
  bool print_config = false;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration");
    sub->add_option("--seed", seed, "Overrides seed");
    sub->add_option("--out", out, "Overrides out (output directory)");
    sub->add_option("--set", overrides, "Overrides any config key: section.key=value")->allow_extra_args(false);
    sub->add_flag("--print-config", print_config, "Print the effective configuration and exit");
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene dataset and proposals");
  auto* ovad = app.add_subcommand("build-ovad", "Build spatial-attribute pairs from annotations");
  auto* detect = app.add_subcommand("detect", "Run the detection pipeline");
  auto* eval = app.add_subcommand("eval", "Score detect outputs against the dataset");
  auto* losses = app.add_subcommand("losses-check", "Compare loss gradients with finite differences");
  auto* probe = app.add_subcommand("provider-probe", "Check a remote embedding provider");
  for (auto* sub : {synth, ovad, detect, eval, losses, probe}) add_common(sub);
  for (auto* sub : {ovad, detect, eval}) {
    sub->add_option("--dataset", dataset, "Overrides dataset");
    sub->add_option("--vocabulary", vocabulary, "Overrides vocabulary (preset name or file)");
  }
  detect->add_option("--proposals", proposals, "Overrides proposals");
  detect->add_option("--noise", noise, "Overrides provider.noise");
  eval->add_option("--detections", detections, "Overrides detections (directory with detect outputs)");
  probe->add_option("--url", provider_url, "Overrides provider.url");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return fail(ovoda::ConfigError(e.what()));
  }

  const auto flag = [&](const std::string& key, const std::string& value, bool as_string) {
    if (value.empty()) return;
    overrides.push_back(key + "=" + (as_string ? ovoda::json(value).dump() : value));
  };
  flag("seed", seed, false);
  flag("out", out, true);
  flag("dataset", dataset, true);
  flag("proposals", proposals, true);
  flag("vocabulary", vocabulary, true);
  flag("detections", detections, true);
  flag("provider.url", provider_url, true);
  flag("provider.noise", noise, false);

  try {
    const ovoda::RunConfig cfg = ovoda::resolve_config(config_path, overrides);
    if (print_config) {
      std::cout << ovoda::config_to_json(cfg).dump(2) << "\n";
      return 0;
    }
    ovoda::run_command(app.get_subcommands().front()->get_name(), cfg, std::cout);
  } catch (const ovoda::Error& e) {
    return fail(e);
  } catch (const std::exception& e) {
    return fail(ovoda::IoError(e.what()));
  }
  return 0;
}
