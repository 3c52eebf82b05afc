// Command-line front end: single attacks and full campaigns.
//
// Exit codes: 0 completed, 1 configuration or input error, 2 internal failure.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "bbdfo.hpp"

namespace {

int run_single(const std::string& model_path, const std::string& image_path, std::size_t target,
               const bbdfo::AttackConfig& cfg, const std::string& attacker_name,
               const std::string& out_path, const std::string& save_path, double lower,
               double upper) {
  const auto model = bbdfo::load_model(model_path);
  const auto image = bbdfo::load_tensor(image_path, lower, upper);
  const auto attacker = bbdfo::parse_attacker(attacker_name);
  const std::size_t original = bbdfo::argmax(model.forward(image.data));
  if (target >= model.num_classes()) throw bbdfo::ConfigError("target class out of range");

  const auto result = bbdfo::run_attacker(attacker, cfg, model, image, target);

  bbdfo::AttackRecord rec;
  rec.image_id = std::filesystem::path(image_path).stem().string();
  rec.original_class = original;
  rec.target_class = target;
  rec.eps = cfg.epsilon;
  rec.attacker = attacker;
  rec.success = result.success;
  rec.queries_used = result.queries_used;

  std::printf("attacker=%s original=%zu target=%zu eps=%s success=%s queries=%zu levels=%zu\n",
              std::string(bbdfo::attacker_name(attacker)).c_str(), original, target,
              bbdfo::format_real(cfg.epsilon).c_str(), result.success ? "yes" : "no",
              result.queries_used, result.levels_completed);

  if (!out_path.empty()) {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw bbdfo::ConfigError("cannot write " + out_path);
    bbdfo::write_records_csv(out, std::span<const bbdfo::AttackRecord>(&rec, 1));
  }
  if (!save_path.empty()) {
    bbdfo::InputTensor adv = image;
    for (std::size_t i = 0; i < adv.data.size(); ++i)
      adv.data[i] = std::clamp(image.data[i] + result.perturbation[i], lower, upper);
    std::ofstream out(save_path, std::ios::binary);
    if (!out) throw bbdfo::ConfigError("cannot write " + save_path);
    out << bbdfo::tensor_to_json(adv).dump() << '\n';
  }
  return 0;
}

int run_campaign_cmd(const std::string& config_path, std::size_t threads_override) {
  auto cfg = bbdfo::load_experiment_config(config_path);
  if (threads_override > 0) cfg.threads = threads_override;
  const auto res = bbdfo::run_campaign(cfg);
  std::printf("records=%zu skipped=%zu\n", res.records.size(), res.skips.size());
  for (const auto& c : res.cells) {
    std::printf("eps=%s attacker=%s success=%zu/%zu rate=%.4f median_queries=%s\n",
                bbdfo::format_real(c.eps).c_str(), std::string(bbdfo::attacker_name(c.attacker)).c_str(),
                c.successes, c.attacks, c.success_rate,
                c.median_queries ? bbdfo::format_real(*c.median_queries).c_str() : "n/a");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Targeted black-box attacks with a model-based trust-region optimizer"};
  app.require_subcommand(1);

  bbdfo::AttackConfig cfg;
  std::string model_path, image_path, out_path, save_path, attacker = "bobyqa", strategy = "variance",
                                                           q_mode = "linear";
  std::size_t target = 0;
  double lower = -0.5, upper = 0.5;

  auto* attack = app.add_subcommand("attack", "Run a single targeted attack");
  attack->add_option("--model", model_path, "Weights file")->required()->check(CLI::ExistingFile);
  attack->add_option("--image", image_path, "Image file")->required()->check(CLI::ExistingFile);
  attack->add_option("--target", target, "Target class")->required();
  attack->add_option("--eps", cfg.epsilon, "l-infinity budget")->required();
  attack->add_option("--budget", cfg.max_queries, "Maximum number of queries")->capture_default_str();
  attack->add_option("--batch", cfg.batch_size, "Variables per batch")->capture_default_str();
  attack->add_option("--kappa", cfg.queries_per_batch, "Queries per batch (0: q + 5)")->capture_default_str();
  attack->add_option("--strategy", strategy, "random | ordered | variance")->capture_default_str();
  attack->add_option("--q-mode", q_mode, "linear | diag_quadratic")->capture_default_str();
  attack->add_option("--attacker", attacker, "bobyqa | random_baseline")->capture_default_str();
  attack->add_option("--seed", cfg.seed, "Random seed")->capture_default_str();
  attack->add_option("--lower", lower, "Pixel lower bound")->capture_default_str();
  attack->add_option("--upper", upper, "Pixel upper bound")->capture_default_str();
  attack->add_option("--out", out_path, "Write the attack record as CSV");
  attack->add_option("--save-adversarial", save_path, "Write the perturbed image");

  std::string config_path;
  std::size_t threads = 0;
  auto* campaign = app.add_subcommand("campaign", "Run an experiment campaign");
  campaign->add_option("--config", config_path, "Campaign config file")->required()->check(CLI::ExistingFile);
  campaign->add_option("--threads", threads, "Override the worker count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*attack) {
      cfg.strategy = bbdfo::parse_strategy(strategy);
      cfg.model_kind = bbdfo::parse_model_kind(q_mode);
      return run_single(model_path, image_path, target, cfg, attacker, out_path, save_path, lower, upper);
    }
    return run_campaign_cmd(config_path, threads);
  } catch (const bbdfo::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 2;
  }
}
