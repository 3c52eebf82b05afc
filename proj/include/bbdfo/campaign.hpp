#pragma once

// Batch experiment runner: attacks every (image, target, eps, attacker)
// combination of a campaign and summarizes query counts as CDFs.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bbdfo/attack.hpp"
#include "bbdfo/baseline.hpp"
#include "bbdfo/classifier.hpp"
#include "bbdfo/errors.hpp"

namespace bbdfo {

enum class Attacker { bobyqa, random_baseline };

inline Attacker parse_attacker(std::string_view name) {
  if (name == "bobyqa") return Attacker::bobyqa;
  if (name == "random_baseline") return Attacker::random_baseline;
  throw ConfigError("unknown attacker '" + std::string(name) + "'");
}

inline std::string_view attacker_name(Attacker a) {
  return a == Attacker::bobyqa ? "bobyqa" : "random_baseline";
}

inline ModelKind parse_model_kind(std::string_view name) {
  if (name == "linear") return ModelKind::linear;
  if (name == "diag_quadratic") return ModelKind::diag_quadratic;
  throw ConfigError("unknown q_mode '" + std::string(name) + "'");
}

/// Runs one attack of the given kind against a fresh budget-limited black box.
inline AttackResult run_attacker(Attacker attacker, const AttackConfig& cfg,
                                 const ClassifierModel& model, const InputTensor& x,
                                 std::size_t target, const AttackHooks& hooks = {}) {
  BlackBoxClassifier oracle(model, cfg.max_queries);
  if (attacker == Attacker::bobyqa) return run_attack(cfg, oracle, x, target, hooks);
  return random_baseline_attack(cfg, oracle, x, target, hooks);
}

enum class TargetPolicy { all_other_classes, random_targets };

struct ImageEntry {
  std::string id;
  InputTensor image;
};

struct ExperimentConfig {
  std::filesystem::path model_path;
  std::filesystem::path images_path;  ///< image manifest
  std::filesystem::path output_path;  ///< records CSV; empty to skip writing
  std::filesystem::path summary_path; ///< summary JSON; empty to skip writing
  std::vector<double> epsilons;
  TargetPolicy targets = TargetPolicy::all_other_classes;
  std::size_t random_target_count = 1;
  std::vector<Attacker> attackers{Attacker::bobyqa};
  AttackConfig attack;
  std::vector<std::size_t> cdf_grid;  ///< empty: ten even steps up to the budget
  double lower = -0.5;
  double upper = 0.5;
  std::size_t threads = 1;
  bool record_wall_time = false;  ///< off keeps the CSV byte-reproducible
  std::uint64_t seed = 0;

  void validate() const {
    if (epsilons.empty()) throw ConfigError("campaign needs at least one epsilon");
    for (double e : epsilons)
      if (!(e > 0.0) || !std::isfinite(e)) throw ConfigError("epsilon values must be positive");
    if (attackers.empty()) throw ConfigError("campaign needs at least one attacker");
    if (targets == TargetPolicy::random_targets && random_target_count == 0)
      throw ConfigError("random_targets needs a positive count");
    if (!(lower < upper)) throw ConfigError("pixel bounds require lower < upper");
    if (threads == 0) throw ConfigError("threads must be positive");
    AttackConfig probe = attack;
    probe.epsilon = epsilons.front();
    probe.validate();
  }

  [[nodiscard]] std::vector<std::size_t> effective_grid() const {
    if (!cdf_grid.empty()) return cdf_grid;
    std::vector<std::size_t> g;
    for (std::size_t k = 1; k <= 10; ++k) g.push_back(std::max<std::size_t>(1, attack.max_queries * k / 10));
    return g;
  }

  /// Parses a campaign config document; relative paths resolve against `base_dir`.
  static ExperimentConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
    static const std::set<std::string> known{
        "model", "images", "output", "summary", "eps", "targets", "attackers", "attacker",
        "attack", "cdf_grid", "bounds", "threads", "record_wall_time", "seed"};
    if (!doc.is_object()) throw ConfigError("campaign config must be an object");
    for (const auto& [key, _] : doc.items())
      if (!known.count(key)) throw ConfigError("unknown campaign config key '" + key + "'");

    ExperimentConfig c;
    auto path_of = [&](const char* key) -> std::filesystem::path {
      if (!doc.contains(key)) return {};
      std::filesystem::path p = doc.at(key).get<std::string>();
      return p.is_relative() ? base_dir / p : p;
    };
    try {
      if (!doc.contains("model") || !doc.contains("images") || !doc.contains("eps"))
        throw ConfigError("campaign config requires model, images and eps");
      c.model_path = path_of("model");
      c.images_path = path_of("images");
      c.output_path = path_of("output");
      c.summary_path = path_of("summary");
      c.epsilons = doc.at("eps").get<std::vector<double>>();
      if (doc.contains("targets")) {
        const auto& t = doc.at("targets");
        if (t.is_string() && t.get<std::string>() == "all_other_classes") {
          c.targets = TargetPolicy::all_other_classes;
        } else if (t.is_object() && t.value("policy", "") == "random_targets") {
          c.targets = TargetPolicy::random_targets;
          c.random_target_count = t.value("count", std::size_t{1});
        } else {
          throw ConfigError("targets must be \"all_other_classes\" or {\"policy\": \"random_targets\", \"count\": k}");
        }
      }
      if (doc.contains("attackers")) {
        c.attackers.clear();
        for (const auto& a : doc.at("attackers")) c.attackers.push_back(parse_attacker(a.get<std::string>()));
      } else if (doc.contains("attacker")) {
        c.attackers = {parse_attacker(doc.at("attacker").get<std::string>())};
      }
      if (doc.contains("attack")) apply_attack_overrides(c.attack, doc.at("attack"));
      if (doc.contains("cdf_grid")) c.cdf_grid = doc.at("cdf_grid").get<std::vector<std::size_t>>();
      if (doc.contains("bounds")) {
        const auto b = doc.at("bounds").get<std::vector<double>>();
        if (b.size() != 2) throw ConfigError("bounds must be [lower, upper]");
        c.lower = b[0];
        c.upper = b[1];
      }
      c.threads = doc.value("threads", std::size_t{1});
      c.record_wall_time = doc.value("record_wall_time", false);
      c.seed = doc.value("seed", std::uint64_t{0});
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("campaign config: ") + e.what());
    }
    c.validate();
    return c;
  }

  static void apply_attack_overrides(AttackConfig& a, const nlohmann::json& j) {
    static const std::set<std::string> known{
        "budget", "batch", "kappa", "extra_evaluations", "q_mode", "strategy", "initial_grid",
        "trust_radius_fraction", "shrink_factor", "min_radius_ratio", "hierarchy_threshold"};
    if (!j.is_object()) throw ConfigError("attack overrides must be an object");
    for (const auto& [key, _] : j.items())
      if (!known.count(key)) throw ConfigError("unknown attack override '" + key + "'");
    a.max_queries = j.value("budget", a.max_queries);
    a.batch_size = j.value("batch", a.batch_size);
    a.queries_per_batch = j.value("kappa", a.queries_per_batch);
    a.extra_evaluations = j.value("extra_evaluations", a.extra_evaluations);
    if (j.contains("q_mode")) a.model_kind = parse_model_kind(j.at("q_mode").get<std::string>());
    if (j.contains("strategy")) a.strategy = parse_strategy(j.at("strategy").get<std::string>());
    if (j.contains("initial_grid")) {
      const auto g = j.at("initial_grid").get<std::vector<std::size_t>>();
      if (g.size() != 2) throw ConfigError("initial_grid must be [rows, cols]");
      a.initial_grid_h = g[0];
      a.initial_grid_w = g[1];
    }
    a.trust_radius_fraction = j.value("trust_radius_fraction", a.trust_radius_fraction);
    a.shrink_factor = j.value("shrink_factor", a.shrink_factor);
    a.min_radius_ratio = j.value("min_radius_ratio", a.min_radius_ratio);
    a.hierarchy_threshold = j.value("hierarchy_threshold", a.hierarchy_threshold);
  }
};

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return ExperimentConfig::from_json(parse_json_text(read_text_file(path), path.string()),
                                     path.parent_path());
}

/// Manifest: {"images": [{"id": "...", "path": "img.json"}, ...]}; paths are
/// relative to the manifest.
inline std::vector<ImageEntry> load_image_set(const std::filesystem::path& manifest, double lower,
                                              double upper) {
  const auto doc = parse_json_text(read_text_file(manifest), manifest.string());
  std::vector<ImageEntry> out;
  try {
    for (const auto& e : doc.at("images")) {
      std::filesystem::path p = e.at("path").get<std::string>();
      if (p.is_relative()) p = manifest.parent_path() / p;
      out.push_back({e.at("id").get<std::string>(), load_tensor(p, lower, upper)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(manifest.string() + ": " + e.what());
  }
  if (out.empty()) throw ConfigError("image manifest lists no images");
  return out;
}

struct AttackRecord {
  std::string image_id;
  std::size_t original_class = 0;
  std::size_t target_class = 0;
  double eps = 0.0;
  Attacker attacker = Attacker::bobyqa;
  bool success = false;
  std::size_t queries_used = 0;
  double wall_ms = 0.0;
};

struct SkipRecord {
  std::string image_id;
  std::size_t target_class = 0;
  double eps = 0.0;
  Attacker attacker = Attacker::bobyqa;
  std::string reason;
};

struct CdfPoint {
  std::size_t threshold = 0;
  double fraction = 0.0;
};

struct CellSummary {
  double eps = 0.0;
  Attacker attacker = Attacker::bobyqa;
  std::size_t attacks = 0;
  std::size_t successes = 0;
  double success_rate = 0.0;
  std::optional<double> median_queries;  ///< over successful attacks
  std::vector<CdfPoint> cdf;
};

struct CampaignResult {
  std::vector<AttackRecord> records;
  std::vector<SkipRecord> skips;
  std::vector<CellSummary> cells;
};

/// Fraction of records that succeeded within each query threshold.
inline std::vector<CdfPoint> compute_cdf(std::span<const AttackRecord> records,
                                         std::span<const std::size_t> grid) {
  if (records.empty()) throw ConfigError("cannot compute a CDF over zero records");
  std::vector<CdfPoint> out;
  out.reserve(grid.size());
  for (std::size_t t : grid) {
    std::size_t hits = 0;
    for (const auto& r : records)
      if (r.success && r.queries_used <= t) ++hits;
    out.push_back({t, static_cast<double>(hits) / static_cast<double>(records.size())});
  }
  return out;
}

inline std::optional<double> median_successful_queries(std::span<const AttackRecord> records) {
  std::vector<std::size_t> q;
  for (const auto& r : records)
    if (r.success) q.push_back(r.queries_used);
  if (q.empty()) return std::nullopt;
  std::sort(q.begin(), q.end());
  const std::size_t mid = q.size() / 2;
  if (q.size() % 2 == 1) return static_cast<double>(q[mid]);
  return 0.5 * static_cast<double>(q[mid - 1] + q[mid]);
}

inline std::string format_real(double v, const char* fmt = "%.10g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

inline constexpr std::string_view kCsvHeader =
    "image_id,original_class,target_class,eps,attacker,success,queries_used,wall_ms";

inline void write_records_csv(std::ostream& os, std::span<const AttackRecord> records) {
  os << kCsvHeader << '\n';
  for (const auto& r : records) {
    os << r.image_id << ',' << r.original_class << ',' << r.target_class << ',' << format_real(r.eps)
       << ',' << attacker_name(r.attacker) << ',' << (r.success ? 1 : 0) << ',' << r.queries_used
       << ',' << format_real(r.wall_ms, "%.3f") << '\n';
  }
}

inline nlohmann::json summary_to_json(const CampaignResult& res) {
  nlohmann::json j;
  j["records"] = res.records.size();
  j["skips"] = nlohmann::json::array();
  for (const auto& s : res.skips)
    j["skips"].push_back({{"image_id", s.image_id}, {"target_class", s.target_class}, {"eps", s.eps},
                          {"attacker", attacker_name(s.attacker)}, {"reason", s.reason}});
  j["cells"] = nlohmann::json::array();
  for (const auto& c : res.cells) {
    nlohmann::json cell{{"eps", c.eps},
                        {"attacker", attacker_name(c.attacker)},
                        {"attacks", c.attacks},
                        {"successes", c.successes},
                        {"success_rate", c.success_rate}};
    cell["median_queries"] = c.median_queries ? nlohmann::json(*c.median_queries) : nlohmann::json();
    for (const auto& p : c.cdf) cell["cdf"].push_back({p.threshold, p.fraction});
    j["cells"].push_back(std::move(cell));
  }
  return j;
}

/// splitmix64 finalizer; derives per-attack seeds from (campaign seed, index).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Runs a campaign on an already loaded model and image set.
inline CampaignResult run_campaign(const ExperimentConfig& cfg, const ClassifierModel& model,
                                   const std::vector<ImageEntry>& images) {
  cfg.validate();
  if (images.empty()) throw ConfigError("campaign has no images");
  const std::size_t classes = model.num_classes();

  struct Task {
    std::size_t image = 0;
    std::size_t original = 0;
    std::size_t target = 0;
    double eps = 0.0;
    Attacker attacker = Attacker::bobyqa;
  };
  std::vector<Task> tasks;
  CampaignResult res;

  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& img = images[i].image;
    if (!(img.shape == model.input_shape()))
      throw DimensionError("image '" + images[i].id + "' has shape " + to_string(img.shape) +
                           ", model expects " + to_string(model.input_shape()));
    const std::size_t original = argmax(model.forward(img.data));
    std::vector<std::size_t> targets;
    if (cfg.targets == TargetPolicy::all_other_classes) {
      for (std::size_t t = 0; t < classes; ++t)
        if (t != original) targets.push_back(t);
    } else {
      Rng rng(derive_seed(cfg.seed, 0x7a11ULL * (i + 1)));
      std::uniform_int_distribution<std::size_t> pick(0, classes - 1);
      for (std::size_t k = 0; k < cfg.random_target_count; ++k) targets.push_back(pick(rng));
    }
    for (std::size_t t : targets)
      for (double eps : cfg.epsilons)
        for (Attacker a : cfg.attackers) {
          if (t == original) {
            res.skips.push_back({images[i].id, t, eps, a, "image already classified as target"});
            continue;
          }
          tasks.push_back({i, original, t, eps, a});
        }
  }
  if (tasks.empty()) throw ConfigError("campaign configures zero attacks");

  res.records.resize(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;

  auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= tasks.size()) return;
      try {
        const Task& task = tasks[k];
        AttackConfig ac = cfg.attack;
        ac.epsilon = task.eps;
        ac.seed = derive_seed(cfg.seed, k);
        const auto t0 = std::chrono::steady_clock::now();
        const AttackResult r = run_attacker(task.attacker, ac, model, images[task.image].image, task.target);
        const auto t1 = std::chrono::steady_clock::now();
        AttackRecord& rec = res.records[k];
        rec.image_id = images[task.image].id;
        rec.original_class = task.original;
        rec.target_class = task.target;
        rec.eps = task.eps;
        rec.attacker = task.attacker;
        rec.success = r.success;
        rec.queries_used = r.queries_used;
        rec.wall_ms = cfg.record_wall_time
                          ? std::chrono::duration<double, std::milli>(t1 - t0).count()
                          : 0.0;
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const std::size_t nthreads = std::min(cfg.threads, tasks.size());
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
  }
  if (first_error) std::rethrow_exception(first_error);

  const auto grid = cfg.effective_grid();
  for (double eps : cfg.epsilons)
    for (Attacker a : cfg.attackers) {
      std::vector<AttackRecord> cell;
      for (const auto& r : res.records)
        if (r.eps == eps && r.attacker == a) cell.push_back(r);
      if (cell.empty()) continue;
      CellSummary s;
      s.eps = eps;
      s.attacker = a;
      s.attacks = cell.size();
      s.successes = static_cast<std::size_t>(
          std::count_if(cell.begin(), cell.end(), [](const AttackRecord& r) { return r.success; }));
      s.success_rate = static_cast<double>(s.successes) / static_cast<double>(s.attacks);
      s.median_queries = median_successful_queries(cell);
      s.cdf = compute_cdf(cell, grid);
      res.cells.push_back(std::move(s));
    }
  return res;
}

inline void write_campaign_outputs(const ExperimentConfig& cfg, const CampaignResult& res) {
  if (!cfg.output_path.empty()) {
    std::ofstream out(cfg.output_path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + cfg.output_path.string());
    write_records_csv(out, res.records);
  }
  if (!cfg.summary_path.empty()) {
    std::ofstream out(cfg.summary_path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + cfg.summary_path.string());
    out << summary_to_json(res).dump(2) << '\n';
  }
}

/// Loads everything named in the config, runs it and writes the outputs.
inline CampaignResult run_campaign(const ExperimentConfig& cfg) {
  cfg.validate();
  const ClassifierModel model = load_model(cfg.model_path);
  const auto images = load_image_set(cfg.images_path, cfg.lower, cfg.upper);
  CampaignResult res = run_campaign(cfg, model, images);
  write_campaign_outputs(cfg, res);
  return res;
}

}  // namespace bbdfo
