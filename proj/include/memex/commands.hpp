#pragma once

// The experiment commands behind the `memex` executable. Each command reads a
// Config, writes its CSV/JSON files into out_dir and returns the JSON summary.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "memex/config.hpp"
#include "memex/core.hpp"
#include "memex/extraction.hpp"
#include "memex/modelclient.hpp"
#include "memex/numeric.hpp"
#include "memex/oracle.hpp"
#include "memex/pii.hpp"
#include "memex/random.hpp"
#include "memex/stub_server.hpp"
#include "memex/synth.hpp"
#include "memex/toymodel.hpp"

namespace memex::cli {

struct CommandResult {
  nlohmann::json summary;
  int exit_code = 0;
};

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

/// CSV with a `# schema=` line, a header row and the config hash in the first column.
class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::string& schema, std::vector<std::string> columns, std::string hash)
      : out_(path, std::ios::binary), hash_(std::move(hash)) {
    require(out_.good(), ErrorCode::io, "cannot write " + path.string());
    out_ << "# schema=" << schema << '\n' << "config_hash";
    for (const auto& c : columns) out_ << ',' << c;
    out_ << '\n';
  }

  template <class... Ts>
  void row(const Ts&... cells) {
    out_ << hash_;
    ((out_ << ',' << cell(cells)), ...);
    out_ << '\n';
  }

 private:
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }
  static std::string cell(double v) { return format_double(v); }
  static std::string cell(bool v) { return v ? "1" : "0"; }
  template <class T>
    requires std::is_integral_v<T>
  static std::string cell(T v) { return std::to_string(v); }

  std::ofstream out_;
  std::string hash_;
};

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline fs::path prepare_out_dir(const Config& cfg) {
  const fs::path dir = cfg.out_dir();
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorCode::io, "cannot create " + dir.string());
  return dir;
}

inline nlohmann::json summary_head(const std::string& command, const Config& cfg) {
  return {{"schema", "memex." + command + "/1"}, {"config_hash", cfg.hash()}, {"seed", cfg.seed()}};
}

/// Non-finite doubles have no JSON encoding; they are written as strings.
inline nlohmann::json jnum(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(format_double(v)); }

// ---------------------------------------------------------------------------
// Inputs
// ---------------------------------------------------------------------------

inline Corpus load_corpus(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::io, "cannot open corpus " + path.string());
  return read_corpus(in);
}

inline void save_corpus(const fs::path& path, const Corpus& c) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::io, "cannot write " + path.string());
  write_corpus(out, c);
}

struct LoadedModel {
  std::shared_ptr<const Predictor> predictor;
  std::shared_ptr<const PosteriorModel> toy;  // null for remote models
};

inline PosteriorModel fit_from_config(const Config& cfg, const Corpus& corpus) {
  const double eta = cfg.get<double>("eta", PosteriorModel::kDefaultEta);
  require(eta > 0.0 && eta < 1.0, ErrorCode::config, "eta must lie strictly inside (0,1)");
  const std::size_t k = cfg.get_count("vocab_size", corpus.inferred_vocab_size(), 2);
  return fit(corpus, eta, VocabSpec::with_size(k));
}

inline PosteriorModel load_toy(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::io, "cannot open model " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse, path.string() + ": " + e.what());
  }
  return model_from_json(j);
}

/// `model` (artifact path or endpoint URL), else a toy model fitted on `corpus_key`.
inline LoadedModel load_model(const Config& cfg, const std::string& corpus_key = "corpus") {
  LoadedModel m;
  if (cfg.has("model")) {
    const auto where = cfg.location("model");
    if (looks_like_endpoint(where)) {
      ClientOptions opts;
      opts.max_in_flight = std::max<std::size_t>(1, cfg.threads());
      m.predictor = RemoteModel::connect(where, opts);
      return m;
    }
    m.toy = std::make_shared<PosteriorModel>(load_toy(where));
  } else {
    m.toy = std::make_shared<PosteriorModel>(fit_from_config(cfg, load_corpus(cfg.path(corpus_key))));
  }
  m.predictor = m.toy;
  return m;
}

/// `targets` corpus, else the toy model's own components.
inline std::vector<TokenSeq> load_targets(const Config& cfg, const LoadedModel& m) {
  std::vector<TokenSeq> out;
  if (cfg.has("targets")) {
    out = load_corpus(cfg.path("targets")).sequences;
  } else {
    require(m.toy != nullptr, ErrorCode::config, "remote models need a 'targets' corpus");
    for (std::size_t j = 0; j < m.toy->components(); ++j) out.push_back(m.toy->component(j));
  }
  const std::size_t cap = cfg.get_count("max_examples", 0, 0);
  if (cap && out.size() > cap) out.resize(cap);
  require(!out.empty(), ErrorCode::config, "no target examples");
  return out;
}

inline RunOptions run_options(const Config& cfg, std::uint64_t stream) {
  RunOptions r;
  r.threads = cfg.threads();
  r.stream = stream;
  r.bootstrap_resamples = cfg.get_count("bootstrap", 1000, 0);
  r.step_rule = cfg.step_rule();
  return r;
}

// Stream tags keep the random streams of different roles apart.
inline constexpr std::uint64_t kStreamEmpirical = 1;
inline constexpr std::uint64_t kStreamTheoretical = 2;
inline constexpr std::uint64_t kStreamPatternDraw = 3;
inline constexpr std::uint64_t kStreamPatternRun = 4;
inline constexpr std::uint64_t kStreamInstance = 5;
inline constexpr std::uint64_t kStreamBootstrap = 6;

// ---------------------------------------------------------------------------
// fit-toy
// ---------------------------------------------------------------------------

inline CommandResult cmd_fit_toy(const Config& cfg) {
  cfg.check_keys({"corpus", "eta", "vocab_size"});
  const auto dir = prepare_out_dir(cfg);
  const Corpus corpus = load_corpus(cfg.path("corpus"));
  const PosteriorModel model = fit_from_config(cfg, corpus);
  const auto j = model.to_json();
  write_json(dir / "model.json", j);
  CommandResult r;
  r.summary = summary_head("fit-toy", cfg);
  r.summary["content_hash"] = j["content_hash"];
  r.summary["components"] = model.components();
  r.summary["length"] = model.length();
  r.summary["vocab_size"] = model.vocab().size;
  r.summary["eta"] = model.eta();
  write_json(dir / "fit-toy.json", r.summary);
  return r;
}

// ---------------------------------------------------------------------------
// scatter-pz: empirical hit rate against the trajectory estimator, per example
// ---------------------------------------------------------------------------

inline CommandResult cmd_scatter_pz(const Config& cfg) {
  auto keys = kSamplerKeys;
  keys.insert({"corpus", "eta", "vocab_size", "targets", "max_examples", "mask_ratio", "resolution", "trials",
               "trials_emp", "screen", "bootstrap", "trace"});
  cfg.check_keys(keys);
  const auto dir = prepare_out_dir(cfg);
  const auto model = load_model(cfg);
  const auto targets = load_targets(cfg, model);
  const RandomMask mask{cfg.get_in("mask_ratio", 0.25, 0.0, 1.0, true)};
  const auto resolution = Resolution::parse(cfg.get<std::string>("resolution", "1"));
  const std::size_t r_theo = cfg.get_count("trials", 1024);
  const std::size_t r_emp = cfg.get_count("trials_emp", 100000);
  const double screen = cfg.get_in("screen", 1e-3, 0.0, 1.0);
  const std::size_t traced = std::min(cfg.get_count("trace", 0, 0), r_theo);
  const SamplerConfig sampler = cfg.sampler();
  sampler.validate(model.predictor->vocab().size);

  // Re-running a trial index on its stream reproduces the trajectory the estimate averaged.
  std::ofstream trace;
  if (traced) {
    trace.open(dir / "traces.jsonl", std::ios::binary);
    require(trace.good(), ErrorCode::io, "cannot write traces.jsonl");
    write_trace_header(trace);
  }
  CsvWriter csv(dir / "scatter-pz.csv", "memex.scatter-pz/1",
                {"example", "p_theo", "p_theo_se", "ci_low", "ci_high", "p_emp", "p_emp_se", "hits", "screened_in",
                 "z_score", "within_3se"},
                cfg.hash());
  std::size_t kept = 0, within = 0;
  std::vector<double> log_theo, log_emp;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto theo = estimate_pz(*model.predictor, targets[i], mask, resolution, sampler, r_theo,
                                  run_options(cfg, derive_stream(kStreamTheoretical, i)));
    for (std::size_t t = 0; t < traced; ++t)
      write_trace(trace,
                  run_trial(*model.predictor, targets[i], mask, resolution, sampler,
                            run_options(cfg, derive_stream(kStreamTheoretical, i)), t, true),
                  std::to_string(i) + ":" + std::to_string(t));
    if (theo.mean <= screen) {
      csv.row(i, theo.mean, theo.std_error, theo.ci_low, theo.ci_high, "", "", "", false, "", "");
      continue;
    }
    const auto emp = empirical_hit_rate(*model.predictor, targets[i], mask, resolution, sampler, r_emp,
                                        run_options(cfg, derive_stream(kStreamEmpirical, i)));
    const double se = std::sqrt(theo.std_error * theo.std_error + emp.std_error() * emp.std_error());
    const double z = se > 0.0 ? std::abs(emp.rate() - theo.mean) / se : (emp.rate() == theo.mean ? 0.0 : std::numeric_limits<double>::infinity());
    const bool ok = z <= 3.0;
    ++kept;
    within += ok;
    if (emp.hits > 0) {
      log_theo.push_back(std::log(theo.mean));
      log_emp.push_back(std::log(emp.rate()));
    }
    csv.row(i, theo.mean, theo.std_error, theo.ci_low, theo.ci_high, emp.rate(), emp.std_error(), emp.hits, true, z,
            ok);
  }
  CommandResult r;
  r.summary = summary_head("scatter-pz", cfg);
  r.summary["examples"] = targets.size();
  r.summary["screened_in"] = kept;
  r.summary["within_3se"] = within;
  r.summary["within_fraction"] = kept ? static_cast<double>(within) / static_cast<double>(kept) : 0.0;
  r.summary["log_log_pearson"] = log_theo.size() >= 2 ? jnum(pearson(log_theo, log_emp)) : nlohmann::json(nullptr);
  write_json(dir / "scatter-pz.json", r.summary);
  return r;
}

// ---------------------------------------------------------------------------
// sweep-steps: exact-recovery rates across sampling resolutions
// ---------------------------------------------------------------------------

struct SweepPattern {
  std::size_t example = 0;
  std::uint64_t draw = 0;
  MaskPattern mask;
  std::vector<std::vector<std::uint8_t>> hit;  // per resolution, per trial
};

/// log of the smoothed hit rate (h + 1/2) / (R + 1), finite for h = 0.
inline double smoothed_log_rate(std::size_t hits, std::size_t trials) {
  return std::log((static_cast<double>(hits) + 0.5) / (static_cast<double>(trials) + 1.0));
}

inline CommandResult cmd_sweep_steps(const Config& cfg) {
  auto keys = kSamplerKeys;
  keys.insert({"corpus", "eta", "vocab_size", "targets", "max_examples", "patterns", "mask_ratio", "step_set",
               "trials", "screen", "max_attempts", "ci_axis", "bootstrap"});
  cfg.check_keys(keys);
  const auto dir = prepare_out_dir(cfg);
  const auto model = load_model(cfg);
  const auto targets = load_targets(cfg, model);
  const std::size_t wanted = cfg.get_count("patterns", 40);
  const RandomMask ratio{cfg.get_in("mask_ratio", 0.25, 0.0, 1.0, true)};
  auto set = cfg.step_set({"1", "2", "5", "10", "max"});
  const std::size_t trials = cfg.get_count("trials", 5000);
  const double screen = cfg.get_in("screen", 0.01, 0.0, 1.0);
  const std::size_t attempts = cfg.get_count("max_attempts", wanted * 20);
  const std::size_t resamples = cfg.get_count("bootstrap", 1000, 1);
  const auto axis = cfg.get<std::string>("ci_axis", "patterns");
  require(axis == "patterns" || axis == "trajectories", ErrorCode::config, "ci_axis is 'patterns' or 'trajectories'");
  const SamplerConfig sampler = cfg.sampler();
  sampler.validate(model.predictor->vocab().size);

  // Resolution 1 is the baseline and is always run first.
  std::vector<Resolution> runs{Resolution::steps(1)};
  for (const auto& res : set)
    if (!(res == Resolution::steps(1))) runs.push_back(res);

  std::vector<SweepPattern> patterns;
  std::size_t drawn = 0;
  for (; drawn < attempts && patterns.size() < wanted; ++drawn) {
    SweepPattern p;
    p.example = drawn % targets.size();
    p.draw = drawn;
    const TokenSeq& z = targets[p.example];
    Rng rng(sampler.seed, derive_stream(kStreamPatternDraw, drawn), 0);
    p.mask = draw_mask(ratio, z.size(), rng);
    // Resolutions with the same step-size sequence produce identical trajectories under shared trial streams.
    std::map<std::vector<std::size_t>, std::size_t> done;
    const RunOptions run = run_options(cfg, derive_stream(kStreamPatternRun, drawn));
    for (std::size_t k = 0; k < runs.size(); ++k) {
      const auto sizes = step_sizes(runs[k].grid(p.mask.count()), p.mask.count(), run.step_rule);
      if (auto it = done.find(sizes); it != done.end()) {
        p.hit.push_back(p.hit[it->second]);
        continue;
      }
      const auto d = generation_distances(*model.predictor, z, p.mask, runs[k], sampler, trials, run);
      std::vector<std::uint8_t> h(d.size());
      for (std::size_t i = 0; i < d.size(); ++i) h[i] = d[i] == 0;
      p.hit.push_back(std::move(h));
      done.emplace(sizes, k);
      if (k == 0) {
        const auto base = static_cast<double>(std::count(p.hit[0].begin(), p.hit[0].end(), 1)) /
                          static_cast<double>(trials);
        if (base <= screen) break;
      }
    }
    if (p.hit.size() == runs.size()) patterns.push_back(std::move(p));
  }
  require(!patterns.empty(), ErrorCode::config, "no mask pattern passed the one-step screen");

  auto count_hits = [](const std::vector<std::uint8_t>& h) {
    return static_cast<std::size_t>(std::count(h.begin(), h.end(), 1));
  };
  // delta[k][p]: log-rate difference of pattern p at resolution k against the baseline.
  std::vector<std::vector<double>> delta(runs.size());
  for (std::size_t k = 0; k < runs.size(); ++k)
    for (const auto& p : patterns)
      delta[k].push_back(k == 0 ? 0.0
                                : smoothed_log_rate(count_hits(p.hit[k]), trials) -
                                      smoothed_log_rate(count_hits(p.hit[0]), trials));

  {
    CsvWriter per(dir / "sweep-steps-patterns.csv", "memex.sweep-steps-patterns/1",
                  {"pattern", "example", "masked", "resolution", "steps", "hits", "trials", "dlogp"}, cfg.hash());
    for (std::size_t p = 0; p < patterns.size(); ++p)
      for (std::size_t k = 0; k < runs.size(); ++k)
        per.row(patterns[p].draw, patterns[p].example, patterns[p].mask.count(), runs[k].label(),
                runs[k].resolve(patterns[p].mask.count()), count_hits(patterns[p].hit[k]), trials, delta[k][p]);
  }

  Rng boot(sampler.seed, kStreamBootstrap, kAuxTrial);
  auto median_of = [](std::span<const double> xs) { return median(std::vector<double>(xs.begin(), xs.end())); };
  std::vector<Interval> ci(runs.size());
  if (axis == "patterns") {
    for (std::size_t k = 0; k < runs.size(); ++k) ci[k] = bootstrap_ci(delta[k], median_of, resamples, boot);
  } else {
    // Paired resampling of trajectories inside every pattern; the statistic stays the median over patterns.
    std::vector<std::vector<double>> stats(runs.size());
    std::vector<std::size_t> idx(trials);
    for (std::size_t b = 0; b < resamples; ++b) {
      std::vector<std::vector<double>> d(runs.size());
      for (const auto& p : patterns) {
        for (auto& i : idx) i = static_cast<std::size_t>(boot.below(trials));
        std::vector<std::size_t> hits(runs.size(), 0);
        for (std::size_t k = 0; k < runs.size(); ++k)
          for (std::size_t i : idx) hits[k] += p.hit[k][i];
        for (std::size_t k = 0; k < runs.size(); ++k)
          d[k].push_back(smoothed_log_rate(hits[k], trials) - smoothed_log_rate(hits[0], trials));
      }
      for (std::size_t k = 0; k < runs.size(); ++k) stats[k].push_back(median(std::move(d[k])));
    }
    for (std::size_t k = 0; k < runs.size(); ++k) {
      std::sort(stats[k].begin(), stats[k].end());
      ci[k] = {sorted_quantile(stats[k], 0.025), sorted_quantile(stats[k], 0.975)};
    }
  }

  CsvWriter csv(dir / "sweep-steps.csv", "memex.sweep-steps/1",
                {"resolution", "median_dlogp", "ci_low", "ci_high", "mean_dlogp", "patterns"}, cfg.hash());
  nlohmann::json rows = nlohmann::json::array();
  std::vector<double> medians;
  for (const auto& res : set) {
    const auto k = static_cast<std::size_t>(std::find(runs.begin(), runs.end(), res) - runs.begin());
    const double med = median(delta[k]);
    medians.push_back(med);
    csv.row(res.label(), med, ci[k].low, ci[k].high, mean(delta[k]), patterns.size());
    rows.push_back({{"resolution", res.label()},
                    {"median_dlogp", med},
                    {"ci_low", ci[k].low},
                    {"ci_high", ci[k].high}});
  }
  CommandResult r;
  r.summary = summary_head("sweep-steps", cfg);
  r.summary["patterns"] = patterns.size();
  r.summary["patterns_drawn"] = drawn;
  r.summary["trials"] = trials;
  r.summary["rows"] = rows;
  r.summary["nondecreasing"] = std::is_sorted(medians.begin(), medians.end());
  r.summary["gain"] = medians.back() - medians.front();
  write_json(dir / "sweep-steps.json", r.summary);
  return r;
}

// ---------------------------------------------------------------------------
// pii-records and np-table
// ---------------------------------------------------------------------------

inline std::vector<Document> load_documents(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::io, "cannot open documents " + path.string());
  return read_documents(in);
}

inline std::vector<PiiRecord> load_records(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::io, "cannot open records " + path.string());
  return read_records(in);
}

inline CommandResult cmd_pii_records(const Config& cfg) {
  cfg.check_keys({"documents", "cap"});
  const auto dir = prepare_out_dir(cfg);
  const auto docs = load_documents(cfg.path("documents"));
  std::unique_ptr<Tokenizer> tok;
  if (cfg.has("model") && looks_like_endpoint(cfg.location("model")))
    tok = std::make_unique<RemoteTokenizer>(RemoteModel::connect(cfg.location("model")));
  else
    tok = std::make_unique<ByteTokenizer>();
  BuildStats stats;
  const auto records = build_records(docs, *tok, cfg.get_count("cap", 50000), &stats);
  {
    std::ofstream out(dir / "records.jsonl", std::ios::binary);
    require(out.good(), ErrorCode::io, "cannot write records.jsonl");
    write_records(out, records, tok->name());
  }
  CommandResult r;
  r.summary = summary_head("pii-records", cfg);
  r.summary["documents"] = docs.size();
  r.summary["records"] = records.size();
  r.summary["candidates"] = stats.candidates;
  r.summary["short_prefix"] = stats.short_prefix;
  r.summary["extra_email"] = stats.extra_email;
  r.summary["capped"] = stats.capped;
  write_json(dir / "pii-records.json", r.summary);
  return r;
}

/// Toy model memorizing every record window, each padded to the longest one.
inline PosteriorModel fit_record_model(const std::vector<PiiRecord>& records, double eta, Token pad) {
  std::size_t longest = 0;
  for (const auto& r : records) longest = std::max(longest, r.prefix.size() + r.target.size());
  Corpus c;
  for (const auto& r : records) c.add(record_window(r, longest, pad).z);
  return fit(c, eta, VocabSpec::with_size(ByteTokenizer().vocab_size()));
}

inline CommandResult cmd_np_table(const Config& cfg) {
  auto keys = kSamplerKeys;
  keys.insert({"records", "eta", "step_set", "targets_p", "budgets", "trials", "pad"});
  cfg.check_keys(keys);
  const auto dir = prepare_out_dir(cfg);
  const auto records = load_records(cfg.path("records"));
  require(!records.empty(), ErrorCode::config, "no PII records");
  AuditOptions opts;
  opts.targets_p = cfg.get<std::vector<double>>("targets_p", opts.targets_p);
  opts.budgets = cfg.get<std::vector<std::size_t>>("budgets", opts.budgets);
  opts.trials = cfg.get_count("trials", 64);
  opts.pad = static_cast<Token>(cfg.get_count("pad", 0, 0));
  opts.threads = cfg.threads();
  opts.step_rule = cfg.step_rule();
  for (double p : opts.targets_p) require(p > 0.0 && p < 1.0, ErrorCode::config, "targets_p must lie in (0,1)");

  std::vector<std::string> labels{"ARM", "One", "Max"};
  if (cfg.has("step_set")) {
    labels.clear();
    std::vector<std::string> raw;
    if (cfg.values()["step_set"].is_string()) {
      std::stringstream ss(cfg.get<std::string>("step_set", ""));
      std::string item;
      while (std::getline(ss, item, ',')) labels.push_back(item);
    } else {
      labels = cfg.get<std::vector<std::string>>("step_set", {});
    }
  }
  std::vector<AuditStep> steps;
  for (const auto& l : labels) steps.push_back(AuditStep::parse(l));

  LoadedModel model;
  if (cfg.has("model")) {
    model = load_model(cfg);
  } else {
    const double eta = cfg.get_in("eta", PosteriorModel::kDefaultEta, 0.0, 1.0, true);
    model.toy = std::make_shared<PosteriorModel>(fit_record_model(records, eta, opts.pad));
    model.predictor = model.toy;
  }
  const SamplerConfig sampler = cfg.sampler();
  sampler.validate(model.predictor->vocab().size);
  const auto res = audit_pii(*model.predictor, records, steps, sampler, opts);

  CsvWriter csv(dir / "np-table.csv", "memex.np-table/1", {"step", "category", "p", "n", "count", "total"},
                cfg.hash());
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : res.rows) {
    csv.row(row.step, to_string(row.category), row.p, row.n, row.count, row.total);
    rows.push_back({{"step", row.step},
                    {"category", to_string(row.category)},
                    {"p", row.p},
                    {"n", row.n},
                    {"count", row.count},
                    {"total", row.total}});
  }
  CsvWriter per(dir / "np-table-records.csv", "memex.np-table-records/1",
                {"record", "source_id", "category", "step", "pz"}, cfg.hash());
  for (std::size_t s = 0; s < steps.size(); ++s)
    for (std::size_t i = 0; i < records.size(); ++i)
      per.row(i, records[i].source_id, to_string(records[i].category), steps[s].label, res.pz[s][i]);

  CommandResult r;
  r.summary = summary_head("np-table", cfg);
  r.summary["records"] = records.size();
  r.summary["rows"] = rows;
  write_json(dir / "np-table.json", r.summary);
  return r;
}

// ---------------------------------------------------------------------------
// eps-cdf: Hamming-error CDF against its Gaussian approximation
// ---------------------------------------------------------------------------

struct EpsInstance {
  std::shared_ptr<const Predictor> model;
  TokenSeq z;
  MaskPattern mask;
};

inline EpsInstance eps_instance(const Config& cfg) {
  EpsInstance inst;
  const std::size_t masked = cfg.get_count("masked", 20);
  Rng rng(cfg.seed(), kStreamInstance, 0);
  if (cfg.has("model") || cfg.has("corpus")) {
    const auto m = load_model(cfg);
    inst.model = m.predictor;
    inst.z = load_targets(cfg, m).front();
  } else {
    const std::size_t length = cfg.get_count("length", 100);
    const std::size_t k = cfg.get_count("vocab_size", 16, 2);
    require(masked <= length, ErrorCode::config, "masked exceeds length");
    inst.z = synth::random_sequence(rng, length, k);
    inst.mask = MaskPattern(length, synth::random_subset(rng, length, masked));
    const auto kind = cfg.get<std::string>("instance", "spread");
    Corpus c;
    if (kind == "spread")
      c = synth::hamming_spread_corpus(rng, inst.z, inst.mask, cfg.get_count("rivals", 200),
                                       cfg.get<double>("mean_diff", 10.0), cfg.get<double>("sd_diff", 3.5), k);
    else if (kind == "all_or_nothing")
      c = synth::all_or_nothing_corpus(rng, inst.z, inst.mask, k);
    else
      fail(ErrorCode::config, "unknown eps-cdf instance '" + kind + "'");
    inst.model = std::make_shared<PosteriorModel>(
        fit(c, cfg.get_in("eta", 0.02, 0.0, 1.0, true), VocabSpec::with_size(k)));
    return inst;
  }
  require(masked <= inst.z.size(), ErrorCode::config, "masked exceeds the target length");
  inst.mask = MaskPattern(inst.z.size(), synth::random_subset(rng, inst.z.size(), masked));
  return inst;
}

inline CommandResult cmd_eps_cdf(const Config& cfg) {
  auto keys = kSamplerKeys;
  keys.insert({"corpus", "eta", "vocab_size", "targets", "max_examples", "instance", "length", "masked", "rivals",
               "mean_diff", "sd_diff", "resolution", "trials", "fit_trials", "width", "tolerance"});
  cfg.check_keys(keys);
  const auto dir = prepare_out_dir(cfg);
  const auto inst = eps_instance(cfg);
  const auto resolution = Resolution::parse(cfg.get<std::string>("resolution", "max"));
  const std::size_t trials = cfg.get_count("trials", 10000);
  const std::size_t fit_trials = cfg.get_count("fit_trials", 128);
  require(fit_trials <= trials, ErrorCode::config, "fit_trials exceeds trials");
  const double width = cfg.get_in("width", 2.0, 0.0, 10.0, true);
  const double tol = cfg.get_in("tolerance", 0.08, 0.0, 1.0, true);
  const SamplerConfig sampler = cfg.sampler();
  sampler.validate(inst.model->vocab().size);

  const auto d = generation_distances(*inst.model, inst.z, inst.mask, resolution, sampler, trials,
                                      run_options(cfg, kStreamEmpirical));
  const auto full = hamming_stats(d);
  const auto small = hamming_stats(std::span<const std::size_t>(d.data(), fit_trials));
  const auto check = normality_check(full, tol, width);
  const auto central = central_regime(full, width);

  CsvWriter csv(dir / "eps-cdf.csv", "memex.eps-cdf/1",
                {"eps", "empirical_cdf", "gaussian_fit_small", "gaussian_fit_full", "central"}, cfg.hash());
  for (std::size_t e = 0; e <= inst.mask.count(); ++e) {
    const double x = static_cast<double>(e);
    const bool in = std::find(central.begin(), central.end(), e) != central.end();
    csv.row(e, full.cdf(x), gaussian_eps_approx(small, x), gaussian_eps_approx(full, x), in);
  }
  CommandResult r;
  r.summary = summary_head("eps-cdf", cfg);
  r.summary["masked"] = inst.mask.count();
  r.summary["trials"] = trials;
  r.summary["fit_trials"] = fit_trials;
  r.summary["mu"] = full.mu;
  r.summary["sigma"] = full.sigma;
  r.summary["mu_small"] = small.mu;
  r.summary["sigma_small"] = small.sigma;
  r.summary["central"] = central;
  r.summary["sup_distance"] = check.sup_distance;
  r.summary["fit_distance"] = central_fit_distance(small, full, full, width);
  r.summary["normal"] = check.passes;
  write_json(dir / "eps-cdf.json", r.summary);
  return r;
}

// ---------------------------------------------------------------------------
// traintest: reconstruction likelihood of training vs held-out sequences
// ---------------------------------------------------------------------------

inline CommandResult cmd_traintest(const Config& cfg) {
  auto keys = kSamplerKeys;
  keys.insert({"train", "test", "eta", "vocab_size", "max_examples", "mask_ratio", "resolution", "trials"});
  cfg.check_keys(keys);
  const auto dir = prepare_out_dir(cfg);
  const auto model = load_model(cfg, "train");
  auto train = load_corpus(cfg.path("train")).sequences;
  auto test = load_corpus(cfg.path("test")).sequences;
  const std::size_t cap = cfg.get_count("max_examples", 0, 0);
  if (cap) {
    train.resize(std::min(cap, train.size()));
    test.resize(std::min(cap, test.size()));
  }
  require(!train.empty() && !test.empty(), ErrorCode::config, "train and test corpora must be nonempty");
  const RandomMask mask{cfg.get_in("mask_ratio", 0.25, 0.0, 1.0, true)};
  const auto resolution = Resolution::parse(cfg.get<std::string>("resolution", "1"));
  const std::size_t trials = cfg.get_count("trials", 512);
  const SamplerConfig sampler = cfg.sampler();
  sampler.validate(model.predictor->vocab().size);

  auto score = [&](const std::vector<TokenSeq>& seqs, std::uint64_t tag) {
    std::vector<double> out;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      RunOptions run = run_options(cfg, derive_stream(tag, i));
      run.bootstrap_resamples = 0;
      const auto est = estimate_pz(*model.predictor, seqs[i], mask, resolution, sampler, trials, run);
      out.push_back(est.mean > 0.0 ? std::log(est.mean) : kNegInf);
    }
    return out;
  };
  const auto lt = score(train, kStreamEmpirical);
  const auto lh = score(test, kStreamTheoretical);

  CsvWriter csv(dir / "traintest.csv", "memex.traintest/1", {"split", "example", "log_pz"}, cfg.hash());
  for (std::size_t i = 0; i < lt.size(); ++i) csv.row("train", i, lt[i]);
  for (std::size_t i = 0; i < lh.size(); ++i) csv.row("test", i, lh[i]);

  // Largest gap F_test(x) - F_train(x) over all observed values.
  std::vector<double> all(lt);
  all.insert(all.end(), lh.begin(), lh.end());
  std::sort(all.begin(), all.end());
  auto ecdf = [](const std::vector<double>& xs, double x) {
    return static_cast<double>(std::count_if(xs.begin(), xs.end(), [x](double v) { return v <= x; })) /
           static_cast<double>(xs.size());
  };
  double gap = 0.0, reverse_gap = 0.0;
  for (double x : all) {
    gap = std::max(gap, ecdf(lh, x) - ecdf(lt, x));
    reverse_gap = std::max(reverse_gap, ecdf(lt, x) - ecdf(lh, x));
  }
  const auto test_result = mann_whitney_greater(lt, lh);
  CommandResult r;
  r.summary = summary_head("traintest", cfg);
  r.summary["train"] = lt.size();
  r.summary["test"] = lh.size();
  r.summary["trials"] = trials;
  r.summary["median_log_pz_train"] = jnum(median(lt));
  r.summary["median_log_pz_test"] = jnum(median(lh));
  r.summary["cdf_sup_gap"] = gap;
  r.summary["cdf_reverse_gap"] = reverse_gap;
  r.summary["rank_u"] = test_result.u;
  r.summary["rank_z"] = test_result.z;
  r.summary["rank_p_value"] = test_result.p_value;
  write_json(dir / "traintest.json", r.summary);
  return r;
}

// ---------------------------------------------------------------------------
// verify: the exact-oracle suite on generated small instances
// ---------------------------------------------------------------------------

inline std::vector<RecoveryOrder> all_orders(const MaskPattern& mask) {
  std::vector<Index> perm = mask.masked();
  std::vector<RecoveryOrder> out;
  do out.push_back({perm});
  while (std::next_permutation(perm.begin(), perm.end()));
  return out;
}

struct ChainTally {
  std::size_t chains = 0, steps = 0, reversals = 0, violations = 0, assumption_failed = 0;
};

inline ChainTally tally_chains(const PosteriorModel& model, const TokenSeq& z, const MaskPattern& mask,
                               std::optional<ChainReport>* first_reversal = nullptr) {
  ChainTally t;
  ConditionalTable table(model, z);
  for (const auto& order : all_orders(mask)) {
    const auto rep = check_refinement_chain(table, mask, order);
    ++t.chains;
    t.steps += rep.steps.size();
    for (const auto& s : rep.steps) {
      t.reversals += s.reversal;
      t.violations += s.verdict == Verdict::violated;
      t.assumption_failed += s.verdict == Verdict::assumption_failed;
    }
    if (first_reversal && !*first_reversal && !rep.monotone()) *first_reversal = rep;
  }
  return t;
}

inline nlohmann::json instance_json(const synth::SmallInstance& inst) {
  nlohmann::json seqs = nlohmann::json::array();
  for (const auto& s : inst.corpus.sequences) seqs.push_back(s.tokens());
  return {{"corpus", seqs},
          {"weights", inst.corpus.weights},
          {"eta", inst.eta},
          {"vocab_size", inst.k},
          {"z", inst.z.tokens()},
          {"mask", inst.mask.masked()}};
}

inline CommandResult cmd_verify(const Config& cfg) {
  cfg.check_keys({"instances", "max_length", "max_masked", "identity_instances", "max_attempts", "search_attempts"});
  const auto dir = prepare_out_dir(cfg);
  const std::size_t wanted = cfg.get_count("instances", 100);
  const std::size_t max_length = cfg.get_count("max_length", 7, 3);
  const std::size_t max_masked = cfg.get_count("max_masked", 5);
  require(max_length <= kDefaultAssumptionMaxL, ErrorCode::config, "max_length is limited to 8");
  const std::size_t identities = cfg.get_count("identity_instances", 50);
  const std::size_t attempts = cfg.get_count("max_attempts", wanted * 50);
  const std::size_t search = cfg.get_count("search_attempts", 20000);

  CsvWriter csv(dir / "verify.csv", "memex.verify/1",
                {"check", "instance", "length", "masked", "assumption_holds", "chains", "reversals", "rel_error",
                 "holds"},
                cfg.hash());

  // Refinement monotonicity on instances that satisfy the assumption.
  Rng rng(cfg.seed(), kStreamInstance, 0);
  ChainTally total;
  std::size_t passing = 0, drawn = 0;
  for (; drawn < attempts && passing < wanted; ++drawn) {
    const auto inst = synth::random_small_instance(rng, max_length, max_masked);
    const auto model = synth::fit_instance(inst);
    if (!check_assumption1(model, inst.z).holds()) continue;
    const auto t = tally_chains(model, inst.z, inst.mask);
    total.chains += t.chains;
    total.steps += t.steps;
    total.reversals += t.reversals;
    total.violations += t.violations;
    total.assumption_failed += t.assumption_failed;
    csv.row("refinement", passing, inst.z.size(), inst.mask.count(), true, t.chains, t.reversals, "",
            t.reversals == 0);
    ++passing;
  }

  // Counterexample: an instance where the assumption fails and some chain reverses.
  nlohmann::json counter = nullptr;
  Rng search_rng(cfg.seed(), kStreamInstance, 1);
  for (std::size_t a = 0; a < search && counter.is_null(); ++a) {
    const auto inst = synth::find_assumption_violation(search_rng);
    const auto model = synth::fit_instance(inst);
    std::optional<ChainReport> rev;
    const auto t = tally_chains(model, inst.z, inst.mask, &rev);
    if (!rev) continue;
    const auto report = check_assumption1(model, inst.z);
    counter = {{"instance", instance_json(inst)},
               {"search_draws", a + 1},
               {"assumption", to_json(report, 8)},
               {"chains", t.chains},
               {"reversals", t.reversals},
               {"first_reversal", to_json(*rev)}};
    csv.row("counterexample", 0, inst.z.size(), inst.mask.count(), false, t.chains, t.reversals, "", t.reversals > 0);
  }

  // Per-token left-to-right recovery against the chain rule.
  Rng id_rng(cfg.seed(), kStreamInstance, 2);
  std::size_t failures = 0, suffixes = 0;
  double worst = 0.0;
  for (std::size_t i = 0; i < identities; ++i) {
    auto inst = synth::random_small_instance(id_rng, max_length, max_masked);
    if (i % 2 == 0) {
      const std::size_t len = inst.z.size();
      inst.mask = MaskPattern::suffix(len, len - 1 - id_rng.below(std::min(len - 1, max_masked)));
    }
    const auto model = synth::fit_instance(inst);
    const auto c = check_chain_rule_identity(model, inst.z, inst.mask);
    suffixes += c.log_arm.has_value();
    failures += !c.holds;
    worst = std::max(worst, c.rel_error);
    csv.row(c.log_arm ? "identity_suffix" : "identity", i, inst.z.size(), inst.mask.count(), "", "", "", c.rel_error,
            c.holds);
  }

  CommandResult r;
  r.summary = summary_head("verify", cfg);
  r.summary["refinement"] = {{"instances", passing},
                           {"draws", drawn},
                           {"chains", total.chains},
                           {"steps", total.steps},
                           {"reversals", total.reversals},
                           {"violations", total.violations},
                           {"assumption_failed", total.assumption_failed}};
  r.summary["counterexample"] = counter;
  r.summary["identity"] = {{"instances", identities},
                           {"suffix_instances", suffixes},
                           {"failures", failures},
                           {"max_rel_error", worst},
                           {"tolerance", kIdentityTolerance}};
  const bool ok = passing == wanted && total.reversals == 0 && total.violations == 0 && failures == 0;
  r.summary["passed"] = ok;
  r.exit_code = ok ? 0 : 1;
  write_json(dir / "verify.json", r.summary);
  return r;
}

// ---------------------------------------------------------------------------
// synth: the bundled corpora
// ---------------------------------------------------------------------------

inline CommandResult cmd_synth(const Config& cfg) {
  cfg.check_keys({"kind", "length", "vocab_size", "variants", "diff", "variant_weight", "families", "sharpness",
                  "train", "test", "per_kind"});
  const auto dir = prepare_out_dir(cfg);
  const auto kind = cfg.required<std::string>("kind");
  Rng rng(cfg.seed(), kStreamInstance, 0);
  CommandResult r;
  r.summary = summary_head("synth", cfg);
  r.summary["kind"] = kind;
  if (kind == "family") {
    const std::size_t length = cfg.get_count("length", 40), k = cfg.get_count("vocab_size", 16, 2);
    const TokenSeq base = synth::random_sequence(rng, length, k);
    const auto c = synth::near_duplicate_family(rng, base, cfg.get_count("variants", 250, 0),
                                                cfg.get_count("diff", 3, 0), k, 1.0,
                                                cfg.get<double>("variant_weight", 1.0));
    save_corpus(dir / "family.corpus", c);
    Corpus targets;
    targets.add(base);
    save_corpus(dir / "family-targets.corpus", targets);
    r.summary["sequences"] = c.size();
  } else if (kind == "graded") {
    const auto c = synth::graded_memorization_corpus(rng, cfg.get_count("families", 40), cfg.get_count("length", 16),
                                                     cfg.get_count("vocab_size", 8, 2));
    save_corpus(dir / "graded.corpus", c);
    r.summary["sequences"] = c.size();
  } else if (kind == "markov") {
    const std::size_t length = cfg.get_count("length", 40), k = cfg.get_count("vocab_size", 16, 2);
    const auto chain = synth::MarkovChain::random(rng, k, cfg.get<double>("sharpness", 3.0));
    Corpus train, test;
    std::set<std::vector<Token>> seen;
    const std::size_t n_train = cfg.get_count("train", 100), n_test = cfg.get_count("test", 100);
    while (train.size() < n_train) {
      auto s = chain.sample(rng, length);
      if (seen.insert(s.tokens()).second) train.add(std::move(s));
    }
    while (test.size() < n_test) {
      auto s = chain.sample(rng, length);
      if (seen.insert(s.tokens()).second) test.add(std::move(s));
    }
    save_corpus(dir / "markov-train.corpus", train);
    save_corpus(dir / "markov-test.corpus", test);
    r.summary["train"] = train.size();
    r.summary["test"] = test.size();
  } else if (kind == "pii") {
    const auto c = synth::pii_corpus(rng, cfg.get_count("per_kind", 10));
    std::ofstream docs(dir / "pii-documents.jsonl", std::ios::binary), truth(dir / "pii-planted.jsonl", std::ios::binary);
    require(docs.good() && truth.good(), ErrorCode::io, "cannot write PII corpus files");
    for (const auto& d : c.docs) docs << nlohmann::json{{"id", d.id}, {"text", d.text}}.dump() << '\n';
    for (const auto& p : c.planted)
      truth << nlohmann::json{{"id", p.doc_id},
                              {"category", to_string(p.category)},
                              {"value", p.value},
                              {"expect_record", p.expect_record}}
                   .dump()
            << '\n';
    r.summary["documents"] = c.docs.size();
    r.summary["planted"] = c.planted.size();
  } else {
    fail(ErrorCode::config, "unknown synth kind '" + kind + "'");
  }
  write_json(dir / "synth.json", r.summary);
  return r;
}

// ---------------------------------------------------------------------------
// serve-toy
// ---------------------------------------------------------------------------

inline CommandResult cmd_serve_toy(const Config& cfg) {
  cfg.check_keys({"corpus", "eta", "vocab_size", "host", "port"});
  const auto model = load_model(cfg);
  StubOptions opts;
  opts.tokenizer_name = "toy";
  if (const char* env = std::getenv(protocol::kBearerEnv)) opts.bearer_token = env;
  ByteTokenizer bytes;
  if (model.predictor->vocab().size == bytes.vocab_size()) {
    opts.tokenizer_name = bytes.name();
    opts.tokenizer = &bytes;
  }
  StubServer server(*model.predictor, opts);
  const auto host = cfg.get<std::string>("host", "127.0.0.1");
  const int port = static_cast<int>(cfg.get_count("port", 8080));
  std::cerr << "serving memex/1 on http://" << host << ":" << port << '\n';
  server.run(host, port);
  return {summary_head("serve-toy", cfg), 0};
}

// ---------------------------------------------------------------------------

using CommandFn = CommandResult (*)(const Config&);

inline const std::map<std::string, CommandFn>& commands() {
  static const std::map<std::string, CommandFn> table{
      {"fit-toy", cmd_fit_toy},     {"scatter-pz", cmd_scatter_pz},   {"sweep-steps", cmd_sweep_steps},
      {"np-table", cmd_np_table},   {"eps-cdf", cmd_eps_cdf},         {"traintest", cmd_traintest},
      {"verify", cmd_verify},       {"serve-toy", cmd_serve_toy},     {"synth", cmd_synth},
      {"pii-records", cmd_pii_records},
  };
  return table;
}

inline CommandResult run_command(const std::string& name, const Config& cfg) {
  const auto it = commands().find(name);
  require(it != commands().end(), ErrorCode::config, "unknown command '" + name + "'");
  return it->second(cfg);
}

}  // namespace memex::cli
