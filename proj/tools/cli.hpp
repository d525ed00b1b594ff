#pragma once

// Command-line front end. Every subcommand loads its inputs, computes the whole
// report in memory, and only then writes its artifacts (each atomically) plus
// a run manifest next to the primary output.

#include <array>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "clipgeom/clipgeom.hpp"

namespace clipgeom::cli {

inline constexpr const char* kToolVersion = "clipgeom 1.0.0";

enum ExitCode : int { kOk = 0, kUsage = 2, kBadFile = 3, kNumeric = 4 };

namespace fs = std::filesystem;
using io::Json;

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

inline std::string sha256_file(const fs::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("cannot hash '" + path.string() + "'");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xF]);
  }
  return out;
}

inline std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (cell.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw InvalidArgument("not a number: '" + cell + "'");
    }
  }
  return out;
}

/// "lo:hi:step" grid or a comma-separated list.
inline std::vector<double> parse_grid(const std::string& text) {
  if (text.find(':') == std::string::npos) return parse_list(text);
  std::vector<double> parts;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ':')) {
    const auto v = parse_list(cell);
    if (v.size() != 1) throw InvalidArgument("grid must look like lo:hi:step, got '" + text + "'");
    parts.push_back(v[0]);
  }
  if (parts.size() != 3) throw InvalidArgument("grid must look like lo:hi:step, got '" + text + "'");
  return alpha_grid(parts[0], parts[1], parts[2]);
}

// Leading entries from `text`, remaining coordinates zero.
inline Vector padded_vector(const std::string& text, std::size_t dim) {
  const auto vals = parse_list(text);
  if (vals.size() > dim) throw InvalidArgument("vector has more entries than dim");
  Vector v = Vector::Zero(static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < vals.size(); ++i) v(static_cast<Eigen::Index>(i)) = vals[i];
  return v;
}

// One value broadcasts to every coordinate; otherwise exactly dim values.
inline Vector scale_vector(const std::string& text, std::size_t dim) {
  const auto vals = parse_list(text);
  if (vals.size() == 1) return Vector::Constant(static_cast<Eigen::Index>(dim), vals[0]);
  if (vals.size() != dim) throw InvalidArgument("scale needs 1 or dim entries");
  return Eigen::Map<const Vector>(vals.data(), static_cast<Eigen::Index>(dim));
}

inline std::vector<std::size_t> parse_indices(const std::string& text) {
  std::vector<std::size_t> out;
  for (double v : parse_list(text)) {
    if (v < 0 || v != std::floor(v)) throw InvalidArgument("feature indices must be integers >= 0");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

// EMB1, or CSV when the extension is .csv (header detected from the first row).
inline EmbeddingSet load_set(const fs::path& path, Modality expected) {
  EmbeddingSet set = [&] {
    if (path.extension() == ".csv") {
      try {
        return import_csv(path, expected);
      } catch (const FormatError& e) {
        if (std::string(e.what()).find("line 1,") == std::string::npos) throw;
        return import_csv(path, expected, CsvOptions{.header = true});
      }
    }
    return load_emb(path);
  }();
  if (expected != Modality::other && set.modality() != expected) {
    if (set.modality() != Modality::other) {
      throw FormatError(path.string() + ": expected modality " + std::string(to_string(expected)) +
                        ", file declares " + std::string(to_string(set.modality())));
    }
    return set.with_modality(expected);
  }
  return set;
}

inline std::size_t row_by_key(const EmbeddingSet& set, const std::string& key) {
  if (set.has_ids()) {
    const auto& ids = *set.ids();
    for (std::size_t j = 0; j < ids.size(); ++j)
      if (ids[j] == key) return j;
  }
  try {
    std::size_t used = 0;
    const unsigned long long j = std::stoull(key, &used);
    if (used == key.size() && j < set.count()) return static_cast<std::size_t>(j);
  } catch (const std::exception&) {
  }
  throw InvalidArgument("no row with id or index '" + key + "'");
}

/// Artifacts produced by one command, written only after everything succeeded.
class Outputs {
 public:
  void text(fs::path path, std::string content) {
    items_.push_back({std::move(path), std::move(content), std::nullopt});
  }
  void json(fs::path path, Json j) { text(std::move(path), io::dump(j)); }
  void emb(fs::path path, EmbeddingSet set) {
    items_.push_back({std::move(path), {}, std::move(set)});
  }
  const fs::path& primary() const { return items_.front().path; }
  bool empty() const { return items_.empty(); }

  std::vector<std::string> paths() const {
    std::vector<std::string> out;
    for (const auto& it : items_) out.push_back(it.path.string());
    return out;
  }

  void write_all() const {
    for (const auto& it : items_) {
      if (it.set) {
        save_emb(*it.set, it.path);
      } else {
        detail::write_file_atomic(it.path, it.content);
      }
    }
  }

 private:
  struct Item {
    fs::path path;
    std::string content;
    std::optional<EmbeddingSet> set;
  };
  std::vector<Item> items_;
};

inline fs::path manifest_path_for(const fs::path& primary) {
  auto p = primary;
  p += ".manifest.json";
  return p;
}

// Report header shared by every JSON report.
inline Json report_header(const std::string& command, const fs::path& primary) {
  Json j;
  j["command"] = command;
  j["tool_version"] = kToolVersion;
  j["manifest"] = manifest_path_for(primary).filename().string();
  return j;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Context {
  std::string command;
  std::vector<std::string> argv;
  std::vector<fs::path> inputs;
  Outputs outputs;
};

inline Json manifest_json(const Context& ctx, const CLI::App& sub) {
  Json m;
  m["command"] = ctx.command;
  m["argv"] = ctx.argv;
  Json inputs = Json::array();
  for (const auto& p : ctx.inputs) {
    Json in;
    in["path"] = p.string();
    in["sha256"] = sha256_file(p);
    inputs.push_back(in);
  }
  m["inputs"] = inputs;
  Json params = Json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_name() == "--help") continue;
    std::string name = opt->get_name();
    while (!name.empty() && name.front() == '-') name.erase(name.begin());
    const auto res = opt->results();
    if (!res.empty()) {
      std::string joined;
      for (std::size_t i = 0; i < res.size(); ++i) joined += (i ? "," : "") + res[i];
      params[name] = joined;
    } else if (!opt->get_default_str().empty()) {
      params[name] = opt->get_default_str();
    }
  }
  m["parameters"] = params;
  m["outputs"] = ctx.outputs.paths();
  m["tool_version"] = kToolVersion;
  m["timestamp"] = utc_timestamp();
  return m;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct Registry {
  CLI::App& app;
  std::vector<std::pair<CLI::App*, std::function<void(Context&)>>> commands;

  template <typename Setup>
  void add(const std::string& name, const std::string& help, Setup setup) {
    CLI::App* sub = app.add_subcommand(name, help);
    commands.emplace_back(sub, setup(*sub));
  }
};

inline void register_commands(Registry& reg) {
  // -- moment statistics ----------------------------------------------------
  reg.add("stats", "Mean, std, covariance and norm statistics of one set", [](CLI::App& s) {
    auto in = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto no_cov = std::make_shared<bool>(false);
    s.add_option("--in", *in, "Embedding file")->required();
    s.add_option("--out", *out, "JSON report")->required();
    s.add_flag("--no-cov", *no_cov, "Omit the covariance matrix");
    return std::function<void(Context&)>([=](Context& ctx) {
      ctx.inputs = {*in};
      const auto set = load_set(*in, Modality::other);
      Json j = report_header(ctx.command, *out);
      j["modality"] = std::string(to_string(set.modality()));
      j["norm_summary"] = io::to_json(norm_summary(set));
      j["stats"] = io::to_json(compute_stats(set), !*no_cov);
      ctx.outputs.json(*out, j);
    });
  });

  reg.add("sep", "Per-feature separability between images and texts", [](CLI::App& s) {
    auto images = std::make_shared<std::string>();
    auto texts = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    s.add_option("--images", *images)->required();
    s.add_option("--texts", *texts)->required();
    s.add_option("--out", *out, "JSON report")->required();
    return std::function<void(Context&)>([=](Context& ctx) {
      ctx.inputs = {*images, *texts};
      const auto sep = separability(compute_stats(load_set(*images, Modality::image)),
                                    compute_stats(load_set(*texts, Modality::text)));
      Json j = report_header(ctx.command, *out);
      j["sep"] = io::reals(sep.values);
      j["order"] = sep.order;
      ctx.outputs.json(*out, j);
    });
  });

  reg.add("odd", "Off-diagonal dominance of each covariance row", [](CLI::App& s) {
    auto in = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    s.add_option("--in", *in)->required();
    s.add_option("--out", *out, "JSON report")->required();
    return std::function<void(Context&)>([=](Context& ctx) {
      ctx.inputs = {*in};
      const auto v = odd(compute_stats(load_set(*in, Modality::other)).cov);
      Json j = report_header(ctx.command, *out);
      j["odd"] = io::reals(v);
      j["max"] = io::real(v.maxCoeff());
      j["mean"] = io::real(v.mean());
      j["rows_above_one"] = (v.array() > 1.0).count();
      ctx.outputs.json(*out, j);
    });
  });

  reg.add("thin-shell", "Centered-norm concentration report", [](CLI::App& s) {
    auto in = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto hist = std::make_shared<std::string>();
    auto k = std::make_shared<double>(3.0);
    auto bins = std::make_shared<std::size_t>(kDefaultBins);
    s.add_option("--in", *in)->required();
    s.add_option("--out", *out, "JSON report")->required();
    s.add_option("--k", *k, "Shell half-width in norm standard deviations")->capture_default_str();
    s.add_option("--hist-out", *hist, "TSV histogram of centered norms");
    s.add_option("--bins", *bins)->capture_default_str();
    return std::function<void(Context&)>([=](Context& ctx) {
      ctx.inputs = {*in};
      const auto set = load_set(*in, Modality::other);
      Json j = report_header(ctx.command, *out);
      j["thin_shell"] = io::to_json(thin_shell_report(set, *k));
      j["norm_summary"] = io::to_json(norm_summary(set));
      ctx.outputs.json(*out, j);
      if (!hist->empty()) {
        const Vector mean = detail::column_mean(set.data());
        const Vector norms = detail::centered(set.data(), mean).rowwise().norm();
        ctx.outputs.text(*hist, io::histogram_tsv(histogram(norms, *bins)));
      }
    });
  });

  reg.add("feature-kl", "KL between image and text marginals of one feature", [](CLI::App& s) {
    auto images = std::make_shared<std::string>();
    auto texts = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto hist_i = std::make_shared<std::string>();
    auto hist_t = std::make_shared<std::string>();
    auto feature = std::make_shared<std::size_t>(0);
    auto bins = std::make_shared<std::size_t>(kDefaultBins);
    s.add_option("--images", *images)->required();
    s.add_option("--texts", *texts)->required();
    s.add_option("--feature", *feature)->required();
    s.add_option("--bins", *bins)->capture_default_str();
    s.add_option("--out", *out, "JSON report")->required();
    s.add_option("--hist-image", *hist_i, "TSV histogram of the image feature");
    s.add_option("--hist-text", *hist_t, "TSV histogram of the text feature");
    return std::function<void(Context&)>([=](Context& ctx) {
      ctx.inputs = {*images, *texts};
      const auto si = load_set(*images, Modality::image);
      const auto st = load_set(*texts, Modality::text);
      detail::require(*feature < si.dim() && si.dim() == st.dim(), "feature out of range");
      const Vector a = si.data().col(static_cast<Eigen::Index>(*feature));
      const Vector b = st.data().col(static_cast<Eigen::Index>(*feature));
      const auto range = shared_range(a, b);
      const auto ha = histogram(a, *bins, range);
      const auto hb = histogram(b, *bins, range);
      Json j = report_header(ctx.command, *out);
      j["feature"] = *feature;
      j["bins"] = *bins;
      j["smoothing"] = io::real(kKlSmoothing);
      j["direction"] = "KL(image||text)";
      j["kl"] = io::real(histogram_kl(ha, hb));
      j["kl_reverse"] = io::real(histogram_kl(hb, ha));
      ctx.outputs.json(*out, j);
      if (!hist_i->empty()) ctx.outputs.text(*hist_i, io::histogram_tsv(ha));
      if (!hist_t->empty()) ctx.outputs.text(*hist_t, io::histogram_tsv(hb));
    });
  });

  // -- whitening ------------------------------------------------------------
  reg.add("whiten", "Fit (or load) a whitening transform and apply it", [](CLI::App& s) {
    auto in = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto transform_out = std::make_shared<std::string>();
    auto apply = std::make_shared<std::string>();
    auto floor = std::make_shared<double>(-1.0);
    s.add_option("--in", *in)->required();
    s.add_option("--out", *out, "Whitened EMB1 file")->required();
    s.add_option("--transform-out", *transform_out, "EMB1 file for W (+ .json sidecar)");
    s.add_option("--apply", *apply, "Existing transform (EMB1 W with .json sidecar)");
    s.add_option("--eigen-floor", *floor, "Absolute eigenvalue floor (default 1e-8 * max)");
    return std::function<void(Context&)>([=](Context& ctx) {
      ctx.inputs = {*in};
      const auto set = load_set(*in, Modality::other);
      WhiteningTransform t;
      if (!apply->empty()) {
        ctx.inputs.push_back(*apply);
        ctx.inputs.push_back(io::whitening_sidecar_path(*apply));
        t = io::load_whitening(*apply);
      } else {
        t = fit_whitening(set, *floor >= 0 ? std::optional<double>(*floor) : std::nullopt);
      }
      ctx.outputs.emb(*out, apply_whitening(t, set));
      if (!transform_out->empty()) {
        ctx.outputs.emb(*transform_out, io::whitening_matrix_set(t));
        ctx.outputs.json(io::whitening_sidecar_path(*transform_out), io::to_json(t));
      }
    });
  });

  reg.add("whiten-check", "Norm statistics of a whitened set vs sqrt(n) predictions", [](CLI::App& s) {
    auto in = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    s.add_option("--in", *in, "Whitened embedding file")->required();
    s.add_option("--out", *out, "JSON report")->required();
    return std::function<void(Context&)>([=](Context& ctx) {
      ctx.inputs = {*in};
      const auto set = load_set(*in, Modality::other);
      const auto r = whitened_norm_check(set);
      const auto chi = chi_reference(set.dim());
      Json j = report_header(ctx.command, *out);
      j["check"] = io::to_json(r);
      j["chi"] = io::to_json(chi, set.dim());
      j["std_ratio_vs_chi_std"] = io::real(r.std_norm / chi.std);
      j["std_ratio_vs_one_half"] = io::real(r.std_norm / 0.5);
      ctx.outputs.json(*out, j);
    });
  });

  reg.add("chi-ref", "Chi distribution mean/std for n degrees of freedom", [](CLI::App& s) {
    auto n = std::make_shared<std::size_t>(512);
    auto out = std::make_shared<std::string>();
    auto samples = std::make_shared<std::size_t>(0);
    auto seed = std::make_shared<std::uint64_t>(0);
    s.add_option("--n", *n)->capture_default_str();
    s.add_option("--out", *out, "JSON report")->required();
    s.add_option("--mc-samples", *samples, "Also estimate by Monte Carlo")->capture_default_str();
    s.add_option("--seed", *seed)->capture_default_str();
    return std::function<void(Context&)>([=](Context& ctx) {
      detail::require(*n >= 1, "--n must be >= 1");
      Json j = report_header(ctx.command, *out);
      j["closed_form"] = io::to_json(chi_reference(*n), *n);
      if (*samples >= 2) {
        SyntheticSpec spec = SyntheticSpec::isotropic(*n, *samples, *seed);
        const auto nm = detail::norm_moments(generate_gaussian(spec).data());
        Json mc;
        mc["samples"] = *samples;
        mc["seed"] = *seed;
        mc["mean"] = io::real(nm.mean);
        mc["std"] = io::real(std::sqrt(nm.var));
        j["monte_carlo"] = mc;
      }
      ctx.outputs.json(*out, j);
    });
  });

  // -- conformity -------------------------------------------------------------
  reg.add("conformity", "Exact and estimated conformity of one set", [](CLI::App& s) {
    auto in = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto tsv = std::make_shared<std::string>();
    s.add_option("--in", *in)->required();
    s.add_option("--out", *out, "JSON report")->required();
    s.add_option("--tsv", *tsv, "Per-instance TSV (id, C, cos_to_mean, C_hat)");
    return std::function<void(Context&)>([=](Context& ctx) {
      ctx.inputs = {*in};
      const auto set = load_set(*in, Modality::other);
      const auto r = conformity_report(set);
      Json j = report_header(ctx.command, *out);
      j["count"] = set.count();
      j["a"] = io::real(r.a);
      j["b"] = io::real(r.b);
      j["pearson_r"] = io::real(r.pearson_r);
      j["mean_conformity"] = io::real(r.conformity.mean());
      j["conformity"] = io::reals(r.conformity);
      j["cosines_to_mean"] = io::reals(r.cosines_to_mean);
      j["estimate"] = io::reals(r.estimate);
      ctx.outputs.json(*out, j);
      if (!tsv->empty()) ctx.outputs.text(*tsv, io::conformity_tsv(r, set.ids()));
    });
  });

  reg.add("fit-estimator", "Fit C ~ a cos(m, v) + b; optionally score another set", [](CLI::App& s) {
    auto in = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto score = std::make_shared<std::string>();
    auto score_out = std::make_shared<std::string>();
    s.add_option("--in", *in, "Reference set")->required();
    s.add_option("--out", *out, "JSON report")->required();
    s.add_option("--score", *score, "Set to score with the fitted estimator");
    s.add_option("--score-out", *score_out, "TSV of estimated conformity for --score");
    return std::function<void(Context&)>([=](Context& ctx) {
      ctx.inputs = {*in};
      const auto ref = load_set(*in, Modality::other);
      const Vector mean = detail::column_mean(ref.data());
      const auto fit = fit_estimator(conformity(ref), cosines_to(ref.data(), mean));
      Json j = report_header(ctx.command, *out);
      j["a"] = io::real(fit.a);
      j["b"] = io::real(fit.b);
      j["pearson_r"] = io::real(fit.pearson_r);
      j["reference_mean"] = io::reals(mean);
      if (!score->empty()) {
        detail::require(!score_out->empty(), "--score requires --score-out");
        ctx.inputs.push_back(*score);
        const auto other = load_set(*score, Modality::other);
        const Vector est = estimated_conformity(other, mean, fit.a, fit.b);
        std::string tsv = "id\tC_hat\n";
        for (Eigen::Index r = 0; r < est.size(); ++r) {
          tsv += (other.has_ids() ? (*other.ids())[static_cast<std::size_t>(r)] : std::to_string(r)) +
                 "\t" + io::format_real(est(r)) + "\n";
        }
        j["scored_mean_estimate"] = io::real(est.mean());
        ctx.outputs.json(*out, j);
        ctx.outputs.text(*score_out, tsv);
        return;
      }
      ctx.outputs.json(*out, j);
    });
  });

  reg.add("kl-sweep", "Conformity-distribution KL under alpha mean shifts", [](CLI::App& s) {
    auto images = std::make_shared<std::string>();
    auto texts = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto target = std::make_shared<std::string>("image");
    auto alphas = std::make_shared<std::string>("-1:1:0.05");
    auto bins = std::make_shared<std::size_t>(kDefaultBins);
    auto direction = std::make_shared<std::string>("image-text");
    s.add_option("--images", *images)->required();
    s.add_option("--texts", *texts)->required();
    s.add_option("--target", *target)->check(CLI::IsMember({"image", "text", "both"}))->capture_default_str();
    s.add_option("--alphas", *alphas)->capture_default_str();
    s.add_option("--bins", *bins)->capture_default_str();
    s.add_option("--direction", *direction)->check(CLI::IsMember({"image-text", "text-image"}))->capture_default_str();
    s.add_option("--out", *out, "CSV alpha,kl")->required();
    return std::function<void(Context&)>([=](Context& ctx) {
      ctx.inputs = {*images, *texts};
      const auto p = pair(load_set(*images, Modality::image), load_set(*texts, Modality::text));
      const auto sweep = conformity_kl_sweep(
          p, parse_grid(*alphas), shift_target_from_string(*target), *bins,
          *direction == "image-text" ? KlDirection::image_text : KlDirection::text_image);
      ctx.outputs.text(*out, io::kl_sweep_csv(sweep));
    });
  });

  // -- contrastive loss -------------------------------------------------------
  auto loss_options = [](CLI::App& s, std::shared_ptr<LossOptions> o,
                         std::shared_ptr<std::string> rule) {
    s.add_option("--tau", o->tau, "Temperature")->capture_default_str();
    s.add_option("--rule", *rule, "symmetric | text-to-image | image-to-text")
        ->check(CLI::IsMember({"symmetric", "text-to-image", "image-to-text"}))
        ->capture_default_str();
    s.add_option("--batch-size", o->batch_size, "0 = whole set as one batch")->capture_default_str();
    s.add_option("--seed", o->seed, "Mini-batch shuffling seed")->capture_default_str();
  };

  reg.add("loss", "NT-Xent loss breakdown of a paired set", [loss_options](CLI::App& s) {
    auto images = std::make_shared<std::string>();
    auto texts = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto opts = std::make_shared<LossOptions>();
    auto rule = std::make_shared<std::string>("symmetric");
    s.add_option("--images", *images)->required();
    s.add_option("--texts", *texts)->required();
    s.add_option("--out", *out, "JSON report")->required();
    loss_options(s, opts, rule);
    return std::function<void(Context&)>([=](Context& ctx) {
      ctx.inputs = {*images, *texts};
      auto o = *opts;
      o.rule = match_rule_from_string(*rule);
      const auto p = pair(load_set(*images, Modality::image), load_set(*texts, Modality::text));
      Json j = report_header(ctx.command, *out);
      j["rule"] = *rule;
      j["batch_size"] = o.batch_size;
      j["loss"] = io::to_json(clip_loss(p, o));
      ctx.outputs.json(*out, j);
    });
  });

  reg.add("loss-sweep", "NT-Xent loss over alpha mean shifts", [loss_options](CLI::App& s) {
    auto images = std::make_shared<std::string>();
    auto texts = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto target = std::make_shared<std::string>("image");
    auto alphas = std::make_shared<std::string>("-1:1:0.05");
    auto opts = std::make_shared<LossOptions>();
    auto rule = std::make_shared<std::string>("symmetric");
    s.add_option("--images", *images)->required();
    s.add_option("--texts", *texts)->required();
    s.add_option("--target", *target)->check(CLI::IsMember({"image", "text", "both"}))->capture_default_str();
    s.add_option("--alphas", *alphas)->capture_default_str();
    s.add_option("--out", *out, "CSV report")->required();
    loss_options(s, opts, rule);
    return std::function<void(Context&)>([=](Context& ctx) {
      ctx.inputs = {*images, *texts};
      auto o = *opts;
      o.rule = match_rule_from_string(*rule);
      const auto p = pair(load_set(*images, Modality::image), load_set(*texts, Modality::text));
      const auto sweep = alpha_sweep(p, parse_grid(*alphas), shift_target_from_string(*target), o);
      ctx.outputs.text(*out, io::loss_sweep_csv(sweep));
    });
  });

  reg.add("classify", "Per-pair top-1 retrieval correctness", [](CLI::App& s) {
    auto images = std::make_shared<std::string>();
    auto texts = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto rule = std::make_shared<std::string>("symmetric");
    auto tau = std::make_shared<double>(kDefaultTau);
    s.add_option("--images", *images)->required();
    s.add_option("--texts", *texts)->required();
    s.add_option("--rule", *rule)
        ->check(CLI::IsMember({"symmetric", "text-to-image", "image-to-text"}))
        ->capture_default_str();
    s.add_option("--tau", *tau)->capture_default_str();
    s.add_option("--out", *out, "TSV id, correct")->required();
    return std::function<void(Context&)>([=](Context& ctx) {
      ctx.inputs = {*images, *texts};
      const auto p = pair(load_set(*images, Modality::image), load_set(*texts, Modality::text));
      const auto ok = classify_pairs(p, *tau, match_rule_from_string(*rule));
      std::string tsv = "id\tcorrect\n";
      for (std::size_t j = 0; j < ok.size(); ++j) {
        tsv += (p.images.has_ids() ? (*p.images.ids())[j] : std::to_string(j)) + "\t" +
               (ok[j] ? "1" : "0") + "\n";
      }
      ctx.outputs.text(*out, tsv);
    });
  });

  // -- separability classifier ------------------------------------------------
  reg.add("top-features", "Indices of the k most separable features", [](CLI::App& s) {
    auto images = std::make_shared<std::string>();
    auto texts = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto k = std::make_shared<std::size_t>(10);
    s.add_option("--images", *images)->required();
    s.add_option("--texts", *texts)->required();
    s.add_option("--k", *k)->capture_default_str();
    s.add_option("--out", *out, "JSON report")->required();
    return std::function<void(Context&)>([=](Context& ctx) {
      ctx.inputs = {*images, *texts};
      const auto sep = separability(compute_stats(load_set(*images, Modality::image)),
                                    compute_stats(load_set(*texts, Modality::text)));
      const auto top = top_separable_features(sep.values, *k);
      Json vals = Json::array();
      for (auto f : top) vals.push_back(io::real(sep.values(static_cast<Eigen::Index>(f))));
      Json j = report_header(ctx.command, *out);
      j["features"] = top;
      j["sep"] = vals;
      ctx.outputs.json(*out, j);
    });
  });

  reg.add("train-sep", "Train a linear image-vs-text separator on chosen features", [](CLI::App& s) {
    auto images = std::make_shared<std::string>();
    auto texts = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto features = std::make_shared<std::string>();
    auto k = std::make_shared<std::size_t>(2);
    auto lambda = std::make_shared<double>(kDefaultSvmLambda);
    auto epochs = std::make_shared<std::size_t>(kDefaultSvmEpochs);
    auto seed = std::make_shared<std::uint64_t>(0);
    auto eval_i = std::make_shared<std::string>();
    auto eval_t = std::make_shared<std::string>();
    s.add_option("--images", *images)->required();
    s.add_option("--texts", *texts)->required();
    s.add_option("--features", *features, "Comma-separated indices (default: top-k by Sep)");
    s.add_option("--k", *k)->capture_default_str();
    s.add_option("--lambda", *lambda)->capture_default_str();
    s.add_option("--epochs", *epochs)->capture_default_str();
    s.add_option("--seed", *seed)->capture_default_str();
    s.add_option("--eval-images", *eval_i, "Held-out images");
    s.add_option("--eval-texts", *eval_t, "Held-out texts");
    s.add_option("--out", *out, "Model JSON with evaluation")->required();
    return std::function<void(Context&)>([=](Context& ctx) {
      ctx.inputs = {*images, *texts};
      const auto si = load_set(*images, Modality::image);
      const auto st = load_set(*texts, Modality::text);
      const auto idx = features->empty()
                           ? top_separable_features(compute_stats(si), compute_stats(st), *k)
                           : parse_indices(*features);
      const auto model = train_modality_separator(si, st, idx, *lambda, *epochs, *seed);
      auto eval_json = [&](const EmbeddingSet& a, const EmbeddingSet& b) {
        const auto ev = evaluate(model, select_features(a.data(), idx), select_features(b.data(), idx));
        Json e;
        e["accuracy"] = io::real(ev.accuracy);
        e["confusion"] = {{ev.confusion[0][0], ev.confusion[0][1]},
                          {ev.confusion[1][0], ev.confusion[1][1]}};
        return e;
      };
      Json j = report_header(ctx.command, *out);
      j["model"] = io::to_json(model);
      j["train"] = eval_json(si, st);
      if (!eval_i->empty() || !eval_t->empty()) {
        detail::require(!eval_i->empty() && !eval_t->empty(),
                        "--eval-images and --eval-texts go together");
        ctx.inputs.push_back(*eval_i);
        ctx.inputs.push_back(*eval_t);
        j["eval"] = eval_json(load_set(*eval_i, Modality::image), load_set(*eval_t, Modality::text));
      }
      ctx.outputs.json(*out, j);
    });
  });

  // -- interpolation ----------------------------------------------------------
  auto interp = [](bool vertical) {
    return [vertical](CLI::App& s) {
      auto in = std::make_shared<std::string>();
      auto out = std::make_shared<std::string>();
      auto a = std::make_shared<std::string>();
      auto b = std::make_shared<std::string>();
      auto t = std::make_shared<std::string>("0:1:0.25");
      auto alpha = std::make_shared<double>(0.0);
      auto mean_from = std::make_shared<std::string>();
      s.add_option("--in", *in)->required();
      s.add_option("--a", *a, "Source row (id or index)")->required();
      s.add_option("--b", *b, "Target row (id or index)")->required();
      s.add_option("--t", *t, "Positions lo:hi:step or list")->capture_default_str();
      if (vertical) {
        s.add_option("--alpha", *alpha)->required();
        s.add_option("--mean-from", *mean_from, "Set whose mean is m (default: --in)");
      }
      s.add_option("--out", *out, "EMB1 file of interpolated vectors")->required();
      return std::function<void(Context&)>([=](Context& ctx) {
        ctx.inputs = {*in};
        const auto set = load_set(*in, Modality::other);
        const Vector va = set.row(row_by_key(set, *a)).transpose();
        const Vector vb = set.row(row_by_key(set, *b)).transpose();
        Vector mean;
        if (vertical) {
          if (!mean_from->empty()) {
            ctx.inputs.push_back(*mean_from);
            mean = detail::column_mean(load_set(*mean_from, Modality::other).data());
          } else {
            mean = detail::column_mean(set.data());
          }
        }
        const auto ts = parse_grid(*t);
        detail::require(!ts.empty(), "empty t grid");
        RowMatrix rows(static_cast<Eigen::Index>(ts.size()), va.size());
        std::vector<std::string> ids;
        for (std::size_t k = 0; k < ts.size(); ++k) {
          const double tk = std::clamp(ts[k], 0.0, 1.0);
          rows.row(static_cast<Eigen::Index>(k)) =
              (vertical ? vslerp(va, vb, tk, *alpha, mean) : slerp(va, vb, tk)).transpose();
          ids.push_back("t=" + io::format_real(tk));
        }
        std::sort(ids.begin(), ids.end());
        const bool unique = std::adjacent_find(ids.begin(), ids.end()) == ids.end();
        ids.clear();
        for (double tk : ts) ids.push_back("t=" + io::format_real(std::clamp(tk, 0.0, 1.0)));
        ctx.outputs.emb(*out, unique ? EmbeddingSet(Modality::other, std::move(rows), ids)
                                     : EmbeddingSet(Modality::other, std::move(rows)));
      });
    };
  };
  reg.add("slerp", "Spherical interpolation between two rows", interp(false));
  reg.add("vslerp", "Vertical SLERP around alpha * mean", interp(true));

  // -- synthetic data ---------------------------------------------------------
  reg.add("synth", "Seeded anisotropic Gaussian set", [](CLI::App& s) {
    auto dim = std::make_shared<std::size_t>(512);
    auto count = std::make_shared<std::size_t>(1000);
    auto seed = std::make_shared<std::uint64_t>(0);
    auto modality = std::make_shared<std::string>("other");
    auto mean = std::make_shared<std::string>();
    auto scale = std::make_shared<std::string>("1");
    auto out = std::make_shared<std::string>();
    s.add_option("--dim", *dim)->capture_default_str();
    s.add_option("--count", *count)->capture_default_str();
    s.add_option("--seed", *seed)->capture_default_str();
    s.add_option("--modality", *modality)->check(CLI::IsMember({"image", "text", "other"}))->capture_default_str();
    s.add_option("--mean", *mean, "Leading mean coordinates (rest zero)");
    s.add_option("--scale", *scale, "Per-feature std: one value or dim values")->capture_default_str();
    s.add_option("--out", *out, "EMB1 file (spec JSON written to <out>.spec.json)")->required();
    return std::function<void(Context&)>([=](Context& ctx) {
      SyntheticSpec spec;
      spec.dim = *dim;
      spec.count = *count;
      spec.seed = *seed;
      spec.modality = modality_from_string(*modality);
      spec.mean = padded_vector(*mean, *dim);
      spec.scale = scale_vector(*scale, *dim);
      ctx.outputs.emb(*out, generate_gaussian(spec));
      ctx.outputs.json(fs::path(*out + ".spec.json"), io::to_json(spec));
    });
  });

  reg.add("synth-paired", "Seeded paired sets with planted false negatives", [](CLI::App& s) {
    auto dim = std::make_shared<std::size_t>(64);
    auto count = std::make_shared<std::size_t>(200);
    auto seed = std::make_shared<std::uint64_t>(0);
    auto coupling = std::make_shared<double>(0.9);
    auto duplicates = std::make_shared<std::size_t>(0);
    auto mean_i = std::make_shared<std::string>();
    auto mean_t = std::make_shared<std::string>();
    auto scale_i = std::make_shared<std::string>("1");
    auto scale_t = std::make_shared<std::string>("1");
    auto out_i = std::make_shared<std::string>();
    auto out_t = std::make_shared<std::string>();
    s.add_option("--dim", *dim)->capture_default_str();
    s.add_option("--count", *count)->capture_default_str();
    s.add_option("--seed", *seed)->capture_default_str();
    s.add_option("--coupling", *coupling)->capture_default_str();
    s.add_option("--duplicates", *duplicates)->capture_default_str();
    s.add_option("--mean-i", *mean_i);
    s.add_option("--mean-t", *mean_t);
    s.add_option("--scale-i", *scale_i)->capture_default_str();
    s.add_option("--scale-t", *scale_t)->capture_default_str();
    s.add_option("--out-images", *out_i)->required();
    s.add_option("--out-texts", *out_t)->required();
    return std::function<void(Context&)>([=](Context& ctx) {
      SyntheticSpec si = SyntheticSpec::isotropic(*dim, *count, *seed, Modality::image);
      SyntheticSpec st = SyntheticSpec::isotropic(*dim, *count, *seed, Modality::text);
      si.mean = padded_vector(*mean_i, *dim);
      st.mean = padded_vector(*mean_t, *dim);
      si.scale = scale_vector(*scale_i, *dim);
      st.scale = scale_vector(*scale_t, *dim);
      auto p = generate_paired(si, st, *coupling, *duplicates, *seed);
      ctx.outputs.emb(*out_i, std::move(p.images));
      ctx.outputs.emb(*out_t, std::move(p.texts));
    });
  });

  reg.add("blur-demo", "Similarity-to-mean vs similarity-to-far-vector histograms", [](CLI::App& s) {
    auto dim = std::make_shared<std::size_t>(512);
    auto count = std::make_shared<std::size_t>(1000);
    auto center = std::make_shared<std::string>("10,5,5");
    auto seed = std::make_shared<std::uint64_t>(0);
    auto bins = std::make_shared<std::size_t>(kDefaultBins);
    auto out = std::make_shared<std::string>();
    auto hist_mean = std::make_shared<std::string>();
    auto hist_far = std::make_shared<std::string>();
    s.add_option("--dim", *dim)->capture_default_str();
    s.add_option("--count", *count)->capture_default_str();
    s.add_option("--center", *center, "Leading center coordinates (rest zero)")->capture_default_str();
    s.add_option("--seed", *seed)->capture_default_str();
    s.add_option("--bins", *bins)->capture_default_str();
    s.add_option("--out", *out, "JSON report")->required();
    s.add_option("--hist-mean", *hist_mean, "TSV of cos(mean, v)");
    s.add_option("--hist-far", *hist_far, "TSV of cos(v_far, v)");
    return std::function<void(Context&)>([=](Context& ctx) {
      const auto d = blur_demo(*dim, *count, padded_vector(*center, *dim), *seed, *bins);
      Json j = report_header(ctx.command, *out);
      j["mean_of_mean_sim"] = io::real(d.mean_of_mean_sim);
      j["mean_of_far_sim"] = io::real(d.mean_of_far_sim);
      j["analytic_mean_sim"] = io::real(d.analytic_mean_sim);
      j["far_index"] = d.far_index;
      j["notes"] = "mean histogram includes every vector; far histogram excludes v_far itself";
      j["hist_mean_sim"] = io::to_json(d.hist_mean_sim);
      j["hist_far_sim"] = io::to_json(d.hist_far_sim);
      ctx.outputs.json(*out, j);
      if (!hist_mean->empty()) ctx.outputs.text(*hist_mean, io::histogram_tsv(d.hist_mean_sim));
      if (!hist_far->empty()) ctx.outputs.text(*hist_far, io::histogram_tsv(d.hist_far_sim));
    });
  });
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int fail(std::ostream& err, int code, std::string_view kind, std::string message) {
  for (auto& c : message)
    if (c == '\n' || c == '\r') c = ' ';
  err << "clipgeom: error code=" << code << " kind=" << kind << " message=\"" << message << "\"\n";
  return code;
}

int run(const std::vector<std::string>& argv, std::ostream& out = std::cout,
        std::ostream& err = std::cerr);

namespace detail_cli {

inline int rerun(const fs::path& manifest, std::ostream& out, std::ostream& err) {
  Json m;
  try {
    m = Json::parse(detail::read_file_bytes(manifest));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest.string() + ": " + e.what());
  }
  try {
    for (const auto& in : m.at("inputs")) {
      const auto path = in.at("path").get<std::string>();
      if (sha256_file(path) != in.at("sha256").get<std::string>()) {
        throw FormatError("input '" + path + "' changed since the manifest was written");
      }
    }
    const auto argv = m.at("argv").get<std::vector<std::string>>();
    if (!argv.empty() && argv[0] == "rerun") throw FormatError("manifest refers to a rerun");
    return run(argv, out, err);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest.string() + ": malformed manifest: " + e.what());
  }
}

}  // namespace detail_cli

/// Runs one subcommand. argv excludes the program name.
inline int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Geometry toolkit for raw contrastive image/text embeddings", "clipgeom"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  Registry reg{app, {}};
  register_commands(reg);

  std::string manifest;
  CLI::App* rerun_cmd = app.add_subcommand("rerun", "Re-run the command recorded in a manifest");
  rerun_cmd->add_option("--manifest", manifest)->required();

  try {
    std::vector<std::string> reversed(argv.rbegin(), argv.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion& e) {
    out << kToolVersion << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    return fail(err, kUsage, "usage", e.what());
  }

  try {
    if (rerun_cmd->parsed()) return detail_cli::rerun(manifest, out, err);
    for (auto& [sub, body] : reg.commands) {
      if (!sub->parsed()) continue;
      Context ctx;
      ctx.command = sub->get_name();
      ctx.argv = argv;
      body(ctx);
      const Json m = manifest_json(ctx, *sub);
      ctx.outputs.write_all();
      detail::write_file_atomic(manifest_path_for(ctx.outputs.primary()), io::dump(m));
      return kOk;
    }
    return fail(err, kUsage, "usage", "no subcommand");
  } catch (const InvalidArgument& e) {
    return fail(err, kUsage, "invalid-argument", e.what());
  } catch (const IoError& e) {
    return fail(err, kBadFile, "io", e.what());
  } catch (const FormatError& e) {
    return fail(err, kBadFile, "format", e.what());
  } catch (const NumericError& e) {
    return fail(err, kNumeric, "numeric", e.what());
  } catch (const Error& e) {
    return fail(err, kNumeric, "error", e.what());
  } catch (const std::bad_alloc&) {
    return fail(err, kNumeric, "numeric", "out of memory");
  }
}

}  // namespace clipgeom::cli
