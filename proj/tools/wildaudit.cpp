// wildaudit: shortcut-learning audit CLI for animal re-identification.
//
// Subcommands: eval, audit, crossflank, stats, coreset, masks, loss-check,
// dedup. Every run writes its outputs plus a run_manifest.json that records
// the run hash (inputs + config) and a sha256 per output file, so reruns can
// be compared byte for byte.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 internal failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "wildaudit/common.hpp"
#include "wildaudit/coreset.hpp"
#include "wildaudit/corpus.hpp"
#include "wildaudit/diagnostics.hpp"
#include "wildaudit/geometry.hpp"
#include "wildaudit/losslab.hpp"
#include "wildaudit/masklab.hpp"
#include "wildaudit/png_io.hpp"
#include "wildaudit/retrieval.hpp"
#include "wildaudit/stats.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace wildaudit;

namespace {

struct GlobalOpts {
  std::string manifest;
  std::string out = "out";
  uint64_t seed = 0;
  double alpha = 0.05;
  int bootstrap_b = 20000;
  std::vector<int> ks{1, 5, 10};
};

std::string sanitize(const std::string& name) {
  std::string out;
  for (char c : name)
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  return out;
}

/// Collects outputs and finalizes the run manifest.
class RunRecorder {
 public:
  RunRecorder(const GlobalOpts& g, const std::string& command, json config)
      : out_dir_(g.out), command_(command), config_(std::move(config)) {
    fs::create_directories(out_dir_);
    if (!g.manifest.empty())
      input_hash_ = sha256_file(g.manifest);
  }

  fs::path path(const std::string& name) {
    files_.push_back(name);
    return fs::path(out_dir_) / name;
  }

  void write_json(const std::string& name, const json& doc) {
    std::ofstream out(path(name));
    out << doc.dump(2) << "\n";
  }

  void finalize() {
    json manifest;
    manifest["command"] = command_;
    manifest["config"] = config_;
    manifest["input_manifest_sha256"] = input_hash_;
    manifest["run_hash"] =
        sha256_hex(command_ + config_.dump() + input_hash_);
    json outputs;
    for (const auto& name : files_)
      outputs[name] = sha256_file((fs::path(out_dir_) / name).string());
    manifest["outputs"] = outputs;
    std::ofstream out(fs::path(out_dir_) / "run_manifest.json");
    out << manifest.dump(2) << "\n";
  }

 private:
  std::string out_dir_;
  std::string command_;
  json config_;
  std::string input_hash_;
  std::vector<std::string> files_;
};

json global_config(const GlobalOpts& g) {
  return json{{"seed", g.seed},
              {"alpha", g.alpha},
              {"bootstrap_b", g.bootstrap_b},
              {"ks", g.ks}};
}

geometry::ScoreMatrix score_embeddings(const corpus::EmbeddingMatrix& emb,
                                       const std::string& score_kind) {
  if (score_kind == "cosine") {
    const auto unit = corpus::l2_normalize(emb);
    return geometry::cosine_scores(unit, unit);
  }
  // exp_neg_lorentz: rows are origin tangents.
  std::vector<geometry::LorentzPoint> points;
  points.reserve(static_cast<size_t>(emb.count()));
  for (int i = 0; i < emb.count(); ++i)
    points.push_back(
        geometry::exp_map_origin(emb.data.row(i).transpose().cast<double>()));
  return geometry::exp_neg_distance_scores(points, points, emb.rows, emb.rows);
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const GlobalOpts& g, const std::vector<std::string>& models,
             const std::vector<std::string>& variants,
             const std::string& score_kind) {
  const auto corp = corpus::load_corpus(g.manifest);
  json config = global_config(g);
  config["models"] = models;
  config["variants"] = variants;
  config["score_kind"] = score_kind;
  RunRecorder rec(g, "eval", config);

  int evaluated = 0;
  for (const auto& [key, emb] : corp.embeddings) {
    if (!models.empty() &&
        std::find(models.begin(), models.end(), key.first) == models.end())
      continue;
    if (!variants.empty() &&
        std::find(variants.begin(), variants.end(),
                  corpus::to_string(key.second)) == variants.end())
      continue;
    const auto scores = score_embeddings(emb, score_kind);
    const auto result = retrieval::evaluate(scores, corp, g.ks);
    retrieval::identity_rebalance_check(result, corp);
    const std::string tag =
        sanitize(key.first) + "_" + corpus::to_string(key.second);
    retrieval::write_eval_json(result, rec.path("eval_" + tag + ".json").string());
    retrieval::write_per_query_csv(result, corp,
                                   rec.path("perquery_" + tag + ".csv").string());
    geometry::write_scores_csv(scores,
                               rec.path("submission_" + tag + ".csv").string());
    ++evaluated;
  }
  if (evaluated == 0)
    throw DataError("eval: no (model, variant) matched the selection");
  rec.finalize();
  return 0;
}

// ---------------------------------------------------------------------------
// dedup
// ---------------------------------------------------------------------------

int cmd_dedup(const GlobalOpts& g, const std::string& model,
              const std::string& variant, double threshold) {
  const auto corp = corpus::load_corpus(g.manifest);
  const auto& emb = corp.embedding(model, corpus::parse_variant(variant));
  const auto unit = corpus::l2_normalize(emb);
  const auto dups = corpus::find_near_duplicates(unit, threshold);

  json config = global_config(g);
  config["model"] = model;
  config["variant"] = variant;
  config["threshold"] = threshold;
  RunRecorder rec(g, "dedup", config);
  std::ofstream out(rec.path("duplicates.csv"));
  out << "image_id_a,image_id_b,similarity\n";
  for (const auto& d : dups)
    out << d.a << ',' << d.b << ',' << format_fixed(d.similarity, 6) << '\n';
  out.close();
  rec.finalize();
  std::cout << dups.size() << " near-duplicate pairs above " << threshold
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// audit
// ---------------------------------------------------------------------------

json correlation_block(const std::vector<double>& bgfg,
                       const std::vector<double>& mirror, int b,
                       uint64_t seed) {
  json block;
  if (bgfg.size() < 3) {
    block["reason"] = "n < 3";
    return block;
  }
  const auto corr = stats::correlate(bgfg, mirror, b, seed);
  block["n"] = corr.n;
  block["spearman_rho"] = corr.spearman_rho;
  block["spearman_p"] = corr.spearman_p;
  block["kendall_tau"] = corr.kendall_tau;
  block["kendall_p"] = corr.kendall_p;
  block["ci_rho"] = {corr.ci_rho.lo, corr.ci_rho.hi};
  block["ci_tau"] = {corr.ci_tau.lo, corr.ci_tau.hi};
  block["bootstrap_b"] = corr.b;
  block["seed"] = corr.seed;
  return block;
}

int cmd_audit_from_table(const GlobalOpts& g, const std::string& table_path) {
  std::ifstream in(table_path);
  if (!in) throw DataError("cannot open table: " + table_path);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "model,bgfg,mirror_sim")
    throw DataError("table header must be model,bgfg,mirror_sim");
  std::vector<double> bgfg, mirror;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 3) throw DataError("bad table row: " + line);
    bgfg.push_back(parse_double(trim(f[1]), table_path));
    mirror.push_back(parse_double(trim(f[2]), table_path));
  }
  json config = global_config(g);
  config["table"] = fs::path(table_path).filename().string();
  RunRecorder rec(g, "audit", config);
  json doc;
  doc["correlation"] = correlation_block(bgfg, mirror, g.bootstrap_b, g.seed);
  rec.write_json("audit.json", doc);
  rec.finalize();
  return 0;
}

json protocol_json(const diagnostics::ProtocolMetrics& m) {
  json cmc;
  for (const auto& [k, v] : m.cmc) cmc[std::to_string(k)] = v;
  return json{{"map", m.map},
              {"cmc", cmc},
              {"n_queries", m.n_queries},
              {"n_excluded", m.n_excluded}};
}

int cmd_audit(const GlobalOpts& g, const std::vector<std::string>& models) {
  const auto corp = corpus::load_corpus(g.manifest);
  json config = global_config(g);
  config["models"] = models;
  RunRecorder rec(g, "audit", config);

  std::vector<std::string> selected = models;
  if (selected.empty()) selected = corp.model_ids();

  json doc;
  doc["models"] = json::object();
  json skipped = json::array();
  std::vector<double> bgfg_col, mirror_col;
  std::ofstream table(rec.path("audit_table.csv"));
  table << "model,map,bgfg,mirror_sim,tier\n";

  for (const auto& model : selected) {
    using corpus::Variant;
    if (!corp.has_embedding(model, Variant::foreground) ||
        !corp.has_embedding(model, Variant::inpainted)) {
      skipped.push_back(json{
          {"model", model},
          {"reason", "missing required variant (foreground and inpainted)"}});
      continue;
    }
    const auto fg_unit =
        corpus::l2_normalize(corp.embedding(model, Variant::foreground));
    const auto fg_scores = geometry::cosine_scores(fg_unit, fg_unit);
    const auto fg_eval = retrieval::evaluate(fg_scores, corp, g.ks);

    auto eval_variant = [&](Variant v) {
      const auto unit = corpus::l2_normalize(corp.embedding(model, v));
      return retrieval::evaluate(geometry::cosine_scores(unit, unit), corp,
                                 g.ks);
    };
    const auto inpainted_eval = eval_variant(Variant::inpainted);
    std::optional<retrieval::EvalResult> bg_sil, sil;
    if (corp.has_embedding(model, Variant::bg_silhouette))
      bg_sil = eval_variant(Variant::bg_silhouette);
    if (corp.has_embedding(model, Variant::silhouette))
      sil = eval_variant(Variant::silhouette);
    const auto ratios =
        diagnostics::context_ratios(fg_eval, inpainted_eval, bg_sil, sil);

    json entry;
    entry["map_fg"] = fg_eval.map_macro;
    double table_map = fg_eval.map_macro;
    if (corp.has_embedding(model, Variant::full_rgb)) {
      const auto full_eval = eval_variant(Variant::full_rgb);
      entry["map_full"] = full_eval.map_macro;
      table_map = full_eval.map_macro;
    }
    entry["context"] = json{
        {"fg_map", ratios.fg_map},
        {"inpainted_map", ratios.inpainted_map},
        {"bgfg", ratios.bgfg},
        {"risk", diagnostics::to_string(ratios.risk)}};
    if (ratios.bgsilfg) entry["context"]["bgsilfg"] = *ratios.bgsilfg;
    if (ratios.silfg) entry["context"]["silfg"] = *ratios.silfg;

    std::string tier = "NA";
    double mirror_mean = std::numeric_limits<double>::quiet_NaN();
    if (corp.has_embedding(model, Variant::mirror)) {
      const auto mirror_unit =
          corpus::l2_normalize(corp.embedding(model, Variant::mirror));
      if (mirror_unit.rows != fg_unit.rows)
        throw DataError("audit: mirror rows differ from foreground for " +
                        model);
      std::map<std::string, double> self;
      for (int i = 0; i < fg_unit.count(); ++i)
        self[fg_unit.rows[static_cast<size_t>(i)]] =
            fg_unit.data.row(i).dot(mirror_unit.data.row(i));
      const auto cross = geometry::cosine_scores(mirror_unit, fg_unit);
      const auto lat = diagnostics::mirror_diagnostics(self, cross, corp);
      mirror_mean = lat.mirror_sim_mean;
      tier = diagnostics::to_string(lat.tier);

      entry["laterality"] =
          json{{"mirror_sim_mean", lat.mirror_sim_mean},
               {"mirror_sim_std", lat.mirror_sim_std},
               {"tier", tier},
               {"positive_margin_ids", lat.positive_margin_ids}};
      const auto scan = diagnostics::danger_scan(lat, corp);
      json danger_rows = json::array();
      for (const auto& row : scan.rows)
        danger_rows.push_back(json{{"identity", row.identity},
                                   {"count", row.count},
                                   {"count_positive", row.count_positive},
                                   {"mean_dm", row.mean_dm},
                                   {"max_dm", row.max_dm}});
      entry["danger_scan"] = json{{"rows", danger_rows},
                                  {"aggregate_mean", scan.aggregate_mean},
                                  {"aggregate_median", scan.aggregate_median},
                                  {"total_positive", scan.total_positive}};

      const std::string tag = sanitize(model);
      std::ofstream lat_csv(rec.path("laterality_" + tag + ".csv"));
      lat_csv << "image_id,mirror_sim,nn_sim,danger_margin\n";
      for (const auto& [id, e] : lat.per_image)
        lat_csv << id << ',' << format_g17(e.mirror_sim) << ','
                << format_g17(e.nn_sim) << ',' << format_g17(e.danger_margin)
                << '\n';

      // Auxiliary mirrored-query stress test: mirror queries vs fg gallery.
      const auto mirrored_eval = retrieval::evaluate(cross, corp, g.ks);
      const double ratio =
          diagnostics::mirrored_query_ratio(fg_eval, mirrored_eval);
      entry["mirrored_query_ratio"] = ratio;
      entry["mirror_preferred"] = ratio > 1.0;
    }

    bool has_flanks = false, has_left = false, has_right = false;
    for (const auto& r : corp.records) {
      has_left |= r.flank == corpus::Flank::left;
      has_right |= r.flank == corpus::Flank::right;
    }
    has_flanks = has_left && has_right;
    if (has_flanks) {
      const auto cf = diagnostics::cross_flank_eval(fg_scores, corp, g.ks);
      entry["crossflank"] = json{
          {"within", protocol_json(cf.within)},
          {"cross", protocol_json(cf.cross)},
          {"cross_within_ratio", cf.cross_within_ratio},
          {"discriminability", cf.discriminability}};
    }

    doc["models"][model] = entry;
    table << model << ',' << format_fixed(table_map, 6) << ','
          << format_fixed(ratios.bgfg, 6) << ','
          << (std::isnan(mirror_mean) ? "NA" : format_fixed(mirror_mean, 6))
          << ',' << tier << '\n';
    if (!std::isnan(mirror_mean)) {
      bgfg_col.push_back(ratios.bgfg);
      mirror_col.push_back(mirror_mean);
    }
  }
  table.close();

  doc["skipped"] = skipped;
  doc["correlation"] =
      correlation_block(bgfg_col, mirror_col, g.bootstrap_b, g.seed);
  rec.write_json("audit.json", doc);
  rec.finalize();
  return 0;
}

// ---------------------------------------------------------------------------
// crossflank
// ---------------------------------------------------------------------------

int cmd_crossflank(const GlobalOpts& g, const std::string& model,
                   const std::string& variant) {
  const auto corp = corpus::load_corpus(g.manifest);
  const auto unit =
      corpus::l2_normalize(corp.embedding(model, corpus::parse_variant(variant)));
  const auto scores = geometry::cosine_scores(unit, unit);
  const auto rep = diagnostics::cross_flank_eval(scores, corp, g.ks);

  json config = global_config(g);
  config["model"] = model;
  config["variant"] = variant;
  RunRecorder rec(g, "crossflank", config);
  json doc;
  doc["model"] = model;
  doc["within"] = protocol_json(rep.within);
  doc["cross"] = protocol_json(rep.cross);
  doc["cross_within_ratio"] = rep.cross_within_ratio;
  doc["discriminability"] = rep.discriminability;
  rec.write_json("crossflank_" + sanitize(model) + ".json", doc);
  rec.finalize();
  return 0;
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

int cmd_stats(const GlobalOpts& g, const std::string& pairing_path) {
  std::ifstream in(pairing_path);
  if (!in) throw DataError("cannot open pairing file: " + pairing_path);
  json pairing;
  try {
    in >> pairing;
  } catch (const std::exception& e) {
    throw DataError("pairing file parse error: " + std::string(e.what()));
  }
  const fs::path base = fs::path(pairing_path).parent_path();
  const double alpha = pairing.value("alpha", g.alpha);
  const std::vector<int> seeds = pairing.at("seeds").get<std::vector<int>>();
  const std::vector<std::string> endpoints =
      pairing.at("endpoints").get<std::vector<std::string>>();

  json config = global_config(g);
  config["pairing"] = fs::path(pairing_path).filename().string();
  config["pairing_sha256"] = sha256_file(pairing_path);
  RunRecorder rec(g, "stats", config);

  auto per_query = [&](const std::string& model, const std::string& endpoint,
                       int seed) {
    const std::string path =
        pairing.at("models").at(model).at(endpoint).at(std::to_string(seed))
            .get<std::string>();
    return retrieval::read_per_query_csv((base / path).string());
  };

  std::ofstream out(rec.path("paired_tests.csv"));
  out << "pair,endpoint";
  for (int s : seeds) out << ",p_seed" << s;
  out << ",fisher_stat,fisher_p,holm_adjusted_p,supported,note\n";

  for (const auto& pair : pairing.at("pairs")) {
    const std::string a = pair.at(0).get<std::string>();
    const std::string b = pair.at(1).get<std::string>();
    stats::PairedPipelineInput input;
    input.model_a = a;
    input.model_b = b;
    bool complete = true;
    for (const auto& endpoint : endpoints) {
      for (int seed : seeds) {
        std::map<std::string, double> qa, qb;
        try {
          qa = per_query(a, endpoint, seed);
          qb = per_query(b, endpoint, seed);
        } catch (const std::exception& e) {
          std::cerr << "warning: pair (" << a << ", " << b << ") skipped: "
                    << e.what() << "\n";
          complete = false;
          break;
        }
        std::vector<double> va, vb;
        for (const auto& [id, ap] : qa) {
          auto it = qb.find(id);
          if (it == qb.end()) {
            std::cerr << "warning: pair (" << a << ", " << b
                      << ") misaligned per-query ids at endpoint " << endpoint
                      << " seed " << seed << "\n";
            complete = false;
            break;
          }
          va.push_back(ap);
          vb.push_back(it->second);
        }
        if (!complete || va.size() != qb.size()) {
          complete = false;
          break;
        }
        input.data[endpoint][seed] = {va, vb};
      }
      if (!complete) break;
    }
    if (!complete) continue;

    const auto results = stats::paired_pipeline(input, seeds, alpha);
    for (const auto& r : results) {
      out << a << "_vs_" << b << ',' << r.endpoint;
      if (r.per_seed_p.empty()) {
        for (size_t i = 0; i < seeds.size(); ++i) out << ",";
      } else {
        for (double p : r.per_seed_p) out << ',' << format_g17(p);
      }
      out << ',' << format_g17(r.fisher_stat) << ',' << format_g17(r.fisher_p)
          << ',' << format_g17(r.holm_adjusted_p) << ','
          << (r.supported ? "true" : "false") << ',' << r.note << '\n';
      if (!r.note.empty())
        std::cerr << "warning: " << a << " vs " << b << " endpoint "
                  << r.endpoint << ": " << r.note << "\n";
    }
  }
  out.close();
  rec.finalize();
  return 0;
}

// ---------------------------------------------------------------------------
// coreset
// ---------------------------------------------------------------------------

int cmd_coreset(const GlobalOpts& g, const std::string& model,
                const std::string& variant, double target,
                double boundary_percentile) {
  const auto corp = corpus::load_corpus(g.manifest);
  const auto& emb = corp.embedding(model, corpus::parse_variant(variant));
  coreset::CoresetParams params;
  params.target_coverage = target;
  params.boundary_percentile = boundary_percentile;
  params.seed = g.seed;
  const auto sel = coreset::build_coreset(corp, emb, params);

  json config = global_config(g);
  config["model"] = model;
  config["variant"] = variant;
  config["target_coverage"] = target;
  config["boundary_percentile"] = boundary_percentile;
  RunRecorder rec(g, "coreset", config);

  std::ofstream ids(rec.path("coreset_ids.txt"));
  for (const auto& id : sel.selected) ids << id << '\n';
  ids.close();

  json doc;
  doc["coverage_ratio"] = sel.coverage_ratio;
  doc["fill_coverage_ratio"] = sel.fill_coverage_ratio;
  doc["boundary_fraction"] = sel.boundary_fraction;
  doc["selected_count"] = sel.selected.size();
  doc["per_identity_counts"] = sel.per_identity_counts;
  doc["params"] = json{{"target_coverage", target},
                       {"boundary_percentile", boundary_percentile},
                       {"seed", g.seed}};
  rec.write_json("coreset.json", doc);
  rec.finalize();
  std::cout << "selected " << sel.selected.size() << " images, coverage "
            << format_fixed(sel.coverage_ratio, 4) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// masks
// ---------------------------------------------------------------------------

int cmd_masks(const GlobalOpts& g, const std::string& images_dir,
              int threshold) {
  if (!fs::is_directory(images_dir))
    throw DataError("masks: not a directory: " + images_dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(images_dir))
    if (entry.path().extension() == ".png") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("masks: no PNG files in " + images_dir);

  json config = global_config(g);
  config["images"] = images_dir;
  config["alpha_threshold"] = threshold;
  RunRecorder rec(g, "masks", config);
  for (const char* sub : {"foreground", "silhouette", "bg_silhouette", "mirror"})
    fs::create_directories(fs::path(g.out) / sub);

  std::ofstream csv(rec.path("mask_stats.csv"));
  csv << "image_id,area,hull_area,solidity\n";
  for (const auto& file : files) {
    const std::string id = file.stem().string();
    const auto img = masklab::read_png_rgba(file.string());
    const auto vs = masklab::make_variants(img, threshold);
    const std::string name = file.filename().string();
    masklab::write_png_rgba(vs.foreground,
                            rec.path("foreground/" + name).string());
    masklab::write_png_rgba(vs.silhouette,
                            rec.path("silhouette/" + name).string());
    masklab::write_png_rgba(vs.bg_silhouette,
                            rec.path("bg_silhouette/" + name).string());
    masklab::write_png_rgba(vs.mirror, rec.path("mirror/" + name).string());
    const auto st = masklab::solidity(masklab::alpha_mask(img, threshold), id);
    csv << id << ',' << st.area << ',' << st.hull_area << ','
        << format_fixed(st.solidity, 6) << '\n';
  }
  csv.close();
  rec.finalize();
  std::cout << "processed " << files.size() << " images\n";
  return 0;
}

// ---------------------------------------------------------------------------
// loss-check
// ---------------------------------------------------------------------------

int cmd_losscheck(const GlobalOpts& g, int batches) {
  json config = global_config(g);
  config["batches"] = batches;
  RunRecorder rec(g, "loss-check", config);

  json doc = json::array();
  bool ok = true;
  for (const auto obj : losslab::all_objectives()) {
    double max_err = 0.0;
    double first_value = 0.0;
    for (int i = 0; i < batches; ++i) {
      const auto res = losslab::finite_difference_check(
          obj, g.seed + 1000003ull * static_cast<uint64_t>(i) + 1);
      if (i == 0) first_value = res.value;
      max_err = std::max(max_err, res.max_rel_err);
    }
    ok = ok && max_err < 1e-4;
    doc.push_back(json{{"objective", losslab::to_string(obj)},
                       {"batches", batches},
                       {"value_first_batch", first_value},
                       {"max_rel_err", max_err},
                       {"pass", max_err < 1e-4}});
  }
  rec.write_json("loss_check.json", doc);
  rec.finalize();
  std::cout << doc.dump(2) << "\n";
  return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"shortcut-learning audit toolkit for animal re-identification"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--manifest", g.manifest, "corpus manifest JSON");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--seed", g.seed, "deterministic seed");
  app.add_option("--alpha", g.alpha, "significance level");
  app.add_option("--bootstrap", g.bootstrap_b, "bootstrap resamples");
  app.add_option("--ks", g.ks, "CMC ranks (ascending)")->expected(-1);

  auto* eval = app.add_subcommand("eval", "query-gallery retrieval evaluation");
  std::vector<std::string> eval_models, eval_variants;
  std::string score_kind = "cosine";
  eval->add_option("--model", eval_models, "restrict to these model ids");
  eval->add_option("--variant", eval_variants, "restrict to these variants");
  eval->add_option("--score-kind", score_kind, "cosine or exp_neg_lorentz")
      ->check(CLI::IsMember({"cosine", "exp_neg_lorentz"}));

  auto* audit = app.add_subcommand("audit", "two-axis shortcut audit");
  std::vector<std::string> audit_models;
  std::string audit_table;
  audit->add_option("--model", audit_models, "restrict to these model ids");
  audit->add_option("--from-table", audit_table,
                    "compute the correlation block from a CSV "
                    "(model,bgfg,mirror_sim) instead of embeddings");

  auto* crossflank =
      app.add_subcommand("crossflank", "within- vs cross-flank retrieval");
  std::string cf_model, cf_variant = "foreground";
  crossflank->add_option("--model", cf_model, "model id")->required();
  crossflank->add_option("--variant", cf_variant, "embedding variant");

  auto* stats_cmd =
      app.add_subcommand("stats", "paired Wilcoxon-Fisher-Holm pipeline");
  std::string pairing;
  stats_cmd->add_option("--pairing", pairing, "pairing JSON file")->required();

  auto* coreset_cmd =
      app.add_subcommand("coreset", "facility-location validation coreset");
  std::string cs_model, cs_variant = "foreground";
  double cs_target = 0.95, cs_pct = 75.0;
  coreset_cmd->add_option("--model", cs_model, "model id")->required();
  coreset_cmd->add_option("--variant", cs_variant, "embedding variant");
  coreset_cmd->add_option("--target", cs_target, "coverage target");
  coreset_cmd->add_option("--boundary-percentile", cs_pct,
                          "boundary threshold percentile");

  auto* masks = app.add_subcommand("masks", "RGBA variant generation");
  std::string images_dir;
  int threshold = masklab::kAlphaThreshold;
  masks->add_option("--images", images_dir, "directory of RGBA PNGs")
      ->required();
  masks->add_option("--threshold", threshold, "alpha binarization threshold");

  auto* losscheck =
      app.add_subcommand("loss-check", "gradient checks for all objectives");
  int batches = 20;
  losscheck->add_option("--batches", batches, "seeded batches per objective");

  auto* dedup = app.add_subcommand("dedup", "near-duplicate report");
  std::string dd_model, dd_variant = "foreground";
  double dd_threshold = 0.8;
  dedup->add_option("--model", dd_model, "model id")->required();
  dedup->add_option("--variant", dd_variant, "embedding variant");
  dedup->add_option("--threshold", dd_threshold, "cosine threshold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (!std::is_sorted(g.ks.begin(), g.ks.end()) || g.ks.empty())
      throw CLI::ValidationError("--ks must be sorted ascending");
    if (g.bootstrap_b < 1000)
      throw CLI::ValidationError("--bootstrap must be >= 1000");

    if (eval->parsed()) return cmd_eval(g, eval_models, eval_variants, score_kind);
    if (audit->parsed()) {
      if (!audit_table.empty()) return cmd_audit_from_table(g, audit_table);
      return cmd_audit(g, audit_models);
    }
    if (crossflank->parsed()) return cmd_crossflank(g, cf_model, cf_variant);
    if (stats_cmd->parsed()) return cmd_stats(g, pairing);
    if (coreset_cmd->parsed())
      return cmd_coreset(g, cs_model, cs_variant, cs_target, cs_pct);
    if (masks->parsed()) return cmd_masks(g, images_dir, threshold);
    if (losscheck->parsed()) return cmd_losscheck(g, batches);
    if (dedup->parsed()) return cmd_dedup(g, dd_model, dd_variant, dd_threshold);
    return 1;
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
}
