#include "dittryon/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "dittryon/params.hpp"

namespace dittryon {

namespace {

constexpr const char* kCodeVersion = "0.1.0";

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

Tensor hash_tensor(const std::string& hex) {
  Tensor t({hex.size()});
  for (std::size_t i = 0; i < hex.size(); ++i) t[i] = static_cast<unsigned char>(hex[i]);
  return t;
}

std::string tensor_hash(const Tensor& t) {
  std::string s;
  for (double v : t.values()) s.push_back(static_cast<char>(static_cast<int>(v)));
  return s;
}

std::uint64_t id_seed(std::uint64_t seed, const std::string& id) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : id) h = (h ^ c) * 1099511628211ULL;
  return Rng::derive(seed, h);
}

const std::vector<SampleRecord>& split_records(const Dataset& ds, const std::string& split) {
  if (split == "train") return ds.train;
  if (split == "test_paired") return ds.test_paired;
  if (split == "test_unpaired") return ds.test_unpaired;
  throw ConfigError("unknown split '" + split + "'");
}

/// Test samples whose glyph lines survive the pose warp, up to `count`.
std::vector<const SampleRecord*> eval_subset(const std::vector<SampleRecord>& records, std::size_t count) {
  std::vector<const SampleRecord*> out;
  for (const SampleRecord& r : records) {
    if (out.size() == count) break;
    if (r.spec.glyph_count() == 0) continue;
    try {
      glyph_fidelity(r.person, r.person, r.spec, r.pose, r.mask);
    } catch (const ContractError&) {
      continue;
    }
    out.push_back(&r);
  }
  if (out.size() < 2) throw ConfigError("fewer than 2 glyph-bearing test samples; raise data.n");
  return out;
}

GenerateRequest request_for(const SampleRecord& r, const RunConfig& cfg, std::uint64_t seed) {
  return GenerateRequest{r.garment, r.person, r.mask, r.pose_map, caption_tokens(r, cfg), cfg.sample_steps, seed};
}

}  // namespace

MissingIdError::MissingIdError(std::vector<std::string> missing) : Error([&] {
  std::string s = "unknown ids:";
  for (const auto& id : missing) s += " " + id;
  return s;
}()), ids(std::move(missing)) {}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const CheckpointError*>(&e)) return kExitCheckpoint;
  if (dynamic_cast<const MissingIdError*>(&e)) return kExitMissingId;
  if (dynamic_cast<const IdMismatchError*>(&e)) return kExitIdMismatch;
  return kExitFailure;
}

std::filesystem::path dataset_root(const RunConfig& cfg, const std::filesystem::path& out) {
  return cfg.data_root.empty() ? out / "dataset" : std::filesystem::path(cfg.data_root);
}

FrozenModules make_frozen(const RunConfig& cfg) {
  return FrozenModules{LatentCodec(cfg.model.patch_size, cfg.model.codec_seed),
                       SemanticEncoder(cfg.model.image_size, cfg.model.sem_dim, cfg.encoder_seed)};
}

TokenIds caption_tokens(const SampleRecord& r, const RunConfig& cfg) {
  return tokenize(cfg.ablation.brief_captions ? r.caption_brief : r.caption_detailed);
}

ParamStore initial_params(const RunConfig& cfg, const Dataset& ds, const FrozenModules& frozen) {
  if (ds.image_size != cfg.model.image_size) {
    throw ConfigError("dataset images are " + std::to_string(ds.image_size) + " pixels, model expects " +
                      std::to_string(cfg.model.image_size));
  }
  if (caption_vocabulary().size() > cfg.model.vocab_size) throw ConfigError("model.vocab_size is below the caption vocabulary");
  ParamStore store;
  Rng rng(Rng::derive(cfg.seed, 0x1a17));
  init_text_params(store, cfg.model, rng);
  init_garment_params(store, cfg.model, rng);
  if (cfg.garment_prefit && cfg.prefit_steps > 0) {
    std::vector<GarmentExample> data;
    for (const SampleRecord& r : ds.train) {
      data.push_back(GarmentExample{frozen.codec.encode(r.garment, LatentOrigin::garment), caption_tokens(r, cfg)});
    }
    OptimizerConfig oc = cfg.optimizer;
    oc.lr = cfg.prefit_lr;
    prefit_garment_net(store, data, cfg.model, PrefitOptions{cfg.prefit_steps, cfg.prefit_batch, oc,
                                                             Rng::derive(cfg.seed, 0x9f17)});
  }
  init_tryon_params(store, cfg.model, rng);
  frozen.encoder.export_params(store);
  store.set("meta/config_hash", hash_tensor(cfg.model_hash()));
  store.set("meta/codec_seed", Tensor::scalar(static_cast<double>(cfg.model.codec_seed)));
  return store;
}

std::vector<TrainExample> make_examples(const std::vector<SampleRecord>& records, const ParamStore& params,
                                        const FrozenModules& frozen, const RunConfig& cfg) {
  const Variant v = cfg.ablation.variant();
  std::vector<TrainExample> out;
  out.reserve(records.size());
  for (const SampleRecord& r : records) {
    out.push_back(TrainExample{assemble_input(frozen.codec, r.person, r.mask, r.pose_map),
                               make_conditioning(params, frozen, r.garment, caption_tokens(r, cfg), v, cfg.model),
                               r.spec.glyph_count() > 0});
  }
  return out;
}

double evaluate_cfm(const ParamStore& params, const std::vector<TrainExample>& data, const RunConfig& cfg,
                    std::size_t batches, std::uint64_t seed) {
  const Variant v = cfg.ablation.variant();
  ParamStore used = params.section("tryonnet");
  used.merge(params.section("gsadapter"));
  used.merge(params.section("textembed"));
  double total = 0.0;
  for (std::size_t b = 0; b < batches; ++b) {
    const auto batch = sample_batch(data, cfg.batch, Rng::derive(seed, b));
    Tape tape;
    const BoundParams p(tape, used, {});
    const BoundParams none(tape, ParamStore{}, {});
    total += total_loss(p, none, batch, 0.0, variant_lambda(v, cfg.model), cfg.model).values.l_cfm;
  }
  return total / static_cast<double>(batches);
}

std::vector<LossBreakdown> run_training(const RunConfig& cfg, ParamStore& params,
                                        const std::vector<TrainExample>& data, std::ostream* log,
                                        const std::filesystem::path& checkpoint) {
  ParamStore baseline = params.section("tryonnet");
  baseline.merge(params.section("gsadapter"));
  Optimizer opt(cfg.optimizer);
  TrainOptions opts;
  opts.batch = cfg.batch;
  opts.lambda_pres = cfg.ablation.no_pres_loss ? 0.0 : cfg.lambda_pres;
  opts.variant = cfg.ablation.variant();
  std::vector<LossBreakdown> history;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t step = 0; step < cfg.train_steps; ++step) {
    const LossBreakdown lb = train_step(params, baseline, opt, data, opts, cfg.model, Rng::derive(cfg.seed, 0xb000 + step));
    history.push_back(lb);
    if (log) {
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      *log << nlohmann::json{{"step", step + 1}, {"l_cfm", lb.l_cfm}, {"l_pres", lb.l_pres},
                             {"l_total", lb.l_total}, {"lambda_pres", lb.lambda_pres}, {"wall_time", wall}}
                  .dump()
           << '\n';
    }
    if (!checkpoint.empty() && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
      write_checkpoint(checkpoint, params);
    }
  }
  if (!checkpoint.empty()) write_checkpoint(checkpoint, params);
  return history;
}

ParamStore load_run_checkpoint(const RunConfig& cfg, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw CheckpointError("checkpoint " + path.string() + " does not exist");
  ParamStore store = read_checkpoint(path);
  if (!store.contains("meta/config_hash")) throw CheckpointError("checkpoint carries no config hash");
  if (tensor_hash(store.get("meta/config_hash")) != cfg.model_hash()) {
    throw CheckpointError("checkpoint was trained with a different config");
  }
  return store;
}

void update_manifest(const std::filesystem::path& out, const std::string& command, nlohmann::json entry) {
  const auto path = out / "manifest.json";
  nlohmann::json m = nlohmann::json::object();
  if (std::filesystem::exists(path)) m = nlohmann::json::parse(read_file(path));
  m["code_version"] = kCodeVersion;
  m["commands"][command] = std::move(entry);
  atomic_write(path, m.dump(2) + "\n");
}

DatasetResult cmd_dataset(const RunConfig& cfg, const std::filesystem::path& out) {
  const std::string start = utc_now();
  const auto root = dataset_root(cfg, out);
  const Dataset ds = make_dataset(cfg.seed, cfg.data_n, cfg.train_split, cfg.model.image_size);
  std::filesystem::create_directories(root);
  write_dataset(root, ds);
  DatasetResult res{root, directory_hash(root)};
  update_manifest(out, "dataset", {{"config_hash", cfg.hash()}, {"start", start}, {"end", utc_now()},
                                   {"dataset", root.string()}, {"dataset_hash", res.hash}});
  return res;
}

TrainResult cmd_train(const RunConfig& cfg, const std::filesystem::path& out) {
  const std::string start = utc_now();
  const auto root = dataset_root(cfg, out);
  const Dataset ds = read_dataset(root);
  const FrozenModules frozen = make_frozen(cfg);
  ParamStore params = initial_params(cfg, ds, frozen);
  const auto data = make_examples(ds.train, params, frozen, cfg);

  std::filesystem::create_directories(out);
  TrainResult res{out / "checkpoint.tvtw", out / "train_log.jsonl", {}};
  std::ofstream log(res.log, std::ios::binary | std::ios::trunc);
  try {
    res.history = run_training(cfg, params, data, &log, res.checkpoint);
  } catch (const NonFiniteStep& e) {
    log.flush();
    atomic_write(out / "nan_dump.json",
                 nlohmann::json{{"batch_seed", e.batch_seed}, {"message", e.what()}, {"config_hash", cfg.hash()}}
                         .dump(2) +
                     "\n");
    throw;
  }
  update_manifest(out, "train", {{"config_hash", cfg.hash()}, {"start", start}, {"end", utc_now()},
                                 {"dataset_hash", directory_hash(root)}, {"checkpoint", res.checkpoint.string()},
                                 {"log", res.log.string()}, {"steps", cfg.train_steps}});
  return res;
}

std::vector<std::filesystem::path> cmd_sample(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                                              const std::vector<std::string>& ids, const std::filesystem::path& out,
                                              const std::string& split) {
  const std::string start = utc_now();
  const ParamStore params = load_run_checkpoint(cfg, checkpoint);
  const Dataset ds = read_dataset(dataset_root(cfg, out));
  const auto& records = split_records(ds, split);
  std::vector<const SampleRecord*> chosen;
  if (ids.empty()) {
    for (const auto& r : records) chosen.push_back(&r);
  } else {
    std::vector<std::string> missing;
    for (const auto& id : ids) {
      auto it = std::find_if(records.begin(), records.end(), [&](const SampleRecord& r) { return r.id == id; });
      if (it == records.end()) {
        missing.push_back(id);
      } else {
        chosen.push_back(&*it);
      }
    }
    if (!missing.empty()) throw MissingIdError(missing);
  }
  FrozenModules frozen{LatentCodec(cfg.model.patch_size, cfg.model.codec_seed),
                       SemanticEncoder::from_params(params, cfg.model.image_size)};
  const auto dir = out / "samples" / split;
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (const SampleRecord* r : chosen) {
    const ImageGrid img =
        generate(params, frozen, cfg.ablation.variant(), cfg.model, request_for(*r, cfg, id_seed(cfg.seed, r->id)));
    written.push_back(dir / (r->id + ".ppm"));
    write_pnm(written.back(), img);
  }
  update_manifest(out, "sample", {{"config_hash", cfg.hash()}, {"start", start}, {"end", utc_now()},
                                  {"checkpoint", checkpoint.string()}, {"split", split}, {"count", written.size()}});
  return written;
}

namespace {

std::set<std::string> ids_with_suffix(const std::filesystem::path& dir, const std::string& suffix) {
  if (!std::filesystem::is_directory(dir)) throw IdMismatchError("directory " + dir.string() + " does not exist");
  std::set<std::string> ids;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      ids.insert(name.substr(0, name.size() - suffix.size()));
    }
  }
  return ids;
}

}  // namespace

MetricReport cmd_eval(const RunConfig& cfg, const std::filesystem::path& generated,
                      const std::filesystem::path& reference, const std::string& setting,
                      const std::filesystem::path& out, bool csv) {
  if (setting != "paired" && setting != "unpaired") throw ConfigError("setting must be paired or unpaired");
  const auto gen_ids = ids_with_suffix(generated, ".ppm");
  const auto ref_ids = ids_with_suffix(reference, "_person.ppm");
  if (gen_ids != ref_ids || gen_ids.empty()) {
    std::string diff;
    for (const auto& id : gen_ids) {
      if (!ref_ids.count(id)) diff += " +" + id;
    }
    for (const auto& id : ref_ids) {
      if (!gen_ids.count(id)) diff += " -" + id;
    }
    throw IdMismatchError("generated and reference ids differ:" + (diff.empty() ? std::string(" (none found)") : diff));
  }
  std::map<std::string, SampleRecord> specs;
  if (std::filesystem::exists(reference.parent_path() / "specs.jsonl")) {
    const Dataset ds = read_dataset(reference.parent_path());
    for (const auto* split : {&ds.train, &ds.test_paired, &ds.test_unpaired}) {
      for (const auto& r : *split) specs[r.id] = r;
    }
  }
  const SemanticEncoder enc(cfg.model.image_size, cfg.model.sem_dim, cfg.encoder_seed);
  MetricReport rep;
  rep.setting = setting;
  rep.n = gen_ids.size();
  rep.config_hash = cfg.hash();
  std::vector<ImageGrid> gens, refs;
  for (const auto& id : gen_ids) {
    gens.push_back(read_pnm(generated / (id + ".ppm")));
    refs.push_back(read_pnm(reference / (id + "_person.ppm")));
  }
  std::ostringstream table;
  if (setting == "paired") {
    const PerceptualExtractor perc(cfg.perceptual_seed);
    double s = 0, p = 0, e = 0, g = 0;
    std::size_t ng = 0;
    table << "id,ssim,perceptual,embed_sim,glyph_fidelity\n";
    std::size_t i = 0;
    for (const auto& id : gen_ids) {
      const double si = ssim(gens[i], refs[i]), pi = perc.distance(gens[i], refs[i]);
      const double ei = embed_similarity(enc, gens[i], refs[i]);
      s += si;
      p += pi;
      e += ei;
      std::string gcell;
      auto it = specs.find(id);
      if (it != specs.end() && it->second.spec.glyph_count() > 0) {
        try {
          const double gi = glyph_fidelity(gens[i], refs[i], it->second.spec, it->second.pose, it->second.mask);
          g += gi;
          ++ng;
          gcell = std::to_string(gi);
        } catch (const ContractError&) {
        }
      }
      table << id << "," << std::setprecision(10) << si << "," << pi << "," << ei << "," << gcell << "\n";
      ++i;
    }
    const double n = static_cast<double>(rep.n);
    rep.ssim = s / n;
    rep.perceptual = p / n;
    rep.embed_sim = e / n;
    if (ng > 0) rep.glyph_fidelity = g / static_cast<double>(ng);
  } else {
    if (rep.n < 2) throw ContractError("unpaired evaluation needs at least 2 images");
    const Tensor fg = semantic_features(enc, gens), fr = semantic_features(enc, refs);
    rep.frechet = frechet_distance(fg, fr);
    rep.mmd = kid_score(fg, fr);
    table << "metric,value\nfrechet," << std::setprecision(12) << *rep.frechet << "\nkid_x100," << *rep.mmd << "\n";
  }
  rep.check_shape();
  const auto dir = out / "eval";
  std::filesystem::create_directories(dir);
  const auto report_path = dir / (setting + ".jsonl");
  std::string prior = std::filesystem::exists(report_path) ? read_file(report_path) : std::string();
  atomic_write(report_path, prior + rep.to_json().dump() + "\n");
  if (csv) atomic_write(dir / (setting + "_pairs.csv"), table.str());
  update_manifest(out, "eval_" + setting, {{"config_hash", cfg.hash()}, {"end", utc_now()},
                                           {"report", report_path.string()}});
  return rep;
}

PairedStats paired_stats(const std::vector<double>& values) {
  if (values.size() < 2) throw ContractError("paired statistics need at least 2 values");
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return PairedStats{mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

bool ordering_holds(const std::vector<double>& full, const std::vector<double>& variant) {
  if (full.size() != variant.size()) throw DimensionError("paired samples differ in count");
  std::vector<double> d(full.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = full[i] - variant[i];
  const PairedStats s = paired_stats(d);
  return s.mean >= -s.se;
}

std::vector<std::pair<std::string, AblationFlags>> ablation_variants() {
  std::vector<std::pair<std::string, AblationFlags>> v;
  v.emplace_back("full", AblationFlags{});
  AblationFlags f;
  f.no_garment_net = true;
  v.emplace_back("no_garment_net", f);
  f = {};
  f.no_adapter = true;
  v.emplace_back("no_adapter", f);
  f = {};
  f.no_semantic_encoder = true;
  v.emplace_back("no_semantic_encoder", f);
  f = {};
  f.no_pres_loss = true;
  v.emplace_back("no_pres_loss", f);
  f = {};
  f.brief_captions = true;
  v.emplace_back("brief_captions", f);
  return v;
}

AblationResult cmd_ablate(const RunConfig& base, const std::filesystem::path& out) {
  const std::string start = utc_now();
  const auto root = dataset_root(base, out);
  if (!std::filesystem::exists(root / "specs.jsonl")) cmd_dataset(base, out);
  const Dataset ds = read_dataset(root);
  const std::string data_hash = directory_hash(root);
  const FrozenModules frozen = make_frozen(base);
  const auto subset = eval_subset(ds.test_paired, base.eval_count);

  std::map<bool, ParamStore> init_cache;  // keyed by brief_captions
  AblationResult res;
  std::ostringstream csv;
  csv << "variant,glyph_mean,glyph_se,ssim_mean,ssim_se,glyph_diff_mean,glyph_diff_se,ssim_diff_mean,ssim_diff_se,"
         "glyph_order,ssim_order\n";
  nlohmann::json summary = nlohmann::json::array();
  res.glyph_pass = true;
  res.ssim_pass = true;
  auto run_variant = [&](const std::string& name, const AblationFlags& flags) {
    RunConfig cfg = base;
    cfg.ablation = flags;
    auto it = init_cache.find(flags.brief_captions);
    if (it == init_cache.end()) it = init_cache.emplace(flags.brief_captions, initial_params(cfg, ds, frozen)).first;
    ParamStore params = it->second;
    const auto data = make_examples(ds.train, params, frozen, cfg);
    const auto dir = out / "ablation" / name;
    std::filesystem::create_directories(dir);
    std::ofstream log(dir / "train_log.jsonl", std::ios::binary | std::ios::trunc);
    run_training(cfg, params, data, &log, dir / "checkpoint.tvtw");

    AblationRow row{name, {}, {}};
    for (std::size_t i = 0; i < subset.size(); ++i) {
      const SampleRecord& r = *subset[i];
      const ImageGrid img = generate(params, frozen, cfg.ablation.variant(), cfg.model,
                                     request_for(r, cfg, Rng::derive(base.seed, 0xe000 + i)));
      row.glyph.push_back(glyph_fidelity(img, r.person, r.spec, r.pose, r.mask));
      row.ssim.push_back(ssim(img, r.person));
    }
    const PairedStats g = paired_stats(row.glyph), s = paired_stats(row.ssim);
    PairedStats gd{}, sd{};
    bool go = true, so = true;
    if (!res.rows.empty()) {
      std::vector<double> dg(row.glyph.size()), ds_(row.ssim.size());
      for (std::size_t i = 0; i < dg.size(); ++i) {
        dg[i] = res.rows[0].glyph[i] - row.glyph[i];
        ds_[i] = res.rows[0].ssim[i] - row.ssim[i];
      }
      gd = paired_stats(dg);
      sd = paired_stats(ds_);
      go = gd.mean >= -gd.se;
      so = sd.mean >= -sd.se;
      res.glyph_pass = res.glyph_pass && go;
      res.ssim_pass = res.ssim_pass && so;
    }
    csv << std::setprecision(8) << name << "," << g.mean << "," << g.se << "," << s.mean << "," << s.se << ","
        << gd.mean << "," << gd.se << "," << sd.mean << "," << sd.se << "," << (go ? "PASS" : "FAIL") << ","
        << (so ? "PASS" : "FAIL") << "\n";
    summary.push_back({{"variant", name}, {"glyph_mean", g.mean}, {"glyph_se", g.se}, {"ssim_mean", s.mean},
                       {"ssim_se", s.se}, {"glyph_order", go}, {"ssim_order", so}});
    res.rows.push_back(std::move(row));
  };
  res.table = out / "ablation.csv";
  auto finish = [&](const std::string& failure) {
    atomic_write(res.table, csv.str());
    nlohmann::json entry{{"config_hash", base.hash()}, {"start", start},         {"end", utc_now()},
                         {"dataset_hash", data_hash}, {"table", res.table.string()}, {"eval_samples", subset.size()},
                         {"variants", summary},       {"glyph_order", res.glyph_pass}, {"ssim_order", res.ssim_pass}};
    if (!failure.empty()) entry["failure"] = failure;
    update_manifest(out, "ablate", entry);
  };
  for (const auto& [name, flags] : ablation_variants()) {
    try {
      run_variant(name, flags);
    } catch (const std::exception& e) {
      res.glyph_pass = false;
      res.ssim_pass = false;
      csv << name << ",,,,,,,,,FAIL,FAIL\n";
      finish(name + ": " + e.what());
      throw;
    }
  }
  finish({});
  return res;
}

std::string strip_wall_time(const std::string& log_text) {
  std::istringstream in(log_text);
  std::string out;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    j.erase("wall_time");
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace dittryon
