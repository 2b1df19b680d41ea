// nur: generate a synthetic stream, train, build the index, query, ablate.
//
// Every subcommand resolves its settings as defaults < --config file < --set
// overrides < dedicated flags, writes the result to OUT/manifest.cfg, and only
// then runs. `nur <cmd> --config OUT/manifest.cfg` reproduces the run.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "nur/nur.hpp"

namespace fs = std::filesystem;
using namespace nur;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key = value settings file (a manifest works too)");
  cmd->add_option("--set", c.sets, "override one setting, key=value (repeatable)");
  cmd->add_option("--seed", c.seed, "master seed; overrides every derived seed");
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
}

// Every key any subcommand reads, so a manifest from one step feeds the next
// and a misspelt key is an error rather than a silent default.
void check_keys(const KeyValueConfig& kv) {
  KeyValueConfig known;
  AblationConfig{}.write_to(known);
  for (const char* k : {"seed", "data.events", "data.catalog", "data.params", "data.index", "data.items",
                        "data.embeddings", "query.user", "query.features", "query.k", "eval.variants"}) {
    known.set(k, "");
  }
  for (const auto& [k, v] : kv.values()) {
    if (!known.has(k)) throw UsageError("unknown setting '" + k + "'");
  }
}

KeyValueConfig resolve(const Common& c) {
  KeyValueConfig kv;
  if (!c.config.empty()) kv = KeyValueConfig::load(c.config);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + s + "'");
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (c.seed) kv.set("seed", std::to_string(*c.seed));
  check_keys(kv);
  return kv;
}

std::optional<std::uint64_t> master_seed(const KeyValueConfig& kv) {
  if (!kv.has("seed")) return std::nullopt;
  return kv.get_num<std::uint64_t>("seed", 0);
}

fs::path prepare_out(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw DataError("cannot create output directory " + out);
  return fs::path(out);
}

void write_manifest(const fs::path& dir, const std::string& command, const KeyValueConfig& kv) {
  std::ofstream os(dir / "manifest.cfg", std::ios::binary);
  if (!os) throw DataError("cannot write " + (dir / "manifest.cfg").string());
  os << "# nur " << command << "\n" << kv.render();
}

std::string required_path(const KeyValueConfig& kv, const std::string& key, const std::string& flag) {
  auto p = kv.get(key, "");
  if (p.empty()) throw UsageError("missing input: pass " + flag + " or set " + key);
  return p;
}

// Replays the event file into a store over the catalog; returns the samples.
std::vector<TrainingSample> replay(const KeyValueConfig& kv, ItemSequenceStore& store) {
  store.register_catalog(read_catalog(required_path(kv, "data.catalog", "--catalog")));
  return ingest_all(store, read_events(required_path(kv, "data.events", "--events")));
}

ModelConfig model_config(const KeyValueConfig& kv) {
  auto mc = ModelConfig::from(kv);
  if (auto s = master_seed(kv)) mc.init_seed = *s;
  return mc;
}

HnswParams hnsw_params(const KeyValueConfig& kv) {
  HnswParams p;
  p.M = kv.get_num("index.M", p.M);
  p.ef_construction = kv.get_num("index.ef_construction", p.ef_construction);
  p.ef_search = kv.get_num("index.ef_search", p.ef_search);
  p.seed = kv.get_num("index.seed", p.seed);
  if (auto s = master_seed(kv)) p.seed = *s;
  return p;
}

void write_hnsw_params(KeyValueConfig& kv, const HnswParams& p) {
  kv.set("index.M", std::to_string(p.M));
  kv.set("index.ef_construction", std::to_string(p.ef_construction));
  kv.set("index.ef_search", std::to_string(p.ef_search));
  kv.set("index.seed", std::to_string(p.seed));
}

// --- subcommands ---

void cmd_gen(KeyValueConfig kv, const fs::path& out) {
  auto wc = WorldConfig::from(kv);
  if (auto s = master_seed(kv)) wc.seed = *s;
  wc.validate();
  wc.write_to(kv);
  write_manifest(out, "gen", kv);

  SyntheticWorld world(wc);
  write_catalog((out / "catalog.csv").string(), world.catalog());
  write_events((out / "events.csv").string(), world.generate());
  std::cerr << "wrote " << wc.num_events << " events over " << wc.items << " items to " << out.string() << "\n";
}

void cmd_train(KeyValueConfig kv, const fs::path& out) {
  const auto mc = model_config(kv);
  auto tc = TrainConfig::from(kv);
  if (auto s = master_seed(kv)) tc.shuffle_seed = *s;
  mc.write_to(kv);
  tc.write_to(kv);
  required_path(kv, "data.events", "--events");
  required_path(kv, "data.catalog", "--catalog");
  write_manifest(out, "train", kv);

  ItemSequenceStore store(mc.max_seq_len);
  auto samples = replay(kv, store);
  auto model = make_model(mc);
  std::ofstream log(out / "train_log.csv", std::ios::binary);
  if (!log) throw DataError("cannot write " + (out / "train_log.csv").string());
  auto stats = Trainer(*model, tc).fit(samples, &log);
  save_params(model->params(), (out / "params.bin").string());
  std::cerr << "trained " << stats.size() << " steps on " << samples.size() << " samples";
  if (!stats.empty()) std::cerr << ", final loss " << stats.back().total;
  std::cerr << "\n";
}

// Candidate pool: every catalog item, or the ids listed one per line in data.items.
std::vector<std::string> candidate_items(const KeyValueConfig& kv, const ItemSequenceStore& store) {
  auto path = kv.get("data.items", "");
  if (path.empty()) return store.items();
  std::ifstream is(path);
  if (!is) throw DataError("cannot read " + path);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (!store.contains(line)) throw UnknownItemError("item '" + line + "' is not in the catalog");
    ids.push_back(line);
  }
  return ids;
}

void cmd_build_index(KeyValueConfig kv, const fs::path& out) {
  const auto params = hnsw_params(kv);
  write_hnsw_params(kv, params);
  EmbeddingStore emb;
  const auto from = kv.get("data.embeddings", "");
  if (!from.empty()) {
    write_manifest(out, "build-index", kv);
    emb = read_embeddings(from);
  } else {
    const auto mc = model_config(kv);
    mc.write_to(kv);
    required_path(kv, "data.params", "--params");
    write_manifest(out, "build-index", kv);
    auto model = make_model(mc);
    load_params(model->params(), kv.get("data.params", ""));
    ItemSequenceStore store(mc.max_seq_len);
    replay(kv, store);
    emb.dim = mc.d;
    for (const auto& id : candidate_items(kv, store)) {
      emb.add(id, model->item_embedding({id, store.category(id), store.sequence(id), {}}));
    }
  }
  auto index = build_index(emb, params);
  index.save((out / "index.bin").string());
  write_embeddings((out / "embeddings.csv").string(), emb);
  std::cerr << "indexed " << index.size() << " items (d=" << emb.dim << ", max level " << index.max_level() << ")\n";
}

void cmd_query(KeyValueConfig kv, const fs::path& out) {
  const auto mc = model_config(kv);
  mc.write_to(kv);
  required_path(kv, "data.params", "--params");
  required_path(kv, "data.index", "--index");
  const auto user = required_path(kv, "query.user", "--user");
  const auto features = kv.get("query.features", "");
  const auto k = kv.get_num<std::size_t>("query.k", 10);
  kv.set("query.features", features);
  kv.set("query.k", std::to_string(k));
  const auto ef = kv.get_num<std::size_t>("index.ef_search", HnswParams{}.ef_search);
  kv.set("index.ef_search", std::to_string(ef));
  write_manifest(out, "query", kv);

  auto model = make_model(mc);
  load_params(model->params(), kv.get("data.params", ""));
  auto index = HnswIndex::load(kv.get("data.index", ""));
  if (index.dim() != mc.d) {
    throw DataError("index dimension " + std::to_string(index.dim()) + " != model d " + std::to_string(mc.d));
  }
  if (index.empty()) throw DataError("query: the index is empty");
  const auto q = model->user_embedding({user, parse_context(features)});
  char buf[64];
  for (const auto& h : index.search(q, k, std::max(ef, k))) {
    std::snprintf(buf, sizeof(buf), "%.17g", h.score);
    std::cout << h.item_id << ',' << buf << '\n';
  }
}

std::vector<int> parse_variants(const std::string& list) {
  std::vector<int> out;
  for (const auto& tok : KeyValueConfig::parse_string("v = " + list).get_list("v", {})) {
    int v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size()) throw UsageError("bad variant id '" + tok + "'");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("no variants requested");
  return out;
}

void cmd_ablate(KeyValueConfig kv, const fs::path& out) {
  auto cfg = AblationConfig::from(kv);
  if (auto s = master_seed(kv)) cfg = cfg.seeded(*s);
  const auto variants = parse_variants(kv.get("eval.variants", "0,1,2,3,4,5"));
  for (int v : variants) variant_config(cfg.model, v);
  cfg.write_to(kv);
  write_manifest(out, "ablate", kv);

  auto rows = run_ablation(variants, cfg, &std::cerr);
  std::ofstream csv(out / "report.csv", std::ios::binary);
  std::ofstream txt(out / "summary.txt", std::ios::binary);
  if (!csv || !txt) throw DataError("cannot write reports in " + out.string());
  write_report_csv(csv, rows);
  write_report_summary(txt, rows);
  write_report_summary(std::cout, rows);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Next-user retrieval: synthetic data, training, HNSW index, query, ablation"};
  app.require_subcommand(1);

  Common common;
  std::string events, catalog, params, index, items, embeddings, user, features, variants;
  std::optional<std::size_t> k;

  auto* gen = app.add_subcommand("gen", "generate a synthetic event stream and catalog");
  auto* train = app.add_subcommand("train", "train the model on an event stream");
  auto* build = app.add_subcommand("build-index", "embed candidate items and build the HNSW index");
  auto* query = app.add_subcommand("query", "retrieve the top-K items for a requesting user");
  auto* ablate = app.add_subcommand("ablate", "train and evaluate ablation variants");
  for (auto* c : {gen, train, build, query, ablate}) add_common(c, common);
  for (auto* c : {train, build}) {
    c->add_option("--events", events, "event file");
    c->add_option("--catalog", catalog, "catalog file");
  }
  for (auto* c : {build, query}) c->add_option("--params", params, "parameter snapshot");
  build->add_option("--items", items, "candidate item ids, one per line (default: whole catalog)");
  build->add_option("--embeddings", embeddings, "index a precomputed embeddings file instead");
  query->add_option("--index", index, "HNSW snapshot");
  query->add_option("--user", user, "requesting user id");
  query->add_option("--features", features, "context features, k=v;k=v");
  query->add_option("--k", k, "number of results (default 10)");
  ablate->add_option("--variants", variants, "comma-separated variant ids (0..5)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    auto kv = resolve(common);
    auto flag = [&](const std::string& key, const std::string& value) {
      if (!value.empty()) kv.set(key, value);
    };
    flag("data.events", events);
    flag("data.catalog", catalog);
    flag("data.params", params);
    flag("data.index", index);
    flag("data.items", items);
    flag("data.embeddings", embeddings);
    flag("eval.variants", variants);
    flag("query.user", user);
    flag("query.features", features);
    if (k) kv.set("query.k", std::to_string(*k));
    const auto out = prepare_out(common.out);

    if (*gen) cmd_gen(kv, out);
    if (*train) cmd_train(kv, out);
    if (*build) cmd_build_index(kv, out);
    if (*query) cmd_query(kv, out);
    if (*ablate) cmd_ablate(kv, out);
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const ContractViolation& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
}
