#include "itemtok/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <regex>
#include <sstream>

#include "itemtok/cid.hpp"
#include "itemtok/embed.hpp"
#include "itemtok/error.hpp"
#include "itemtok/rng.hpp"
#include "itemtok/rqvae.hpp"

namespace itemtok {

namespace {

struct Field {
  std::string key;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::uint64_t parse_u64(const std::string& key, const std::string& s) {
  if (s.empty() || !std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); }))
    throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + s + "'");
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is out of range: '" + s + "'");
  }
}

double parse_double(const std::string& key, const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size()) throw ConfigError("config key '" + key + "' expects a number, got '" + s + "'");
  return v;
}

template <typename T>
Field size_field(std::string key, std::string help, T RunConfig::*member) {
  return {key, std::move(help), [member](const RunConfig& c) { return std::to_string(c.*member); },
          [member, key](RunConfig& c, const std::string& v) { c.*member = static_cast<T>(parse_u64(key, v)); }};
}

Field double_field(std::string key, std::string help, double RunConfig::*member) {
  return {key, std::move(help), [member](const RunConfig& c) { return format_double(c.*member); },
          [member, key](RunConfig& c, const std::string& v) { c.*member = parse_double(key, v); }};
}

Field string_field(std::string key, std::string help, std::string RunConfig::*member) {
  return {key, std::move(help), [member](const RunConfig& c) { return c.*member; },
          [member](RunConfig& c, const std::string& v) { c.*member = v; }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back(size_field("seed", "top-level seed for every random stream", &RunConfig::seed));
    f.push_back(string_field("data.interactions", "interaction file; empty uses synthetic data", &RunConfig::interactions));
    f.push_back(string_field("data.items", "item text file, required with data.interactions", &RunConfig::items));
    f.push_back(size_field("synth.users", "synthetic users", &RunConfig::synth_users));
    f.push_back(size_field("synth.items", "synthetic items", &RunConfig::synth_items));
    f.push_back(size_field("synth.clusters", "planted item clusters", &RunConfig::synth_clusters));
    f.push_back(string_field("init.method", "rqvae | rqvae+letter | cid", &RunConfig::initializer));
    f.push_back(size_field("embed.dim", "semantic embedding dimension", &RunConfig::embed_dim));
    f.push_back(size_field("rqvae.levels", "identifier length", &RunConfig::rqvae_levels));
    f.push_back(size_field("rqvae.codebook", "codewords per level", &RunConfig::rqvae_codebook));
    f.push_back(size_field("rqvae.latent", "latent dimension", &RunConfig::rqvae_latent));
    f.push_back(size_field("rqvae.hidden", "hidden units of encoder and decoder", &RunConfig::rqvae_hidden));
    f.push_back(size_field("rqvae.epochs", "quantizer training epochs", &RunConfig::rqvae_epochs));
    f.push_back(size_field("rqvae.batch", "quantizer batch size", &RunConfig::rqvae_batch));
    f.push_back(double_field("rqvae.lr", "quantizer learning rate", &RunConfig::rqvae_lr));
    f.push_back(double_field("rqvae.cf_weight", "collaborative term weight (rqvae+letter)", &RunConfig::rqvae_cf_weight));
    f.push_back(double_field("rqvae.div_weight", "diversity term weight (rqvae+letter)", &RunConfig::rqvae_div_weight));
    f.push_back(size_field("cid.branching", "children per split", &RunConfig::cid_branching));
    f.push_back(size_field("cid.threshold", "largest leaf", &RunConfig::cid_threshold));
    f.push_back(size_field("cid.depth_cap", "deepest split", &RunConfig::cid_depth_cap));
    f.push_back(size_field("model.layers", "transformer layers", &RunConfig::model_layers));
    f.push_back(size_field("model.heads", "attention heads", &RunConfig::model_heads));
    f.push_back(size_field("model.dim", "model width", &RunConfig::model_dim));
    f.push_back(size_field("model.context", "longest sequence", &RunConfig::model_context));
    f.push_back(double_field("train.lr", "AdamW learning rate", &RunConfig::train_lr));
    f.push_back(size_field("train.batch", "pairs per optimizer step", &RunConfig::train_batch));
    f.push_back(double_field("train.weight_decay", "decoupled weight decay", &RunConfig::train_weight_decay));
    f.push_back(size_field("train.warmup_epochs", "next-item epochs before refinement", &RunConfig::warmup_epochs));
    f.push_back(size_field("train.iteration_epochs", "next-item epochs per refinement iteration", &RunConfig::iteration_epochs));
    f.push_back(string_field("train.select", "valid | last: epoch kept after next-item training", &RunConfig::train_select));
    f.push_back(size_field("train.align_epochs", "alignment epochs per refinement iteration", &RunConfig::align_epochs));
    f.push_back(size_field("refine.iterations", "refinement iterations", &RunConfig::iterations));
    f.push_back(size_field("refine.candidates", "candidate identifiers per item", &RunConfig::candidates));
    f.push_back(string_field("refine.order", "perplexity | item_id", &RunConfig::assign_order));
    f.push_back(size_field("infer.beam", "inference beam width", &RunConfig::infer_beam));
    f.push_back({"eval.ks", "comma-separated cutoffs",
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.eval_ks.size(); ++i) s += (i ? "," : "") + std::to_string(c.eval_ks[i]);
                   return s;
                 },
                 [](RunConfig& c, const std::string& v) {
                   std::vector<std::size_t> ks;
                   std::stringstream ss(v);
                   for (std::string part; std::getline(ss, part, ',');) ks.push_back(parse_u64("eval.ks", part));
                   c.eval_ks = std::move(ks);
                 }});
    f.push_back(string_field("output_dir", "run directory", &RunConfig::output_dir));
    return f;
  }();
  return all;
}

const Field& field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void say(const Log& log, const std::string& msg) {
  if (log) log(msg);
}

std::string read_first_line(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  return line;
}

std::vector<ItemId> item_ids(const Catalog& catalog) {
  std::vector<ItemId> ids;
  for (const auto& item : catalog.items()) ids.push_back(item.id);
  return ids;
}

IdentifierMap read_map_checked(const std::filesystem::path& path, const std::string& hash) {
  if (!std::filesystem::exists(path)) throw ArgumentError("missing " + path.string() + "; run the earlier stages first");
  std::string found;
  auto map = read_identifier_map(path, &found);
  if (found != hash)
    throw IntegrityError(path.string() + " was produced by config " + found + ", current config is " + hash);
  return map;
}

SequenceModel read_model_checked(const std::filesystem::path& path, const std::string& hash) {
  if (!std::filesystem::exists(path)) throw ArgumentError("missing " + path.string() + "; run the earlier stages first");
  check_stamp(path, hash);
  return SequenceModel::load(path);
}

void write_config(const RunConfig& config, const RunPaths& paths) {
  std::ofstream out(paths.config());
  if (!out) throw ArgumentError("cannot write " + paths.config().string());
  out << "# config_hash=" << config.hash() << '\n' << config.canonical() << "output_dir=" << config.output_dir << '\n';
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) { field(key).set(*this, trim(value)); }

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> all = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return all;
}

std::string RunConfig::describe(const std::string& key) { return field(key).help; }

void RunConfig::validate() const {
  const auto positive = [](std::size_t v, const char* key) {
    if (v == 0) throw ConfigError(std::string(key) + " must be >= 1");
  };
  if (initializer != "rqvae" && initializer != "rqvae+letter" && initializer != "cid")
    throw ConfigError("init.method must be rqvae, rqvae+letter or cid, got '" + initializer + "'");
  if (train_select != "valid" && train_select != "last")
    throw ConfigError("train.select must be valid or last, got '" + train_select + "'");
  if (assign_order != "perplexity" && assign_order != "item_id")
    throw ConfigError("refine.order must be perplexity or item_id, got '" + assign_order + "'");
  if (interactions.empty() != items.empty()) throw ConfigError("data.interactions and data.items go together");
  if (!interactions.empty()) {
    if (!std::filesystem::exists(interactions)) throw ConfigError("data.interactions not found: " + interactions);
    if (!std::filesystem::exists(items)) throw ConfigError("data.items not found: " + items);
  } else {
    positive(synth_users, "synth.users");
    positive(synth_clusters, "synth.clusters");
    if (synth_items < synth_clusters) throw ConfigError("synth.items must be >= synth.clusters");
  }
  positive(embed_dim, "embed.dim");
  positive(rqvae_levels, "rqvae.levels");
  positive(rqvae_codebook, "rqvae.codebook");
  positive(rqvae_latent, "rqvae.latent");
  positive(rqvae_hidden, "rqvae.hidden");
  positive(rqvae_batch, "rqvae.batch");
  if (rqvae_levels >= 25) throw ConfigError("rqvae.levels must be < 25");
  if (cid_branching < 2) throw ConfigError("cid.branching must be >= 2");
  positive(cid_threshold, "cid.threshold");
  if (cid_depth_cap >= 24) throw ConfigError("cid.depth_cap must be < 24");
  positive(model_layers, "model.layers");
  positive(model_heads, "model.heads");
  positive(model_dim, "model.dim");
  if (model_dim % model_heads != 0) throw ConfigError("model.dim must be divisible by model.heads");
  positive(model_context, "model.context");
  positive(train_batch, "train.batch");
  if (!(train_lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(rqvae_lr > 0.0)) throw ConfigError("rqvae.lr must be positive");
  if (train_weight_decay < 0.0 || rqvae_cf_weight < 0.0 || rqvae_div_weight < 0.0)
    throw ConfigError("weights must be non-negative");
  positive(candidates, "refine.candidates");
  positive(infer_beam, "infer.beam");
  if (eval_ks.empty()) throw ConfigError("eval.ks must list at least one cutoff");
  for (std::size_t k : eval_ks) positive(k, "eval.ks");
}

std::string RunConfig::canonical() const {
  std::string out;
  for (const auto& f : fields()) {
    if (f.key == "output_dir") continue;
    out += f.key + "=" + f.get(*this) + "\n";
  }
  return out;
}

std::string RunConfig::hash() const {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << fnv1a(canonical());
  return ss.str();
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(path.string(), lineno, "expected key=value");
    try {
      config.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
  }
}

void apply_environment(RunConfig& config, const std::function<const char*(const char*)>& getenv_fn) {
  for (const auto& key : RunConfig::keys()) {
    std::string name = "ITEMTOK_";
    for (char c : key) name += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (const char* v = getenv_fn(name.c_str())) config.set(key, v);
  }
}

ModelConfig model_config(const RunConfig& config) {
  ModelConfig m;
  m.layers = config.model_layers;
  m.heads = config.model_heads;
  m.dim = config.model_dim;
  m.context = config.model_context;
  return m;
}

RefineConfig refine_config(const RunConfig& config) {
  RefineConfig r;
  r.iterations = config.iterations;
  r.candidates = config.candidates;
  r.order = config.assign_order == "item_id" ? AssignOrder::kItemId : AssignOrder::kPerplexity;
  r.rec.epochs = config.iteration_epochs;
  r.rec.lr = config.train_lr;
  r.rec.batch = config.train_batch;
  r.rec.weight_decay = config.train_weight_decay;
  r.align = r.rec;
  r.align.epochs = config.align_epochs;
  r.seed = derive_seed(config.seed, "refine");
  return r;
}

TrainOptions warmup_options(const RunConfig& config) {
  const auto r = refine_config(config);
  TrainOptions t = r.rec;
  t.epochs = config.warmup_epochs;
  t.seed = derive_seed(r.seed, "warmup");
  return t;
}

void write_stamp(const std::filesystem::path& file, const std::string& config_hash) {
  std::ofstream out(file.string() + ".hash");
  if (!out) throw ArgumentError("cannot write stamp for " + file.string());
  out << config_hash << '\n';
}

void check_stamp(const std::filesystem::path& file, const std::string& config_hash) {
  const std::filesystem::path stamp = file.string() + ".hash";
  if (!std::filesystem::exists(stamp)) throw IntegrityError("no config stamp for " + file.string());
  const auto found = read_first_line(stamp);
  if (found != config_hash)
    throw IntegrityError(file.string() + " was produced by config " + found + ", current config is " + config_hash);
}

std::vector<InteractionSequence> training_sequences(const std::vector<InteractionSequence>& sequences) {
  std::vector<InteractionSequence> out;
  for (const auto& s : sequences) {
    auto t = s;
    if (t.items.size() >= 3) t.items.resize(t.items.size() - 2);
    out.push_back(std::move(t));
  }
  return out;
}

LoadedData load_run_data(const RunConfig& config) {
  const RunPaths paths{config.output_dir};
  if (!std::filesystem::exists(paths.interactions())) throw ArgumentError("no dataset in " + config.output_dir + "; run init first");
  const auto hash = config.hash();
  check_stamp(paths.interactions(), hash);
  check_stamp(paths.items(), hash);
  LoadedData d;
  d.dataset = load_interactions(paths.interactions(), paths.items());
  d.split = leave_one_out_split(d.dataset.sequences);
  return d;
}

IdentifierMap cmd_init(const RunConfig& config, const Log& log) {
  config.validate();
  const RunPaths paths{config.output_dir};
  std::filesystem::create_directories(paths.root);
  const auto hash = config.hash();
  write_config(config, paths);

  Dataset raw;
  if (config.interactions.empty()) {
    SynthConfig sc;
    sc.seed = derive_seed(config.seed, "dataset");
    sc.n_users = config.synth_users;
    sc.n_items = config.synth_items;
    sc.n_clusters = config.synth_clusters;
    raw = synthesize_dataset(sc);
  } else {
    raw = load_interactions(config.interactions, config.items);
  }
  write_dataset(raw, paths.interactions(), paths.items());
  write_stamp(paths.interactions(), hash);
  write_stamp(paths.items(), hash);
  const auto data = load_run_data(config);
  const auto& catalog = data.dataset.catalog;
  say(log, "dataset: " + std::to_string(catalog.size()) + " items, " + std::to_string(data.dataset.sequences.size()) +
               " users, " + std::to_string(data.split.train.size()) + " training examples");

  const auto ids = item_ids(catalog);
  const auto embeddings = embed_catalog(catalog, config.embed_dim, derive_seed(config.seed, "embed"));
  write_embeddings(paths.embeddings(), ids, embeddings);
  write_stamp(paths.embeddings(), hash);

  const auto cooc = build_cooccurrence(catalog, training_sequences(data.dataset.sequences));
  IdentifierMap raw_map;
  std::ofstream report(paths.init_report());
  report << std::setprecision(17) << "config_hash=" << hash << '\n';
  if (config.initializer == "cid") {
    CidConfig cc;
    cc.branching = config.cid_branching;
    cc.threshold = config.cid_threshold;
    cc.depth_cap = config.cid_depth_cap;
    cc.seed = derive_seed(config.seed, "cid");
    auto res = hierarchical_tokenize(catalog, cooc, cc);
    std::ofstream tree(paths.cid_tree());
    dump_tree(tree, res.root);
    report << "depth=" << res.depth << "\nzero_degree=" << res.zero_degree << "\nfallback_splits=" << res.fallback_splits
           << '\n';
    raw_map = std::move(res.map);
  } else {
    RqvaeConfig rc;
    rc.input_dim = config.embed_dim;
    rc.hidden = config.rqvae_hidden;
    rc.latent = config.rqvae_latent;
    rc.levels = config.rqvae_levels;
    rc.codebook = config.rqvae_codebook;
    rc.epochs = config.rqvae_epochs;
    rc.batch = config.rqvae_batch;
    rc.lr = config.rqvae_lr;
    rc.seed = derive_seed(config.seed, "rqvae");
    RqvaeData rd;
    rd.x.assign(embeddings.begin(), embeddings.end());
    if (config.initializer == "rqvae+letter") {
      rc.cf_weight = config.rqvae_cf_weight;
      rc.div_weight = config.rqvae_div_weight;
      for (std::size_t i = 0; i < catalog.size(); ++i)
        rd.cf.push_back(cf_embed(cooc.row(i), rc.latent, derive_seed(config.seed, "cf")));
    }
    auto res = train_rqvae(ids, rd, rc);
    const auto& first = res.curve.front();
    const auto& last = res.curve.back();
    report << "recon_initial=" << first.recon << "\ncommit_initial=" << first.commit << "\nrecon_final=" << last.recon
           << "\ncommit_final=" << last.commit << "\nreseeded=" << res.reseeded << '\n';
    say(log, "rqvae: recon+commit " + format_double(first.recon + first.commit) + " -> " +
                 format_double(last.recon + last.commit));
    raw_map = std::move(res.map);
  }
  const double pre = collision_rate(raw_map);
  IdentifierMap map = collision_avoidance(raw_map);
  map.version = 0;
  map.check_total(catalog);
  report << "source=" << map.source << "\nbase_length=" << map.base_length << "\npre_ca_collision_rate=" << pre
         << "\npost_ca_collision_rate=" << collision_rate(map) << '\n';
  write_identifier_map(paths.map(0), map, hash);
  say(log, "init: " + map.source + " identifiers of length " + std::to_string(map.base_length) +
               ", collision rate before avoidance " + format_double(pre));
  return map;
}

std::span<const Example> selection_examples(const RunConfig& config, const LoadedData& data) {
  if (config.train_select == "last") return {};
  return data.split.valid;
}

void cmd_train(const RunConfig& config, const Log& log) {
  config.validate();
  const RunPaths paths{config.output_dir};
  const auto hash = config.hash();
  const auto data = load_run_data(config);
  const auto map = read_map_checked(paths.map(0), hash);
  SequenceModel model(model_config(config), TokenVocabulary::with_control_tokens(), derive_seed(config.seed, "model"));
  const auto history = train_rec(model, data.dataset.catalog, data.split.train, map, warmup_options(config),
                                 selection_examples(config, data));
  model.save(paths.model(0));
  write_stamp(paths.model(0), hash);
  std::ofstream report(paths.train_report());
  report << std::setprecision(17) << "config_hash=" << hash << '\n';
  for (std::size_t e = 0; e < history.epoch_loss.size(); ++e) report << "rec_loss." << e + 1 << '=' << history.epoch_loss[e] << '\n';
  for (std::size_t e = 0; e < history.valid_loss.size(); ++e)
    report << "rec_valid_loss." << e + 1 << '=' << history.valid_loss[e] << '\n';
  report << "rec_best_epoch=" << history.best_epoch << '\n';
  say(log, "train: " + std::to_string(history.epoch_loss.size()) + " epochs" +
               (history.epoch_loss.empty() ? std::string() : ", final loss " + format_double(history.epoch_loss.back())));
}

void cmd_refine(const RunConfig& config, const Log& log) {
  config.validate();
  const RunPaths paths{config.output_dir};
  const auto hash = config.hash();
  const auto data = load_run_data(config);
  std::size_t done = 0;
  for (std::size_t i = 1; i <= config.iterations; ++i) {
    if (!std::filesystem::exists(paths.model(i)) || !std::filesystem::exists(paths.map(i))) break;
    done = i;
  }
  if (done == config.iterations) {
    say(log, "refine: " + std::to_string(done) + " iterations already present");
    return;
  }
  auto model = read_model_checked(paths.model(done), hash);
  auto map = read_map_checked(paths.map(done), hash);
  auto rc = refine_config(config);
  const auto valid = selection_examples(config, data);
  rc.valid.assign(valid.begin(), valid.end());
  rc.first_iteration = done + 1;
  rc.iterations = config.iterations - done;
  run_refinement(std::move(model), std::move(map), data.dataset.catalog, data.split.train, rc, nullptr,
                 [&](const IterationReport& r, const SequenceModel& m, const IdentifierMap& next) {
                   write_identifier_map(paths.map(r.iteration), next, hash);
                   m.save(paths.model(r.iteration));
                   write_stamp(paths.model(r.iteration), hash);
                   write_iteration_report(paths.refine_report(r.iteration), r, hash);
                   write_candidates(paths.candidates(r.iteration), r);
                   say(log, "refine " + std::to_string(r.iteration) + ": adjustment ratio " +
                                format_double(r.adjustment_ratio) + ", greedy collision rate " +
                                format_double(r.greedy_collision_rate) + ", diverse collision rate " +
                                format_double(r.pre_ca_collision_rate) + ", unresolved " + std::to_string(r.unresolved));
                 });
}

std::vector<UserPrediction> cmd_infer(const RunConfig& config, std::optional<std::size_t> iteration, const Log& log) {
  config.validate();
  const std::size_t i = iteration.value_or(config.iterations);
  const RunPaths paths{config.output_dir};
  const auto hash = config.hash();
  const auto data = load_run_data(config);
  const auto model = read_model_checked(paths.model(i), hash);
  const auto map = read_map_checked(paths.map(i), hash);
  const auto trie = TrieIndex::build(map, model.vocab());
  auto predictions = recommend(model, model.vocab(), map, trie, data.split.test, config.infer_beam,
                               derive_seed(config.seed, "beam"));
  write_predictions(paths.predictions(i), predictions, hash);
  say(log, "infer: " + std::to_string(predictions.size()) + " test cases with model_" + std::to_string(i));
  return predictions;
}

MetricReport cmd_eval(const RunConfig& config, std::optional<std::size_t> iteration, const Log& log) {
  config.validate();
  const std::size_t i = iteration.value_or(config.iterations);
  const RunPaths paths{config.output_dir};
  const auto hash = config.hash();
  const auto data = load_run_data(config);
  if (!std::filesystem::exists(paths.predictions(i))) throw ArgumentError("missing " + paths.predictions(i).string() + "; run infer first");
  std::string found;
  const auto predictions = read_predictions(paths.predictions(i), &found);
  if (found != hash)
    throw IntegrityError(paths.predictions(i).string() + " was produced by config " + found + ", current config is " + hash);
  if (predictions.size() != data.split.test.size()) throw IntegrityError("predictions do not cover the test split");
  for (std::size_t c = 0; c < predictions.size(); ++c)
    if (predictions[c].user != data.split.test[c].user || predictions[c].truth != data.split.test[c].target)
      throw IntegrityError("predictions disagree with the test split at case " + std::to_string(c));
  const auto map = read_map_checked(paths.map(i), hash);
  check_stamp(paths.embeddings(), hash);
  const auto embeddings = read_embeddings(paths.embeddings());
  std::optional<IdentifierMap> previous;
  if (i > 0) previous = read_map_checked(paths.map(i - 1), hash);

  EvalInputs in;
  in.predictions = predictions;
  in.catalog = &data.dataset.catalog;
  in.map = &map;
  in.embeddings = &embeddings;
  in.previous_map = previous ? &*previous : nullptr;
  in.ks = config.eval_ks;
  auto report = evaluate(in);
  report.stamps["config_hash"] = hash;
  report.stamps["iteration"] = std::to_string(i);
  write_report(paths.metrics(i), report);
  std::ostringstream summary;
  for (const auto& [k, v] : report.values) summary << ' ' << k << '=' << std::fixed << std::setprecision(4) << v;
  say(log, "eval " + std::to_string(i) + ":" + summary.str());
  return report;
}

void cmd_report(const std::vector<std::string>& runs, std::ostream& out) {
  if (runs.empty()) throw ArgumentError("report needs at least one run directory");
  std::vector<std::pair<std::string, MetricReport>> rows;
  const std::regex metrics_name(R"(metrics_(\d+)\.txt)");
  for (const auto& spec : runs) {
    const auto colon = spec.rfind(':');
    if (colon != std::string::npos && colon + 1 < spec.size() &&
        std::all_of(spec.begin() + static_cast<std::ptrdiff_t>(colon) + 1, spec.end(),
                    [](unsigned char c) { return std::isdigit(c); })) {
      const RunPaths paths{spec.substr(0, colon)};
      rows.emplace_back(spec, read_report(paths.metrics(std::stoull(spec.substr(colon + 1)))));
      continue;
    }
    if (!std::filesystem::is_directory(spec)) throw ArgumentError("not a run directory: " + spec);
    std::vector<std::size_t> found;
    for (const auto& entry : std::filesystem::directory_iterator(spec)) {
      std::smatch m;
      const auto name = entry.path().filename().string();
      if (std::regex_match(name, m, metrics_name)) found.push_back(std::stoull(m[1]));
    }
    if (found.empty()) throw ArgumentError("no metrics in " + spec + "; run eval first");
    std::sort(found.begin(), found.end());
    const RunPaths paths{spec};
    for (std::size_t i : found) rows.emplace_back(spec + ":" + std::to_string(i), read_report(paths.metrics(i)));
  }
  render_table(out, rows);
}

}  // namespace itemtok
