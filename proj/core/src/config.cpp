#include "genrec/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "genrec/errors.hpp"

extern char** environ;

namespace genrec {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(s);
  while (std::getline(ss, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

}  // namespace

Config Config::from_string(const std::string& text) {
  Config c;
  std::istringstream ss(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) +
                        ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    c.kv_[key] = value;
  }
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return from_string(buf.str());
}

void Config::apply_env(const char* prefix) {
  const size_t plen = std::string(prefix).size();
  for (char** e = environ; e && *e; ++e) {
    std::string entry(*e);
    if (entry.rfind(prefix, 0) != 0) continue;
    size_t eq = entry.find('=');
    if (eq == std::string::npos || eq <= plen) continue;
    std::string raw = entry.substr(plen, eq - plen);
    std::string value = entry.substr(eq + 1);
    std::string key;
    for (size_t i = 0; i < raw.size(); ++i) {
      if (raw[i] == '_' && i + 1 < raw.size() && raw[i + 1] == '_') {
        key += '.';
        ++i;
      } else {
        key += static_cast<char>(
            std::tolower(static_cast<unsigned char>(raw[i])));
      }
    }
    kv_[key] = value;
  }
}

void Config::set(const std::string& key, const std::string& value) {
  kv_[key] = value;
}

bool Config::has(const std::string& key) const { return kv_.count(key) > 0; }

std::string Config::get_str(const std::string& key,
                            const std::string& dflt) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? dflt : it->second;
}

int64_t Config::get_int(const std::string& key, int64_t dflt) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return dflt;
  try {
    size_t pos = 0;
    int64_t v = std::stoll(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected integer, got '" + it->second + "'");
  }
}

double Config::get_double(const std::string& key, double dflt) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return dflt;
  try {
    size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected number, got '" + it->second + "'");
  }
}

bool Config::get_bool(const std::string& key, bool dflt) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return dflt;
  std::string v = it->second;
  std::transform(v.begin(), v.end(), v.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected boolean, got '" + it->second + "'");
}

std::vector<std::string> Config::get_list(const std::string& key,
                                          const std::string& dflt) const {
  return split_commas(get_str(key, dflt));
}

int PipelineConfig::target_index() const {
  for (size_t i = 0; i < modalities.size(); ++i)
    if (modalities[i].name == target_modality) return static_cast<int>(i);
  throw ConfigError("target modality '" + target_modality +
                    "' not in the modality list");
}

PipelineConfig parse_pipeline_config(const Config& c) {
  PipelineConfig p;
  p.interactions_path = c.get_str("data.interactions", "");
  p.out_dir = c.get_str("out.dir", "out");
  p.seed = static_cast<uint64_t>(c.get_int("seed", 0));

  for (const std::string& name : c.get_list("modalities", "collab")) {
    ModalityConfigEntry m;
    m.name = name;
    m.source = c.get_str("modality." + name + ".source",
                         name == "collab" ? "sasrec" : "file");
    if (m.source != "file" && m.source != "sasrec")
      throw ConfigError("modality." + name + ".source must be file or sasrec");
    m.embeddings_path = c.get_str("modality." + name + ".embeddings", "");
    m.use_distill = c.get_bool("modality." + name + ".distill", false);
    p.modalities.push_back(std::move(m));
  }
  p.target_modality = c.get_str("target", "collab");
  p.target_index();  // validates membership

  p.rq_levels = static_cast<int>(c.get_int("rq.levels", 2));
  p.rq_entries = static_cast<int>(c.get_int("rq.entries", 32));
  p.collision_vocab = static_cast<int>(c.get_int("rq.collision_vocab", 64));
  p.lloyd_iterations = static_cast<int>(c.get_int("rq.lloyd_iterations", 25));
  if (p.rq_levels < 1 || p.rq_entries < 1 || p.collision_vocab < 1)
    throw ConfigError("rq parameters must be positive");

  p.model.enc_layers = static_cast<int>(c.get_int("model.enc_layers", 2));
  p.model.dec_layers = static_cast<int>(c.get_int("model.dec_layers", 2));
  p.model.heads = static_cast<int>(c.get_int("model.heads", 4));
  p.model.head_dim = static_cast<int>(c.get_int("model.head_dim", 16));
  p.model.ffn = static_cast<int>(c.get_int("model.ffn", 128));
  p.model.max_history_items =
      static_cast<int>(c.get_int("model.max_history", 20));
  p.model.bins_across = static_cast<int>(c.get_int("model.bins_across", 24));
  p.model.bins_within = static_cast<int>(c.get_int("model.bins_within", 8));
  p.model.dropout = c.get_double("model.dropout", 0.1);

  p.train.epochs = static_cast<int>(c.get_int("train.epochs", 25));
  p.train.patience = static_cast<int>(c.get_int("train.patience", 3));
  p.train.batch_size = static_cast<int>(c.get_int("train.batch_size", 32));
  p.train.lr = c.get_double("train.lr", 2e-3);
  p.train.weight_decay = c.get_double("train.weight_decay", 0.0);
  p.train.masking_p = c.get_double("train.masking_p", 0.75);
  p.train.constrained = c.get_bool("train.constrained", true);
  if (p.train.masking_p < 0.0 || p.train.masking_p > 1.0)
    throw ConfigError("train.masking_p must lie in [0,1]");

  p.sasrec.dim = static_cast<int>(c.get_int("sasrec.dim", 64));
  p.sasrec.layers = static_cast<int>(c.get_int("sasrec.layers", 2));
  p.sasrec.heads = static_cast<int>(c.get_int("sasrec.heads", 2));
  p.sasrec.ffn = static_cast<int>(c.get_int("sasrec.ffn", 128));
  p.sasrec.max_len = static_cast<int>(c.get_int("sasrec.max_len", 20));
  p.sasrec.epochs = static_cast<int>(c.get_int("sasrec.epochs", 10));
  p.sasrec.batch_size = static_cast<int>(c.get_int("sasrec.batch_size", 64));
  p.sasrec.negatives = static_cast<int>(c.get_int("sasrec.negatives", 100));
  p.sasrec.max_cases_per_epoch =
      static_cast<int>(c.get_int("sasrec.max_cases", 0));
  p.sasrec.lr = c.get_double("sasrec.lr", 1e-3);
  p.sasrec.dropout = c.get_double("sasrec.dropout", 0.1);

  p.distill.teacher_momentum = c.get_double("distill.teacher_momentum", 0.996);
  p.distill.student_temp = c.get_double("distill.student_temp", 0.1);
  p.distill.teacher_temp = c.get_double("distill.teacher_temp", 0.04);
  p.distill.center_momentum = c.get_double("distill.center_momentum", 0.9);
  p.distill.hidden = static_cast<int>(c.get_int("distill.hidden", 64));
  p.distill.embed_dim = static_cast<int>(c.get_int("distill.embed_dim", 16));
  p.distill.proj_dim = static_cast<int>(c.get_int("distill.proj_dim", 32));
  p.distill.alpha1 = c.get_double("distill.alpha1", 0.0);
  p.distill.alpha2 = c.get_double("distill.alpha2", 0.1);
  p.distill.alpha3 = c.get_double("distill.alpha3", 0.01);
  p.distill.epochs = static_cast<int>(c.get_int("distill.epochs", 10));
  p.distill.batch_size = static_cast<int>(c.get_int("distill.batch_size", 32));
  p.distill.lr = c.get_double("distill.lr", 1e-3);
  p.distill.aug_sigma = c.get_double("distill.aug_sigma", 0.1);
  p.distill.rq_levels = static_cast<int>(c.get_int("distill.levels", p.rq_levels));
  p.distill.rq_entries =
      static_cast<int>(c.get_int("distill.entries", p.rq_entries));
  p.distill.rq_collision_vocab = p.collision_vocab;
  p.distill.lloyd_iterations = p.lloyd_iterations;

  std::string mode = c.get_str("split.mode", "final_only");
  if (mode == "per_prefix")
    p.split_mode = SplitMode::kPerPrefix;
  else if (mode == "final_only")
    p.split_mode = SplitMode::kFinalOnly;
  else
    throw ConfigError("split.mode must be per_prefix or final_only");

  p.beam_width = static_cast<int>(c.get_int("eval.beam_width", 20));
  p.eval_max_cases = static_cast<int>(c.get_int("eval.max_cases", 0));
  p.eval_workers = static_cast<int>(c.get_int("eval.workers", 0));
  p.metric_ks.clear();
  for (const std::string& k : c.get_list("eval.ks", "1,5,10")) {
    try {
      size_t pos = 0;
      int v = std::stoi(k, &pos);
      if (pos != k.size() || v < 1) throw std::invalid_argument(k);
      p.metric_ks.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("eval.ks: expected positive integers, got '" + k + "'");
    }
  }
  if (p.metric_ks.empty()) throw ConfigError("eval.ks must be non-empty");

  return p;
}

SyntheticSpec parse_synth_spec(const Config& c) {
  SyntheticSpec s;
  s.items = static_cast<int>(c.get_int("synth.items", 2000));
  s.clusters = static_cast<int>(c.get_int("synth.clusters", 8));
  s.hierarchy_depth = static_cast<int>(c.get_int("synth.depth", 2));
  s.branching = static_cast<int>(c.get_int("synth.branching", 4));
  s.users = static_cast<int>(c.get_int("synth.users", 5000));
  s.min_seq = static_cast<int>(c.get_int("synth.min_seq", 5));
  s.max_seq = static_cast<int>(c.get_int("synth.max_seq", 12));
  s.locality = c.get_double("synth.locality", 0.9);
  s.embed_dim = static_cast<int>(c.get_int("synth.embed_dim", 8));
  s.cluster_sep = c.get_double("synth.cluster_sep", 10.0);
  s.sub_sep = c.get_double("synth.sub_sep", 3.0);
  s.deterministic_cycle = c.get_bool("synth.deterministic_cycle", false);
  s.seed = derive_seed(static_cast<uint64_t>(c.get_int("seed", 0)), "synth");

  s.modality_names.clear();
  s.noise_scales.clear();
  for (const std::string& name : c.get_list("synth.modalities", "image")) {
    s.modality_names.push_back(name);
    s.noise_scales.push_back(
        c.get_double("synth." + name + ".noise", 0.5));
  }
  return s;
}

}  // namespace genrec
