// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitbench/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "splitbench/errors.hpp"
#include "splitbench/rng.hpp"

namespace splitbench {

std::string to_string(CorpusKind k) {
  switch (k) {
    case CorpusKind::SyntheticClassification: return "synthetic-classification";
    case CorpusKind::SyntheticLm: return "synthetic-lm";
    case CorpusKind::Ingested: return "ingested-text";
  }
  return "?";
}

CorpusKind parse_corpus_kind(const std::string& s) {
  for (CorpusKind k : {CorpusKind::SyntheticClassification, CorpusKind::SyntheticLm, CorpusKind::Ingested}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown task kind '" + s + "'");
}

nlohmann::json TaskSpec::to_json() const {
  nlohmann::json j = {{"kind", to_string(kind)}, {"n", n}, {"vocab", vocab},
                      {"seq_len", seq_len}, {"seed", seed}, {"aux_fraction", aux_fraction}};
  if (kind == CorpusKind::SyntheticClassification) {
    j["classes"] = classes;
    j["balance"] = balance;
  }
  if (kind == CorpusKind::Ingested) {
    j.erase("n");
    j["path"] = path;
    j["tokenizer"] = tokenizer;
    j["classification"] = classification;
    j["labels"] = labels;
  }
  return j;
}

TaskSpec TaskSpec::from_json(const nlohmann::json& j) {
  TaskSpec t;
  t.kind = parse_corpus_kind(j.at("kind").get<std::string>());
  t.n = j.value("n", t.n);
  t.classes = j.value("classes", t.classes);
  t.balance = j.value("balance", t.balance);
  t.vocab = j.value("vocab", t.vocab);
  t.seq_len = j.value("seq_len", t.seq_len);
  t.seed = j.value("seed", t.seed);
  t.aux_fraction = j.value("aux_fraction", t.aux_fraction);
  t.path = j.value("path", t.path);
  t.tokenizer = j.value("tokenizer", t.tokenizer);
  t.classification = j.value("classification", t.classification);
  t.labels = j.value("labels", t.labels);
  if (t.seq_len < 2) throw ConfigError("task.seq_len must be >= 2");
  if (t.aux_fraction < 0 || t.aux_fraction >= 1) throw ConfigError("task.aux_fraction must be in [0, 1)");
  if (t.tokenizer != "char" && t.tokenizer != "word") {
    throw ConfigError("task.tokenizer must be 'char' or 'word'");
  }
  if (t.kind == CorpusKind::SyntheticClassification) {
    if (t.classes < 2) throw ConfigError("task.classes must be >= 2");
    if (!(t.balance > 0 && t.balance < 1)) throw ConfigError("task.balance must be in (0, 1)");
    if (t.vocab < kFirstOrdinaryToken + 4 * t.classes + 8) {
      throw ConfigError("task.vocab too small for " + std::to_string(t.classes) + " classes");
    }
  }
  if (t.kind == CorpusKind::SyntheticLm && t.vocab < kFirstOrdinaryToken + 8) {
    throw ConfigError("task.vocab too small");
  }
  if (t.kind == CorpusKind::Ingested && t.path.empty()) throw ConfigError("task.path is required for ingested text");
  return t;
}

std::vector<Batch> Corpus::batches(const std::vector<Sample>& samples, std::size_t batch_size,
                                   const std::vector<std::size_t>* order) const {
  std::vector<Batch> out;
  const std::size_t n = samples.size();
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    const std::size_t end = std::min(n, begin + batch_size);
    Batch b;
    b.x.batch = end - begin;
    b.x.seq = seq_len;
    for (std::size_t i = begin; i < end; ++i) {
      const Sample& s = samples[order ? (*order)[i] : i];
      b.x.ids.insert(b.x.ids.end(), s.ids.begin(), s.ids.end());
      if (classification()) b.targets.push_back(s.label);
    }
    if (!classification()) b.targets = next_token_targets(b.x);
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<TokenBatch> Corpus::token_batches(const std::vector<Sample>& samples, std::size_t batch_size) const {
  std::vector<TokenBatch> out;
  for (Batch& b : batches(samples, batch_size)) out.push_back(std::move(b.x));
  return out;
}

namespace {

void pad_to(std::vector<std::int32_t>& ids, std::size_t len) { ids.resize(len, kPadToken); }

std::vector<Sample> synthetic_classification(const TaskSpec& t, Rng rng) {
  // Each class owns a few keyword ids; every sample carries one to three of
  // its class's keywords among uniform filler tokens.
  const int kw_per_class = 4;
  const int first_filler = kFirstOrdinaryToken + kw_per_class * t.classes;
  const std::uint64_t n_filler = static_cast<std::uint64_t>(t.vocab - first_filler);

  std::vector<std::int32_t> labels(t.n);
  const std::size_t n0 = static_cast<std::size_t>(std::llround(t.balance * static_cast<double>(t.n)));
  for (std::size_t i = 0; i < t.n; ++i) {
    labels[i] = i < n0 ? 0 : 1 + static_cast<std::int32_t>((i - n0) % static_cast<std::size_t>(t.classes - 1));
  }
  Rng lrng = rng.split("labels");
  lrng.shuffle(labels);

  std::vector<Sample> out(t.n);
  for (std::size_t i = 0; i < t.n; ++i) {
    Rng r = rng.split("sample").split(i);
    const std::size_t min_len = std::max<std::size_t>(3, t.seq_len / 2);
    const std::size_t len = min_len + r.uniform_int(t.seq_len - min_len + 1);
    Sample& s = out[i];
    s.label = labels[i];
    s.ids.push_back(kClsToken);
    for (std::size_t p = 1; p < len; ++p) s.ids.push_back(first_filler + static_cast<std::int32_t>(r.uniform_int(n_filler)));
    const std::size_t n_kw = 1 + r.uniform_int(3);
    for (std::size_t k = 0; k < n_kw; ++k) {
      const std::size_t pos = 1 + r.uniform_int(len - 1);
      s.ids[pos] = kFirstOrdinaryToken + kw_per_class * s.label + static_cast<std::int32_t>(r.uniform_int(kw_per_class));
    }
    pad_to(s.ids, t.seq_len);
  }
  return out;
}

std::vector<Sample> synthetic_lm(const TaskSpec& t, Rng rng) {
  // Sparse Markov chain: every ordinary token has two preferred successors.
  const std::uint64_t n_ord = static_cast<std::uint64_t>(t.vocab - kFirstOrdinaryToken);
  std::vector<std::array<std::int32_t, 2>> next(static_cast<std::size_t>(t.vocab));
  Rng chain = rng.split("chain");
  for (auto& pair : next) {
    for (auto& v : pair) v = kFirstOrdinaryToken + static_cast<std::int32_t>(chain.uniform_int(n_ord));
  }
  std::vector<Sample> out(t.n);
  for (std::size_t i = 0; i < t.n; ++i) {
    Rng r = rng.split("sample").split(i);
    const std::size_t min_len = std::max<std::size_t>(3, t.seq_len / 2);
    const std::size_t len = min_len + r.uniform_int(t.seq_len - min_len + 1);
    Sample& s = out[i];
    s.ids.push_back(kClsToken);
    std::int32_t cur = kFirstOrdinaryToken + static_cast<std::int32_t>(r.uniform_int(n_ord));
    s.ids.push_back(cur);
    while (s.ids.size() < len) {
      if (r.uniform() < 0.9) {
        cur = next[static_cast<std::size_t>(cur)][r.uniform_int(2)];
      } else {
        cur = kFirstOrdinaryToken + static_cast<std::int32_t>(r.uniform_int(n_ord));
      }
      s.ids.push_back(cur);
    }
    pad_to(s.ids, t.seq_len);
  }
  return out;
}

// Splits UTF-8 text into code points; returns false on malformed input.
bool utf8_units(const std::string& s, std::vector<std::string>& out) {
  for (std::size_t i = 0; i < s.size();) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    std::size_t n = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 0;
    if (n == 0 || i + n > s.size()) return false;
    for (std::size_t k = 1; k < n; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) >> 6) != 0x2) return false;
    }
    out.push_back(s.substr(i, n));
    i += n;
  }
  return true;
}

struct IngestedCorpus {
  std::vector<Sample> samples;
  int vocab_size = 0;
  std::vector<std::string> label_names;
};

IngestedCorpus ingest(const TaskSpec& t) {
  std::ifstream in(t.path, std::ios::binary);
  if (!in) throw ConfigError(t.path + ": cannot open");
  std::vector<std::pair<std::string, std::vector<std::string>>> rows;  // label, units
  std::vector<std::size_t> line_of;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::string label, text = line;
    if (t.classification) {
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw ConfigError(t.path + ":" + std::to_string(line_no) + ": missing label<TAB>text");
      label = line.substr(0, tab);
      text = line.substr(tab + 1);
      if (!t.labels.empty() && std::find(t.labels.begin(), t.labels.end(), label) == t.labels.end()) {
        throw ConfigError(t.path + ":" + std::to_string(line_no) + ": unknown label '" + label + "'");
      }
    }
    std::vector<std::string> units;
    if (t.tokenizer == "char") {
      if (!utf8_units(text, units)) throw ConfigError(t.path + ":" + std::to_string(line_no) + ": invalid UTF-8");
    } else {
      std::istringstream ws(text);
      for (std::string w; ws >> w;) units.push_back(w);
    }
    if (units.empty()) throw ConfigError(t.path + ":" + std::to_string(line_no) + ": empty sample");
    rows.emplace_back(std::move(label), std::move(units));
    line_of.push_back(line_no);
  }
  if (rows.empty()) throw ConfigError(t.path + ":" + std::to_string(std::max<std::size_t>(line_no, 1)) + ": empty file");

  IngestedCorpus out;
  if (t.classification) {
    out.label_names = t.labels;
    if (out.label_names.empty()) {
      for (const auto& r : rows) out.label_names.push_back(r.first);
      std::sort(out.label_names.begin(), out.label_names.end());
      out.label_names.erase(std::unique(out.label_names.begin(), out.label_names.end()), out.label_names.end());
    }
    if (out.label_names.size() < 2) throw ConfigError(t.path + ": need at least two labels");
  }

  // Vocabulary: most frequent units first, ties broken lexically.
  std::map<std::string, std::uint64_t> freq;
  for (const auto& r : rows) {
    for (const auto& u : r.second) ++freq[u];
  }
  std::vector<std::pair<std::string, std::uint64_t>> by_freq(freq.begin(), freq.end());
  std::stable_sort(by_freq.begin(), by_freq.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t cap = static_cast<std::size_t>(std::max(0, t.vocab - kFirstOrdinaryToken));
  if (by_freq.size() > cap) by_freq.resize(cap);
  std::map<std::string, std::int32_t> ids;
  for (std::size_t i = 0; i < by_freq.size(); ++i) ids[by_freq[i].first] = kFirstOrdinaryToken + static_cast<std::int32_t>(i);
  out.vocab_size = kFirstOrdinaryToken + static_cast<int>(by_freq.size());

  for (const auto& [label, units] : rows) {
    Sample s;
    s.ids.push_back(kClsToken);
    for (const auto& u : units) {
      if (s.ids.size() == t.seq_len) break;
      auto it = ids.find(u);
      s.ids.push_back(it == ids.end() ? kUnkToken : it->second);
    }
    pad_to(s.ids, t.seq_len);
    if (t.classification) {
      s.label = static_cast<std::int32_t>(
          std::find(out.label_names.begin(), out.label_names.end(), label) - out.label_names.begin());
    }
    out.samples.push_back(std::move(s));
  }
  return out;
}

}  // namespace

Corpus make_corpus(const TaskSpec& spec) {
  Corpus c;
  c.spec = spec;
  c.seq_len = spec.seq_len;
  Rng rng = Rng(spec.seed).split("corpus");
  std::vector<Sample> all;
  switch (spec.kind) {
    case CorpusKind::SyntheticClassification:
      all = synthetic_classification(spec, rng);
      c.vocab_size = spec.vocab;
      c.num_classes = spec.classes;
      for (int k = 0; k < spec.classes; ++k) c.label_names.push_back(std::to_string(k));
      break;
    case CorpusKind::SyntheticLm:
      all = synthetic_lm(spec, rng);
      c.vocab_size = spec.vocab;
      break;
    case CorpusKind::Ingested: {
      IngestedCorpus ic = ingest(spec);
      all = std::move(ic.samples);
      c.vocab_size = ic.vocab_size;
      c.label_names = std::move(ic.label_names);
      c.num_classes = spec.classification ? static_cast<int>(c.label_names.size()) : 0;
      break;
    }
  }

  // 80/10/10 after a seeded shuffle; the attacker's auxiliary subset is the
  // tail of the training split and is never trained on.
  std::vector<std::size_t> order(all.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split_rng = rng.split("split");
  split_rng.shuffle(order);
  const std::size_t n = all.size();
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_val = n / 10;
  const std::size_t n_aux = static_cast<std::size_t>(std::ceil(spec.aux_fraction * static_cast<double>(n_train)));
  if (n_train <= n_aux || n_val == 0 || n - n_train - n_val == 0) {
    throw ConfigError("task has too few samples (" + std::to_string(n) + ") for train/val/test/aux splits");
  }
  for (std::size_t i = 0; i < n; ++i) {
    Sample& s = all[order[i]];
    if (i < n_train - n_aux) c.train.push_back(std::move(s));
    else if (i < n_train) c.aux.push_back(std::move(s));
    else if (i < n_train + n_val) c.val.push_back(std::move(s));
    else c.test.push_back(std::move(s));
  }
  c.token_counts.assign(static_cast<std::size_t>(c.vocab_size), 0);
  for (const Sample& s : c.train) {
    for (std::int32_t id : s.ids) ++c.token_counts[static_cast<std::size_t>(id)];
  }
  return c;
}

}  // namespace splitbench
