// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitbench/records.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "splitbench/errors.hpp"
#include "splitbench/metrics.hpp"

namespace splitbench {

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> opt_get(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

std::string num(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", *v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string record_stem(const RunRecord& r) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu_", r.index);
  return buf + r.cell;
}

}  // namespace

nlohmann::json RunRecord::to_json() const {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& x : attacks) {
    a.push_back({{"kind", x.kind},
                 {"type", x.type},
                 {"phase", x.phase},
                 {"target", x.target},
                 {"ap", opt(x.ap)},
                 {"ap_ref", x.ap_ref},
                 {"dcs", opt(x.dcs)},
                 {"samples", x.samples},
                 {"failed", x.failed},
                 {"failure", x.failure}});
  }
  return {{"schema", schema},
          {"experiment", experiment},
          {"cell", cell},
          {"index", index},
          {"config_digest", config_digest},
          {"seed", seed},
          {"baseline", baseline},
          {"pipeline", pipeline},
          {"task", task},
          {"partition", partition},
          {"strategy", strategy},
          {"defenses", defenses},
          {"defense_label", defense_label},
          {"sweep_axis", sweep_axis},
          {"sweep_value", opt(sweep_value)},
          {"status", status},
          {"error", error},
          {"epochs_run", epochs_run},
          {"mp_metric", mp_metric},
          {"mp", opt(mp)},
          {"mp_ref", opt(mp_ref)},
          {"beta", beta},
          {"attacks", a},
          {"t_dcs", t_dcs},
          {"weights", weights},
          {"c_dcs", opt(c_dcs)},
          {"traffic", traffic},
          {"transcript_digest", transcript_digest},
          {"tensor_messages", tensor_messages},
          {"checkpoint", checkpoint},
          {"transcript", transcript},
          {"statistic", statistic}};
}

RunRecord RunRecord::from_json(const nlohmann::json& j) {
  RunRecord r;
  r.schema = j.at("schema").get<int>();
  if (r.schema != kRecordSchema) throw ConfigError("record schema " + std::to_string(r.schema) + " is not supported");
  r.experiment = j.at("experiment").get<std::string>();
  r.cell = j.at("cell").get<std::string>();
  r.index = j.at("index").get<std::size_t>();
  r.config_digest = j.at("config_digest").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.baseline = j.at("baseline").get<bool>();
  r.pipeline = j.at("pipeline").get<std::string>();
  r.task = j.at("task").get<std::string>();
  r.partition = j.at("partition");
  r.strategy = j.at("strategy").get<std::string>();
  r.defenses = j.at("defenses");
  r.defense_label = j.at("defense_label").get<std::string>();
  r.sweep_axis = j.at("sweep_axis").get<std::string>();
  r.sweep_value = opt_get(j, "sweep_value");
  r.status = j.at("status").get<std::string>();
  r.error = j.at("error").get<std::string>();
  r.epochs_run = j.at("epochs_run").get<int>();
  r.mp_metric = j.at("mp_metric").get<std::string>();
  r.mp = opt_get(j, "mp");
  r.mp_ref = opt_get(j, "mp_ref");
  r.beta = j.at("beta").get<double>();
  for (const auto& a : j.at("attacks")) {
    AttackOutcome x;
    x.kind = a.at("kind").get<std::string>();
    x.type = a.at("type").get<std::string>();
    x.phase = a.at("phase").get<std::string>();
    x.target = a.at("target").get<std::string>();
    x.ap = opt_get(a, "ap");
    x.ap_ref = a.at("ap_ref").get<double>();
    x.dcs = opt_get(a, "dcs");
    x.samples = a.at("samples").get<std::size_t>();
    x.failed = a.at("failed").get<bool>();
    x.failure = a.at("failure").get<std::string>();
    r.attacks.push_back(std::move(x));
  }
  r.t_dcs = j.at("t_dcs").get<std::map<std::string, double>>();
  r.weights = j.at("weights").get<std::map<std::string, double>>();
  r.c_dcs = opt_get(j, "c_dcs");
  r.traffic = j.at("traffic");
  r.transcript_digest = j.at("transcript_digest").get<std::string>();
  r.tensor_messages = j.at("tensor_messages").get<std::uint64_t>();
  r.checkpoint = j.at("checkpoint").get<std::string>();
  r.transcript = j.at("transcript").get<std::string>();
  r.statistic = j.at("statistic").get<std::string>();
  return r;
}

std::string RunRecord::dump() const { return to_json().dump(2) + "\n"; }

nlohmann::json RunTiming::to_json() const {
  return {{"mode", mode}, {"total_s", total_s}, {"session_s", session_s}, {"attack_s", attack_s}, {"traffic", traffic}};
}

void score(RunRecord& r, const std::map<std::string, double>& configured_weights) {
  r.t_dcs.clear();
  r.weights.clear();
  r.c_dcs.reset();
  std::map<std::string, std::vector<double>> by_type;
  for (auto& a : r.attacks) {
    a.dcs.reset();
    if (a.failed || !a.ap || !r.mp || !r.mp_ref) continue;
    a.dcs = dcs(*r.mp, *a.ap, *r.mp_ref, a.ap_ref, r.beta);
    by_type[a.type].push_back(*a.dcs);
  }
  for (const auto& [type, values] : by_type) r.t_dcs[type] = t_dcs(values);
  if (r.t_dcs.empty()) return;
  double total = 0.0;
  for (const auto& [type, _] : r.t_dcs) {
    const double w = configured_weights.empty() ? 1.0
                     : configured_weights.count(type) ? configured_weights.at(type) : 0.0;
    r.weights[type] = w;
    total += w;
  }
  if (!(total > 0)) {
    r.weights.clear();
    return;
  }
  std::vector<double> t, w;
  for (auto& [type, weight] : r.weights) {
    weight /= total;
    t.push_back(r.t_dcs.at(type));
    w.push_back(weight);
  }
  r.c_dcs = c_dcs(t, w);
}

void write_record(const std::filesystem::path& dir, const RunRecord& r, const RunTiming* timing) {
  std::filesystem::create_directories(dir);
  const std::string stem = record_stem(r);
  {
    std::ofstream out(dir / (stem + ".json"), std::ios::binary);
    out << r.dump();
    if (!out) throw ConfigError((dir / (stem + ".json")).string() + ": write failed");
  }
  if (timing) {
    std::ofstream out(dir / (stem + ".timing.json"), std::ios::binary);
    out << timing->to_json().dump(2) << "\n";
  }
}

std::vector<RunRecord> load_records(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError(dir.string() + ": not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && e.path().extension() == ".json" && name.find(".timing.") == std::string::npos) {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<RunRecord> out;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    try {
      out.push_back(RunRecord::from_json(nlohmann::json::parse(in)));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(f.string() + ": " + e.what());
    }
  }
  return out;
}

std::map<std::string, nlohmann::json> load_timings(const std::filesystem::path& dir) {
  std::map<std::string, nlohmann::json> out;
  if (!std::filesystem::is_directory(dir)) return out;
  const std::string suffix = ".timing.json";
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::string stem = name.substr(0, name.size() - suffix.size());
    const auto us = stem.find('_');
    if (us != std::string::npos) stem = stem.substr(us + 1);
    try {
      out[stem] = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& ex) {
      throw ConfigError(e.path().string() + ": " + ex.what());
    }
  }
  return out;
}

std::string records_csv(const std::vector<RunRecord>& records) {
  std::ostringstream os;
  os << "experiment,cell,seed,baseline,pipeline,partition,strategy,defense,sweep_axis,sweep_value,status,"
        "mp_metric,mp,mp_ref,attack,attack_type,attack_phase,ap,ap_ref,dcs,t_dcs_mia,t_dcs_lia,c_dcs,total_mb\n";
  for (const auto& r : records) {
    const std::string part = r.partition.is_object() ? r.partition.dump() : std::string();
    auto t = [&](const char* k) { return r.t_dcs.count(k) ? num(r.t_dcs.at(k)) : std::string(); };
    std::optional<double> mb;
    if (r.traffic.is_object() && r.traffic.contains("total_mb")) mb = r.traffic.at("total_mb").get<double>();
    auto row = [&](const AttackOutcome* a) {
      os << csv_field(r.experiment) << ',' << csv_field(r.cell) << ',' << r.seed << ',' << (r.baseline ? 1 : 0) << ','
         << r.pipeline << ',' << csv_field(part) << ',' << r.strategy << ',' << csv_field(r.defense_label) << ','
         << r.sweep_axis << ',' << num(r.sweep_value) << ',' << r.status << ',' << r.mp_metric << ',' << num(r.mp)
         << ',' << num(r.mp_ref) << ',' << (a ? a->kind : "") << ',' << (a ? a->type : "") << ','
         << (a ? a->phase : "") << ',' << (a ? num(a->ap) : "") << ',' << (a ? num(a->ap_ref) : "") << ','
         << (a ? num(a->dcs) : "") << ',' << t("MIA") << ',' << t("LIA") << ',' << num(r.c_dcs) << ',' << num(mb)
         << '\n';
    };
    if (r.attacks.empty()) row(nullptr);
    for (const auto& a : r.attacks) row(&a);
  }
  return os.str();
}

Stat summarize(const std::vector<double>& values) {
  Stat s;
  s.n = values.size();
  s.low_confidence = s.n == 1;
  if (s.n == 0) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

namespace {

nlohmann::json stat_json(const Stat& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"n", s.n}, {"low_confidence", s.low_confidence}};
}

}  // namespace

nlohmann::json Aggregate::to_json() const {
  nlohmann::json j = {{"defense", defense_label}, {"pipeline", pipeline},        {"partition", partition},
                      {"sweep_value", opt(sweep_value)}, {"strengths", strengths}, {"baseline", baseline},
                      {"seeds", seeds},           {"mp", stat_json(mp)},          {"failed", failed},
                      {"statistic", "mean and sample std over seeds"}};
  for (const auto& [k, s] : ap) j["ap"][k] = stat_json(s);
  for (const auto& [k, s] : dcs) j["dcs"][k] = stat_json(s);
  for (const auto& [k, s] : t_dcs) j["t_dcs"][k] = stat_json(s);
  j["c_dcs"] = c_dcs ? stat_json(*c_dcs) : nlohmann::json(nullptr);
  return j;
}

std::vector<Aggregate> aggregate(const std::vector<RunRecord>& records) {
  std::vector<Aggregate> out;
  std::map<std::string, std::size_t> slot;
  std::vector<std::vector<const RunRecord*>> members;
  for (const auto& r : records) {
    const std::string key = r.pipeline + "|" + r.partition.dump() + "|" + r.defense_label + "|" + num(r.sweep_value);
    auto it = slot.find(key);
    if (it == slot.end()) {
      it = slot.emplace(key, out.size()).first;
      Aggregate a;
      a.defense_label = r.defense_label;
      a.pipeline = r.pipeline;
      a.partition = r.partition.dump();
      a.sweep_value = r.sweep_value;
      a.baseline = r.baseline;
      for (const auto& d : r.defenses) a.strengths.push_back(d.at("strength").get<double>());
      out.push_back(std::move(a));
      members.emplace_back();
    }
    members[it->second].push_back(&r);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    Aggregate& a = out[i];
    std::vector<double> mp, c;
    std::map<std::string, std::vector<double>> ap, dc, td;
    for (const RunRecord* r : members[i]) {
      a.seeds.push_back(r->seed);
      if (r->status != "ok") {
        ++a.failed;
        continue;
      }
      if (r->mp) mp.push_back(*r->mp);
      if (r->c_dcs) c.push_back(*r->c_dcs);
      for (const auto& x : r->attacks) {
        if (x.ap) ap[x.kind].push_back(*x.ap);
        if (x.dcs) dc[x.kind].push_back(*x.dcs);
      }
      for (const auto& [k, v] : r->t_dcs) td[k].push_back(v);
    }
    a.mp = summarize(mp);
    for (const auto& [k, v] : ap) a.ap[k] = summarize(v);
    for (const auto& [k, v] : dc) a.dcs[k] = summarize(v);
    for (const auto& [k, v] : td) a.t_dcs[k] = summarize(v);
    if (!c.empty()) a.c_dcs = summarize(c);
  }
  return out;
}

}  // namespace splitbench
