// Copyright 2026 The splitbench Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitbench/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "splitbench/defense.hpp"
#include "splitbench/errors.hpp"
#include "splitbench/metrics.hpp"

namespace splitbench {

std::string to_string(ReportKind k) {
  switch (k) {
    case ReportKind::MpApScatter: return "mp_ap_scatter";
    case ReportKind::DcsRanking: return "dcs_ranking";
    case ReportKind::DeltaDcsHist: return "delta_dcs_hist";
    case ReportKind::EfficiencyTable: return "efficiency_table";
  }
  return "?";
}

ReportKind parse_report_kind(const std::string& s) {
  for (ReportKind k : {ReportKind::MpApScatter, ReportKind::DcsRanking, ReportKind::DeltaDcsHist,
                       ReportKind::EfficiencyTable}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("report kind: unknown value '" + s + "'");
}

namespace {

std::string fmt(const char* f, double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v, const char* f = "%.4f") { return v ? fmt(f, *v) : "/"; }

std::string family_of(const RunRecord& r) {
  if (r.defenses.empty()) return "none";
  return r.defenses.at(0).at("kind").get<std::string>();
}

std::string parameter_of(const RunRecord& r) {
  std::string out;
  for (const auto& d : r.defenses) {
    if (!out.empty()) out += "+";
    out += fmt("%g", d.at("strength").get<double>());
  }
  return out;
}

// Records sharing one aggregate, in aggregate() order.
std::vector<const RunRecord*> representatives(const std::vector<RunRecord>& records,
                                              const std::vector<Aggregate>& aggs) {
  std::vector<const RunRecord*> out;
  for (const Aggregate& a : aggs) {
    for (const RunRecord& r : records) {
      if (r.defense_label == a.defense_label && r.pipeline == a.pipeline && r.partition.dump() == a.partition &&
          r.sweep_value == a.sweep_value) {
        out.push_back(&r);
        break;
      }
    }
  }
  return out;
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw ConfigError(p.string() + ": write failed");
}

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* colour_for(const std::string& family) {
  static const std::map<std::string, const char*> palette = {
      {"DP", "#1f77b4"},      {"SP", "#ff7f0e"}, {"SanText", "#2ca02c"}, {"CusText", "#d62728"},
      {"RanText", "#9467bd"}, {"SnD", "#8c564b"}, {"AT", "#e377c2"},     {"MID", "#17becf"},
      {"TO", "#bcbd22"}};
  auto it = palette.find(family);
  return it == palette.end() ? "#7f7f7f" : it->second;
}

}  // namespace

std::vector<RankingRow> rank_rows(std::vector<RankingRow> rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const RankingRow& a, const RankingRow& b) { return a.c_dcs > b.c_dcs; });
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].rank = static_cast<int>(i + 1);
  return rows;
}

std::vector<RankingRow> dcs_ranking(const std::vector<RunRecord>& records) {
  const auto aggs = aggregate(records);
  const auto reps = representatives(records, aggs);
  std::vector<RankingRow> rows;
  for (std::size_t i = 0; i < aggs.size(); ++i) {
    const Aggregate& a = aggs[i];
    if (a.baseline || !a.c_dcs) continue;
    RankingRow row;
    row.defense = family_of(*reps[i]);
    row.parameter = parameter_of(*reps[i]);
    if (a.t_dcs.count("LIA")) row.t_dcs_lia = a.t_dcs.at("LIA").mean;
    if (a.t_dcs.count("MIA")) row.t_dcs_mia = a.t_dcs.at("MIA").mean;
    row.c_dcs = a.c_dcs->mean;
    rows.push_back(row);
  }
  return rank_rows(std::move(rows));
}

std::string ranking_markdown(const std::vector<RankingRow>& rows) {
  std::ostringstream os;
  os << "| Defense Name | Defense Parameter | T-DCS_LIA | T-DCS_MIA | C-DCS | Ranking |\n";
  os << "|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    os << "| " << r.defense << " | " << r.parameter << " | " << fmt_opt(r.t_dcs_lia) << " | "
       << fmt_opt(r.t_dcs_mia) << " | " << fmt("%.4f", r.c_dcs) << " | " << r.rank << " |\n";
  }
  return os.str();
}

std::string ranking_csv(const std::vector<RankingRow>& rows) {
  std::ostringstream os;
  os << "defense,parameter,t_dcs_lia,t_dcs_mia,c_dcs,rank\n";
  for (const auto& r : rows) {
    os << r.defense << ',' << r.parameter << ',' << (r.t_dcs_lia ? fmt("%.10g", *r.t_dcs_lia) : "") << ','
       << (r.t_dcs_mia ? fmt("%.10g", *r.t_dcs_mia) : "") << ',' << fmt("%.10g", r.c_dcs) << ',' << r.rank << '\n';
  }
  return os.str();
}

Histogram centered_histogram(const std::vector<double>& values, double width) {
  if (!(width > 0)) throw ConfigError("histogram: width must be > 0");
  Histogram h;
  h.width = width;
  long lo = 0, hi = 0;
  for (double v : values) {
    const long k = std::lround(v / width);
    lo = std::min(lo, k);
    hi = std::max(hi, k);
  }
  h.first_edge = (static_cast<double>(lo) - 0.5) * width;
  h.counts.assign(static_cast<std::size_t>(hi - lo + 1), 0);
  h.zero_bin = static_cast<std::size_t>(-lo);
  for (double v : values) ++h.counts[static_cast<std::size_t>(std::lround(v / width) - lo)];
  return h;
}

namespace {

std::string factor_value(const RunRecord& r, const std::string& factor) {
  const nlohmann::json j = r.to_json();
  if (!j.contains(factor)) throw ConfigError("delta_dcs: records have no field '" + factor + "'");
  const auto& v = j.at(factor);
  return v.is_string() ? v.get<std::string>() : v.dump();
}

}  // namespace

DeltaDcsReport delta_dcs_report(const std::vector<RunRecord>& records, const std::string& factor,
                                const std::string& minuend) {
  DeltaDcsReport rep;
  rep.factor = factor;
  std::set<std::string> values;
  for (const auto& r : records) values.insert(factor_value(r, factor));
  if (values.size() != 2) {
    throw ConfigError("delta_dcs: need exactly two values of '" + factor + "', found " + std::to_string(values.size()));
  }
  rep.minuend = minuend.empty() ? *values.begin() : minuend;
  if (!values.count(rep.minuend)) throw ConfigError("delta_dcs: no records with " + factor + "=" + rep.minuend);
  for (const auto& v : values) {
    if (v != rep.minuend) rep.subtrahend = v;
  }

  struct Scores {
    std::string family;
    std::map<std::string, double> dcs, t_dcs;
    std::optional<double> c_dcs;
    nlohmann::json identity;
  };
  auto collect = [&](const std::string& value) {
    std::vector<RunRecord> subset;
    for (const auto& r : records) {
      if (factor_value(r, factor) == value) subset.push_back(r);
    }
    const auto aggs = aggregate(subset);
    const auto reps = representatives(subset, aggs);
    std::map<std::string, Scores> out;
    for (std::size_t i = 0; i < aggs.size(); ++i) {
      const Aggregate& a = aggs[i];
      if (a.baseline) continue;
      nlohmann::json id = {{"task", reps[i]->task},         {"pipeline", a.pipeline},
                           {"partition", a.partition},      {"strategy", reps[i]->strategy},
                           {"defense", a.defense_label},    {"sweep_value", a.sweep_value ? nlohmann::json(*a.sweep_value) : nlohmann::json()},
                           {"mp_metric", reps[i]->mp_metric}};
      id[factor] = value;
      std::string key = id.dump();
      Scores s;
      s.family = family_of(*reps[i]);
      for (const auto& [k, st] : a.dcs) s.dcs[k] = st.mean;
      for (const auto& [k, st] : a.t_dcs) s.t_dcs[k] = st.mean;
      if (a.c_dcs) s.c_dcs = a.c_dcs->mean;
      s.identity = id;
      // Pair on everything but the factor.
      nlohmann::json pair_key = id;
      pair_key.erase(factor);
      out[pair_key.dump()] = std::move(s);
    }
    return out;
  };
  const auto a = collect(rep.minuend);
  const auto b = collect(rep.subtrahend);

  struct Acc {
    std::vector<double> c, mia, lia;
  };
  std::map<std::string, Acc> fam;
  Acc overall;
  for (const auto& [key, sa] : a) {
    auto it = b.find(key);
    if (it == b.end()) continue;
    const Scores& sb = it->second;
    for (const auto& [kind, da] : sa.dcs) {
      if (!sb.dcs.count(kind)) continue;
      rep.deltas.push_back(delta_dcs(da, sa.identity, sb.dcs.at(kind), sb.identity, factor));
    }
    Acc& f = fam[sa.family];
    if (sa.c_dcs && sb.c_dcs) {
      f.c.push_back(*sa.c_dcs - *sb.c_dcs);
      overall.c.push_back(f.c.back());
    }
    if (sa.t_dcs.count("MIA") && sb.t_dcs.count("MIA")) {
      f.mia.push_back(sa.t_dcs.at("MIA") - sb.t_dcs.at("MIA"));
      overall.mia.push_back(f.mia.back());
    }
    if (sa.t_dcs.count("LIA") && sb.t_dcs.count("LIA")) {
      f.lia.push_back(sa.t_dcs.at("LIA") - sb.t_dcs.at("LIA"));
      overall.lia.push_back(f.lia.back());
    }
  }
  if (rep.deltas.empty()) throw ConfigError("delta_dcs: no configuration appears under both values of " + factor);
  auto mean = [](const std::vector<double>& v) -> std::optional<double> {
    if (v.empty()) return std::nullopt;
    return summarize(v).mean;
  };
  rep.families.push_back({"Overall", mean(overall.c), mean(overall.mia), mean(overall.lia)});
  for (const auto& [name, f] : fam) rep.families.push_back({name, mean(f.c), mean(f.mia), mean(f.lia)});
  return rep;
}

std::string mp_ap_scatter_svg(const std::vector<RunRecord>& records, const std::string& attack_kind) {
  if (records.empty()) throw ConfigError("scatter: no records");
  const RunRecord& r0 = records.front();
  const bool n_head_sweep = r0.sweep_axis == "n_head";
  for (const auto& r : records) {
    auto bad = [&](const std::string& what) {
      throw ConfigError("scatter: records are not comparable (" + what + " differs: " + r0.cell + " vs " + r.cell + ")");
    };
    if (r.task != r0.task) bad("task");
    if (r.pipeline != r0.pipeline) bad("pipeline");
    if (r.strategy != r0.strategy) bad("strategy");
    if (r.mp_metric != r0.mp_metric) bad("MP metric");
    if ((r.sweep_axis == "n_head") != n_head_sweep) bad("sweep axis");
    if (!n_head_sweep && r.partition != r0.partition) bad("partition");
  }

  const auto aggs = aggregate(records);
  const auto reps = representatives(records, aggs);
  struct Dot {
    double mp, ap;
    std::string family, label;
    double size_rank;  // 0 weakest .. 1 strongest
    bool baseline;
  };
  std::vector<Dot> dots;
  std::set<double> heads;
  for (const auto& a : aggs) {
    if (a.sweep_value) heads.insert(*a.sweep_value);
  }
  std::size_t max_seeds = 0;
  for (std::size_t i = 0; i < aggs.size(); ++i) {
    const Aggregate& a = aggs[i];
    if (!a.ap.count(attack_kind) || a.mp.n == 0) continue;
    Dot d{a.mp.mean, a.ap.at(attack_kind).mean, family_of(*reps[i]), a.defense_label, 0.5, a.baseline};
    max_seeds = std::max(max_seeds, a.mp.n);
    if (n_head_sweep && a.sweep_value && heads.size() > 1) {
      const auto pos = std::distance(heads.begin(), heads.find(*a.sweep_value));
      d.size_rank = static_cast<double>(pos) / static_cast<double>(heads.size() - 1);
      d.label += " n_head=" + fmt("%g", *a.sweep_value);
    } else if (!a.baseline && !a.strengths.empty()) {
      const auto grid = strength_grid(parse_defense_kind(d.family));
      auto it = std::find(grid.begin(), grid.end(), a.strengths.front());
      if (it != grid.end() && grid.size() > 1) {
        d.size_rank = static_cast<double>(it - grid.begin()) / static_cast<double>(grid.size() - 1);
      }
    }
    dots.push_back(d);
  }
  if (dots.empty()) throw ConfigError("scatter: no records carry attack " + attack_kind);

  const double W = 520, H = 420, L = 60, R = 130, T = 40, B = 50;
  const double pw = W - L - R, ph = H - T - B;
  auto X = [&](double mp) { return L + std::clamp(mp, 0.0, 1.0) * pw; };
  auto Y = [&](double ap) { return T + (1.0 - std::clamp(ap, 0.0, 1.0)) * ph; };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << " " << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << L << "\" y=\"20\" font-size=\"13\">" << svg_escape(attack_kind)
     << " (mean over " << max_seeds << " seed" << (max_seeds == 1 ? "" : "s") << ")</text>\n";
  os << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double v = i / 5.0;
    os << "<line x1=\"" << fmt("%.2f", X(v)) << "\" y1=\"" << T + ph << "\" x2=\"" << fmt("%.2f", X(v)) << "\" y2=\""
       << T + ph + 4 << "\" stroke=\"black\"/>";
    os << "<text x=\"" << fmt("%.2f", X(v)) << "\" y=\"" << T + ph + 16 << "\" text-anchor=\"middle\">"
       << fmt("%.1f", v) << "</text>\n";
    os << "<line x1=\"" << L - 4 << "\" y1=\"" << fmt("%.2f", Y(v)) << "\" x2=\"" << L << "\" y2=\""
       << fmt("%.2f", Y(v)) << "\" stroke=\"black\"/>";
    os << "<text x=\"" << L - 7 << "\" y=\"" << fmt("%.2f", Y(v) + 4) << "\" text-anchor=\"end\">" << fmt("%.1f", v)
       << "</text>\n";
  }
  os << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">MP ("
     << svg_escape(r0.mp_metric) << ")</text>\n";
  os << "<text x=\"15\" y=\"" << T + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 15 " << T + ph / 2
     << ")\">AP</text>\n";
  std::vector<std::string> legend;
  for (const Dot& d : dots) {
    const double cx = X(d.mp), cy = Y(d.ap);
    if (d.baseline) {
      os << "<rect x=\"" << fmt("%.2f", cx - 4) << "\" y=\"" << fmt("%.2f", cy - 4)
         << "\" width=\"8\" height=\"8\" fill=\"black\"><title>" << svg_escape(d.label) << "</title></rect>\n";
    } else {
      const double radius = 3.0 + 6.0 * d.size_rank;
      os << "<circle cx=\"" << fmt("%.2f", cx) << "\" cy=\"" << fmt("%.2f", cy) << "\" r=\"" << fmt("%.2f", radius)
         << "\" fill=\"" << colour_for(d.family) << "\" fill-opacity=\"0.75\"><title>" << svg_escape(d.label)
         << "</title></circle>\n";
    }
    const std::string entry = d.baseline ? "no defense" : d.family;
    if (std::find(legend.begin(), legend.end(), entry) == legend.end()) legend.push_back(entry);
  }
  for (std::size_t i = 0; i < legend.size(); ++i) {
    const double y = T + 10 + 16.0 * static_cast<double>(i);
    const double x = L + pw + 15;
    if (legend[i] == "no defense") {
      os << "<rect x=\"" << x - 4 << "\" y=\"" << y - 4 << "\" width=\"8\" height=\"8\" fill=\"black\"/>";
    } else {
      os << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"5\" fill=\"" << colour_for(legend[i]) << "\"/>";
    }
    os << "<text x=\"" << x + 10 << "\" y=\"" << y + 4 << "\">" << svg_escape(legend[i]) << "</text>\n";
  }
  os << "<text x=\"" << L + pw + 5 << "\" y=\"" << T + ph << "\" font-size=\"9\">size: "
     << (n_head_sweep ? "n_head" : "defense strength") << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::vector<EfficiencyRow> efficiency_rows(const std::vector<RunRecord>& records,
                                           const std::map<std::string, nlohmann::json>& timings) {
  struct Acc {
    std::vector<double> tput, kbt, mb;
  };
  std::vector<std::pair<std::pair<std::string, std::string>, Acc>> groups;
  for (const auto& r : records) {
    if (r.status != "ok" || !r.traffic.is_object()) continue;
    std::string mode = "unknown";
    std::optional<double> tput;
    auto t = timings.find(r.cell);
    if (t != timings.end()) {
      mode = t->second.value("mode", mode);
      const auto& tr = t->second.at("traffic");
      if (tr.contains("throughput_tokens_per_s") && !tr.at("throughput_tokens_per_s").is_null()) {
        tput = tr.at("throughput_tokens_per_s").get<double>();
      }
    }
    std::string label = r.experiment + " " + r.defense_label;
    if (r.sweep_value) label += " @" + fmt("%g", *r.sweep_value);
    auto key = std::make_pair(label, mode);
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == key; });
    if (it == groups.end()) {
      groups.push_back({key, {}});
      it = groups.end() - 1;
    }
    if (tput) it->second.tput.push_back(*tput);
    if (r.traffic.contains("kb_per_token") && !r.traffic.at("kb_per_token").is_null()) {
      it->second.kbt.push_back(r.traffic.at("kb_per_token").get<double>());
    }
    it->second.mb.push_back(r.traffic.at("total_mb").get<double>());
  }
  std::vector<EfficiencyRow> rows;
  for (const auto& [key, acc] : groups) {
    EfficiencyRow row;
    row.label = key.first;
    row.mode = key.second;
    if (!acc.tput.empty()) row.throughput = summarize(acc.tput).mean;
    if (!acc.kbt.empty()) row.kb_per_token = summarize(acc.kbt).mean;
    row.total_mb = summarize(acc.mb).mean;
    rows.push_back(row);
  }
  return rows;
}

std::string efficiency_markdown(const std::vector<EfficiencyRow>& rows) {
  std::ostringstream os;
  os << "| Run | Mode | Throughput (token/s) | Communication Avg. (kb/token) | Communication Total (MB) |\n";
  os << "|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    os << "| " << r.label << " | " << r.mode << " | " << fmt_opt(r.throughput, "%.2f") << " | "
       << fmt_opt(r.kb_per_token, "%.3f") << " | " << fmt("%.3f", r.total_mb) << " |\n";
  }
  os << "\nValues are means over seeds; throughput comes from timing sidecars.\n";
  return os.str();
}

std::vector<std::filesystem::path> emit_report(const std::vector<RunRecord>& records, ReportKind kind,
                                               const std::filesystem::path& out_dir, const ReportOptions& options) {
  if (records.empty()) throw ConfigError("report: no records");
  std::vector<std::filesystem::path> files;
  auto emit = [&](const std::string& name, const std::string& text) {
    files.push_back(out_dir / name);
    write_file(files.back(), text);
  };
  switch (kind) {
    case ReportKind::MpApScatter: {
      std::set<std::string> kinds;
      for (const auto& r : records) {
        for (const auto& a : r.attacks) kinds.insert(a.kind);
      }
      if (kinds.empty()) throw ConfigError("scatter: records carry no attacks");
      for (const auto& k : kinds) emit("mp_ap_scatter_" + k + ".svg", mp_ap_scatter_svg(records, k));
      break;
    }
    case ReportKind::DcsRanking: {
      const auto rows = dcs_ranking(records);
      emit("dcs_ranking.md", ranking_markdown(rows));
      emit("dcs_ranking.csv", ranking_csv(rows));
      break;
    }
    case ReportKind::DeltaDcsHist: {
      const DeltaDcsReport rep = delta_dcs_report(records, options.factor, options.minuend);
      const Histogram h = centered_histogram(rep.deltas, 0.01);
      std::ostringstream csv;
      csv << "bin_low,bin_high,count\n";
      std::size_t peak = 1;
      for (std::size_t c : h.counts) peak = std::max(peak, c);
      for (std::size_t i = 0; i < h.counts.size(); ++i) {
        const double lo = h.first_edge + h.width * static_cast<double>(i);
        csv << fmt("%.4f", lo) << ',' << fmt("%.4f", lo + h.width) << ',' << h.counts[i] << '\n';
      }
      emit("delta_dcs_hist.csv", csv.str());

      const double W = 520, H = 320, L = 50, R = 20, T = 40, B = 50;
      const double pw = W - L - R, ph = H - T - B;
      const double bw = pw / static_cast<double>(h.counts.size());
      std::ostringstream svg;
      svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 "
          << W << " " << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
      svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
      svg << "<text x=\"" << L << "\" y=\"20\" font-size=\"13\">DCS gap: " << svg_escape(rep.minuend) << " - "
          << svg_escape(rep.subtrahend) << " (" << rep.deltas.size() << " pairs)</text>\n";
      for (std::size_t i = 0; i < h.counts.size(); ++i) {
        const double bh = ph * static_cast<double>(h.counts[i]) / static_cast<double>(peak);
        svg << "<rect x=\"" << fmt("%.2f", L + bw * static_cast<double>(i)) << "\" y=\"" << fmt("%.2f", T + ph - bh)
            << "\" width=\"" << fmt("%.2f", bw) << "\" height=\"" << fmt("%.2f", bh)
            << "\" fill=\"#ff7f0e\" stroke=\"white\"/>\n";
      }
      const double zx = L + bw * (static_cast<double>(h.zero_bin) + 0.5);
      svg << "<line x1=\"" << fmt("%.2f", zx) << "\" y1=\"" << T << "\" x2=\"" << fmt("%.2f", zx) << "\" y2=\""
          << T + ph << "\" stroke=\"black\" stroke-dasharray=\"4 3\"/>\n";
      svg << "<text x=\"" << fmt("%.2f", zx) << "\" y=\"" << T + ph + 14 << "\" text-anchor=\"middle\">0.0</text>\n";
      svg << "<text x=\"" << L << "\" y=\"" << T + ph + 14 << "\" text-anchor=\"start\">"
          << fmt("%.2f", h.first_edge) << "</text>\n";
      svg << "<text x=\"" << L + pw << "\" y=\"" << T + ph + 14 << "\" text-anchor=\"end\">"
          << fmt("%.2f", h.first_edge + h.width * static_cast<double>(h.counts.size())) << "</text>\n";
      svg << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">delta DCS (bin "
          << fmt("%g", h.width) << ")</text>\n";
      svg << "<line x1=\"" << L << "\" y1=\"" << T + ph << "\" x2=\"" << L + pw << "\" y2=\"" << T + ph
          << "\" stroke=\"black\"/>\n</svg>\n";
      emit("delta_dcs_hist.svg", svg.str());

      std::ostringstream md;
      md << "| | delta C-DCS | delta T-DCS_MIA | delta T-DCS_LIA |\n|---|---|---|---|\n";
      for (const auto& f : rep.families) {
        md << "| " << f.name << " Average | " << fmt_opt(f.c_dcs) << " | " << fmt_opt(f.t_dcs_mia) << " | "
           << fmt_opt(f.t_dcs_lia) << " |\n";
      }
      md << "\ndelta = " << rep.minuend << " - " << rep.subtrahend << " over `" << rep.factor
         << "`; positive favours " << rep.minuend << ".\n";
      emit("delta_dcs_table.md", md.str());
      break;
    }
    case ReportKind::EfficiencyTable:
      emit("efficiency_table.md", efficiency_markdown(efficiency_rows(records, options.timings)));
      break;
  }
  return files;
}

}  // namespace splitbench
