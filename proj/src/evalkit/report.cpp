#include "skel3d/evalkit/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "skel3d/core/error.hpp"
#include "skel3d/core/rng.hpp"
#include "skel3d/evalkit/metrics.hpp"

namespace skel3d::evalkit {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void sort_by_id(std::vector<MetricRecord>& r) {
  std::sort(r.begin(), r.end(), [](const MetricRecord& a, const MetricRecord& b) { return a.id < b.id; });
}

void require_aligned(const std::vector<MetricRecord>& a, const std::vector<MetricRecord>& b) {
  if (a.size() != b.size()) throw InputError("record sets differ in size");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].id != b[i].id) throw InputError("record sets differ at sample id '" + a[i].id + "' / '" + b[i].id + "'");
}

}  // namespace

bool lower_is_better(const std::string& metric) { return metric == "l1" || metric == "lpips_proxy"; }

double MetricRecord::metric(const std::string& name) const {
  if (name == "l1") return l1;
  if (name == "psnr") return psnr;
  if (name == "ssim") return ssim;
  if (name == "lpips_proxy") return lpips_proxy;
  throw InputError("unknown metric '" + name + "'");
}

MetricRecord evaluate_pair(const std::string& id, const std::string& model, const Image& generated,
                           const Image& target, const FeatureNet& net) {
  MetricRecord r;
  r.id = id;
  r.model = model;
  r.l1 = metric_l1(generated, target);
  r.psnr = metric_psnr(generated, target);
  r.ssim = metric_ssim(generated, target);
  r.lpips_proxy = lpips_proxy(generated, target, net);
  return r;
}

const MetricSummary& MetricReport::summary(const std::string& name) const {
  for (const auto& [n, s] : metrics)
    if (n == name) return s;
  throw InputError("report has no metric '" + name + "'");
}

MetricReport summarize(std::vector<MetricRecord> records, const std::string& model, std::optional<double> fid) {
  sort_by_id(records);
  MetricReport rep;
  rep.model = model;
  rep.count = static_cast<int>(records.size());
  rep.fid_proxy = fid;
  for (const auto& name : kMetricNames) {
    std::vector<double> v;
    for (const auto& r : records) v.push_back(r.metric(name));
    rep.metrics.emplace_back(name, MetricSummary{mean(v), stddev(v)});
  }
  return rep;
}

ComparisonReport compare_models(std::vector<MetricRecord> a, std::vector<MetricRecord> b, std::optional<double> fid_a,
                                 std::optional<double> fid_b) {
  sort_by_id(a);
  sort_by_id(b);
  require_aligned(a, b);
  if (a.empty()) throw InputError("compare_models: no records");
  ComparisonReport rep;
  rep.model_a = a.front().model;
  rep.model_b = b.front().model;
  rep.count = static_cast<int>(a.size());
  rep.fid_a = fid_a;
  rep.fid_b = fid_b;
  for (const auto& name : kMetricNames) {
    std::vector<double> va, vb;
    for (const auto& r : a) va.push_back(r.metric(name));
    for (const auto& r : b) vb.push_back(r.metric(name));
    MetricComparison c;
    c.metric = name;
    c.a = {mean(va), stddev(va)};
    c.b = {mean(vb), stddev(vb)};
    c.mean_delta = c.a.mean - c.b.mean;
    c.test = mann_whitney_u(va, vb, lower_is_better(name) ? Alternative::less : Alternative::greater);
    c.significant_05 = c.test.p < 0.05;
    c.significant_01 = c.test.p < 0.01;
    rep.metrics.push_back(c);
  }
  return rep;
}

std::array<double, 5> improvement(const MetricRecord& m, const MetricRecord& b) {
  std::array<double, 5> d{};
  d[0] = -(m.l1 - b.l1);
  d[1] = 0.01 * (m.psnr - b.psnr);
  d[2] = m.ssim - b.ssim;
  d[3] = -(m.lpips_proxy - b.lpips_proxy);
  d[4] = (d[0] + d[1] + d[2] + d[3]) / 4.0;
  return d;
}

BinTable iou_binned_improvement(std::vector<MetricRecord> model, std::vector<MetricRecord> baseline, int num_bins,
                                int resamples, std::uint64_t seed) {
  if (num_bins < 1) throw InputError("need at least one IoU bin");
  sort_by_id(model);
  sort_by_id(baseline);
  require_aligned(model, baseline);

  BinTable table;
  std::vector<std::vector<std::array<double, 5>>> deltas(static_cast<std::size_t>(num_bins));
  std::vector<std::vector<double>> ious(static_cast<std::size_t>(num_bins));
  for (std::size_t i = 0; i < model.size(); ++i) {
    const double iou = std::clamp(model[i].bbox_iou, 0.0, 1.0);
    const int bin = std::min(num_bins - 1, static_cast<int>(std::floor(iou * num_bins)));
    deltas[static_cast<std::size_t>(bin)].push_back(improvement(model[i], baseline[i]));
    ious[static_cast<std::size_t>(bin)].push_back(iou);
  }

  std::vector<double> centers;
  std::array<std::vector<double>, 5> means;
  std::vector<std::size_t> populated;
  for (int b = 0; b < num_bins; ++b) {
    BinEntry e;
    e.lo = static_cast<double>(b) / num_bins;
    e.hi = static_cast<double>(b + 1) / num_bins;
    const auto& d = deltas[static_cast<std::size_t>(b)];
    e.count = static_cast<int>(d.size());
    e.iou_mean = mean(ious[static_cast<std::size_t>(b)]);
    for (std::size_t m = 0; m < 5; ++m) {
      std::vector<double> v;
      for (const auto& x : d) v.push_back(x[m]);
      e.mean[m] = mean(v);
      e.se[m] = v.size() >= 2 ? bootstrap_se(v, resamples, mix_seed({seed, static_cast<std::uint64_t>(b), m})) : 0.0;
    }
    if (e.count >= 2) {
      populated.push_back(table.bins.size());
      centers.push_back(0.5 * (e.lo + e.hi));
      for (std::size_t m = 0; m < 5; ++m) means[m].push_back(e.mean[m]);
    }
    table.bins.push_back(e);
  }
  for (std::size_t m = 0; m < 5; ++m) {
    table.spearman[m] = spearman(centers, means[m]);
    if (populated.size() >= 2) {
      const BinEntry& lo = table.bins[populated.front()];
      const BinEntry& hi = table.bins[populated.back()];
      table.high_minus_low[m] = hi.mean[m] - lo.mean[m];
      table.high_minus_low_se[m] = std::sqrt(hi.se[m] * hi.se[m] + lo.se[m] * lo.se[m]);
    }
  }
  return table;
}

void to_json(nlohmann::json& j, const MetricRecord& r) {
  j = {{"id", r.id},
       {"model", r.model},
       {"l1", r.l1},
       {"psnr", r.psnr},
       {"ssim", r.ssim},
       {"lpips_proxy", r.lpips_proxy},
       {"bbox_iou", r.bbox_iou},
       {"degradation_level", r.degradation_level}};
}

void from_json(const nlohmann::json& j, MetricRecord& r) {
  j.at("id").get_to(r.id);
  j.at("model").get_to(r.model);
  j.at("l1").get_to(r.l1);
  j.at("psnr").get_to(r.psnr);
  j.at("ssim").get_to(r.ssim);
  j.at("lpips_proxy").get_to(r.lpips_proxy);
  j.at("bbox_iou").get_to(r.bbox_iou);
  j.at("degradation_level").get_to(r.degradation_level);
}

void to_json(nlohmann::json& j, const MetricReport& r) {
  nlohmann::json metrics = nlohmann::json::object();
  for (const auto& [name, s] : r.metrics) metrics[name] = {{"mean", s.mean}, {"std", s.std}};
  j = {{"model", r.model}, {"count", r.count}, {"metrics", metrics}};
  j["fid_proxy"] = r.fid_proxy ? nlohmann::json(*r.fid_proxy) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, MetricReport& r) {
  j.at("model").get_to(r.model);
  j.at("count").get_to(r.count);
  r.metrics.clear();
  for (const auto& name : kMetricNames) {
    const auto& m = j.at("metrics").at(name);
    r.metrics.emplace_back(name, MetricSummary{m.at("mean").get<double>(), m.at("std").get<double>()});
  }
  r.fid_proxy = j.at("fid_proxy").is_null() ? std::nullopt : std::optional<double>(j.at("fid_proxy").get<double>());
}

void to_json(nlohmann::json& j, const ComparisonReport& r) {
  nlohmann::json metrics = nlohmann::json::array();
  for (const auto& c : r.metrics) {
    metrics.push_back({{"metric", c.metric},
                       {"a", {{"mean", c.a.mean}, {"std", c.a.std}}},
                       {"b", {{"mean", c.b.mean}, {"std", c.b.std}}},
                       {"mean_delta", c.mean_delta},
                       {"U", c.test.u},
                       {"p", c.test.p},
                       {"alternative", to_string(c.test.alternative)},
                       {"exact", c.test.exact},
                       {"significant_05", c.significant_05},
                       {"significant_01", c.significant_01}});
  }
  j = {{"model_a", r.model_a}, {"model_b", r.model_b}, {"count", r.count}, {"metrics", metrics}};
  j["fid_proxy_a"] = r.fid_a ? nlohmann::json(*r.fid_a) : nlohmann::json(nullptr);
  j["fid_proxy_b"] = r.fid_b ? nlohmann::json(*r.fid_b) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, ComparisonReport& r) {
  j.at("model_a").get_to(r.model_a);
  j.at("model_b").get_to(r.model_b);
  j.at("count").get_to(r.count);
  r.metrics.clear();
  for (const auto& m : j.at("metrics")) {
    MetricComparison c;
    m.at("metric").get_to(c.metric);
    c.a = {m.at("a").at("mean").get<double>(), m.at("a").at("std").get<double>()};
    c.b = {m.at("b").at("mean").get<double>(), m.at("b").at("std").get<double>()};
    m.at("mean_delta").get_to(c.mean_delta);
    m.at("U").get_to(c.test.u);
    m.at("p").get_to(c.test.p);
    c.test.alternative = alternative_from_string(m.at("alternative").get<std::string>());
    m.at("exact").get_to(c.test.exact);
    m.at("significant_05").get_to(c.significant_05);
    m.at("significant_01").get_to(c.significant_01);
    r.metrics.push_back(c);
  }
  auto opt = [&](const char* key) {
    return j.at(key).is_null() ? std::nullopt : std::optional<double>(j.at(key).get<double>());
  };
  r.fid_a = opt("fid_proxy_a");
  r.fid_b = opt("fid_proxy_b");
}

void to_json(nlohmann::json& j, const BinTable& t) {
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : t.bins) {
    nlohmann::json e = {{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"iou_mean", b.iou_mean}};
    for (std::size_t m = 0; m < 5; ++m) e[kImprovementNames[m]] = {{"mean", b.mean[m]}, {"se", b.se[m]}};
    bins.push_back(e);
  }
  nlohmann::json trend = nlohmann::json::object();
  for (std::size_t m = 0; m < 5; ++m) {
    trend[kImprovementNames[m]] = {{"spearman", t.spearman[m]},
                                   {"high_minus_low", t.high_minus_low[m]},
                                   {"high_minus_low_se", t.high_minus_low_se[m]}};
  }
  j = {{"bins", bins}, {"trend", trend}};
}

void write_records_csv(const std::filesystem::path& path, const std::vector<MetricRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "id,model,l1,psnr,ssim,lpips_proxy,bbox_iou,degradation_level\n";
  for (const auto& r : records) {
    out << r.id << ',' << r.model << ',' << fmt(r.l1) << ',' << fmt(r.psnr) << ',' << fmt(r.ssim) << ','
        << fmt(r.lpips_proxy) << ',' << fmt(r.bbox_iou) << ',' << fmt(r.degradation_level) << '\n';
  }
}

std::vector<MetricRecord> read_records_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "id,model,l1,psnr,ssim,lpips_proxy,bbox_iou,degradation_level")
    throw DataError("unexpected header in " + path.string());
  std::vector<MetricRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> f;
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 8) throw DataError("malformed record line in " + path.string());
    MetricRecord r;
    try {
      r.id = f[0];
      r.model = f[1];
      r.l1 = std::stod(f[2]);
      r.psnr = std::stod(f[3]);
      r.ssim = std::stod(f[4]);
      r.lpips_proxy = std::stod(f[5]);
      r.bbox_iou = std::stod(f[6]);
      r.degradation_level = std::stod(f[7]);
    } catch (const std::exception&) {
      throw DataError("malformed number in " + path.string());
    }
    out.push_back(r);
  }
  return out;
}

void write_bins_csv(const std::filesystem::path& path, const BinTable& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "lo,hi,count,iou_mean";
  for (const auto& n : kImprovementNames) out << ',' << n << "_mean," << n << "_se";
  out << '\n';
  for (const auto& b : t.bins) {
    out << fmt(b.lo) << ',' << fmt(b.hi) << ',' << b.count << ',' << fmt(b.iou_mean);
    for (std::size_t m = 0; m < 5; ++m) out << ',' << fmt(b.mean[m]) << ',' << fmt(b.se[m]);
    out << '\n';
  }
}

void write_improvement_svg(const std::filesystem::path& path, const BinTable& t) {
  constexpr double W = 640, H = 400, L = 70, R = 150, T = 30, B = 50;
  double ylo = 0.0, yhi = 0.0;
  for (const auto& b : t.bins) {
    if (b.count == 0) continue;
    for (std::size_t m = 0; m < 5; ++m) {
      ylo = std::min(ylo, b.mean[m] - b.se[m]);
      yhi = std::max(yhi, b.mean[m] + b.se[m]);
    }
  }
  if (yhi - ylo < 1e-9) {
    ylo -= 0.01;
    yhi += 0.01;
  }
  const double pad = 0.05 * (yhi - ylo);
  ylo -= pad;
  yhi += pad;
  auto px = [&](double x) { return L + x * (W - L - R); };
  auto py = [&](double y) { return T + (yhi - y) / (yhi - ylo) * (H - T - B); };
  const std::array<const char*, 5> colors{"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#000000"};

  std::ostringstream s;
  char buf[256];
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  std::snprintf(buf, sizeof buf, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\" viewBox=\"0 0 %g %g\">\n", W, H, W, H);
  s << buf;
  s << "<rect x=\"0\" y=\"0\" width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"black\"/>\n", px(0), H - B, px(1), H - B);
  s << buf;
  std::snprintf(buf, sizeof buf, "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"black\"/>\n", L, T, L, H - B);
  s << buf;
  std::snprintf(buf, sizeof buf, "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n", px(0), py(0), px(1), py(0));
  s << buf;
  for (int i = 0; i <= 5; ++i) {
    const double x = i / 5.0;
    std::snprintf(buf, sizeof buf, "<text x=\"%.2f\" y=\"%.2f\" font-size=\"11\" text-anchor=\"middle\">%.1f</text>\n", px(x), H - B + 16, x);
    s << buf;
  }
  for (int i = 0; i <= 4; ++i) {
    const double y = ylo + (yhi - ylo) * i / 4.0;
    std::snprintf(buf, sizeof buf, "<text x=\"%.2f\" y=\"%.2f\" font-size=\"11\" text-anchor=\"end\">%.3f</text>\n", L - 6, py(y) + 4, y);
    s << buf;
  }
  std::snprintf(buf, sizeof buf, "<text x=\"%.2f\" y=\"%.2f\" font-size=\"13\" text-anchor=\"middle\">skeleton bbox IoU</text>\n", px(0.5), H - 10);
  s << buf;
  std::snprintf(buf, sizeof buf, "<text x=\"16\" y=\"%.2f\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 %.2f)\">mean improvement</text>\n", py(0.5 * (ylo + yhi)), py(0.5 * (ylo + yhi)));
  s << buf;
  for (std::size_t m = 0; m < 5; ++m) {
    std::string points;
    for (const auto& b : t.bins) {
      if (b.count == 0) continue;
      const double x = px(0.5 * (b.lo + b.hi)) + (static_cast<double>(m) - 2.0) * 3.0;
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", x, py(b.mean[m]));
      points += buf;
      std::snprintf(buf, sizeof buf, "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"%s\"/>\n", x, py(b.mean[m] - b.se[m]), x, py(b.mean[m] + b.se[m]), colors[m]);
      s << buf;
      std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%s\"/>\n", x, py(b.mean[m]), colors[m]);
      s << buf;
    }
    if (!points.empty()) points.pop_back();
    s << "<polyline fill=\"none\" stroke=\"" << colors[m] << "\" stroke-width=\"1.5\" points=\"" << points << "\"/>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"%.2f\" y=\"%.2f\" font-size=\"12\" fill=\"%s\">%s</text>\n", W - R + 15, T + 18.0 * static_cast<double>(m + 1), colors[m], kImprovementNames[m].c_str());
    s << buf;
  }
  s << "</svg>\n";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << s.str();
}

}  // namespace skel3d::evalkit
