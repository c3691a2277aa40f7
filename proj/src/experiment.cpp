#include "rddpm/experiment.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace rddpm {

std::string to_string(Method method) {
  switch (method) {
    case Method::kDdpm: return "ddpm";
    case Method::kHuber: return "rddpm-huber";
    case Method::kLts: return "rddpm-lts";
  }
  throw std::invalid_argument("unknown method");
}

Method method_from_string(std::string_view name) {
  if (name == "ddpm") return Method::kDdpm;
  if (name == "rddpm-huber" || name == "huber") return Method::kHuber;
  if (name == "rddpm-lts" || name == "lts") return Method::kLts;
  throw std::invalid_argument("unknown method: " + std::string(name));
}

void to_json(nlohmann::json& j, const ExperimentProfile& p) {
  j = nlohmann::json{{"name", p.name}, {"data", p.data}, {"model", p.model}, {"train", p.train}, {"eval", p.eval}};
}

void from_json(const nlohmann::json& j, ExperimentProfile& p) {
  p.name = j.value("name", std::string("custom"));
  p.data = j.at("data").get<SyntheticBenchmarkSpec>();
  p.model = j.at("model").get<ConvNetConfig>();
  p.train = j.at("train").get<TrainConfig>();
  p.eval = j.at("eval").get<EvalConfig>();
}

ExperimentProfile profile_preset(std::string_view name) {
  ExperimentProfile p;
  p.name = std::string(name);
  p.data.texture.noise_std = 0.0;
  p.train.epochs = 2;
  p.train.adam.learning_rate = 1e-3;
  p.train.ema_decay = 0.995;
  p.eval.noising_fraction = 0.25;
  if (name == "ci") {
    p.data.n_train = 400;
    p.data.n_eval = 40;
    p.model.width = 8;
    p.model.depth = 3;
    p.train.epochs = 1;
  } else if (name == "desk") {
    p.data.n_train = 5000;
    p.data.n_eval = 500;
  } else if (name == "full") {
    p.data.n_train = 50000;
    p.data.n_eval = 5000;
    p.train.epochs = 10;
  } else {
    throw std::invalid_argument("unknown profile: " + std::string(name));
  }
  p.model.steps = p.train.schedule.steps;
  return p;
}

ExperimentProfile resolve_profile(std::string_view preset, const nlohmann::json& config,
                                  const nlohmann::json& overrides) {
  nlohmann::json j = profile_preset(preset);
  if (config.is_object()) j.merge_patch(config);
  if (overrides.is_object()) j.merge_patch(overrides);
  ExperimentProfile p = j.get<ExperimentProfile>();
  p.data.texture.validate();
  p.model.validate();
  p.train.validate();
  return p;
}

RobustLossSpec CellSpec::loss() const {
  switch (method) {
    case Method::kDdpm: return RobustLossSpec::l2();
    case Method::kHuber: return param == 0.0 ? RobustLossSpec::l1() : RobustLossSpec::huber(param);
    case Method::kLts: return RobustLossSpec::lts(param);
  }
  throw std::invalid_argument("unknown method");
}

std::string CellSpec::group_label() const {
  std::ostringstream os;
  os << to_string(method) << " c=" << contamination;
  if (method == Method::kHuber) os << " delta=" << param;
  if (method == Method::kLts) os << " lambda=" << param;
  return os.str();
}

std::vector<LabeledPatch> cell_dataset(const ExperimentProfile& profile, const CellSpec& cell) {
  SyntheticBenchmarkSpec spec = profile.data;
  spec.seed = cell.seed;
  spec.train_corruption.contamination_ratio = cell.contamination;
  return build_synthetic_benchmark(spec);
}

CellResult run_cell(const ExperimentProfile& profile, const CellSpec& cell, CellArtifacts* artifacts) {
  using Clock = std::chrono::steady_clock;
  const std::vector<LabeledPatch> data = cell_dataset(profile, cell);

  ConvNetConfig mc = profile.model;
  mc.init_seed = cell.seed;
  mc.steps = profile.train.schedule.steps;
  std::unique_ptr<NoisePredictor> model = reference_net(mc);

  TrainConfig tc = profile.train;
  tc.loss = cell.loss();
  tc.seed = cell.seed;

  CellResult result;
  result.cell = cell;
  const auto t0 = Clock::now();
  TrainResult training = train(data, tc, *model);
  const auto t1 = Clock::now();

  EvalConfig ec = profile.eval;
  ec.seed = cell.seed;
  const NoiseSchedule schedule = NoiseSchedule::from_params(tc.schedule);
  std::vector<SegmentedPatch> segmented = segment_eval_split(*model, data, schedule, ec);
  const EvalReport report = evaluate_segmented(data, segmented, ec.per_image_mean);
  const auto t2 = Clock::now();

  result.auroc = report.auroc;
  result.auprc = report.auprc;
  result.mse = report.masked_mse;
  const std::size_t tail = std::max<std::size_t>(1, training.history.size() / 10);
  double sum = 0.0;
  for (std::size_t i = training.history.size() - tail; i < training.history.size(); ++i) sum += training.history[i].loss;
  result.final_loss = training.history.empty() ? 0.0 : sum / static_cast<double>(tail);
  result.train_seconds = std::chrono::duration<double>(t1 - t0).count();
  result.eval_seconds = std::chrono::duration<double>(t2 - t1).count();
  result.parameter_checksum = parameter_checksum(model->parameters());

  if (artifacts) {
    artifacts->model = std::move(model);
    artifacts->training = std::move(training);
    artifacts->report = report;
    artifacts->segmented = std::move(segmented);
  }
  return result;
}

std::vector<CellSpec> ExperimentPlan::expand() const {
  std::vector<CellSpec> cells;
  for (Method m : methods) {
    std::vector<double> params{0.0};
    if (m == Method::kHuber) params = deltas;
    if (m == Method::kLts) params = lambdas;
    for (double c : contamination) {
      for (double p : params) {
        for (std::uint64_t s : seeds) cells.push_back(CellSpec{m, c, p, s});
      }
    }
  }
  return cells;
}

void to_json(nlohmann::json& j, const ExperimentPlan& p) {
  std::vector<std::string> methods;
  for (Method m : p.methods) methods.push_back(to_string(m));
  j = nlohmann::json{{"methods", methods},  {"contamination", p.contamination}, {"deltas", p.deltas},
                     {"lambdas", p.lambdas}, {"seeds", p.seeds}};
}

void from_json(const nlohmann::json& j, ExperimentPlan& p) {
  ExperimentPlan d;
  p.methods.clear();
  if (j.contains("methods")) {
    for (const auto& m : j.at("methods")) p.methods.push_back(method_from_string(m.get<std::string>()));
  } else {
    p.methods = d.methods;
  }
  p.contamination = j.value("contamination", d.contamination);
  p.deltas = j.value("deltas", d.deltas);
  p.lambdas = j.value("lambdas", d.lambdas);
  p.seeds = j.value("seeds", d.seeds);
}

std::vector<CellResult> run_cells(const ExperimentProfile& profile, std::span<const CellSpec> cells, int jobs,
                                  const CellCallback& on_done) {
  std::vector<CellResult> results(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<std::size_t> next{0};
  std::size_t done = 0;
  std::mutex mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        results[i] = run_cell(profile, cells[i]);
      } catch (...) {
        errors[i] = std::current_exception();
        continue;
      }
      std::lock_guard lock(mutex);
      ++done;
      if (on_done) on_done(results[i], done, cells.size());
    }
  };
  const int n = std::clamp(jobs, 1, static_cast<int>(std::max<std::size_t>(cells.size(), 1)));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int k = 0; k < n; ++k) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

namespace {

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  sd = 0.0;
  if (v.size() > 1) {
    for (double x : v) sd += (x - mean) * (x - mean);
    sd = std::sqrt(sd / static_cast<double>(v.size() - 1));
  }
}

// Shortest text that reads back to the same double.
std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::string param_columns(Method m, double param) {
  if (m == Method::kHuber) return num(param) + ",";
  if (m == Method::kLts) return "," + num(param);
  return ",";
}

}  // namespace

std::vector<AggregateRow> aggregate(std::span<const CellResult> results) {
  std::vector<AggregateRow> rows;
  std::vector<std::vector<const CellResult*>> members;
  for (const CellResult& r : results) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const AggregateRow& row) {
      return row.method == r.cell.method && row.contamination == r.cell.contamination && row.param == r.cell.param;
    });
    if (it == rows.end()) {
      rows.push_back(AggregateRow{r.cell.method, r.cell.contamination, r.cell.param});
      members.emplace_back();
      it = rows.end() - 1;
    }
    members[static_cast<std::size_t>(it - rows.begin())].push_back(&r);
  }
  for (std::size_t g = 0; g < rows.size(); ++g) {
    std::vector<double> a, p, m;
    for (const CellResult* r : members[g]) {
      a.push_back(r->auroc);
      p.push_back(r->auprc);
      m.push_back(r->mse);
    }
    rows[g].seeds = members[g].size();
    mean_std(a, rows[g].auroc_mean, rows[g].auroc_std);
    mean_std(p, rows[g].auprc_mean, rows[g].auprc_std);
    mean_std(m, rows[g].mse_mean, rows[g].mse_std);
  }
  return rows;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const CellResult> results) {
  std::ofstream out = open_out(path);
  out << "method,contamination,delta,lambda,auroc,auprc,mse,seed\n";
  for (const CellResult& r : results) {
    out << to_string(r.cell.method) << ',' << num(r.cell.contamination) << ','
        << param_columns(r.cell.method, r.cell.param) << ',' << num(r.auroc) << ',' << num(r.auprc) << ','
        << num(r.mse) << ',' << r.cell.seed << '\n';
  }
}

void write_aggregate_csv(const std::filesystem::path& path, std::span<const AggregateRow> rows) {
  std::ofstream out = open_out(path);
  out << "method,contamination,delta,lambda,auroc_mean,auroc_std,auprc_mean,auprc_std,mse_mean,mse_std,seeds\n";
  for (const AggregateRow& r : rows) {
    out << to_string(r.method) << ',' << num(r.contamination) << ',' << param_columns(r.method, r.param) << ','
        << num(r.auroc_mean) << ',' << num(r.auroc_std) << ',' << num(r.auprc_mean) << ',' << num(r.auprc_std)
        << ',' << num(r.mse_mean) << ',' << num(r.mse_std) << ',' << r.seeds << '\n';
  }
}

void write_line_plot_svg(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                         const std::string& y_label, std::span<const PlotSeries> series) {
  constexpr double kW = 640, kH = 420, kLeft = 70, kRight = 170, kTop = 40, kBottom = 60;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"};
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const PlotSeries& s : series) {
    for (auto [x, y] : s.points) {
      x0 = std::min(x0, x), x1 = std::max(x1, x);
      y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 < 1e-12) y0 -= 0.05, y1 += 0.05;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad, y1 += pad;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ofstream out = open_out(path);
  char buf[256];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kLeft + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title
      << "</text>\n";
  std::snprintf(buf, sizeof buf, "<rect x=\"%g\" y=\"%g\" width=\"%g\" height=\"%g\" fill=\"none\" stroke=\"#333\"/>\n",
                kLeft, kTop, pw, ph);
  out << buf;
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">%.3g</text>\n", px(xv),
                  kTop + ph + 18, xv);
    out << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" text-anchor=\"end\">%.3f</text>\n", kLeft - 6,
                  py(yv) + 4, yv);
    out << buf;
    std::snprintf(buf, sizeof buf, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"#ddd\"/>\n", kLeft,
                  py(yv), kLeft + pw, py(yv));
    out << buf;
  }
  out << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 18 << "\" text-anchor=\"middle\">" << x_label
      << "</text>\n";
  out << "<text transform=\"translate(18," << kTop + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << y_label
      << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kColors[i % std::size(kColors)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (auto [x, y] : series[i].points) out << px(x) << ',' << py(y) << ' ';
    out << "\"/>\n";
    for (auto [x, y] : series[i].points) {
      out << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    const double ly = kTop + 10 + 18.0 * static_cast<double>(i);
    out << "<line x1=\"" << kW - kRight + 12 << "\" y1=\"" << ly << "\" x2=\"" << kW - kRight + 32 << "\" y2=\"" << ly
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << kW - kRight + 38 << "\" y=\"" << ly + 4 << "\">" << series[i].name << "</text>\n";
  }
  out << "</svg>\n";
}

std::vector<std::filesystem::path> write_sweep_plots(const std::filesystem::path& dir,
                                                     std::span<const AggregateRow> rows) {
  std::vector<std::filesystem::path> written;
  const std::pair<const char*, double AggregateRow::*> metrics[] = {{"auroc", &AggregateRow::auroc_mean},
                                                                    {"auprc", &AggregateRow::auprc_mean}};
  // Versus contamination: one series per (method, param).
  std::map<std::string, std::vector<const AggregateRow*>> by_setting;
  std::map<double, std::vector<const AggregateRow*>> huber_by_level;
  for (const AggregateRow& r : rows) {
    std::string name = to_string(r.method);
    if (r.method == Method::kHuber) name += r.param == 0.0 ? " (l1)" : " d=" + num(r.param);
    if (r.method == Method::kLts) name += " l=" + num(r.param);
    by_setting[name].push_back(&r);
    if (r.method == Method::kHuber) huber_by_level[r.contamination].push_back(&r);
  }
  bool varies_c = false;
  for (const auto& [name, v] : by_setting) varies_c = varies_c || v.size() > 1;
  for (const auto& [metric, field] : metrics) {
    if (varies_c) {
      std::vector<PlotSeries> series;
      for (const auto& [name, v] : by_setting) {
        PlotSeries s{name, {}};
        for (const AggregateRow* r : v) s.points.emplace_back(r->contamination, r->*field);
        std::sort(s.points.begin(), s.points.end());
        series.push_back(std::move(s));
      }
      const auto path = dir / (std::string(metric) + "_vs_contamination.svg");
      write_line_plot_svg(path, std::string(metric) + " vs contamination", "contamination ratio", metric, series);
      written.push_back(path);
    }
    bool varies_delta = false;
    for (const auto& [c, v] : huber_by_level) varies_delta = varies_delta || v.size() > 1;
    if (varies_delta) {
      std::vector<PlotSeries> series;
      for (const auto& [c, v] : huber_by_level) {
        PlotSeries s{"c=" + num(c), {}};
        for (const AggregateRow* r : v) s.points.emplace_back(r->param, r->*field);
        std::sort(s.points.begin(), s.points.end());
        series.push_back(std::move(s));
      }
      const auto path = dir / (std::string(metric) + "_vs_delta.svg");
      write_line_plot_svg(path, std::string(metric) + " vs Huber delta", "delta (0 = l1)", metric, series);
      written.push_back(path);
    }
  }
  return written;
}

std::string git_blob_hash(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx.get(), content.data(), content.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &length) != 1) {
    throw std::runtime_error("SHA-1 failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < length; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

std::string git_blob_hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return git_blob_hash(os.str());
}

nlohmann::json describe_files(const std::filesystem::path& root, std::span<const std::filesystem::path> files) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& f : files) {
    out.push_back({{"path", std::filesystem::relative(f, root).generic_string()},
                   {"bytes", std::filesystem::file_size(f)},
                   {"git_sha1", git_blob_hash_file(f)}});
  }
  return out;
}

}  // namespace rddpm
