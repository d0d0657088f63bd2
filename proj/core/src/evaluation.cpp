#include "pdisent/evaluation.hpp"

#include "pdisent/container.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace pdisent {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v, const char* pattern = "%.17g") {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

double bin_average(const BinValues& bins) {
  double sum = 0.0;
  int n = 0;
  for (double b : bins)
    if (!std::isnan(b)) {
      sum += b;
      ++n;
    }
  return n > 0 ? sum / n : kNaN;
}

MatrixXd unit_columns(const MatrixXd& m) {
  MatrixXd out = m;
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    const double n = m.col(c).norm();
    if (n > 0.0) out.col(c) /= n;
  }
  return out;
}

}  // namespace

const char* metric_name(Metric m) { return m == Metric::Cosine ? "cosine" : "euclidean"; }

Metric parse_metric(const std::string& name) {
  if (name == "cosine") return Metric::Cosine;
  if (name == "euclidean") return Metric::Euclidean;
  throw std::invalid_argument("unknown metric '" + name + "' (expected cosine or euclidean)");
}

void to_json(nlohmann::json& j, const EvalConfig& c) {
  j = {{"trials", c.trials}, {"metric", metric_name(c.metric)}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, EvalConfig& c) {
  c.trials = j.at("trials").get<int>();
  c.metric = parse_metric(j.at("metric").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
}

ProtocolResult rank1(const MatrixXd& gallery, std::span<const int> gallery_labels, const MatrixXd& probe,
                     std::span<const int> probe_labels, std::span<const double> probe_yaws, Metric metric) {
  if (gallery.cols() == 0) throw std::invalid_argument("rank1: empty gallery");
  if (static_cast<std::size_t>(gallery.cols()) != gallery_labels.size())
    throw std::invalid_argument("rank1: gallery label count differs from gallery size");
  if (static_cast<std::size_t>(probe.cols()) != probe_labels.size() || probe_labels.size() != probe_yaws.size())
    throw std::invalid_argument("rank1: probe labels/yaws differ from probe size");
  if (probe.cols() > 0 && probe.rows() != gallery.rows())
    throw std::invalid_argument("rank1: gallery and probe dimensions differ");

  // score(g, p): larger is closer
  MatrixXd scores;
  if (metric == Metric::Cosine) {
    scores = unit_columns(gallery).transpose() * unit_columns(probe);
  } else {
    scores = 2.0 * gallery.transpose() * probe;
    scores.colwise() -= gallery.colwise().squaredNorm().transpose();
  }

  std::array<std::size_t, kNumPoseBins> hits{};
  ProtocolResult r;
  for (Eigen::Index p = 0; p < probe.cols(); ++p) {
    Eigen::Index best = 0;
    double best_score = scores(0, p);
    for (Eigen::Index g = 1; g < scores.rows(); ++g)
      if (scores(g, p) > best_score) {
        best_score = scores(g, p);
        best = g;
      }
    const auto bin = static_cast<std::size_t>(pose_bin_index(probe_yaws[static_cast<std::size_t>(p)]));
    ++r.probe_counts[bin];
    if (gallery_labels[static_cast<std::size_t>(best)] == probe_labels[static_cast<std::size_t>(p)]) ++hits[bin];
  }
  for (std::size_t b = 0; b < kNumPoseBins; ++b)
    r.bins[b] = r.probe_counts[b] > 0 ? static_cast<double>(hits[b]) / static_cast<double>(r.probe_counts[b]) : kNaN;
  r.avg = bin_average(r.bins);
  r.bin_std.fill(0.0);
  for (std::size_t b = 0; b < kNumPoseBins; ++b)
    if (r.probe_counts[b] == 0) r.bin_std[b] = kNaN;
  r.trial_bins = {r.bins};
  r.trial_avg = {r.avg};
  return r;
}

namespace {

// Population mean and std, shifted by the first value so identical inputs give
// exactly that value and exactly zero spread.
std::pair<double, double> shifted_mean_std(const std::vector<double>& v) {
  const double x0 = v.front();
  double mean = 0.0;
  for (double x : v) mean += x - x0;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - x0 - mean) * (x - x0 - mean);
  return {x0 + mean, std::sqrt(var / static_cast<double>(v.size()))};
}

}  // namespace

ProtocolResult aggregate_trials(const std::vector<ProtocolResult>& trials) {
  if (trials.empty()) throw std::invalid_argument("no trials to aggregate");
  ProtocolResult r;
  r.probe_counts = trials.front().probe_counts;
  for (const auto& t : trials) {
    r.trial_bins.push_back(t.bins);
    r.trial_avg.push_back(t.avg);
  }
  std::vector<double> column(trials.size());
  for (std::size_t b = 0; b < kNumPoseBins; ++b) {
    for (std::size_t k = 0; k < trials.size(); ++k) column[k] = trials[k].bins[b];
    std::tie(r.bins[b], r.bin_std[b]) = shifted_mean_std(column);
  }
  r.avg = bin_average(r.bins);
  r.avg_std = shifted_mean_std(r.trial_avg).second;
  return r;
}

MatrixXd select_columns(const MatrixXd& m, std::span<const std::size_t> idx) {
  MatrixXd out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k)
    out.col(static_cast<Eigen::Index>(k)) = m.col(static_cast<Eigen::Index>(idx[k]));
  return out;
}

CorpusEmbeddings embed_corpus(const ModelParams& params, const Corpus& corpus, int chunk) {
  if (chunk < 1) throw std::invalid_argument("chunk must be positive");
  CorpusEmbeddings emb;
  const auto n = static_cast<Eigen::Index>(corpus.size());
  emb.e_i.resize(params.arch.id_dim, n);
  emb.e_n.resize(params.arch.nonid_dim, n);
  std::vector<std::size_t> idx;
  for (Eigen::Index start = 0; start < n; start += chunk) {
    const Eigen::Index len = std::min<Eigen::Index>(chunk, n - start);
    idx.resize(static_cast<std::size_t>(len));
    std::iota(idx.begin(), idx.end(), static_cast<std::size_t>(start));
    const EmbeddingBatch out = forward(params, image_batch(corpus, idx));
    emb.e_i.middleCols(start, len) = out.e_i;
    emb.e_n.middleCols(start, len) = out.e_n;
  }
  for (const auto& s : corpus.samples) {
    emb.identity.push_back(s.identity);
    emb.yaw.push_back(s.yaw);
  }
  return emb;
}

namespace {

ProtocolResult evaluate_split(const CorpusEmbeddings& emb, const GalleryProbeSplit& split, Metric metric) {
  std::vector<int> gl, pl;
  std::vector<double> py;
  for (std::size_t i : split.gallery) gl.push_back(emb.identity[i]);
  for (std::size_t i : split.probe) {
    pl.push_back(emb.identity[i]);
    py.push_back(emb.yaw[i]);
  }
  return rank1(select_columns(emb.e_i, split.gallery), gl, select_columns(emb.e_i, split.probe), pl, py, metric);
}

void check_embeddings(const Corpus& corpus, const CorpusEmbeddings& emb) {
  if (emb.size() != corpus.size() || static_cast<std::size_t>(emb.e_i.cols()) != corpus.size())
    throw std::invalid_argument("embeddings do not match the corpus size");
}

}  // namespace

ProtocolResult run_protocol_p1(const Corpus& corpus, const CorpusEmbeddings& emb, int trials, Rng& rng, Metric metric) {
  check_embeddings(corpus, emb);
  if (trials < 1) throw std::invalid_argument("P1 needs at least one trial");
  std::vector<ProtocolResult> per;
  for (int t = 0; t < trials; ++t)
    per.push_back(evaluate_split(emb, split_gallery_probe(corpus, Protocol::P1, rng), metric));
  return aggregate_trials(per);
}

ProtocolResult run_protocol_p1(const Corpus& corpus, const ModelParams& params, int trials, Rng& rng, Metric metric) {
  return run_protocol_p1(corpus, embed_corpus(params, corpus), trials, rng, metric);
}

ProtocolResult run_protocol_p2(const Corpus& corpus, const CorpusEmbeddings& emb, Metric metric) {
  check_embeddings(corpus, emb);
  Rng unused(0);
  return evaluate_split(emb, split_gallery_probe(corpus, Protocol::P2, unused), metric);
}

ProtocolResult run_protocol_p2(const Corpus& corpus, const ModelParams& params, Metric metric) {
  return run_protocol_p2(corpus, embed_corpus(params, corpus), metric);
}

Validator make_rank1_validator(const Corpus& validation, const EvalConfig& config) {
  return [&validation, config](const ModelParams& params) {
    Rng rng = make_rng(config.seed, {0x5641});
    return run_protocol_p1(validation, params, config.trials, rng, config.metric).avg;
  };
}

VectorXd RidgeFit::predict(const MatrixXd& x) const {
  return (x * weights).array() + intercept;
}

RidgeFit fit_ridge(const MatrixXd& x, const VectorXd& y, double ridge) {
  if (x.rows() != y.size() || x.rows() == 0) throw std::invalid_argument("ridge: sample count mismatch");
  if (ridge < 0.0) throw std::invalid_argument("ridge: negative penalty");
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const MatrixXd xc = x.rowwise() - mean;
  const double ym = y.mean();
  const Eigen::Index d = x.cols();
  RidgeFit fit;
  fit.lambda = ridge * xc.squaredNorm() / static_cast<double>(std::max<Eigen::Index>(d, 1));
  // least squares on [Xc; sqrt(lambda) I] avoids forming the normal equations
  MatrixXd a(x.rows() + d, d);
  a.topRows(x.rows()) = xc;
  a.bottomRows(d) = std::sqrt(fit.lambda) * MatrixXd::Identity(d, d);
  VectorXd b = VectorXd::Zero(x.rows() + d);
  b.head(x.rows()) = y.array() - ym;
  fit.weights = a.colPivHouseholderQr().solve(b);
  fit.intercept = ym - mean.dot(fit.weights);
  return fit;
}

LeakageResult pose_leakage_probe(const MatrixXd& e_i, const MatrixXd& e_n, std::span<const double> yaw,
                                 std::uint64_t seed, double ridge) {
  const std::size_t n = yaw.size();
  if (n < 50) throw std::invalid_argument("leakage probe needs at least 50 samples, got " + std::to_string(n));
  if (static_cast<std::size_t>(e_i.cols()) != n || static_cast<std::size_t>(e_n.cols()) != n)
    throw std::invalid_argument("leakage probe: embedding count differs from yaw count");
  const auto [lo, hi] = std::minmax_element(yaw.begin(), yaw.end());
  if (*hi - *lo <= 0.0) throw std::invalid_argument("leakage probe: yaw is constant");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, {0x4c4b});
  shuffle(order.begin(), order.end(), rng);
  const std::span<const std::size_t> train(order.data(), n / 2), test(order.data() + n / 2, n - n / 2);
  VectorXd y_train(static_cast<Eigen::Index>(train.size())), y_test(static_cast<Eigen::Index>(test.size()));
  for (std::size_t k = 0; k < train.size(); ++k) y_train(static_cast<Eigen::Index>(k)) = yaw[train[k]];
  for (std::size_t k = 0; k < test.size(); ++k) y_test(static_cast<Eigen::Index>(k)) = yaw[test[k]];

  const auto held_out_mse = [&](const MatrixXd& e) {
    const MatrixXd xtr = select_columns(e, train).transpose();
    const MatrixXd xte = select_columns(e, test).transpose();
    const RidgeFit fit = fit_ridge(xtr, y_train, ridge);
    return (fit.predict(xte) - y_test).squaredNorm() / static_cast<double>(test.size());
  };
  LeakageResult r;
  r.mse_id = held_out_mse(e_i);
  r.mse_nonid = held_out_mse(e_n);
  r.ratio = r.mse_nonid > 0.0 ? r.mse_id / r.mse_nonid : std::numeric_limits<double>::infinity();
  r.yaw_variance = (y_test.array() - y_test.mean()).square().mean();
  return r;
}

void export_embeddings(const CorpusEmbeddings& emb, const std::string& bin_path, const std::string& csv_path) {
  const auto n = static_cast<std::uint64_t>(emb.size());
  const auto di = static_cast<std::uint64_t>(emb.e_i.rows()), dn = static_cast<std::uint64_t>(emb.e_n.rows());
  const auto as_float = [](const MatrixXd& m) {
    // sample-major [S, dim]
    std::vector<float> v(static_cast<std::size_t>(m.size()));
    std::size_t k = 0;
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) v[k++] = static_cast<float>(m(r, c));
    return v;
  };
  const std::vector<float> fi = as_float(emb.e_i), fn = as_float(emb.e_n);

  Container c;
  c.manifest = {{"format", "pdisent-embeddings"}, {"version", 1}, {"num_samples", n}, {"id_dim", di},
                {"nonid_dim", dn}};
  c.add("e_i", {n, di}, fi);
  c.add("e_n", {n, dn}, fn);
  c.add("identity", {n}, std::vector<std::int32_t>(emb.identity.begin(), emb.identity.end()));
  c.add("yaw", {n}, emb.yaw);
  c.save(bin_path);

  std::ofstream f(csv_path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + csv_path + "' for writing");
  f << "identity,yaw";
  for (std::uint64_t k = 0; k < di; ++k) f << ",e_i_" << k;
  for (std::uint64_t k = 0; k < dn; ++k) f << ",e_n_" << k;
  f << '\n';
  for (std::uint64_t s = 0; s < n; ++s) {
    f << emb.identity[s] << ',' << fmt(emb.yaw[s]);
    for (std::uint64_t k = 0; k < di; ++k) f << ',' << fmt(fi[s * di + k], "%.9g");
    for (std::uint64_t k = 0; k < dn; ++k) f << ',' << fmt(fn[s * dn + k], "%.9g");
    f << '\n';
  }
  if (!f) throw std::runtime_error("failed writing '" + csv_path + "'");
}

std::string protocol_csv_header() {
  std::string h = "model";
  for (int e : kPoseBinEdges) h += ",bin_" + std::to_string(e);
  h += ",avg";
  for (int e : kPoseBinEdges) h += ",std_" + std::to_string(e);
  h += ",std_avg";
  return h;
}

std::string protocol_csv_row(const std::string& model, const ProtocolResult& r) {
  std::ostringstream os;
  os << model;
  for (double b : r.bins) os << ',' << fmt(b);
  os << ',' << fmt(r.avg);
  for (double s : r.bin_std) os << ',' << fmt(s);
  os << ',' << fmt(r.avg_std);
  return os.str();
}

namespace {

nlohmann::json nullable(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

nlohmann::json nullable(const BinValues& b) {
  nlohmann::json j = nlohmann::json::array();
  for (double v : b) j.push_back(nullable(v));
  return j;
}

}  // namespace

void to_json(nlohmann::json& j, const ProtocolResult& r) {
  j = nlohmann::json::object();
  j["bin_edges_deg"] = kPoseBinEdges;
  j["bins"] = nullable(r.bins);
  j["avg"] = nullable(r.avg);
  j["bin_std"] = nullable(r.bin_std);
  j["avg_std"] = nullable(r.avg_std);
  j["probe_counts"] = r.probe_counts;
  j["trial_bins"] = nlohmann::json::array();
  for (const auto& t : r.trial_bins) j["trial_bins"].push_back(nullable(t));
  j["trial_avg"] = nlohmann::json::array();
  for (double a : r.trial_avg) j["trial_avg"].push_back(nullable(a));
}

void to_json(nlohmann::json& j, const LeakageResult& r) {
  j = {{"mse_id", r.mse_id}, {"mse_nonid", r.mse_nonid}, {"ratio", r.ratio}, {"yaw_variance", r.yaw_variance}};
}

}  // namespace pdisent
