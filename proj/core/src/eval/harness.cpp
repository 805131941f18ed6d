#include "pkws/eval/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "pkws/error.hpp"
#include "pkws/rng.hpp"

namespace pkws::eval {
namespace {

constexpr std::size_t kEmbedBatch = 64;

class EmbeddingCache {
 public:
  EmbeddingCache(const nn::Encoder& enc, const train::Dataset& ds, const dsp::MfccExtractor& mfcc)
      : enc_(enc), ds_(ds), mfcc_(mfcc) {}

  void ensure(const std::vector<std::size_t>& items) {
    std::vector<std::size_t> missing;
    for (std::size_t i : items) {
      if (!rows_.contains(i)) missing.push_back(i);
    }
    std::sort(missing.begin(), missing.end());
    missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
    for (std::size_t b = 0; b < missing.size(); b += kEmbedBatch) {
      const std::size_t e = std::min(missing.size(), b + kEmbedBatch);
      const std::vector<std::size_t> chunk(missing.begin() + static_cast<std::ptrdiff_t>(b),
                                           missing.begin() + static_cast<std::ptrdiff_t>(e));
      const auto feats = train::extract_features(ds_, chunk, mfcc_);
      const Eigen::MatrixXd emb = enc_.embed(feats);
      for (std::size_t k = 0; k < chunk.size(); ++k) rows_[chunk[k]] = emb.row(static_cast<Eigen::Index>(k));
    }
  }

  Eigen::MatrixXd rows(const std::vector<std::size_t>& items) {
    ensure(items);
    Eigen::MatrixXd out(static_cast<Eigen::Index>(items.size()), enc_.config().embedding_dim());
    for (std::size_t k = 0; k < items.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = rows_.at(items[k]);
    return out;
  }

 private:
  const nn::Encoder& enc_;
  const train::Dataset& ds_;
  const dsp::MfccExtractor& mfcc_;
  std::unordered_map<std::size_t, Eigen::RowVectorXd> rows_;
};

std::vector<std::size_t> draw(const std::vector<std::size_t>& pool, int k, Rng& rng) {
  std::vector<std::size_t> v = pool;
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), v.size() - 1);
    std::swap(v[static_cast<std::size_t>(i)], v[pick(rng)]);
  }
  v.resize(static_cast<std::size_t>(k));
  return v;
}

int require_class(const train::Dataset& ds, const std::string& name, const char* split) {
  const int id = ds.class_id(name);
  if (id < 0) throw ValidationError("class '" + name + "' is missing from the " + split + " split");
  return id;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::vector<std::string> gsc_positive_classes() {
  return {"yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go"};
}

std::vector<std::string> gsc_negative_classes() {
  return {"zero", "one", "two",   "three", "four",  "five",   "six",    "seven", "eight", "nine",
          "bed",  "bird", "cat",  "dog",   "happy", "house",  "marvin", "sheila", "tree", "wow"};
}

std::vector<std::string> gsc_filler_classes() { return {"backward", "forward", "visual", "follow", "learn"}; }

void EvalProtocol::validate() const {
  if (shots < 1) throw ValidationError("eval shots must be >= 1");
  if (repetitions < 1) throw ValidationError("eval repetitions must be >= 1");
  if (!(far_target > 0.0 && far_target < 1.0)) throw ValidationError("FAR target must lie in (0, 1)");
  if (tail_size < 2) throw ValidationError("OpenMAX tail size must be >= 2");
  if (positive.empty()) throw ValidationError("protocol needs positive classes");
  if (negative.empty()) throw ValidationError("protocol needs negative classes");
  std::set<std::string> seen;
  for (const auto* list : {&positive, &negative, &filler}) {
    for (const auto& c : *list) {
      if (!seen.insert(c).second) throw ValidationError("class '" + c + "' appears in more than one protocol list");
    }
  }
}

std::vector<double> EvalReport::gammas() const {
  std::vector<double> g;
  for (const auto& r : repetitions) g.push_back(r.gamma);
  return g;
}

Eigen::MatrixXi EvalReport::total_confusion() const {
  Eigen::MatrixXi total = Eigen::MatrixXi::Zero(ways + 1, ways + 1);
  for (const auto& r : repetitions) total += r.confusion;
  return total;
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

EvalReport run_eval(const nn::Encoder& encoder, const ClassifierSetup& setup, const EvalProtocol& protocol,
                    const train::Dataset& enroll_split, const train::Dataset& test_split,
                    const dsp::FrontendConfig& frontend) {
  protocol.validate();
  const bool needs_filler = setup.kind == openset::ClassifierKind::kOpenNcm;
  if (needs_filler && protocol.filler.empty()) throw ValidationError("openNCM evaluation needs filler classes");
  const int n = protocol.ways();
  const int k = protocol.shots;

  std::vector<std::vector<std::size_t>> enroll_pools;
  for (const auto& name : protocol.positive) {
    const auto& members = enroll_split.members(require_class(enroll_split, name, "enrollment"));
    if (static_cast<int>(members.size()) < k) {
      throw ValidationError("class '" + name + "' has " + std::to_string(members.size()) +
                            " enrollment utterances, fewer than K=" + std::to_string(k));
    }
    enroll_pools.push_back(members);
  }
  std::vector<std::size_t> filler_pool;
  if (needs_filler) {
    for (const auto& name : protocol.filler) {
      const auto& members = enroll_split.members(require_class(enroll_split, name, "enrollment"));
      filler_pool.insert(filler_pool.end(), members.begin(), members.end());
    }
    if (static_cast<int>(filler_pool.size()) < k) throw ValidationError("fewer filler utterances than K");
  }

  EvalReport report;
  report.classifier = openset::to_string(setup.kind);
  report.ways = n;
  report.shots = k;
  report.far_target = protocol.far_target;
  report.seed = protocol.seed;
  report.keywords = protocol.positive;

  const dsp::MfccExtractor mfcc(frontend);
  std::vector<std::size_t> test_pos_items;
  std::vector<int> test_pos_labels;
  for (int i = 0; i < n; ++i) {
    const auto& members =
        test_split.members(require_class(test_split, protocol.positive[static_cast<std::size_t>(i)], "test"));
    if (members.empty()) throw ValidationError("keyword '" + protocol.positive[static_cast<std::size_t>(i)] + "' has no test utterances");
    report.positive_counts.push_back(static_cast<int>(members.size()));
    for (std::size_t m : members) {
      test_pos_items.push_back(m);
      test_pos_labels.push_back(i + 1);
    }
  }
  std::vector<std::size_t> test_neg_items;
  for (const auto& name : protocol.negative) {
    const auto& members = test_split.members(require_class(test_split, name, "test"));
    test_neg_items.insert(test_neg_items.end(), members.begin(), members.end());
  }
  if (test_neg_items.empty()) throw ValidationError("no negative test utterances");
  report.negative_count = static_cast<int>(test_neg_items.size());

  EmbeddingCache test_cache(encoder, test_split, mfcc);
  const Eigen::MatrixXd pos_emb = test_cache.rows(test_pos_items);
  const Eigen::MatrixXd neg_emb = test_cache.rows(test_neg_items);
  EmbeddingCache enroll_cache(encoder, enroll_split, mfcc);

  std::vector<double> accs, frrs, fars, aurocs;
  for (int r = 0; r < protocol.repetitions; ++r) {
    RepetitionResult rep;
    rep.seed = derive_seed(protocol.seed, {static_cast<std::uint64_t>(r)});
    Rng rng(rep.seed);
    std::vector<Eigen::MatrixXd> shots;
    for (const auto& pool : enroll_pools) shots.push_back(enroll_cache.rows(draw(pool, k, rng)));
    openset::EnrollOptions opts;
    opts.normalize = setup.normalize;
    opts.generator = setup.generator;
    opts.tail_size = protocol.tail_size;
    opts.class_names = protocol.positive;
    if (needs_filler) opts.filler = enroll_cache.rows(draw(filler_pool, k, rng));
    const openset::Enrollment enr = openset::enroll(shots, setup.kind, opts);
    rep.few_shot_warning = enr.few_shot_warning;

    std::vector<Outcome> positives;
    std::vector<ScoreVector> negatives;
    std::vector<double> pos_det, neg_det;
    for (Eigen::Index i = 0; i < pos_emb.rows(); ++i) {
      positives.push_back({test_pos_labels[static_cast<std::size_t>(i)], openset::score(enr, pos_emb.row(i))});
      pos_det.push_back(openset::detection_score(positives.back().p));
    }
    for (Eigen::Index i = 0; i < neg_emb.rows(); ++i) {
      negatives.push_back(openset::score(enr, neg_emb.row(i)));
      neg_det.push_back(openset::detection_score(negatives.back()));
    }
    rep.gamma = tune_gamma(negatives, protocol.far_target);
    rep.metrics = compute_metrics(positives, negatives, rep.gamma);
    rep.auroc = auroc(pos_det, neg_det);
    rep.confusion = Eigen::MatrixXi::Zero(n + 1, n + 1);
    for (const auto& o : positives) ++rep.confusion(o.label, openset::decide(o.p, rep.gamma));
    for (const auto& p : negatives) ++rep.confusion(0, openset::decide(p, rep.gamma));

    accs.push_back(rep.metrics.acc);
    frrs.push_back(rep.metrics.frr);
    fars.push_back(rep.metrics.far);
    aurocs.push_back(rep.auroc);
    report.repetitions.push_back(std::move(rep));
  }
  report.acc = summarize(accs);
  report.frr = summarize(frrs);
  report.far = summarize(fars);
  report.auroc = summarize(aurocs);
  return report;
}

std::string format_report(const EvalReport& report) {
  std::ostringstream os;
  os << "classifier " << report.classifier << "\n";
  os << "setting " << report.shots << "-shot " << report.ways << "-way\n";
  os << "far_target " << fmt(report.far_target) << "\n";
  os << "seed " << report.seed << "\n";
  os << "repetitions " << report.repetitions.size() << "\n";
  os << "negatives " << report.negative_count << "\n";
  os << "\n";
  auto line = [&](const char* name, const Summary& s) {
    os << name << " " << fmt(s.mean) << " +- " << fmt(s.std) << "\n";
  };
  line("acc_at_far", report.acc);
  line("frr_at_far", report.frr);
  line("far", report.far);
  line("auroc", report.auroc);
  os << "\nrepetition gamma acc frr far auroc\n";
  for (std::size_t r = 0; r < report.repetitions.size(); ++r) {
    const auto& rep = report.repetitions[r];
    os << r + 1 << " " << fmt(rep.gamma) << " " << fmt(rep.metrics.acc) << " " << fmt(rep.metrics.frr) << " "
       << fmt(rep.metrics.far) << " " << fmt(rep.auroc) << (rep.few_shot_warning ? " few-shot-tail" : "") << "\n";
  }
  os << "\nconfusion (summed over repetitions; row = truth, column = decision, 0 = unknown)\n";
  const Eigen::MatrixXi total = report.total_confusion();
  os << "truth";
  for (int c = 0; c <= report.ways; ++c) os << " " << c;
  os << "\n";
  for (int r = 0; r <= report.ways; ++r) {
    os << (r == 0 ? std::string("unknown") : report.keywords[static_cast<std::size_t>(r - 1)]);
    for (int c = 0; c <= report.ways; ++c) os << " " << total(r, c);
    os << "\n";
  }
  return os.str();
}

void write_report(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write report " + path.string());
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &utc);
  out << "# generated " << stamp << "\n" << format_report(report);
  if (!out) throw IoError("failed writing report " + path.string());
}

void write_records(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write records " + path.string());
  out << "metric,repetition,value\n";
  for (std::size_t r = 0; r < report.repetitions.size(); ++r) {
    const auto& rep = report.repetitions[r];
    const std::string idx = std::to_string(r + 1);
    out << "acc_at_far," << idx << "," << fmt(rep.metrics.acc) << "\n";
    out << "frr_at_far," << idx << "," << fmt(rep.metrics.frr) << "\n";
    out << "far," << idx << "," << fmt(rep.metrics.far) << "\n";
    out << "auroc," << idx << "," << fmt(rep.auroc) << "\n";
    out << "gamma," << idx << "," << fmt(rep.gamma) << "\n";
  }
  if (!out) throw IoError("failed writing records " + path.string());
}

}  // namespace pkws::eval
