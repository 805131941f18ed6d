#include "pkws/app/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>

#include "pkws/dsp/wav.hpp"
#include "pkws/error.hpp"
#include "pkws/nn/checkpoint.hpp"
#include "pkws/nn/container.hpp"
#include "pkws/train/dataset.hpp"
#include "pkws/train/trainer.hpp"

namespace pkws::app {
namespace {

bool hidden(const fs::path& p) {
  const std::string n = p.filename().string();
  return n.empty() || n[0] == '_' || n[0] == '.';
}

bool is_wav(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".wav";
}

std::vector<fs::path> sorted_wavs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && is_wav(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<fs::path> sorted_subdirs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && !hidden(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void require_dir(const fs::path& p, const std::string& what) {
  if (p.empty()) throw ValidationError(what + " is not set");
  if (!fs::is_directory(p)) throw IoError(what + " " + p.string() + " is not a directory");
}

void require_file(const fs::path& p, const std::string& what) {
  if (p.empty()) throw ValidationError(what + " is not set");
  if (!fs::is_regular_file(p)) throw IoError(what + " " + p.string() + " does not exist");
}

void create_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
}

// FNV-1a; stable across platforms and runs.
std::uint64_t stable_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& l : lines) out << l << "\n";
  if (!out) throw IoError("failed writing " + path.string());
}

void validate_clip(const fs::path& path, const dsp::FrontendConfig& frontend) {
  const dsp::WavData wav = dsp::read_wav(path);
  if (wav.channels != 1) {
    throw ValidationError(path.string() + ": expected mono audio, got " + std::to_string(wav.channels) + " channels");
  }
  if (wav.sample_rate != frontend.sample_rate) {
    throw ValidationError(path.string() + ": expected " + std::to_string(frontend.sample_rate) + " Hz, got " +
                          std::to_string(wav.sample_rate) + " Hz");
  }
}

void check_frontend(const nn::EncoderConfig& enc, const dsp::FrontendConfig& frontend) {
  const int frames = dsp::frame_count(dsp::kClipSamples, frontend);
  if (frames != enc.input_frames || frontend.n_mfcc != enc.input_coeffs) {
    throw ValidationError("frontend produces " + std::to_string(frames) + "x" + std::to_string(frontend.n_mfcc) +
                          " features but the encoder expects " + std::to_string(enc.input_frames) + "x" +
                          std::to_string(enc.input_coeffs));
  }
}

void store_frontend(nn::Container& c, const dsp::FrontendConfig& f) {
  c.meta["frontend.sample_rate"] = std::to_string(f.sample_rate);
  c.meta["frontend.window_ms"] = nn::format_double(f.window_ms);
  c.meta["frontend.hop_fraction"] = nn::format_double(f.hop_fraction);
  c.meta["frontend.n_mels"] = std::to_string(f.n_mels);
  c.meta["frontend.n_mfcc"] = std::to_string(f.n_mfcc);
  c.meta["frontend.log_floor"] = nn::format_double(f.log_floor);
  c.meta["frontend.f_min"] = nn::format_double(f.f_min);
  c.meta["frontend.f_max"] = nn::format_double(f.f_max);
}

dsp::FrontendConfig restore_frontend(const nn::Container& c) {
  dsp::FrontendConfig f;
  f.sample_rate = static_cast<int>(c.meta_int("frontend.sample_rate"));
  f.window_ms = c.meta_double("frontend.window_ms");
  f.hop_fraction = c.meta_double("frontend.hop_fraction");
  f.n_mels = static_cast<int>(c.meta_int("frontend.n_mels"));
  f.n_mfcc = static_cast<int>(c.meta_int("frontend.n_mfcc"));
  f.log_floor = c.meta_double("frontend.log_floor");
  f.f_min = c.meta_double("frontend.f_min");
  f.f_max = c.meta_double("frontend.f_max");
  f.validate();
  return f;
}

Eigen::MatrixXd embed_files(const nn::Encoder& enc, const std::vector<fs::path>& files, const dsp::MfccExtractor& mfcc) {
  std::vector<dsp::FeatureMap> feats;
  for (const auto& f : files) feats.push_back(mfcc(dsp::load_clip(f)));
  return enc.embed(feats);
}

}  // namespace

std::map<std::string, ClassCount> prepare(const AppConfig& cfg, const PrepareOptions& opts, std::ostream& log) {
  require_dir(opts.data_root, "data root");
  if (opts.out_dir.empty()) throw ValidationError("output directory is not set");
  if (!(opts.test_fraction >= 0.0 && opts.test_fraction < 1.0)) throw ValidationError("test fraction must lie in [0, 1)");

  std::set<std::string> testing;
  const fs::path listing = opts.data_root / "testing_list.txt";
  const bool have_listing = fs::is_regular_file(listing);
  if (have_listing) {
    std::ifstream in(listing);
    if (!in) throw IoError("cannot read " + listing.string());
    for (std::string line; std::getline(in, line);) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (!line.empty()) testing.insert(line);
    }
  }

  std::vector<train::ManifestEntry> train_entries, test_entries;
  std::map<std::string, ClassCount> counts;
  const auto classes = sorted_subdirs(opts.data_root);
  if (classes.empty()) throw ValidationError("no class directories under " + opts.data_root.string());
  for (const auto& dir : classes) {
    const std::string name = dir.filename().string();
    const auto files = sorted_wavs(dir);
    if (files.empty()) throw ValidationError("class directory " + dir.string() + " contains no WAV files");
    ClassCount& count = counts[name];
    for (const auto& file : files) {
      validate_clip(file, cfg.frontend);
      const std::string rel = fs::relative(file, opts.data_root).generic_string();
      const bool is_test =
          have_listing ? testing.contains(rel)
                       : static_cast<double>(stable_hash(rel) >> 11) * 0x1.0p-53 < opts.test_fraction;
      (is_test ? test_entries : train_entries).push_back({rel, name});
      ++(is_test ? count.test : count.train);
    }
  }

  create_dir(opts.out_dir);
  // Absolute paths let the manifests live apart from the data.
  const fs::path root = fs::absolute(opts.data_root);
  for (auto* list : {&train_entries, &test_entries}) {
    for (auto& e : *list) e.path = (root / e.path).string();
  }
  train::write_manifest(opts.out_dir / "train.tsv", train_entries);
  train::write_manifest(opts.out_dir / "test.tsv", test_entries);
  write_lines(opts.out_dir / "positive.txt", cfg.eval.protocol.positive);
  write_lines(opts.out_dir / "negative.txt", cfg.eval.protocol.negative);
  write_lines(opts.out_dir / "filler.txt", cfg.eval.protocol.filler);

  log << "class train test\n";
  for (const auto& [name, c] : counts) log << name << " " << c.train << " " << c.test << "\n";
  for (const auto* list : {&cfg.eval.protocol.positive, &cfg.eval.protocol.negative, &cfg.eval.protocol.filler}) {
    for (const auto& name : *list) {
      if (!counts.contains(name)) log << "warning: protocol class '" << name << "' has no directory\n";
    }
  }
  return counts;
}

fs::path train_command(const AppConfig& cfg, const TrainCommandOptions& opts, std::ostream& log) {
  cfg.validate();
  require_file(opts.manifest, "train manifest");
  if (opts.out_dir.empty()) throw ValidationError("checkpoint directory is not set");
  check_frontend(cfg.encoder.build(), cfg.frontend);

  train::Dataset ds = train::Dataset::from_manifest(opts.manifest).drop_classes(cfg.eval.protocol.positive);
  log << "training on " << ds.size() << " utterances from " << ds.num_classes() << " classes\n";

  train::TrainOptions topts;
  topts.loss = cfg.train.loss;
  topts.layout = cfg.train.layout();
  topts.schedule = cfg.train.schedule;
  topts.frontend = cfg.frontend;
  topts.augmentation.apply_probability = cfg.train.augment_probability;
  topts.augmentation.snr_low_db = cfg.train.snr_low_db;
  topts.augmentation.snr_high_db = cfg.train.snr_high_db;
  if (!cfg.train.noise_dir.empty()) {
    require_dir(cfg.train.noise_dir, "noise directory");
    topts.augmentation.noise_pool =
        std::make_shared<const std::vector<dsp::Waveform>>(dsp::load_noise_dir(cfg.train.noise_dir));
  }
  topts.checkpoint_dir = opts.out_dir;
  topts.log_path = opts.out_dir / "train_log.csv";
  const int every = std::max(1, cfg.train.schedule.episodes_per_epoch / 4);
  topts.on_episode = [&](const train::EpisodeRecord& r) {
    if (r.episode % every == 0 || r.episode == cfg.train.schedule.episodes_per_epoch) {
      log << "epoch " << r.epoch << " episode " << r.episode << " loss " << r.loss << " lr " << r.lr << "\n";
    }
  };
  create_dir(opts.out_dir);

  const fs::path last = opts.out_dir / "last.pkws";
  std::optional<train::TrainState> state;
  if (opts.resume && fs::exists(last)) {
    state.emplace(train::load_train_state(last));
    if (!(state->encoder.config() == cfg.encoder.build()) || state->loss.kind != cfg.train.loss.kind) {
      throw ValidationError("checkpoint " + last.string() + " does not match the configured encoder and loss");
    }
    log << "resuming after epoch " << state->epochs_done << "\n";
  } else {
    if (!opts.resume) {
      std::error_code ec;
      fs::remove(topts.log_path, ec);
    }
    state.emplace(nn::Encoder(cfg.encoder.build(), cfg.train.schedule.seed), cfg.train.loss, cfg.train.schedule.seed);
  }
  train::train(*state, ds, topts);

  const fs::path final_path = opts.out_dir / "final.pkws";
  nn::Container c = train::to_container(*state);
  store_frontend(c, cfg.frontend);
  nn::write_container(final_path, c, cfg.train.precision);
  log << "wrote " << final_path.string() << "\n";
  return final_path;
}

fs::path enroll_command(const AppConfig& cfg, const EnrollCommandOptions& opts, std::ostream& log) {
  require_file(opts.checkpoint, "checkpoint");
  require_dir(opts.shots_dir, "shots directory");
  if (opts.output.empty()) throw ValidationError("enrollment output path is not set");
  const nn::Container ckpt = nn::read_container(opts.checkpoint);
  const nn::Encoder encoder = nn::restore_encoder(ckpt);
  check_frontend(encoder.config(), cfg.frontend);
  const dsp::MfccExtractor mfcc(cfg.frontend);
  const int k = cfg.eval.protocol.shots;
  const auto kind = cfg.eval.classifier;

  std::vector<Eigen::MatrixXd> shots;
  openset::EnrollOptions eopts;
  for (const auto& dir : sorted_subdirs(opts.shots_dir)) {
    auto files = sorted_wavs(dir);
    if (static_cast<int>(files.size()) < k) {
      throw ValidationError("keyword directory " + dir.string() + " has " + std::to_string(files.size()) +
                            " clips, fewer than K=" + std::to_string(k));
    }
    files.resize(static_cast<std::size_t>(k));
    shots.push_back(embed_files(encoder, files, mfcc));
    eopts.class_names.push_back(dir.filename().string());
  }
  if (shots.empty()) throw ValidationError("no keyword directories under " + opts.shots_dir.string());

  eopts.normalize = ckpt.meta.count("train.loss") != 0 && train::parse_loss_kind(ckpt.meta_at("train.loss")) == train::LossKind::kAP;
  eopts.tail_size = cfg.eval.protocol.tail_size;
  std::optional<train::DummyProtoGenerator> generator;
  if (kind == openset::ClassifierKind::kOpenNcm) {
    require_dir(opts.filler_dir, "filler directory");
    auto files = sorted_wavs(opts.filler_dir);
    if (static_cast<int>(files.size()) < k) {
      throw ValidationError("filler directory " + opts.filler_dir.string() + " has fewer than K=" + std::to_string(k) + " clips");
    }
    files.resize(static_cast<std::size_t>(k));
    eopts.filler = embed_files(encoder, files, mfcc);
  } else if (kind == openset::ClassifierKind::kDProto) {
    if (!ckpt.contains("generator.w1")) throw ValidationError("checkpoint has no dummy-prototype generator (train with loss DPROTO)");
    generator.emplace(train::DummyProtoGenerator::restore(ckpt));
    eopts.generator = &*generator;
  }
  const openset::Enrollment enr = openset::enroll(shots, kind, eopts);
  if (enr.few_shot_warning) log << "warning: fewer shots than the OpenMAX tail size; tails fit on all shots\n";

  nn::Container out;
  out.meta["kind"] = "enrollment";
  nn::store_encoder(out, encoder);
  store_frontend(out, cfg.frontend);
  openset::store_enrollment(out, enr);
  if (opts.output.has_parent_path()) create_dir(opts.output.parent_path());
  nn::write_container(opts.output, out);
  log << "enrolled " << enr.ways() << " keywords x " << enr.shots << " shots (" << openset::to_string(kind) << ") into "
      << opts.output.string() << "\n";
  return opts.output;
}

InferResult infer_command(const fs::path& enrollment, const fs::path& clip, double gamma) {
  require_file(enrollment, "enrollment file");
  require_file(clip, "clip");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ValidationError("gamma must lie in [0, 1]");
  const nn::Container c = nn::read_container(enrollment);
  if (c.meta.count("kind") == 0 || c.meta_at("kind") != "enrollment") {
    throw ValidationError(enrollment.string() + " is not an enrollment file");
  }
  const nn::Encoder encoder = nn::restore_encoder(c);
  const dsp::FrontendConfig frontend = restore_frontend(c);
  check_frontend(encoder.config(), frontend);
  const openset::Enrollment enr = openset::restore_enrollment(c);
  const dsp::MfccExtractor mfcc(frontend);
  const Eigen::MatrixXd e = embed_files(encoder, {clip}, mfcc);

  InferResult r;
  r.p = openset::score(enr, e.row(0));
  r.label = openset::decide(r.p, gamma);
  r.class_names = enr.class_names;
  r.name = r.label == 0 ? "unknown" : enr.class_names[static_cast<std::size_t>(r.label - 1)];
  return r;
}

void print_inference(const InferResult& r, std::ostream& out) {
  out << "label " << r.name << "\n";
  char buf[64];
  for (std::size_t i = 0; i < r.p.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6f", r.p[i]);
    out << "p" << i << " " << (i == 0 ? std::string("unknown") : r.class_names[i - 1]) << " " << buf << "\n";
  }
}

eval::EvalReport eval_command(const AppConfig& cfg, const EvalCommandOptions& opts, std::ostream& log) {
  cfg.eval.protocol.validate();
  require_file(opts.checkpoint, "checkpoint");
  require_file(opts.enroll_manifest, "enrollment manifest");
  require_file(opts.test_manifest, "test manifest");
  if (opts.out_dir.empty()) throw ValidationError("report directory is not set");
  const nn::Container ckpt = nn::read_container(opts.checkpoint);
  const nn::Encoder encoder = nn::restore_encoder(ckpt);
  check_frontend(encoder.config(), cfg.frontend);

  eval::ClassifierSetup setup;
  setup.kind = cfg.eval.classifier;
  setup.normalize = ckpt.meta.count("train.loss") != 0 && train::parse_loss_kind(ckpt.meta_at("train.loss")) == train::LossKind::kAP;
  std::optional<train::DummyProtoGenerator> generator;
  if (setup.kind == openset::ClassifierKind::kDProto) {
    if (!ckpt.contains("generator.w1")) throw ValidationError("checkpoint has no dummy-prototype generator (train with loss DPROTO)");
    generator.emplace(train::DummyProtoGenerator::restore(ckpt));
    setup.generator = &*generator;
  }
  const train::Dataset enroll_split = train::Dataset::from_manifest(opts.enroll_manifest);
  const train::Dataset test_split = train::Dataset::from_manifest(opts.test_manifest);
  const eval::EvalReport report = eval::run_eval(encoder, setup, cfg.eval.protocol, enroll_split, test_split, cfg.frontend);

  create_dir(opts.out_dir);
  eval::write_report(report, opts.out_dir / "report.txt");
  eval::write_records(report, opts.out_dir / "records.csv");
  log << eval::format_report(report);
  log << "wrote " << (opts.out_dir / "report.txt").string() << " and " << (opts.out_dir / "records.csv").string() << "\n";
  return report;
}

}  // namespace pkws::app
