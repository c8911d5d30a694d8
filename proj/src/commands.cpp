#include "semfuse/commands.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <future>
#include <ostream>
#include <sstream>
#include <thread>

#include "semfuse/checkpoint.hpp"
#include "semfuse/errors.hpp"
#include "semfuse/image_io.hpp"
#include "semfuse/metrics.hpp"
#include "semfuse/suite.hpp"
#include "semfuse/synthetic.hpp"

namespace semfuse::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) throw ConfigError("invalid value for " + key + ": '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError("invalid boolean for " + key + ": '" + value + "'");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

Key size_key(const std::string& name, std::function<std::size_t&(RunConfig&)> ref) {
  return {name, [=](RunConfig& c, const std::string& v) { ref(c) = parse_number<std::size_t>(name, v); },
          [=](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); }};
}

Key real_key(const std::string& name, std::function<double&(RunConfig&)> ref) {
  return {name, [=](RunConfig& c, const std::string& v) { ref(c) = parse_number<double>(name, v); },
          [=](const RunConfig& c) { return fmt_double(ref(const_cast<RunConfig&>(c))); }};
}

Key flag_key(const std::string& name, std::function<bool&(RunConfig&)> ref) {
  return {name, [=](RunConfig& c, const std::string& v) { ref(c) = parse_bool(name, v); },
          [=](const RunConfig& c) { return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

Key path_key(const std::string& name, std::function<std::filesystem::path&(RunConfig&)> ref) {
  return {name, [=](RunConfig& c, const std::string& v) { ref(c) = v; },
          [=](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)).string(); }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      path_key("data", [](RunConfig& c) -> auto& { return c.data; }),
      path_key("out", [](RunConfig& c) -> auto& { return c.out; }),
      path_key("checkpoint", [](RunConfig& c) -> auto& { return c.checkpoint; }),
      path_key("fused", [](RunConfig& c) -> auto& { return c.fused; }),
      size_key("synthetic", [](RunConfig& c) -> auto& { return c.synthetic; }),
      size_key("size", [](RunConfig& c) -> auto& { return c.size; }),
      {"seed",
       [](RunConfig& c, const std::string& v) { c.train.seed = c.prior.seed = parse_number<std::uint64_t>("seed", v); },
       [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      size_key("steps", [](RunConfig& c) -> auto& { return c.train.steps; }),
      size_key("batch", [](RunConfig& c) -> auto& { return c.train.batch; }),
      size_key("distill_epochs", [](RunConfig& c) -> auto& { return c.train.distill_epochs; }),
      size_key("pretrain_epochs", [](RunConfig& c) -> auto& { return c.train.pretrain_epochs; }),
      size_key("crop", [](RunConfig& c) -> auto& { return c.train.crop; }),
      real_key("lr_main", [](RunConfig& c) -> auto& { return c.train.lr_main; }),
      real_key("lr_sub", [](RunConfig& c) -> auto& { return c.train.lr_sub; }),
      real_key("lr_floor", [](RunConfig& c) -> auto& { return c.train.lr_floor; }),
      real_key("clip_norm", [](RunConfig& c) -> auto& { return c.train.clip_norm; }),
      real_key("divergence_factor", [](RunConfig& c) -> auto& { return c.train.divergence_factor; }),
      size_key("top_k", [](RunConfig& c) -> auto& { return c.prior.top_k; }),
      size_key("min_area", [](RunConfig& c) -> auto& { return c.prior.min_area; }),
      {"mask_dir", [](RunConfig& c, const std::string& v) { c.prior.mask_dir = v.empty() ? std::nullopt : std::optional<std::filesystem::path>(v); },
       [](const RunConfig& c) { return c.prior.mask_dir ? c.prior.mask_dir->string() : std::string(); }},
      flag_key("no_sam", [](RunConfig& c) -> auto& { return c.train.ablation.no_sam; }),
      flag_key("no_z", [](RunConfig& c) -> auto& { return c.train.ablation.no_z; }),
      flag_key("no_kv", [](RunConfig& c) -> auto& { return c.train.ablation.no_kv; }),
      flag_key("no_pr", [](RunConfig& c) -> auto& { return c.train.ablation.no_pr; }),
      flag_key("no_fea", [](RunConfig& c) -> auto& { return c.train.ablation.no_fea; }),
      flag_key("no_cont", [](RunConfig& c) -> auto& { return c.train.ablation.no_cont; }),
      flag_key("no_cs", [](RunConfig& c) -> auto& { return c.train.ablation.no_cs; }),
      flag_key("offline", [](RunConfig& c) -> auto& { return c.train.ablation.offline; }),
      {"term", [](RunConfig& c, const std::string& v) { c.term = v; }, [](const RunConfig& c) { return c.term; }},
  };
  return table;
}

std::vector<ImagePair> load_pairs(const RunConfig& c) {
  if (c.synthetic > 0) {
    if (c.size == 0 || c.size % 4 != 0) throw ConfigError("size must be a positive multiple of 4");
    return make_synthetic_pairs(c.synthetic, c.size, c.size, c.train.seed);
  }
  if (c.data.empty()) throw ConfigError("no input: set --data or --synthetic");
  return load_pair_dir(c.data);
}

// Replicate-pads to a multiple of 4 and keeps the centred crop x crop window.
Image training_view(const Image& img, std::size_t crop_extent) {
  const Image padded = pad_to_multiple(img, 4);
  const std::size_t side = std::max<std::size_t>(4, crop_extent / 4 * 4);
  const std::size_t h = std::min(padded.height, side), w = std::min(padded.width, side);
  const std::size_t y0 = (padded.height - h) / 2 / 4 * 4, x0 = (padded.width - w) / 2 / 4 * 4;
  Image out(h, w, padded.channels);
  for (std::size_t c = 0; c < padded.channels; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) out.at(c, y, x) = padded.at(c, y0 + y, x0 + x);
    }
  }
  return out;
}

std::filesystem::path checkpoint_dir(const RunConfig& c) { return c.checkpoint.empty() ? c.out : c.checkpoint; }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void print_params(std::ostream& out, const char* net, const nets::ParameterList& params) {
  std::size_t total = 0;
  for (const auto& [name, t] : params) {
    out << net << ' ' << name << ' ' << shape_str(t.shape()) << ' ' << t.numel() << '\n';
    total += t.numel();
  }
  out << net << " total " << total << '\n';
}

}  // namespace

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  for (const auto& k : keys()) {
    if (k.name == key) {
      k.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_config_text(RunConfig& config, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    try {
      apply_setting(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  try {
    apply_config_text(config, ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& k : keys()) n.push_back(k.name);
    return n;
  }();
  return names;
}

std::string resolved_config(const RunConfig& config) {
  std::ostringstream os;
  os << "# command = " << config.command << '\n';
  for (const auto& k : keys()) os << k.name << " = " << k.get(config) << '\n';
  return os.str();
}

nets::MainNetConfig main_config(const RunConfig& config) {
  nets::MainNetConfig m;
  m.repository = config.train.ablation.repository_mode();
  return m;
}

int cmd_train(const RunConfig& config, std::ostream& out, std::ostream& err) {
  config.train.validate();
  std::vector<ImagePair> pairs = load_pairs(config);
  if (config.synthetic == 0) {
    for (auto& p : pairs) {
      p.vis = training_view(p.vis, config.train.crop);
      p.ir = training_view(p.ir, config.train.crop);
    }
  }
  PriorConfig prior = config.prior;
  prior.random_patches = config.train.ablation.no_sam;
  const std::vector<Sample> samples = prepare_samples(pairs, prior);

  nets::MainNet main(main_config(config), config.train.seed + 1);
  nets::SubNet sub(nets::SubNetConfig{}, config.train.seed + 2);
  const prior::FrozenEncoder encoder;
  const prior::SegmentationHead seg_head(prior::SegmentationHead::kDefaultSeed,
                                         static_cast<std::size_t>(prior.classes));
  train::Trainer trainer(main, sub, config.train, encoder, seg_head);

  const std::size_t pre_steps = config.train.pretrain_epochs * trainer.batches_per_epoch(samples.size());
  if (pre_steps > 0) {
    const auto pre = trainer.pretrain(samples, pre_steps);
    out << "pretrain steps=" << pre_steps << " main " << pre.main_losses.front() << " -> " << pre.main_losses.back()
        << " sub " << pre.sub_losses.front() << " -> " << pre.sub_losses.back() << '\n';
  }
  const auto report = trainer.alternate_train(samples, &out);

  ensure_dir(config.out);
  save_checkpoint(config.out / "main.ckpt", main.parameters(), nets::config_digest(main.config_string()));
  save_checkpoint(config.out / "sub.ckpt", sub.parameters(), nets::config_digest(sub.config_string()));
  write_text(config.out / "train.csv", report.csv());

  if (!report.rows.empty()) {
    const double first = report.rows.front().losses.total_sub, last = report.rows.back().losses.total_sub;
    char line[256];
    std::snprintf(line, sizeof line, "L_s first=%.6g final=%.6g reduction=%.1f%%\n", first, last,
                  100.0 * (first - last) / first);
    out << line;
    for (const auto& e : report.epochs) {
      std::snprintf(line, sizeof line, "epoch=%zu mean_Lds=%.6g mean_abs_diff=%.6g\n", e.epoch, e.mean_total_sub,
                    e.mean_abs_diff);
      out << line;
    }
    if (config.train.ablation.offline) out << "offline final L_s=" << fmt_double(last) << '\n';
  }
  out << "wrote " << (config.out / "main.ckpt").string() << ", " << (config.out / "sub.ckpt").string() << ", "
      << (config.out / "train.csv").string() << '\n';
  if (report.halted) {
    err << "training halted: " << report.halt_reason << '\n';
    return kExitNumerical;
  }
  return kExitOk;
}

int cmd_fuse(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const auto ckpt = checkpoint_dir(config) / "sub.ckpt";
  if (!std::filesystem::exists(ckpt)) {
    err << "missing checkpoint: " << ckpt.string() << '\n';
    return kExitUsage;
  }
  nets::SubNet sub;
  load_checkpoint(ckpt, sub.parameters(), nets::config_digest(sub.config_string()));
  const auto pairs = load_pairs(config);
  ensure_dir(config.out);
  for (const auto& p : pairs) {
    const Image fused = fuse_pair(sub, p.vis, p.ir);
    const auto path = config.out / (p.stem + (fused.channels == 3 ? ".fused.ppm" : ".fused.pgm"));
    save_image(fused, path);
    out << "fused " << path.string() << '\n';
  }
  return kExitOk;
}

int cmd_eval(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const auto pairs = load_pairs(config);
  const std::filesystem::path fused_dir = config.fused.empty() ? config.out : config.fused;
  std::vector<std::filesystem::path> fused_paths;
  std::vector<std::string> missing;
  for (const auto& p : pairs) {
    const auto pgm = fused_dir / (p.stem + ".fused.pgm"), ppm = fused_dir / (p.stem + ".fused.ppm");
    if (std::filesystem::exists(pgm)) {
      fused_paths.push_back(pgm);
    } else if (std::filesystem::exists(ppm)) {
      fused_paths.push_back(ppm);
    } else {
      missing.push_back(pgm.string());
    }
  }
  if (!missing.empty()) {
    err << "missing fused images:";
    for (const auto& m : missing) err << ' ' << m;
    err << '\n';
    return kExitUsage;
  }

  std::vector<metrics::MetricReport> reports(pairs.size());
  std::vector<std::vector<std::string>> warnings(pairs.size());
  const std::size_t workers = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(), 8u));
  for (std::size_t base = 0; base < pairs.size(); base += workers) {
    std::vector<std::future<void>> jobs;
    for (std::size_t i = base; i < std::min(pairs.size(), base + workers); ++i) {
      jobs.push_back(std::async(std::launch::async, [&, i] {
        reports[i] = metrics::evaluate(load_image(fused_paths[i]), pairs[i].vis, pairs[i].ir,
                                       fused_paths[i].string(), &warnings[i]);
      }));
    }
    for (auto& j : jobs) j.get();
  }

  std::ostringstream csv;
  csv << metrics::csv_header() << '\n';
  for (const auto& r : reports) csv << metrics::csv_row(r) << '\n';
  for (const auto& w : warnings) {
    for (const auto& msg : w) err << "warning: " << msg << '\n';
  }
  ensure_dir(config.out);
  write_text(config.out / "metrics.csv", csv.str());
  out << csv.str();
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& config, std::ostream& out, std::ostream&) {
  suite::SuiteOptions opts;
  opts.term = config.term;
  opts.inject_fault = config.inject_fault;
  const auto report = suite::run_gradient_suite(opts);
  out << suite::format_report(report);
  return report.passed ? kExitOk : kExitNumerical;
}

int cmd_info(const RunConfig& config, std::ostream& out, std::ostream&) {
  if (config.size == 0 || config.size % 4 != 0) throw ConfigError("size must be a positive multiple of 4");
  const nets::MainNet main(main_config(config), config.train.seed + 1);
  const nets::SubNet sub(nets::SubNetConfig{}, config.train.seed + 2);
  print_params(out, "main", main.parameters());
  print_params(out, "sub", sub.parameters());

  const Sample s = prepare_sample(make_synthetic_pairs(1, config.size, config.size, config.train.seed).front(),
                                  config.prior);
  NoGradGuard no_grad;
  const auto mo = main.forward(s.vis, s.ir, s.patches_vis, s.patches_ir);
  const auto so = sub.forward(s.vis, s.ir);
  out << "input " << shape_str(s.vis.shape()) << '\n';
  for (std::size_t i = 0; i < mo.feats.size(); ++i) out << "main stage " << i << ' ' << shape_str(mo.feats[i].shape()) << '\n';
  for (std::size_t i = 0; i < so.feats.size(); ++i) out << "sub stage " << i << ' ' << shape_str(so.feats[i].shape()) << '\n';
  out << "output " << shape_str(so.image.shape()) << '\n';
  return kExitOk;
}

int run_command(const RunConfig& config, std::ostream& out, std::ostream& err) {
  try {
    if (config.command == "train") return cmd_train(config, out, err);
    if (config.command == "fuse") return cmd_fuse(config, out, err);
    if (config.command == "eval") return cmd_eval(config, out, err);
    if (config.command == "gradcheck") return cmd_gradcheck(config, out, err);
    if (config.command == "info") return cmd_info(config, out, err);
    err << "unknown command '" << config.command << "'\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "numerical abort: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}

}  // namespace semfuse::cli
