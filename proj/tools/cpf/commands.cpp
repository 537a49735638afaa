#include "cpf/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "cpf/checkpoint.hpp"
#include "cpf/errors.hpp"
#include "cpf/evaluation.hpp"
#include "cpf/io.hpp"

namespace cpf::cli {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void require_file(const fs::path& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string("missing path for ") + what);
  if (!fs::is_regular_file(p)) throw ConfigError(std::string(what) + " not found: " + p.string());
}

void require_parent(const fs::path& p, const char* what) {
  const fs::path parent = p.has_parent_path() ? p.parent_path() : fs::path(".");
  if (!fs::is_directory(parent)) {
    throw ConfigError(std::string("directory for ") + what + " does not exist: " + parent.string());
  }
}

fs::path or_default(const fs::path& explicit_path, const fs::path& dir, const char* name) {
  if (!explicit_path.empty()) return explicit_path;
  if (dir.empty()) return {};
  return dir / name;
}

unsigned resolve_threads(unsigned flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("CPF_THREADS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<unsigned>(v);
    throw ConfigError(std::string("CPF_THREADS must be a positive integer, got '") + env + "'");
  }
  return 1;
}

void check_vocabulary(const TextEmbeddings& text, const CompositionSpace& space) {
  if (text.attr_names != space.attributes || text.obj_names != space.objects) {
    throw DataError("text embedding vocabulary does not match the split file");
  }
}

void check_header(const FeatureFileHeader& h, const CompositionSpace& space) {
  if (h.num_attributes != space.attributes.size() || h.num_objects != space.objects.size()) {
    throw DataError("feature file declares M=" + std::to_string(h.num_attributes) +
                    ", N=" + std::to_string(h.num_objects) + " but the split file has M=" +
                    std::to_string(space.attributes.size()) +
                    ", N=" + std::to_string(space.objects.size()));
  }
}

FeatureFileHeader header_for(const SynthConfig& c) {
  FeatureFileHeader h;
  h.dim = static_cast<std::uint32_t>(c.dim);
  h.tokens = static_cast<std::uint32_t>(c.tokens);
  h.blocks = static_cast<std::uint32_t>(c.blocks);
  h.text_dim = static_cast<std::uint32_t>(c.text_dim);
  h.num_attributes = static_cast<std::uint32_t>(c.num_attributes);
  h.num_objects = static_cast<std::uint32_t>(c.num_objects);
  return h;
}

std::string train_config_echo(const RunConfig& rc) {
  const TrainConfig& t = rc.train;
  std::ostringstream os;
  os << "epochs=" << t.epochs << "\n"
     << "lr=" << format_double(t.base_lr) << "\n"
     << "decay-factor=" << format_double(t.decay_factor) << "\n"
     << "decay-epoch=" << t.decay_epoch << "\n"
     << "batch-size=" << t.batch_size << "\n"
     << "seed=" << t.seed << "\n"
     << "tau=" << format_double(t.temperature) << "\n"
     << "alpha1=" << format_double(t.alpha_attr) << "\n"
     << "alpha2=" << format_double(t.alpha_obj) << "\n"
     << "ablation=" << to_string(t.ablation) << "\n"
     << "full-train-softmax=" << (t.full_train_softmax ? "true" : "false") << "\n"
     << "train-text=" << (rc.train_text ? "true" : "false") << "\n"
     << "joint-dim=" << t.joint_dim << "\n"
     << "blocks=";
  for (std::size_t i = 0; i < t.shallow_blocks.size(); ++i) {
    os << (i ? "," : "") << t.shallow_blocks[i];
  }
  os << "\n";
  return os.str();
}

// ---- subcommands -----------------------------------------------------------

int cmd_synth(const RunConfig& rc, std::ostream& out) {
  rc.synth.validate();
  fs::create_directories(rc.out);
  const SynthData data = synth_generate(rc.synth);
  const FeatureFileHeader header = header_for(rc.synth);
  write_features(rc.out / "train.cpff", data.train, header);
  write_features(rc.out / "val.cpff", data.val, header);
  write_features(rc.out / "test.cpff", data.test, header);
  write_text_embeddings(rc.out / "text.cpft", data.text);
  write_splits(rc.out / "splits.txt", data.space);

  const std::size_t unseen = data.space.val_unseen.size() + data.space.test_unseen.size();
  out << "compositions: " << data.space.train_seen.size() << " seen / " << unseen
      << " unseen (val " << data.space.val_unseen.size() << ", test "
      << data.space.test_unseen.size() << ")\n"
      << "images: train " << data.train.size() << ", val " << data.val.size() << ", test "
      << data.test.size() << "\n"
      << "wrote " << rc.out.string() << "\n";
  return kSuccess;
}

int cmd_train(RunConfig rc, std::ostream& out) {
  const fs::path features = or_default(rc.features, rc.data_dir, "train.cpff");
  const fs::path splits = or_default(rc.splits, rc.data_dir, "splits.txt");
  const fs::path text_path = rc.words.empty() ? or_default(rc.text, rc.data_dir, "text.cpft") : fs::path();
  const fs::path log_path = rc.log.empty() ? fs::path(rc.out.string() + ".log") : rc.log;
  require_file(features, "training features");
  require_file(splits, "split file");
  if (rc.words.empty()) require_file(text_path, "text embeddings");
  else require_file(rc.words, "word vectors");
  require_parent(rc.out, "checkpoint");
  require_parent(log_path, "training log");

  if (!parse_ablation(rc.ablation, rc.train.ablation)) {
    throw ConfigError("unknown ablation '" + rc.ablation + "'");
  }
  rc.train.validate();

  const CompositionSpace space = load_splits(splits);
  TextEmbeddings text = rc.words.empty() ? load_text_embeddings(text_path)
                                         : text_embeddings_from_words(read_word_table(rc.words), space);
  check_vocabulary(text, space);
  text.frozen = !rc.train_text;
  const FeatureFile file = read_features(features);
  check_header(file.header, space);

  const TrainResult result = train(file.bundles, text, space, rc.train);

  Checkpoint ckpt;
  ckpt.config = train_config_echo(rc);
  ckpt.seed = rc.train.seed;
  ckpt.params = result.params;
  ckpt.adam = result.adam;
  ckpt.text = result.text;
  ckpt.shallow_blocks = rc.train.shallow_blocks;
  write_checkpoint(rc.out, ckpt);
  write_text_file(log_path, "epoch,step,lr,L_com,L_att,L_obj,L_total\n" + result.log.serialize());

  for (const TrainRecord& r : result.log.epochs) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "epoch %zu lr %g L_com %.4f L_att %.4f L_obj %.4f L_total %.4f\n",
                  r.epoch, r.lr, r.losses.composition, r.losses.attribute, r.losses.object,
                  r.losses.total);
    out << buf;
  }
  out << "wrote " << rc.out.string() << " and " << log_path.string() << "\n";
  return kSuccess;
}

int cmd_eval(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  const fs::path features = or_default(rc.features, rc.data_dir, (rc.split + ".cpff").c_str());
  const fs::path splits = or_default(rc.splits, rc.data_dir, "splits.txt");
  const std::optional<Setting> setting = parse_setting(rc.setting);
  if (!setting) throw ConfigError("unknown setting '" + rc.setting + "'");
  const fs::path report_path =
      rc.report.empty() ? fs::path(rc.checkpoint.string() + "." + rc.split + "-" + rc.setting + ".txt")
                        : rc.report;
  require_file(rc.checkpoint, "checkpoint");
  require_file(features, "evaluation features");
  require_file(splits, "split file");
  require_parent(report_path, "report");
  const unsigned threads = resolve_threads(rc.threads);

  const Checkpoint ckpt = read_checkpoint(rc.checkpoint);
  CompositionSpace space = load_splits(splits);
  check_vocabulary(ckpt.text, space);
  if (rc.split == "val") {
    space.test_seen = space.val_seen;
    space.test_unseen = space.val_unseen;
  }
  FeatureFile file = read_features(features);
  check_header(file.header, space);
  std::vector<FeatureBundle> samples = std::move(file.bundles);
  if (!ckpt.shallow_blocks.empty()) samples = select_shallow_blocks(samples, ckpt.shallow_blocks);

  SweepOptions options;
  if (rc.bias_grid > 0) options.bias_grid = rc.bias_grid;
  const EvalReport report =
      evaluate(samples, ckpt.params, ckpt.text, space, *setting, threads, options);
  for (const std::string& w : report.warnings) err << "warning: " << w << "\n";
  write_text_file(report_path, report.serialize());

  out << "setting " << to_string(*setting) << ": " << report.candidates << " candidates ("
      << report.unseen_candidates << " unseen), " << report.images << " images ("
      << report.seen_images << " seen, " << report.unseen_images << " unseen)\n"
      << report.summary_line() << "\n"
      << "wrote " << report_path.string() << "\n";
  return kSuccess;
}

int cmd_gradcheck(const GradcheckOptions& options, std::ostream& out) {
  const std::vector<GradcheckPath> paths = run_gradcheck(options);
  bool ok = true;
  for (const GradcheckPath& p : paths) {
    const bool pass = p.max_rel_error < kGradTolerance;
    ok = ok && pass;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-28s max_rel_err %.3e  seed %llu  %-20s %s\n",
                  p.name.c_str(), p.max_rel_error, static_cast<unsigned long long>(p.worst_seed),
                  p.worst_tensor.c_str(), pass ? "PASS" : "FAIL");
    out << buf;
  }
  out << "gradcheck " << (ok ? "PASS" : "FAIL") << ": " << paths.size() << " paths x "
      << options.seeds << " seeds, eps " << options.eps << ", tolerance " << kGradTolerance
      << "\n";
  return ok ? kSuccess : kFailure;
}

// ---- argument plumbing -----------------------------------------------------

bool flag_given(const std::vector<std::string>& args, const std::string& name) {
  return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
    return a == name || a.rfind(name + "=", 0) == 0;
  });
}

std::optional<std::string> config_path(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return std::nullopt;
}

/// Splices config-file entries in as `--key=value` flags right after the
/// subcommand, skipping keys already given on the command line.
std::vector<std::string> apply_config_file(CLI::App& app, std::vector<std::string> args) {
  const std::optional<std::string> path = config_path(args);
  if (!path || args.empty()) return args;
  CLI::App* sub = app.get_subcommand_no_throw(args.front());
  if (sub == nullptr) return args;
  if (!fs::is_regular_file(*path)) throw ConfigError("config file not found: " + *path);
  std::vector<std::string> injected;
  for (const auto& [key, value] : parse_config_file(read_text_file(*path))) {
    const std::string name = "--" + key;
    if (key == "config" || sub->get_option_no_throw(name) == nullptr) {
      throw ConfigError("unknown config key '" + key + "' for '" + args.front() + "'");
    }
    if (!flag_given(args, name)) injected.push_back(name + "=" + value);
  }
  args.insert(args.begin() + 1, injected.begin(), injected.end());
  return args;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_config_file(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.rfind("--", 0) == 0) key.erase(0, 2);
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  RunConfig rc;
  GradcheckOptions gc;
  std::string config_file;

  CLI::App app("Compositional zero-shot learning with CPF", "cpf");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");

  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic compositional dataset");
  synth->add_option("--config", config_file, "key = value file; flags override it");
  synth->add_option("--M", rc.synth.num_attributes, "Number of attributes")->capture_default_str();
  synth->add_option("--N", rc.synth.num_objects, "Number of objects")->capture_default_str();
  synth->add_option("--D", rc.synth.dim, "Visual feature width")->capture_default_str();
  synth->add_option("--d", rc.synth.text_dim, "Text embedding width")->capture_default_str();
  synth->add_option("--T", rc.synth.tokens, "Patch tokens per image")->capture_default_str();
  synth->add_option("--B", rc.synth.blocks, "Shallow blocks per image")->capture_default_str();
  synth->add_option("--seen-frac", rc.synth.seen_fraction, "Share of compositions that are seen")
      ->capture_default_str();
  synth->add_option("--samples", rc.synth.samples_per_composition, "Images per composition")
      ->capture_default_str();
  synth->add_option("--noise", rc.synth.noise, "Noise level sigma")->capture_default_str();
  synth->add_option("--kappa", rc.synth.dependence, "Attribute-object dependence")
      ->capture_default_str();
  synth->add_option("--foreground", rc.synth.foreground_fraction, "Share of foreground patches")
      ->capture_default_str();
  synth->add_option("--clutter-gain", rc.synth.clutter_gain,
                    "Shallow background amplitude relative to foreground")
      ->capture_default_str();
  synth->add_option("--deep-clutter", rc.synth.deep_clutter,
                    "Distractor share in deep background patches")
      ->capture_default_str();
  synth->add_option("--feature-scale", rc.synth.feature_scale, "Feature magnitude")
      ->capture_default_str();
  synth->add_option("--train-frac", rc.synth.train_fraction,
                    "Share of each seen composition's images used for training")
      ->capture_default_str();
  synth->add_option("--val-unseen-frac", rc.synth.val_unseen_fraction,
                    "Share of unseen compositions held out for validation")
      ->capture_default_str();
  synth->add_option("--seed", rc.synth.seed, "Random seed")->capture_default_str();
  synth->add_option("--out", rc.out, "Output directory")->required();

  CLI::App* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  train_cmd->add_option("--config", config_file, "key = value file; flags override it");
  train_cmd->add_option("--data", rc.data_dir, "Directory with train.cpff, text.cpft, splits.txt");
  train_cmd->add_option("--features", rc.features, "Training feature file (.cpff)");
  train_cmd->add_option("--text", rc.text, "Text embedding file (.cpft)");
  train_cmd->add_option("--words", rc.words, "Word vector table (GloVe text format)");
  train_cmd->add_option("--splits", rc.splits, "Split file");
  train_cmd->add_option("--out", rc.out, "Checkpoint path")->required();
  train_cmd->add_option("--log", rc.log, "Training log path (default <out>.log)");
  train_cmd->add_option("--epochs", rc.train.epochs, "Training epochs")->capture_default_str();
  train_cmd->add_option("--lr", rc.train.base_lr, "Base learning rate")->capture_default_str();
  train_cmd->add_option("--decay-factor", rc.train.decay_factor, "Learning rate decay factor")
      ->capture_default_str();
  train_cmd->add_option("--decay-epoch", rc.train.decay_epoch, "Epoch at which the decay applies")
      ->capture_default_str();
  train_cmd->add_option("--batch-size", rc.train.batch_size, "Images per step")
      ->capture_default_str();
  train_cmd->add_option("--tau", rc.train.temperature, "Softmax temperature")
      ->capture_default_str();
  train_cmd->add_option("--alpha1", rc.train.alpha_attr, "Attribute loss weight")
      ->capture_default_str();
  train_cmd->add_option("--alpha2", rc.train.alpha_obj, "Object loss weight")
      ->capture_default_str();
  train_cmd->add_option("--seed", rc.train.seed, "Random seed")->capture_default_str();
  train_cmd->add_option("--blocks", rc.train.shallow_blocks, "Stored shallow blocks to fuse")
      ->delimiter(',');
  train_cmd->add_option("--ablation", rc.ablation, "full | no-teo | no-teo-oga")
      ->check(CLI::IsMember({"full", "no-teo", "no-teo-oga"}))
      ->capture_default_str();
  train_cmd->add_flag("--full-train-softmax", rc.train.full_train_softmax,
                      "Normalize the composition loss over all M x N pairs");
  train_cmd->add_flag("--train-text", rc.train_text, "Fine-tune the text embeddings");
  train_cmd->add_option("--joint-dim", rc.train.joint_dim,
                        "Composition embedding width (0 = text width)")
      ->capture_default_str();
  train_cmd->add_option("--log-every", rc.train.log_every, "Log every n-th step (0 = epochs only)")
      ->capture_default_str();

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--config", config_file, "key = value file; flags override it");
  eval->add_option("--checkpoint", rc.checkpoint, "Checkpoint path")->required();
  eval->add_option("--data", rc.data_dir, "Directory with <split>.cpff and splits.txt");
  eval->add_option("--features", rc.features, "Feature file to evaluate");
  eval->add_option("--splits", rc.splits, "Split file");
  eval->add_option("--split", rc.split, "test | val")
      ->check(CLI::IsMember({"test", "val"}))
      ->capture_default_str();
  eval->add_option("--setting", rc.setting, "cw | ow")
      ->check(CLI::IsMember({"cw", "ow"}))
      ->capture_default_str();
  eval->add_option("--bias-grid", rc.bias_grid, "Evenly spaced biases instead of exact margins");
  eval->add_option("--threads", rc.threads, "Worker threads (default CPF_THREADS, else 1)");
  eval->add_option("--report", rc.report, "Report path (default <checkpoint>.<split>-<setting>.txt)");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Verify gradients of every loss path");
  gradcheck->add_option("--config", config_file, "key = value file; flags override it");
  gradcheck->add_option("--eps", gc.eps, "Finite-difference step")->capture_default_str();
  gradcheck->add_option("--seeds", gc.seeds, "Random instances")->capture_default_str();
  gradcheck->add_option("--seed", gc.seed, "First seed")->capture_default_str();
  gradcheck->add_flag("--inject-fault", gc.inject_fault,
                      "Use a deliberately wrong softmax backward (negative control)");

  try {
    std::vector<std::string> args = apply_config_file(app, raw_args);
    std::vector<const char*> argv{"cpf"};
    for (const std::string& a : args) argv.push_back(a.c_str());
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
      return app.exit(e, out, err) == 0 ? kSuccess : kUsage;
    }

    if (*synth) return cmd_synth(rc, out);
    if (*train_cmd) return cmd_train(rc, out);
    if (*eval) return cmd_eval(rc, out, err);
    if (*gradcheck) return cmd_gradcheck(gc, out);
    return kUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kDataError;
  } catch (const DimensionError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const IndexError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace cpf::cli
