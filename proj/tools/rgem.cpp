// rgem: build vocabularies, train and apply region-embedding classifiers.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rgem/rgem.hpp"

namespace {

using namespace rgem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Plain `key=value` lines in a --config file apply to the active subcommand.
class SubcommandConfig : public CLI::ConfigBase {
 public:
  std::string subcommand;
  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    auto items = CLI::ConfigBase::from_config(in);
    for (auto& it : items)
      if (it.parents.empty() && !subcommand.empty()) it.parents = {subcommand};
    return items;
  }
};

// ---------------------------------------------------------------------------
// Shared optimizer flags

struct OptimArgs {
  TrainConfig cfg;
  bool nondeterministic = false;
  std::optional<std::size_t> chop;

  void add(CLI::App* app, bool with_dropout) {
    app->add_option("--lr", cfg.lr, "Learning rate")->capture_default_str();
    app->add_option("--momentum", cfg.momentum, "Momentum coefficient")->capture_default_str();
    app->add_flag("--rmsprop", cfg.rmsprop, "Use rmsprop instead of momentum SGD");
    app->add_option("--rmsprop-decay", cfg.rmsprop_decay)->capture_default_str();
    app->add_option("--rmsprop-eps", cfg.rmsprop_eps)->capture_default_str();
    app->add_option("--minibatch", cfg.minibatch, "Documents per update")->capture_default_str();
    app->add_option("--epochs", cfg.epochs)->capture_default_str();
    app->add_option("--chop", chop, "Segment length for LSTM training (BPTT window)");
    app->add_option("--chop-overlap", cfg.chop_overlap, "Warm-up tokens carried into each segment")->capture_default_str();
    if (with_dropout) app->add_option("--dropout", cfg.dropout_rate, "Dropout rate on the top-layer input")->capture_default_str();
    app->add_option("--seed", cfg.seed)->capture_default_str();
    app->add_option("--init-std", cfg.init_std, "Gaussian init standard deviation")->capture_default_str();
    app->add_option("--workers", cfg.workers)->capture_default_str();
    app->add_flag("--nondeterministic", nondeterministic, "Reduce worker gradients in completion order");
    app->add_flag("--verbose", cfg.verbose);
  }
  TrainConfig finish() {
    cfg.chop_len = chop;
    cfg.deterministic = !nondeterministic;
    return cfg;
  }
};

// ---------------------------------------------------------------------------
// Architectures

struct ArchArgs {
  std::string arch = "oh-2lstmp";
  std::optional<std::string> variant;
  std::optional<std::size_t> units, maps;
  std::vector<std::size_t> region;
  std::optional<std::string> conv_input;
  std::string pool = "max";
  std::size_t pool_k = 1;

  static const std::vector<std::string>& names() {
    static const std::vector<std::string> v{"oh-2lstmp", "oh-lstmp", "wv-lstm", "wv-2lstmp", "seq-cnn", "bow-cnn", "multi"};
    return v;
  }
  bool has_lstm() const { return arch != "seq-cnn" && arch != "bow-cnn"; }
  bool has_conv() const { return arch == "seq-cnn" || arch == "bow-cnn" || arch == "multi"; }
  bool word_vectors() const { return arch == "wv-lstm" || arch == "wv-2lstmp"; }

  void add(CLI::App* app, std::size_t def_units, std::size_t def_maps) {
    app->add_option("--arch", arch, "Model architecture")->check(CLI::IsMember(names()))->capture_default_str();
    app->add_option("--variant", variant, "LSTM gates: full or simplified (no input/output gates)")
        ->check(CLI::IsMember({"full", "simplified"}));
    app->add_option("--units", units, "LSTM units per direction (default " + std::to_string(def_units) + ")");
    app->add_option("--maps", maps, "Convolution feature maps (default " + std::to_string(def_maps) + ")");
    app->add_option("--region", region, "Convolution region size; multi accepts several")->check(CLI::PositiveNumber);
    app->add_option("--conv-input", conv_input, "Region input for multi: seq or bow")->check(CLI::IsMember({"seq", "bow"}));
    app->add_option("--pool", pool, "Pooling kind")->check(CLI::IsMember({"max", "avg"}))->capture_default_str();
    app->add_option("--pool-k", pool_k, "Number of pooling regions")->check(CLI::PositiveNumber)->capture_default_str();
    def_units_ = def_units;
    def_maps_ = def_maps;
  }

  void validate(bool wordvec_given, bool chop_given) const {
    if (!has_lstm()) {
      if (units) throw UsageError("--units applies to LSTM architectures; use --maps with " + arch);
      if (variant) throw UsageError("--variant applies to LSTM architectures, not " + arch);
      if (chop_given) throw UsageError("--chop applies to LSTM architectures, not " + arch);
    }
    if (!has_conv()) {
      if (!region.empty()) throw UsageError("--region applies to convolution architectures, not " + arch);
      if (maps) throw UsageError("--maps applies to convolution architectures; use --units with " + arch);
    }
    if (arch != "multi" && conv_input) throw UsageError("--conv-input applies to --arch multi");
    if (arch != "multi" && region.size() > 1) throw UsageError("only --arch multi accepts several --region values");
    if (word_vectors() && !wordvec_given) throw UsageError(arch + " needs --wordvec");
    if (!word_vectors() && wordvec_given) throw UsageError("--wordvec applies to wv-lstm and wv-2lstmp, not " + arch);
  }

  template <typename T>
  Model<T> build(std::size_t vocab_size, std::optional<Matrix<T>> wordvec, double init_std, Rng& rng) const {
    const PoolingSpec ps{pool == "max" ? PoolKind::max : PoolKind::avg, pool_k};
    const std::size_t u = units.value_or(def_units_), m = maps.value_or(def_maps_);
    const auto regions = region.empty() ? std::vector<std::size_t>{3} : region;
    const auto var = [&](LstmVariant def) {
      if (!variant) return def;
      return *variant == "full" ? LstmVariant::full : LstmVariant::simplified;
    };
    Model<T> model;
    if (arch == "oh-2lstmp" || arch == "multi")
      model.branches.push_back(make_lstm_branch<T>(BranchKind::bilstm, var(LstmVariant::simplified), u, vocab_size, ps, init_std, rng));
    else if (arch == "oh-lstmp")
      model.branches.push_back(make_lstm_branch<T>(BranchKind::lstm_forward, var(LstmVariant::full), u, vocab_size, ps, init_std, rng));
    else if (arch == "wv-lstm")
      model.branches.push_back(make_lstm_branch<T>(BranchKind::lstm_forward, var(LstmVariant::full), u, vocab_size, ps, init_std, rng,
                                                   std::move(wordvec)));
    else if (arch == "wv-2lstmp")
      model.branches.push_back(make_lstm_branch<T>(BranchKind::bilstm, var(LstmVariant::full), u, vocab_size, ps, init_std, rng,
                                                   std::move(wordvec)));
    if (has_conv()) {
      RegionInput in = arch == "bow-cnn" ? RegionInput::bow : RegionInput::seq;
      if (conv_input) in = *conv_input == "bow" ? RegionInput::bow : RegionInput::seq;
      for (auto r : regions) model.branches.push_back(make_conv_branch<T>(m, r, in, vocab_size, ps, init_std, rng));
    }
    return model;
  }

 private:
  std::size_t def_units_ = 500, def_maps_ = 1000;
};

// ---------------------------------------------------------------------------
// build-vocab

struct VocabArgs {
  std::string input, out;
  std::size_t size = 30000;
  std::optional<std::string> stopwords;
  bool pretokenized = false;
};

int cmd_build_vocab(const VocabArgs& a) {
  const auto docs = read_token_file(a.input, a.pretokenized);
  auto vocab = build_vocab(docs, a.size);
  if (a.stopwords) vocab = target_vocab(vocab, read_stopword_file(*a.stopwords), a.size);
  std::size_t total = 0, covered = 0;
  for (const auto& d : docs)
    for (const auto& w : d) {
      ++total;
      covered += vocab.find(w).has_value();
    }
  write_vocab_file(a.out, vocab);
  std::printf("vocab_size=%zu coverage=%.2f%%\n", vocab.size(), total ? 100.0 * covered / total : 0.0);
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  ArchArgs arch;
  OptimArgs optim;
  std::string train, labels, vocab, out;
  std::optional<std::string> dev, dev_labels, wordvec;
  double dev_fraction = 0;
  double wordvec_scale = 1.0;
  bool fix_wordvec = false;
  std::vector<std::string> tv;
  std::string target = "zero-one";
  bool pretokenized = false;
};

std::vector<std::shared_ptr<const TvEmbedding<float>>> load_tvs(const std::vector<std::string>& paths, const Vocabulary& vocab) {
  std::vector<std::shared_ptr<const TvEmbedding<float>>> out;
  for (const auto& p : paths) {
    auto e = load_tv<float>(p);
    if (e.vocab_size() != vocab.size() || (e.vocab_hash != 0 && e.vocab_hash != vocab.hash()))
      throw DataError("tv-embedding '" + p + "' was trained on a different vocabulary");
    for (const auto& prev : out)
      if (prev->id == e.id) throw DataError("tv-embedding id '" + e.id + "' appears twice (" + p + ")");
    out.push_back(std::make_shared<const TvEmbedding<float>>(std::move(e)));
  }
  return out;
}

int cmd_train(TrainArgs& a) {
  a.arch.validate(a.wordvec.has_value(), a.optim.chop.has_value());
  if (a.dev.has_value() != a.dev_labels.has_value()) throw UsageError("--dev and --dev-labels go together");
  if (a.dev && a.dev_fraction > 0) throw UsageError("--dev and --dev-fraction are exclusive");
  auto cfg = a.optim.finish();
  cfg.dev_fraction = a.dev_fraction;
  cfg.validate();

  const auto vocab = read_vocab_file(a.vocab);
  LabelMap labels;
  auto train_ds = load_dataset(a.train, a.labels, vocab, labels, true, a.pretokenized);
  std::optional<Dataset> dev_ds;
  if (a.dev) dev_ds = load_dataset(*a.dev, a.dev_labels, vocab, labels, false, a.pretokenized);
  if (a.dev_fraction > 0) {
    auto [tr, dv] = split_dev(train_ds, a.dev_fraction, cfg.seed);
    train_ds = std::move(tr);
    dev_ds = std::move(dv);
  }
  if (labels.size() < 2) throw DataError("training labels name fewer than two classes");

  Rng rng(cfg.seed, Stream::init);
  std::optional<Matrix<float>> wv;
  if (a.wordvec) wv = load_word_vectors<float>(*a.wordvec, vocab, a.wordvec_scale);
  auto model = a.arch.build<float>(vocab.size(), std::move(wv), cfg.init_std, rng);
  for (auto& br : model.branches) br.update_embedding = !a.fix_wordvec;
  const auto tvs = load_tvs(a.tv, vocab);
  if (!tvs.empty())
    for (std::size_t b = 0; b < model.branches.size(); ++b) attach(model, b, tvs, rng, cfg.init_std);
  init_top(model, labels.size(), cfg.dropout_rate, cfg.init_std, rng);
  model.class_names = labels.names();
  model.target_encoding = a.target == "plus-minus" ? TargetEncoding::plus_minus : TargetEncoding::zero_one;

  TrainHooks<float> hooks;
  hooks.log = [](const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); };
  train(model, train_ds, dev_ds ? &*dev_ds : nullptr, cfg, hooks);

  std::map<std::string, std::string> extra{{"arch", a.arch.arch}};
  if (a.optim.chop) extra["chop"] = std::to_string(*a.optim.chop);
  save_model(a.out, ModelBundle<float>{std::move(model), vocab, std::move(extra)});
  std::fprintf(stderr, "wrote %s\n", a.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// train-tv

struct TvArgs {
  OptimArgs optim;
  std::string kind, unlabeled, vocab, out;
  std::optional<std::string> direction, target_vocab, id, cnn_input;
  std::optional<std::size_t> region;
  std::size_t dim = 100, k_next = 5, neg = 10;
  bool pretokenized = false;
};

int cmd_train_tv(TvArgs& a) {
  const bool lstm = a.kind == "lstm";
  if (lstm && (a.region || a.cnn_input)) throw UsageError("--region and --cnn-input apply to --kind cnn");
  if (!lstm && a.direction) throw UsageError("--direction applies to --kind lstm");
  if (!lstm && a.optim.chop) throw UsageError("--chop applies to --kind lstm");
  auto cfg = a.optim.finish();
  cfg.validate();

  const auto vocab = read_vocab_file(a.vocab);
  TvObjectiveSpec spec;
  spec.k_next = a.k_next;
  spec.neg_samples = a.neg;
  spec.direction = a.direction.value_or("fwd") == "bwd" ? Direction::backward : Direction::forward;
  spec.region_size = a.region.value_or(5);
  spec.cnn_input = a.cnn_input.value_or("bow") == "seq" ? RegionInput::seq : RegionInput::bow;
  spec.targets = a.target_vocab ? TargetMap::build(vocab, read_vocab_file(*a.target_vocab)) : TargetMap::identity(vocab.size());
  if (a.target_vocab) spec.targets.hash = read_vocab_file(*a.target_vocab).hash();

  const auto docs = read_token_file(a.unlabeled, a.pretokenized);
  std::vector<TokenSequence> seqs;
  seqs.reserve(docs.size());
  for (const auto& d : docs) seqs.push_back(encode(d, vocab));
  const std::string id = a.id.value_or(std::filesystem::path(a.out).stem().string());

  auto result = lstm ? train_tv_lstm<float>(seqs, vocab.size(), spec, a.dim, cfg, id)
                     : train_tv_cnn<float>(seqs, vocab.size(), spec, a.dim, cfg, id);
  result.emb.vocab_hash = vocab.hash();
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
    std::fprintf(stderr, "tv epoch=%zu loss=%.6f\n", e + 1, result.epoch_loss[e]);
  save_tv(a.out, result.emb);
  std::printf("initial_loss=%.6f final_loss=%.6f\n", result.initial_loss,
              result.epoch_loss.empty() ? result.initial_loss : result.epoch_loss.back());
  return 0;
}

// ---------------------------------------------------------------------------
// eval / predict

struct ApplyArgs {
  std::string model, input;
  std::optional<std::string> labels;
  std::size_t workers = 1;
  bool pretokenized = false;
};

int cmd_eval(const ApplyArgs& a) {
  const auto bundle = load_model<float>(a.model);
  const auto& m = bundle.model;
  LabelMap labels(m.class_names);
  const auto ds = load_dataset(a.input, a.labels, bundle.vocab, labels, false, a.pretokenized);
  const auto scores = model_scores(m, std::span<const TokenSequence>(ds.docs), a.workers);
  const std::size_t C = m.n_classes;
  std::vector<std::vector<std::size_t>> confusion(C, std::vector<std::size_t>(C, 0));
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < ds.docs.size(); ++i) {
    const auto y = *ds.docs[i].label;
    const auto p = predict<float>(scores[i]);
    ++confusion[y][p];
    wrong += p != y;
  }
  const double err = ds.docs.empty() ? 0.0 : 100.0 * static_cast<double>(wrong) / static_cast<double>(ds.docs.size());
  std::printf("error_rate=%.4f\n", err);
  for (std::size_t y = 0; y < C; ++y) {
    std::size_t n = 0;
    for (auto c : confusion[y]) n += c;
    std::printf("class=%s n=%zu", m.class_names[y].c_str(), n);
    for (std::size_t p = 0; p < C; ++p) std::printf(" pred[%s]=%zu", m.class_names[p].c_str(), confusion[y][p]);
    std::printf(" error=%.2f\n", n ? 100.0 * static_cast<double>(n - confusion[y][y]) / static_cast<double>(n) : 0.0);
  }
  return 0;
}

int cmd_predict(const ApplyArgs& a) {
  const auto bundle = load_model<float>(a.model);
  LabelMap labels(bundle.model.class_names);
  const auto ds = load_dataset(a.input, std::nullopt, bundle.vocab, labels, false, a.pretokenized);
  const auto scores = model_scores(bundle.model, std::span<const TokenSequence>(ds.docs), a.workers);
  for (const auto& s : scores) std::printf("%s\n", bundle.model.class_names[predict<float>(s)].c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
  ArchArgs arch;
  std::uint64_t seed = 0;
  std::size_t vocab = 8, classes = 3, length = 7, tv_lstm = 0, tv_cnn = 0, max_coords = 200;
  double init_std = 0.5, eps = 1e-4, threshold = 1e-4;
};

int cmd_gradcheck(GradcheckArgs& a) {
  a.arch.validate(a.arch.word_vectors(), false);
  Rng rng(a.seed, Stream::init);
  std::optional<Matrix<double>> wv;
  if (a.arch.word_vectors()) wv = gaussian_init<double>(3, a.vocab, 1.0, rng);
  auto m = a.arch.build<double>(a.vocab, std::move(wv), a.init_std, rng);
  std::vector<std::shared_ptr<const TvEmbedding<double>>> tvs;
  for (std::size_t j = 0; j < a.tv_lstm + a.tv_cnn; ++j) {
    TvEmbedding<double> e;
    e.id = "tv" + std::to_string(j);
    e.dim = 2;
    if (j < a.tv_lstm) {
      e.kind = TvKind::lstm;
      e.direction = j % 2 ? Direction::backward : Direction::forward;
      e.lstm = LstmParams<double>::random(LstmVariant::full, e.dim, a.vocab, InputKind::one_hot, a.init_std, rng);
    } else {
      e.kind = TvKind::cnn;
      e.region_size = 3;
      e.align_offset = center_offset(3);
      e.conv = ConvParams<double>::random(e.dim, 3, RegionInput::bow, a.vocab, a.init_std, rng);
    }
    tvs.push_back(std::make_shared<const TvEmbedding<double>>(std::move(e)));
  }
  if (!tvs.empty())
    for (std::size_t b = 0; b < m.branches.size(); ++b) attach(m, b, tvs, rng, a.init_std);
  init_top(m, a.classes, 0.0, a.init_std, rng);
  visit_model(m, [&](auto t) {
    if (t.cols == 1)
      for (auto& x : t.data) x = a.init_std * rng.normal();
  });
  TokenSequence doc;
  for (std::size_t t = 0; t < a.length; ++t) doc.ids.push_back(static_cast<WordId>(rng.below(a.vocab)));
  doc.raw_len = a.length;
  doc.label = static_cast<std::uint32_t>(rng.below(a.classes));

  GradCheckOptions opt;
  opt.eps = a.eps;
  opt.threshold = a.threshold;
  opt.max_coords_per_tensor = a.max_coords;
  opt.seed = a.seed;
  const auto rep = grad_check(m, doc, opt);
  std::printf("%s", rep.to_string().c_str());
  return rep.pass ? 0 : 3;
}

std::string find_subcommand(int argc, char** argv, const CLI::App& app) {
  for (int i = 1; i < argc; ++i)
    for (const auto* sub : app.get_subcommands({}))
      if (sub->check_name(argv[i])) return sub->get_name();
  return {};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Region-embedding text classifier: one-hot LSTM/CNN training with tv-embeddings"};
  app.require_subcommand(1);
  app.set_config("--config", "", "File of key=value lines; explicit flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);
  auto cfg_reader = std::make_shared<SubcommandConfig>();
  app.config_formatter(cfg_reader);

  VocabArgs va;
  auto* bv = app.add_subcommand("build-vocab", "Build a frequency-ranked vocabulary from a token file");
  bv->add_option("--input", va.input, "One document per line")->required();
  bv->add_option("--out", va.out)->required();
  bv->add_option("--size", va.size, "Maximum vocabulary size")->check(CLI::PositiveNumber)->capture_default_str();
  bv->add_option("--stopwords", va.stopwords, "Drop these words (target vocabulary for train-tv)");
  bv->add_flag("--pretokenized", va.pretokenized, "Split on whitespace only");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a classifier");
  ta.arch.add(tr, 500, 1000);
  ta.optim.add(tr, true);
  tr->add_option("--train", ta.train, "Training token file")->required();
  tr->add_option("--labels", ta.labels, "Training label file")->required();
  tr->add_option("--vocab", ta.vocab, "Vocabulary file from build-vocab")->required();
  tr->add_option("--dev", ta.dev, "Development token file");
  tr->add_option("--dev-labels", ta.dev_labels);
  tr->add_option("--dev-fraction", ta.dev_fraction, "Hold out this fraction of --train as dev data")
      ->check(CLI::Range(0.0, 0.99));
  tr->add_option("--tv", ta.tv, "tv-embedding file to attach (repeatable)");
  tr->add_option("--wordvec", ta.wordvec, "Word-vector text file for wv-* architectures");
  tr->add_option("--wordvec-scale", ta.wordvec_scale)->capture_default_str();
  tr->add_flag("--fix-wordvec", ta.fix_wordvec, "Keep word vectors fixed during training");
  tr->add_option("--target", ta.target, "Square-loss target encoding")
      ->check(CLI::IsMember({"zero-one", "plus-minus"}))
      ->capture_default_str();
  tr->add_flag("--pretokenized", ta.pretokenized);
  tr->add_option("--out", ta.out)->required();

  TvArgs tva;
  auto* tt = app.add_subcommand("train-tv", "Train a tv-embedding on unlabeled text");
  tva.optim.cfg.lr = 0.1;
  tva.optim.cfg.epochs = 10;
  tva.optim.cfg.minibatch = 10;
  tva.optim.cfg.init_std = 0.1;
  tva.optim.add(tt, false);
  tt->add_option("--kind", tva.kind)->check(CLI::IsMember({"lstm", "cnn"}))->required();
  tt->add_option("--direction", tva.direction, "lstm: predict following (fwd) or preceding (bwd) words")
      ->check(CLI::IsMember({"fwd", "bwd"}));
  tt->add_option("--region", tva.region, "cnn: region size (default 5)")->check(CLI::PositiveNumber);
  tt->add_option("--cnn-input", tva.cnn_input, "cnn: region input seq or bow (default bow)")->check(CLI::IsMember({"seq", "bow"}));
  tt->add_option("--dim", tva.dim)->check(CLI::PositiveNumber)->capture_default_str();
  tt->add_option("--k-next", tva.k_next, "Words predicted on each side")->check(CLI::PositiveNumber)->capture_default_str();
  tt->add_option("--neg", tva.neg, "Negative samples per position")->capture_default_str();
  tt->add_option("--vocab", tva.vocab, "Input vocabulary file")->required();
  tt->add_option("--target-vocab", tva.target_vocab, "Vocabulary of prediction targets (default: --vocab)");
  tt->add_option("--unlabeled", tva.unlabeled)->required();
  tt->add_option("--id", tva.id, "Embedding id (default: output file stem)");
  tt->add_flag("--pretokenized", tva.pretokenized);
  tt->add_option("--out", tva.out)->required();

  ApplyArgs ea;
  auto* ev = app.add_subcommand("eval", "Report the error rate of a model on labeled data");
  ev->add_option("--model", ea.model)->required();
  ev->add_option("--test", ea.input)->required();
  ev->add_option("--labels", ea.labels)->required();
  ev->add_option("--workers", ea.workers)->check(CLI::PositiveNumber);
  ev->add_flag("--pretokenized", ea.pretokenized);

  ApplyArgs pa;
  auto* pr = app.add_subcommand("predict", "Print the predicted class of every input line");
  pr->add_option("--model", pa.model)->required();
  pr->add_option("--input", pa.input)->required();
  pr->add_option("--workers", pa.workers)->check(CLI::PositiveNumber);
  pr->add_flag("--pretokenized", pa.pretokenized);

  GradcheckArgs ga;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of analytic gradients on a random model");
  ga.arch.add(gc, 3, 3);
  gc->add_option("--seed", ga.seed)->capture_default_str();
  gc->add_option("--vocab-size", ga.vocab)->check(CLI::PositiveNumber)->capture_default_str();
  gc->add_option("--classes", ga.classes)->check(CLI::PositiveNumber)->capture_default_str();
  gc->add_option("--length", ga.length, "Document length")->capture_default_str();
  gc->add_option("--tv-lstm", ga.tv_lstm, "Attach this many random LSTM tv-embeddings")->capture_default_str();
  gc->add_option("--tv-cnn", ga.tv_cnn, "Attach this many random CNN tv-embeddings")->capture_default_str();
  gc->add_option("--init-std", ga.init_std)->capture_default_str();
  gc->add_option("--eps", ga.eps)->capture_default_str();
  gc->add_option("--threshold", ga.threshold)->capture_default_str();
  gc->add_option("--max-coords", ga.max_coords, "Coordinates sampled per tensor (0 = all)")->capture_default_str();

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();
  cfg_reader->subcommand = find_subcommand(argc, argv, app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (bv->parsed()) return cmd_build_vocab(va);
    if (tr->parsed()) return cmd_train(ta);
    if (tt->parsed()) return cmd_train_tv(tva);
    if (ev->parsed()) return cmd_eval(ea);
    if (pr->parsed()) return cmd_predict(pa);
    if (gc->parsed()) return cmd_gradcheck(ga);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  } catch (const ContractError& e) {
    std::fprintf(stderr, "invalid configuration: %s\n", e.what());
    return 1;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
