#include "d2l/clmethods/training.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <set>
#include <tuple>

#include "d2l/nncore/optimizer.hpp"

namespace d2l {

const char* method_name(Method m) {
  switch (m) {
    case Method::finetune:
      return "finetune";
    case Method::er:
      return "er";
    case Method::er_ace:
      return "er-ace";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  if (s == "finetune") return Method::finetune;
  if (s == "er") return Method::er;
  if (s == "er-ace") return Method::er_ace;
  throw PreconditionError("unknown method '" + s + "'");
}

const char* strategy_name(DreamStrategy s) {
  switch (s) {
    case DreamStrategy::none:
      return "none";
    case DreamStrategy::d2l_replace:
      return "d2l-replace";
    case DreamStrategy::at_beginning:
      return "at-beginning";
    case DreamStrategy::incremental:
      return "incremental";
  }
  return "?";
}

DreamStrategy parse_strategy(const std::string& s) {
  if (s == "none") return DreamStrategy::none;
  if (s == "d2l-replace") return DreamStrategy::d2l_replace;
  if (s == "at-beginning") return DreamStrategy::at_beginning;
  if (s == "incremental") return DreamStrategy::incremental;
  throw PreconditionError("unknown dream strategy '" + s + "'");
}

void MethodConfig::validate() const {
  if (batch_size == 0) throw PreconditionError("batch_size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw PreconditionError("learning_rate must be >= 0");
  if (!(dream_ratio >= 0.0)) throw PreconditionError("dream_ratio must be >= 0");
  if (strategy != DreamStrategy::none && !use_dreams) {
    throw PreconditionError("dream strategy '" + std::string(strategy_name(strategy)) + "' requires dream usage");
  }
}

DreamPool DreamPool::from(SampleSet samples) {
  DreamPool p;
  std::set<std::size_t> heads(samples.labels.begin(), samples.labels.end());
  p.heads.assign(heads.begin(), heads.end());
  p.rows_of.resize(p.heads.size());
  for (std::size_t r = 0; r < samples.size(); ++r) {
    const auto k = static_cast<std::size_t>(std::lower_bound(p.heads.begin(), p.heads.end(), samples.labels[r]) - p.heads.begin());
    p.rows_of[k].push_back(r);
  }
  p.samples = std::move(samples);
  return p;
}

std::vector<std::size_t> union_heads(std::initializer_list<std::span<const std::size_t>> parts) {
  std::set<std::size_t> s;
  for (auto p : parts) s.insert(p.begin(), p.end());
  return {s.begin(), s.end()};
}

namespace {

LossTerms combine(Tape& t, Var ce, std::optional<Var> lb, std::span<const std::size_t> y_buf, const HeadTable& table) {
  LossTerms out{ce, ce, std::nullopt};
  if (lb) {
    const auto seen_real = table.real_heads();
    out.cl = masked_cross_entropy(t, *lb, y_buf, seen_real);
    out.total = add(t, ce, *out.cl);
  }
  return out;
}

}  // namespace

LossTerms er_loss(Tape& t, Var logits_stream, std::span<const std::size_t> y_stream, std::optional<Var> logits_buf,
                  std::span<const std::size_t> y_buf, const HeadTable& table,
                  std::span<const std::size_t> /*current_task_heads*/) {
  const auto real = table.real_heads();
  const auto dream = table.dream_heads();
  const auto mask = union_heads({real, dream});
  return combine(t, masked_cross_entropy(t, logits_stream, y_stream, mask), logits_buf, y_buf, table);
}

LossTerms er_ace_loss(Tape& t, Var logits_stream, std::span<const std::size_t> y_stream, std::optional<Var> logits_buf,
                      std::span<const std::size_t> y_buf, const HeadTable& table,
                      std::span<const std::size_t> current_task_heads) {
  const auto dream = table.dream_heads();
  const auto mask = union_heads({current_task_heads, dream, y_stream});
  return combine(t, masked_cross_entropy(t, logits_stream, y_stream, mask), logits_buf, y_buf, table);
}

void write_epoch_csv(std::ostream& out, const std::string& run_id, const TrainLog& log, bool header) {
  if (header) out << "run_id,task,epoch,phase,loss_ce,loss_cl,train_acc\n";
  for (const EpochLog& e : log.epochs) {
    out << run_id << ',' << e.task << ',' << e.epoch << ',' << e.phase << ',' << e.loss_ce << ',' << e.loss_cl << ','
        << e.train_acc << '\n';
  }
}

namespace {

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::bootstrap:
      return "bootstrap";
    case Phase::dream_finetune:
      return "dream-finetune";
    case Phase::continual:
      return "continual";
  }
  return "?";
}

std::size_t argmax_over(const Tensor& logits, std::size_t row, std::span<const std::size_t> heads) {
  std::size_t best = heads[0];
  for (std::size_t h : heads)
    if (logits.at(row, h) > logits.at(row, best)) best = h;
  return best;
}

}  // namespace

void train_task(TrainContext& ctx, const SampleSet& train, const MethodConfig& cfg, Phase phase) {
  cfg.validate();
  if (train.empty()) throw PreconditionError("train_task: empty training set");
  const bool with_dreams = phase != Phase::bootstrap && ctx.dreams != nullptr && !ctx.dreams->empty();
  if (phase == Phase::dream_finetune && !with_dreams) throw PreconditionError("dream fine-tune needs dream samples");
  if (cfg.use_dreams && cfg.strategy != DreamStrategy::none && phase == Phase::continual && !with_dreams &&
      !ctx.table.dream_heads().empty()) {
    throw PreconditionError("train_task: dream heads are active but no dream samples were supplied");
  }

  std::vector<std::size_t> current_heads;
  for (std::size_t c : ctx.current_classes) current_heads.push_back(ctx.table.require_real(c));
  std::sort(current_heads.begin(), current_heads.end());
  const auto dream_heads = ctx.table.dream_heads();
  const auto real_heads = ctx.table.real_heads();

  Optimizer opt(OptimizerKind::sgd, cfg.learning_rate);
  const bool rehearse = phase == Phase::continual && cfg.method != Method::finetune;
  const bool insert = phase != Phase::dream_finetune;

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[ctx.data_rng.below(i + 1)]);
    double sum_ce = 0.0, sum_cl = 0.0;
    std::size_t steps = 0, correct = 0;

    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), s + cfg.batch_size);
      const std::span<const std::size_t> rows(order.data() + s, e - s);
      SampleSet stream = train.subset(rows);
      const std::size_t n_real = stream.size();
      for (std::size_t& y : stream.labels) y = ctx.table.require_real(y);

      if (with_dreams) {
        const auto n_dream = static_cast<std::size_t>(std::lround(cfg.dream_ratio * static_cast<double>(n_real)));
        std::vector<std::size_t> picks(n_dream);
        for (auto& r : picks) {
          const std::size_t k = ctx.dream_rng.below(ctx.dreams->heads.size());
          r = ctx.dreams->rows_of[k][ctx.dream_rng.below(ctx.dreams->rows_of[k].size())];
        }
        stream.append(ctx.dreams->samples.subset(picks));
      }

      std::optional<SampleSet> rehearsal;
      if (rehearse && !ctx.buffer.empty()) {
        rehearsal = ctx.buffer.sample_rehearsal(cfg.batch_size, ctx.data_rng);
        for (std::size_t& y : rehearsal->labels) y = ctx.table.require_real(y);
      }

      ctx.net.zero_grad();
      Tape t;
      const Var ls = ctx.net.forward(t, t.constant_ref(stream.images)).logits;
      std::optional<Var> lb;
      if (rehearsal) lb = ctx.net.forward(t, t.constant_ref(rehearsal->images)).logits;

      LossTerms loss{};
      std::vector<std::size_t> stream_mask;
      switch (phase) {
        case Phase::bootstrap:
          stream_mask = current_heads;
          loss.ce = loss.total = masked_cross_entropy(t, ls, stream.labels, stream_mask);
          break;
        case Phase::dream_finetune:
          stream_mask = union_heads({current_heads, dream_heads});
          loss.ce = loss.total = masked_cross_entropy(t, ls, stream.labels, stream_mask);
          break;
        case Phase::continual:
          if (cfg.method == Method::er_ace) {
            stream_mask = union_heads({current_heads, dream_heads, stream.labels});
            loss = er_ace_loss(t, ls, stream.labels, lb, rehearsal ? rehearsal->labels : std::vector<std::size_t>{},
                               ctx.table, current_heads);
          } else if (cfg.method == Method::er) {
            stream_mask = union_heads({real_heads, dream_heads});
            loss = er_loss(t, ls, stream.labels, lb, rehearsal ? rehearsal->labels : std::vector<std::size_t>{},
                           ctx.table, current_heads);
          } else {
            stream_mask = union_heads({real_heads, dream_heads});
            loss.ce = loss.total = masked_cross_entropy(t, ls, stream.labels, stream_mask);
          }
          break;
      }
      const StepLoss sl{t.value(loss.ce)[0], loss.cl ? t.value(*loss.cl)[0] : 0.0};
      if (!std::isfinite(sl.ce) || !std::isfinite(sl.cl)) throw NumericError("train_task: non-finite loss");
      if (ctx.log) ctx.log->steps.push_back(sl);
      sum_ce += sl.ce;
      sum_cl += sl.cl;
      ++steps;

      const Tensor& lv = t.value(ls);
      for (std::size_t i = 0; i < n_real; ++i) correct += argmax_over(lv, i, stream_mask) == stream.labels[i];

      t.backward(loss.total);
      const auto params = ctx.net.parameters();
      opt.step(params);

      if (insert && (cfg.cadence == InsertCadence::every_epoch || epoch == 0)) {
        for (std::size_t r : rows) {
          ReplayItem item;
          const auto img = train.images.row(r);
          item.image.assign(img.begin(), img.end());
          item.label = train.labels[r];
          ctx.buffer.reservoir_insert(std::move(item), ctx.data_rng);
        }
      }
    }
    if (ctx.log) {
      ctx.log->epochs.push_back({ctx.task, epoch, phase_name(phase), sum_ce / static_cast<double>(steps),
                                 sum_cl / static_cast<double>(steps),
                                 static_cast<double>(correct) / static_cast<double>(train.size())});
    }
  }
}

double accuracy(const Network& net, const SampleSet& set, const HeadTable& table, std::span<const std::size_t> heads) {
  if (set.empty()) throw PreconditionError("accuracy: empty set");
  if (heads.empty()) throw PreconditionError("accuracy: no heads to evaluate over");
  const Tensor logits = net.infer(set.images).logits;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto h = table.head_of_real(set.labels[i]);
    correct += h && argmax_over(logits, i, heads) == *h;
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

std::vector<std::vector<double>> head_likelihoods(const Network& net, const SampleSet& data,
                                                  std::span<const std::size_t> classes,
                                                  std::span<const std::size_t> heads) {
  const Tensor probs = softmax_rows(net.infer(data.images).logits);
  std::vector<std::vector<double>> lik(classes.size(), std::vector<double>(heads.size(), 0.0));
  for (std::size_t i = 0; i < classes.size(); ++i) {
    std::size_t n = 0;
    for (std::size_t r = 0; r < data.size(); ++r) {
      if (data.labels[r] != classes[i]) continue;
      ++n;
      for (std::size_t k = 0; k < heads.size(); ++k) lik[i][k] += probs.at(r, heads[k]);
    }
    if (n == 0) throw PreconditionError("head_likelihoods: class " + std::to_string(classes[i]) + " has no samples");
    for (double& v : lik[i]) v /= static_cast<double>(n);
  }
  return lik;
}

std::vector<std::pair<std::size_t, std::size_t>> greedy_assignment(const std::vector<std::vector<double>>& lik) {
  const std::size_t rows = lik.size(), cols = rows ? lik[0].size() : 0;
  std::vector<char> row_used(rows, 0), col_used(cols, 0);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t round = 0; round < std::min(rows, cols); ++round) {
    std::size_t bi = rows, bk = cols;
    for (std::size_t i = 0; i < rows; ++i) {
      if (row_used[i]) continue;
      for (std::size_t k = 0; k < cols; ++k) {
        if (col_used[k]) continue;
        if (bi == rows || lik[i][k] > lik[bi][bk]) {
          bi = i;
          bk = k;
        }
      }
    }
    row_used[bi] = col_used[bk] = 1;
    out.emplace_back(bi, bk);
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> optimal_assignment(const std::vector<std::vector<double>>& lik) {
  const std::size_t rows = lik.size(), cols = rows ? lik[0].size() : 0;
  if (rows == 0 || cols == 0) return {};
  if (rows > cols) {
    std::vector<std::vector<double>> tr(cols, std::vector<double>(rows));
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t k = 0; k < cols; ++k) tr[k][i] = lik[i][k];
    auto out = optimal_assignment(tr);
    for (auto& [a, b] : out) std::swap(a, b);
    std::sort(out.begin(), out.end());
    return out;
  }
  if (rows > 20) throw PreconditionError("optimal_assignment: too many classes");
  // Bitmask DP over rows, scanning columns once: every row gets a column.
  const std::size_t full = (std::size_t{1} << rows) - 1;
  const double neg = -std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> dp(cols + 1, std::vector<double>(full + 1, neg));
  dp[0][0] = 0.0;
  for (std::size_t k = 0; k < cols; ++k) {
    for (std::size_t m = 0; m <= full; ++m) {
      if (dp[k][m] == neg) continue;
      dp[k + 1][m] = std::max(dp[k + 1][m], dp[k][m]);
      for (std::size_t i = 0; i < rows; ++i) {
        if (m >> i & 1) continue;
        const std::size_t nm = m | (std::size_t{1} << i);
        dp[k + 1][nm] = std::max(dp[k + 1][nm], dp[k][m] + lik[i][k]);
      }
    }
  }
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t m = full;
  for (std::size_t k = cols; k > 0; --k) {
    if (dp[k][m] == dp[k - 1][m]) continue;
    for (std::size_t i = 0; i < rows; ++i) {
      if (!(m >> i & 1)) continue;
      const std::size_t pm = m & ~(std::size_t{1} << i);
      if (dp[k - 1][pm] != neg && dp[k - 1][pm] + lik[i][k - 1] == dp[k][m]) {
        out.emplace_back(i, k - 1);
        m = pm;
        break;
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> brute_force_assignment(const std::vector<std::vector<double>>& lik) {
  const std::size_t rows = lik.size(), cols = rows ? lik[0].size() : 0;
  const std::size_t size = std::min(rows, cols);
  std::vector<std::pair<std::size_t, std::size_t>> best, cur;
  // likelihood descending, then lower class, then lower head
  using Key = std::vector<std::tuple<double, long, long>>;
  Key best_key;
  std::vector<char> col_used(cols, 0);
  std::function<void(std::size_t)> rec = [&](std::size_t i) {
    if (cur.size() + (rows - i) < size) return;
    if (i == rows) {
      if (cur.size() != size) return;
      Key key;
      for (auto [r, c] : cur) key.emplace_back(lik[r][c], -static_cast<long>(r), -static_cast<long>(c));
      std::sort(key.begin(), key.end(), std::greater<>());
      if (best.empty() || key > best_key) {
        best_key = key;
        best = cur;
      }
      return;
    }
    for (std::size_t k = 0; k < cols; ++k) {
      if (col_used[k] || cur.size() == size) continue;
      col_used[k] = 1;
      cur.emplace_back(i, k);
      rec(i + 1);
      cur.pop_back();
      col_used[k] = 0;
    }
    rec(i + 1);  // row left without a dream head
  };
  rec(0);
  std::sort(best.begin(), best.end());
  return best;
}

RealAssignment assign_real_classes(const Network& net, const SampleSet& data, std::span<const std::size_t> classes,
                                   HeadTable& table, AssignmentRule rule) {
  RealAssignment out;
  out.candidate_heads = table.dream_heads();
  std::vector<char> placed(classes.size(), 0);
  if (!out.candidate_heads.empty()) {
    out.likelihood = head_likelihoods(net, data, classes, out.candidate_heads);
    const auto pairs = rule == AssignmentRule::greedy ? greedy_assignment(out.likelihood) : optimal_assignment(out.likelihood);
    for (auto [i, k] : pairs) {
      const std::size_t head = out.candidate_heads[k];
      if (const auto evicted = table.assign_real(head, classes[i])) out.removed_dreams.push_back(*evicted);
      out.class_to_head.emplace_back(classes[i], head);
      placed[i] = 1;
    }
  }
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (placed[i]) continue;
    const auto free = table.free_heads();
    if (free.empty()) throw PreconditionError("assign_real_classes: no dream or free head left");
    table.assign_real(free.front(), classes[i]);
    out.class_to_head.emplace_back(classes[i], free.front());
  }
  table.check_invariants();
  return out;
}

}  // namespace d2l
