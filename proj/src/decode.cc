#include <algorithm>
#include <map>

#include "amnet/error.h"
#include "amnet/ops.h"
#include "amnet/transducer.h"

namespace amnet {

Hypothesis greedy_decode(const Matrix& enc_logits, DecoderCache& cache,
                         std::size_t max_emissions) {
  Hypothesis hyp;
  for (std::size_t t = 0; t < enc_logits.rows(); ++t) {
    for (std::size_t e = 0; e < max_emissions; ++e) {
      const std::vector<double> lp = joint_log_probs(enc_logits.row_span(t), cache.logits(hyp.labels));
      const std::size_t k = argmax(lp);
      hyp.log_prob += lp[k];
      if (k == kBlank) break;
      hyp.labels.push_back(static_cast<int>(k));
    }
  }
  return hyp;
}

namespace {

struct Candidate {
  std::vector<int> labels;
  double score;
  bool finished;  // emitted blank at the current frame
};

// Merges equal label sequences with log-sum-exp, keeping first-seen order.
void merge_into(std::vector<Candidate>& pool, std::map<std::vector<int>, std::size_t>& index,
                Candidate c) {
  auto it = index.find(c.labels);
  if (it == index.end()) {
    index.emplace(c.labels, pool.size());
    pool.push_back(std::move(c));
  } else {
    pool[it->second].score = log_add_exp(pool[it->second].score, c.score);
  }
}

// Best `width` entries by score; ties keep pool order.
void keep_best(std::vector<Candidate>& pool, std::size_t width) {
  std::stable_sort(pool.begin(), pool.end(),
                   [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
  if (pool.size() > width) pool.resize(width);
}

}  // namespace

Hypothesis beam_search(const Matrix& enc_logits, DecoderCache& cache, std::size_t width,
                       std::size_t max_emissions) {
  AMNET_REQUIRE(width >= 1, "beam_search: width must be at least 1");
  std::vector<Candidate> beam{{{}, 0.0, true}};

  for (std::size_t t = 0; t < enc_logits.rows(); ++t) {
    std::vector<Candidate> active;
    for (Candidate& c : beam) active.push_back({std::move(c.labels), c.score, false});
    std::vector<Candidate> finished;

    for (std::size_t e = 0; e < max_emissions && !active.empty(); ++e) {
      // Finished hypotheses first so that score ties resolve toward blank,
      // matching the greedy argmax.
      std::vector<Candidate> pool;
      std::map<std::vector<int>, std::size_t> finished_index;
      for (Candidate& c : finished) merge_into(pool, finished_index, std::move(c));
      std::vector<std::vector<double>> lps;
      lps.reserve(active.size());
      for (const Candidate& a : active) {
        lps.push_back(joint_log_probs(enc_logits.row_span(t), cache.logits(a.labels)));
        merge_into(pool, finished_index, {a.labels, a.score + lps.back()[kBlank], true});
      }
      std::map<std::vector<int>, std::size_t> active_index;
      std::vector<Candidate> extensions;
      for (std::size_t i = 0; i < active.size(); ++i) {
        for (std::size_t k = 0; k < lps[i].size(); ++k) {
          if (k == kBlank) continue;
          std::vector<int> labels = active[i].labels;
          labels.push_back(static_cast<int>(k));
          merge_into(extensions, active_index, {std::move(labels), active[i].score + lps[i][k], false});
        }
      }
      for (Candidate& c : extensions) pool.push_back(std::move(c));
      keep_best(pool, width);

      finished.clear();
      active.clear();
      for (Candidate& c : pool) (c.finished ? finished : active).push_back(std::move(c));
    }
    // Emission cap reached: carry the remaining hypotheses into the next
    // frame without a blank, as greedy decoding does.
    std::vector<Candidate> next;
    std::map<std::vector<int>, std::size_t> index;
    for (Candidate& c : finished) merge_into(next, index, std::move(c));
    for (Candidate& c : active) merge_into(next, index, {std::move(c.labels), c.score, true});
    keep_best(next, width);
    beam = std::move(next);
  }

  const Candidate& best = beam.front();
  return {best.labels, best.score};
}

std::size_t edit_distance(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double token_error_rate(const std::vector<std::vector<int>>& hyps,
                        const std::vector<std::vector<int>>& refs) {
  AMNET_REQUIRE(hyps.size() == refs.size(), "token_error_rate: hypothesis/reference count mismatch");
  std::size_t errors = 0, total = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    errors += edit_distance(hyps[i], refs[i]);
    total += refs[i].size();
  }
  AMNET_REQUIRE(total > 0, "token_error_rate: references are empty");
  return static_cast<double>(errors) / static_cast<double>(total);
}

}  // namespace amnet
