#include "selfeval/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "selfeval/error.hpp"
#include "selfeval/features.hpp"

namespace selfeval {

namespace {

constexpr int kMinHalfLength = 4;   // T = 2 * (4 + k), k in [0, 12)
constexpr int kHalfLengthSpan = 12;
constexpr std::size_t kInstructionTokens = 6;
constexpr std::size_t kMaxAttentionRows = 12;
constexpr std::uint64_t kPromptPoolSize = 8;

struct QuestionContext {
  const SynthSpec& spec;
  const std::string& question_id;
  double log_vocab;
};

std::string format_question_id(int index, int total) {
  const int width = std::max(4, static_cast<int>(std::to_string(total).size()));
  std::string digits = std::to_string(index + 1);
  return "q" + std::string(static_cast<std::size_t>(width) - std::min<std::size_t>(width, digits.size()), '0') +
         digits;
}

int draw_length(SynthRng& rng) {
  return 2 * (kMinHalfLength + static_cast<int>(rng.below(kHalfLengthSpan)));
}

// Steps for one decoded answer at uncertainty level e. `scale` multiplies the
// magnitude of every log-probability.
std::vector<StepRecord> draw_steps(SynthRng& rng, const QuestionContext& ctx, double e, double scale, int length) {
  const double noise = ctx.spec.noise_level;
  std::vector<StepRecord> steps(static_cast<std::size_t>(length));
  for (int t = 0; t < length; ++t) {
    StepRecord& s = steps[static_cast<std::size_t>(t)];
    s.token_text = "w" + std::to_string(rng.below(static_cast<std::uint64_t>(ctx.spec.vocab_size)));
    const double frac = std::clamp(0.05 + 0.75 * e + 0.5 * noise * rng.normal(), 0.0, 1.0);
    s.step_entropy = ctx.log_vocab * frac;
    const double zigzag = (t % 2 == 0) ? 1.5 : 0.5;
    s.token_logprob = -(0.02 + 1.5 * e) * zigzag * scale * std::exp(noise * rng.normal());
  }
  return steps;
}

AttentionEntropyGrid draw_attention(SynthRng& rng, const QuestionContext& ctx, double e, int length) {
  AttentionEntropyGrid grid;
  grid.num_layers = ctx.spec.num_layers;
  grid.num_heads = ctx.spec.num_heads;
  AttentionMatrix block;
  block.rows = std::min<std::size_t>(kMaxAttentionRows, static_cast<std::size_t>(length));
  block.cols = kInstructionTokens;
  block.weights.resize(block.rows * block.cols);
  const double quality_sharpness = 0.5 + 3.0 * std::max(0.0, 1.0 - e);

  for (int l = 0; l < ctx.spec.num_layers; ++l) {
    auto& row = grid.values.emplace_back();
    for (int h = 0; h < ctx.spec.num_heads; ++h) {
      const double head_weight = 0.5 + static_cast<double>((l * ctx.spec.num_heads + h) % 5) / 4.0;
      const double beta = quality_sharpness * head_weight;
      for (std::size_t j = 0; j < block.rows; ++j) {
        double* r = block.weights.data() + j * block.cols;
        double max_logit = -INFINITY;
        for (std::size_t i = 0; i < block.cols; ++i) {
          r[i] = beta * rng.normal();
          max_logit = std::max(max_logit, r[i]);
        }
        double z = 0.0;
        for (std::size_t i = 0; i < block.cols; ++i) {
          r[i] = std::exp(r[i] - max_logit);
          z += r[i];
        }
        for (std::size_t i = 0; i < block.cols; ++i) r[i] = std::min(1.0, r[i] / z);
      }
      row.push_back(attn_entropy(block));
    }
  }
  return grid;
}

Trace make_trace(const QuestionContext& ctx, std::string trace_id, TraceKind kind, std::vector<StepRecord> steps) {
  Trace t;
  t.trace_id = std::move(trace_id);
  t.question_id = ctx.question_id;
  t.model_id = ctx.spec.model_id;
  t.kind = kind;
  t.steps = std::move(steps);
  t.vocab_size = ctx.spec.vocab_size;
  return t;
}

void check_spec(const SynthSpec& spec) {
  if (spec.num_questions < 1) throw ValidationError("synth: num_questions must be ≥ 1");
  if (!std::isfinite(spec.noise_level) || spec.noise_level < 0.0) {
    throw ValidationError("synth: noise_level must be finite and ≥ 0");
  }
  if (spec.ensemble_size < 0) throw ValidationError("synth: ensemble_size must be ≥ 0");
  if (spec.vocab_size < 2) throw ValidationError("synth: vocab_size must be ≥ 2");
  if (spec.num_layers < 0 || (spec.num_layers > 0 && spec.num_heads < 1)) {
    throw ValidationError("synth: num_layers must be ≥ 0, and num_heads ≥ 1 when attention is enabled");
  }
  if (!spec.quality_profile.empty()) {
    if (static_cast<int>(spec.quality_profile.size()) != spec.num_questions) {
      throw ValidationError("synth: quality_profile has " + std::to_string(spec.quality_profile.size()) +
                            " entries but num_questions is " + std::to_string(spec.num_questions));
    }
    for (const auto& [id, u] : spec.quality_profile) {
      if (!(u >= 0.0 && u <= 1.0)) throw ValidationError("synth: quality of '" + id + "' is outside [0, 1]");
    }
  }
}

}  // namespace

SynthRng::SynthRng(std::uint64_t seed) : engine_(seed) {}

double SynthRng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double SynthRng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t SynthRng::below(std::uint64_t n) {
  if (n <= 1) return 0;
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

SynthOutput synth_traces(const SynthSpec& spec) {
  check_spec(spec);

  std::vector<std::pair<std::string, double>> questions;
  if (spec.quality_profile.empty()) {
    SynthRng master(mix_seed(spec.seed, 0));
    for (int i = 0; i < spec.num_questions; ++i) {
      questions.emplace_back(format_question_id(i, spec.num_questions), master.uniform());
    }
  } else {
    questions.assign(spec.quality_profile.begin(), spec.quality_profile.end());
  }

  const double log_vocab = std::log(static_cast<double>(spec.vocab_size));
  SynthOutput out;
  out.records.reserve(questions.size());
  out.annotations.reserve(questions.size());

  for (std::size_t q = 0; q < questions.size(); ++q) {
    const auto& [question_id, quality] = questions[q];
    const QuestionContext ctx{spec, question_id, log_vocab};
    SynthRng rng(mix_seed(spec.seed, q + 1));

    const double bias = spec.noise_level * 0.5 * rng.normal();
    const double e = std::max(0.0, (1.0 - 0.9 * quality) + bias);

    ResponseRecord record;
    record.question_id = question_id;
    record.model_id = spec.model_id;

    const int length = draw_length(rng);
    record.primary = make_trace(ctx, question_id + ":primary", TraceKind::primary,
                                draw_steps(rng, ctx, e, 1.0, length));
    if (spec.num_layers > 0) record.primary.attention = draw_attention(rng, ctx, e, length);

    const int n = spec.ensemble_size;
    for (int k = 0; k < n; ++k) {
      const double spread = n > 1 ? static_cast<double>(k) / static_cast<double>(n - 1) - 0.5 : 0.0;
      const double scale = std::exp(e * (spread + spec.noise_level * rng.normal()));
      const int member_length = draw_length(rng);
      const bool prompt = spec.ensemble_kind == SynthEnsemble::prompt;
      Trace member = make_trace(ctx, question_id + ":ens" + std::to_string(k),
                                prompt ? TraceKind::ensemble_prompt : TraceKind::ensemble_decoding,
                                draw_steps(rng, ctx, e, scale, member_length));
      if (prompt) member.prompt_variant_id = "pool-" + std::to_string(rng.below(kPromptPoolSize));
      record.ensemble.push_back(std::move(member));
    }

    if (spec.with_reference) {
      const double e_ref = std::max(0.0, 0.1 + bias);
      const int ref_length = draw_length(rng);
      Trace ref = make_trace(ctx, question_id + ":ref", TraceKind::reference_forced,
                             draw_steps(rng, ctx, e_ref, 1.0, ref_length));
      if (spec.num_layers > 0) ref.attention = draw_attention(rng, ctx, e_ref, ref_length);
      record.reference = std::move(ref);
    }

    out.records.push_back(std::move(record));
    out.annotations.push_back({question_id, spec.model_id, 1.0 + 9.0 * quality});
  }
  return out;
}

}  // namespace selfeval
