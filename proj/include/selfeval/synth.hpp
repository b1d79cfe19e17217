#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "selfeval/meta_eval.hpp"
#include "selfeval/trace.hpp"

namespace selfeval {

// Pseudo-random source for the generator: the MT19937-64 engine (whose
// output sequence is fixed by the C++ standard) with hand-written uniform
// and normal transforms, because the std distributions differ between
// standard libraries.
class SynthRng {
 public:
  explicit SynthRng(std::uint64_t seed);

  double uniform();                      // [0, 1), 53-bit resolution
  double normal();                       // Box-Muller, one draw per call
  std::uint64_t below(std::uint64_t n);  // [0, n), rejection sampling

 private:
  std::mt19937_64 engine_;
};

// SplitMix64 finalizer, used to derive independent per-question seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

enum class SynthEnsemble { decoding, prompt };

struct SynthSpec {
  int num_questions = 200;
  // question_id -> latent quality in [0, 1]. When empty, qualities are drawn
  // uniformly from the seed and ids are q0001, q0002, ...
  std::map<std::string, double> quality_profile;
  double noise_level = 0.1;
  std::uint64_t seed = 1;
  int ensemble_size = 10;
  std::int64_t vocab_size = 32000;
  SynthEnsemble ensemble_kind = SynthEnsemble::decoding;
  bool with_reference = true;
  int num_layers = 4;  // 0 disables attention grids
  int num_heads = 8;
  std::string model_id = "synth-model";
};

struct SynthOutput {
  std::vector<ResponseRecord> records;
  std::vector<Annotation> annotations;
};

// Generates one record per question from its latent quality u. With the
// uncertainty level e = max(0, (1 - 0.9u) + b), where b ~ noise * 0.5 * N(0,1)
// is a per-question bias shared with the reference:
//   step entropy  = ln V * clamp(0.05 + 0.75 e + 0.5 noise N(0,1), 0, 1)
//   token logprob = -(0.02 + 1.5 e) * (1 + 0.5 z_t) * exp(noise N(0,1))
// where z_t alternates +1/-1 and T is even, so at zero noise Softmax-Ent and
// Softmax-Var are strictly monotone in u. Ensemble member n scales its
// logprobs by exp(e * (xi_n + noise N(0,1))) with xi_n evenly spread over
// [-0.5, 0.5], which makes Unt-Var grow with e. The reference answer uses
// e_ref = max(0, 0.1 + b). Attention grids come from softmax rows whose
// sharpness grows with quality. Gold score = 1 + 9u.
//
// Same SynthSpec -> identical records (and identical bytes once written).
SynthOutput synth_traces(const SynthSpec& spec);

}  // namespace selfeval
