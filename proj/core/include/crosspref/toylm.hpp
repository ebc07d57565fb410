#pragma once

// A small fixed-window feed-forward language model with exact
// log-probabilities and analytic gradients. It plays both the policy being
// tuned and the frozen reference.
//
// Architecture, for each completion position:
//   window = last `context` tokens of [<bos>] + prompt + completion-prefix,
//            left-padded with <pad>
//   x      = concat(embed[window[0]], ..., embed[window[n-1]])   (n*d)
//   hidden = tanh(w_hidden * x + b_hidden)                       (h)
//   logits = w_out * hidden + b_out                               (V)

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "crosspref/corpus.hpp"
#include "crosspref/random.hpp"

namespace crosspref {

// Reserved token indices of every toy vocabulary.
inline constexpr TokenId kBos = 0;
inline constexpr TokenId kEos = 1;
inline constexpr TokenId kPad = 2;

class Vocab {
 public:
  // tokens[0..2] must be "<bos>", "<eos>", "<pad>"; tokens are unique; size >= 4.
  explicit Vocab(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Whitespace tokenization; unknown words throw DataError.
  std::vector<TokenId> encode(std::string_view text) const;
  // Space-joined token strings; out-of-range ids throw DataError.
  std::string decode(std::span<const TokenId> ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// vocab.json maps token strings to indices.
Vocab load_vocab(const std::filesystem::path& path);
void save_vocab(const std::filesystem::path& path, const Vocab& vocab);

// Throws DataError when the response's token ids do not decode to its text.
void check_decodes(const Vocab& vocab, const Response& response);

struct ModelShape {
  int vocab_size = 64;
  int embed_dim = 8;
  int hidden_dim = 32;
  int context = 6;

  int input_dim() const { return embed_dim * context; }
  void validate() const;
  bool operator==(const ModelShape&) const = default;
};

// Parameter tensors, also used as the gradient type. The flat order is
// embed, w_hidden, b_hidden, w_out, b_out, each column-major.
struct Params {
  Eigen::MatrixXd embed;     // V x d
  Eigen::MatrixXd w_hidden;  // h x (n*d)
  Eigen::VectorXd b_hidden;  // h
  Eigen::MatrixXd w_out;     // V x h
  Eigen::VectorXd b_out;     // V

  static Params zeros(const ModelShape& shape);

  std::size_t size() const;
  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> flat);
  double& flat(std::size_t i);
  double flat(std::size_t i) const;

  Params& operator+=(const Params& o);
  Params& operator*=(double a);
  void axpy(double a, const Params& x);  // this += a * x
  double dot(const Params& o) const;
  double squared_norm() const;
  bool all_finite() const;
  void set_zero();
};

class ToyPolicy {
 public:
  // All-zero parameters: the uniform distribution at every step.
  ToyPolicy(std::string id, ModelShape shape);

  // Gaussian init with standard deviation `scale`.
  static ToyPolicy random(std::string id, ModelShape shape, std::uint64_t seed,
                          double scale = 0.1);

  const std::string& id() const { return id_; }
  void set_id(std::string id) { id_ = std::move(id); }
  const ModelShape& shape() const { return shape_; }
  const Params& params() const { return params_; }
  Params& params() { return params_; }

  Eigen::VectorXd logits(std::span<const TokenId> window) const;

 private:
  std::string id_;
  ModelShape shape_;
  Params params_;
};

// Context window for predicting completion[pos].
std::vector<TokenId> context_window(std::span<const TokenId> prompt,
                                    std::span<const TokenId> completion, std::size_t pos,
                                    int context);

// Numerically stable log-softmax (max subtraction).
Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits);
Eigen::VectorXd softmax(const Eigen::VectorXd& logits, double temperature = 1.0);

// softmax(logits / temperature) for the next token after prompt + prefix.
Eigen::VectorXd next_token_distribution(const ToyPolicy& policy, std::span<const TokenId> prompt,
                                        std::span<const TokenId> prefix, double temperature = 1.0);

// Sum of log p(completion[i] | prompt, completion[:i]) at temperature 1.
// Throws DataError on an empty completion or an out-of-vocabulary index.
double log_prob(const ToyPolicy& policy, std::span<const TokenId> prompt,
                std::span<const TokenId> completion);

// Adds coef * d log_prob / d params to `grad` and returns log_prob.
double accumulate_log_prob_grad(const ToyPolicy& policy, std::span<const TokenId> prompt,
                                std::span<const TokenId> completion, double coef, Params& grad);

struct LogProbGrad {
  double log_prob = 0.0;
  Params grad;
};
LogProbGrad grad_log_prob(const ToyPolicy& policy, std::span<const TokenId> prompt,
                          std::span<const TokenId> completion);

struct SamplerConfig {
  double temperature = 0.7;
  int k = 64;
  int max_len = 16;
  std::uint64_t seed = 0;

  void validate() const;
};

// One ancestral sample; stops after <eos> (kept as the last token) or at
// max_len tokens.
std::vector<TokenId> sample_one(const ToyPolicy& policy, std::span<const TokenId> prompt,
                                double temperature, int max_len, Rng& rng);

// K independent samples. Sample j draws from make_stream(seed, {stream, j}),
// so callers key `stream` by prompt to stay independent of scheduling.
std::vector<std::vector<TokenId>> sample(const ToyPolicy& policy, std::span<const TokenId> prompt,
                                         const SamplerConfig& cfg, std::uint64_t stream = 0);

std::vector<TokenId> greedy_decode(const ToyPolicy& policy, std::span<const TokenId> prompt,
                                   int max_len);

// Number of completion tokens before the terminating <eos>.
std::size_t completion_length(std::span<const TokenId> completion);

// Deep copy with id "<id>-ref"; freezing a reference returns an equal copy.
ToyPolicy freeze_reference(const ToyPolicy& policy);

// Binary checkpoint: magic "XPTOYLM1", little-endian u64 V, d, h, n,
// u64 id length, id bytes, then the flat parameters as little-endian f64.
void save_checkpoint(const std::filesystem::path& path, const ToyPolicy& policy);
ToyPolicy load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_bytes(const ToyPolicy& policy);
ToyPolicy parse_checkpoint(std::string_view bytes, std::string_view source = "<memory>");

}  // namespace crosspref
