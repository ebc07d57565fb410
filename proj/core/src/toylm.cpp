#include "crosspref/toylm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <random>

#include "crosspref/digest.hpp"
#include "crosspref/error.hpp"
#include "json.hpp"

namespace crosspref {

// ---------------------------------------------------------------- vocabulary

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 4) throw DataError("vocabulary needs at least 4 tokens");
  if (tokens_[kBos] != "<bos>" || tokens_[kEos] != "<eos>" || tokens_[kPad] != "<pad>") {
    throw DataError("vocabulary must start with <bos>, <eos>, <pad>");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const auto& t = tokens_[i];
    if (t.empty() || t.find_first_of(" \t\n") != std::string::npos) {
      throw DataError("vocabulary token " + std::to_string(i) + " is empty or has whitespace");
    }
    if (!index_.emplace(t, static_cast<TokenId>(i)).second) {
      throw DataError("duplicate vocabulary token '" + t + "'");
    }
  }
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " +
                    std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<TokenId> Vocab::encode(std::string_view text) const {
  std::vector<TokenId> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto start = text.find_first_not_of(" \t\n", pos);
    if (start == std::string_view::npos) break;
    auto end = text.find_first_of(" \t\n", start);
    if (end == std::string_view::npos) end = text.size();
    auto word = text.substr(start, end - start);
    auto id = find(word);
    if (!id) throw DataError("unknown token '" + std::string(word) + "'");
    out.push_back(*id);
    pos = end;
  }
  return out;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

Vocab load_vocab(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": malformed JSON: " + e.what());
  }
  if (!j.is_object()) throw DataError(path.string() + ": expected an object token -> index");
  std::vector<std::string> tokens(j.size());
  std::vector<bool> filled(j.size(), false);
  for (const auto& [tok, idx] : j.items()) {
    if (!idx.is_number_integer()) throw DataError(path.string() + ": index of '" + tok + "'");
    auto i = idx.get<std::int64_t>();
    if (i < 0 || static_cast<std::size_t>(i) >= tokens.size() || filled[i]) {
      throw DataError(path.string() + ": indices must be a permutation of 0..V-1 ('" + tok + "')");
    }
    tokens[i] = tok;
    filled[i] = true;
  }
  return Vocab(std::move(tokens));
}

void save_vocab(const std::filesystem::path& path, const Vocab& vocab) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < vocab.size(); ++i) j[vocab.tokens()[i]] = i;
  write_file_atomic(path, j.dump(2) + "\n");
}

void check_decodes(const Vocab& vocab, const Response& response) {
  if (vocab.decode(response.token_ids) != response.text) {
    throw DataError("token_ids of a response to prompt '" + response.prompt_id +
                    "' do not decode to its text");
  }
}

// ------------------------------------------------------------------ params

void ModelShape::validate() const {
  if (vocab_size < 4 || embed_dim < 1 || hidden_dim < 1 || context < 1) {
    throw UsageError("model shape needs V >= 4 and positive d, h, n");
  }
}

Params Params::zeros(const ModelShape& s) {
  Params p;
  p.embed = Eigen::MatrixXd::Zero(s.vocab_size, s.embed_dim);
  p.w_hidden = Eigen::MatrixXd::Zero(s.hidden_dim, s.input_dim());
  p.b_hidden = Eigen::VectorXd::Zero(s.hidden_dim);
  p.w_out = Eigen::MatrixXd::Zero(s.vocab_size, s.hidden_dim);
  p.b_out = Eigen::VectorXd::Zero(s.vocab_size);
  return p;
}

namespace {

template <class P, class Fn>
void for_each_tensor(P& p, Fn&& fn) {
  fn(p.embed.data(), static_cast<std::size_t>(p.embed.size()));
  fn(p.w_hidden.data(), static_cast<std::size_t>(p.w_hidden.size()));
  fn(p.b_hidden.data(), static_cast<std::size_t>(p.b_hidden.size()));
  fn(p.w_out.data(), static_cast<std::size_t>(p.w_out.size()));
  fn(p.b_out.data(), static_cast<std::size_t>(p.b_out.size()));
}

template <class P, class Fn>
void for_each_pair(P& a, const Params& b, Fn&& fn) {
  fn(a.embed, b.embed);
  fn(a.w_hidden, b.w_hidden);
  fn(a.b_hidden, b.b_hidden);
  fn(a.w_out, b.w_out);
  fn(a.b_out, b.b_out);
}

}  // namespace

std::size_t Params::size() const {
  std::size_t n = 0;
  for_each_tensor(*this, [&](const double*, std::size_t len) { n += len; });
  return n;
}

std::vector<double> Params::flatten() const {
  std::vector<double> out;
  out.reserve(size());
  for_each_tensor(*this, [&](const double* d, std::size_t len) { out.insert(out.end(), d, d + len); });
  return out;
}

void Params::assign_flat(std::span<const double> flat) {
  if (flat.size() != size()) throw DataError("flat parameter vector has the wrong length");
  std::size_t off = 0;
  for_each_tensor(*this, [&](double* d, std::size_t len) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), len, d);
    off += len;
  });
}

double& Params::flat(std::size_t i) {
  double* hit = nullptr;
  for_each_tensor(*this, [&](double* d, std::size_t len) {
    if (!hit && i < len) hit = d + i;
    if (!hit) i -= len;
  });
  if (!hit) throw std::out_of_range("flat parameter index");
  return *hit;
}

double Params::flat(std::size_t i) const { return const_cast<Params*>(this)->flat(i); }

Params& Params::operator+=(const Params& o) {
  for_each_pair(*this, o, [](auto& a, const auto& b) { a += b; });
  return *this;
}

Params& Params::operator*=(double s) {
  embed *= s;
  w_hidden *= s;
  b_hidden *= s;
  w_out *= s;
  b_out *= s;
  return *this;
}

void Params::axpy(double s, const Params& x) {
  for_each_pair(*this, x, [s](auto& a, const auto& b) { a += s * b; });
}

double Params::dot(const Params& o) const {
  double acc = 0.0;
  for_each_pair(*this, o, [&](const auto& a, const auto& b) { acc += a.cwiseProduct(b).sum(); });
  return acc;
}

double Params::squared_norm() const { return dot(*this); }

bool Params::all_finite() const {
  bool ok = true;
  for_each_tensor(*this, [&](const double* d, std::size_t len) {
    for (std::size_t i = 0; i < len && ok; ++i) ok = std::isfinite(d[i]);
  });
  return ok;
}

void Params::set_zero() {
  embed.setZero();
  w_hidden.setZero();
  b_hidden.setZero();
  w_out.setZero();
  b_out.setZero();
}

// ------------------------------------------------------------------- policy

ToyPolicy::ToyPolicy(std::string id, ModelShape shape)
    : id_(std::move(id)), shape_(shape), params_((shape.validate(), Params::zeros(shape))) {}

ToyPolicy ToyPolicy::random(std::string id, ModelShape shape, std::uint64_t seed, double scale) {
  ToyPolicy p(std::move(id), shape);
  auto rng = make_stream(seed, {0x746f796c6dULL});
  std::normal_distribution<double> gauss(0.0, scale);
  for_each_tensor(p.params_, [&](double* d, std::size_t len) {
    for (std::size_t i = 0; i < len; ++i) d[i] = gauss(rng);
  });
  return p;
}

namespace {

void check_ids(const ModelShape& shape, std::span<const TokenId> ids, std::string_view what) {
  for (auto t : ids) {
    if (t < 0 || t >= shape.vocab_size) {
      throw DataError(std::string(what) + " token " + std::to_string(t) +
                      " is outside the vocabulary of size " + std::to_string(shape.vocab_size));
    }
  }
}

Eigen::VectorXd gather_input(const Params& p, std::span<const TokenId> window, int d) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(window.size()) * d);
  for (std::size_t j = 0; j < window.size(); ++j) {
    x.segment(static_cast<Eigen::Index>(j) * d, d) = p.embed.row(window[j]).transpose();
  }
  return x;
}

}  // namespace

Eigen::VectorXd ToyPolicy::logits(std::span<const TokenId> window) const {
  const auto x = gather_input(params_, window, shape_.embed_dim);
  const Eigen::VectorXd hidden = (params_.w_hidden * x + params_.b_hidden).array().tanh().matrix();
  return params_.w_out * hidden + params_.b_out;
}

std::vector<TokenId> context_window(std::span<const TokenId> prompt,
                                    std::span<const TokenId> completion, std::size_t pos,
                                    int context) {
  // Sequence is [<bos>] + prompt + completion[0, pos); keep its last `context` tokens.
  const std::size_t seq_len = 1 + prompt.size() + pos;
  std::vector<TokenId> w(static_cast<std::size_t>(context), kPad);
  for (std::size_t j = 0; j < w.size(); ++j) {
    const auto back = w.size() - j;  // distance from the end of the sequence
    if (back > seq_len) continue;
    const std::size_t s = seq_len - back;
    if (s == 0) {
      w[j] = kBos;
    } else if (s <= prompt.size()) {
      w[j] = prompt[s - 1];
    } else {
      w[j] = completion[s - 1 - prompt.size()];
    }
  }
  return w;
}

Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lse).matrix();
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits, double temperature) {
  const Eigen::ArrayXd scaled = logits.array() / temperature;
  const Eigen::ArrayXd e = (scaled - scaled.maxCoeff()).exp();
  return (e / e.sum()).matrix();
}

Eigen::VectorXd next_token_distribution(const ToyPolicy& policy, std::span<const TokenId> prompt,
                                        std::span<const TokenId> prefix, double temperature) {
  check_ids(policy.shape(), prompt, "prompt");
  check_ids(policy.shape(), prefix, "completion");
  const auto w = context_window(prompt, prefix, prefix.size(), policy.shape().context);
  return softmax(policy.logits(w), temperature);
}

double log_prob(const ToyPolicy& policy, std::span<const TokenId> prompt,
                std::span<const TokenId> completion) {
  if (completion.empty()) throw DataError("log_prob of an empty completion");
  check_ids(policy.shape(), prompt, "prompt");
  check_ids(policy.shape(), completion, "completion");
  double total = 0.0;
  for (std::size_t i = 0; i < completion.size(); ++i) {
    const auto w = context_window(prompt, completion, i, policy.shape().context);
    total += log_softmax(policy.logits(w))(completion[i]);
  }
  return total;
}

double accumulate_log_prob_grad(const ToyPolicy& policy, std::span<const TokenId> prompt,
                                std::span<const TokenId> completion, double coef, Params& grad) {
  if (completion.empty()) throw DataError("log_prob of an empty completion");
  const auto& shape = policy.shape();
  check_ids(shape, prompt, "prompt");
  check_ids(shape, completion, "completion");
  const auto& p = policy.params();
  const int d = shape.embed_dim;

  double total = 0.0;
  for (std::size_t i = 0; i < completion.size(); ++i) {
    const auto w = context_window(prompt, completion, i, shape.context);
    const Eigen::VectorXd x = gather_input(p, w, d);
    const Eigen::VectorXd hidden = (p.w_hidden * x + p.b_hidden).array().tanh().matrix();
    const Eigen::VectorXd lsm = log_softmax(p.w_out * hidden + p.b_out);
    const TokenId y = completion[i];
    total += lsm(y);

    // d logp / d logits = onehot(y) - softmax
    Eigen::VectorXd dz = -coef * lsm.array().exp().matrix();
    dz(y) += coef;
    grad.w_out.noalias() += dz * hidden.transpose();
    grad.b_out += dz;
    const Eigen::VectorXd da =
        ((p.w_out.transpose() * dz).array() * (1.0 - hidden.array().square())).matrix();
    grad.w_hidden.noalias() += da * x.transpose();
    grad.b_hidden += da;
    const Eigen::VectorXd dx = p.w_hidden.transpose() * da;
    for (std::size_t j = 0; j < w.size(); ++j) {
      grad.embed.row(w[j]) += dx.segment(static_cast<Eigen::Index>(j) * d, d).transpose();
    }
  }
  return total;
}

LogProbGrad grad_log_prob(const ToyPolicy& policy, std::span<const TokenId> prompt,
                          std::span<const TokenId> completion) {
  LogProbGrad out{0.0, Params::zeros(policy.shape())};
  out.log_prob = accumulate_log_prob_grad(policy, prompt, completion, 1.0, out.grad);
  return out;
}

// ------------------------------------------------------------------ sampling

void SamplerConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw UsageError("sampling temperature must be positive");
  }
  if (k < 2) throw UsageError("sampling needs k >= 2 candidates");
  if (max_len < 1) throw UsageError("sampling needs max_len >= 1");
}

std::vector<TokenId> sample_one(const ToyPolicy& policy, std::span<const TokenId> prompt,
                                double temperature, int max_len, Rng& rng) {
  check_ids(policy.shape(), prompt, "prompt");
  std::vector<TokenId> out;
  out.reserve(static_cast<std::size_t>(max_len));
  while (static_cast<int>(out.size()) < max_len) {
    const auto w = context_window(prompt, out, out.size(), policy.shape().context);
    const Eigen::VectorXd probs = softmax(policy.logits(w), temperature);
    const double u = uniform01(rng);
    double acc = 0.0;
    TokenId pick = static_cast<TokenId>(probs.size() - 1);
    for (Eigen::Index t = 0; t < probs.size(); ++t) {
      acc += probs(t);
      if (u < acc) {
        pick = static_cast<TokenId>(t);
        break;
      }
    }
    // Rounding can leave the tail with zero mass; never emit such a token.
    while (probs(pick) == 0.0 && pick > 0) --pick;
    out.push_back(pick);
    if (pick == kEos) break;
  }
  return out;
}

std::vector<std::vector<TokenId>> sample(const ToyPolicy& policy, std::span<const TokenId> prompt,
                                         const SamplerConfig& cfg, std::uint64_t stream) {
  cfg.validate();
  std::vector<std::vector<TokenId>> out;
  out.reserve(static_cast<std::size_t>(cfg.k));
  for (int j = 0; j < cfg.k; ++j) {
    auto rng = make_stream(cfg.seed, {stream, static_cast<std::uint64_t>(j)});
    out.push_back(sample_one(policy, prompt, cfg.temperature, cfg.max_len, rng));
  }
  return out;
}

std::vector<TokenId> greedy_decode(const ToyPolicy& policy, std::span<const TokenId> prompt,
                                   int max_len) {
  std::vector<TokenId> out;
  while (static_cast<int>(out.size()) < max_len) {
    const auto w = context_window(prompt, out, out.size(), policy.shape().context);
    Eigen::Index best = 0;
    policy.logits(w).maxCoeff(&best);
    out.push_back(static_cast<TokenId>(best));
    if (best == kEos) break;
  }
  return out;
}

std::size_t completion_length(std::span<const TokenId> completion) {
  auto it = std::find(completion.begin(), completion.end(), kEos);
  return static_cast<std::size_t>(it - completion.begin());
}

ToyPolicy freeze_reference(const ToyPolicy& policy) {
  ToyPolicy copy = policy;
  const auto& id = policy.id();
  if (!(id.size() >= 4 && id.compare(id.size() - 4, 4, "-ref") == 0)) copy.set_id(id + "-ref");
  return copy;
}

// --------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[8] = {'X', 'P', 'T', 'O', 'Y', 'L', 'M', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::string_view in, std::size_t& pos, std::string_view source) {
  if (pos + 8 > in.size()) throw DataError(std::string(source) + ": truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += 8;
  return v;
}

}  // namespace

std::string checkpoint_bytes(const ToyPolicy& policy) {
  const auto& s = policy.shape();
  std::string out(kMagic, sizeof kMagic);
  put_u64(out, static_cast<std::uint64_t>(s.vocab_size));
  put_u64(out, static_cast<std::uint64_t>(s.embed_dim));
  put_u64(out, static_cast<std::uint64_t>(s.hidden_dim));
  put_u64(out, static_cast<std::uint64_t>(s.context));
  put_u64(out, policy.id().size());
  out += policy.id();
  for (double v : policy.params().flatten()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

ToyPolicy parse_checkpoint(std::string_view bytes, std::string_view source) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw DataError(std::string(source) + ": not a toy model checkpoint");
  }
  std::size_t pos = sizeof kMagic;
  ModelShape s;
  auto dim = [&](std::string_view name) {
    auto v = get_u64(bytes, pos, source);
    if (v == 0 || v > (1u << 20)) {
      throw DataError(std::string(source) + ": implausible " + std::string(name));
    }
    return static_cast<int>(v);
  };
  s.vocab_size = dim("vocab size");
  s.embed_dim = dim("embedding dim");
  s.hidden_dim = dim("hidden dim");
  s.context = dim("context");
  const auto id_len = get_u64(bytes, pos, source);
  if (pos + id_len > bytes.size()) throw DataError(std::string(source) + ": truncated id");
  std::string id(bytes.substr(pos, id_len));
  pos += id_len;
  ToyPolicy policy(std::move(id), s);
  std::vector<double> flat(policy.params().size());
  for (auto& v : flat) v = std::bit_cast<double>(get_u64(bytes, pos, source));
  if (pos != bytes.size()) throw DataError(std::string(source) + ": trailing bytes in checkpoint");
  policy.params().assign_flat(flat);
  if (!policy.params().all_finite()) {
    throw DataError(std::string(source) + ": checkpoint has non-finite parameters");
  }
  return policy;
}

void save_checkpoint(const std::filesystem::path& path, const ToyPolicy& policy) {
  write_file_atomic(path, checkpoint_bytes(policy));
}

ToyPolicy load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file(path), path.string());
}

}  // namespace crosspref
