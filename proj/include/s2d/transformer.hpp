#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "s2d/model.hpp"
#include "s2d/vocab.hpp"

namespace s2d {

struct TransformerConfig {
    int n_layers = 2;
    int d_model = 16;
    int n_heads = 2;
    int d_ff = 32;
    int max_context = 32;
    int vocab_size = 0;
    uint64_t init_seed = 0;

    void validate() const;
    /// Total trainable parameter count:
    ///   vocab*d  (embedding)
    /// + L * (4d^2 + 2*d*ff + 9d + ff)  (per block: 2 layer norms,
    ///   4 attention projections with biases, 2 MLP mats with biases)
    /// + 2d  (final norm)
    /// + d*vocab + vocab  (head)
    int64_t param_count() const;
};

/// Ordered exit depths sharing one trunk and the output head.
struct SubModelLadder {
    std::vector<int> exits;

    void validate(int n_layers) const;
};

enum class TrainingMode { sft, soft };

/// One named weight array. Weights are float32; all arithmetic runs in
/// double with these as inputs, so checkpoints round-trip bitwise.
struct Tensor {
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;

    int64_t numel() const;
};

/// Decoder-only transformer (pre-norm, sinusoidal positions, tanh-GELU
/// MLP) whose shared output head is readable after any ladder exit
/// through one shared final norm.
class Transformer final : public LanguageModel {
public:
    Transformer(TransformerConfig config, SubModelLadder ladder, Vocabulary vocab,
                TrainingMode mode = TrainingMode::sft);

    const TransformerConfig& config() const { return cfg_; }
    const SubModelLadder& ladder() const { return ladder_; }
    TrainingMode training_mode() const { return mode_; }
    void set_ladder(SubModelLadder ladder);
    void set_unit_cost(double unit_cost);

    // LanguageModel contract
    const Vocabulary& vocab() const override { return vocab_; }
    int n_layers() const override { return cfg_.n_layers; }
    std::vector<int> exits() const override { return ladder_.exits; }
    double unit_cost_per_layer() const override { return unit_cost_; }
    std::vector<double> evaluate(std::span<const TokenId> context, int exit) const override;
    std::vector<std::vector<double>> evaluate_block(std::span<const TokenId> tokens, int exit,
                                                    size_t from_pos) const override;

    /// Next-token logits at every position, read at `exit`.
    std::vector<std::vector<double>> forward(std::span<const TokenId> tokens, int exit) const;

    /// Mean over ladder exits of per-exit next-token cross-entropy
    /// (each averaged over positions, then over batch items).
    double sorted_loss(const std::vector<std::vector<TokenId>>& batch,
                       const SubModelLadder& ladder) const;

    double loss_at_exits(const std::vector<std::vector<TokenId>>& batch,
                         const std::vector<int>& active_exits,
                         std::vector<std::vector<double>>* grads_out = nullptr) const;

    /// One SGD step; sft trains the final exit only, soft the whole
    /// ladder. Returns the pre-update loss.
    double train_step(const std::vector<std::vector<TokenId>>& batch, TrainingMode mode,
                      double learning_rate, bool clip_grad_norm = true);

    /// First n layers plus embeddings, final norm and head, copied
    /// bitwise. Forward at full depth of the result equals this model's
    /// forward at exit n_layers_kept, exactly.
    Transformer extract_prefix(int n_layers_kept) const;

    /// exp(mean next-token cross-entropy) at `exit`.
    double perplexity(const std::vector<std::vector<TokenId>>& corpus, int exit) const;

    void save_checkpoint(const std::string& path) const;
    static Transformer load_checkpoint(const std::string& path);

    const std::vector<Tensor>& params() const { return params_; }
    std::vector<Tensor>& mutable_params() { return params_; }
    const Tensor& param(const std::string& name) const;
    Tensor& mutable_param(const std::string& name);

private:
    void init_weights();
    struct Workspace;
    void run_trunk(std::span<const TokenId> tokens, int depth, Workspace& ws) const;
    std::vector<std::vector<double>> read_head(const Workspace& ws, int exit,
                                               size_t from_pos) const;

    TransformerConfig cfg_;
    SubModelLadder ladder_;
    Vocabulary vocab_;
    TrainingMode mode_;
    double unit_cost_ = 1.0;
    std::vector<Tensor> params_;
};

struct TrainOptions {
    int steps = 1000;
    int batch_size = 8;
    int seq_len = 32;
    double learning_rate = 0.1;
    TrainingMode mode = TrainingMode::sft;
    uint64_t seed = 0;
    int log_every = 100;
};

/// Seeded SGD loop over random corpus windows. Returns the final loss.
double train_on_corpus(Transformer& model, const std::vector<TokenId>& corpus,
                       const TrainOptions& opts,
                       const std::function<void(int step, double loss)>& on_log = nullptr);

/// Random fixed-length windows of `corpus`, the batch shape used by
/// train_on_corpus.
std::vector<std::vector<TokenId>> sample_windows(const std::vector<TokenId>& corpus,
                                                 int batch_size, int seq_len, uint64_t seed,
                                                 uint64_t step);

}  // namespace s2d
