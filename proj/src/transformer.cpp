#include "s2d/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "s2d/errors.hpp"
#include "s2d/prob.hpp"
#include "s2d/rng.hpp"

namespace s2d {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_grad(double x) {
    const double u = kGeluC * (x + kGeluA * x * x * x);
    const double t = std::tanh(u);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

// y[T,out] = x[T,in] * w[in,out] + b[out]
void matmul_bias(const std::vector<double>& x, const Tensor& w, const Tensor& b, int rows, int in,
                 int out, std::vector<double>& y) {
    y.assign(static_cast<size_t>(rows) * out, 0.0);
    for (int r = 0; r < rows; ++r) {
        const double* xr = &x[static_cast<size_t>(r) * in];
        double* yr = &y[static_cast<size_t>(r) * out];
        for (int i = 0; i < in; ++i) {
            const double xv = xr[i];
            if (xv == 0.0) continue;
            const float* wr = &w.data[static_cast<size_t>(i) * out];
            for (int j = 0; j < out; ++j) yr[j] += xv * static_cast<double>(wr[j]);
        }
        for (int j = 0; j < out; ++j) yr[j] += static_cast<double>(b.data[static_cast<size_t>(j)]);
    }
}

// dx[T,in] += dy[T,out] * w^T;  dw[in,out] += x^T * dy;  db[out] += sum dy
void matmul_backward(const std::vector<double>& x, const Tensor& w, const std::vector<double>& dy,
                     int rows, int in, int out, std::vector<double>& dx, std::vector<double>& dw,
                     std::vector<double>& db) {
    for (int r = 0; r < rows; ++r) {
        const double* xr = &x[static_cast<size_t>(r) * in];
        const double* dyr = &dy[static_cast<size_t>(r) * out];
        double* dxr = &dx[static_cast<size_t>(r) * in];
        for (int j = 0; j < out; ++j) db[static_cast<size_t>(j)] += dyr[j];
        for (int i = 0; i < in; ++i) {
            const float* wr = &w.data[static_cast<size_t>(i) * out];
            double* dwr = &dw[static_cast<size_t>(i) * out];
            double acc = 0.0;
            const double xv = xr[i];
            for (int j = 0; j < out; ++j) {
                acc += dyr[j] * static_cast<double>(wr[j]);
                dwr[j] += xv * dyr[j];
            }
            dxr[i] += acc;
        }
    }
}

struct LnStats {
    std::vector<double> mean;
    std::vector<double> rstd;
};

// out = (x - mean) * rstd * g + b per row
void layernorm(const std::vector<double>& x, const Tensor& g, const Tensor& b, int rows, int dim,
               std::vector<double>& out, LnStats& stats) {
    out.assign(static_cast<size_t>(rows) * dim, 0.0);
    stats.mean.assign(static_cast<size_t>(rows), 0.0);
    stats.rstd.assign(static_cast<size_t>(rows), 0.0);
    for (int r = 0; r < rows; ++r) {
        const double* xr = &x[static_cast<size_t>(r) * dim];
        double m = 0.0;
        for (int i = 0; i < dim; ++i) m += xr[i];
        m /= dim;
        double var = 0.0;
        for (int i = 0; i < dim; ++i) var += (xr[i] - m) * (xr[i] - m);
        var /= dim;
        const double rstd = 1.0 / std::sqrt(var + kLnEps);
        stats.mean[static_cast<size_t>(r)] = m;
        stats.rstd[static_cast<size_t>(r)] = rstd;
        double* outr = &out[static_cast<size_t>(r) * dim];
        for (int i = 0; i < dim; ++i)
            outr[i] = (xr[i] - m) * rstd * static_cast<double>(g.data[static_cast<size_t>(i)]) +
                      static_cast<double>(b.data[static_cast<size_t>(i)]);
    }
}

void layernorm_backward(const std::vector<double>& x, const Tensor& g, const LnStats& stats,
                        const std::vector<double>& dout, int rows, int dim,
                        std::vector<double>& dx, std::vector<double>& dg, std::vector<double>& db) {
    for (int r = 0; r < rows; ++r) {
        const double* xr = &x[static_cast<size_t>(r) * dim];
        const double* doutr = &dout[static_cast<size_t>(r) * dim];
        double* dxr = &dx[static_cast<size_t>(r) * dim];
        const double m = stats.mean[static_cast<size_t>(r)];
        const double rstd = stats.rstd[static_cast<size_t>(r)];
        double dn_mean = 0.0, dnn_mean = 0.0;
        for (int i = 0; i < dim; ++i) {
            const double n = (xr[i] - m) * rstd;
            const double dn = doutr[i] * static_cast<double>(g.data[static_cast<size_t>(i)]);
            dg[static_cast<size_t>(i)] += doutr[i] * n;
            db[static_cast<size_t>(i)] += doutr[i];
            dn_mean += dn;
            dnn_mean += dn * n;
        }
        dn_mean /= dim;
        dnn_mean /= dim;
        for (int i = 0; i < dim; ++i) {
            const double n = (xr[i] - m) * rstd;
            const double dn = doutr[i] * static_cast<double>(g.data[static_cast<size_t>(i)]);
            dxr[i] += rstd * (dn - dn_mean - n * dnn_mean);
        }
    }
}

double sinusoidal_pe(int pos, int i, int d_model) {
    const double angle = pos / std::pow(10000.0, (2.0 * (i / 2)) / d_model);
    return (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
}

}  // namespace

void TransformerConfig::validate() const {
    if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
    if (d_model < 1 || n_heads < 1 || d_ff < 1) throw ConfigError("bad model dimensions");
    if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
    if (max_context < 2) throw ConfigError("max_context must be >= 2");
    if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
}

int64_t TransformerConfig::param_count() const {
    const int64_t d = d_model, f = d_ff, v = vocab_size, l = n_layers;
    return v * d + l * (4 * d * d + 2 * d * f + 9 * d + f) + 2 * d + d * v + v;
}

void SubModelLadder::validate(int n_layers) const {
    if (exits.empty()) throw ConfigError("ladder must have at least one exit");
    for (size_t i = 0; i < exits.size(); ++i) {
        if (exits[i] < 1) throw ConfigError("ladder exits must be >= 1");
        if (i > 0 && exits[i] <= exits[i - 1])
            throw ConfigError("ladder exits must be strictly increasing");
    }
    if (exits.back() != n_layers) throw ConfigError("last ladder exit must equal n_layers");
}

int64_t Tensor::numel() const {
    int64_t n = 1;
    for (int s : shape) n *= s;
    return n;
}

struct Transformer::Workspace {
    int T = 0;
    std::vector<TokenId> tokens;
    std::vector<double> x0;
    struct LayerCache {
        std::vector<double> x_in, a, q, k, v, attnw, ctx, x_mid, b, h1, g, x_out;
        LnStats ln1, ln2;
    };
    std::vector<LayerCache> layers;
};

Transformer::Transformer(TransformerConfig config, SubModelLadder ladder, Vocabulary vocab,
                         TrainingMode mode)
    : cfg_(config), ladder_(std::move(ladder)), vocab_(std::move(vocab)), mode_(mode) {
    cfg_.validate();
    if (vocab_.size() != cfg_.vocab_size)
        throw ConfigError("vocab size does not match config.vocab_size");
    ladder_.validate(cfg_.n_layers);
    init_weights();
}

void Transformer::set_ladder(SubModelLadder ladder) {
    ladder.validate(cfg_.n_layers);
    ladder_ = std::move(ladder);
}

void Transformer::set_unit_cost(double unit_cost) {
    if (!(unit_cost > 0.0)) throw ConfigError("unit cost must be > 0");
    unit_cost_ = unit_cost;
}

void Transformer::init_weights() {
    params_.clear();
    Rng rng(cfg_.init_seed);
    auto gauss = [&rng]() {
        // Box-Muller on two counter draws.
        double u1 = rng.next_uniform();
        const double u2 = rng.next_uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793 * u2);
    };
    auto add = [this, &gauss](const std::string& name, std::vector<int> shape, double std_dev) {
        Tensor t;
        t.name = name;
        t.shape = std::move(shape);
        t.data.assign(static_cast<size_t>(t.numel()), 0.0f);
        if (std_dev > 0.0)
            for (float& w : t.data) w = static_cast<float>(std_dev * gauss());
        params_.push_back(std::move(t));
    };
    auto add_ones = [this](const std::string& name, int dim) {
        Tensor t;
        t.name = name;
        t.shape = {dim};
        t.data.assign(static_cast<size_t>(dim), 1.0f);
        params_.push_back(std::move(t));
    };

    const int d = cfg_.d_model, f = cfg_.d_ff, v = cfg_.vocab_size;
    const double ws = 1.0 / std::sqrt(static_cast<double>(d));
    add("tok_emb", {v, d}, 0.1);
    for (int l = 0; l < cfg_.n_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        add_ones(p + "ln1.g", d);
        add(p + "ln1.b", {d}, 0.0);
        add(p + "attn.wq", {d, d}, ws);
        add(p + "attn.bq", {d}, 0.0);
        add(p + "attn.wk", {d, d}, ws);
        add(p + "attn.bk", {d}, 0.0);
        add(p + "attn.wv", {d, d}, ws);
        add(p + "attn.bv", {d}, 0.0);
        add(p + "attn.wo", {d, d}, ws);
        add(p + "attn.bo", {d}, 0.0);
        add_ones(p + "ln2.g", d);
        add(p + "ln2.b", {d}, 0.0);
        add(p + "mlp.w1", {d, f}, ws);
        add(p + "mlp.b1", {f}, 0.0);
        add(p + "mlp.w2", {f, d}, 1.0 / std::sqrt(static_cast<double>(f)));
        add(p + "mlp.b2", {d}, 0.0);
    }
    add_ones("ln_f.g", d);
    add("ln_f.b", {d}, 0.0);
    add("head.w", {d, v}, ws);
    add("head.b", {v}, 0.0);
}

const Tensor& Transformer::param(const std::string& name) const {
    for (const auto& t : params_)
        if (t.name == name) return t;
    throw ValidationError("unknown parameter: " + name);
}

Tensor& Transformer::mutable_param(const std::string& name) {
    return const_cast<Tensor&>(param(name));
}

void Transformer::run_trunk(std::span<const TokenId> tokens, int depth, Workspace& ws) const {
    const int T = static_cast<int>(tokens.size());
    if (T < 1) throw ValidationError("empty context");
    if (T > cfg_.max_context)
        throw ValidationError("context length " + std::to_string(T) + " exceeds max_context " +
                              std::to_string(cfg_.max_context));
    const int d = cfg_.d_model, f = cfg_.d_ff, nh = cfg_.n_heads, dh = d / nh;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    ws.T = T;
    ws.tokens.assign(tokens.begin(), tokens.end());
    ws.x0.assign(static_cast<size_t>(T) * d, 0.0);
    const Tensor& emb = params_[0];
    for (int t = 0; t < T; ++t) {
        const TokenId tok = tokens[static_cast<size_t>(t)];
        if (tok < 0 || tok >= cfg_.vocab_size) throw ValidationError("token out of range");
        for (int i = 0; i < d; ++i)
            ws.x0[static_cast<size_t>(t) * d + i] =
                static_cast<double>(emb.data[static_cast<size_t>(tok) * d + i]) +
                sinusoidal_pe(t, i, d);
    }

    ws.layers.assign(static_cast<size_t>(depth), {});
    const std::vector<double>* x = &ws.x0;
    for (int l = 0; l < depth; ++l) {
        auto& lc = ws.layers[static_cast<size_t>(l)];
        const std::string p = "layers." + std::to_string(l) + ".";
        lc.x_in = *x;

        layernorm(lc.x_in, param(p + "ln1.g"), param(p + "ln1.b"), T, d, lc.a, lc.ln1);
        matmul_bias(lc.a, param(p + "attn.wq"), param(p + "attn.bq"), T, d, d, lc.q);
        matmul_bias(lc.a, param(p + "attn.wk"), param(p + "attn.bk"), T, d, d, lc.k);
        matmul_bias(lc.a, param(p + "attn.wv"), param(p + "attn.bv"), T, d, d, lc.v);

        lc.attnw.assign(static_cast<size_t>(nh) * T * T, 0.0);
        lc.ctx.assign(static_cast<size_t>(T) * d, 0.0);
        for (int h = 0; h < nh; ++h) {
            const int off = h * dh;
            for (int i = 0; i < T; ++i) {
                double* wrow = &lc.attnw[(static_cast<size_t>(h) * T + i) * T];
                double mx = -1e300;
                for (int j = 0; j <= i; ++j) {
                    double s = 0.0;
                    for (int c = 0; c < dh; ++c)
                        s += lc.q[static_cast<size_t>(i) * d + off + c] *
                             lc.k[static_cast<size_t>(j) * d + off + c];
                    wrow[j] = s * scale;
                    mx = std::max(mx, wrow[j]);
                }
                double sum = 0.0;
                for (int j = 0; j <= i; ++j) {
                    wrow[j] = std::exp(wrow[j] - mx);
                    sum += wrow[j];
                }
                for (int j = 0; j <= i; ++j) {
                    wrow[j] /= sum;
                    for (int c = 0; c < dh; ++c)
                        lc.ctx[static_cast<size_t>(i) * d + off + c] +=
                            wrow[j] * lc.v[static_cast<size_t>(j) * d + off + c];
                }
            }
        }

        std::vector<double> attn_out;
        matmul_bias(lc.ctx, param(p + "attn.wo"), param(p + "attn.bo"), T, d, d, attn_out);
        lc.x_mid.assign(static_cast<size_t>(T) * d, 0.0);
        for (size_t i = 0; i < lc.x_mid.size(); ++i) lc.x_mid[i] = lc.x_in[i] + attn_out[i];

        layernorm(lc.x_mid, param(p + "ln2.g"), param(p + "ln2.b"), T, d, lc.b, lc.ln2);
        matmul_bias(lc.b, param(p + "mlp.w1"), param(p + "mlp.b1"), T, d, f, lc.h1);
        lc.g.assign(lc.h1.size(), 0.0);
        for (size_t i = 0; i < lc.h1.size(); ++i) lc.g[i] = gelu(lc.h1[i]);
        std::vector<double> mlp_out;
        matmul_bias(lc.g, param(p + "mlp.w2"), param(p + "mlp.b2"), T, f, d, mlp_out);
        lc.x_out.assign(static_cast<size_t>(T) * d, 0.0);
        for (size_t i = 0; i < lc.x_out.size(); ++i) lc.x_out[i] = lc.x_mid[i] + mlp_out[i];

        x = &lc.x_out;
    }
}

std::vector<std::vector<double>> Transformer::read_head(const Workspace& ws, int exit,
                                                        size_t from_pos) const {
    const int T = ws.T, d = cfg_.d_model, v = cfg_.vocab_size;
    const std::vector<double>& x = ws.layers[static_cast<size_t>(exit - 1)].x_out;
    std::vector<double> y;
    LnStats stats;
    layernorm(x, param("ln_f.g"), param("ln_f.b"), T, d, y, stats);
    std::vector<double> logits;
    matmul_bias(y, param("head.w"), param("head.b"), T, d, v, logits);

    std::vector<std::vector<double>> out;
    for (size_t pos = from_pos - 1; pos < static_cast<size_t>(T); ++pos)
        out.emplace_back(logits.begin() + static_cast<long>(pos * v),
                         logits.begin() + static_cast<long>((pos + 1) * v));
    return out;
}

std::vector<std::vector<double>> Transformer::forward(std::span<const TokenId> tokens,
                                                      int exit) const {
    check_exit(exit);
    Workspace ws;
    run_trunk(tokens, exit, ws);
    return read_head(ws, exit, 1);
}

std::vector<double> Transformer::evaluate(std::span<const TokenId> context, int exit) const {
    check_context(context);
    check_exit(exit);
    Workspace ws;
    run_trunk(context, exit, ws);
    return read_head(ws, exit, context.size()).front();
}

std::vector<std::vector<double>> Transformer::evaluate_block(std::span<const TokenId> tokens,
                                                             int exit, size_t from_pos) const {
    check_context(tokens);
    check_exit(exit);
    if (from_pos < 1 || from_pos > tokens.size())
        throw ValidationError("evaluate_block: from_pos out of range");
    Workspace ws;
    run_trunk(tokens, exit, ws);
    return read_head(ws, exit, from_pos);
}

double Transformer::loss_at_exits(const std::vector<std::vector<TokenId>>& batch,
                                  const std::vector<int>& active_exits,
                                  std::vector<std::vector<double>>* grads_out) const {
    if (batch.empty()) throw ValidationError("empty batch");
    if (active_exits.empty()) throw ValidationError("no active exits");
    for (int e : active_exits) check_exit(e);
    for (const auto& seq : batch)
        if (seq.size() < 2) throw ValidationError("training sequences need >= 2 tokens");

    const int d = cfg_.d_model, f = cfg_.d_ff, v = cfg_.vocab_size;
    const int nh = cfg_.n_heads, dh = d / nh;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const int depth = *std::max_element(active_exits.begin(), active_exits.end());
    const double exit_w = 1.0 / static_cast<double>(active_exits.size());
    const double item_w = 1.0 / static_cast<double>(batch.size());

    std::unordered_map<std::string, size_t> index;
    if (grads_out) {
        grads_out->assign(params_.size(), {});
        for (size_t i = 0; i < params_.size(); ++i) {
            (*grads_out)[i].assign(params_[i].data.size(), 0.0);
            index[params_[i].name] = i;
        }
    }
    auto grad = [&](const std::string& name) -> std::vector<double>& {
        return (*grads_out)[index.at(name)];
    };

    double total_loss = 0.0;
    Workspace ws;
    for (const auto& seq : batch) {
        run_trunk(seq, depth, ws);
        const int T = ws.T;
        const int npred = T - 1;
        const double pos_w = exit_w * item_w / static_cast<double>(npred);

        // dx_extra[l] collects head-branch gradients entering at the
        // output of layer index l (0-based).
        std::vector<std::vector<double>> dx_extra;
        if (grads_out)
            dx_extra.assign(static_cast<size_t>(depth),
                            std::vector<double>(static_cast<size_t>(T) * d, 0.0));

        for (int e : active_exits) {
            const std::vector<double>& x = ws.layers[static_cast<size_t>(e - 1)].x_out;
            std::vector<double> y;
            LnStats stats;
            layernorm(x, param("ln_f.g"), param("ln_f.b"), T, d, y, stats);
            std::vector<double> logits;
            matmul_bias(y, param("head.w"), param("head.b"), T, d, v, logits);

            std::vector<double> dlogits;
            if (grads_out) dlogits.assign(static_cast<size_t>(T) * v, 0.0);
            for (int t = 0; t < npred; ++t) {
                const double* lt = &logits[static_cast<size_t>(t) * v];
                double mx = *std::max_element(lt, lt + v);
                double sum = 0.0;
                for (int j = 0; j < v; ++j) sum += std::exp(lt[j] - mx);
                const TokenId target = seq[static_cast<size_t>(t) + 1];
                const double logp = lt[target] - mx - std::log(sum);
                total_loss -= pos_w * logp;
                if (grads_out) {
                    double* dlt = &dlogits[static_cast<size_t>(t) * v];
                    for (int j = 0; j < v; ++j) dlt[j] = pos_w * std::exp(lt[j] - mx) / sum;
                    dlt[target] -= pos_w;
                }
            }
            if (!grads_out) continue;

            std::vector<double> dy(static_cast<size_t>(T) * d, 0.0);
            matmul_backward(y, param("head.w"), dlogits, T, d, v, dy, grad("head.w"),
                            grad("head.b"));
            layernorm_backward(x, param("ln_f.g"), stats, dy, T, d,
                               dx_extra[static_cast<size_t>(e - 1)], grad("ln_f.g"),
                               grad("ln_f.b"));
        }
        if (!grads_out) continue;

        std::vector<double> dx(static_cast<size_t>(T) * d, 0.0);
        for (int l = depth - 1; l >= 0; --l) {
            for (size_t i = 0; i < dx.size(); ++i) dx[i] += dx_extra[static_cast<size_t>(l)][i];
            const auto& lc = ws.layers[static_cast<size_t>(l)];
            const std::string p = "layers." + std::to_string(l) + ".";

            // MLP block: dx is grad wrt x_out = x_mid + mlp(b)
            std::vector<double> dg(static_cast<size_t>(T) * f, 0.0);
            matmul_backward(lc.g, param(p + "mlp.w2"), dx, T, f, d, dg, grad(p + "mlp.w2"),
                            grad(p + "mlp.b2"));
            std::vector<double> dh1(dg.size(), 0.0);
            for (size_t i = 0; i < dg.size(); ++i) dh1[i] = dg[i] * gelu_grad(lc.h1[i]);
            std::vector<double> db_vec(static_cast<size_t>(T) * d, 0.0);
            matmul_backward(lc.b, param(p + "mlp.w1"), dh1, T, d, f, db_vec, grad(p + "mlp.w1"),
                            grad(p + "mlp.b1"));
            std::vector<double> dx_mid = dx;  // residual path
            layernorm_backward(lc.x_mid, param(p + "ln2.g"), lc.ln2, db_vec, T, d, dx_mid,
                               grad(p + "ln2.g"), grad(p + "ln2.b"));

            // Attention block: dx_mid is grad wrt x_mid = x_in + wo(ctx)
            std::vector<double> dctx(static_cast<size_t>(T) * d, 0.0);
            matmul_backward(lc.ctx, param(p + "attn.wo"), dx_mid, T, d, d, dctx,
                            grad(p + "attn.wo"), grad(p + "attn.bo"));

            std::vector<double> dq(static_cast<size_t>(T) * d, 0.0);
            std::vector<double> dk(static_cast<size_t>(T) * d, 0.0);
            std::vector<double> dv(static_cast<size_t>(T) * d, 0.0);
            for (int h = 0; h < nh; ++h) {
                const int off = h * dh;
                for (int i = 0; i < T; ++i) {
                    const double* wrow = &lc.attnw[(static_cast<size_t>(h) * T + i) * T];
                    std::vector<double> dw(static_cast<size_t>(i) + 1, 0.0);
                    double dot = 0.0;
                    for (int j = 0; j <= i; ++j) {
                        double s = 0.0;
                        for (int c = 0; c < dh; ++c)
                            s += dctx[static_cast<size_t>(i) * d + off + c] *
                                 lc.v[static_cast<size_t>(j) * d + off + c];
                        dw[static_cast<size_t>(j)] = s;
                        dot += wrow[j] * s;
                        for (int c = 0; c < dh; ++c)
                            dv[static_cast<size_t>(j) * d + off + c] +=
                                wrow[j] * dctx[static_cast<size_t>(i) * d + off + c];
                    }
                    for (int j = 0; j <= i; ++j) {
                        const double ds = wrow[j] * (dw[static_cast<size_t>(j)] - dot) * scale;
                        for (int c = 0; c < dh; ++c) {
                            dq[static_cast<size_t>(i) * d + off + c] +=
                                ds * lc.k[static_cast<size_t>(j) * d + off + c];
                            dk[static_cast<size_t>(j) * d + off + c] +=
                                ds * lc.q[static_cast<size_t>(i) * d + off + c];
                        }
                    }
                }
            }

            std::vector<double> da(static_cast<size_t>(T) * d, 0.0);
            matmul_backward(lc.a, param(p + "attn.wq"), dq, T, d, d, da, grad(p + "attn.wq"),
                            grad(p + "attn.bq"));
            matmul_backward(lc.a, param(p + "attn.wk"), dk, T, d, d, da, grad(p + "attn.wk"),
                            grad(p + "attn.bk"));
            matmul_backward(lc.a, param(p + "attn.wv"), dv, T, d, d, da, grad(p + "attn.wv"),
                            grad(p + "attn.bv"));

            std::vector<double> dx_in = dx_mid;  // residual path
            layernorm_backward(lc.x_in, param(p + "ln1.g"), lc.ln1, da, T, d, dx_in,
                               grad(p + "ln1.g"), grad(p + "ln1.b"));
            dx = std::move(dx_in);
        }

        std::vector<double>& demb = grad("tok_emb");
        for (int t = 0; t < ws.T; ++t) {
            const TokenId tok = ws.tokens[static_cast<size_t>(t)];
            for (int i = 0; i < d; ++i)
                demb[static_cast<size_t>(tok) * d + i] += dx[static_cast<size_t>(t) * d + i];
        }
    }
    return total_loss;
}

double Transformer::sorted_loss(const std::vector<std::vector<TokenId>>& batch,
                                const SubModelLadder& ladder) const {
    ladder.validate(cfg_.n_layers);
    return loss_at_exits(batch, ladder.exits);
}

double Transformer::train_step(const std::vector<std::vector<TokenId>>& batch, TrainingMode mode,
                               double learning_rate, bool clip_grad_norm) {
    const std::vector<int> active =
        (mode == TrainingMode::soft) ? ladder_.exits : std::vector<int>{cfg_.n_layers};
    std::vector<std::vector<double>> grads;
    const double loss = loss_at_exits(batch, active, &grads);
    if (!std::isfinite(loss))
        throw ValidationError("non-finite training loss; aborting step");

    if (learning_rate == 0.0) return loss;

    double scale = 1.0;
    if (clip_grad_norm) {
        double sq = 0.0;
        for (const auto& g : grads)
            for (double v : g) sq += v * v;
        const double norm = std::sqrt(sq);
        if (norm > 1.0) scale = 1.0 / norm;
    }
    for (size_t i = 0; i < params_.size(); ++i) {
        auto& data = params_[i].data;
        const auto& g = grads[i];
        for (size_t j = 0; j < data.size(); ++j)
            data[j] = static_cast<float>(static_cast<double>(data[j]) -
                                         learning_rate * scale * g[j]);
    }
    return loss;
}

Transformer Transformer::extract_prefix(int n_layers_kept) const {
    if (n_layers_kept < 1 || n_layers_kept > cfg_.n_layers)
        throw ConfigError("n_layers_kept out of range");
    TransformerConfig sub_cfg = cfg_;
    sub_cfg.n_layers = n_layers_kept;

    SubModelLadder sub_ladder;
    for (int e : ladder_.exits)
        if (e < n_layers_kept) sub_ladder.exits.push_back(e);
    sub_ladder.exits.push_back(n_layers_kept);

    Transformer sub(sub_cfg, sub_ladder, vocab_, mode_);
    for (auto& t : sub.params_) t.data = param(t.name).data;
    sub.unit_cost_ = unit_cost_;
    return sub;
}

double Transformer::perplexity(const std::vector<std::vector<TokenId>>& corpus, int exit) const {
    if (corpus.empty()) throw ValidationError("empty corpus");
    check_exit(exit);
    double nll = 0.0;
    int64_t count = 0;
    for (const auto& seq : corpus) {
        if (seq.size() < 2) continue;
        const auto logits = forward(seq, exit);
        for (size_t t = 0; t + 1 < seq.size(); ++t) {
            const auto& lt = logits[t];
            const double mx = *std::max_element(lt.begin(), lt.end());
            double sum = 0.0;
            for (double v : lt) sum += std::exp(v - mx);
            nll -= lt[static_cast<size_t>(seq[t + 1])] - mx - std::log(sum);
            ++count;
        }
    }
    if (count == 0) throw ValidationError("corpus has no scorable positions");
    return std::exp(nll / static_cast<double>(count));
}

// ---- checkpoint I/O -------------------------------------------------

void Transformer::save_checkpoint(const std::string& path) const {
    nlohmann::json header;
    header["format"] = "s2d-ckpt-v1";
    header["config"] = {{"n_layers", cfg_.n_layers},     {"d_model", cfg_.d_model},
                        {"n_heads", cfg_.n_heads},       {"d_ff", cfg_.d_ff},
                        {"max_context", cfg_.max_context}, {"vocab_size", cfg_.vocab_size},
                        {"init_seed", cfg_.init_seed}};
    header["ladder"] = ladder_.exits;
    header["training_mode"] = (mode_ == TrainingMode::soft) ? "soft" : "sft";
    header["vocab"] = nlohmann::json::parse(vocab_.to_json());
    header["unit_cost"] = unit_cost_;

    nlohmann::json manifest = nlohmann::json::array();
    uint64_t offset = 0;
    for (const auto& t : params_) {
        const uint64_t nbytes = t.data.size() * sizeof(float);
        manifest.push_back(
            {{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"nbytes", nbytes}});
        offset += nbytes;
    }
    header["manifest"] = manifest;

    const std::string header_text = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    const uint64_t header_len = header_text.size();
    char lenbuf[8];
    for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<char>((header_len >> (8 * i)) & 0xff);
    out.write(lenbuf, 8);
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& t : params_)
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!out) throw IoError("checkpoint write failed: " + path);
}

Transformer Transformer::load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char lenbuf[8];
    in.read(lenbuf, 8);
    if (in.gcount() != 8) throw ValidationError("corrupt checkpoint header: missing length");
    uint64_t header_len = 0;
    for (int i = 0; i < 8; ++i)
        header_len |= static_cast<uint64_t>(static_cast<unsigned char>(lenbuf[i])) << (8 * i);
    if (header_len == 0 || header_len > (1u << 26))
        throw ValidationError("corrupt checkpoint header: implausible length");

    std::string header_text(header_len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (static_cast<uint64_t>(in.gcount()) != header_len)
        throw ValidationError("corrupt checkpoint header: truncated");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("corrupt checkpoint header: ") + e.what());
    }
    if (header.value("format", "") != "s2d-ckpt-v1")
        throw ValidationError("corrupt checkpoint header: unknown format");

    TransformerConfig cfg;
    const auto& jc = header.at("config");
    cfg.n_layers = jc.at("n_layers").get<int>();
    cfg.d_model = jc.at("d_model").get<int>();
    cfg.n_heads = jc.at("n_heads").get<int>();
    cfg.d_ff = jc.at("d_ff").get<int>();
    cfg.max_context = jc.at("max_context").get<int>();
    cfg.vocab_size = jc.at("vocab_size").get<int>();
    cfg.init_seed = jc.at("init_seed").get<uint64_t>();

    SubModelLadder ladder{header.at("ladder").get<std::vector<int>>()};
    Vocabulary vocab = Vocabulary::from_json(header.at("vocab").dump());
    const TrainingMode mode =
        header.at("training_mode").get<std::string>() == "soft" ? TrainingMode::soft
                                                                : TrainingMode::sft;

    Transformer model(cfg, ladder, std::move(vocab), mode);
    model.unit_cost_ = header.value("unit_cost", 1.0);

    const auto& manifest = header.at("manifest");
    if (manifest.size() != model.params_.size())
        throw ValidationError("checkpoint shape error: manifest entry count mismatch");
    for (size_t i = 0; i < model.params_.size(); ++i) {
        Tensor& t = model.params_[i];
        const auto& m = manifest[i];
        if (m.at("name").get<std::string>() != t.name ||
            m.at("shape").get<std::vector<int>>() != t.shape ||
            m.at("nbytes").get<uint64_t>() != t.data.size() * sizeof(float))
            throw ValidationError("checkpoint shape error: array '" + t.name +
                                  "' does not match config");
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        if (static_cast<uint64_t>(in.gcount()) != t.data.size() * sizeof(float))
            throw ValidationError("checkpoint truncated in payload of '" + t.name + "'");
    }
    return model;
}

// ---- training loop --------------------------------------------------

std::vector<std::vector<TokenId>> sample_windows(const std::vector<TokenId>& corpus,
                                                 int batch_size, int seq_len, uint64_t seed,
                                                 uint64_t step) {
    if (corpus.size() < static_cast<size_t>(seq_len) + 1)
        throw ValidationError("corpus shorter than one training window");
    std::vector<std::vector<TokenId>> batch;
    batch.reserve(static_cast<size_t>(batch_size));
    const uint64_t span = corpus.size() - static_cast<size_t>(seq_len);
    for (int b = 0; b < batch_size; ++b) {
        const uint64_t start =
            Rng::mix(seed, step * static_cast<uint64_t>(batch_size) + static_cast<uint64_t>(b)) %
            span;
        batch.emplace_back(corpus.begin() + static_cast<long>(start),
                           corpus.begin() + static_cast<long>(start + seq_len));
    }
    return batch;
}

double train_on_corpus(Transformer& model, const std::vector<TokenId>& corpus,
                       const TrainOptions& opts,
                       const std::function<void(int step, double loss)>& on_log) {
    double loss = 0.0;
    for (int step = 0; step < opts.steps; ++step) {
        const auto batch = sample_windows(corpus, opts.batch_size, opts.seq_len, opts.seed,
                                          static_cast<uint64_t>(step));
        loss = model.train_step(batch, opts.mode, opts.learning_rate);
        if (on_log && (step % opts.log_every == 0 || step + 1 == opts.steps)) on_log(step, loss);
    }
    return loss;
}

}  // namespace s2d
