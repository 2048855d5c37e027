"""Slow, loop-based reference implementations used as independent oracles.

Nothing here calls into the vectorized code paths; only parameter values are
read from the modules under test.
"""

import math

import numpy as np


def bn_train_loop(values, gamma, beta, eps=1e-5):
    """Batch-norm of a flat list of samples for one channel (two-pass statistics)."""
    vals = list(values)
    mu = sum(vals) / len(vals)
    var = sum((v - mu) ** 2 for v in vals) / len(vals)
    inv = 1.0 / math.sqrt(var + eps)
    return [gamma * (v - mu) * inv + beta for v in vals]


def csi_embedding_loop(stack, weight, gamma, beta, K, scale_index, shared):
    """theta_k(x_k, k) at every position: 1x1 conv, BN over (N, H, W), ReLU.

    ``stack`` is (N, K, C, H, W); returns (N, K, D, H, W).
    Individual mode: weight (K, D, Cin), BN channels laid out scale-major (K*D).
    Shared mode: weight (D, Cin), BN statistics pooled over N, K, H, W.
    """
    n, _, c, h, w = stack.shape
    d = weight.shape[-2]
    pre = np.zeros((n, K, d, h, w))
    for a in range(n):
        for k in range(K):
            wk = weight if shared else weight[k]
            for i in range(h):
                for j in range(w):
                    v = list(stack[a, k, :, i, j])
                    if scale_index:
                        v += [1.0 if t == k else 0.0 for t in range(K)]
                    for o in range(d):
                        pre[a, k, o, i, j] = sum(wk[o, t] * v[t] for t in range(len(v)))
    out = np.zeros_like(pre)
    for o in range(d):
        if shared:
            flat = [pre[a, k, o, i, j] for a in range(n) for k in range(K) for i in range(h) for j in range(w)]
            normed = iter(bn_train_loop(flat, gamma[o], beta[o]))
            for a in range(n):
                for k in range(K):
                    for i in range(h):
                        for j in range(w):
                            out[a, k, o, i, j] = max(0.0, next(normed))
        else:
            for k in range(K):
                ch = k * d + o
                flat = [pre[a, k, o, i, j] for a in range(n) for i in range(h) for j in range(w)]
                normed = iter(bn_train_loop(flat, gamma[ch], beta[ch]))
                for a in range(n):
                    for i in range(h):
                        for j in range(w):
                            out[a, k, o, i, j] = max(0.0, next(normed))
    return out


def csi_refine_loop(stack, theta, phi):
    """Weighted average of all scales at each position with exp(theta . phi) weights.

    Returns (refined (N, K, C, H, W), normalized weights (N, H, W, K, K)).
    """
    n, K, c, h, w = stack.shape
    refined = np.zeros_like(stack)
    weights = np.zeros((n, h, w, K, K))
    for a in range(n):
        for i in range(h):
            for j in range(w):
                for k in range(K):
                    dots = [float(np.dot(theta[a, k, :, i, j], phi[a, m, :, i, j])) for m in range(K)]
                    top = max(dots)
                    # exp(dot) / sum exp(dot); the common factor exp(-top) cancels
                    r = [math.exp(t - top) for t in dots]
                    z = sum(r)
                    for m in range(K):
                        weights[a, i, j, k, m] = r[m] / z
                        refined[a, k, :, i, j] += (r[m] / z) * stack[a, m, :, i, j]
    return refined, weights


def csi_oracle(stack, params, cfg):
    """Full CSI forward (train-mode BN) by loops."""
    th, ph = params.theta, params.phi
    theta = csi_embedding_loop(stack, th.weight.data, th.bn.gamma.data, th.bn.beta.data,
                               cfg.K, cfg.scale_index, cfg.shared_embedding)
    phi = csi_embedding_loop(stack, ph.weight.data, ph.bn.gamma.data, ph.bn.beta.data,
                             cfg.K, cfg.scale_index, cfg.shared_embedding)
    refined, weights = csi_refine_loop(stack, theta, phi)
    if cfg.csi_residual:
        refined = refined + stack
    return refined, weights


def conv1x1_bn_loop(x, weight, gamma, beta, bias=None):
    """(N, Cin, H, W) -> per-position matvec, then train-mode BN per output channel."""
    n, cin, h, w = x.shape
    cout = weight.shape[0]
    pre = np.zeros((n, cout, h, w))
    for a in range(n):
        for i in range(h):
            for j in range(w):
                pre[a, :, i, j] = weight.reshape(cout, cin) @ x[a, :, i, j]
    if bias is not None:
        pre += bias.reshape(1, -1, 1, 1)
    out = np.zeros_like(pre)
    for o in range(cout):
        normed = iter(bn_train_loop(pre[:, o].ravel(), gamma[o], beta[o]))
        for a in range(n):
            for i in range(h):
                for j in range(w):
                    out[a, o, i, j] = next(normed)
    return out


def sa_oracle(stack, params, cfg):
    """Attention (N, K, C, H, W) by loops: squeeze (BN, ReLU), heads (BN), sigmoid/softmax."""
    n, K, c, h, w = stack.shape
    s = stack.reshape(n, K * c, h, w)
    hid = np.maximum(conv1x1_bn_loop(s, params.squeeze.weight.data, params.squeeze_bn.gamma.data,
                                     params.squeeze_bn.beta.data), 0.0)
    logits = conv1x1_bn_loop(hid, params.heads.weight.data, params.heads_bn.gamma.data,
                             params.heads_bn.beta.data)
    hw = params.head_width
    alpha = np.zeros((n, K, c, h, w))
    for a in range(n):
        for i in range(h):
            for j in range(w):
                for ch in range(c):
                    src = 0 if hw == 1 else ch
                    z = [logits[a, k * hw + src, i, j] for k in range(K)]
                    if cfg.sa_activation == "sigmoid":
                        vals = [1.0 / (1.0 + math.exp(-t)) for t in z]
                    else:
                        top = max(z)
                        e = [math.exp(t - top) for t in z]
                        vals = [t / sum(e) for t in e]
                    for k in range(K):
                        alpha[a, k, ch, i, j] = vals[k]
    return alpha


def fuse_loop(stack, alpha):
    """(1/K) sum_k alpha_k * s_k by an explicit triple loop over (k, position, channel)."""
    n, K, c, h, w = stack.shape
    out = np.zeros((n, c, h, w))
    for k in range(K):
        for a in range(n):
            for i in range(h):
                for j in range(w):
                    for ch in range(c):
                        out[a, ch, i, j] += alpha[a, k, ch, i, j] * stack[a, k, ch, i, j] / K
    return out


def confusion_loop(pred, labels, num_classes, ignore):
    cm = [[0] * num_classes for _ in range(num_classes)]
    for p, t in zip(np.ravel(pred), np.ravel(labels)):
        if t == ignore:
            continue
        cm[int(t)][int(p)] += 1
    return np.array(cm)
