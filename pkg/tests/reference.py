"""Scalar, loop-per-component reference implementations used as test oracles.

Nothing here touches numpy linear algebra: every product is an explicit
Python loop over floats, so agreement with the vectorised code is evidence
that both implement the same equations.
"""

import math


def sigm(z):
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def matvec(W, x):
    return [sum(W[r][k] * x[k] for k in range(len(x))) for r in range(len(W))]


def lstm_step(p, x, c_prev, h_prev):
    """``p`` maps field names to nested lists; returns (c, h, gates)."""
    H = len(p["b_i"])
    wxi, wxf, wxc, wxo = (matvec(p[k], x) for k in ("W_xi", "W_xf", "W_xc", "W_xo"))
    whi, whf, whc, who = (matvec(p[k], h_prev) for k in ("W_hi", "W_hf", "W_hc", "W_ho"))
    i = [sigm(wxi[k] + whi[k] + p["w_ci"][k] * c_prev[k] + p["b_i"][k]) for k in range(H)]
    f = [sigm(wxf[k] + whf[k] + p["w_cf"][k] * c_prev[k] + p["b_f"][k]) for k in range(H)]
    g = [math.tanh(wxc[k] + whc[k] + p["b_c"][k]) for k in range(H)]
    c = [f[k] * c_prev[k] + i[k] * g[k] for k in range(H)]
    o = [sigm(wxo[k] + who[k] + p["w_co"][k] * c[k] + p["b_o"][k]) for k in range(H)]
    h = [o[k] * math.tanh(c[k]) for k in range(H)]
    return c, h, {"i": i, "f": f, "g": g, "o": o}


def _lists(tensors, prefix):
    return {k.split(".", 1)[1]: v.tolist() for k, v in tensors.items() if k.startswith(prefix + ".")}


def model_loss(tensors, cfg, inputs, targets, actions, states):
    """Total loss of one episode (lists of flattened frames), closed-loop decoding."""
    enc = {"W": tensors["enc_dense.W"].tolist(), "b": tensors["enc_dense.b"].tolist()}
    dec = {"W": tensors["dec_dense.W"].tolist(), "b": tensors["dec_dense.b"].tolist()}
    head = {"W": tensors["head.W"].tolist(), "b": tensors["head.b"].tolist()}
    lstm_e, lstm_r, lstm_p = (_lists(tensors, n) for n in ("encoder", "recon_decoder", "pred_decoder"))
    H, F = cfg.hidden_dim, cfg.feature_dim

    def dense(layer, v, act):
        z = matvec(layer["W"], v)
        return [act(z[k] + layer["b"][k]) for k in range(len(z))]

    emb = [dense(enc, frame, math.tanh) for frame in inputs]
    c, h = [0.0] * H, [0.0] * H
    for e in emb:
        c, h, _ = lstm_step(lstm_e, e, c, h)

    def run(params, first, steps, extra):
        cc, hh, u = c, h, first
        outs = []
        for k in range(steps):
            x = u + (extra[k] if extra is not None else [])
            cc, hh, _ = lstm_step(params, x, cc, hh)
            feat = dense(head, hh, lambda z: z)
            outs.append(dense(dec, feat, sigm))
            u = feat
        return outs

    recon = run(lstm_r, [0.0] * F, cfg.t_in, None)
    extra = [list(a) + list(s) for a, s in zip(actions, states)] if cfg.conditioned else None
    pred = run(lstm_p, emb[-1], cfg.t_out, extra)
    recon_tgt = inputs[::-1] if cfg.recon_reversed else inputs

    def mse(outs, tgts):
        total, n = 0.0, 0
        for o, t in zip(outs, tgts):
            for a, b in zip(o, t):
                total += (a - b) ** 2
                n += 1
        return total / n

    return mse(recon, recon_tgt) + mse(pred, targets)
