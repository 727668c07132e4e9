"""Shared test utilities: finite-difference gradient oracle and an
independent straight-line numpy reimplementation of the encoder forward."""

from __future__ import annotations

import numpy as np

FD_STEP = 1e-5
FD_TOL = 1e-4


def central_diff(fn, array: np.ndarray, index: tuple, step: float = FD_STEP) -> float:
    """Two-sided finite difference of scalar fn() wrt array[index], in place."""
    orig = array[index]
    array[index] = orig + step
    up = fn()
    array[index] = orig - step
    down = fn()
    array[index] = orig
    return (up - down) / (2.0 * step)


def check_gradients(fn, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                    rng: np.random.Generator, coords_per_param: int = 4,
                    tol: float = FD_TOL) -> int:
    """Compare analytic grads against central differences on random coordinates.

    fn recomputes the scalar loss from the current contents of `params`
    (mutated in place during probing).  Returns the number of coordinates
    checked; raises AssertionError on the first mismatch.
    """
    checked = 0
    for name, arr in params.items():
        g = grads[name]
        n = min(coords_per_param, arr.size)
        flat_choices = rng.choice(arr.size, size=n, replace=False)
        for flat in flat_choices:
            index = np.unravel_index(int(flat), arr.shape)
            fd = central_diff(fn, arr, index)
            analytic = float(g[index])
            err = abs(analytic - fd) / max(1.0, abs(analytic))
            assert err <= tol, (
                f"gradient mismatch at {name}{list(index)}: "
                f"analytic {analytic:.10g}, fd {fd:.10g}, rel err {err:.3g}"
            )
            checked += 1
    return checked


# -- independent encoder forward (plain numpy, no autodiff) -----------


def _np_layer_norm(x, gain, bias, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / np.sqrt(var + eps) * gain + bias


def _np_gelu(x):
    c = np.sqrt(2.0 / np.pi)
    return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x ** 3)))


def _np_softmax(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def straightline_token_forward(p: dict[str, np.ndarray], tokens: np.ndarray,
                               key_bias: np.ndarray, n_heads: int,
                               positions: np.ndarray) -> np.ndarray:
    """Recompute the encoder stack for one already-padded batch.

    p maps parameter names to raw arrays; `positions` is the additive
    (already scaled) positional table for the batch length.
    """
    B, S = tokens.shape
    h = p["tok_emb"].shape[1]
    dk = h // n_heads
    x = p["tok_emb"][tokens] + positions

    def split(m):
        return m.reshape(B, S, n_heads, dk).transpose(0, 2, 1, 3)

    q = split(x @ p["attn_wq"] + p["attn_bq"])
    k = split(x @ p["attn_wk"] + p["attn_bk"])
    v = split(x @ p["attn_wv"] + p["attn_bv"])
    scores = q @ k.transpose(0, 1, 3, 2) * dk ** -0.5 + key_bias
    ctx = _np_softmax(scores, axis=-1) @ v
    ctx = ctx.transpose(0, 2, 1, 3).reshape(B, S, h)
    y = _np_layer_norm(x + ctx @ p["attn_wo"] + p["attn_bo"], p["ln1_g"], p["ln1_b"])
    ff = _np_gelu(y @ p["ff_w1"] + p["ff_b1"]) @ p["ff_w2"] + p["ff_b2"]
    return _np_layer_norm(y + ff, p["ln2_g"], p["ln2_b"])


def straightline_project(p: dict[str, np.ndarray], f: np.ndarray) -> np.ndarray:
    """Eval-mode projection head: linear then layer norm, no dropout."""
    return _np_layer_norm(f @ p["proj_w"] + p["proj_b"], p["proj_ln_g"], p["proj_ln_b"])
