"""Zero-order-hold discretisation, the prompt-gated selective scan, and a Mamba-style block."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .numcore import Parameter, Tensor

SINGULAR_EPS = 1e-8


def _expm1_ratio(z: np.ndarray) -> np.ndarray:
    """(exp(z) - 1) / z, continuous through z = 0."""
    z = np.asarray(z, dtype=np.result_type(z, np.float64))
    small = np.abs(z) < SINGULAR_EPS
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 + 0.5 * z, np.expm1(safe) / safe)


def _expm1_ratio_grad(z: np.ndarray, exp_z: np.ndarray, ratio: np.ndarray) -> np.ndarray:
    """d/dz of (exp(z) - 1) / z, given exp(z) and the ratio itself."""
    small = np.abs(z) < 1e-3
    safe = np.where(small, 1.0, z)
    exact = (exp_z - ratio) / safe
    if not small.any():
        return exact
    series = 0.5 + z * (1.0 / 3.0 + z * (1.0 / 8.0 + z * (1.0 / 30.0 + z / 144.0)))
    return np.where(small, series, exact)


def zoh_discretize(a: float, delta: float, b: float) -> tuple[float, float]:
    """Exact ZOH for a scalar mode: (exp(a*delta), (a*delta)^-1 (exp(a*delta) - 1) * delta * b)."""
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    z = a * delta
    a_bar = math.exp(z)
    b_bar = float(_expm1_ratio(z)) * delta * b
    return a_bar, b_bar


@dataclass
class SsmParams:
    a_log: Tensor  # (S,) or (E, S); A = -exp(a_log)
    d: Tensor  # (E,)


@dataclass
class SelectiveInputs:
    delta: Tensor  # (..., T) or (..., T, E); positive
    b: Tensor  # (..., T, S)
    c: Tensor  # (..., T, S)


def selective_scan(
    x,
    params: SsmParams,
    inputs: SelectiveInputs,
    prompt=None,
    euler: bool = False,
) -> Tensor:
    """y_t = <c_t + p_t, h_t> + d * x_t with h_t = a_bar_t * h_{t-1} + b_bar_t * x_t, per channel.

    Runs sequentially over T; every input (including the prompt) gets a gradient.
    """
    x = nc.as_tensor(x)
    a_log, d = nc.as_tensor(params.a_log), nc.as_tensor(params.d)
    delta, bm, cm = (nc.as_tensor(inputs.delta), nc.as_tensor(inputs.b), nc.as_tensor(inputs.c))
    prompt = None if prompt is None else nc.as_tensor(prompt)

    *lead, T, E = x.shape
    S = a_log.shape[-1]
    nb = int(np.prod(lead)) if lead else 1
    shared_delta = delta.ndim == x.ndim - 1
    de = 1 if shared_delta else delta.shape[-1]
    if delta.shape[: x.ndim - 1] != x.shape[:-1] or de not in (1, E):
        raise ValueError(f"delta shape {delta.shape} does not match x {x.shape}")
    for name, t in (("b", bm), ("c", cm)) + ((("prompt", prompt),) if prompt is not None else ()):
        if t.shape != tuple(lead) + (T, S):
            raise ValueError(f"{name} shape {t.shape} does not match sequence {tuple(lead) + (T, S)}")
    if d.shape != (E,):
        raise ValueError(f"d shape {d.shape} does not match {E} channels")

    xs = x.data.reshape(nb, T, E)
    dt = delta.data.reshape(nb, T, de)
    bb = bm.data.reshape(nb, T, S)
    gate = cm.data if prompt is None else cm.data + prompt.data
    gate = gate.reshape(nb, T, S)
    A = -np.exp(a_log.data)  # (S,) or (E, S)
    ze = de if a_log.ndim == 1 else E  # channel extent of the discretised terms

    z = dt[..., None] * A  # (nb, T, ze, S)
    a_bar = np.exp(z)
    phi = np.ones_like(z) if euler else _expm1_ratio(z)
    b_bar = phi * dt[..., None] * bb[:, :, None, :]

    # time-major loop keeps each step's (nb, E, S) working set in cache
    ft = np.result_type(a_bar, b_bar, xs, gate)
    hs = np.empty((T, nb, E, S), dtype=ft)
    y = np.empty((T, nb, E), dtype=ft)
    h = np.zeros((nb, E, S), dtype=ft)
    for t in range(T):
        h = a_bar[:, t] * h + b_bar[:, t] * xs[:, t, :, None]
        hs[t] = h
        y[t] = np.einsum("nes,ns->ne", h, gate[:, t])
    y = y.transpose(1, 0, 2) + d.data * xs

    def bw(g):
        gy = g.reshape(nb, T, E)
        dgate = np.empty((nb, T, S))
        dx = gy * d.data
        dd = (gy * xs).sum(axis=(0, 1))
        # grads of the loss w.r.t. a_bar and b_bar, reduced to their (ze) extent
        da_bar = np.empty((nb, T, ze, S))
        db_bar = np.empty((nb, T, ze, S))
        carry = np.zeros((nb, E, S))
        for t in range(T - 1, -1, -1):
            dgate[:, t] = np.einsum("ne,nes->ns", gy[:, t], hs[t])
            carry += gy[:, t, :, None] * gate[:, t, None, :]
            cx = carry * xs[:, t, :, None]
            if t > 0:
                ch = carry * hs[t - 1]
                da_bar[:, t] = ch if ze == E else ch.sum(axis=1, keepdims=True)
            else:
                da_bar[:, t] = 0.0
            db_bar[:, t] = cx if ze == E else cx.sum(axis=1, keepdims=True)
            dx[:, t] += (carry * b_bar[:, t]).sum(axis=-1)
            carry *= a_bar[:, t]

        dtb = dt[..., None]
        dz = da_bar * a_bar
        if not euler:
            dz += db_bar * dtb * bb[:, :, None, :] * _expm1_ratio_grad(z, a_bar, phi)
        ddt = (db_bar * phi * bb[:, :, None, :] + dz * A).sum(axis=-1)  # (nb, T, ze)
        if ddt.shape[-1] != de:
            ddt = ddt.sum(axis=-1, keepdims=True)
        dbm = (db_bar * phi * dtb).sum(axis=2)
        dA = (dz * dtb).sum(axis=(0, 1))
        if a_log.ndim == 1:
            dA = dA.sum(axis=0)
        da_log = dA * A
        grads = [
            dx.reshape(x.shape),
            da_log,
            dd,
            ddt.reshape(delta.shape),
            dbm.reshape(bm.shape),
            dgate.reshape(cm.shape),
        ]
        if prompt is not None:
            grads.append(dgate.reshape(prompt.shape))
        return grads

    ins = [x, a_log, d, delta, bm, cm] + ([prompt] if prompt is not None else [])
    return nc.custom_op(y.reshape(x.shape), ins, bw, "selective_scan")


def causal_depthwise_conv(u, weight, bias) -> Tensor:
    """Per-channel causal convolution over the row axis with zero left padding.

    ``weight`` is (width, E); weight[-1] multiplies the current step.
    """
    u = nc.as_tensor(u)
    width = weight.shape[0]
    T = u.shape[-2]
    pad = np.zeros(u.shape[:-2] + (width - 1, u.shape[-1]))
    padded = nc.concat([pad, u], axis=-2)
    out = None
    for j in range(width):
        term = padded[..., j:j + T, :] * weight[j]
        out = term if out is None else out + term
    return out + bias


def _inv_softplus(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


class MambaBlock:
    """Pre-norm selective-SSM block with a gate prompt injected into the output matrix.

    x -> LN -> in-proj (main, gate) -> causal conv(4) -> SiLU -> selective scan
      -> * SiLU(gate) -> out-proj -> + x
    """

    def __init__(
        self,
        d_model: int,
        d_state: int = 16,
        expand: int = 2,
        conv_width: int = 4,
        prompt_width: int | None = None,
        rng: np.random.Generator | None = None,
        euler: bool = False,
    ):
        rng = np.random.default_rng(0) if rng is None else rng
        E = expand * d_model
        self.d_model, self.d_inner, self.d_state = d_model, E, d_state
        self.euler = euler

        def normal(shape, fan_in, name):
            return Parameter(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape), name=name)

        self.ln_w = Parameter(np.ones(d_model), name="ln_w")
        self.ln_b = Parameter(np.zeros(d_model), name="ln_b")
        self.in_w = normal((d_model, 2 * E), d_model, "in_w")
        self.in_b = Parameter(np.zeros(2 * E), name="in_b")
        bound = 1.0 / math.sqrt(conv_width)
        self.conv_w = Parameter(rng.uniform(-bound, bound, size=(conv_width, E)), name="conv_w")
        self.conv_b = Parameter(rng.uniform(-bound, bound, size=E), name="conv_b")
        self.dt_w = normal((E, 1), E, "dt_w")
        dt0 = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), size=1))
        self.dt_b = Parameter(_inv_softplus(dt0), name="dt_b")
        self.b_w = normal((E, d_state), E, "b_w")
        self.c_w = normal((E, d_state), E, "c_w")
        self.a_log = Parameter(np.log(np.arange(1, d_state + 1, dtype=np.float64)), name="a_log")
        self.d = Parameter(np.ones(E), name="d")
        self.out_w = normal((E, d_model), E, "out_w")
        self.out_b = Parameter(np.zeros(d_model), name="out_b")
        self.prompt_w = None
        if prompt_width is not None and prompt_width != d_state:
            self.prompt_w = normal((prompt_width, d_state), prompt_width, "prompt_w")

    def parameters(self) -> dict[str, Parameter]:
        names = [
            "ln_w", "ln_b", "in_w", "in_b", "conv_w", "conv_b", "dt_w", "dt_b",
            "b_w", "c_w", "a_log", "d", "out_w", "out_b",
        ]
        out = {n: getattr(self, n) for n in names}
        if self.prompt_w is not None:
            out["prompt_w"] = self.prompt_w
        return out

    def __call__(self, x, prompt=None) -> Tensor:
        x = nc.as_tensor(x)
        if prompt is not None:
            prompt = nc.as_tensor(prompt)
            if prompt.shape[-2] != x.shape[-2]:
                raise ValueError(f"prompt has {prompt.shape[-2]} rows, sequence has {x.shape[-2]}")
            if self.prompt_w is not None:
                prompt = nc.matmul(prompt, self.prompt_w)
            elif prompt.shape[-1] != self.d_state:
                raise ValueError(f"prompt width {prompt.shape[-1]} != state width {self.d_state}")
        E = self.d_inner
        h = nc.layer_norm(x, self.ln_w, self.ln_b)
        xz = nc.linear(h, self.in_w, self.in_b)
        u, gate = xz[..., :E], xz[..., E:]
        u = nc.silu(causal_depthwise_conv(u, self.conv_w, self.conv_b))
        delta = nc.softplus(nc.linear(u, self.dt_w, self.dt_b))  # one step size per token
        inputs = SelectiveInputs(delta, nc.matmul(u, self.b_w), nc.matmul(u, self.c_w))
        y = selective_scan(u, SsmParams(self.a_log, self.d), inputs, prompt, euler=self.euler)
        y = y * nc.silu(gate)
        return x + nc.linear(y, self.out_w, self.out_b)
