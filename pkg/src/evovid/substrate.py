"""Differentiable-computation substrate shared by all networks.

torch supplies tensors, the op inventory (conv2d, transposed conv, linear,
leaky-relu/tanh/sigmoid, instance norm, concatenation, spatial means) and
reverse-mode gradients. This module adds the pieces with pinned contracts:
a GRU cell in the original gating form, seeded fan-in weight init, a
finite-difference gradient checker, and Adam state (de)serialization so
optimizer state survives checkpoint round-trips bit-exactly.
"""

from __future__ import annotations

import os
from typing import Callable, Iterable

import torch
import torch.nn as nn

from .captions import InvalidInputError


class NumericError(RuntimeError):
    """A computation produced non-finite values."""


def configure_threads(default: int | None = None) -> int:
    """Bound torch intra-op parallelism by the TIVGAN_THREADS env var."""
    env = os.environ.get("TIVGAN_THREADS")
    threads = int(env) if env else (default or torch.get_num_threads())
    threads = max(1, threads)
    torch.set_num_threads(threads)
    return threads


def seeded_generator(seed: int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(int(seed))
    return gen


class GRUCell(nn.Module):
    """Single gated recurrent cell.

    h' = (1 - u) * h + u * c
    u  = sigmoid(W_u x + U_u h + b_u)
    r  = sigmoid(W_r x + U_r h + b_r)
    c  = tanh(W_c x + U_c (r * h) + b_c)

    Note the candidate applies the reset gate to h before the hidden
    projection (the original gating form), so with all weights zero the
    update halves the hidden state: u = 0.5, c = 0, h' = h / 2.
    """

    def __init__(self, input_dim: int, hidden_dim: int):
        super().__init__()
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.w_u = nn.Parameter(torch.empty(hidden_dim, input_dim))
        self.u_u = nn.Parameter(torch.empty(hidden_dim, hidden_dim))
        self.b_u = nn.Parameter(torch.zeros(hidden_dim))
        self.w_r = nn.Parameter(torch.empty(hidden_dim, input_dim))
        self.u_r = nn.Parameter(torch.empty(hidden_dim, hidden_dim))
        self.b_r = nn.Parameter(torch.zeros(hidden_dim))
        self.w_c = nn.Parameter(torch.empty(hidden_dim, input_dim))
        self.u_c = nn.Parameter(torch.empty(hidden_dim, hidden_dim))
        self.b_c = nn.Parameter(torch.zeros(hidden_dim))

    def forward(self, h: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        if h.shape[-1] != self.hidden_dim or x.shape[-1] != self.input_dim:
            raise InvalidInputError(
                f"gru cell expects hidden {self.hidden_dim} / input {self.input_dim}, "
                f"got {h.shape[-1]} / {x.shape[-1]}"
            )
        u = torch.sigmoid(x @ self.w_u.T + h @ self.u_u.T + self.b_u)
        r = torch.sigmoid(x @ self.w_r.T + h @ self.u_r.T + self.b_r)
        c = torch.tanh(x @ self.w_c.T + (r * h) @ self.u_c.T + self.b_c)
        return (1.0 - u) * h + u * c


def _fan_in(weight: torch.Tensor) -> int:
    if weight.dim() == 2:
        return weight.shape[1]
    return weight.shape[1] * weight.shape[2] * weight.shape[3]


def init_parameters(module: nn.Module, gen: torch.Generator) -> None:
    """Seeded init: centered uniform scaled by fan-in for weights, zero bias.

    Covers conv / transposed-conv / linear layers, instance-norm affine
    terms and GRU cells. Construction-time init is overwritten, so model
    creation is reproducible regardless of the global torch RNG.
    """
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Conv3d, nn.Linear)):
            bound = (6.0 / _fan_in(m.weight)) ** 0.5
            _uniform_(m.weight, bound, gen)
            if m.bias is not None:
                m.bias.data.zero_()
        elif isinstance(m, (nn.ConvTranspose2d, nn.ConvTranspose3d)):
            # fan-in of a transposed conv is its output-channel axis
            fan = m.weight.shape[0] * m.weight.shape[2] * m.weight.shape[3]
            _uniform_(m.weight, (6.0 / fan) ** 0.5, gen)
            if m.bias is not None:
                m.bias.data.zero_()
        elif isinstance(m, (nn.InstanceNorm2d, nn.InstanceNorm3d)) and m.affine:
            m.weight.data.fill_(1.0)
            m.bias.data.zero_()
        elif isinstance(m, GRUCell):
            for w in (m.w_u, m.w_r, m.w_c):
                _uniform_(w, (6.0 / m.input_dim) ** 0.5, gen)
            for w in (m.u_u, m.u_r, m.u_c):
                _uniform_(w, (6.0 / m.hidden_dim) ** 0.5, gen)
            for b in (m.b_u, m.b_r, m.b_c):
                b.data.zero_()


def _uniform_(param: nn.Parameter, bound: float, gen: torch.Generator) -> None:
    with torch.no_grad():
        param.copy_(torch.rand(param.shape, generator=gen, dtype=param.dtype) * 2.0 * bound - bound)


def grad_check(fn: Callable[[], torch.Tensor], params: Iterable[torch.Tensor],
               eps: float = 1e-4) -> float:
    """Max relative error between autograd and central finite differences.

    `fn` must recompute the scalar loss from the current parameter values.
    Error per coordinate is |a - n| / max(1e-8, |a| + |n|); the max over
    all coordinates of all params is returned. Use float64 parameters for
    meaningful tolerances.
    """
    params = [p for p in params]
    loss = fn()
    if loss.dim() != 0:
        raise InvalidInputError("grad_check needs a scalar loss")
    if not torch.isfinite(loss):
        raise NumericError("loss is not finite")
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    max_err = 0.0
    with torch.no_grad():
        for p, g in zip(params, grads):
            g_flat = (torch.zeros_like(p) if g is None else g).reshape(-1)
            p_flat = p.reshape(-1)
            for i in range(p_flat.numel()):
                orig = p_flat[i].item()
                p_flat[i] = orig + eps
                f_plus = fn().item()
                p_flat[i] = orig - eps
                f_minus = fn().item()
                p_flat[i] = orig
                if not (torch.isfinite(torch.tensor(f_plus)) and torch.isfinite(torch.tensor(f_minus))):
                    raise NumericError("finite-difference evaluation is not finite")
                numeric = (f_plus - f_minus) / (2.0 * eps)
                analytic = float(g_flat[i])
                err = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
                max_err = max(max_err, err)
    return max_err


def make_adam(params: Iterable[nn.Parameter], lr: float,
              betas: tuple[float, float] = (0.5, 0.999)) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, betas=betas)


def adam_state_export(opt: torch.optim.Adam,
                      named: list[tuple[str, nn.Parameter]]) -> dict:
    """Snapshot Adam moments keyed by parameter id."""
    out = {}
    for name, p in named:
        st = opt.state.get(p)
        if not st:
            continue
        out[name] = {
            "step": float(st["step"]),
            "exp_avg": st["exp_avg"].detach().clone(),
            "exp_avg_sq": st["exp_avg_sq"].detach().clone(),
        }
    return out


def adam_state_import(opt: torch.optim.Adam,
                      named: list[tuple[str, nn.Parameter]], blob: dict) -> None:
    for name, p in named:
        if name not in blob:
            continue
        st = blob[name]
        opt.state[p] = {
            "step": torch.tensor(float(st["step"])),
            "exp_avg": st["exp_avg"].clone().to(p.dtype),
            "exp_avg_sq": st["exp_avg_sq"].clone().to(p.dtype),
        }
