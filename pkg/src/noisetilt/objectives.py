"""Training loss (L2 penalty minus temperature-scaled reward), the exact
noise-space KL with its Jacobian terms, and the log-determinant error bound."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .generators import Generator
from .hypernet import NoiseHypernetwork
from .linalg import jacobian_fd, logdet_and_trace
from .rewards import Reward


@dataclass
class LossBreakdown:
    l2_term: float       # E 1/2 ||f(x0)||^2
    reward_term: float   # E r(g(x0 + f(x0))) / alpha
    total: float         # l2_term - reward_term
    batch_size: int
    alpha: float


@dataclass
class KlBreakdown:
    l2_term: float
    trace_term: float
    logdet_term: float
    exact_kl: float      # l2 + trace - logdet
    approx_error: float  # exact_kl - l2_term
    bound: Optional[float]
    lipschitz_used: float


def hypernoise_loss(hn: NoiseHypernetwork, g: Generator, r: Reward,
                    noise_batch: np.ndarray, conditions=None,
                    alpha: float = 1.0) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Monte-Carlo loss over a noise batch plus gradients for the adapter
    parameters (the backbone is never differentiated into)."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    x = np.atleast_2d(np.asarray(noise_batch, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("noise batch is empty")
    b = x.shape[0]

    param_nodes = {k: ad.param(v, name=k) for k, v in hn.params().items()}
    x_node = ad.constant(x)
    cond_node = ad.constant(np.asarray(conditions, dtype=np.float64)) if conditions is not None else None
    delta = hn.delta_node(x_node, cond_node, param_nodes)
    xhat = ad.add(x_node, delta)
    out = g.node(xhat, cond_node)
    reward_rows = r.node_rows(out)
    if not np.all(np.isfinite(reward_rows.value)):
        bad = int(np.flatnonzero(~np.isfinite(np.atleast_1d(reward_rows.value)))[0])
        raise FloatingPointError(f"non-finite reward at sample index {bad}")
    l2 = ad.scale(ad.amean(ad.sumsq_rows(delta), axis=None), 0.5)
    rew = ad.scale(ad.amean(reward_rows, axis=None), 1.0 / alpha)
    total = ad.sub(l2, rew)

    grads = ad.backprop(total)
    param_grads = {
        k: grads.get(id(node), np.zeros_like(node.value))
        for k, node in param_nodes.items()
    }
    breakdown = LossBreakdown(
        l2_term=float(l2.value),
        reward_term=float(rew.value),
        total=float(total.value),
        batch_size=b,
        alpha=float(alpha),
    )
    return breakdown, param_grads


MAX_EXACT_KL_DIM = 64


def _reverse_mode_jacobian(hn: NoiseHypernetwork, x: np.ndarray,
                           condition=None) -> np.ndarray:
    """Jacobian of the perturbation at one point, one backward sweep per row."""
    d = hn.backbone.latent_dim
    x_node = ad.param(x, name="x0")
    cond = ad.constant(np.asarray(condition, dtype=np.float64)) if condition is not None else None
    delta = hn.delta_node(x_node, cond)
    rows = []
    for i in range(d):
        seed = np.zeros(d)
        seed[i] = 1.0
        grads = ad.backprop(delta, seed)
        rows.append(grads.get(id(x_node), np.zeros(d)))
    return np.stack(rows, axis=0)


def exact_noise_kl(hn: NoiseHypernetwork, noise_samples: np.ndarray,
                   conditions=None, validate_fd: bool = True) -> KlBreakdown:
    """Exact KL between modulated and base noise, averaged over samples.

    Dense Jacobians are computed by reverse-mode rows; the first sample is
    cross-checked against central finite differences.  Validation pathway
    only: dimensions are capped so the dense route stays cheap.
    """
    x = np.atleast_2d(np.asarray(noise_samples, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("need at least one sample")
    d = hn.backbone.latent_dim
    if d > MAX_EXACT_KL_DIM:
        raise ValueError(f"exact KL restricted to latent_dim <= {MAX_EXACT_KL_DIM}")

    def cond_for(i):
        if conditions is None:
            return None
        c = np.asarray(conditions, dtype=np.float64)
        return c if c.ndim == 1 else c[i]

    l2_terms, traces, logdets = [], [], []
    for i in range(x.shape[0]):
        jac = _reverse_mode_jacobian(hn, x[i], cond_for(i))
        if validate_fd and i == 0:
            ref = jacobian_fd(lambda v: hn.perturb(v, cond_for(0)), x[0])
            if not np.allclose(jac, ref, rtol=1e-5, atol=1e-6):
                raise AssertionError("reverse-mode Jacobian disagrees with finite differences")
        try:
            tr, ld = logdet_and_trace(jac)
        except Exception as exc:
            raise type(exc)(f"{exc} (sample index {i})") from exc
        f = hn.perturb(x[i], cond_for(i))
        l2_terms.append(0.5 * float(f @ f))
        traces.append(tr)
        logdets.append(ld)

    l2 = float(np.mean(l2_terms))
    tr = float(np.mean(traces))
    ld = float(np.mean(logdets))
    lip = hn.lipschitz_upper_bound()
    bound = theorem_bound(d, lip) if lip < 1.0 else None
    return KlBreakdown(
        l2_term=l2,
        trace_term=tr,
        logdet_term=ld,
        exact_kl=l2 + tr - ld,
        approx_error=tr - ld,
        bound=bound,
        lipschitz_used=lip,
    )


def error_term(j: np.ndarray) -> float:
    """Trace minus log|det(I + .)|: the cost of dropping the Jacobian terms."""
    tr, ld = logdet_and_trace(j)
    return tr - ld


def theorem_bound(d: int, lipschitz: float) -> float:
    """d * (-ln(1 - L) - L); valid for 0 <= L < 1."""
    if not 0.0 <= lipschitz < 1.0:
        raise ValueError(f"Lipschitz constant must be in [0, 1), got {lipschitz}")
    return d * (-math.log1p(-lipschitz) - lipschitz)
