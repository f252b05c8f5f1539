"""Pointwise integrands for level-set derivative formulas.

The k-th derivative of the structure integral turns into surface averages of
scalar fields built from V's derivatives.  With chi = 1/|grad V| and the
normalized derivative operator psi = grad / |grad V|, the fields are

    alpha = lap V / |grad V|^2 - 2 (g.H.g) / |grad V|^4
    P     = psi(V) . psi(alpha)        (closed five-term form below)
    W     = psi(V) . psi(P)            (directional finite difference)
    Q     = psi(V) . psi(W)            (directional finite difference)

W and Q are differenced rather than expanded symbolically: the closed
expansions run to dozens of terms while two shifted evaluations of the
previous field along the gradient direction cost O(N) each.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .models import PotentialModel

EPS_GRAD = 1e-10          # hard floor: below this a point counts as critical
DEFAULT_FD_STEP = 1e-4    # directional step, scaled by (1 + |q|_inf)


class NearCriticalPointError(RuntimeError):
    """Gradient norm under the floor; surface quantities are undefined."""

    def __init__(self, grad_norm: float):
        super().__init__(f"near-critical point: |grad V| = {grad_norm:.3e}")
        self.grad_norm = grad_norm


@dataclass
class GeometryPoint:
    """Scalar geometry of one configuration on (or near) a level set."""

    q: np.ndarray
    grad: np.ndarray
    grad_norm: float
    chi: float
    laplacian: float
    m1: float                    # div(grad V / |grad V|)
    alpha: float
    P: float | None = None
    W: float | None = None
    Q: float | None = None
    fd_error: float = 0.0        # Richardson error estimate for W/Q


def _fields(model: PotentialModel, q: np.ndarray, floor: float = EPS_GRAD):
    b = model.derivative_bundle(q)
    gsq = b["grad_sq"]
    bad = gsq < floor * floor
    return b, np.sqrt(gsq), bad


def alpha_batch(model, q, floor: float = EPS_GRAD):
    """alpha on a batch (..., N); returns (alpha, grad_norm, bad_mask)."""
    b, gn, bad = _fields(model, q, floor)
    with np.errstate(divide="ignore", invalid="ignore"):
        gsq = gn * gn
        a = b["laplacian"] / gsq - 2.0 * b["ghg"] / gsq ** 2
    return a, gn, bad


def p_closed_batch(model, q, floor: float = EPS_GRAD):
    """Five-term closed form of psi(V).psi(alpha) on a batch.

    With chi = 1/|g|, G = g.H.g, Hc = |Hg|^2, T1 = sum g_i d3_ijj,
    T2 = sum g_i g_j g_k d3_ijk:

        P = 8 chi^8 G^2 - 4 chi^6 Hc - 2 chi^6 G lap + chi^4 T1 - 2 chi^6 T2
    """
    b, gn, bad = _fields(model, q, floor)
    with np.errstate(divide="ignore", invalid="ignore"):
        chi2 = 1.0 / (gn * gn)
        chi4 = chi2 * chi2
        chi6 = chi4 * chi2
        G = b["ghg"]
        p = (8.0 * chi4 * chi4 * G * G
             - 4.0 * chi6 * b["hg_sq"]
             - 2.0 * chi6 * G * b["laplacian"]
             + chi4 * b["t1"]
             - 2.0 * chi6 * b["t2"])
    return p, gn, bad


def _directional_batch(model, q, field: Callable, h: float | np.ndarray,
                       floor: float = EPS_GRAD):
    """chi^2 * (grad V . grad field) by central differencing along grad V.

    Richardson-extrapolated over steps {h, h/2}; returns
    (value, grad_norm, error_estimate, bad_mask).
    """
    g = model.gradient(q)
    gn = np.sqrt((g * g).sum(axis=-1))
    bad = gn < floor
    with np.errstate(divide="ignore", invalid="ignore"):
        u = g / gn[..., None]
    h = np.broadcast_to(np.asarray(h, dtype=float), gn.shape)
    hu = h[..., None] * u
    d_h = (field(q + hu) - field(q - hu)) / (2.0 * h)
    d_h2 = (field(q + 0.5 * hu) - field(q - 0.5 * hu)) / h
    d = (4.0 * d_h2 - d_h) / 3.0
    err = np.abs(d_h2 - d_h) / 3.0
    with np.errstate(divide="ignore", invalid="ignore"):
        chi = 1.0 / gn
    return chi * d, gn, chi * err, bad


def _step_for(q, fd_step=None):
    h0 = DEFAULT_FD_STEP if fd_step is None else fd_step
    return h0 * (1.0 + np.abs(q).max(axis=-1))


def w_batch(model, q, fd_step=None, floor: float = EPS_GRAD):
    """W = psi(V).psi(P) with P evaluated in closed form at shifted points."""
    def p_field(x):
        return p_closed_batch(model, x, floor=0.0)[0]

    return _directional_batch(model, q, p_field, _step_for(q, fd_step), floor)


def q_batch(model, q, fd_step=None, floor: float = EPS_GRAD):
    """Q = psi(V).psi(W); W itself is a directional difference of P."""
    h = _step_for(q, fd_step)

    def w_field(x):
        return w_batch(model, x, fd_step=fd_step, floor=0.0)[0]

    # outer step a decade larger than the inner one keeps the inner FD noise
    # from being amplified by the outer division
    val, gn, err, bad = _directional_batch(model, q, w_field, 10.0 * h, floor)
    return val, gn, err, bad


def alpha(model: PotentialModel, q) -> float:
    """lap V/|grad V|^2 - 2 g.H.g/|grad V|^4 at a single configuration.

    Identical to div(grad V / |grad V|^2), which is what makes it the
    first-derivative integrand.
    """
    a, gn, bad = alpha_batch(model, np.asarray(q, dtype=float))
    if np.ndim(a) == 0:
        if bad:
            raise NearCriticalPointError(float(gn))
        return float(a)
    if bad.any():
        raise NearCriticalPointError(float(gn[bad].min()))
    return a


def p_closed_form(model: PotentialModel, q) -> float:
    p, gn, bad = p_closed_batch(model, np.asarray(q, dtype=float))
    if np.ndim(p) == 0:
        if bad:
            raise NearCriticalPointError(float(gn))
        return float(p)
    if bad.any():
        raise NearCriticalPointError(float(gn[bad].min()))
    return p


def psi_v_psi(model: PotentialModel, q, f: Callable, h: float | None = None):
    """(grad V . grad f) / |grad V|^2 for an arbitrary scalar field f.

    Central directional difference along the gradient direction with
    Richardson extrapolation over {h, h/2}.  Returns (value, error_estimate).
    """
    q = np.asarray(q, dtype=float)
    step = _step_for(q, h)
    if np.asarray(step, dtype=float).ndim == 0 and float(step) <= 0:
        raise ValueError("step underflow")
    val, gn, err, bad = _directional_batch(model, q, f, step)
    if np.ndim(val) == 0:
        if bad:
            raise NearCriticalPointError(float(gn))
        return float(val), float(err)
    return val, err


def m1_divergence(model: PotentialModel, q) -> float:
    """div(grad V / |grad V|) = chi lap V - chi^3 g.H.g."""
    b, gn, bad = _fields(model, np.asarray(q, dtype=float))
    if np.any(bad):
        raise NearCriticalPointError(float(np.min(gn)))
    chi = 1.0 / gn
    return chi * b["laplacian"] - chi ** 3 * b["ghg"]


def integrand_suite(model: PotentialModel, q, order: int = 1,
                    fd_step: float | None = None) -> GeometryPoint:
    """Geometry of one point, filled up to the requested derivative order."""
    if order not in (1, 2, 3, 4):
        raise ValueError("order must be 1..4")
    q = np.asarray(q, dtype=float)
    if q.ndim != 1:
        raise ValueError("integrand_suite takes a single configuration")
    b, gn, bad = _fields(model, q)
    if bad:
        raise NearCriticalPointError(float(gn))
    gn = float(gn)
    chi = 1.0 / gn
    lap = float(b["laplacian"])
    G = float(b["ghg"])
    a = lap * chi ** 2 - 2.0 * G * chi ** 4
    point = GeometryPoint(q=q, grad=b["grad"], grad_norm=gn, chi=chi,
                          laplacian=lap, m1=chi * lap - chi ** 3 * G,
                          alpha=a)
    if order >= 2:
        point.P = p_closed_form(model, q)
    if order >= 3:
        w, _, err_w, _ = w_batch(model, q, fd_step=fd_step)
        point.W = float(w)
        point.fd_error = float(err_w)
    if order >= 4:
        qq, _, err_q, _ = q_batch(model, q, fd_step=fd_step)
        point.Q = float(qq)
        point.fd_error = max(point.fd_error, float(err_q))
    return point


def integrand_table(model: PotentialModel, q, order: int = 1,
                    fd_step: float | None = None,
                    floor: float = EPS_GRAD) -> dict:
    """Batched integrands for a sample block (B, N).

    Returns arrays v, grad_norm, alpha and, per order, P/W/Q, plus a mask
    ``bad`` marking near-critical rows (left NaN in the scalar columns).
    """
    q = np.asarray(q, dtype=float)
    out: dict = {}
    b, gn, bad = _fields(model, q, floor)
    out["v"] = b["v"]
    out["grad_norm"] = gn
    out["bad"] = bad
    with np.errstate(divide="ignore", invalid="ignore"):
        gsq = gn * gn
        out["alpha"] = b["laplacian"] / gsq - 2.0 * b["ghg"] / gsq ** 2
    if order >= 2:
        out["P"] = p_closed_batch(model, q, floor)[0]
    if order >= 3:
        w, _, err_w, _ = w_batch(model, q, fd_step=fd_step, floor=floor)
        out["W"] = w
        out["fd_error_w"] = err_w
    if order >= 4:
        qv, _, err_q, _ = q_batch(model, q, fd_step=fd_step, floor=floor)
        out["Q"] = qv
        out["fd_error_q"] = err_q
    for key in ("alpha", "P", "W", "Q"):
        if key in out:
            arr = np.asarray(out[key], dtype=float)
            arr[bad] = np.nan
            out[key] = arr
    return out
