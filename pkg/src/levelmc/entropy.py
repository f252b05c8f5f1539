"""Configurational entropy, its level-set derivative estimators, and oracles.

Two independent routes to the same quantities:

* surface estimators: moments/cumulants of the level-set integrands
  (alpha, P, W, Q) sampled by the thin-shell walker, combined as

      S'    = <alpha>
      S''   = N [ Var(alpha) + <P> ]
      S'''  = N^2 [ mu3(alpha) + 3 Cov(alpha, P) + <W> ]
      S'''' = N^3 [ kappa4(alpha) + 6 <d(alpha)^2 d(P)> + 3 Var(P)
                    + 4 Cov(alpha, W) + <Q> ]

  (derivatives are with respect to the energy per degree of freedom; the
  N^(k-1) factors are the exact Jacobians of v = N vbar);

* desk-scale oracles: histograms of V under the uniform configuration
  measure (dense grid or hit-or-miss), finite-difference stencils on
  log Omega, and closed forms for the harmonic well.

Absolute normalization of Omega is never needed; only log-derivatives and
ratios enter, so tables carry an arbitrary global constant.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngmod
from .models import PotentialModel
from .sampler import (LevelSetSamples, ShellSamplerConfig, sample_level_set,
                      surface_average)


# ---------------------------------------------------------------------------
# density-of-states oracle
# ---------------------------------------------------------------------------

class RangeTooSmallError(ValueError):
    """Coordinate box clips the sublevel sets being tabulated."""


@dataclass
class DensityOfStatesTable:
    """Histogram estimate of the structure integral and sublevel volume.

    ``omega`` is the density of box-volume fraction per unit energy,
    ``m_cum`` the cumulative fraction at the right bin edges.  Both carry an
    arbitrary common normalization.
    """

    model_kind: str
    n_dof: int
    mode: str                    # "grid" or "hitmiss"
    bin_edges: np.ndarray
    counts: np.ndarray
    total: int
    boundary_fraction: float
    grid_spec: dict = field(default_factory=dict)

    @property
    def bin_width(self) -> float:
        return float(self.bin_edges[1] - self.bin_edges[0])

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def omega(self) -> np.ndarray:
        return self.counts / (self.total * self.bin_width)

    @property
    def m_cum(self) -> np.ndarray:
        return np.cumsum(self.counts) / self.total

    def log_omega(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.omega)

    def _bin_of(self, v: float) -> int:
        i = int(np.searchsorted(self.bin_edges, v, side="right")) - 1
        if i < 0 or i >= len(self.counts):
            raise ValueError(f"energy {v} outside tabulated range")
        return i

    def s_at(self, vbar: float) -> float:
        """(1/N) log Omega at v = N vbar, up to a global additive constant."""
        v = vbar * self.n_dof
        i = self._bin_of(v)
        return float(self.log_omega()[i]) / self.n_dof

    def derivative(self, vbar: float, k: int, step_bins: int | None = None):
        """d^k S / d vbar^k by central stencils on log Omega.

        Returns (value, error_estimate); the error combines propagated
        per-bin count noise with a step-doubling truncation estimate, and
        grows steeply with k (noise amplification ~ 1/h^k).
        """
        if k not in (1, 2, 3, 4):
            raise ValueError("k must be 1..4")
        v = vbar * self.n_dof
        i0 = self._bin_of(v)
        logw = self.log_omega()
        with np.errstate(divide="ignore"):
            sig = 1.0 / np.sqrt(np.maximum(self.counts, 1))

        def stencil(s: int):
            h = s * self.bin_width
            if k == 1:
                idx, coef = [-s, s], [-0.5, 0.5]
            elif k == 2:
                idx, coef = [-s, 0, s], [1.0, -2.0, 1.0]
            elif k == 3:
                idx, coef = [-2 * s, -s, s, 2 * s], [-0.5, 1.0, -1.0, 0.5]
            else:
                idx = [-3 * s, -2 * s, -s, 0, s, 2 * s, 3 * s]
                coef = [-1 / 6, 2.0, -13 / 2, 28 / 3, -13 / 2, 2.0, -1 / 6]
            ii = [i0 + d for d in idx]
            if min(ii) < 0 or max(ii) >= len(logw):
                raise ValueError("stencil does not fit in the tabulated range")
            vals = logw[ii]
            if not np.all(np.isfinite(vals)):
                raise ValueError("empty bins under the stencil")
            d = float(np.dot(coef, vals)) / h ** k
            noise = float(np.sqrt(np.dot(np.square(coef), sig[ii] ** 2))) / h ** k
            return d, noise

        s = step_bins if step_bins is not None else {1: 2, 2: 2, 3: 6, 4: 8}[k]
        d1, n1 = stencil(s)
        try:
            d2, _ = stencil(2 * s)
            trunc = abs(d2 - d1) / 3.0
        except ValueError:
            trunc = 0.0
        jac = self.n_dof ** (k - 1)
        return jac * d1, jac * (n1 + trunc)

    def beta_oracle(self, vbar: float) -> float:
        """Omega(v) / M(v); the normalization constant cancels."""
        v = vbar * self.n_dof
        i = self._bin_of(v)
        m = self.m_cum[i]
        if m <= 0:
            raise ValueError(f"sublevel volume is zero at v = {v} "
                             "(below the ground state)")
        return float(self.omega[i] / m)


def _default_ranges(model: PotentialModel):
    if model.wrap_coordinates:
        return [(-np.pi, np.pi)] * model.n_dof
    raise ValueError("explicit coordinate ranges are required for "
                     "non-compact models")


def oracle_density_of_states(model: PotentialModel,
                             points_per_axis: int | None = None,
                             n_samples: int | None = None,
                             ranges=None, bins: int = 200,
                             v_max: float | None = None,
                             seed: int = 0, threads: int = 1,
                             boundary_tol: float = 1e-3) -> DensityOfStatesTable:
    """Tabulate Omega and M over the uniform configuration measure.

    Dense-grid mode (``points_per_axis``) is limited to N <= 4; hit-or-miss
    mode (``n_samples``) to N <= 8.  Errors out if more than ``boundary_tol``
    of the tabulated sublevel mass sits in the outermost coordinate layer,
    which means the box is clipping the sublevel sets.
    """
    n = model.n_dof
    if (points_per_axis is None) == (n_samples is None):
        raise ValueError("give exactly one of points_per_axis / n_samples")
    mode = "grid" if points_per_axis is not None else "hitmiss"
    if mode == "grid" and n > 4:
        raise ValueError("grid mode is limited to N <= 4")
    if mode == "hitmiss" and n > 8:
        raise ValueError("hit-or-miss mode is limited to N <= 8")
    ranges = ranges if ranges is not None else _default_ranges(model)
    if len(ranges) != n:
        raise ValueError("one coordinate range per degree of freedom")
    lo = np.array([r[0] for r in ranges])
    hi = np.array([r[1] for r in ranges])

    v_lo, v_hi_attain = model.attainable_range()
    if v_max is None:
        if not np.isfinite(v_hi_attain):
            raise ValueError("v_max is required for unbounded models")
        v_max = v_hi_attain
    v_floor = v_lo if np.isfinite(v_lo) else -n * model.stability_bound
    edges = np.linspace(v_floor, v_max, bins + 1)

    counts = np.zeros(bins, dtype=np.int64)
    boundary_hits = 0
    total_in = 0

    def tally(q, is_boundary):
        nonlocal boundary_hits, total_in
        v = np.asarray(model.evaluate(q))
        inside = v <= v_max
        idx = np.searchsorted(edges, v[inside], side="right") - 1
        idx = np.clip(idx, 0, bins - 1)
        c = np.bincount(idx, minlength=bins)
        b = int(np.sum(is_boundary & inside))
        t = int(np.sum(inside))
        return c, b, t

    if mode == "grid":
        p = points_per_axis
        axes = [np.linspace(l, h, p) for l, h in zip(lo, hi)]
        total = p ** n
        chunk = max(1, int(2e6) // n)
        starts = range(0, total, chunk)

        def do_chunk(s):
            flat = np.arange(s, min(s + chunk, total))
            nd = np.unravel_index(flat, (p,) * n)
            q = np.stack([axes[d][nd[d]] for d in range(n)], axis=-1)
            onb = np.zeros(len(flat), dtype=bool)
            for d in range(n):
                onb |= (nd[d] == 0) | (nd[d] == p - 1)
            return tally(q, onb)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(do_chunk, starts))
        else:
            parts = [do_chunk(s) for s in starts]
    else:
        total = int(n_samples)
        chunk = max(1, int(2e6) // n)
        n_chunks = (total + chunk - 1) // chunk
        sizes = [chunk] * (n_chunks - 1) + [total - chunk * (n_chunks - 1)]
        cell = (hi - lo) / max(total ** (1.0 / n), 2.0)

        def do_chunk(args):
            ci, m = args
            rng = rngmod.stream(seed, rngmod.ORACLE, ci)
            q = lo + (hi - lo) * rng.random((m, n))
            onb = ((q < lo + cell) | (q > hi - cell)).any(axis=1)
            return tally(q, onb)

        jobs = list(enumerate(sizes))
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(do_chunk, jobs))
        else:
            parts = [do_chunk(j) for j in jobs]

    for c, b, t in parts:
        counts += c
        boundary_hits += b
        total_in += t

    boundary_fraction = boundary_hits / max(total_in, 1)
    if boundary_fraction > boundary_tol and not model.wrap_coordinates:
        raise RangeTooSmallError(
            f"{100 * boundary_fraction:.3f}% of tabulated mass lies on the "
            "box boundary; enlarge the coordinate ranges")
    spec = {"ranges": [list(map(float, r)) for r in ranges], "bins": bins,
            "v_max": float(v_max)}
    if mode == "grid":
        spec["points_per_axis"] = points_per_axis
    else:
        spec["n_samples"] = total
    return DensityOfStatesTable(model_kind=model.kind, n_dof=n, mode=mode,
                                bin_edges=edges, counts=counts, total=total,
                                boundary_fraction=boundary_fraction,
                                grid_spec=spec)


# ---------------------------------------------------------------------------
# surface estimators
# ---------------------------------------------------------------------------

@dataclass
class DerivativeEstimate:
    order: int
    value: float
    stderr: float
    terms: dict
    n_dof: int
    vbar: float
    epsilon: float
    n_effective: float = 0.0
    near_critical_events: int = 0
    flags: list = field(default_factory=list)

    def recombine(self) -> float:
        """Recompute the value from the reported term breakdown."""
        t, n, k = self.terms, self.n_dof, self.order
        if k == 1:
            return t["mean_alpha"]
        if k == 2:
            return n * (t["var_alpha"] + t["mean_P"])
        if k == 3:
            return n ** 2 * (t["mu3_alpha"] + 3.0 * t["cov_alpha_P"]
                             + t["mean_W"])
        return n ** 3 * (t["kappa4_alpha"] + 6.0 * t["mean_da2_dP"]
                         + 3.0 * t["var_P"] + 4.0 * t["cov_alpha_W"]
                         + t["mean_Q"])


def _central(x):
    return x - x.mean()


def _combination(order: int, n_dof: int, a, P=None, W=None, Q=None):
    """The signed moment combination and its term breakdown."""
    terms = {"mean_alpha": float(a.mean())}
    if order == 1:
        return terms["mean_alpha"], terms
    da = _central(a)
    terms["var_alpha"] = float((da * da).mean())
    terms["mean_P"] = float(P.mean())
    if order == 2:
        return n_dof * (terms["var_alpha"] + terms["mean_P"]), terms
    dP = _central(P)
    terms["mu3_alpha"] = float((da ** 3).mean())
    terms["cov_alpha_P"] = float((da * dP).mean())
    terms["mean_W"] = float(W.mean())
    if order == 3:
        val = terms["mu3_alpha"] + 3.0 * terms["cov_alpha_P"] + terms["mean_W"]
        return n_dof ** 2 * val, terms
    dW = _central(W)
    terms["kappa4_alpha"] = float((da ** 4).mean() - 3.0 * (da * da).mean() ** 2)
    terms["mean_da2_dP"] = float((da * da * dP).mean())
    terms["var_P"] = float((dP * dP).mean())
    terms["cov_alpha_W"] = float((da * dW).mean())
    terms["mean_Q"] = float(Q.mean())
    val = (terms["kappa4_alpha"] + 6.0 * terms["mean_da2_dP"]
           + 3.0 * terms["var_P"] + 4.0 * terms["cov_alpha_W"]
           + terms["mean_Q"])
    return n_dof ** 3 * val, terms


def _estimate_from_samples(samples: LevelSetSamples, order: int,
                           n_dof: int):
    cols = [samples.alpha]
    for name in ("P", "W", "Q")[:order - 1]:
        cols.append(samples.column(name))
    good = np.all([np.isfinite(c) for c in cols], axis=0)
    a, *rest = [c[good] for c in cols]
    P = rest[0] if order >= 2 else None
    W = rest[1] if order >= 3 else None
    Q = rest[2] if order >= 4 else None
    value, terms = _combination(order, n_dof, a, P, W, Q)

    # batch-means error: the same combination on contiguous per-chain batches
    cid = samples.chain_id[good]
    chains = np.unique(cid)
    per_chain = max(2, int(np.ceil(20 / len(chains))))
    batch_vals = []
    for c in chains:
        sel = cid == c
        ab = a[sel]
        Pb = P[sel] if P is not None else None
        Wb = W[sel] if W is not None else None
        Qb = Q[sel] if Q is not None else None
        splits = np.array_split(np.arange(len(ab)), per_chain)
        for s in splits:
            if len(s) < 4:
                continue
            bv, _ = _combination(order, n_dof, ab[s],
                                 Pb[s] if Pb is not None else None,
                                 Wb[s] if Wb is not None else None,
                                 Qb[s] if Qb is not None else None)
            batch_vals.append(bv)
    bv = np.asarray(batch_vals)
    stderr = float(bv.std(ddof=1) / np.sqrt(len(bv))) if len(bv) > 1 else np.inf
    return value, stderr, terms, int(good.sum())


def entropy_derivative(model: PotentialModel, vbar: float, k: int,
                       cfg: ShellSamplerConfig, threads: int = 1,
                       eps_pair: bool = True) -> DerivativeEstimate:
    """k-th derivative of S_N at vbar from level-set sampling.

    Runs the shell walker at v = N vbar (the cfg's v/order fields are
    overridden), optionally paired with an eps/2 run for Richardson removal
    of the shell-width bias.
    """
    if k not in (1, 2, 3, 4):
        raise ValueError("k must be 1..4")
    n = model.n_dof
    run_cfg = replace(cfg, v=vbar * n, order=k)
    samples = sample_level_set(model, run_cfg, threads=threads)
    value, stderr, terms, n_good = _estimate_from_samples(samples, k, n)
    flags = list(samples.diagnostics.warnings)
    near = samples.diagnostics.near_critical_events
    tau = max(samples.diagnostics.tau_int.get("alpha", 1.0), 1.0)
    n_eff = n_good / tau
    eps_used = run_cfg.epsilon

    if eps_pair:
        half_cfg = replace(run_cfg, epsilon=run_cfg.epsilon / 2,
                           seed=run_cfg.seed + 1)
        half = sample_level_set(model, half_cfg, threads=threads)
        v2, s2, terms2, n_good2 = _estimate_from_samples(half, k, n)
        near += half.diagnostics.near_critical_events
        flags += half.diagnostics.warnings
        value_x = (4.0 * v2 - value) / 3.0
        stderr_x = math.hypot(4.0 * s2 / 3.0, stderr / 3.0)
        diff = abs(v2 - value)
        comb = math.hypot(stderr, s2)
        if comb > 0 and diff > 8.0 * comb:
            flags.append("eps pair inconsistent; using the eps/2 raw value")
            value_x, stderr_x = v2, s2
        value, stderr, terms = value_x, stderr_x, terms2
        eps_used = half_cfg.epsilon
        n_eff = min(n_eff, n_good2 / max(
            half.diagnostics.tau_int.get("alpha", 1.0), 1.0))

    if n_eff < 100:
        flags.append(f"only {n_eff:.0f} effective samples; "
                     "estimate is low-confidence")
    if near:
        flags.append(f"{near} near-critical events during sampling")
    return DerivativeEstimate(order=k, value=float(value),
                              stderr=float(stderr), terms=terms, n_dof=n,
                              vbar=vbar, epsilon=eps_used,
                              n_effective=float(n_eff),
                              near_critical_events=near, flags=flags)


# ---------------------------------------------------------------------------
# beta, Legendre, Helmholtz
# ---------------------------------------------------------------------------

@dataclass
class BetaEstimate:
    value: float
    method: str
    surface: float | None = None
    oracle: float | None = None
    finite_size_gap: float | None = None
    stderr: float = 0.0


def beta_of_v(model: PotentialModel, vbar: float, method: str = "oracle",
              table: DensityOfStatesTable | None = None,
              cfg: ShellSamplerConfig | None = None,
              threads: int = 1) -> BetaEstimate:
    """Inverse temperature at vbar.

    ``oracle``  : Omega(N vbar) / M(N vbar) from a density-of-states table
                  (the slope of the volume entropy);
    ``surface`` : <alpha>, the slope of the surface entropy.  At finite N
    the two differ by a (1/N) log beta correction, which is reported as
    ``finite_size_gap`` whenever both routes are available.
    """
    if method not in ("oracle", "surface"):
        raise ValueError("method must be 'oracle' or 'surface'")
    oracle_val = None
    if table is not None:
        oracle_val = table.beta_oracle(vbar)
    surface_val = None
    stderr = 0.0
    if method == "surface" or (method == "oracle" and table is None):
        if cfg is None:
            raise ValueError("surface method needs a sampler config")
        est = entropy_derivative(model, vbar, 1, cfg, threads=threads)
        surface_val = est.value
        stderr = est.stderr
    if method == "oracle":
        if oracle_val is None:
            raise ValueError("oracle method needs a density-of-states table")
        value = oracle_val
    else:
        value = surface_val
    gap = None
    if oracle_val is not None and surface_val is not None:
        gap = surface_val - oracle_val
    return BetaEstimate(value=float(value), method=method,
                        surface=surface_val, oracle=oracle_val,
                        finite_size_gap=gap, stderr=stderr)


@dataclass
class LegendreTable:
    beta: np.ndarray
    f: np.ndarray
    vbar_at_beta: np.ndarray
    nonconcave: bool = False


def _conjugate_min(x: np.ndarray, y: np.ndarray, z: float):
    """min over the grid of z*x - y with 3-point parabolic refinement."""
    g = z * x - y
    i = int(np.argmin(g))
    if i == 0 or i == len(x) - 1:
        return float(g[i]), float(x[i])
    x0, x1, x2 = x[i - 1], x[i], x[i + 1]
    y0, y1, y2 = g[i - 1], g[i], g[i + 1]
    denom = (x1 - x0) * (y1 - y2) - (x1 - x2) * (y1 - y0)
    if denom == 0:
        return float(y1), float(x1)
    xs = x1 - 0.5 * (((x1 - x0) ** 2 * (y1 - y2)
                      - (x1 - x2) ** 2 * (y1 - y0)) / denom)
    # value of the interpolating parabola at its vertex
    L = np.array([[x0 * x0, x0, 1.0], [x1 * x1, x1, 1.0], [x2 * x2, x2, 1.0]])
    a, b, c = np.linalg.solve(L, np.array([y0, y1, y2]))
    return float(a * xs * xs + b * xs + c), float(xs)


def legendre(vbar: np.ndarray, s_values: np.ndarray,
             beta_grid: np.ndarray | None = None) -> LegendreTable:
    """-f(beta) = inf over vbar of [beta vbar - S(vbar)].

    The beta grid defaults to the numerical slopes of the table; a
    nonconcave input still yields the discrete infimum but raises a flag.
    """
    vbar = np.asarray(vbar, dtype=float)
    s = np.asarray(s_values, dtype=float)
    if len(vbar) < 20:
        raise ValueError("need at least 20 table points")
    if np.any(np.diff(vbar) <= 0):
        raise ValueError("vbar grid must be strictly increasing")
    slopes = np.gradient(s, vbar)
    nonconcave = bool(np.any(np.diff(slopes) > 1e-9 * max(1.0, np.abs(slopes).max())))
    if beta_grid is None:
        beta_grid = np.sort(slopes)[1:-1]
    f = np.empty(len(beta_grid))
    v_at = np.empty(len(beta_grid))
    for j, b in enumerate(beta_grid):
        mval, xs = _conjugate_min(vbar, s, b)
        f[j] = -mval
        v_at[j] = xs
    return LegendreTable(beta=np.asarray(beta_grid, dtype=float), f=f,
                         vbar_at_beta=v_at, nonconcave=nonconcave)


def legendre_roundtrip(vbar: np.ndarray, s_values: np.ndarray,
                       table: LegendreTable) -> np.ndarray:
    """Conjugate back: S**(vbar) = inf over beta of [beta vbar + f(beta)]."""
    out = np.empty(len(vbar))
    for j, v in enumerate(np.asarray(vbar, dtype=float)):
        mval, _ = _conjugate_min(table.beta, -table.f, v)
        out[j] = mval
    return out


def helmholtz(beta: np.ndarray, f_values: np.ndarray) -> np.ndarray:
    """F(beta) = -(2 beta)^-1 log(pi/beta) - f(beta)/beta."""
    beta = np.asarray(beta, dtype=float)
    f = np.asarray(f_values, dtype=float)
    if np.any(beta <= 0):
        raise ValueError("beta must be positive")
    return -np.log(np.pi / beta) / (2.0 * beta) - f / beta


@dataclass
class ThermoCurves:
    vbar: np.ndarray
    s_values: np.ndarray
    beta_of_vbar: np.ndarray
    legendre_table: LegendreTable
    helmholtz_values: np.ndarray
    roundtrip_error: float


def thermo_curves(vbar: np.ndarray, s_values: np.ndarray) -> ThermoCurves:
    tab = legendre(vbar, s_values)
    F = helmholtz(tab.beta, tab.f)
    s_back = legendre_roundtrip(vbar, s_values, tab)
    inner = slice(2, -2)
    err = float(np.max(np.abs(s_back[inner] - np.asarray(s_values)[inner])))
    return ThermoCurves(vbar=np.asarray(vbar, dtype=float),
                        s_values=np.asarray(s_values, dtype=float),
                        beta_of_vbar=np.gradient(s_values, vbar),
                        legendre_table=tab, helmholtz_values=F,
                        roundtrip_error=err)


# ---------------------------------------------------------------------------
# harmonic closed forms (the exact validation chain)
# ---------------------------------------------------------------------------

def harmonic_surface_derivative(n_dof: int, vbar: float, k: int) -> float:
    """Exact d^k S_N / d vbar^k for V = |q|^2/2 (Omega ~ v^(N/2 - 1))."""
    v = n_dof * vbar
    n = n_dof
    if k == 1:
        return (n - 2) / (2.0 * v)
    if k == 2:
        return -n * (n - 2) / (2.0 * v * v)
    if k == 3:
        return n * n * (n - 2) / v ** 3
    if k == 4:
        return -3.0 * n ** 3 * (n - 2) / v ** 4
    raise ValueError("k must be 1..4")


def harmonic_alpha(n_dof: int, v: float) -> float:
    """alpha on the sphere |q|^2 = 2v."""
    return (n_dof - 2) / (2.0 * v)


def harmonic_volume_entropy_limit(vbar) -> np.ndarray:
    """Large-N volume entropy of the harmonic well, constants included.

    (1/N) log M(N vbar) -> (1/2) log(4 pi e vbar); its exact Legendre
    conjugate reproduces f(beta) = (1/2) log(2 pi / beta).
    """
    return 0.5 * np.log(4.0 * np.pi * np.e * np.asarray(vbar, dtype=float))


def harmonic_f(beta) -> np.ndarray:
    """(1/N) log Z_c for the harmonic well: (1/2) log(2 pi / beta)."""
    return 0.5 * np.log(2.0 * np.pi / np.asarray(beta, dtype=float))


def harmonic_beta(vbar: float) -> float:
    """Omega/M for the harmonic well: 1/(2 vbar), independent of N."""
    return 1.0 / (2.0 * vbar)


# ---------------------------------------------------------------------------
# small-N quadrature oracle for surface averages
# ---------------------------------------------------------------------------

def surface_average_quadrature(model: PotentialModel, v: float, observable,
                               n_slice: int = 200, n_scan: int = 2048,
                               ranges=None, bisect_iters: int = 50) -> float:
    """Deterministic level-set average for N in {2, 3}.

    Slices the box over the first N-1 coordinates, root-finds the level
    crossings along the last coordinate, and accumulates f / |dV/dq_last|
    per crossing, which is the exact co-area reduction of the surface
    integral with weight 1/|grad V|.
    """
    n = model.n_dof
    if n not in (2, 3):
        raise ValueError("quadrature oracle supports N = 2 or 3 only")
    ranges = ranges if ranges is not None else _default_ranges(model)
    lo = np.array([r[0] for r in ranges])
    hi = np.array([r[1] for r in ranges])

    if n == 2:
        base_list = [np.linspace(lo[0], hi[0], n_slice)[:, None]]
    else:
        g1 = np.linspace(lo[0], hi[0], n_slice)
        g2 = np.linspace(lo[1], hi[1], n_slice)
        b1, b2 = np.meshgrid(g1, g2, indexing="ij")
        base_list = [np.stack([b1.ravel(), b2.ravel()], axis=-1)]
    base = base_list[0]
    scan = np.linspace(lo[-1], hi[-1], n_scan)

    numer = 0.0
    denom = 0.0
    chunk = max(1, int(4e6) // n_scan)
    for s0 in range(0, len(base), chunk):
        b = base[s0:s0 + chunk]                       # (B, n-1)
        q = np.empty((len(b), n_scan, n))
        q[..., :-1] = b[:, None, :]
        q[..., -1] = scan[None, :]
        vals = model.evaluate(q.reshape(-1, n)).reshape(len(b), n_scan) - v
        sgn = np.signbit(vals)
        flips = sgn[:, 1:] != sgn[:, :-1]
        rows, cols = np.nonzero(flips)
        if len(rows) == 0:
            continue
        qlo = np.empty((len(rows), n))
        qhi = np.empty((len(rows), n))
        qlo[:, :-1] = b[rows]
        qhi[:, :-1] = b[rows]
        qlo[:, -1] = scan[cols]
        qhi[:, -1] = scan[cols + 1]
        flo = vals[rows, cols]
        for _ in range(bisect_iters):
            mid = 0.5 * (qlo + qhi)
            fm = model.evaluate(mid) - v
            left = (fm > 0) == (flo > 0)
            qlo[left] = mid[left]
            flo[left] = fm[left]
            qhi[~left] = mid[~left]
        roots = 0.5 * (qlo + qhi)
        dlast = np.abs(model.gradient(roots)[:, -1])
        ok = dlast > 1e-12
        w = 1.0 / dlast[ok]
        numer += float(np.sum(observable(roots[ok]) * w))
        denom += float(np.sum(w))
    if denom == 0:
        raise ValueError(f"level set V = {v} not found inside the box")
    return numer / denom


# ---------------------------------------------------------------------------
# empirical bound-constant diagnostics
# ---------------------------------------------------------------------------

def bound_constants_report(model: PotentialModel, samples: LevelSetSamples,
                           max_points: int = 200, seed: int = 0) -> dict:
    """Empirical extrema of the site-indexed averages entering the
    derivative bounds (max numerator / min denominator constants).

    High-order minima (c3, c4) are estimated over random index tuples; the
    report is diagnostic only and carries no tolerance.
    """
    rng = rngmod.stream(seed, rngmod.ORACLE, 9999)
    n = model.n_dof
    idx = np.linspace(0, len(samples) - 1,
                      min(max_points, len(samples))).astype(int)
    Q = samples.q[idx]
    g = model.gradient(Q)
    gsq = g * g

    d2_abs = np.zeros((len(Q), n))
    x_bond = []       # g_i H_ij g_j per real-real bond
    hkk = np.zeros((len(Q), n))
    for t, q in enumerate(Q):
        H = model.hessian(q)
        hd = H.diagonal()
        hkk[t] = hd
        d2_abs[t] = np.abs(hd)
        row = []
        L, R = model.topology.bonds
        for a, b in zip(L, R):
            if a < n and b < n:
                row.append(g[t, a] * H[a, b] * g[t, b])
        x_bond.append(row)
    x_bond = np.asarray(x_bond) if x_bond and len(x_bond[0]) else np.zeros((len(Q), 0))

    report = {
        "m1": float(np.abs(d2_abs).mean(axis=0).max()),
        "c1": float(gsq.mean(axis=0).min()),
    }
    if x_bond.shape[1]:
        report["m2"] = float(np.abs(x_bond).mean(axis=0).max())
        report["m4"] = float((x_bond ** 2).mean(axis=0).max())
        # bond term against every site's diagonal curvature
        m6 = 0.0
        for bcol in range(x_bond.shape[1]):
            m6 = max(m6, float(np.abs(
                (x_bond[:, bcol:bcol + 1] * hkk).mean(axis=0)).max()))
        report["m6"] = m6
    # pairwise gradient-square products over a random pair subset
    pairs = rng.integers(0, n, size=(min(200, n * n), 2))
    c2 = min(float((gsq[:, i] * gsq[:, j]).mean()) for i, j in pairs)
    report["c2"] = c2
    for name, order in (("c3", 6), ("c4", 8)):
        tuples = rng.integers(0, n, size=(100, order))
        vals = [float(np.prod([gsq[:, i] for i in tup], axis=0).mean())
                for tup in tuples]
        report[name] = min(vals)
    # third-derivative contractions averaged per index set, then extremized
    acc7: dict = {}
    acc8: dict = {}
    n_sub = min(50, len(Q))
    for t in range(n_sub):
        q = Q[t]
        for i in range(n):
            for j in [i] + model.topology.neighbor_lists[i]:
                acc7[(i, j)] = acc7.get((i, j), 0.0) \
                    + g[t, i] * model.third_partial(q, i, j, j)
                for k in [i] + model.topology.neighbor_lists[j]:
                    acc8[(i, j, k)] = acc8.get((i, j, k), 0.0) \
                        + g[t, i] * g[t, j] * g[t, k] \
                        * model.third_partial(q, i, j, k)
    report["m7"] = max((abs(s) / n_sub for s in acc7.values()), default=0.0)
    report["m8"] = max((abs(s) / n_sub for s in acc8.values()), default=0.0)
    return report
