"""Thin-shell Metropolis sampling of equipotential level sets.

The chain walks uniformly on the shell {q : |V(q) - v| <= eps}.  Proposals
are isotropic Gaussian steps accepted iff the proposal stays in the shell;
since the target density is constant there and the proposal is symmetric,
the kernel is reversible by construction.  As eps -> 0 the marginal on the
level set V = v is the surface measure weighted by 1/|grad V|, which is the
invariant measure all the entropy-derivative averages are taken against; a
paired eps, eps/2 run removes the O(eps^2) shell-width bias by Richardson
extrapolation.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngmod
from .geometry import integrand_table
from .models import PotentialModel


class ShellInitializationError(RuntimeError):
    """Could not place a starting point on the requested shell."""


@dataclass(frozen=True)
class ShellSamplerConfig:
    v: float                      # target potential energy (total, not per dof)
    epsilon: float                # shell half-width, energy units
    step_sigma: float = 0.15      # proposal scale per coordinate
    n_steps: int = 100_000        # post-burn-in steps per chain
    burn_in: int = 10_000
    thinning: int = 10
    n_chains: int = 8
    seed: int = 0
    order: int = 1                # geometry order evaluated on kept samples
    near_critical_tol: float = 1e-10   # diagnostic event threshold on |grad V|
    tune: bool = True             # auto-tune step_sigma during burn-in
    fd_step: float | None = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.step_sigma <= 0:
            raise ValueError("step_sigma must be positive")
        if self.n_steps <= 0 or self.burn_in < 0:
            raise ValueError("n_steps must be positive, burn_in nonnegative")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if self.n_chains < 1:
            raise ValueError("need at least one chain")
        if self.order not in (1, 2, 3, 4):
            raise ValueError("order must be 1..4")


@dataclass
class ChainDiagnostics:
    acceptance_rate: float
    tau_int: dict
    rhat: dict
    near_critical_events: int
    sigma_final: list
    warnings: list = field(default_factory=list)


@dataclass
class LevelSetSamples:
    """Columnar sample collection: one row per emitted configuration."""

    q: np.ndarray              # (B, N)
    v_values: np.ndarray
    grad_norm: np.ndarray
    alpha: np.ndarray
    chain_id: np.ndarray
    step: np.ndarray
    P: np.ndarray | None = None
    W: np.ndarray | None = None
    Q: np.ndarray | None = None
    diagnostics: ChainDiagnostics | None = None

    def __len__(self):
        return len(self.v_values)

    def column(self, name: str) -> np.ndarray:
        val = getattr(self, name if name != "V" else "v_values")
        if val is None:
            raise KeyError(f"column {name} was not computed for this run")
        return val

    def chain_series(self, name: str) -> list[np.ndarray]:
        col = self.column(name)
        return [col[self.chain_id == c] for c in np.unique(self.chain_id)]


def relax_to_shell(model: PotentialModel, rng, v: float, epsilon: float,
                   max_iter: int = 400) -> np.ndarray:
    """1-D Newton along the gradient direction until |V - v| <= eps/2."""
    lo, hi = model.attainable_range()
    if not (lo <= v <= hi):
        raise ShellInitializationError(
            f"target energy {v} outside attainable range [{lo}, {hi}]")
    for _ in range(40):
        q = model.random_configuration(rng)
        for _ in range(max_iter):
            val = model.evaluate(q)
            if abs(val - v) <= 0.5 * epsilon:
                if model.wrap_coordinates:
                    q = _wrap(q)
                return q
            g = model.gradient(q)
            gsq = float(g @ g)
            if gsq < 1e-18:
                break
            t = (v - val) / gsq
            # cap the move so one step never overshoots wildly
            tmax = 2.0 / np.sqrt(gsq)
            q = q + np.clip(t, -tmax, tmax) * g
            if model.wrap_coordinates:
                q = _wrap(q)
    raise ShellInitializationError(
        f"failed to reach shell |V - {v}| <= {epsilon / 2} "
        f"(is the shell empty?)")


def _wrap(q):
    return (q + np.pi) % (2.0 * np.pi) - np.pi


def _run_chain(model, cfg: ShellSamplerConfig, chain_id: int):
    """One Metropolis chain; returns kept positions, accept rate, sigma."""
    rng = rngmod.stream(cfg.seed, rngmod.CHAIN, chain_id)
    q = relax_to_shell(model, rng, cfg.v, cfg.epsilon)
    n = model.n_dof
    sigma = cfg.step_sigma
    v_lo, v_hi = cfg.v - cfg.epsilon, cfg.v + cfg.epsilon
    wrap = model.wrap_coordinates

    # burn-in with acceptance-window tuning
    if cfg.burn_in:
        acc_win = 0
        win = 200
        for i in range(cfg.burn_in):
            prop = q + sigma * rng.standard_normal(n)
            if v_lo <= model.evaluate(prop) <= v_hi:
                q = _wrap(prop) if wrap else prop
                acc_win += 1
            if cfg.tune and (i + 1) % win == 0:
                rate = acc_win / win
                if rate < 0.2:
                    sigma *= 0.7
                elif rate > 0.5:
                    sigma *= 1.3
                acc_win = 0

    n_kept = cfg.n_steps // cfg.thinning
    kept = np.empty((n_kept, n))
    steps = np.empty(n_kept, dtype=np.int64)
    accepted = 0
    k = 0
    block = 4096
    done = 0
    while done < cfg.n_steps:
        m = min(block, cfg.n_steps - done)
        noise = rng.standard_normal((m, n))
        for j in range(m):
            prop = q + sigma * noise[j]
            if v_lo <= model.evaluate(prop) <= v_hi:
                q = _wrap(prop) if wrap else prop
                accepted += 1
            i = done + j
            if (i + 1) % cfg.thinning == 0 and k < n_kept:
                kept[k] = q
                steps[k] = i + 1
                k += 1
        done += m
    return kept[:k], steps[:k], accepted / cfg.n_steps, sigma


def integrated_autocorr_time(series: np.ndarray, c: float = 5.0) -> float:
    """Initial-window estimate of the integrated autocorrelation time."""
    x = np.asarray(series, dtype=float)
    x = x[np.isfinite(x)]
    n = len(x)
    if n < 8 or np.var(x) == 0:
        return 1.0
    x = x - x.mean()
    f = np.fft.rfft(x, n=2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n].real
    acf /= acf[0]
    tau = 1.0
    for w in range(1, n):
        tau = 1.0 + 2.0 * acf[1:w + 1].sum()
        if w >= c * tau:
            break
    return max(tau, 1.0)


def split_rhat(series_list: list[np.ndarray]) -> float:
    """Gelman-Rubin split-chain statistic."""
    halves = []
    for s in series_list:
        s = np.asarray(s, dtype=float)
        s = s[np.isfinite(s)]
        h = len(s) // 2
        if h >= 2:
            halves.append(s[:h])
            halves.append(s[h:2 * h])
    if len(halves) < 2:
        return 1.0
    L = min(len(h) for h in halves)
    arr = np.stack([h[:L] for h in halves])
    means = arr.mean(axis=1)
    w = arr.var(axis=1, ddof=1).mean()
    b = L * means.var(ddof=1)
    if w == 0:
        return 1.0
    var_plus = (L - 1) / L * w + b / L
    return float(np.sqrt(var_plus / w))


def sample_level_set(model: PotentialModel, cfg: ShellSamplerConfig,
                     threads: int = 1) -> LevelSetSamples:
    """Run the configured chains and evaluate integrands on kept samples."""
    ids = range(cfg.n_chains)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(lambda c: _run_chain(model, cfg, c), ids))
    else:
        runs = [_run_chain(model, cfg, c) for c in ids]

    q_all, step_all, cid_all = [], [], []
    acc = []
    sigmas = []
    for c, (kept, steps, rate, sigma) in enumerate(runs):
        q_all.append(kept)
        step_all.append(steps)
        cid_all.append(np.full(len(kept), c, dtype=np.int64))
        acc.append(rate)
        sigmas.append(sigma)
    q = np.concatenate(q_all)
    table = integrand_table(model, q, order=cfg.order, fd_step=cfg.fd_step)

    grad_norm = table["grad_norm"]
    near = int(np.sum(grad_norm < cfg.near_critical_tol))
    warnings = []
    rate = float(np.mean(acc))
    if rate < 0.05:
        warnings.append(f"acceptance rate {rate:.3f} < 0.05; step too large?")
    if near:
        warnings.append(f"{near} near-critical events "
                        f"(|grad V| < {cfg.near_critical_tol:g})")

    samples = LevelSetSamples(
        q=q, v_values=table["v"], grad_norm=grad_norm,
        alpha=table["alpha"], chain_id=np.concatenate(cid_all),
        step=np.concatenate(step_all),
        P=table.get("P"), W=table.get("W"), Q=table.get("Q"))

    tau = {}
    rhat = {}
    for name in ("alpha", "P", "W", "Q"):
        col = getattr(samples, name)
        if col is None:
            continue
        series = samples.chain_series(name)
        tau[name] = float(np.mean([integrated_autocorr_time(s) for s in series]))
        rhat[name] = split_rhat(series)
    samples.diagnostics = ChainDiagnostics(
        acceptance_rate=rate, tau_int=tau, rhat=rhat,
        near_critical_events=near, sigma_final=sigmas, warnings=warnings)
    return samples


@dataclass
class SurfaceAverage:
    mean: float
    stderr: float
    n_effective: float
    low_confidence: bool = False


def surface_average(samples: LevelSetSamples, observable) -> SurfaceAverage:
    """Batch-means estimate of a level-set average with its standard error.

    ``observable`` is a column name or a callable mapping the sample set to
    one value per sample.  Near-critical rows (NaN) are excluded.
    """
    if callable(observable):
        vals = np.asarray(observable(samples), dtype=float)
    else:
        vals = samples.column(observable)
    cid = samples.chain_id
    chains = np.unique(cid)
    per_chain = max(2, int(np.ceil(20 / len(chains))))
    batch_means = []
    tau_all = []
    for c in chains:
        x = vals[cid == c]
        x = x[np.isfinite(x)]
        if len(x) < per_chain:
            continue
        tau_all.append(integrated_autocorr_time(x))
        for part in np.array_split(x, per_chain):
            if len(part):
                batch_means.append(part.mean())
    finite = vals[np.isfinite(vals)]
    mean = float(finite.mean())
    bm = np.asarray(batch_means)
    stderr = float(bm.std(ddof=1) / np.sqrt(len(bm))) if len(bm) > 1 else np.inf
    tau = max(np.mean(tau_all), 1.0) if tau_all else 1.0
    n_eff = len(finite) / tau
    return SurfaceAverage(mean=mean, stderr=stderr, n_effective=float(n_eff),
                          low_confidence=bool(n_eff < 100))


@dataclass
class ExtrapolatedAverage:
    value: float
    stderr: float
    at_eps: SurfaceAverage
    at_half_eps: SurfaceAverage
    inconsistent: bool = False
    warning: str = ""


def epsilon_extrapolate(model: PotentialModel, cfg: ShellSamplerConfig,
                        observable, threads: int = 1) -> ExtrapolatedAverage:
    """Richardson eps -> 0 limit of a shell average, assuming O(eps^2) bias.

    Runs the sampler at eps and eps/2 (independent seeds) and combines as
    (4 m_half - m_full) / 3.
    """
    full = sample_level_set(model, cfg, threads=threads)
    half_cfg = replace(cfg, epsilon=cfg.epsilon / 2, seed=cfg.seed + 1)
    half = sample_level_set(model, half_cfg, threads=threads)
    a_full = surface_average(full, observable)
    a_half = surface_average(half, observable)
    value = (4.0 * a_half.mean - a_full.mean) / 3.0
    stderr = np.sqrt((4.0 * a_half.stderr / 3.0) ** 2
                     + (a_full.stderr / 3.0) ** 2)
    diff = abs(a_half.mean - a_full.mean)
    sigma = np.hypot(a_full.stderr, a_half.stderr)
    res = ExtrapolatedAverage(value=float(value), stderr=float(stderr),
                              at_eps=a_full, at_half_eps=a_half)
    if sigma > 0 and diff > 8.0 * sigma:
        res.inconsistent = True
        res.value = a_half.mean
        res.stderr = a_half.stderr
        res.warning = ("eps pair inconsistent: |m(eps)-m(eps/2)| "
                       f"= {diff:.3e} >> combined stderr {sigma:.3e}; "
                       "returning the eps/2 raw value")
    return res


def dump_samples(samples: LevelSetSamples, path) -> None:
    """Raw per-sample dump: chain_id, step, V, grad_norm, alpha[, P, W, Q]."""
    cols = ["chain_id", "step", "V", "grad_norm", "alpha"]
    for extra in ("P", "W", "Q"):
        if getattr(samples, extra) is not None:
            cols.append(extra)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        data = [samples.column(c) for c in cols]
        for row in zip(*data):
            writer.writerow([repr(int(x)) if isinstance(x, (int, np.integer))
                             else repr(float(x)) for x in row])
