"""Critical points, Morse indexes, and topology-change bookkeeping.

Stationary points of V are located by damped Newton iteration on the
gradient (Levenberg-regularized, with backtracking on |grad V|^2), seeded
both from structured configurations and at random.  Found points are
deduplicated, eigen-decomposed, and assembled into window reports listing
critical values, index histograms, diffeomorphic subintervals, and the
Euler characteristic of the sublevel sets by signed Morse counting.

Enumeration is evidential: reports always carry the seed counts, and for
rotator chains the exact stationary families (bond differences taking two
values with the telescoping sum constraint) are available as a cross-check.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations, product

import numpy as np

from . import rng as rngmod
from .models import CoupledRotators, LatticeTopology, PotentialModel
from .sampler import ShellSamplerConfig, sample_level_set

NEWTON_TOL = 1e-9


@dataclass
class CriticalPoint:
    q: np.ndarray
    v: float
    vbar: float
    morse_index: int
    min_abs_eigenvalue: float
    degenerate: bool
    multiplicity: int = 1     # distinct representatives merged by symmetry
    basin_seeds: int = 0      # converged seeds landing on this point

    def key(self):
        return (round(self.v, 9), tuple(np.round(self.q, 6)))


@dataclass
class CriticalSearchResult:
    points: list
    n_structured_seeds: int
    n_random_seeds: int
    n_converged: int
    n_diverged: int
    unknown_family_found: bool = False   # rotators: points off the {0, pi} family


@dataclass
class TopologyReport:
    window: tuple
    critical_values: list                 # distinct vbar_c inside the window
    index_histogram: dict                 # vbar_c -> {index: count}
    subintervals: list                    # open (vbar, vbar) gaps
    euler_table: list                     # (vbar_c, chi after crossing)
    c_estimates: list                     # per subinterval min sampled |grad V|
    n_structured_seeds: int = 0
    n_random_seeds: int = 0
    unknown_family_found: bool = False
    caveat: str = ("enumeration is evidential: subintervals are critical-free "
                   "relative to the points found by the seeded search")


def _pin_first(model: PotentialModel) -> bool:
    """Periodic rotator grids carry a uniform-shift zero mode; the search
    operates in the quotient with the first coordinate clamped."""
    return isinstance(model, CoupledRotators) \
        and model.topology.boundary == "periodic"


def _wrap(q):
    return (q + np.pi) % (2.0 * np.pi) - np.pi


def damped_newton(model: PotentialModel, q0: np.ndarray,
                  tol: float = NEWTON_TOL, max_iter: int = 120,
                  pin_first: bool = False):
    """Newton iteration for grad V = 0 with Levenberg damping.

    Solves (H + mu I) step = -grad and backtracks on |grad|^2; mu grows on
    rejected steps and decays on accepted ones.  Returns the point or None.
    """
    q = np.array(q0, dtype=float)
    free = slice(1, None) if pin_first else slice(None)
    if pin_first:
        q = q - q[0]
    mu = 1e-8
    for _ in range(max_iter):
        g = model.gradient(q)[free]
        gsq = float(g @ g)
        if gsq < tol * tol:
            return _wrap(q) if model.wrap_coordinates else q
        H = model.hessian(q).toarray()[free, free]
        improved = False
        for _ in range(25):
            try:
                step = np.linalg.solve(H + mu * np.eye(len(g)), -g)
            except np.linalg.LinAlgError:
                mu = max(mu * 10.0, 1e-8)
                continue
            qn = q.copy()
            qn[free] = q[free] + step
            if model.wrap_coordinates:
                qn = _wrap(qn)
                if pin_first:
                    qn = qn - qn[0]
            gn = model.gradient(qn)[free]
            if float(gn @ gn) < gsq * (1.0 - 1e-4) or float(gn @ gn) < tol * tol:
                q = qn
                mu = max(mu * 0.3, 1e-12)
                improved = True
                break
            mu *= 10.0
            if mu > 1e12:
                return None
        if not improved:
            return None
    g = model.gradient(q)[free]
    if float(g @ g) < tol * tol:
        return _wrap(q) if model.wrap_coordinates else q
    return None


def morse_index(model: PotentialModel, q_c: np.ndarray,
                degeneracy_rtol: float = 1e-8):
    """(index, spectrum) from the full symmetric eigendecomposition.

    For periodic rotators the uniform-shift zero mode is removed by
    decomposing in the quotient (first coordinate clamped).
    """
    g = model.gradient(q_c)
    if np.linalg.norm(g) > 1e-6:
        raise ValueError("point is not critical: |grad V| = "
                         f"{np.linalg.norm(g):.3e}")
    H = model.hessian(q_c).toarray()
    if _pin_first(model):
        H = H[1:, 1:]
    spectrum = np.linalg.eigvalsh(H)
    scale = max(np.abs(spectrum).max(), 1e-300)
    tol = degeneracy_rtol * scale
    k = int(np.sum(spectrum < -tol))
    return k, spectrum


def structured_rotator_seeds(topology: LatticeTopology) -> np.ndarray:
    """All bond-difference patterns in {0, pi} for a fixed-end chain.

    Site values are the partial sums of the first m bond differences; the
    closing wall bond is then automatically 0 or pi modulo a full turn.
    """
    if topology.dimension != 1 or topology.boundary != "fixed":
        raise ValueError("structured seeds are defined for fixed-end chains")
    m = topology.n_sites
    if m > 12:
        raise ValueError("structured seed family limited to m <= 12")
    seeds = []
    for pattern in product((0.0, np.pi), repeat=m):
        seeds.append(_wrap(np.cumsum(pattern)))
    return np.asarray(seeds)


def rotator_chain_stationary_points(topology: LatticeTopology):
    """Exact stationary set of the fixed-end rotator chain (small m).

    Stationarity forces equal bond sines, so wrapped bond differences take
    at most two values {theta, pi - theta} with the telescoping sum equal to
    zero modulo full turns; enumerating admissible (count, turns) pairs and
    all bond arrangements yields every stationary point.  Exponential in m:
    intended as a test oracle for m <= 6.
    """
    if topology.dimension != 1 or topology.boundary != "fixed":
        raise ValueError("enumeration covers fixed-end chains")
    m = topology.n_sites
    if m > 6:
        raise ValueError("exact enumeration limited to m <= 6")
    B = m + 1
    points = {}

    def register(deltas):
        q = _wrap(np.cumsum(deltas[:-1]))
        key = tuple(np.round(q, 8))
        points[key] = q

    for a in range(B + 1):
        two_a_b = 2 * a - B
        if two_a_b == 0:
            # continuous circles of stationary points (degenerate), skipped
            continue
        for turns in range(-2 * B, 2 * B + 1):
            theta = np.pi * (a - B + 2 * turns) / two_a_b
            if not (-np.pi < theta <= np.pi):
                continue
            vals = [theta] * a + [np.pi - theta] * (B - a)
            for positions in combinations(range(B), a):
                d = np.array([np.pi - theta] * B)
                d[list(positions)] = theta
                register(d)
    return list(points.values())


def find_critical_points(model: PotentialModel, window=None,
                         n_random_seeds: int = 10_000, structured: bool = True,
                         seed: int = 0, tol: float = NEWTON_TOL,
                         dedup_tol: float | None = None,
                         threads: int = 1) -> CriticalSearchResult:
    """Locate critical points, optionally restricted to a vbar window.

    Seeds: the structured {0, pi}-difference family for fixed-end rotator
    chains (m <= 12) plus ``n_random_seeds`` random configurations.  Each
    converged point is verified to |grad V| < tol, wrapped/deduplicated,
    and eigen-analyzed.  Divergent seeds are counted, not reported.
    """
    n = model.n_dof
    if dedup_tol is None:
        dedup_tol = 1e-5 * np.sqrt(n)
    pin = _pin_first(model)

    seeds = []
    n_structured = 0
    if structured and isinstance(model, CoupledRotators) \
            and model.topology.dimension == 1 \
            and model.topology.boundary == "fixed" and n <= 12:
        seeds.append(structured_rotator_seeds(model.topology))
        n_structured = len(seeds[-1])
    if n_random_seeds:
        rng = rngmod.stream(seed, rngmod.SEARCH, 0)
        seeds.append(model.random_configuration(rng, size=n_random_seeds))
    all_seeds = np.concatenate(seeds) if seeds else np.zeros((0, n))

    def solve_block(block):
        out = []
        for q0 in block:
            res = damped_newton(model, q0, tol=tol, pin_first=pin)
            if res is not None:
                out.append(res)
        return out

    blocks = np.array_split(all_seeds, max(threads * 4, 1))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(solve_block, blocks))
    else:
        results = [solve_block(b) for b in blocks]
    converged = [q for block in results for q in block]
    n_diverged = len(all_seeds) - len(converged)

    # deterministic dedup: sort by (v, lexicographic coordinates), then
    # single pass merging anything within dedup_tol
    items = []
    for q in converged:
        items.append((float(model.evaluate(q)), tuple(q), q))
    items.sort(key=lambda it: (it[0], it[1]))
    merged: list[list] = []
    for v, _, q in items:
        placed = False
        for entry in reversed(merged):
            if v - entry[0] > 1e-6 + 1e-6 * abs(v):
                break
            d = entry[2] - q
            if model.wrap_coordinates:
                d = _wrap(d)
            if np.linalg.norm(d) < dedup_tol:
                entry[1] += 1
                placed = True
                break
        if not placed:
            merged.append([v, 1, q])

    points = []
    unknown = False
    for v, mult, q in merged:
        vbar = v / n
        if window is not None and not (window[0] <= vbar <= window[1]):
            continue
        k, spec = morse_index(model, q)
        scale = max(np.abs(spec).max(), 1e-300)
        min_abs = float(np.abs(spec).min())
        points.append(CriticalPoint(
            q=q, v=v, vbar=vbar, morse_index=k, min_abs_eigenvalue=min_abs,
            degenerate=bool(min_abs <= 1e-8 * scale), multiplicity=mult))
        if isinstance(model, CoupledRotators) \
                and model.topology.dimension == 1:
            d = model._deltas(q)
            off = np.minimum(np.abs(_wrap(d)), np.abs(_wrap(d - np.pi)))
            if np.max(off) > 1e-5:
                unknown = True
    points.sort(key=lambda p: (p.v, tuple(p.q)))
    return CriticalSearchResult(points=points, n_structured_seeds=n_structured,
                                n_random_seeds=int(n_random_seeds),
                                n_converged=len(converged),
                                n_diverged=n_diverged,
                                unknown_family_found=unknown)


def euler_characteristic(points: list, v: float) -> int:
    """chi(M_v) = sum over {v_c <= v} of (-1)^index, with multiplicity.

    Refuses degenerate points below the threshold, naming the offender.
    """
    chi = 0
    for p in points:
        if p.v <= v:
            if p.degenerate:
                raise ValueError(
                    "degenerate critical point at v = "
                    f"{p.v:.6g} (min |eigenvalue| = {p.min_abs_eigenvalue:.3e})"
                    "; Morse counting does not apply")
            chi += (-1) ** p.morse_index * p.multiplicity
    return chi


def certify_window(model: PotentialModel, window, samples: int = 2000,
                   search: CriticalSearchResult | None = None,
                   seed: int = 0, epsilon: float | None = None,
                   threads: int = 1, **search_kwargs) -> TopologyReport:
    """Split a vbar window at the found critical values and probe each gap.

    For every resulting open subinterval the minimum sampled |grad V| over
    shells at 5 interior vbar values is recorded as the empirical lower
    bound C; a positive C is the numerical signature of a critical-free
    (hence diffeomorphic) stretch, modulo search completeness.
    """
    lo, hi = float(window[0]), float(window[1])
    if search is None:
        search = find_critical_points(model, window=None, seed=seed,
                                      threads=threads, **search_kwargs)
    inside = sorted({round(p.vbar, 10) for p in search.points
                     if lo < p.vbar < hi})
    cuts = [lo] + inside + [hi]
    subintervals = [(cuts[i], cuts[i + 1]) for i in range(len(cuts) - 1)]

    hist: dict = {}
    for p in search.points:
        if lo < p.vbar < hi:
            key = round(p.vbar, 10)
            hist.setdefault(key, {})
            hist[key][p.morse_index] = hist[key].get(p.morse_index, 0) \
                + p.multiplicity

    euler_table = []
    try:
        for vc in inside:
            euler_table.append((vc, euler_characteristic(
                search.points, vc * model.n_dof + 1e-12)))
    except ValueError:
        euler_table = []   # degenerate point in range: no Morse counting

    c_estimates = []
    n = model.n_dof
    for (a, b) in subintervals:
        width = b - a
        probes = [a + width * frac for frac in (1 / 6, 2 / 6, 3 / 6, 4 / 6, 5 / 6)]
        gmin = np.inf
        for j, vb in enumerate(probes):
            eps = epsilon if epsilon is not None else 1e-3 * max(abs(vb * n), 1.0)
            cfg = ShellSamplerConfig(
                v=vb * n, epsilon=eps, n_steps=max(samples, 200),
                burn_in=max(samples // 5, 100), thinning=5,
                n_chains=2, seed=seed + 1000 + j, order=1)
            try:
                run = sample_level_set(model, cfg, threads=threads)
                gmin = min(gmin, float(np.min(run.grad_norm)))
            except Exception:
                gmin = np.nan
                break
        c_estimates.append(gmin)
    return TopologyReport(
        window=(lo, hi), critical_values=inside, index_histogram=hist,
        subintervals=subintervals, euler_table=euler_table,
        c_estimates=c_estimates,
        n_structured_seeds=search.n_structured_seeds,
        n_random_seeds=search.n_random_seeds,
        unknown_family_found=search.unknown_family_found)


def topology_report_json(report: TopologyReport,
                         points: list | None = None) -> str:
    """Serialize a window report (and optionally the point list) to JSON."""
    doc = {
        "window": list(report.window),
        "critical_values": report.critical_values,
        "index_histogram": {repr(k): v for k, v in report.index_histogram.items()},
        "subintervals": [list(s) for s in report.subintervals],
        "euler_table": [list(e) for e in report.euler_table],
        "c_estimates": report.c_estimates,
        "n_structured_seeds": report.n_structured_seeds,
        "n_random_seeds": report.n_random_seeds,
        "unknown_family_found": report.unknown_family_found,
        "caveat": report.caveat,
    }
    if points is not None:
        doc["points"] = [{
            "q": [float(x) for x in np.where(np.abs(p.q) < 1e-10, 0.0, p.q)],
            "v": p.v, "vbar": p.vbar, "morse_index": p.morse_index,
            "min_abs_eigenvalue": p.min_abs_eigenvalue,
            "degenerate": p.degenerate, "multiplicity": p.multiplicity,
        } for p in points]
    return json.dumps(doc, indent=1, sort_keys=True)
