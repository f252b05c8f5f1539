"""Lattice potentials with exact derivatives up to third order.

Every bundled potential is a sum of bond terms f(q_R - q_L) over a fixed
neighbor structure plus on-site terms g(q_i).  Fixed boundaries are realized
as bonds to virtual wall sites clamped at zero, so a fixed-end chain of m
sites carries m+1 bonds.  All derivative contractions needed downstream
(gradient, Hessian action, Laplacian, third-order sums) reduce to O(bonds)
vector operations on the bond arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class DimensionMismatchError(ValueError):
    """Configuration length does not match the model's degree count."""


@dataclass(frozen=True)
class LatticeTopology:
    """Regular lattice in 1 or 2 dimensions, one degree of freedom per site."""

    dimension: int = 1
    sites_per_side: int = 4
    boundary: str = "fixed"      # "fixed" (zero walls) or "periodic"
    dof_per_site: int = 1

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        if self.boundary not in ("fixed", "periodic"):
            raise ValueError("boundary must be 'fixed' or 'periodic'")
        if self.dof_per_site != 1:
            raise ValueError("only one degree of freedom per site is supported")
        if self.sites_per_side < 1:
            raise ValueError("need at least one site per direction")

    @property
    def n_sites(self) -> int:
        return self.sites_per_side ** self.dimension

    @property
    def n_dof(self) -> int:
        return self.n_sites * self.dof_per_site

    @property
    def max_neighbors(self) -> int:
        return 2 * self.dimension

    @cached_property
    def bonds(self) -> tuple[np.ndarray, np.ndarray]:
        """(left, right) site indices per bond; index n_sites is the zero wall."""
        m, d, n = self.sites_per_side, self.dimension, self.n_sites
        wall = n
        left, right = [], []

        def add(a, b):
            left.append(a)
            right.append(b)

        if d == 1:
            if self.boundary == "fixed":
                add(wall, 0)
                for i in range(m - 1):
                    add(i, i + 1)
                add(m - 1, wall)
            else:
                for i in range(m):
                    add(i, (i + 1) % m)
        else:
            def sid(x, y):
                return x * m + y

            for x in range(m):
                for y in range(m):
                    i = sid(x, y)
                    if y + 1 < m:
                        add(i, sid(x, y + 1))
                    elif self.boundary == "periodic":
                        add(i, sid(x, 0))
                    if x + 1 < m:
                        add(i, sid(x + 1, y))
                    elif self.boundary == "periodic":
                        add(i, sid(0, y))
            if self.boundary == "fixed":
                for x in range(m):
                    add(wall, sid(x, 0))
                    add(sid(x, m - 1), wall)
                for y in range(m):
                    add(wall, sid(0, y))
                    add(sid(m - 1, y), wall)
        return np.asarray(left, dtype=np.intp), np.asarray(right, dtype=np.intp)

    @cached_property
    def neighbor_lists(self) -> list[list[int]]:
        nbr: list[list[int]] = [[] for _ in range(self.n_sites)]
        L, R = self.bonds
        for a, b in zip(L, R):
            if a < self.n_sites and b < self.n_sites:
                nbr[a].append(b)
                nbr[b].append(a)
        return nbr


class PotentialModel:
    """Base class: topology plus bond/site term derivatives.

    Subclasses provide ``bond_derivs(delta, order)`` and
    ``site_derivs(q, order)`` returning the term derivative of the given
    order, vectorized.  Everything else (energy, gradient, Hessian, third
    partials, contraction bundles) is generic.
    """

    kind = "base"
    has_bonds = True
    has_site = True
    wrap_coordinates = False   # rotator chains live on angles

    def __init__(self, topology: LatticeTopology):
        self.topology = topology
        self.n_dof = topology.n_dof
        L, R = topology.bonds
        self._L, self._R = L, R
        self.n_bonds = len(L) if self.has_bonds else 0
        n = self.n_dof
        # bond weight: number of real (non-wall) endpoints
        self._w = ((L < n).astype(float) + (R < n).astype(float))
        # incidence matrix mapping per-bond scalars to per-dof sums,
        # with a throwaway wall column
        if self.has_bonds and self.n_bonds:
            rows = np.concatenate([np.arange(self.n_bonds)] * 2)
            cols = np.concatenate([R, L])
            vals = np.concatenate([np.ones(self.n_bonds), -np.ones(self.n_bonds)])
            self._inc = sp.csr_matrix((vals, (rows, cols)),
                                      shape=(self.n_bonds, n + 1))
        else:
            self._inc = None
        # bonds incident to each site, for on-demand third partials
        self._site_bonds: list[list[int]] = [[] for _ in range(n)]
        if self.has_bonds:
            for b, (a, c) in enumerate(zip(L, R)):
                if a < n:
                    self._site_bonds[a].append(b)
                if c < n:
                    self._site_bonds[c].append(b)

    # -- subclass hooks -------------------------------------------------
    def bond_derivs(self, delta: np.ndarray, order: int) -> np.ndarray:
        raise NotImplementedError

    def site_derivs(self, q: np.ndarray, order: int) -> np.ndarray:
        raise NotImplementedError

    @property
    def stability_bound(self) -> float:
        """B >= 0 such that V >= -N*B everywhere."""
        return 0.0

    def attainable_range(self) -> tuple[float, float]:
        return (0.0, np.inf)

    def random_configuration(self, rng: np.random.Generator, size=None,
                             scale: float = 1.5) -> np.ndarray:
        shape = (self.n_dof,) if size is None else (size, self.n_dof)
        if self.wrap_coordinates:
            return rng.uniform(-np.pi, np.pi, shape)
        return rng.uniform(-scale, scale, shape)

    # -- core evaluations ------------------------------------------------
    def _check(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape[-1] != self.n_dof:
            raise DimensionMismatchError(
                f"expected {self.n_dof} coordinates, got {q.shape[-1]}")
        return q

    def _deltas(self, q: np.ndarray) -> np.ndarray:
        qe = np.concatenate([q, np.zeros(q.shape[:-1] + (1,))], axis=-1)
        return qe[..., self._R] - qe[..., self._L]

    def _edge(self, x: np.ndarray) -> np.ndarray:
        """Per-bond contraction s . x where s is the bond's +-1 stencil."""
        xe = np.concatenate([x, np.zeros(x.shape[:-1] + (1,))], axis=-1)
        return xe[..., self._R] - xe[..., self._L]

    def _scatter(self, fb: np.ndarray) -> np.ndarray:
        """Accumulate per-bond scalars onto sites with the +-1 stencil."""
        out = fb @ self._inc
        return np.asarray(out)[..., :-1]

    def evaluate(self, q) -> float | np.ndarray:
        """Total potential energy; accepts (N,) or batched (..., N)."""
        q = self._check(q)
        tot = np.zeros(q.shape[:-1])
        if self.has_bonds:
            tot = tot + self.bond_derivs(self._deltas(q), 0).sum(axis=-1)
        if self.has_site:
            tot = tot + self.site_derivs(q, 0).sum(axis=-1)
        return tot if tot.shape else float(tot)

    def gradient(self, q) -> np.ndarray:
        q = self._check(q)
        g = np.zeros_like(q)
        if self.has_bonds:
            g = g + self._scatter(self.bond_derivs(self._deltas(q), 1))
        if self.has_site:
            g = g + self.site_derivs(q, 1)
        return g

    def laplacian(self, q) -> float | np.ndarray:
        q = self._check(q)
        tot = np.zeros(q.shape[:-1])
        if self.has_bonds:
            tot = tot + (self.bond_derivs(self._deltas(q), 2) * self._w).sum(axis=-1)
        if self.has_site:
            tot = tot + self.site_derivs(q, 2).sum(axis=-1)
        return tot if tot.shape else float(tot)

    def hessian(self, q) -> sp.csr_matrix:
        """Exact symmetric Hessian, sparse; nonzeros only on the stencil."""
        q = self._check(q)
        if q.ndim != 1:
            raise DimensionMismatchError("hessian takes a single configuration")
        n = self.n_dof
        diag = np.zeros(n)
        rows, cols, vals = [], [], []
        if self.has_bonds:
            f2 = self.bond_derivs(self._deltas(q), 2)
            for b, (a, c) in enumerate(zip(self._L, self._R)):
                if a < n:
                    diag[a] += f2[b]
                if c < n:
                    diag[c] += f2[b]
                if a < n and c < n:
                    rows += [a, c]
                    cols += [c, a]
                    vals += [-f2[b], -f2[b]]
        if self.has_site:
            diag += self.site_derivs(q, 2)
        rows += list(range(n))
        cols += list(range(n))
        vals += list(diag)
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    def third_partial(self, q, i: int, j: int, k: int) -> float:
        """d^3 V / dq_i dq_j dq_k; zero outside a single interaction stencil."""
        q = self._check(q)
        n = self.n_dof
        for idx in (i, j, k):
            if not (0 <= idx < n):
                raise IndexError(f"index {idx} out of range [0, {n})")
        tot = 0.0
        if self.has_bonds:
            cand = set(self._site_bonds[i]) & set(self._site_bonds[j]) \
                & set(self._site_bonds[k])
            if cand:
                f3 = self.bond_derivs(self._deltas(q), 3)
                for b in cand:
                    a, c = self._L[b], self._R[b]

                    def s(idx):
                        return 1.0 if idx == c else (-1.0 if idx == a else 0.0)

                    tot += f3[b] * s(i) * s(j) * s(k)
        if self.has_site and i == j == k:
            tot += float(self.site_derivs(np.atleast_1d(q), 3)[..., i])
        return tot

    def derivative_bundle(self, q):
        """All scalar contractions entering the level-set integrands.

        Batched: q of shape (..., N).  Returns a dict with
        v, grad, grad_sq, laplacian, ghg (= g.H.g), hg_sq (= |Hg|^2),
        t1 (= sum_ij g_i d3_ijj V), t2 (= sum_ijk g_i g_j g_k d3_ijk V).
        """
        q = self._check(q)
        g = self.gradient(q)
        out = {"grad": g, "grad_sq": (g * g).sum(axis=-1)}
        lap = np.zeros(q.shape[:-1])
        ghg = np.zeros(q.shape[:-1])
        hg = np.zeros_like(g)
        t1 = np.zeros(q.shape[:-1])
        t2 = np.zeros(q.shape[:-1])
        v = np.zeros(q.shape[:-1])
        if self.has_bonds:
            d = self._deltas(q)
            f0 = self.bond_derivs(d, 0)
            f2 = self.bond_derivs(d, 2)
            f3 = self.bond_derivs(d, 3)
            e = self._edge(g)
            v = v + f0.sum(axis=-1)
            lap = lap + (f2 * self._w).sum(axis=-1)
            ghg = ghg + (f2 * e * e).sum(axis=-1)
            hg = hg + self._scatter(f2 * e)
            t1 = t1 + (f3 * e * self._w).sum(axis=-1)
            t2 = t2 + (f3 * e ** 3).sum(axis=-1)
        if self.has_site:
            g0 = self.site_derivs(q, 0)
            g2 = self.site_derivs(q, 2)
            g3 = self.site_derivs(q, 3)
            v = v + g0.sum(axis=-1)
            lap = lap + g2.sum(axis=-1)
            ghg = ghg + (g2 * g * g).sum(axis=-1)
            hg = hg + g2 * g
            t1 = t1 + (g3 * g).sum(axis=-1)
            t2 = t2 + (g3 * g ** 3).sum(axis=-1)
        out.update(v=v, laplacian=lap, ghg=ghg, hg_sq=(hg * hg).sum(axis=-1),
                   t1=t1, t2=t2)
        return out


class Harmonic(PotentialModel):
    """V = 1/2 sum q_i^2.  Site-only; every level set is a sphere.

    Not a pair potential; bundled purely as the analytic validation case.
    """

    kind = "harmonic"
    has_bonds = False

    def site_derivs(self, q, order):
        if order == 0:
            return 0.5 * q * q
        if order == 1:
            return q
        if order == 2:
            return np.ones_like(q)
        return np.zeros_like(q)


class CoupledRotators(PotentialModel):
    """Classical rotator chain/grid: bond term 1 - cos(difference)."""

    kind = "coupled-rotators"
    has_site = False
    wrap_coordinates = True

    def bond_derivs(self, d, order):
        if order == 0:
            return 1.0 - np.cos(d)
        if order == 1:
            return np.sin(d)
        if order == 2:
            return np.cos(d)
        return -np.sin(d)

    def attainable_range(self):
        return (0.0, 2.0 * self.n_bonds)


class FPU(PotentialModel):
    """Quadratic-plus-quartic bond chain: 1/2 d^2 + (lam/4) d^4."""

    kind = "fpu"
    has_site = False

    def __init__(self, topology, lam: float = 0.1):
        if lam < 0:
            raise ValueError("quartic coupling must be nonnegative")
        super().__init__(topology)
        self.lam = lam

    def bond_derivs(self, d, order):
        if order == 0:
            return 0.5 * d * d + 0.25 * self.lam * d ** 4
        if order == 1:
            return d + self.lam * d ** 3
        if order == 2:
            return 1.0 + 3.0 * self.lam * d * d
        return 6.0 * self.lam * d


class Phi4(PotentialModel):
    """Nearest-neighbor quadratic coupling with an on-site double/single well.

    V = sum_bonds 1/2 (q_i - q_j)^2 + sum_i [ (r/2) q_i^2 + (u/4) q_i^4 ];
    r may be negative (double well), u must be positive.
    """

    kind = "phi4"

    def __init__(self, topology, r: float = 1.0, u: float = 1.0):
        if u <= 0:
            raise ValueError("quartic on-site coefficient must be positive")
        super().__init__(topology)
        self.r = r
        self.u = u

    def bond_derivs(self, d, order):
        if order == 0:
            return 0.5 * d * d
        if order == 1:
            return d
        if order == 2:
            return np.ones_like(d)
        return np.zeros_like(d)

    def site_derivs(self, q, order):
        r, u = self.r, self.u
        if order == 0:
            return 0.5 * r * q * q + 0.25 * u * q ** 4
        if order == 1:
            return r * q + u * q ** 3
        if order == 2:
            return r + 3.0 * u * q * q
        return 6.0 * u * q

    @property
    def stability_bound(self):
        # per-site minimum of (r/2)x^2 + (u/4)x^4 is -r^2/(4u) when r < 0
        return 0.0 if self.r >= 0 else self.r ** 2 / (4.0 * self.u)

    def attainable_range(self):
        return (-self.n_dof * self.stability_bound, np.inf)


class LinearProbe(PotentialModel):
    """V = c . q.  Validation hook only: constant gradient, zero Hessian.

    Unbounded below, hence not a stable potential; never sampled.
    """

    kind = "linear-probe"
    has_bonds = False

    def __init__(self, topology, slope=1.0):
        super().__init__(topology)
        self.slope = np.broadcast_to(np.asarray(slope, dtype=float),
                                     (self.n_dof,)).copy()

    def site_derivs(self, q, order):
        if order == 0:
            return self.slope * q
        if order == 1:
            return np.broadcast_to(self.slope, q.shape).copy()
        return np.zeros_like(q)

    def attainable_range(self):
        return (-np.inf, np.inf)


_KINDS = {
    "harmonic": Harmonic,
    "coupled-rotators": CoupledRotators,
    "fpu": FPU,
    "phi4": Phi4,
    "linear-probe": LinearProbe,
}


def make_model(kind: str, topology: LatticeTopology, **params) -> PotentialModel:
    """Factory used by the experiment runner."""
    try:
        cls = _KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind '{kind}'") from None
    return cls(topology, **params)


def chain(n_sites: int, boundary: str = "fixed") -> LatticeTopology:
    return LatticeTopology(dimension=1, sites_per_side=n_sites, boundary=boundary)
