"""Dyadic annulus nets and normalized phase-space microlocalizers.

The construction: for each band k, a maximal 1/2-separated net of centers
zeta_{j,k} in the annulus C_k = {2^k <= |zeta| < 2^{k+1}}; precuts
u_{j,k}(x, xi) = T_x xi - zeta_{j,k}; cutoffs
chi_{j,k}(x, xi) = rho(2^{-k}|xi|) * phi(u_{j,k}); the normalizer
Sigma = sum of all chi (plus an optional low-frequency cap); and the
localizers Lambda_{j,k} = chi_{j,k} / Sigma, which sum to 1 wherever
Sigma > 0.

Evaluation is lazy: nothing is tabulated globally, and per-point sums
prune to the few bands and centers whose supports can reach the point
(at most 5 radial bands, at most 5^n centers per band).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy.spatial import cKDTree

from . import backend
from .grids import GridSpec, GridSymbol
from .metric import MetricField


class EmptyNetError(ValueError):
    """The annulus contains no lattice candidates for the requested band."""


class OutOfRangeError(ValueError):
    """A frequency's active bands are not covered by the built band range."""


def _smoothstep_poly(t: np.ndarray) -> np.ndarray:
    """C^2 quintic step: 0 at t<=0, 1 at t>=1."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


def _smoothstep_exp(t: np.ndarray) -> np.ndarray:
    """C-infinity step from the standard exp(-1/t) mollifier."""
    t = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(t > 0.0, np.exp(-1.0 / np.maximum(t, 1e-300)), 0.0)
        b = np.where(t < 1.0, np.exp(-1.0 / np.maximum(1.0 - t, 1e-300)), 0.0)
    return a / (a + b)


_STEPS = {"polynomial-smoothstep": _smoothstep_poly, "exp-mollified": _smoothstep_exp}


@dataclass(frozen=True)
class BumpProfiles:
    """Radial mother cut phi and annular profile rho, with seminorm table.

    phi(eta) = P(|eta|) with P = 1 on [0, 1/2] and 0 on [1, inf);
    rho = 1 on [1/2, 2] and 0 outside (1/4, 4).
    """

    kind: str
    seminorms: dict[int, float] = field(default_factory=dict)

    def _step(self, t):
        return _STEPS[self.kind](t)

    def phi_profile(self, r) -> np.ndarray:
        """1D radial profile P(r); accepts inf (maps to 0)."""
        r = np.asarray(r, dtype=float)
        finite = np.isfinite(r)
        out = np.zeros_like(r)
        out[finite] = 1.0 - self._step(2.0 * r[finite] - 1.0)
        return out

    def phi(self, eta) -> np.ndarray:
        """Mother cut on points; last axis is the vector axis."""
        eta = np.asarray(eta, dtype=float)
        return self.phi_profile(np.linalg.norm(np.atleast_2d(eta), axis=-1))

    def rho(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        rising = self._step((r - 0.25) * 4.0)
        falling = 1.0 - self._step((r - 2.0) / 2.0)
        return rising * falling


def build_bumps(transition: str = "exp-mollified") -> BumpProfiles:
    """Construct bump profiles; transition is the smooth-step family used."""
    if transition not in _STEPS:
        raise ValueError(f"unknown transition {transition!r}; "
                         f"choose from {sorted(_STEPS)}")
    prof = BumpProfiles(kind=transition)
    # empirical seminorm table M_l(P) for l <= 4 by central differences
    h = 1e-3
    r = np.linspace(0.0, 1.2, 2401)
    vals = prof.phi_profile(r)
    table = {0: float(np.abs(vals).max())}
    cur = vals
    for order in range(1, 5):
        cur = (np.roll(cur, -1) - np.roll(cur, 1))[1:-1] / (2 * h)
        r = r[1:-1]
        table[order] = float(np.abs(cur).max())
    object.__setattr__(prof, "seminorms", table)
    return prof


@dataclass(frozen=True)
class DyadicNet:
    """Maximal 1/2-separated net of centers in the annulus C_k."""

    k: int
    centers: np.ndarray

    @property
    def size(self) -> int:
        return self.centers.shape[0]


def packing_bound(k: int, dim: int) -> int:
    """Upper bound on net size: disjoint 1/4-balls inside B(0, 2^{k+1}+1/4)."""
    return int(np.floor(((2.0 ** (k + 1) + 0.25) / 0.25) ** dim))


def build_net(k: int, dim: int, lattice_step: float = 0.125) -> DyadicNet:
    """Greedy maximal 1/2-separated net over a lexicographic lattice scan."""
    if lattice_step > 0.125:
        raise ValueError("lattice_step must be <= 1/8 for covering maximality")
    if dim not in (1, 2):
        raise ValueError("only dim 1 and 2 are supported")
    lo, hi = 2.0 ** k, 2.0 ** (k + 1)
    axis = np.arange(-hi, hi + lattice_step / 2, lattice_step)
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    cands = np.stack([m.ravel() for m in mesh], axis=-1)
    r = np.linalg.norm(cands, axis=1)
    cands = np.ascontiguousarray(cands[(r >= lo) & (r < hi)])
    if cands.shape[0] == 0:
        raise EmptyNetError(f"annulus C_{k} holds no lattice points at "
                            f"step {lattice_step}")
    idx = backend.greedy_select(cands, 0.5)
    return DyadicNet(k=k, centers=cands[idx])


def validate_net(net: DyadicNet, dim: int, lattice_step: float = 0.125) -> dict:
    """Exhaustive separation and covering check on the construction lattice."""
    tree = cKDTree(net.centers)
    d, _ = tree.query(net.centers, k=2)
    min_sep = float(d[:, 1].min()) if net.size > 1 else np.inf
    lo, hi = 2.0 ** net.k, 2.0 ** (net.k + 1)
    axis = np.arange(-hi, hi + lattice_step / 2, lattice_step)
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    r = np.linalg.norm(pts, axis=1)
    pts = pts[(r >= lo) & (r < hi)]
    cover, _ = tree.query(pts, k=1)
    return {
        "min_separation": min_sep,
        "covering_radius": float(cover.max()),
        "size": net.size,
        "packing_bound": packing_bound(net.k, dim),
        "separation_ok": bool(min_sep >= 0.5 - 1e-12),
        "covering_ok": bool(cover.max() <= 0.5 + 1e-12),
    }


class Partition:
    """Built family of nets, bumps, and metric over a band range."""

    def __init__(self, metric: MetricField, k_min: int, k_max: int,
                 bumps: BumpProfiles, nets: dict[int, DyadicNet],
                 low_freq_cap: bool = False, lattice_step: float = 0.125):
        if k_min > k_max:
            raise ValueError("k_min must be <= k_max")
        self.metric = metric
        self.k_min = k_min
        self.k_max = k_max
        self.bumps = bumps
        self.nets = nets
        self.low_freq_cap = low_freq_cap
        self.lattice_step = lattice_step
        self.dim = metric.dim
        self._trees = {k: cKDTree(net.centers) for k, net in nets.items()}

    @property
    def bands(self) -> list[int]:
        return list(range(self.k_min, self.k_max + 1))

    def tree(self, k: int) -> cKDTree:
        return self._trees[k]

    def patches(self) -> Iterator["Microlocalizer"]:
        for k in self.bands:
            for j in range(self.nets[k].size):
                yield Microlocalizer(self, j, k)

    # vectorized core ----------------------------------------------------

    def fiber_transforms(self, x_arr: np.ndarray):
        """T_x for each row of x_arr, compressed to unique matrices.

        Returns (t_unique (U, n, n), inverse (P,)) so t_unique[inverse]
        reproduces the full family.
        """
        x_arr = np.atleast_2d(np.asarray(x_arr, dtype=float))
        mats = np.stack([self.metric.sqrt_at(p) for p in x_arr])
        flat = np.round(mats.reshape(len(x_arr), -1), 12)
        _, first, inv = np.unique(flat, axis=0, return_index=True,
                                  return_inverse=True)
        return mats[first], inv

    def _phi_neighbor_sums(self, k: int, u: np.ndarray) -> np.ndarray:
        """Sum over net centers of phi(|u - zeta|); u has shape (M, n)."""
        net = self.nets[k]
        if net.size == 0:
            return np.zeros(len(u))
        # separation 1/2 packs at most 5^n centers within distance 1
        kq = min(net.size, 5 ** self.dim + 2)
        d, _ = self.tree(k).query(u, k=kq, distance_upper_bound=1.0)
        d = np.atleast_2d(d.reshape(len(u), -1))
        if kq < net.size and np.any(np.isfinite(d[:, -1])):
            raise RuntimeError("neighbor budget exceeded; net separation broken")
        return self.bumps.phi_profile(d).sum(axis=1)

    def sigma_pairs(self, x_arr: np.ndarray, xi_arr: np.ndarray) -> np.ndarray:
        """Sigma(x, xi) on the product of point sets; shape (P, Q)."""
        xi_arr = np.atleast_2d(np.asarray(xi_arr, dtype=float))
        xi_norm = np.linalg.norm(xi_arr, axis=1)
        t_uniq, inv = self.fiber_transforms(x_arr)
        out = np.zeros((len(t_uniq), len(xi_arr)))
        for k in self.bands:
            rho = self.bumps.rho(xi_norm / 2.0 ** k)
            act = rho > 0.0
            if not act.any():
                continue
            for ti, t in enumerate(t_uniq):
                u = xi_arr[act] @ t.T
                out[ti, act] += rho[act] * self._phi_neighbor_sums(k, u)
        if self.low_freq_cap:
            out += self.bumps.phi_profile(xi_norm / 2.0 ** self.k_min)
        return out[inv]

    def chi_pairs(self, j: int, k: int, x_arr: np.ndarray,
                  xi_arr: np.ndarray) -> np.ndarray:
        """chi_{j,k}(x, xi) on the product of point sets; shape (P, Q)."""
        xi_arr = np.atleast_2d(np.asarray(xi_arr, dtype=float))
        xi_norm = np.linalg.norm(xi_arr, axis=1)
        zeta = self.nets[k].centers[j]
        rho = self.bumps.rho(xi_norm / 2.0 ** k)
        t_uniq, inv = self.fiber_transforms(x_arr)
        out = np.zeros((len(t_uniq), len(xi_arr)))
        act = rho > 0.0
        if act.any():
            for ti, t in enumerate(t_uniq):
                u = xi_arr[act] @ t.T
                r = np.linalg.norm(u - zeta, axis=1)
                out[ti, act] = rho[act] * self.bumps.phi_profile(r)
        return out[inv]

    def localizer_pairs(self, j: int, k: int, x_arr: np.ndarray,
                        xi_arr: np.ndarray) -> np.ndarray:
        """Lambda_{j,k} = chi/Sigma with exact zeros off supp chi."""
        chi = self.chi_pairs(j, k, x_arr, xi_arr)
        out = np.zeros_like(chi)
        mask = chi > 0.0
        if mask.any():
            sigma = self.sigma_pairs(x_arr, xi_arr)
            out[mask] = chi[mask] / sigma[mask]
        return out

    def overlap_pairs(self, x_arr: np.ndarray, xi_arr: np.ndarray) -> np.ndarray:
        """Number of (j,k) with chi_{j,k} > 0, per (x, xi) pair."""
        xi_arr = np.atleast_2d(np.asarray(xi_arr, dtype=float))
        xi_norm = np.linalg.norm(xi_arr, axis=1)
        t_uniq, inv = self.fiber_transforms(x_arr)
        out = np.zeros((len(t_uniq), len(xi_arr)), dtype=np.int64)
        for k in self.bands:
            rho = self.bumps.rho(xi_norm / 2.0 ** k)
            act = rho > 0.0
            if not act.any() or self.nets[k].size == 0:
                continue
            kq = min(self.nets[k].size, 5 ** self.dim + 2)
            for ti, t in enumerate(t_uniq):
                u = xi_arr[act] @ t.T
                d, _ = self.tree(k).query(u, k=kq, distance_upper_bound=1.0)
                d = np.atleast_2d(d.reshape(len(u), -1))
                counts = (self.bumps.phi_profile(d) > 0.0).sum(axis=1)
                out[ti, act] += counts
        return out[inv]

    def radial_band_count(self, xi_arr: np.ndarray) -> np.ndarray:
        """Number of integers k (all of Z) with rho(2^{-k}|xi|) > 0."""
        xi_arr = np.atleast_2d(np.asarray(xi_arr, dtype=float))
        xi_norm = np.linalg.norm(xi_arr, axis=1)
        counts = np.zeros(len(xi_arr), dtype=np.int64)
        pos = xi_norm > 0.0
        if pos.any():
            lo = np.ceil(np.log2(xi_norm[pos]) - 2.0).astype(int)
            hi = np.floor(np.log2(xi_norm[pos]) + 2.0).astype(int)
            sub = np.zeros(pos.sum(), dtype=np.int64)
            for off in range(5):
                kk = lo + off
                ok = kk <= hi
                if not ok.any():
                    continue
                sub[ok] += (self.bumps.rho(xi_norm[pos][ok] / 2.0 ** kk[ok]) > 0)
            counts[pos] = sub
        return counts

    def needed_bands(self, x, xi) -> list[int]:
        """Bands whose cutoffs could be nonzero at (x, xi)."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        n = float(np.linalg.norm(xi))
        if n == 0.0:
            return []
        fn = float(np.linalg.norm(self.metric.sqrt_at(x) @ xi))
        out = []
        for k in range(int(np.floor(np.log2(n))) - 3,
                       int(np.ceil(np.log2(n))) + 3):
            if self.bumps.rho(n / 2.0 ** k) <= 0.0:
                continue
            # a center in C_k can lie within distance 1 of T_x xi
            if 2.0 ** k <= fn + 1.0 and 2.0 ** (k + 1) > fn - 1.0:
                out.append(k)
        return out


@dataclass(frozen=True)
class Microlocalizer:
    """Handle for one patch (j, k) of a built partition."""

    partition: Partition
    j: int
    k: int

    @property
    def center(self) -> np.ndarray:
        return self.partition.nets[self.k].centers[self.j]

    def precut(self, x, xi) -> np.ndarray:
        """u_{j,k}(x, xi) = T_x xi - zeta_{j,k}."""
        t = self.partition.metric.sqrt_at(x)
        return t @ np.atleast_1d(np.asarray(xi, dtype=float)) - self.center

    def chi_tilde(self, x, xi) -> float:
        return float(self.partition.bumps.phi(self.precut(x, xi)))


def build_partition(metric: MetricField, k_min: int, k_max: int,
                    lattice_step: float = 0.125,
                    bump_kind: str = "exp-mollified",
                    low_freq_cap: bool = False) -> Partition:
    """Build nets for every band in [k_min, k_max] and bundle the family."""
    bumps = build_bumps(bump_kind)
    nets = {k: build_net(k, metric.dim, lattice_step)
            for k in range(k_min, k_max + 1)}
    return Partition(metric, k_min, k_max, bumps, nets,
                     low_freq_cap=low_freq_cap, lattice_step=lattice_step)


# scalar operations ------------------------------------------------------

def eval_cut(m: Microlocalizer, x, xi) -> float:
    """chi_{j,k}(x, xi) = rho(2^{-k}|xi|) * phi(T_x xi - zeta_{j,k})."""
    p = m.partition
    return float(p.chi_pairs(m.j, m.k, np.atleast_2d(x), np.atleast_2d(xi))[0, 0])


def eval_normalizer(part: Partition, x, xi, strict: bool = True) -> float:
    """Sigma(x, xi); in strict mode errors when active bands are unbuilt."""
    if strict:
        needed = part.needed_bands(x, xi)
        missing = [k for k in needed if k not in part.nets]
        covered_low = part.low_freq_cap and all(k < part.k_min for k in missing)
        if missing and not covered_low:
            raise OutOfRangeError(
                f"bands {missing} active at this frequency are outside the "
                f"built range [{part.k_min}, {part.k_max}]")
    return float(part.sigma_pairs(np.atleast_2d(x), np.atleast_2d(xi))[0, 0])


def eval_localizer(m: Microlocalizer, x, xi, strict: bool = True) -> float:
    """Lambda_{j,k}(x, xi), exactly 0 off supp chi (no 0/0)."""
    chi = eval_cut(m, x, xi)
    if chi == 0.0:
        return 0.0
    return chi / eval_normalizer(m.partition, x, xi, strict=strict)


def overlap_count(part: Partition, x, xi) -> int:
    return int(part.overlap_pairs(np.atleast_2d(x), np.atleast_2d(xi))[0, 0])


# grid sampling ----------------------------------------------------------

def localizer_symbol(part: Partition, j: int, k: int,
                     grid: GridSpec) -> GridSymbol:
    """Lambda_{j,k} sampled as a GridSymbol on the quantization lattice."""
    x_pts, xi_pts = _grid_points(grid)
    vals = part.localizer_pairs(j, k, x_pts, xi_pts)
    shape = (2 * grid.n_grid,) * grid.dim + (2 * grid.n_grid,) * grid.dim
    return GridSymbol(grid=grid, values=vals.astype(complex).reshape(shape))


def band_sum_symbol(part: Partition, k: int, grid: GridSpec) -> GridSymbol:
    """sum_j Lambda_{j,k} sampled as a GridSymbol."""
    x_pts, xi_pts = _grid_points(grid)
    xi_norm = np.linalg.norm(xi_pts, axis=1)
    t_uniq, inv = part.fiber_transforms(x_pts)
    chi_sum = np.zeros((len(t_uniq), len(xi_pts)))
    rho = part.bumps.rho(xi_norm / 2.0 ** k)
    act = rho > 0.0
    if act.any():
        for ti, t in enumerate(t_uniq):
            u = xi_pts[act] @ t.T
            chi_sum[ti, act] = rho[act] * part._phi_neighbor_sums(k, u)
    chi_sum = chi_sum[inv]
    out = np.zeros_like(chi_sum)
    mask = chi_sum > 0.0
    if mask.any():
        sigma = part.sigma_pairs(x_pts, xi_pts)
        out[mask] = chi_sum[mask] / sigma[mask]
    shape = (2 * grid.n_grid,) * grid.dim + (2 * grid.n_grid,) * grid.dim
    return GridSymbol(grid=grid, values=out.astype(complex).reshape(shape))


def _grid_points(grid: GridSpec):
    xd = np.meshgrid(*([grid.x_axis_doubled()] * grid.dim), indexing="ij")
    xi = np.meshgrid(*([grid.xi_axis_refined()] * grid.dim), indexing="ij")
    x_pts = np.stack([m.ravel() for m in xd], axis=-1)
    xi_pts = np.stack([m.ravel() for m in xi], axis=-1)
    return x_pts, xi_pts


# verification scans -----------------------------------------------------

def pou_deviation(part: Partition, x_arr: np.ndarray,
                  xi_arr: np.ndarray) -> float:
    """max |sum_{j,k} Lambda + cap/Sigma - 1| over sample pairs with Sigma > 0.

    The numerator accumulates per-patch cutoff values by direct distance
    evaluation, independently of the tree-pruned normalizer path.
    """
    x_arr = np.atleast_2d(np.asarray(x_arr, dtype=float))
    xi_arr = np.atleast_2d(np.asarray(xi_arr, dtype=float))
    xi_norm = np.linalg.norm(xi_arr, axis=1)
    t_uniq, inv = part.fiber_transforms(x_arr)
    num = np.zeros((len(t_uniq), len(xi_arr)))
    for k in part.bands:
        rho = part.bumps.rho(xi_norm / 2.0 ** k)
        act = rho > 0.0
        if not act.any():
            continue
        centers = part.nets[k].centers
        for ti, t in enumerate(t_uniq):
            u = xi_arr[act] @ t.T
            for zeta in centers:
                r = np.linalg.norm(u - zeta, axis=1)
                near = r < 1.0
                if near.any():
                    vals = np.zeros(len(u))
                    vals[near] = part.bumps.phi_profile(r[near])
                    num[ti, act] += rho[act] * vals
    if part.low_freq_cap:
        num += part.bumps.phi_profile(xi_norm / 2.0 ** part.k_min)
    num = num[inv]
    sigma = part.sigma_pairs(x_arr, xi_arr)
    mask = sigma > 0.0
    if not mask.any():
        return 0.0
    return float(np.abs(num[mask] / sigma[mask] - 1.0).max())


def overlap_scan(part: Partition, x_arr: np.ndarray,
                 xi_arr: np.ndarray) -> dict:
    """Exhaustive overlap statistics over the sample product set."""
    counts = part.overlap_pairs(x_arr, xi_arr)
    radial = part.radial_band_count(xi_arr)
    hist_vals, hist_counts = np.unique(counts, return_counts=True)
    return {
        "max_overlap": int(counts.max()),
        "overlap_bound": 5 ** (part.dim + 1),
        "max_radial_bands": int(radial.max()),
        "histogram": {int(v): int(c) for v, c in zip(hist_vals, hist_counts)},
    }


def verify_localizer_derivatives(part: Partition, samples,
                                 fd_step: float = 1e-3,
                                 max_order: int = 2) -> dict:
    """Finite-difference derivative constants of Lambda on test patches.

    For each representative patch and each multi-index gamma = (alpha, beta)
    with |gamma| <= max_order, reports the empirical sup over samples of
    |Delta^gamma Lambda| / (<x>^{|alpha|+|gamma|} <xi>^{|beta|+1+|gamma|}),
    with a Richardson stability flag (estimates at fd_step and fd_step/2
    agree within a factor of 2).
    """
    if max_order > 2:
        raise ValueError("max_order must be <= 2")
    n = part.dim
    samples = [(np.atleast_1d(np.asarray(x, float)),
                np.atleast_1d(np.asarray(xi, float))) for x, xi in samples]

    reps = []
    for k in part.bands:
        centers = part.nets[k].centers
        j = int(np.argmin(np.linalg.norm(
            centers - np.r_[1.5 * 2.0 ** k, np.zeros(n - 1)], axis=1)))
        reps.append(Microlocalizer(part, j, k))

    def lam(m, z):
        return eval_localizer(m, z[:n], z[n:], strict=False)

    def fd(m, z, gamma, h):
        pts = [(1.0, z.copy())]
        for ax, order in enumerate(gamma):
            for _ in range(order):
                new = []
                e = np.zeros_like(z)
                e[ax] = h
                for w, p in pts:
                    new.append((w / (2 * h), p + e))
                    new.append((-w / (2 * h), p - e))
                pts = new
        return sum(w * lam(m, p) for w, p in pts)

    from itertools import product as iproduct
    gammas = [g for g in iproduct(range(max_order + 1), repeat=2 * n)
              if 1 <= sum(g) <= max_order]

    per_patch: dict[str, dict] = {}
    for m in reps:
        consts, stable = {}, {}
        for g in gammas:
            a_ord = sum(g[:n])
            b_ord = sum(g[n:])
            tot = a_ord + b_ord
            ests = []
            for h in (fd_step, fd_step / 2):
                sup = 0.0
                for x, xi in samples:
                    z = np.concatenate([x, xi])
                    w = ((1.0 + x @ x) ** ((a_ord + tot) / 2.0)
                         * (1.0 + xi @ xi) ** ((b_ord + 1 + tot) / 2.0))
                    sup = max(sup, abs(fd(m, z, g, h)) / w)
                ests.append(sup)
            key = str(g)
            consts[key] = ests[1]
            floor = 1e-9
            stable[key] = bool(0.5 <= (ests[1] + floor) / (ests[0] + floor) <= 2.0)
        per_patch[f"j{m.j}_k{m.k}"] = {"constants": consts, "stable": stable}

    spread_ok = True
    for g in gammas:
        key = str(g)
        vals = [p["constants"][key] for p in per_patch.values()]
        lo, hi = min(vals), max(vals)
        if lo > 1e-9 and hi / lo > 10.0:
            spread_ok = False
    return {"patches": per_patch, "uniform_spread_ok": spread_ok,
            "fd_step": fd_step, "max_order": max_order}
