"""One-body trapped Schroedinger operator: discretization, spectrum, spectral splits.

The operator is  -(grad + i A)^2 + V  on a Dirichlet box, with A = Omega*(-y, x)
in 2D (A = 0 in 1D).  Harmonic traps also come in an analytic flavour with exact
oscillator eigenvalues and tabulated eigenfunctions, used wherever second-order
grid bias would swamp the quantity under study.
"""
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import eigh_tridiagonal

from ._grids import Grid1D, Grid2D
from .errors import GridResolutionError

_LEAK_TOL = 1e-8


@dataclass(frozen=True)
class TrapConfig:
    """Trapping potential V with growth bound V(x) >= c|x|^s - C, plus field strength."""
    dimension: int = 1
    profile: str = "harmonic"          # harmonic | power | box | tabulated
    s: float = 2.0
    c: float = 1.0
    C: float = 0.0
    omega: float = 0.0                 # rotation / magnetic strength, 2D only
    tabulated: np.ndarray | None = None

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError("dimension must be 1 or 2 (3D grids are out of scope)")
        if self.profile not in ("harmonic", "power", "box", "tabulated"):
            raise ValueError(f"unknown trap profile {self.profile!r}")
        if self.profile != "box" and self.s <= 0:
            raise ValueError("trap exponent s must be positive")
        if self.c <= 0:
            raise ValueError("growth coefficient c must be positive")
        if self.dimension == 1 and self.omega != 0.0:
            raise ValueError("rotation requires dimension 2")

    @property
    def growth_exponent(self):
        return math.inf if self.profile == "box" else (2.0 if self.profile == "harmonic" else self.s)

    def potential_on(self, points):
        """V at an array of positions; points is (..., ) in 1D or a (X, Y) pair in 2D."""
        if self.profile == "box":
            return np.zeros_like(points[0] if isinstance(points, tuple) else points)
        if isinstance(points, tuple):
            r = np.sqrt(points[0] ** 2 + points[1] ** 2)
        else:
            r = np.abs(points)
        if self.profile == "harmonic":
            V = r ** 2
        elif self.profile == "power":
            V = self.c * r ** self.s - self.C
        else:
            V = self.tabulated
            if V is None:
                raise ValueError("tabulated trap needs grid values")
            V = np.asarray(V, dtype=float)
        if not np.all(np.isfinite(V)):
            raise ValueError("trap potential is not finite at every grid node")
        return V


@dataclass(frozen=True)
class GridSpec:
    """Discretization request: box half-width, interior points per axis, mode count."""
    extent: float = 12.0
    points: int = 1024
    n_modes: int = 16
    analytic: bool = False


@dataclass
class OneBodyModel:
    """Eigenpairs of the discretized (or analytic harmonic) one-body operator.

    Eigenvectors are columns, orthonormal in the h-weighted inner product.
    """
    trap: TrapConfig
    grid: object
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    analytic: bool
    matrix: object = field(default=None, repr=False)

    @property
    def dimension(self):
        return self.trap.dimension

    @property
    def n_modes(self):
        return len(self.eigenvalues)

    def mode(self, j):
        return self.eigenvectors[:, j]

    def apply(self, u):
        """H_1 u on the grid (analytic models apply through the eigenbasis)."""
        if self.matrix is not None:
            return self.matrix @ u
        coef = self.eigenvectors.conj().T @ u * self.grid.cell_volume
        return self.eigenvectors @ (self.eigenvalues * coef)

    def potential_values(self):
        g = self.grid
        if g.ndim == 1:
            return self.trap.potential_on(g.x)
        return self.trap.potential_on((g.X, g.Y)).reshape(-1)


def _hermite_functions(x, count):
    """First `count` oscillator eigenfunctions of -u'' + x^2 u via stable recurrence."""
    phi = np.empty((count, len(x)))
    phi[0] = np.pi ** -0.25 * np.exp(-x ** 2 / 2)
    if count > 1:
        phi[1] = np.sqrt(2.0) * x * phi[0]
    for j in range(1, count - 1):
        phi[j + 1] = np.sqrt(2.0 / (j + 1)) * x * phi[j] - np.sqrt(j / (j + 1)) * phi[j - 1]
    return phi


def _analytic_oscillator(trap, disc):
    if trap.dimension == 1:
        grid = Grid1D(disc.extent, disc.points)
        phis = _hermite_functions(grid.x, disc.n_modes)
        vecs = np.array([p / grid.norm(p) for p in phis]).T
        vals = 1.0 + 2.0 * np.arange(disc.n_modes, dtype=float)
        return OneBodyModel(trap, grid, vals, vecs, analytic=True)
    grid = Grid2D(disc.extent, disc.points)
    # separable modes (p, q) with energy 2(p+q+1), lowest n_modes by energy then lex
    per_axis = disc.n_modes
    levels = sorted(((2.0 * (p + q + 1), p, q) for p in range(per_axis) for q in range(per_axis)))
    levels = levels[:disc.n_modes]
    phis1 = _hermite_functions(grid.axis, per_axis)
    h1 = Grid1D(disc.extent, disc.points)
    phis1 = np.array([p / h1.norm(p) for p in phis1])
    vecs = np.empty((grid.size, disc.n_modes))
    vals = np.empty(disc.n_modes)
    for j, (ev, p, q) in enumerate(levels):
        vecs[:, j] = np.outer(phis1[p], phis1[q]).reshape(-1)
        vals[j] = ev
    return OneBodyModel(trap, grid, vals, vecs, analytic=True)


def _assemble_1d(trap, grid):
    V = trap.potential_on(grid.x)
    diag = 2.0 / grid.h ** 2 + V
    off = np.full(grid.points - 1, -1.0 / grid.h ** 2)
    return diag, off


def assemble_matrix_2d(trap, grid):
    """Sparse FD matrix of -(grad + iA)^2 + V with the symmetrized magnetic stencil."""
    n = grid.points
    h = grid.h
    I = sp.identity(n, format="csr")
    main = np.full(n, 2.0 / h ** 2)
    offv = np.full(n - 1, -1.0 / h ** 2)
    T = sp.diags([offv, main, offv], [-1, 0, 1], format="csr")
    H = sp.kron(T, I) + sp.kron(I, T)
    V = trap.potential_on((grid.X, grid.Y)).reshape(-1)
    diag = V.astype(complex if trap.omega != 0 else float)
    if trap.omega != 0.0:
        Ax = (-trap.omega * grid.Y).reshape(-1)
        Ay = (trap.omega * grid.X).reshape(-1)
        diag = diag + Ax ** 2 + Ay ** 2
        dv = np.full(n - 1, 1.0 / (2 * h))
        D = sp.diags([-dv, dv], [-1, 1], format="csr")
        Dx = sp.kron(D, I)
        Dy = sp.kron(I, D)
        Mx = sp.diags(Ax) @ Dx + Dx @ sp.diags(Ax)
        My = sp.diags(Ay) @ Dy + Dy @ sp.diags(Ay)
        H = H.astype(complex) - 1j * (Mx + My)
    return (H + sp.diags(diag)).tocsc()


def _leakage_check(trap, grid, vecs):
    if trap.profile == "box":
        return  # walls are the trap; Dirichlet values vanish by construction
    if grid.ndim == 1:
        edge = np.abs(vecs[[0, -1], :])
    else:
        n = grid.points
        m = np.zeros((n, n), dtype=bool)
        m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = True
        edge = np.abs(vecs[m.reshape(-1), :])
    rel = edge.max(axis=0) / np.abs(vecs).max(axis=0)
    bad = np.nonzero(rel > _LEAK_TOL)[0]
    if len(bad):
        raise GridResolutionError(
            f"boundary leakage {rel[bad[0]]:.2e} in mode {bad[0]}: grid extent too small")


def build_one_body(trap: TrapConfig, disc: GridSpec) -> OneBodyModel:
    """Diagonalize the one-body operator; eigenvalues ascending, modes h-orthonormal."""
    if disc.analytic:
        if trap.profile != "harmonic" or trap.omega != 0.0:
            raise ValueError("analytic mode covers the non-rotating harmonic trap only")
        return _analytic_oscillator(trap, disc)
    if trap.dimension == 1:
        grid = Grid1D(disc.extent, disc.points)
        diag, off = _assemble_1d(trap, grid)
        vals, vecs = eigh_tridiagonal(diag, off, select="i",
                                      select_range=(0, disc.n_modes - 1))
        vecs = vecs / np.sqrt(grid.h)
        mat = sp.diags([off, diag, off], [-1, 0, 1], format="csr")
        model = OneBodyModel(trap, grid, vals, vecs, analytic=False, matrix=mat)
    else:
        grid = Grid2D(disc.extent, disc.points)
        H = assemble_matrix_2d(trap, grid)
        sigma = float(min(0.0, H.diagonal().real.min())) - 1.0
        vals, vecs = spla.eigsh(H, k=disc.n_modes, sigma=sigma, which="LM")
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order] / np.sqrt(grid.cell_volume)
        model = OneBodyModel(trap, grid, vals, vecs, analytic=False, matrix=H.tocsr())
    _leakage_check(trap, grid, model.eigenvectors)
    return model


@dataclass
class SpectralSplit:
    """Low/high decomposition of the computed spectrum at an energy cutoff."""
    cutoff: float
    requested_cutoff: float
    low_indices: np.ndarray
    n_low: int
    empty_low: bool
    model: OneBodyModel

    @property
    def adjusted(self):
        return self.cutoff != self.requested_cutoff

    def projector_low(self):
        V = self.model.eigenvectors[:, self.low_indices]
        return (V @ V.conj().T) * self.model.grid.cell_volume

    def projector_high(self):
        P = self.projector_low()
        return np.eye(P.shape[0]) - P


def spectral_split(model: OneBodyModel, cutoff: float) -> SpectralSplit:
    """Split the computed spectrum strictly below `cutoff`; ties move up half a gap."""
    vals = model.eigenvalues
    L = float(cutoff)
    requested = L
    hit = np.nonzero(np.isclose(vals, L, rtol=0, atol=1e-12))[0]
    if len(hit):
        j = hit[0]
        if j + 1 < len(vals):
            L = vals[j] + 0.5 * (vals[j + 1] - vals[j])
        else:
            L = vals[j] + 0.5
    low = np.nonzero(vals < L)[0]
    return SpectralSplit(cutoff=L, requested_cutoff=requested, low_indices=low,
                         n_low=len(low), empty_low=(len(low) == 0), model=model)


@dataclass
class WeylReport:
    rows: list                   # (L, n_low, ratio)
    exponent: float
    ratio_bound: float
    monotone: bool


def verify_weyl_bound(model: OneBodyModel, cutoffs) -> WeylReport:
    """Track n_low / L^(d/s + d/2) over a cutoff sweep; certify boundedness."""
    cutoffs = list(cutoffs)
    if any(b <= a for a, b in zip(cutoffs, cutoffs[1:])):
        raise ValueError("cutoff list must be increasing")
    if cutoffs[0] <= model.eigenvalues[0]:
        raise ValueError("cutoffs must lie above the lowest eigenvalue")
    if cutoffs[-1] > model.eigenvalues[-1]:
        raise ValueError("cutoff exceeds the computed part of the spectrum")
    d = model.dimension
    s = model.trap.growth_exponent
    expo = d / 2.0 if math.isinf(s) else d / s + d / 2.0
    rows = []
    prev = -1
    monotone = True
    for L in cutoffs:
        split = spectral_split(model, L)
        ratio = split.n_low / L ** expo
        rows.append((split.cutoff, split.n_low, ratio))
        monotone = monotone and split.n_low >= prev
        prev = split.n_low
    return WeylReport(rows=rows, exponent=expo,
                      ratio_bound=max(r for _, _, r in rows), monotone=monotone)


@dataclass
class SobolevReport:
    worst_ratio: float
    rows: list
    two_particle_min_eig: float
    fitted_slope: float          # in  -lambda_min <= slope * (int W^-)^2 + offset
    fitted_offset: float
    refined_relative_change: float


def _two_particle_min_eig(trap, W_vals_fn, extent, points):
    grid = Grid1D(extent, points)
    diag, off = _assemble_1d(trap, grid)
    T1 = sp.diags([off, diag, off], [-1, 0, 1], format="csr")
    I = sp.identity(grid.points, format="csr")
    H = sp.kron(T1, I) + sp.kron(I, T1)
    D = W_vals_fn(grid.x[:, None] - grid.x[None, :]).reshape(-1)
    H = (H + sp.diags(D)).tocsr()
    vals = spla.eigsh(H, k=1, which="SA", return_eigenvectors=False,
                      v0=np.ones(H.shape[0]), tol=1e-9)
    return float(vals[0])


def verify_sobolev_1d(model: OneBodyModel, potential, u_samples,
                      coarse_points=96) -> SobolevReport:
    """1D bound  int |W||u|^2 <= ||W||_1 ||u|| ||u'||  on samples, plus the
    two-particle operator lower bound  -C (int W^-)^2 - C  on a coarse grid."""
    if model.dimension != 1:
        raise ValueError("this check is specific to dimension 1")
    g = model.grid
    Wv = np.abs(potential.evaluate(g.x))
    W_l1 = np.sum(Wv) * g.h
    rows = []
    worst = 0.0
    for u in u_samples:
        u = np.asarray(u)
        lhs = float(np.sum(Wv * np.abs(u) ** 2) * g.h)
        du = np.diff(np.concatenate(([0.0], u, [0.0]))) / g.h
        rhs = W_l1 * g.norm(u) * np.sqrt(np.sum(np.abs(du) ** 2) * g.h)
        ratio = 0.0 if lhs == 0.0 else lhs / rhs
        rows.append((lhs, rhs, ratio))
        worst = max(worst, ratio)

    wm = potential.negative_part_integral
    lam0 = _two_particle_min_eig(model.trap, lambda t: potential.evaluate(t),
                                 g.extent, coarse_points)
    # fit -lambda_min(alpha W) <= C1 (alpha int W^-)^2 + C0 over a strength sweep
    alphas = np.array([1.0, 2.0, 4.0])
    lam = np.array([lam0] + [
        _two_particle_min_eig(model.trap, lambda t, a=a: a * potential.evaluate(t),
                              g.extent, coarse_points) for a in alphas[1:]])
    A = np.vstack([(alphas * wm) ** 2, np.ones(3)]).T
    slope, offset = np.linalg.lstsq(A, np.maximum(-lam, 0.0), rcond=None)[0]
    lam_ref = _two_particle_min_eig(model.trap, lambda t: 4.0 * potential.evaluate(t),
                                    g.extent, int(coarse_points * 1.5))
    denom = max(abs(lam[-1]), 1.0)
    return SobolevReport(worst_ratio=worst, rows=rows, two_particle_min_eig=lam0,
                         fitted_slope=float(slope), fitted_offset=float(offset),
                         refined_relative_change=abs(lam_ref - lam[-1]) / denom)
