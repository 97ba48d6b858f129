"""Constrained minimization of the Hartree, modified-Hartree, and contact functionals.

All three share the quadratic one-body part; they differ in the pair term:
    H      :  1/2 <rho, w_N * rho>
    Heps   :  the same minus  eps/2 <rho, |w_N| * rho>
    NLS    :  a/2 int rho^2,  a = int w  (or an explicit contact strength)
Minimization is a normalized gradient flow: preconditioned steepest descent on
the unit sphere with adaptive step and enforced energy monotonicity.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import UnstableError, NoConvergenceError
from .interaction import (InteractionPotential, ScaledPotential, critical_coupling,
                          _radial2d)

_WHICH = ("H", "Heps", "NLS")


@dataclass(frozen=True)
class ContactInteraction:
    strength: float


@dataclass
class MeanFieldProblem:
    """One minimization setting: a one-body model plus an interaction mode."""
    model: object
    interaction: InteractionPotential | None = None
    beta: float = 0.0
    N: int = 1
    contact: ContactInteraction | None = None
    eps: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.eps <= 1.0):
            raise ValueError("eps must lie in [0, 1]")
        if self.interaction is not None and self.contact is not None:
            raise ValueError("choose either a scaled potential or a contact strength")
        if self.model.dimension > 2:
            raise ValueError("mean-field grids cover d <= 2")

    @property
    def dimension(self):
        return self.model.dimension

    def scaled(self):
        if self.interaction is None:
            return None
        return ScaledPotential(self.interaction, self.N, self.beta)

    @property
    def contact_strength(self):
        if self.contact is not None:
            return self.contact.strength
        if self.interaction is not None:
            return self.interaction.integral
        return 0.0

    def with_N(self, N):
        return MeanFieldProblem(self.model, self.interaction, self.beta, int(N),
                                self.contact, self.eps)


@dataclass
class MinimizationResult:
    minimizer: np.ndarray
    energy: float
    constraint_residual: float
    pgrad_norm: float
    iterations: int
    dispersion: float
    status: str                    # converged | no_descent
    which: str


class _GridFunctional:
    """Energy/gradient evaluations for one (problem, which) pair on the grid."""

    def __init__(self, problem, which):
        if which not in _WHICH:
            raise ValueError(f"which must be one of {_WHICH}")
        self.problem = problem
        self.which = which
        self.model = problem.model
        self.grid = self.model.grid
        sc = problem.scaled()
        self.kernel = None
        self.kernel_abs = None
        self.a = 0.0
        if which in ("H", "Heps") and sc is not None:
            self.kernel = sc.kernel_on(self.grid)
            if which == "Heps" and problem.eps > 0:
                self.kernel_abs = sc.kernel_on(self.grid, absolute=True)
        else:
            self.a = problem.contact_strength

    def __call__(self, u):
        """Returns (energy, dE/d conj(u))."""
        g = self.grid
        rho = np.abs(u) ** 2
        Hu = self.model.apply(u)
        e = g.inner(u, Hu).real
        if self.kernel is not None:
            conv = g.convolve(rho, self.kernel)
            e += 0.5 * np.sum(rho * conv).real * g.cell_volume
            Hu = Hu + conv * u
            if self.kernel_abs is not None:
                conv_a = g.convolve(rho, self.kernel_abs)
                e -= 0.5 * self.problem.eps * np.sum(rho * conv_a).real * g.cell_volume
                Hu = Hu - self.problem.eps * conv_a * u
        elif self.a != 0.0:
            e += 0.5 * self.a * np.sum(rho ** 2) * g.cell_volume
            Hu = Hu + self.a * rho * u
        return float(e), Hu


def energy(u, problem: MeanFieldProblem, which: str) -> float:
    """Energy of a grid state; `which` in {"H", "Heps", "NLS"}."""
    if np.shape(u) != (problem.model.eigenvectors.shape[0],):
        raise ValueError("state does not live on the problem's grid")
    e, _ = _GridFunctional(problem, which)(np.asarray(u))
    return e


def _preconditioner(problem):
    model = problem.model
    g = model.grid
    alpha = 1.0 + max(0.0, -float(model.eigenvalues[0]))
    if g.ndim == 1:
        n = g.points
        V = model.trap.potential_on(g.x)
        ab = np.zeros((3, n))
        ab[1] = alpha + 2.0 / g.h ** 2 + V
        ab[0, 1:] = -1.0 / g.h ** 2
        ab[2, :-1] = -1.0 / g.h ** 2
        return lambda r: sla.solve_banded((1, 1), ab, r)
    if model.matrix is not None:
        H = model.matrix
    else:
        from .onebody import assemble_matrix_2d
        H = assemble_matrix_2d(model.trap, g)
    lu = spla.splu((H + alpha * sp.identity(H.shape[0], dtype=H.dtype)).tocsc())
    return lu.solve


def _flow(functional, u0, precond, tol, max_iter):
    g = functional.grid
    u = g.normalize(np.asarray(u0, dtype=complex))
    e, grad = functional(u)
    tau = 1.0
    pg = np.inf
    status = "no_descent"
    it = 0
    stale = 0
    for it in range(1, max_iter + 1):
        lam = g.inner(u, grad).real
        r = grad - lam * u
        pg = g.norm(r)
        if pg < tol:
            status = "converged"
            break
        d = precond(r)
        moved = False
        while tau > 1e-14:
            v = g.normalize(u - tau * d)
            e2, grad2 = functional(v)
            if e2 <= e + 1e-15 * max(1.0, abs(e)):
                stale += 1 if e - e2 < 1e-14 * max(1.0, abs(e)) else 0
                if e - e2 >= 1e-14 * max(1.0, abs(e)):
                    stale = 0
                u, e, grad = v, e2, grad2
                tau = min(tau * 1.25, 8.0)
                moved = True
                break
            tau *= 0.5
        if not moved or stale > 40:
            # descent exhausted at machine precision; keep best iterate
            status = "converged" if pg < 100 * tol else "no_descent"
            break
    return u, e, pg, it, status


def minimize(problem: MeanFieldProblem, which: str, starts=2, seed=0,
             tol=None, max_iter=20000) -> MinimizationResult:
    """Best-of-starts normalized gradient flow under the unit-mass constraint."""
    d = problem.dimension
    if which == "NLS":
        a = problem.contact_strength
        if d == 2 and a < 0 and a <= -critical_coupling():
            raise UnstableError(
                f"contact strength {a:.4f} at or below -a*; the functional is unbounded")
    if tol is None:
        tol = 1e-8 if d == 1 else 1e-6
    functional = _GridFunctional(problem, which)
    model = problem.model
    precond = _preconditioner(problem)
    rng = np.random.default_rng(seed)
    inits = [model.mode(0).astype(complex)]
    n_mix = min(8, model.n_modes)
    for _ in range(max(0, starts - 1)):
        c = rng.standard_normal(n_mix) + 1j * rng.standard_normal(n_mix)
        inits.append(model.eigenvectors[:, :n_mix] @ c)
    results = []
    for u0 in inits:
        u, e, pg, it, status = _flow(functional, u0, precond, tol, max_iter)
        results.append((e, len(results), u, pg, it, status))
    results.sort(key=lambda t: (t[0], t[1]))
    e, _, u, pg, it, status = results[0]
    disp = results[-1][0] - results[0][0]
    g = model.grid
    return MinimizationResult(minimizer=u, energy=e,
                              constraint_residual=abs(g.norm(u) ** 2 - 1.0),
                              pgrad_norm=pg, iterations=it, dispersion=disp,
                              status=status, which=which)


# ---------------------------------------------------------------------------
# coefficient-space minimization over a fixed mode set


def minimize_in_modes(eigenvalues, pair_tensor=None, abs_tensor=None,
                      quartic_tensor=None, which="H", contact=0.0, eps=0.0,
                      starts=4, seed=0, tol=1e-11, max_iter=8000):
    """Minimize over the span of the modes: unit vector c in C^M.

    Energy:  sum lam_i |c_i|^2 + 1/2 sum W[ijkl] cc* cc  (+ the eps / contact
    variants).  Exact for the same tensors used by the second-quantized model.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    M = len(lam)
    W = None
    if which in ("H", "Heps") and pair_tensor is not None:
        W = np.array(pair_tensor)
        if which == "Heps" and eps > 0:
            W = W - eps * np.asarray(abs_tensor)
    elif which == "NLS" and quartic_tensor is not None and contact != 0.0:
        W = contact * np.asarray(quartic_tensor)

    def en_grad(c):
        e = float(np.sum(lam * np.abs(c) ** 2))
        g = lam * c
        if W is not None:
            t = np.einsum("ijkl,j,k,l->i", W, c.conj(), c, c)
            e += 0.5 * float(np.einsum("i,i->", c.conj(), t).real)
            g = g + t
        return e, g

    rng = np.random.default_rng(seed)
    inits = [np.eye(M, dtype=complex)[:, 0]]
    for _ in range(max(0, starts - 1)):
        z = rng.standard_normal(M) + 1j * rng.standard_normal(M)
        inits.append(z / np.linalg.norm(z))
    best = None
    for idx, c in enumerate(inits):
        c = c / np.linalg.norm(c)
        e, g = en_grad(c)
        tau = 0.5 / max(1.0, np.max(np.abs(lam)))
        pg = np.inf
        it = 0
        for it in range(1, max_iter + 1):
            mu = float(np.vdot(c, g).real)
            r = g - mu * c
            pg = np.linalg.norm(r)
            if pg < tol:
                break
            moved = False
            while tau > 1e-16:
                v = c - tau * r
                v /= np.linalg.norm(v)
                e2, g2 = en_grad(v)
                if e2 <= e + 1e-16 * max(1.0, abs(e)):
                    c, e, g = v, e2, g2
                    tau = min(tau * 1.3, 2.0)
                    moved = True
                    break
                tau *= 0.5
            if not moved:
                break
        if best is None or e < best[0]:
            best = (e, c, pg, it)
    e, c, pg, it = best
    return MinimizationResult(minimizer=c, energy=e,
                              constraint_residual=abs(np.linalg.norm(c) ** 2 - 1),
                              pgrad_norm=pg, iterations=it, dispersion=0.0,
                              status="converged" if pg < 1e-6 else "no_descent",
                              which=which)


# ---------------------------------------------------------------------------
# Hartree -> contact-limit gap


@dataclass
class GapReport:
    N_list: list
    gaps: list
    hartree_energies: list
    nls_energy: float
    slope: float | None
    exact_zero: bool
    functional_bound_constant: float
    functional_gap_at_nls: list     # |E_H - E_NLS| at the contact minimizer, per N
    bound_satisfied: bool


def hartree_nls_gap(problem: MeanFieldProblem, N_list, beta, starts=2, seed=0,
                    tol=None) -> GapReport:
    """|e_H(N) - e_NLS| over N, its log-log slope, and the functional-level bound."""
    if problem.interaction is None:
        raise ValueError("needs a scaled interaction")
    w = problem.interaction
    if not np.isfinite(w.first_moment):
        raise ValueError("|x| w(x) must be integrable")
    base = MeanFieldProblem(problem.model, w, beta, 1, None, problem.eps)
    nls = minimize(base, "NLS", starts=starts, seed=seed, tol=tol)
    u_star = nls.minimizer
    g = problem.model.grid
    gaps, ehs, fgap = [], [], []
    warm = u_star
    bound_ok = True
    for N in N_list:
        pb = base.with_N(N)
        res_w = _flow(_GridFunctional(pb, "H"), warm, _preconditioner(pb),
                      tol or (1e-8 if g.ndim == 1 else 1e-6), 20000)
        res = minimize(pb, "H", starts=starts, seed=seed, tol=tol)
        if res_w[1] < res.energy:
            e_h, u_h = res_w[1], res_w[0]
        else:
            e_h, u_h = res.energy, res.minimizer
        warm = u_h
        ehs.append(e_h)
        gaps.append(abs(e_h - nls.energy))
        d_star = abs(energy(u_star, pb, "H") - energy(u_star, pb, "NLS"))
        d_h = abs(energy(u_h, pb, "H") - energy(u_h, pb, "NLS"))
        fgap.append(d_star)
        # |e_H - e_NLS| <= max of the functional gaps at the two minimizers
        bound_ok = bound_ok and gaps[-1] <= max(d_star, d_h) + 1e-10
    exact_zero = all(gv < 1e-13 for gv in gaps)
    slope = None
    if not exact_zero:
        pos = [(n, gv) for n, gv in zip(N_list, gaps) if gv > 0]
        if len(pos) >= 2:
            slope = float(np.polyfit(np.log([p[0] for p in pos]),
                                     np.log([p[1] for p in pos]), 1)[0])
    knorm = _abs_gradient_norm_sq(u_star, g)
    consts = [d * n ** beta / (1.0 + knorm) ** 2 for n, d in zip(N_list, fgap)]
    return GapReport(N_list=list(N_list), gaps=gaps, hartree_energies=ehs,
                     nls_energy=nls.energy, slope=slope, exact_zero=exact_zero,
                     functional_bound_constant=float(max(consts)) if consts else 0.0,
                     functional_gap_at_nls=fgap, bound_satisfied=bound_ok)


def _abs_gradient_norm_sq(u, grid):
    au = np.abs(u)
    if grid.ndim == 1:
        du = np.diff(np.concatenate(([0.0], au, [0.0]))) / grid.h
        return float(np.sum(du ** 2) * grid.h)
    n = grid.points
    a2 = au.reshape(n, n)
    gx = np.diff(np.vstack([np.zeros(n), a2, np.zeros(n)]), axis=0) / grid.h
    gy = np.diff(np.hstack([np.zeros((n, 1)), a2, np.zeros((n, 1))]), axis=1) / grid.h
    return float((np.sum(gx ** 2) + np.sum(gy ** 2)) * grid.h ** 2)


# ---------------------------------------------------------------------------
# scaling trial states (collapse probe)


@dataclass(frozen=True)
class TrialProfile:
    """Normalized profile used by the dilation probe; Gaussian or a radial table."""
    dimension: int
    kind: str = "gaussian"            # gaussian | mixture | tabulated
    sigma: float = 1.0
    centers: tuple = ()               # mixture of equal-width Gaussian densities
    weights: tuple = ()
    nodes: np.ndarray | None = None
    values: np.ndarray | None = None

    @classmethod
    def gaussian_profile(cls, sigma, dimension):
        return cls(dimension=dimension, kind="gaussian", sigma=sigma)

    @classmethod
    def gaussian_mixture(cls, centers, weights, sigma, dimension):
        w = np.asarray(weights, float)
        return cls(dimension=dimension, kind="mixture", sigma=sigma,
                   centers=tuple(float(np.linalg.norm(c)) for c in np.atleast_1d(centers)),
                   weights=tuple(w / w.sum()))

    def kinetic(self):
        """|grad u|^2 (an upper bound for mixtures, by convexity of the
        Fisher information).  For mixtures, sigma is the component density std."""
        d = self.dimension
        if self.kind == "gaussian":
            return d / (2.0 * self.sigma ** 2)
        if self.kind == "mixture":
            return d / (4.0 * self.sigma ** 2)
        r, v = self.nodes, self.values
        dv = np.gradient(v, r)
        surf = {1: 2.0, 2: 2 * np.pi, 3: 4 * np.pi}[d]
        return float(surf * np.trapezoid(dv ** 2 * r ** (d - 1), r))

    def density_moment(self, power):
        """int |x|^power |u(x)|^2 dx."""
        d = self.dimension
        if self.kind == "gaussian":
            # |u|^2 is a Gaussian density with per-axis variance sigma^2/2
            return _gaussian_radial_moment(power, self.sigma / np.sqrt(2), d)
        if self.kind == "mixture":
            s = self.sigma / np.sqrt(2)
            out = 0.0
            for c, lam in zip(self.centers, self.weights):
                if power == 2:
                    out += lam * (c ** 2 + d * s ** 2)
                else:
                    out += lam * _offset_radial_moment(power, c, s, d)
            return out
        r, v = self.nodes, self.values
        surf = {1: 2.0, 2: 2 * np.pi, 3: 4 * np.pi}[d]
        return float(surf * np.trapezoid(r ** power * v ** 2 * r ** (d - 1), r))

    def pair_energy(self, w: InteractionPotential):
        """Q = iint |u|^2(x) w(x-y) |u|^2(y)."""
        d = self.dimension
        if w.kind == "gaussian" and self.kind == "gaussian":
            return w.amplitude * (1.0 + self.sigma ** 2 / w.width ** 2) ** (-d / 2.0)
        if w.kind == "gaussian" and self.kind == "mixture":
            s2 = self.sigma ** 2 / 2.0
            tau = w.width ** 2 + 2 * s2
            amp = w.amplitude * (w.width ** 2 / tau) ** (d / 2.0)
            out = 0.0
            for ci, li in zip(self.centers, self.weights):
                for cj, lj in zip(self.centers, self.weights):
                    t = ci - cj if d == 1 else abs(ci - cj)
                    out += li * lj * amp * np.exp(-t ** 2 / (2 * tau))
            return out
        if d == 1:
            r = np.linspace(-self._extent(), self._extent(), 4097)
            rho = self._density_1d(r)
            h = r[1] - r[0]
            diffs = (np.arange(2 * len(r) - 1) - (len(r) - 1)) * h
            return float(np.sum(rho * (np.convolve(rho, w.evaluate(diffs))[len(r) - 1:2 * len(r) - 1] * h)) * h)
        if d == 2:
            g = _radial2d()
            rho = self._density_radial(g.r)
            rho_hat = g.hankel(rho)
            return float(np.sum(rho_hat ** 2 * w.fourier_radial(g.k) * g.wk))
        raise ValueError("3D pair energies are closed-form Gaussian only")

    def _extent(self):
        return 12.0 * self.sigma if self.kind != "tabulated" else float(self.nodes[-1])

    def _density_1d(self, x):
        if self.kind == "gaussian":
            s2 = self.sigma ** 2 / 2
            return np.exp(-x ** 2 / (2 * s2)) / np.sqrt(2 * np.pi * s2)
        return np.interp(np.abs(x), self.nodes, self.values ** 2, right=0.0)

    def _density_radial(self, r):
        if self.kind == "gaussian":
            s2 = self.sigma ** 2 / 2
            return np.exp(-r ** 2 / (2 * s2)) / (2 * np.pi * s2)
        return np.interp(r, self.nodes, self.values ** 2, right=0.0)


def _gaussian_radial_moment(power, s, d):
    from scipy.special import gamma
    return (2 * s ** 2) ** (power / 2) * gamma((d + power) / 2) / gamma(d / 2)


def _offset_radial_moment(power, c, s, d):
    r = np.linspace(0, c + 12 * s, 4001)
    if d == 1:
        x = np.linspace(c - 12 * s, c + 12 * s, 4001)
        rho = np.exp(-(x - c) ** 2 / (2 * s ** 2)) / np.sqrt(2 * np.pi * s ** 2)
        return float(np.trapezoid(np.abs(x) ** power * rho, x))
    raise ValueError("offset moments implemented for the cases the probes use")


@dataclass
class InstabilityProbe:
    N_list: list
    trial_energies: list
    normalized: list               # E_H[v_N] / N^(2 beta)
    limit_value: float             # kinetic + pair/2 at the profile (d = 2)
    diverges: bool
    kinetic_is_upper_bound: bool


def instability_probe(w: InteractionPotential, beta, profile: TrialProfile,
                      N_list, trap=None) -> InstabilityProbe:
    """Evaluate the Hartree energy on dilated trials v_N = N^(d beta/2) u(N^beta .).

    Exact scaling identities: kinetic N^(2 beta) K, pair term N^(d beta) Q / 2,
    trap moment at shrunk argument.  No grid in d >= 2.
    """
    d = profile.dimension
    if beta <= 0:
        raise ValueError("the dilation probe needs beta > 0")
    K = profile.kinetic()
    Q = profile.pair_energy(w)
    rows, norm_rows = [], []
    for N in N_list:
        s = float(N) ** beta
        e = s ** 2 * K + 0.5 * s ** d * Q
        if trap is not None and trap.profile != "box":
            p = trap.growth_exponent
            e += trap.c * s ** (-p) * profile.density_moment(p) - trap.C
            if trap.omega:
                e += trap.omega ** 2 * s ** (-2) * profile.density_moment(2)
        rows.append(float(e))
        norm_rows.append(float(e) / s ** 2)
    limit = K + 0.5 * Q if d == 2 else (0.5 * Q if d == 3 else np.nan)
    diverges = rows[-1] < rows[0] and rows[-1] < 0
    return InstabilityProbe(N_list=list(N_list), trial_energies=rows,
                            normalized=norm_rows, limit_value=float(limit),
                            diverges=diverges,
                            kinetic_is_upper_bound=(profile.kind == "mixture"))


# ---------------------------------------------------------------------------
# kinetic coercivity


@dataclass
class CoercivityReport:
    worst_ratio: float
    offsets_used: float
    rows: list
    all_finite: bool


def kinetic_coercivity_check(u_samples, problem: MeanFieldProblem,
                             offset=None) -> CoercivityReport:
    """max over samples of  |grad |u||^2 / (E_H[u] + C0)."""
    g = problem.model.grid
    if offset is None:
        trap_floor = max(0.0, -float(np.min(problem.model.potential_values())))
        wneg = problem.interaction.negative_part_integral if problem.interaction else 0.0
        offset = trap_floor + wneg ** 2 + 1.0
    rows = []
    ok = True
    for u in u_samples:
        u = g.normalize(np.asarray(u, dtype=complex))
        e = energy(u, problem, "H")
        knorm = _abs_gradient_norm_sq(u, g)
        denom = e + offset
        ok = ok and denom > 0
        rows.append((knorm, e, knorm / denom if denom > 0 else np.inf))
    worst = max(r[2] for r in rows) if rows else 0.0
    return CoercivityReport(worst_ratio=float(worst), offsets_used=float(offset),
                            rows=rows, all_finite=ok and np.isfinite(worst))
