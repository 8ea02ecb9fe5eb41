"""Closed geodesic strings per free homotopy class.

Two backends produce the working stand-in for the set of class-beta closed
geodesic strings modulo reparametrization:

* algebraic -- exact trace-formula geodesics on hyperbolic surfaces given by
  explicit Fuchsian groups (length = n * 2 arccosh(|tr| / 2) for the n-th
  power of an indivisible word);
* variational -- gradient descent plus Newton refinement of the discrete
  loop energy  e(o) = N * sum_k |x_{k+1} - x_k|^2_g  (trapezoidal metric
  evaluation) on the universal cover with deck-twisted closure.

Loops live in covering coordinates; the homotopy class is encoded in the
closure deck transformation and is preserved by continuous descent, so no
per-step class check is done.  Hilbert-manifold loops are replaced by
polygonal loops with N nodes (default 256); invariance under N -> 2N is the
working substitute for the infinite-dimensional theory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (AllSeedsFailed, ConstantClass, NoConvergence,
                     NotHyperbolicElement, SpectralGapTooSmall,
                     UnsupportedModel)
from .flows import (GeodesicFlowField, geodesic_field, integrate_flow,
                    integrate_with_monodromy)
from .models import (FlatTorus, FreeHomotopyClass, FuchsianGroup,
                     FuchsianSurface, MetricSpec, ModelSpace, WarpedCylinder,
                     canonical_class, halfplane_metric,
                     is_boundary_incompressible, power_decomposition)
from .orbits import (ClosedOrbitRecord, MobiusPhaseDeck, PhaseDeck, Section,
                     TranslationDeck, find_closed_orbit)

# ---------------------------------------------------------------------------
# base-space deck maps on universal covers
# ---------------------------------------------------------------------------

class BaseDeck:
    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float)

    def apply_inverse(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        return np.eye(np.asarray(x).shape[-1])

    def hessian(self, x: np.ndarray) -> np.ndarray:
        """Second derivative tensor D2[l, m, n] = d^2 deck_l / dx_m dx_n."""
        d = np.asarray(x).shape[-1]
        return np.zeros((d, d, d))


@dataclass
class BaseTranslation(BaseDeck):
    offset: np.ndarray

    def apply(self, x):
        return np.asarray(x, dtype=float) + self.offset

    def apply_inverse(self, x):
        return np.asarray(x, dtype=float) - self.offset

    def jacobian(self, x):
        return np.eye(len(self.offset))

    def hessian(self, x):
        d = len(self.offset)
        return np.zeros((d, d, d))


@dataclass
class BaseMobius(BaseDeck):
    m: np.ndarray

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        a, b = self.m[0]
        c, d = self.m[1]
        z = x[..., 0] + 1j * x[..., 1]
        w = (a * z + b) / (c * z + d)
        return np.stack([w.real, w.imag], axis=-1)

    def apply_inverse(self, x):
        return BaseMobius(np.linalg.inv(self.m)).apply(x)

    def jacobian(self, x):
        a, b = self.m[0]
        c, d = self.m[1]
        z = complex(x[0], x[1])
        dz = 1.0 / (c * z + d) ** 2
        return np.array([[dz.real, -dz.imag], [dz.imag, dz.real]])

    def hessian(self, x):
        # holomorphic second derivative f'' = -2c/(cz+d)^3; the coordinate
        # Hessians follow from the Cauchy-Riemann equations
        c, d = self.m[1]
        z = complex(x[0], x[1])
        f2 = -2.0 * c / (c * z + d) ** 3
        hu = np.array([[f2.real, -f2.imag], [-f2.imag, -f2.real]])
        hv = np.array([[f2.imag, f2.real], [f2.real, -f2.imag]])
        return np.stack([hu, hv], axis=0)


# ---------------------------------------------------------------------------
# cover charts
# ---------------------------------------------------------------------------

class CoverChart:
    """Universal-cover coordinates, deck maps, and seeding for one model."""

    def __init__(self, model: ModelSpace, metric: MetricSpec):
        self.model = model
        self.metric = metric
        if isinstance(model, FlatTorus):
            self.dim = model.dim
        elif isinstance(model, (FuchsianSurface, WarpedCylinder)):
            self.dim = 2
        else:
            raise UnsupportedModel(f"no cover chart for {model.kind}")
        if isinstance(model, FuchsianSurface) and model.group is None:
            raise UnsupportedModel("Fuchsian model lacks explicit generators")

    # -- deck maps ----------------------------------------------------------

    def base_deck(self, cls: FreeHomotopyClass) -> BaseDeck:
        m = self.model
        if isinstance(m, FlatTorus):
            return BaseTranslation(m.basis @ np.array(cls.rep, dtype=float))
        if isinstance(m, WarpedCylinder):
            return BaseTranslation(np.array([0.0, 2.0 * math.pi * cls.rep[0]]))
        return BaseMobius(m.group.matrix_of_word(cls.rep))

    def phase_deck(self, cls: FreeHomotopyClass) -> PhaseDeck:
        m = self.model
        if isinstance(m, FlatTorus):
            off = m.basis @ np.array(cls.rep, dtype=float)
            return TranslationDeck(np.concatenate([off, [0.0]])
                                   if m.dim == 2 else off)
        if isinstance(m, WarpedCylinder):
            return PhaseDeck()  # theta is a wrapped angle in the flow chart
        return MobiusPhaseDeck(m.group.matrix_of_word(cls.rep))

    # -- coordinate wrapping -------------------------------------------------

    def wrap_diff(self, diff: np.ndarray) -> np.ndarray:
        m = self.model
        diff = np.asarray(diff, dtype=float)
        if isinstance(m, FlatTorus):
            frac = diff @ np.linalg.inv(m.basis).T
            frac -= np.rint(frac)
            return frac @ m.basis.T
        if isinstance(m, WarpedCylinder):
            out = np.array(diff)
            out[..., 1] = (out[..., 1] + math.pi) % (2 * math.pi) - math.pi
            return out
        return diff

    def reduce_point(self, x: np.ndarray) -> np.ndarray:
        m = self.model
        x = np.asarray(x, dtype=float)
        if isinstance(m, FlatTorus):
            frac = (x @ np.linalg.inv(m.basis).T) % 1.0
            return frac @ m.basis.T
        if isinstance(m, WarpedCylinder):
            out = np.array(x)
            out[..., 1] = out[..., 1] % (2 * math.pi)
            return out
        return x

    # -- seeding --------------------------------------------------------------

    def seed_nodes(self, cls: FreeHomotopyClass, n_nodes: int,
                   rng: np.random.Generator, noise: float = 0.05) -> np.ndarray:
        m = self.model
        t = np.arange(n_nodes) / n_nodes
        if isinstance(m, FlatTorus):
            x0 = m.basis @ rng.random(m.dim)
            off = m.basis @ np.array(cls.rep, dtype=float)
            base = x0[None, :] + t[:, None] * off[None, :]
            return base + self._smooth_noise(n_nodes, m.dim, rng, noise)
        if isinstance(m, WarpedCylinder):
            lo, hi = m.r_window
            r0 = lo + (hi - lo) * rng.random()
            th0 = 2 * math.pi * rng.random()
            base = np.column_stack([np.full(n_nodes, r0),
                                    th0 + t * 2 * math.pi * cls.rep[0]])
            base[:, 0] += self._smooth_noise(n_nodes, 1, rng, noise)[:, 0]
            return base
        # hyperbolic surface: sample the translation axis of the class word
        nodes = axis_nodes(m.group, cls, n_nodes)
        y = nodes[:, 1]
        pert = self._smooth_noise(n_nodes, 2, rng, noise)
        nodes = nodes + pert * y[:, None]
        nodes[:, 1] = np.maximum(nodes[:, 1], 1e-3)
        return nodes

    @staticmethod
    def _smooth_noise(n, d, rng, amp, modes: int = 4) -> np.ndarray:
        t = np.arange(n) / n
        out = np.zeros((n, d))
        for j in range(1, modes + 1):
            coeff = rng.standard_normal(d) * amp / j
            phase = 2 * math.pi * rng.random(d)
            out += np.sin(2 * math.pi * j * t[:, None] + phase) * coeff
        return out


def axis_nodes(group: FuchsianGroup, cls: FreeHomotopyClass,
               n_nodes: int) -> np.ndarray:
    """Sample the translation axis of the class word, deck-closing the loop."""
    root, n = power_decomposition(cls)
    m_root = group.matrix_of_word(root.rep)
    tr = float(np.trace(m_root))
    if abs(tr) <= 2.0:
        raise NotHyperbolicElement(f"|tr| = {abs(tr)} <= 2")
    ell_root = 2.0 * math.acosh(abs(tr) / 2.0)
    length = n * ell_root
    s = np.arange(n_nodes) / n_nodes * length

    a, b = m_root[0]
    c, d = m_root[1]
    if abs(c) < 1e-12:
        # axis is the vertical line through the finite fixed point b/(d-a)
        x_star = b / (d - a)
        sigma = 1.0 if abs(a) > 1.0 else -1.0
        return np.column_stack([np.full(n_nodes, x_star), np.exp(sigma * s)])
    evals, evecs = np.linalg.eig(m_root)
    i_att = int(np.argmax(np.abs(evals)))
    v_att, v_rep = evecs[:, i_att], evecs[:, 1 - i_att]
    x_att = float((v_att[0] / v_att[1]).real)
    x_rep = float((v_rep[0] / v_rep[1]).real)
    mcen = 0.5 * (x_att + x_rep)
    R = 0.5 * abs(x_att - x_rep)
    sigma = 1.0 if x_att > x_rep else -1.0
    return np.column_stack([mcen + R * np.tanh(sigma * s), R / np.cosh(s)])


def axis_phase(group: FuchsianGroup, cls: FreeHomotopyClass) -> np.ndarray:
    """Exact unit-bundle phase point on the class axis (top of the arc).

    At the apex of the axis semicircle the tangent is horizontal, so the
    direction angle is 0 or pi; on a vertical axis it is +-pi/2.
    """
    nodes = axis_nodes(group, cls, 4)
    x0, y0 = nodes[0]
    x1 = nodes[1][0]
    if abs(x1 - x0) < 1e-12:  # vertical axis
        phi = math.pi / 2 if nodes[1][1] > y0 else -math.pi / 2
    else:
        phi = 0.0 if x1 > x0 else math.pi
    return np.array([x0, y0, phi])


# ---------------------------------------------------------------------------
# discrete loops
# ---------------------------------------------------------------------------

@dataclass
class DiscreteLoop:
    """Polygonal class-representative loop in covering coordinates."""

    nodes: np.ndarray
    cls: FreeHomotopyClass
    energy: float


class LoopProblem:
    """Discrete loop energy with deck-twisted closure, and its derivatives."""

    def __init__(self, metric: MetricSpec, deck: BaseDeck, n_nodes: int, dim: int):
        self.metric = metric
        self.deck = deck
        self.n = n_nodes
        self.dim = dim

    def _chords(self, nodes):
        close = self.deck.apply(nodes[0])
        nxt = np.vstack([nodes[1:], close[None, :]])
        return nxt, nxt - nodes

    def energy(self, nodes: np.ndarray) -> float:
        nxt, delta = self._chords(nodes)
        G = self.metric.matrix(nodes) + self.metric.matrix(nxt)
        vals = 0.5 * np.einsum("kij,ki,kj->k", G, delta, delta)
        return float(self.n * np.sum(vals))

    def gradient(self, nodes: np.ndarray) -> np.ndarray:
        nxt, delta = self._chords(nodes)
        Ga = self.metric.matrix(nodes)
        Gb = self.metric.matrix(nxt)
        G = Ga + Gb
        dga = self.metric.dmatrix(nodes)   # (k, i, j, l) = d_l g_ij at node k
        dgb = self.metric.dmatrix(nxt)
        Gd = np.einsum("kij,kj->ki", G, delta)
        qa = 0.5 * np.einsum("kijl,ki,kj->kl", dga, delta, delta)
        qb = 0.5 * np.einsum("kijl,ki,kj->kl", dgb, delta, delta)
        left = -Gd + qa           # d E_k / d nodes[k]
        right = Gd + qb           # d E_k / d next-point of chord k
        grad = np.array(left)
        grad[1:] += right[:-1]
        J = self.deck.jacobian(nodes[0])
        grad[0] += J.T @ right[-1]
        return self.n * grad

    def hessian(self, nodes: np.ndarray) -> np.ndarray:
        """Analytic second derivative of the energy, (N d) x (N d)."""
        N, d = nodes.shape
        nxt, delta = self._chords(nodes)
        G = self.metric.matrix(nodes) + self.metric.matrix(nxt)
        Sa = self.metric.dmatrix(nodes)      # (k, i, j, l) = d_l g_ij
        Sb = self.metric.dmatrix(nxt)
        Ta = self.metric.d2matrix(nodes)     # (k, i, j, l, m) = d_l d_m g_ij
        Tb = self.metric.d2matrix(nxt)
        Pa = np.einsum("kljm,kj->klm", Sa, delta)
        Pb = np.einsum("kljm,kj->klm", Sb, delta)
        Qa = np.einsum("kijlm,ki,kj->klm", Ta, delta, delta)
        Qb = np.einsum("kijlm,ki,kj->klm", Tb, delta, delta)
        A = G - Pa - np.swapaxes(Pa, 1, 2) + 0.5 * Qa
        B = G + Pb + np.swapaxes(Pb, 1, 2) + 0.5 * Qb
        C = -G - Pb + np.swapaxes(Pa, 1, 2)

        H = np.zeros((N * d, N * d))
        idx = [np.arange(k * d, (k + 1) * d) for k in range(N)]
        for k in range(N - 1):
            ia, ib = idx[k], idx[k + 1]
            H[np.ix_(ia, ia)] += A[k]
            H[np.ix_(ib, ib)] += B[k]
            H[np.ix_(ia, ib)] += C[k]
            H[np.ix_(ib, ia)] += C[k].T
        # wrap chord: right endpoint is deck(x_0)
        J = self.deck.jacobian(nodes[0])
        D2 = self.deck.hessian(nodes[0])
        k = N - 1
        ia, i0 = idx[k], idx[0]
        # r = dE_k / dx_b at the deck image, feeding the deck curvature term
        r = (np.einsum("ij,j->i", G[k], delta[k])
             + 0.5 * np.einsum("ijl,i,j->l", Sb[k], delta[k], delta[k]))
        H[np.ix_(ia, ia)] += A[k]
        H[np.ix_(i0, i0)] += J.T @ B[k] @ J + np.einsum("l,lmn->mn", r, D2)
        H[np.ix_(ia, i0)] += C[k] @ J
        H[np.ix_(i0, ia)] += (C[k] @ J).T
        return self.n * H

    def hessian_fd(self, nodes: np.ndarray, h: float = 1e-6) -> np.ndarray:
        """Finite-difference Hessian (cross-validation of the analytic one)."""
        flat = nodes.ravel()
        m = flat.size
        H = np.empty((m, m))
        for j in range(m):
            dx = np.zeros(m)
            dx[j] = h * (1.0 + abs(flat[j]))
            gp = self.gradient((flat + dx).reshape(nodes.shape)).ravel()
            gm = self.gradient((flat - dx).reshape(nodes.shape)).ravel()
            H[:, j] = (gp - gm) / (2.0 * dx[j])
        return 0.5 * (H + H.T)

    def node_residual(self, nodes: np.ndarray) -> float:
        """Max-norm discrete geodesic-equation residual per node."""
        return float(np.max(np.abs(self.gradient(nodes)))) / (2.0 * self.n)

    def chord_speeds(self, nodes: np.ndarray) -> np.ndarray:
        nxt, delta = self._chords(nodes)
        G = 0.5 * (self.metric.matrix(nodes) + self.metric.matrix(nxt))
        return np.sqrt(np.einsum("kij,ki,kj->k", G, delta, delta))

    def length(self, nodes: np.ndarray) -> float:
        return float(np.sum(self.chord_speeds(nodes)))

    def length_refined(self, nodes: np.ndarray) -> float:
        """Richardson-extrapolated chordal length, error O(N^-4)."""
        lN = self.length(nodes)
        half = LoopProblem(self.metric, self.deck, self.n // 2, self.dim)
        lH = half.length(nodes[::2])
        return (4.0 * lN - lH) / 3.0


def _sobolev_precondition(grad: np.ndarray, n: int) -> np.ndarray:
    """H^1-style smoothing of the loop gradient via the cyclic Laplacian."""
    freqs = 2.0 - 2.0 * np.cos(2.0 * math.pi * np.arange(n) / n)
    denom = 8.0 * math.pi**2 / n + 2.0 * n * freqs
    ghat = np.fft.fft(grad, axis=0)
    return np.real(np.fft.ifft(ghat / denom[:, None], axis=0))


def descend_loop(problem: LoopProblem, nodes: np.ndarray,
                 max_iter: int = 400, gtol: float = 1e-5) -> np.ndarray:
    """Energy descent with backtracking line search (energy never increases)."""
    x = np.array(nodes, dtype=float)
    e = problem.energy(x)
    for _ in range(max_iter):
        g = problem.gradient(x)
        if np.max(np.abs(g)) / (2 * problem.n) < gtol:
            break
        direction = _sobolev_precondition(g, problem.n)
        slope = float(np.sum(g * direction))
        if slope <= 0:
            direction = g / (2 * problem.n)
            slope = float(np.sum(g * direction))
        t = 1.0
        for _ in range(40):
            x_try = x - t * direction
            e_try = problem.energy(x_try)
            if e_try <= e - 1e-4 * t * slope:
                x, e = x_try, e_try
                break
            t *= 0.5
        else:
            break
    return x


def redistribute_nodes(problem: LoopProblem, nodes: np.ndarray) -> np.ndarray:
    """Resample the loop to uniform metric chord length.

    This moves the loop along the reparametrization valley toward the
    uniform-speed gauge without changing its geometry.  Evaluation uses
    Catmull-Rom interpolation through the deck-extended node sequence, so
    the resampling error is O(h^4) and does not limit Newton refinement.
    """
    from .loops import eval_extended
    speeds = problem.chord_speeds(nodes)
    cum = np.concatenate([[0.0], np.cumsum(speeds)])
    total = cum[-1]
    targets = np.arange(problem.n) / problem.n * total
    k = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, problem.n - 1)
    u = (k + (targets - cum[k]) / np.maximum(speeds[k], 1e-300)) / problem.n
    ext = np.vstack([problem.deck.apply_inverse(nodes), nodes,
                     problem.deck.apply(nodes)])
    return eval_extended(ext, u)


def _tangent_field(problem: LoopProblem, nodes: np.ndarray) -> np.ndarray:
    """Unit vector along the loop's reparametrization direction."""
    nxt, delta = problem._chords(nodes)
    prev = np.roll(delta, 1, axis=0)
    t = delta + prev
    t = t.ravel()
    return t / np.linalg.norm(t)


def _phase_align(problem: LoopProblem, nodes: np.ndarray) -> np.ndarray:
    """Minimize the energy over the cyclic sampling phase.

    The discrete energy oscillates with period one node spacing along the
    reparametrization circle (node-versus-curve alignment); a golden-section
    search over the fractional roll removes this tangential residual.
    """
    from .loops import eval_extended
    ext = np.vstack([problem.deck.apply_inverse(nodes), nodes,
                     problem.deck.apply(nodes)])
    base = np.arange(problem.n) / problem.n

    def shifted(d: float) -> np.ndarray:
        return eval_extended(ext, base + d / problem.n)

    def e_of(d: float) -> float:
        return problem.energy(shifted(d))

    lo, hi = -0.75, 0.75
    phi = 0.5 * (math.sqrt(5.0) - 1.0)
    x1 = hi - phi * (hi - lo)
    x2 = lo + phi * (hi - lo)
    f1, f2 = e_of(x1), e_of(x2)
    for _ in range(40):
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - phi * (hi - lo)
            f1 = e_of(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + phi * (hi - lo)
            f2 = e_of(x2)
    best = x1 if f1 <= f2 else x2
    out = shifted(best)
    return out if e_of(best) < problem.energy(nodes) else nodes


def _perp_newton(problem: LoopProblem, x: np.ndarray, tol: float,
                 max_iter: int) -> tuple[np.ndarray, float]:
    """Newton steps restricted to the complement of the soft tangent mode."""
    res = problem.node_residual(x)
    for _ in range(max_iter):
        if res < tol:
            break
        g = problem.gradient(x).ravel()
        H = problem.hessian(x)
        w, V = np.linalg.eigh(H)
        that = _tangent_field(problem, x)
        overlap = np.abs(V.T @ that)
        wmax = float(np.max(np.abs(w)))
        keep = (np.abs(w) > 1e-9 * wmax) & (overlap < 0.5)
        gv = V.T @ g
        coef = np.zeros_like(w)
        coef[keep] = -gv[keep] / w[keep]
        step = V @ coef
        lam = 1.0
        improved = False
        for _ in range(12):
            x_try = x + lam * step.reshape(x.shape)
            res_try = problem.node_residual(x_try)
            if res_try < res:
                x, res = x_try, res_try
                improved = True
                break
            lam *= 0.5
        if not improved:
            break
    return x, res


def newton_refine_loop(problem: LoopProblem, nodes: np.ndarray,
                       tol: float = 5e-9, max_iter: int = 30,
                       rounds: int = 4) -> np.ndarray:
    """Newton iteration on the discrete geodesic equations.

    The reparametrization direction is a soft, curved valley of the energy,
    along which the quadratic model is useless.  Each round runs Newton in
    the complement of that mode (modes overlapping the loop tangent are
    excluded, as are numerically null family modes), then re-fixes the
    tangential gauge by uniform-speed resampling plus a cyclic sampling-
    phase alignment; the gauge point is accepted only if the following
    perpendicular pass improves the residual.
    """
    x = redistribute_nodes(problem, np.array(nodes, dtype=float))
    x, res = _perp_newton(problem, x, tol, max_iter)
    for _ in range(rounds):
        if res < tol:
            return x
        x_g = _phase_align(problem, redistribute_nodes(problem, x))
        x_g, res_g = _perp_newton(problem, x_g, tol, max_iter)
        if res_g < res:
            x, res = x_g, res_g
        else:
            break
    if res >= tol:
        raise NoConvergence(f"node residual {res:.3e} above {tol}")
    return x


# ---------------------------------------------------------------------------
# geodesic strings
# ---------------------------------------------------------------------------

@dataclass
class GeodesicString:
    """A closed geodesic string: discrete loop, length, class, Morse data."""

    nodes: np.ndarray          # covering coordinates, unit-speed spacing
    cls: FreeHomotopyClass
    length: float
    morse_index: Optional[int]
    backend: str               # "algebraic" | "variational"
    residual: float
    degenerate_family: bool = False
    zero_modes: int = 1
    chart: Optional[CoverChart] = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def reduced_nodes(self) -> np.ndarray:
        if self.chart is None:
            return self.nodes
        return self.chart.reduce_point(self.nodes)


def _spectrum_data(problem: LoopProblem, nodes: np.ndarray,
                   gap_factor: float = 100.0):
    """(morse_index, zero_mode_count, eigenvalues) of the energy Hessian.

    The reparametrization zero mode is identified geometrically, as the
    eigenvector with maximal overlap with the loop tangent field; further
    near-null modes (relative to it) mark a degenerate Morse-Bott family.
    SpectralGapTooSmall is raised only when the identification is ambiguous:
    weak tangent overlap together with another eigenvalue within the stated
    separation factor of the candidate zero mode.
    """
    H = problem.hessian(nodes)
    w, V = np.linalg.eigh(H)
    that = _tangent_field(problem, nodes)
    overlap = np.abs(V.T @ that)
    i_rep = int(np.argmax(overlap))
    lam_rep = abs(float(w[i_rep]))
    scale = float(np.max(np.abs(w)))
    others = np.ones(len(w), dtype=bool)
    others[i_rep] = False
    family_band = max(10.0 * lam_rep, 1e-10 * scale)
    n_family = int(np.sum(np.abs(w[others]) < family_band))
    if n_family >= 1:
        return None, 1 + n_family, w
    if overlap[i_rep] < 0.9 and float(np.min(np.abs(w[others]))) < gap_factor * lam_rep:
        raise SpectralGapTooSmall(
            f"zero mode at {lam_rep:.3e} (tangent overlap {overlap[i_rep]:.2f}) "
            f"not separated by factor {gap_factor}")
    negatives = int(np.sum(w[others] < 0))
    return negatives, 1, w


def hyperbolic_closed_geodesic(group: FuchsianGroup, cls,
                               n_nodes: int = 256) -> GeodesicString:
    """Exact closed geodesic on a hyperbolic surface from the trace formula.

    The string's length is n * 2 arccosh(|tr| / 2) for the class written as
    the n-th power of an indivisible root word; the loop is the projected
    translation axis traversed n times, and minimizing geodesics on
    negatively curved surfaces have Morse index 0.
    """
    model = FuchsianSurface(group)
    cls = canonical_class(cls, model)
    if cls.is_constant():
        raise ConstantClass("constant class has no geodesic string")
    root, n = power_decomposition(cls)
    length = n * group.translation_length(root.rep)
    nodes = axis_nodes(group, cls, n_nodes)
    metric = halfplane_metric()
    chart = CoverChart(model, metric)
    problem = LoopProblem(metric, chart.base_deck(cls), n_nodes, 2)
    res = problem.node_residual(nodes)
    return GeodesicString(nodes=nodes, cls=cls, length=length, morse_index=0,
                          backend="algebraic", residual=res, chart=chart)


def string_distance(s1: GeodesicString, s2: GeodesicString,
                    chart: CoverChart) -> float:
    """Min-over-phase-shift loop distance plus the relative length gap.

    Torus-like charts compare reduced loops with lattice wrapping; on the
    hyperbolic cover the closure is a Mobius deck map, so the second loop is
    deck-extended before interpolation.
    """
    from .loops import min_shift_distance
    dlen = abs(s1.length - s2.length) / max(s1.length, s2.length)
    if isinstance(chart.model, FuchsianSurface):
        deck = chart.base_deck(s2.cls)
        ext_b = np.vstack([deck.apply_inverse(s2.nodes), s2.nodes,
                           deck.apply(s2.nodes)])
        d = min_shift_distance(s1.nodes, ext_b, None, extended_b=True)
    else:
        a = chart.reduce_point(s1.nodes)
        b = chart.reduce_point(s2.nodes)
        d = min_shift_distance(a, b, chart.wrap_diff)
    return max(d, dlen)


def variational_closed_geodesics(metric: MetricSpec, model: ModelSpace, cls,
                                 n_seeds: int = 16, tol: float = 5e-9,
                                 n_nodes: int = 256,
                                 rng: Optional[np.random.Generator] = None,
                                 noise: float = 0.05,
                                 extra_seeds: Optional[Sequence[np.ndarray]] = None,
                                 ) -> tuple[list[GeodesicString], list[str]]:
    """Discrete-energy search for all class geodesics; returns (strings, failures).

    Descent runs from class-representative seed loops with random transverse
    noise; converged loops are deduplicated up to reparametrization.  For
    warped cylinders, exact critical circles of the warp profile are seeded
    directly.
    """
    rng = rng or np.random.default_rng(0)
    cls = canonical_class(cls, model)
    if cls.is_constant():
        raise ConstantClass("constant class")
    _, n_cover = power_decomposition(cls)
    if n_cover > 1:
        # keep the per-pass resolution of the root problem: the sampling-
        # phase residual floor grows with the chord length, not with N
        n_nodes = min(n_nodes * n_cover, 1024)
    chart = CoverChart(model, metric)
    problem = LoopProblem(metric, chart.base_deck(cls), n_nodes, chart.dim)

    seeds: list[np.ndarray] = []
    if isinstance(model, WarpedCylinder):
        seeds.extend(_cylinder_circle_seeds(model, cls, n_nodes))
    if extra_seeds:
        seeds.extend(np.asarray(s, dtype=float) for s in extra_seeds)
    while len(seeds) < n_seeds:
        seeds.append(chart.seed_nodes(cls, n_nodes, rng, noise))

    strings: list[GeodesicString] = []
    failures: list[str] = []
    for k, seed in enumerate(seeds[:max(n_seeds, len(seeds))]):
        try:
            x = descend_loop(problem, seed)
            x = newton_refine_loop(problem, x, tol=tol)
        except NoConvergence as err:
            failures.append(f"seed {k}: {err}")
            continue
        try:
            morse, n_zero, _ = _spectrum_data(problem, x)
        except SpectralGapTooSmall as err:
            failures.append(f"seed {k}: {err}")
            continue
        length = problem.length_refined(x)
        s = GeodesicString(nodes=x, cls=cls, length=length, morse_index=morse,
                           backend="variational",
                           residual=problem.node_residual(x),
                           degenerate_family=n_zero >= 2, zero_modes=n_zero,
                           chart=chart)
        if all(string_distance(s, other, chart) >= 1e-5 for other in strings):
            strings.append(s)
    if not strings:
        raise AllSeedsFailed(f"{len(failures)} seeds failed: {failures[:3]}")
    return strings, failures


def _cover_string(root_string: GeodesicString, cls: FreeHomotopyClass,
                  n: int, metric: MetricSpec, model: ModelSpace) -> GeodesicString:
    """n-fold cover of a root string, concatenated through deck powers."""
    chart = root_string.chart
    deck = chart.base_deck(root_string.cls)
    parts = [root_string.nodes]
    cur = root_string.nodes
    for _ in range(1, n):
        cur = deck.apply(cur)
        parts.append(cur)
    nodes = np.vstack(parts)
    problem = LoopProblem(metric, chart.base_deck(cls), len(nodes), chart.dim)
    res = problem.node_residual(nodes)
    morse, n_zero, _ = _spectrum_data(problem, nodes)
    return GeodesicString(nodes=nodes, cls=cls, length=n * root_string.length,
                          morse_index=morse, backend=root_string.backend,
                          residual=res, degenerate_family=n_zero >= 2,
                          zero_modes=n_zero, chart=chart)


def _cylinder_circle_seeds(model: WarpedCylinder, cls: FreeHomotopyClass,
                           n_nodes: int) -> list[np.ndarray]:
    """Exact circle loops at critical radii of the warp profile."""
    lo, hi = model.r_window
    rs = np.linspace(lo, hi, 2001)
    dw = model.profile.dw(rs)
    seeds = []
    t = np.arange(n_nodes) / n_nodes * 2 * math.pi * cls.rep[0]
    for i in range(len(rs) - 1):
        if dw[i] == 0.0 or dw[i] * dw[i + 1] < 0:
            a, b = rs[i], rs[i + 1]
            for _ in range(80):
                mid = 0.5 * (a + b)
                if model.profile.dw(a) * model.profile.dw(mid) <= 0:
                    b = mid
                else:
                    a = mid
            r_star = 0.5 * (a + b)
            if float(model.profile.d2w(r_star)) > 0:  # minima only: stable waists
                seeds.append(np.column_stack([np.full(n_nodes, r_star), t]))
    return seeds


def morse_index(string: GeodesicString, metric: MetricSpec,
                model: ModelSpace, polish_tol: float = 5e-9) -> int:
    """Count of negative energy-Hessian eigenvalues, excluding the S^1 mode.

    Strings are Newton-polished to discrete stationarity first (algebraic
    strings are sampled from the smooth geodesic, not the discrete one).
    """
    chart = string.chart or CoverChart(model, metric)
    problem = LoopProblem(metric, chart.base_deck(string.cls),
                          string.n_nodes, chart.dim)
    nodes = string.nodes
    if problem.node_residual(nodes) >= polish_tol:
        nodes = newton_refine_loop(problem, nodes, tol=polish_tol)
    morse, n_zero, _ = _spectrum_data(problem, nodes)
    if morse is None:
        raise SpectralGapTooSmall(f"{n_zero} zero modes: degenerate family")
    return morse


def lift_to_unit_bundle(string: GeodesicString, metric: MetricSpec,
                        model: ModelSpace, tol: float = 1e-10
                        ) -> ClosedOrbitRecord:
    """Canonical lift (x, xdot) of the string, re-verified by shooting.

    The record's period equals the length, its class carries the lifted
    flag, and its multiplicity is the class covering number.
    """
    from .orbits import NewtonDiverged, _transverse_multipliers, _wrap_diff

    flow = geodesic_field(metric, model)
    chart = string.chart or CoverChart(model, metric)
    nodes = string.nodes
    seed = flow.phase_of(nodes[0], nodes[1] - nodes[0])
    deck = chart.phase_deck(string.cls)
    try:
        rec = find_closed_orbit(flow.field, seed, tol=tol, deck=deck,
                                period_hint=string.length)
    except NewtonDiverged:
        # degenerate transverse direction (flat family): unrefined lift
        end, M = integrate_with_monodromy(flow.field, seed, string.length, tol)
        full = deck.inverse_jacobian(end) @ M
        mults, flow_eig = _transverse_multipliers(full, flow.field(seed))
        res = float(np.max(np.abs(_wrap_diff(deck.inverse(end) - seed,
                                             flow.field.periodic))))
        traj = integrate_flow(flow.field, seed, string.length, tol)
        ts = np.linspace(0, string.length, 360, endpoint=False)
        loop = np.array([flow.field.reduce(p)[0] for p in traj.interpolate(ts)])
        rec = ClosedOrbitRecord(loop=loop, period=string.length,
                                multiplicity=1, multipliers=mults, index=None,
                                residual=res, monodromy=full, start=seed,
                                deck=None, flow_eigenvalue=flow_eig)
    _, n = power_decomposition(string.cls)
    rec.cls = string.cls.lift()
    rec.multiplicity = n
    return rec


def geodesic_strings(metric: MetricSpec, model: ModelSpace, cls,
                     n_seeds: int = 64, n_nodes: int = 256,
                     rng: Optional[np.random.Generator] = None,
                     tol: float = 5e-9) -> list[GeodesicString]:
    """All class geodesic strings, via the algebraic backend when available.

    The returned set is the artifact's working stand-in for the space of
    class geodesic strings modulo reparametrization; degenerate families are
    flagged on the strings, never silently averaged.
    """
    cls = canonical_class(cls, model)
    if not is_boundary_incompressible(cls, model):
        raise ConstantClass(f"class {cls} is not boundary incompressible")
    if (isinstance(model, FuchsianSurface) and model.group is not None
            and metric.kind == "riemannian" and metric.label == "hyperbolic"
            and not metric.perturbation):
        return [hyperbolic_closed_geodesic(model.group, cls, n_nodes)]
    strings, _ = variational_closed_geodesics(
        metric, model, cls, n_seeds=n_seeds, n_nodes=n_nodes, rng=rng, tol=tol)
    return strings


@dataclass
class TautnessReport:
    """Heuristic compactness evidence: numerical search cannot prove it."""

    lengths: tuple[float, ...]
    spread: float
    seeds_converged: int
    seeds_total: int
    verdict: str               # "consistent-with-taut" | "family-detected"
    note: str
    window: Optional[tuple[float, float]] = None


def tautness_certificate(metric: MetricSpec, model: ModelSpace, cls,
                         search_budget: int = 24,
                         rng: Optional[np.random.Generator] = None
                         ) -> TautnessReport:
    """Search-based evidence that the class geodesic set is compact."""
    rng = rng or np.random.default_rng(0)
    cls = canonical_class(cls, model)
    if (isinstance(model, FuchsianSurface) and model.group is not None
            and metric.label == "hyperbolic" and not metric.perturbation):
        s = hyperbolic_closed_geodesic(model.group, cls)
        return TautnessReport((s.length,), 0.0, 1, 1, "consistent-with-taut",
                              "unique minimizing string (negative curvature)")
    strings, failures = variational_closed_geodesics(
        metric, model, cls, n_seeds=search_budget, rng=rng)
    lengths = tuple(sorted(s.length for s in strings))
    spread = max(lengths) - min(lengths)
    family = any(s.degenerate_family for s in strings)
    window = model.r_window if isinstance(model, WarpedCylinder) else None
    verdict = "family-detected" if family else "consistent-with-taut"
    note = ("compact family detected: still consistent with compactness"
            if family else
            "all converged seeds landed in the reported string set")
    if window is not None:
        note += f"; search window r in {window}"
    return TautnessReport(lengths, spread, search_budget - len(failures),
                          search_budget, verdict, note, window)
