"""Closed-orbit detection, Floquet data, fixed-point indices, orbit sums.

Orbit closure is solved by damped Newton shooting on the full
(section point, period) system; closure across deck transformations
(lattice windings, Mobius identifications on the hyperbolic cover) is
handled by wrapping angle coordinates and by explicit deck maps.
Records are immutable outputs; searches from distinct seeds may run
concurrently, and the final rational orbit sum is a deterministic fold.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field as dfield
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (AmbiguousMultiplicity, DegenerateUnsupported,
                     IllConditioned, IndexUndefined, NewtonDiverged, NoReturn,
                     TangentialCrossing)
from .flows import Trajectory, VectorFieldSpec, integrate_flow, integrate_with_monodromy
from .models import FreeHomotopyClass, power_decomposition

# ---------------------------------------------------------------------------
# deck transformations on phase charts
# ---------------------------------------------------------------------------

class PhaseDeck:
    """Identity deck; base class for phase-space deck transformations."""

    def apply(self, p: np.ndarray) -> np.ndarray:
        return np.array(p, dtype=float)

    def inverse(self, p: np.ndarray) -> np.ndarray:
        return np.array(p, dtype=float)

    def inverse_jacobian(self, p: np.ndarray) -> np.ndarray:
        return np.eye(len(p))


@dataclass
class TranslationDeck(PhaseDeck):
    """Deck translation by a fixed offset in chart coordinates."""

    offset: np.ndarray

    def apply(self, p):
        return np.asarray(p, dtype=float) + self.offset

    def inverse(self, p):
        return np.asarray(p, dtype=float) - self.offset

    def inverse_jacobian(self, p):
        return np.eye(len(p))


@dataclass
class MobiusPhaseDeck(PhaseDeck):
    """SL(2,R) deck action on the (x, y, phi) chart of the hyperbolic cover.

    z' = (az+b)/(cz+d) and phi' = phi - 2 arg(cz + d); the derivative of the
    Mobius map acts as complex multiplication by 1/(cz+d)^2.
    """

    m: np.ndarray

    def _act(self, mat, p):
        a, b = mat[0]
        c, d = mat[1]
        z = complex(p[0], p[1])
        w = c * z + d
        z2 = (a * z + b) / w
        phi = p[2] - 2.0 * cmath.phase(w)
        return np.array([z2.real, z2.imag, phi])

    def apply(self, p):
        return self._act(self.m, p)

    def inverse(self, p):
        return self._act(np.linalg.inv(self.m), p)

    def inverse_jacobian(self, p):
        mi = np.linalg.inv(self.m)
        c, d = mi[1]
        z = complex(p[0], p[1])
        w = c * z + d
        dz = 1.0 / (w * w)  # complex derivative of the Mobius map
        J = np.zeros((3, 3))
        J[0, 0], J[0, 1] = dz.real, -dz.imag
        J[1, 0], J[1, 1] = dz.imag, dz.real
        cw = c / w
        J[2, 0] = -2.0 * cw.imag
        J[2, 1] = -2.0 * cw.real
        J[2, 2] = 1.0
        return J


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

@dataclass
class ClosedOrbitRecord:
    """A closed orbit string: loop samples, period, Floquet data, index.

    ``multipliers`` are the transverse Floquet multipliers (the single unit
    flow-direction eigenvalue is removed); ``index`` is None while the
    fixed-point index is degenerate or not yet computed.
    """

    loop: np.ndarray                   # (n_samples, dim), reduced coordinates
    period: float
    multiplicity: int
    multipliers: np.ndarray            # complex, length dim-1
    index: Optional[int]
    residual: float
    cls: Optional[FreeHomotopyClass] = None
    monodromy: Optional[np.ndarray] = None
    winding: Optional[np.ndarray] = None
    start: Optional[np.ndarray] = None
    deck: Optional[PhaseDeck] = None
    flow_eigenvalue: float = 1.0

    @property
    def dim(self) -> int:
        return self.loop.shape[1]

    @property
    def is_degenerate(self) -> bool:
        return bool(np.any(np.abs(self.multipliers - 1.0) < 1e-6))

    def to_dict(self) -> dict:
        return {
            "period": self.period,
            "multiplicity": self.multiplicity,
            "multipliers": [[z.real, z.imag] for z in self.multipliers],
            "index": self.index,
            "residual": self.residual,
            "class": str(self.cls) if self.cls is not None else None,
        }


@dataclass
class FullerIndexResult:
    """Exact rational orbit sum with its contribution ledger."""

    value: Fraction
    contributions: tuple[tuple[int, int, int], ...]  # (orbit position, i, m)
    convention: str

    def __str__(self) -> str:
        return f"{self.value.numerator}/{self.value.denominator}"


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _wrap_diff(diff: np.ndarray, periodic) -> np.ndarray:
    out = np.array(diff, dtype=float)
    for idx, period in periodic:
        out[..., idx] = (out[..., idx] + period / 2.0) % period - period / 2.0
    return out


@dataclass
class Section:
    """Affine hyperplane {x : normal . (x - point) = 0}."""

    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=float)
        n = np.asarray(self.normal, dtype=float)
        self.normal = n / np.linalg.norm(n)

    def value(self, x: np.ndarray) -> float:
        return float(self.normal @ (x - self.point))

    def basis(self) -> np.ndarray:
        """Orthonormal basis of the hyperplane, shape (dim, dim-1)."""
        d = len(self.point)
        q, _ = np.linalg.qr(np.column_stack(
            [self.normal, np.eye(d)[:, :d]]))
        return q[:, 1:d]


def _closure_residual(fld, deck, section, y, T, tol) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Residual vector, endpoint, and monodromy of the shooting system."""
    end, M = integrate_with_monodromy(fld, y, T, tol)
    pulled = deck.inverse(end)
    res = _wrap_diff(pulled - y, fld.periodic)
    return res, end, M


def find_closed_orbit(fld: VectorFieldSpec, seed: np.ndarray,
                      section: Optional[Section] = None,
                      tol: float = 1e-10,
                      deck: Optional[PhaseDeck] = None,
                      t_max: float = 100.0,
                      period_hint: Optional[float] = None,
                      newton_max: int = 40,
                      loop_samples: int = 360) -> ClosedOrbitRecord:
    """Newton shooting for a closed orbit through the section near the seed.

    The seed's trajectory must cross the section transversally; closure is
    measured after pulling back by the deck map and wrapping angle
    coordinates, so lattice windings need no explicit deck.
    """
    seed = np.asarray(seed, dtype=float)
    deck = deck or PhaseDeck()
    if section is None:
        f0 = fld(seed)
        section = Section(seed, f0 / np.linalg.norm(f0))

    candidates = []
    if period_hint is not None:
        candidates.append((float(period_hint), seed))
    else:
        traj = integrate_flow(fld, seed, t_max, tol=max(tol, 1e-9))
        vals = np.array([section.normal @ (_wrap_diff(deck.inverse(s) - section.point,
                                                      fld.periodic))
                         for s in traj.states])
        for k in range(1, len(vals)):
            if vals[k - 1] < 0.0 <= vals[k] and traj.times[k] > 10 * tol:
                # bisect the bracketing interval on the interpolated trajectory
                a, b = traj.times[k - 1], traj.times[k]
                for _ in range(60):
                    m = 0.5 * (a + b)
                    x = traj.interpolate([m])[0]
                    v = section.normal @ _wrap_diff(deck.inverse(x) - section.point,
                                                    fld.periodic)
                    if v < 0:
                        a = m
                    else:
                        b = m
                tc = 0.5 * (a + b)
                xc = traj.interpolate([tc])[0]
                dist = float(np.max(np.abs(_wrap_diff(deck.inverse(xc) - seed,
                                                      fld.periodic))))
                candidates.append((tc, seed, dist))
        if not candidates:
            raise NoReturn(f"no section re-crossing within t_max = {t_max}")
        candidates.sort(key=lambda c: c[2])
        candidates = [(c[0], c[1]) for c in candidates]

    last_err = None
    for T0, y0 in candidates[:4]:
        try:
            return _newton_polish(fld, deck, section, y0, T0, tol,
                                  newton_max, loop_samples)
        except (NewtonDiverged, TangentialCrossing) as err:
            last_err = err
    raise last_err if last_err is not None else NoReturn("no candidate converged")


def _newton_polish(fld, deck, section, y0, T0, tol, newton_max, loop_samples):
    n = fld.dim
    y, T = np.array(y0, dtype=float), float(T0)
    res, end, M = _closure_residual(fld, deck, section, y, T, tol)
    fval = np.concatenate([res, [section.value(y)]])
    for _ in range(newton_max):
        err = float(np.max(np.abs(fval)))
        if err < tol:
            break
        Dinv = deck.inverse_jacobian(end)
        fT = fld(end)
        J = np.zeros((n + 1, n + 1))
        J[:n, :n] = Dinv @ M - np.eye(n)
        J[:n, n] = Dinv @ fT
        J[n, :n] = section.normal
        step, *_ = np.linalg.lstsq(J, -fval, rcond=1e-12)
        lam = 1.0
        for _ in range(8):  # damping: halve on residual increase
            y_try = y + lam * step[:n]
            T_try = T + lam * step[n]
            if T_try <= 0:
                lam *= 0.5
                continue
            res_t, end_t, M_t = _closure_residual(fld, deck, section, y_try, T_try, tol)
            f_try = np.concatenate([res_t, [section.value(y_try)]])
            if np.max(np.abs(f_try)) < err:
                y, T, res, end, M, fval = y_try, T_try, res_t, end_t, M_t, f_try
                break
            lam *= 0.5
        else:
            raise NewtonDiverged(f"damping failed at residual {err:.3e}")
    else:
        raise NewtonDiverged(f"no convergence after {newton_max} iterations")

    f_here = fld(y)
    fn = np.linalg.norm(f_here)
    if abs(section.normal @ f_here) < 1e-8 * fn:
        raise TangentialCrossing("crossing is not transverse")
    if T <= 0:
        raise NewtonDiverged("converged to nonpositive period")

    residual = float(np.max(np.abs(res)))
    full_M = deck.inverse_jacobian(end) @ M
    mults, flow_eig = _transverse_multipliers(full_M, f_here)

    traj = integrate_flow(fld, y, T, tol)
    ts = np.linspace(0.0, T, loop_samples, endpoint=False)
    loop_raw = traj.interpolate(ts)
    loop = np.array([fld.reduce(p)[0] for p in loop_raw])
    end_raw = traj.endpoint
    winding = np.zeros(n, dtype=int)
    for idx, period in fld.periodic:
        winding[idx] = int(round((end_raw[idx] - y[idx]) / period))

    mult = _loop_multiplicity(loop, fld.periodic)
    stored_deck = None if type(deck) is PhaseDeck else deck
    return ClosedOrbitRecord(loop=loop, period=T, multiplicity=mult,
                             multipliers=mults, index=None, residual=residual,
                             monodromy=full_M, winding=winding, start=y,
                             deck=stored_deck, flow_eigenvalue=flow_eig)


def _transverse_multipliers(M: np.ndarray, flow_dir: np.ndarray) -> tuple[np.ndarray, float]:
    """Eigenvalues of the monodromy on the quotient by the flow direction."""
    n = len(flow_dir)
    f = flow_dir / np.linalg.norm(flow_dir)
    q, _ = np.linalg.qr(np.column_stack([f, np.eye(n)[:, : n]]))
    B = np.column_stack([f, q[:, 1:n]])
    C = np.linalg.solve(B, M @ B)
    flow_eig = float(C[0, 0])
    if abs(flow_eig - 1.0) > 1e-4:
        raise IllConditioned(
            f"flow-direction eigenvalue {flow_eig} not within 1e-4 of 1")
    trans = C[1:, 1:]
    return np.linalg.eigvals(trans), flow_eig


def floquet_multipliers(fld: VectorFieldSpec, orbit: ClosedOrbitRecord,
                        tol: float = 1e-10) -> np.ndarray:
    """Transverse Floquet multipliers, recomputed from the variational flow."""
    if orbit.residual > 1e-8:
        raise NewtonDiverged(f"orbit residual {orbit.residual} too large")
    if orbit.monodromy is not None:
        return orbit.multipliers
    start = orbit.start if orbit.start is not None else orbit.loop[0]
    end, M = integrate_with_monodromy(fld, start, orbit.period, tol)
    deck = orbit.deck or PhaseDeck()
    full = deck.inverse_jacobian(end) @ M
    mults, _ = _transverse_multipliers(full, fld(start))
    return mults


# ---------------------------------------------------------------------------
# fixed point index
# ---------------------------------------------------------------------------

def winding_degree(displacement: Callable[[np.ndarray], np.ndarray],
                   radius: float, n_samples: int = 720,
                   center: Optional[np.ndarray] = None) -> int:
    """Brouwer degree of a planar map about 0 on the circle of given radius.

    ``displacement`` maps (n, 2) sample points to (n, 2) values; the degree
    is the winding number of the image curve around the origin.
    """
    center = np.zeros(2) if center is None else np.asarray(center, dtype=float)
    angles = np.linspace(0.0, 2.0 * math.pi, n_samples, endpoint=False)
    pts = center + radius * np.column_stack([np.cos(angles), np.sin(angles)])
    w = np.asarray(displacement(pts), dtype=float)
    if np.min(np.hypot(w[:, 0], w[:, 1])) == 0.0:
        raise DegenerateUnsupported("displacement vanishes on the test circle")
    th = np.arctan2(w[:, 1], w[:, 0])
    dth = np.diff(np.append(th, th[0]))
    dth = (dth + math.pi) % (2.0 * math.pi) - math.pi
    return int(round(float(np.sum(dth)) / (2.0 * math.pi)))


def index_from_multipliers(multipliers: np.ndarray, convention: int = 1,
                           degeneracy_tol: float = 1e-6) -> int:
    """convention * sign det(I - dP) from the transverse multipliers."""
    prod = complex(1.0, 0.0)
    for lam in multipliers:
        if abs(lam - 1.0) < degeneracy_tol:
            raise DegenerateUnsupported("unit multiplier: index undefined")
        prod *= (1.0 - lam)
    if abs(prod.imag) > 1e-6 * abs(prod):
        raise DegenerateUnsupported("index product is not real")
    return convention * (1 if prod.real > 0 else -1)


def fixed_point_index(orbit: ClosedOrbitRecord, convention: int = 1,
                      fld: Optional[VectorFieldSpec] = None,
                      degree_radius: float = 1e-3,
                      degree_samples: int = 720) -> int:
    """Fixed-point index of the return map at the orbit.

    Nondegenerate: convention * sign det(I - dP).  Degenerate with a
    2-dimensional section: convention * Brouwer degree of x - P(x) on a
    small circle (winding number with >= 720 samples), which needs the
    field to evaluate the return map.
    """
    try:
        return index_from_multipliers(orbit.multipliers, convention)
    except DegenerateUnsupported:
        pass
    if orbit.dim - 1 != 2 or fld is None:
        raise DegenerateUnsupported(
            "degenerate multipliers and no 2d degree fallback available")
    ret = section_return_map(fld, orbit)

    def displacement(pts):
        out = np.empty_like(pts)
        for i, xi in enumerate(pts):
            out[i] = xi - ret(xi)
        return out

    deg = winding_degree(displacement, degree_radius, degree_samples)
    return convention * deg


def section_return_map(fld: VectorFieldSpec, orbit: ClosedOrbitRecord
                       ) -> Callable[[np.ndarray], np.ndarray]:
    """First-return map in section coordinates centered on the orbit point."""
    start = orbit.start if orbit.start is not None else orbit.loop[0]
    f0 = fld(start)
    section = Section(start, f0 / np.linalg.norm(f0))
    B = section.basis()
    deck = orbit.deck or PhaseDeck()
    T = orbit.period

    def ret(xi: np.ndarray) -> np.ndarray:
        y = start + B @ xi
        traj = integrate_flow(fld, y, 1.25 * T, tol=1e-11)
        vals = np.array([section.value(_wrap_diff(deck.inverse(s) - section.point,
                                                  fld.periodic) + section.point)
                         for s in traj.states])
        for k in range(1, len(vals)):
            if vals[k - 1] < 0.0 <= vals[k] and traj.times[k] > 0.5 * T:
                a, b = traj.times[k - 1], traj.times[k]
                for _ in range(60):
                    m = 0.5 * (a + b)
                    x = traj.interpolate([m])[0]
                    v = section.value(_wrap_diff(deck.inverse(x) - section.point,
                                                 fld.periodic) + section.point)
                    if v < 0:
                        a = m
                    else:
                        b = m
                x = traj.interpolate([0.5 * (a + b)])[0]
                pulled = _wrap_diff(deck.inverse(x) - start, fld.periodic)
                return B.T @ pulled
        raise NoReturn("return map: no crossing found")

    return ret


# ---------------------------------------------------------------------------
# multiplicity and dedupe
# ---------------------------------------------------------------------------

def _loop_multiplicity(loop: np.ndarray, periodic, tol: float = 1e-6,
                       n_max: int = 64) -> int:
    """Largest n with the loop invariant under index shift by len/n."""
    N = len(loop)
    best = 1
    for n in range(2, min(n_max, N // 2) + 1):
        if N % n:
            continue
        shifted = np.roll(loop, -N // n, axis=0)
        d = np.max(np.abs(_wrap_diff(shifted - loop, periodic)))
        if d < tol:
            best = max(best, n)
    return best


def multiplicity(orbit: ClosedOrbitRecord, tol: float = 1e-6) -> int:
    """Covering multiplicity of the orbit string.

    Detected from loop time-shift invariance and cross-checked against the
    power decomposition of the orbit's class when available.
    """
    if orbit.residual > 1e-8:
        raise NewtonDiverged(f"orbit residual {orbit.residual} too large")
    periodic = ()
    if orbit.deck is None or isinstance(orbit.deck, TranslationDeck):
        shift_n = _loop_multiplicity(orbit.loop, periodic, tol)
    else:
        shift_n = None  # loop shifts are deck-twisted; rely on the class
    cls_n = None
    if orbit.cls is not None and not orbit.cls.is_constant():
        _, cls_n = power_decomposition(orbit.cls)
    if shift_n is not None and cls_n is not None and shift_n != cls_n:
        raise AmbiguousMultiplicity(
            f"loop-shift multiplicity {shift_n} != class power {cls_n}")
    if cls_n is not None:
        return cls_n
    if shift_n is not None:
        return shift_n
    return orbit.multiplicity


def loop_distance(a: ClosedOrbitRecord, b: ClosedOrbitRecord,
                  periodic=()) -> float:
    """Distance between orbit strings: min-over-phase-shift loop distance
    (continuous shift, interpolated) plus the relative period gap."""
    from .loops import min_shift_distance
    wrap = (lambda d: _wrap_diff(d, periodic)) if periodic else None
    dper = abs(a.period - b.period) / max(a.period, b.period)
    return max(min_shift_distance(a.loop, b.loop, wrap), dper)


def s1_dedupe(records: Sequence[ClosedOrbitRecord],
              periodic=(), tol: float = 1e-5) -> list[ClosedOrbitRecord]:
    """One representative per orbit string (loops equal up to phase shift)."""
    kept: list[ClosedOrbitRecord] = []
    for rec in records:
        if all(loop_distance(rec, other, periodic) >= tol for other in kept):
            kept.append(rec)
    return kept


# ---------------------------------------------------------------------------
# the rational orbit sum
# ---------------------------------------------------------------------------

def fuller_index(records: Sequence[ClosedOrbitRecord],
                 cls: Optional[FreeHomotopyClass] = None,
                 convention: str = "") -> FullerIndexResult:
    """Exact rational sum of index/multiplicity over the orbit set.

    All records must lie in the given class (when classes are recorded) and
    carry defined indices; the orbit set must already be deduplicated.
    """
    total = Fraction(0)
    contributions = []
    for pos, rec in enumerate(records):
        if cls is not None and rec.cls is not None and rec.cls != cls:
            raise ValueError(f"orbit {pos} lies in class {rec.cls}, not {cls}")
        if rec.index is None:
            raise IndexUndefined(f"orbit {pos} has no defined index")
        total += Fraction(rec.index, rec.multiplicity)
        contributions.append((pos, rec.index, rec.multiplicity))
    return FullerIndexResult(total, tuple(contributions), convention)
