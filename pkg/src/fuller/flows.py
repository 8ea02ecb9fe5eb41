"""Vector fields, adaptive integration, monodromy, and geodesic flows.

Integration uses an explicit 5th-order Runge-Kutta core (Cash-Karp weights)
with step-doubling error control: each step is taken once at h and twice at
h/2; the difference divided by 2^5 - 1 estimates the local error, and the
extrapolated value is propagated.  Default tolerance 1e-10.

Geodesic flows are realized on intrinsic unit-tangent-bundle charts:
(x, y, phi) for conformal surface metrics, (r, theta, phi) for warped
cylinders, (z, y, phi) for flat two-torus products, and the bare circle for
one-dimensional models.  Field evaluation is pure; shared field data is
immutable, so trajectories may be integrated concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dfield
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (DegenerateFinslerHessian, NonFinite, StepUnderflow,
                     UnsupportedModel)
from .models import (FlatTorus, FuchsianSurface, MetricSpec, ModelSpace,
                     Product, WarpedCylinder)

# ---------------------------------------------------------------------------
# vector fields
# ---------------------------------------------------------------------------

@dataclass
class VectorFieldSpec:
    """A smooth non-vanishing vector field on a chart of phase space.

    ``periodic`` lists (coordinate index, period) pairs for angle-valued
    coordinates; integration runs in covering coordinates and reduction
    happens only in reported samples.
    """

    dim: int
    func: Callable[[np.ndarray], np.ndarray]
    jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    periodic: tuple[tuple[int, float], ...] = ()
    label: str = ""

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.func(np.asarray(x, dtype=float))

    def jacobian(self, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.jac is not None:
            return self.jac(x)
        out = np.empty((self.dim, self.dim))
        for j in range(self.dim):
            dx = np.zeros(self.dim)
            dx[j] = h * (1.0 + abs(x[j]))
            out[:, j] = (self.func(x + dx) - self.func(x - dx)) / (2.0 * dx[j])
        return out

    def reduce(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Reduce angle coordinates mod period; return (reduced, winding).

        A small tolerance snaps values just below a period boundary onto it,
        so an endpoint at 1 - 1e-12 on a unit circle reports winding 1.
        """
        x = np.array(x, dtype=float)
        winding = np.zeros(self.dim, dtype=int)
        for idx, period in self.periodic:
            w = math.floor(x[idx] / period + 1e-9)
            x[idx] -= w * period
            winding[idx] = w
        return x, winding


def validate_jacobian(fld: VectorFieldSpec, samples: np.ndarray,
                      rtol: float = 1e-5) -> float:
    """Max relative deviation of the supplied jacobian from central FD."""
    worst = 0.0
    for x in np.atleast_2d(samples):
        ja = fld.jac(x)
        jf = VectorFieldSpec(fld.dim, fld.func).jacobian(x)
        scale = max(1.0, float(np.max(np.abs(jf))))
        worst = max(worst, float(np.max(np.abs(ja - jf))) / scale)
    return worst


def min_field_norm(fld: VectorFieldSpec, samples: np.ndarray) -> float:
    vals = np.array([np.linalg.norm(fld(x)) for x in np.atleast_2d(samples)])
    return float(np.min(vals))


# ---------------------------------------------------------------------------
# adaptive Runge-Kutta with step doubling
# ---------------------------------------------------------------------------

_CK_A = (
    (1 / 5,),
    (3 / 40, 9 / 40),
    (3 / 10, -9 / 10, 6 / 5),
    (-11 / 54, 5 / 2, -70 / 27, 35 / 27),
    (1631 / 55296, 175 / 512, 575 / 13824, 44275 / 110592, 253 / 4096),
)
_CK_B = (37 / 378, 0.0, 250 / 621, 125 / 594, 0.0, 512 / 1771)

_H_MIN = 1e-14
_MAX_STEPS = 200_000


def _rk5_step(f, y, h):
    k = [f(y)]
    for row in _CK_A:
        yi = y + h * sum(a * ki for a, ki in zip(row, k))
        k.append(f(yi))
    out = y + h * sum(b * ki for b, ki in zip(_CK_B, k))
    return out, k[0]


@dataclass
class Trajectory:
    """Accepted integration samples (raw covering coordinates) plus stats."""

    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    tol: float
    n_rejected: int
    field: VectorFieldSpec

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]

    def endpoint_reduced(self) -> tuple[np.ndarray, np.ndarray]:
        return self.field.reduce(self.states[-1])

    def interpolate(self, ts: np.ndarray) -> np.ndarray:
        """Cubic Hermite interpolation using stored states and derivatives."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        idx = np.clip(np.searchsorted(self.times, ts) - 1, 0, len(self.times) - 2)
        t0 = self.times[idx]
        dt = self.times[idx + 1] - t0
        s = ((ts - t0) / dt)[:, None]
        y0, y1 = self.states[idx], self.states[idx + 1]
        d0, d1 = self.derivs[idx] * dt[:, None], self.derivs[idx + 1] * dt[:, None]
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        return h00 * y0 + h10 * d0 + h01 * y1 + h11 * d1


def integrate_flow(fld: VectorFieldSpec, x0: np.ndarray, T: float,
                   tol: float = 1e-10) -> Trajectory:
    """Integrate the field from x0 for time T > 0 with error control.

    The endpoint is accurate to O(tol) in the step-doubling sense; raises
    StepUnderflow below step 1e-14 and NonFinite on bad field values.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    if tol <= 0:
        raise ValueError("tol must be positive")

    def f(y):
        v = fld.func(y)
        if not np.all(np.isfinite(v)):
            raise NonFinite(f"field value not finite at {y}")
        return v

    y = np.array(x0, dtype=float)
    t = 0.0
    f0 = f(y)
    h = min(T, 0.1 * (1.0 + float(np.max(np.abs(y)))) / (1.0 + float(np.max(np.abs(f0)))))
    times, states, derivs = [0.0], [y.copy()], [f0]
    n_rejected = 0
    for _ in range(_MAX_STEPS):
        if t >= T:
            break
        h = min(h, T - t)
        if h < _H_MIN:
            raise StepUnderflow(f"step {h:.3e} below 1e-14 at t = {t}")
        y_big, _ = _rk5_step(f, y, h)
        y_mid, _ = _rk5_step(f, y, h / 2)
        y_two, _ = _rk5_step(f, y_mid, h / 2)
        err_vec = y_two - y_big
        err = float(np.max(np.abs(err_vec))) / 31.0
        scale = tol * (1.0 + float(np.max(np.abs(y))))
        if err <= scale:
            t += h
            y = y_two + err_vec / 31.0
            times.append(t)
            states.append(y.copy())
            derivs.append(f(y))
            factor = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * (scale / err) ** (1 / 6)))
            h *= factor
        else:
            n_rejected += 1
            h *= max(0.1, 0.9 * (scale / err) ** (1 / 6))
    else:
        raise StepUnderflow("step budget exhausted before reaching T")

    return Trajectory(np.array(times), np.array(states), np.array(derivs),
                      tol, n_rejected, fld)


def integrate_with_monodromy(fld: VectorFieldSpec, x0: np.ndarray, T: float,
                             tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Endpoint and linearization of the time-T flow map at x0.

    Integrates the variational equations dY/dt = J(x(t)) Y alongside the
    state; for linear fields the result is the matrix exponential of A*T.
    """
    n = fld.dim

    def f_aug(z):
        y = z[:n]
        Y = z[n:].reshape(n, n)
        dy = fld.func(y)
        dY = fld.jacobian(y) @ Y
        return np.concatenate([dy, dY.ravel()])

    aug = VectorFieldSpec(n + n * n, f_aug, label=fld.label + "+var")
    z0 = np.concatenate([np.asarray(x0, dtype=float), np.eye(n).ravel()])
    traj = integrate_flow(aug, z0, T, tol)
    zT = traj.endpoint
    return zT[:n], zT[n:].reshape(n, n)


# ---------------------------------------------------------------------------
# geodesic flow fields on unit-bundle charts
# ---------------------------------------------------------------------------

@dataclass
class GeodesicFlowField:
    """Geodesic flow on an intrinsic unit-tangent-bundle chart.

    ``contact_components(p)`` evaluates the Liouville contact form (as chart
    covector components) at phase point p; the field is its Reeb field.
    """

    field: VectorFieldSpec
    metric: MetricSpec
    model: ModelSpace
    chart: str
    contact_components: Callable[[np.ndarray], np.ndarray]
    base_point: Callable[[np.ndarray], np.ndarray]
    base_velocity: Callable[[np.ndarray], np.ndarray]
    phase_of: Callable[[np.ndarray, np.ndarray], np.ndarray]
    sample_box: tuple[tuple[float, float], ...]

    def random_phase(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        lo = np.array([b[0] for b in self.sample_box])
        hi = np.array([b[1] for b in self.sample_box])
        pts = lo + (hi - lo) * rng.random((n, len(lo)))
        return pts[0] if n == 1 else pts

    def speed(self, p: np.ndarray) -> float:
        x = self.base_point(p)
        v = self.base_velocity(p)
        return float(self.metric.norm_of(x, v))


def _conformal_chart(rho, drho, d2rho, metric, model, box,
                     extra_periodic=()) -> GeodesicFlowField:
    """(x, y, phi) chart for metrics e^{2 rho(x,y)} (dx^2 + dy^2)."""

    def func(p):
        x, y, ph = p
        c, s = math.cos(ph), math.sin(ph)
        u = math.exp(-rho(x, y))
        rx, ry = drho(x, y)
        return np.array([u * c, u * s, u * (ry * c - rx * s)])

    def jac(p):
        x, y, ph = p
        c, s = math.cos(ph), math.sin(ph)
        u = math.exp(-rho(x, y))
        rx, ry = drho(x, y)
        rxx, rxy, ryy = d2rho(x, y)
        w = ry * c - rx * s
        return np.array([
            [-rx * u * c, -ry * u * c, -u * s],
            [-rx * u * s, -ry * u * s, u * c],
            [u * (-rx * w + rxy * c - rxx * s),
             u * (-ry * w + ryy * c - rxy * s),
             u * (-ry * s - rx * c)],
        ])

    def contact(p):
        x, y, ph = p
        e = math.exp(rho(x, y))
        return np.array([e * math.cos(ph), e * math.sin(ph), 0.0])

    def base_velocity(p):
        x, y, ph = p
        u = math.exp(-rho(x, y))
        return np.array([u * math.cos(ph), u * math.sin(ph)])

    def phase_of(x, v):
        return np.array([x[0], x[1], math.atan2(v[1], v[0])])

    fld = VectorFieldSpec(3, func, jac,
                          periodic=tuple(extra_periodic) + ((2, 2 * math.pi),),
                          label="geodesic[conformal]")
    return GeodesicFlowField(fld, metric, model, "conformal2d", contact,
                             lambda p: p[:2], base_velocity, phase_of, box)


def _cylinder_chart(metric, model: WarpedCylinder) -> GeodesicFlowField:
    prof = model.profile
    a = math.sqrt(metric.scale)

    def func(p):
        r, th, ph = p
        c, s = math.cos(ph), math.sin(ph)
        w = float(prof.w(r))
        dw = float(prof.dw(r))
        return np.array([c / a, s / (a * w), -(dw / w) * s / a])

    def jac(p):
        r, th, ph = p
        c, s = math.cos(ph), math.sin(ph)
        w = float(prof.w(r))
        dw = float(prof.dw(r))
        d2w = float(prof.d2w(r))
        return np.array([
            [0.0, 0.0, -s / a],
            [-dw * s / (a * w * w), 0.0, c / (a * w)],
            [-(d2w / w - (dw / w) ** 2) * s / a, 0.0, -(dw / w) * c / a],
        ])

    def contact(p):
        r, th, ph = p
        w = float(prof.w(r))
        return np.array([a * math.cos(ph), a * w * math.sin(ph), 0.0])

    def base_velocity(p):
        r, th, ph = p
        w = float(prof.w(r))
        return np.array([math.cos(ph) / a, math.sin(ph) / (a * w)])

    def phase_of(x, v):
        w = float(prof.w(x[0]))
        return np.array([x[0], x[1], math.atan2(w * v[1], v[0])])

    fld = VectorFieldSpec(3, func, jac,
                          periodic=((1, 2 * math.pi), (2, 2 * math.pi)),
                          label="geodesic[cylinder]")
    lo, hi = model.r_window
    box = ((lo, hi), (0.0, 2 * math.pi), (0.0, 2 * math.pi))
    return GeodesicFlowField(fld, metric, model, "diagonal2d", contact,
                             lambda p: p[:2], base_velocity, phase_of, box)


def _circle_chart(metric, model: FlatTorus) -> GeodesicFlowField:
    a = math.sqrt(metric.scale)
    L = abs(float(model.basis[0, 0]))

    def func(p):
        return np.array([1.0 / a])

    def jac(p):
        return np.zeros((1, 1))

    def contact(p):
        return np.array([a])

    fld = VectorFieldSpec(1, func, jac, periodic=((0, L),), label="geodesic[circle]")
    return GeodesicFlowField(fld, metric, model, "circle", contact,
                             lambda p: p[:1], lambda p: np.array([1.0 / a]),
                             lambda x, v: np.array([x[0]]), ((0.0, L),))


def _flat_t2_chart(metric, model: Product) -> GeodesicFlowField:
    """(z, y, phi) chart of the unit bundle of a flat product two-torus."""
    Lz = abs(float(model.factors[0].basis[0, 0]))
    Ly = abs(float(model.factors[1].basis[0, 0]))

    def func(p):
        return np.array([math.cos(p[2]), math.sin(p[2]), 0.0])

    def jac(p):
        return np.array([[0.0, 0.0, -math.sin(p[2])],
                         [0.0, 0.0, math.cos(p[2])],
                         [0.0, 0.0, 0.0]])

    def contact(p):
        return np.array([math.cos(p[2]), math.sin(p[2]), 0.0])

    fld = VectorFieldSpec(3, func, jac,
                          periodic=((0, Lz), (1, Ly), (2, 2 * math.pi)),
                          label="geodesic[t2]")
    box = ((0.0, Lz), (0.0, Ly), (0.0, 2 * math.pi))
    return GeodesicFlowField(fld, metric, model, "torus3", contact,
                             lambda p: p[:2],
                             lambda p: np.array([math.cos(p[2]), math.sin(p[2])]),
                             lambda x, v: np.array([x[0], x[1],
                                                    math.atan2(v[1], v[0])]), box)


def _finsler_ambient(metric: MetricSpec, model: ModelSpace) -> GeodesicFlowField:
    """Ambient (x, v) chart integrating the energy Euler-Lagrange equations."""
    d = model.dim
    h = 1e-5

    def lagrangian(x, v):
        F = metric.norm(x, v)
        return 0.5 * F * F

    def func(p):
        x, v = p[:d], p[d:]
        H = np.empty((d, d))
        Mx = np.empty((d, d))
        Lx = np.empty(d)
        for i in range(d):
            dv = np.zeros(d); dv[i] = h
            dx = np.zeros(d); dx[i] = h
            Lx[i] = (lagrangian(x + dx, v) - lagrangian(x - dx, v)) / (2 * h)
            for j in range(d):
                dvj = np.zeros(d); dvj[j] = h
                H[i, j] = (lagrangian(x, v + dv + dvj) - lagrangian(x, v + dv - dvj)
                           - lagrangian(x, v - dv + dvj) + lagrangian(x, v - dv - dvj)) / (4 * h * h)
                dxj = np.zeros(d); dxj[j] = h
                Mx[i, j] = (lagrangian(x + dxj, v + dv) - lagrangian(x - dxj, v + dv)
                            - lagrangian(x + dxj, v - dv) + lagrangian(x - dxj, v - dv)) / (4 * h * h)
        if abs(np.linalg.det(H)) < 1e-10:
            raise DegenerateFinslerHessian(f"fiber Hessian singular at {x}")
        acc = np.linalg.solve(H, Lx - Mx @ v)
        return np.concatenate([v, acc])

    fld = VectorFieldSpec(2 * d, func, label="geodesic[finsler]")

    def contact(p):
        x, v = p[:d], p[d:]
        grad = np.empty(d)
        for i in range(d):
            dv = np.zeros(d); dv[i] = h
            grad[i] = (lagrangian(x, v + dv) - lagrangian(x, v - dv)) / (2 * h)
        return np.concatenate([grad, np.zeros(d)])

    box = tuple((0.0, 1.0) for _ in range(d)) + tuple((-1.0, 1.0) for _ in range(d))
    return GeodesicFlowField(fld, metric, model, "finsler_ambient", contact,
                             lambda p: p[:d], lambda p: p[d:],
                             lambda x, v: np.concatenate([x, v]), box)


def geodesic_field(metric: MetricSpec, model: ModelSpace) -> GeodesicFlowField:
    """Construct the geodesic flow of the metric on the model's unit bundle."""
    if metric.kind == "finsler":
        return _finsler_ambient(metric, model)

    if isinstance(model, FlatTorus) and model.dim == 2:
        from .models import _bump_field
        bval, bgrad, bhess = _bump_field(model)
        half_log_scale = 0.5 * math.log(metric.scale)

        def rho(x, y):
            p = np.array([x, y])
            return half_log_scale + 0.5 * math.log1p(float(bval(p)))

        def drho(x, y):
            p = np.array([x, y])
            f = 1.0 + float(bval(p))
            g = bgrad(p)
            return g[0] / (2 * f), g[1] / (2 * f)

        def d2rho(x, y):
            p = np.array([x, y])
            f = 1.0 + float(bval(p))
            g = bgrad(p)
            H = bhess(p)
            rxx = H[0, 0] / (2 * f) - g[0] * g[0] / (2 * f * f)
            rxy = H[0, 1] / (2 * f) - g[0] * g[1] / (2 * f * f)
            ryy = H[1, 1] / (2 * f) - g[1] * g[1] / (2 * f * f)
            return rxx, rxy, ryy

        cell = float(np.max(np.abs(model.basis)))
        box = ((0.0, cell), (0.0, cell), (0.0, 2 * math.pi))
        extra = ()
        if abs(model.basis[0, 1]) < 1e-14 and abs(model.basis[1, 0]) < 1e-14:
            extra = ((0, abs(float(model.basis[0, 0]))),
                     (1, abs(float(model.basis[1, 1]))))
        return _conformal_chart(rho, drho, d2rho, metric, model, box, extra)

    if isinstance(model, FuchsianSurface):
        half_log_scale = 0.5 * math.log(metric.scale)

        def rho(x, y):
            return half_log_scale - math.log(y)

        def drho(x, y):
            return 0.0, -1.0 / y

        def d2rho(x, y):
            return 0.0, 0.0, 1.0 / (y * y)

        box = ((-1.0, 1.0), (0.5, 2.0), (0.0, 2 * math.pi))
        return _conformal_chart(rho, drho, d2rho, metric, model, box)

    if isinstance(model, WarpedCylinder):
        return _cylinder_chart(metric, model)

    if isinstance(model, FlatTorus) and model.dim == 1:
        return _circle_chart(metric, model)

    if isinstance(model, Product) and len(model.factors) == 2 and all(
            isinstance(f, FlatTorus) and f.dim == 1 for f in model.factors):
        return _flat_t2_chart(metric, model)

    raise UnsupportedModel(f"no geodesic-flow chart for {model.kind} (dim {model.dim})")


# ---------------------------------------------------------------------------
# Reeb condition diagnostics
# ---------------------------------------------------------------------------

@dataclass
class ReebReport:
    max_unit_dev: float          # max |lambda(R) - 1|
    max_contraction_dev: float   # max |d lambda(R, w)|
    n_samples: int

    @property
    def passed(self) -> bool:
        return self.max_unit_dev < 1e-6 and self.max_contraction_dev < 1e-6


def reeb_conditions_check(flow: GeodesicFlowField, n_samples: int = 100,
                          rng: Optional[np.random.Generator] = None,
                          fd_step: float = 1e-5,
                          field_override: Optional[VectorFieldSpec] = None) -> ReebReport:
    """Sampled verification that the field is the Reeb field of the form.

    Reports max |lambda(R) - 1| and max |d lambda(R, w)| over random phase
    points and random unit test vectors w; both < 1e-6 for a correctly
    constructed geodesic flow.  Diagnostic only, never raises.
    """
    rng = rng or np.random.default_rng(0)
    fld = field_override if field_override is not None else flow.field
    n = fld.dim
    unit_dev = 0.0
    contr_dev = 0.0
    for _ in range(n_samples):
        p = flow.random_phase(rng)
        R = fld(p)
        lam = flow.contact_components(p)
        unit_dev = max(unit_dev, abs(float(lam @ R) - 1.0))
        K = np.empty((n, n))
        for i in range(n):
            dp = np.zeros(n)
            dp[i] = fd_step
            K[i, :] = (flow.contact_components(p + dp)
                       - flow.contact_components(p - dp)) / (2 * fd_step)
        w = rng.standard_normal(n)
        w /= np.linalg.norm(w)
        contr = float(R @ K @ w - w @ K @ R)
        contr_dev = max(contr_dev, abs(contr))
    return ReebReport(unit_dev, contr_dev, n_samples)


# ---------------------------------------------------------------------------
# Christoffel symbols and geodesic residuals (used by geodesible checks)
# ---------------------------------------------------------------------------

def christoffel(metric: MetricSpec, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Gamma^i_{jk} at x from the metric and its first derivatives."""
    x = np.asarray(x, dtype=float)
    g = metric.matrix(x)
    if metric.dmatrix is not None:
        dg = metric.dmatrix(x)
    else:
        d = metric.dim
        dg = np.empty((d, d, d))
        for k in range(d):
            dx = np.zeros(d)
            dx[k] = h
            dg[:, :, k] = (metric.matrix(x + dx) - metric.matrix(x - dx)) / (2 * h)
    ginv = np.linalg.inv(g)
    # Gamma^i_{jk} = 1/2 g^{il} (d_j g_{lk} + d_k g_{lj} - d_l g_{jk})
    term = np.einsum("lkj->ljk", dg) + np.einsum("ljk->ljk", dg) - np.einsum("jkl->ljk", dg)
    return 0.5 * np.einsum("il,ljk->ijk", ginv, term)


def geodesic_residual(metric: MetricSpec, x: np.ndarray, v: np.ndarray,
                      a: np.ndarray) -> float:
    """Max-norm of a + Gamma(v, v), the geodesic equation residual."""
    gam = christoffel(metric, x)
    res = a + np.einsum("ijk,j,k->i", gam, v, v)
    return float(np.max(np.abs(res)))
