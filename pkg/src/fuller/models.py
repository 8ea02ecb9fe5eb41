"""Model geometries, metrics, and free-homotopy-class algebra.

Free homotopy classes are represented by canonical conjugacy-class data:
a lattice vector for torus-like models, or the lexicographically least
cyclic rotation of the cyclically reduced word for surface-group models.
All values here are immutable after construction and safe to share.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from math import gcd
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import ConstantClass, UnknownGenerator, UnsupportedModel

Word = tuple[int, ...]  # signed 1-based letters: 1 = a, -1 = a', 2 = b, ...

_LETTERS = "abcdefghijklmnopqrstuvwxyz"


# ---------------------------------------------------------------------------
# word algebra
# ---------------------------------------------------------------------------

def parse_word(text: str) -> Word:
    """Parse a word string like ``"ab'a"`` into signed letter indices."""
    out: list[int] = []
    for ch in text.replace(" ", ""):
        if ch == "'":
            if not out:
                raise UnknownGenerator("inverse mark with no preceding letter")
            out[-1] = -out[-1]
        else:
            idx = _LETTERS.find(ch)
            if idx < 0:
                raise UnknownGenerator(f"unknown letter {ch!r}")
            out.append(idx + 1)
    return tuple(out)


def word_str(word: Word) -> str:
    return "".join(_LETTERS[abs(x) - 1] + ("'" if x < 0 else "") for x in word)


def free_reduce(word: Word) -> Word:
    out: list[int] = []
    for x in word:
        if out and out[-1] == -x:
            out.pop()
        else:
            out.append(x)
    return tuple(out)


def cyclic_reduce(word: Word) -> Word:
    w = free_reduce(word)
    while len(w) >= 2 and w[0] == -w[-1]:
        w = w[1:-1]
    return w


def _letter_key(x: int) -> int:
    # order a < a' < b < b' < ...
    return 2 * x - 2 if x > 0 else -2 * x - 1


def canonical_cyclic(word: Word) -> Word:
    """Lexicographically least rotation of the cyclically reduced word."""
    w = cyclic_reduce(word)
    if not w:
        return w
    rots = (w[i:] + w[:i] for i in range(len(w)))
    return min(rots, key=lambda v: [_letter_key(x) for x in v])


def word_inverse(word: Word) -> Word:
    return tuple(-x for x in reversed(word))


def word_concat(*words: Word) -> Word:
    out: list[int] = []
    for w in words:
        for x in w:
            if out and out[-1] == -x:
                out.pop()
            else:
                out.append(x)
    return tuple(out)


def word_power(word: Word, n: int) -> Word:
    if n < 0:
        return word_power(word_inverse(word), -n)
    return word_concat(*([word] * n))


def _cyclic_period(word: Word) -> int:
    """Smallest p dividing len(word) with word invariant under rotation by p."""
    n = len(word)
    for p in range(1, n + 1):
        if n % p == 0 and word[p:] + word[:p] == word:
            return p
    return n


# ---------------------------------------------------------------------------
# free homotopy classes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FreeHomotopyClass:
    """Canonical representative of a free homotopy class.

    ``rep`` is a lattice vector (ints) for torus-like models or a canonical
    cyclic word for surface-group models.  ``lifted`` marks the class of the
    canonical lift to the unit tangent bundle.
    """

    kind: str  # "lattice" | "word"
    rep: tuple[int, ...]
    lifted: bool = False

    def is_constant(self) -> bool:
        if self.kind == "lattice":
            return all(x == 0 for x in self.rep)
        return len(self.rep) == 0

    def lift(self) -> "FreeHomotopyClass":
        return FreeHomotopyClass(self.kind, self.rep, lifted=True)

    def __str__(self) -> str:
        if self.kind == "lattice":
            return "(" + ",".join(str(x) for x in self.rep) + ")"
        return word_str(self.rep) if self.rep else "1"


def _alphabet_size(model: "ModelSpace") -> int:
    if isinstance(model, FuchsianSurface):
        return 2 * model.genus
    raise UnsupportedModel(f"{model.kind} has no word alphabet")


def canonical_class(raw, model: "ModelSpace") -> FreeHomotopyClass:
    """Canonicalize a raw class representative for the given model.

    Accepts a word string, a signed-letter tuple, a lattice vector, or an
    existing class.  Idempotent, and constant on conjugacy classes.
    """
    if isinstance(raw, FreeHomotopyClass):
        if raw.kind == "word":
            return FreeHomotopyClass("word", canonical_cyclic(raw.rep), raw.lifted)
        return raw

    if isinstance(model, (FlatTorus, WarpedCylinder)):
        if isinstance(raw, str):
            raw = _parse_lattice(raw)
        vec = tuple(int(x) for x in raw)
        want = model.dim if isinstance(model, FlatTorus) else 1
        if len(vec) != want:
            raise UnknownGenerator(
                f"lattice class needs {want} entries, got {len(vec)}")
        return FreeHomotopyClass("lattice", vec)

    if isinstance(model, FuchsianSurface):
        word = parse_word(raw) if isinstance(raw, str) else tuple(int(x) for x in raw)
        n = _alphabet_size(model)
        for x in word:
            if not (1 <= abs(x) <= n):
                raise UnknownGenerator(
                    f"letter {word_str((x,))} outside alphabet of size {n}")
        return FreeHomotopyClass("word", canonical_cyclic(word))

    raise UnsupportedModel(f"no class representation for {model.kind}")


def _parse_lattice(text: str) -> tuple[int, ...]:
    t = text.strip().strip("()")
    return tuple(int(p) for p in t.split(",") if p.strip())


def power_decomposition(cls: FreeHomotopyClass) -> tuple[FreeHomotopyClass, int]:
    """Write the class as root**n with n maximal; the root is not a power."""
    if cls.is_constant():
        raise ConstantClass("constant class has no power decomposition")
    if cls.kind == "lattice":
        g = 0
        for x in cls.rep:
            g = gcd(g, abs(x))
        root = tuple(x // g for x in cls.rep)
        return FreeHomotopyClass("lattice", root, cls.lifted), g
    p = _cyclic_period(cls.rep)
    n = len(cls.rep) // p
    root = canonical_cyclic(cls.rep[:p])
    return FreeHomotopyClass("word", root, cls.lifted), n


def class_power(cls: FreeHomotopyClass, n: int) -> FreeHomotopyClass:
    if cls.kind == "lattice":
        return FreeHomotopyClass("lattice", tuple(n * x for x in cls.rep), cls.lifted)
    return FreeHomotopyClass("word", canonical_cyclic(word_power(cls.rep, n)), cls.lifted)


# ---------------------------------------------------------------------------
# class automorphisms (holonomy generators, mapping-torus monodromy)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassAutomorphism:
    """Automorphism of the class set: lattice matrix or word substitution.

    For word kind, ``subst`` maps positive letters to words; the inverse
    substitution must be supplied and round-trip on random words.
    """

    kind: str  # "lattice" | "word"
    matrix: Optional[tuple[tuple[int, ...], ...]] = None
    subst: Optional[tuple[Word, ...]] = None       # subst[i-1] = image of letter i
    inv_subst: Optional[tuple[Word, ...]] = None

    def apply(self, cls: FreeHomotopyClass) -> FreeHomotopyClass:
        if self.kind == "lattice":
            m = np.array(self.matrix, dtype=int)
            vec = m @ np.array(cls.rep, dtype=int)
            return FreeHomotopyClass("lattice", tuple(int(x) for x in vec), cls.lifted)
        return FreeHomotopyClass(
            "word", canonical_cyclic(self._subst_word(cls.rep, self.subst)), cls.lifted)

    def apply_inverse(self, cls: FreeHomotopyClass) -> FreeHomotopyClass:
        if self.kind == "lattice":
            m = np.array(self.matrix, dtype=float)
            vec = np.linalg.solve(m, np.array(cls.rep, dtype=float))
            out = np.rint(vec).astype(int)
            if np.max(np.abs(vec - out)) > 1e-9:
                raise ValueError("lattice automorphism is not invertible over Z")
            return FreeHomotopyClass("lattice", tuple(int(x) for x in out), cls.lifted)
        return FreeHomotopyClass(
            "word", canonical_cyclic(self._subst_word(cls.rep, self.inv_subst)), cls.lifted)

    @staticmethod
    def _subst_word(word: Word, images: tuple[Word, ...]) -> Word:
        parts = []
        for x in word:
            img = images[abs(x) - 1]
            parts.append(img if x > 0 else word_inverse(img))
        return word_concat(*parts)

    def check_inverse(self, n_letters: int, n_words: int = 100, seed: int = 0) -> bool:
        """Round-trip apply o apply_inverse on random classes."""
        rng = np.random.default_rng(seed)
        letters = [i for i in range(-n_letters, n_letters + 1) if i != 0]
        for _ in range(n_words):
            if self.kind == "word":
                length = int(rng.integers(1, 9))
                word = tuple(int(x) for x in rng.choice(letters, length))
                cls = FreeHomotopyClass("word", canonical_cyclic(word))
            else:
                vec = tuple(int(x) for x in rng.integers(-5, 6, len(self.matrix)))
                cls = FreeHomotopyClass("lattice", vec)
            if self.apply_inverse(self.apply(cls)) != canonical_class_like(cls):
                return False
        return True


def canonical_class_like(cls: FreeHomotopyClass) -> FreeHomotopyClass:
    if cls.kind == "word":
        return FreeHomotopyClass("word", canonical_cyclic(cls.rep), cls.lifted)
    return cls


def swap_automorphism(i: int, j: int, n_letters: int) -> ClassAutomorphism:
    """Automorphism exchanging generators i and j (1-based), fixing the rest."""
    images = []
    for k in range(1, n_letters + 1):
        images.append((j,) if k == i else ((i,) if k == j else (k,)))
    imgs = tuple(images)
    return ClassAutomorphism("word", subst=imgs, inv_subst=imgs)


def lattice_automorphism(matrix) -> ClassAutomorphism:
    m = tuple(tuple(int(x) for x in row) for row in matrix)
    det = round(np.linalg.det(np.array(m, dtype=float)))
    if det not in (-1, 1):
        raise ValueError("lattice automorphism must have determinant +-1")
    return ClassAutomorphism("lattice", matrix=m)


# ---------------------------------------------------------------------------
# bumps and metric data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Bump:
    """Compactly supported conformal bump: amplitude*(1-(r/R)^2)^3 on r < R."""

    center: tuple[float, ...]
    radius: float
    amplitude: float

    def value(self, dx: np.ndarray) -> np.ndarray:
        r2 = np.sum(dx * dx, axis=-1) / (self.radius * self.radius)
        core = np.clip(1.0 - r2, 0.0, None)
        return self.amplitude * core**3

    def grad(self, dx: np.ndarray) -> np.ndarray:
        R2 = self.radius * self.radius
        r2 = np.sum(dx * dx, axis=-1) / R2
        core = np.clip(1.0 - r2, 0.0, None)
        coef = self.amplitude * 3.0 * core**2 * (-2.0 / R2)
        return coef[..., None] * dx

    def hess(self, dx: np.ndarray) -> np.ndarray:
        R2 = self.radius * self.radius
        r2 = np.sum(dx * dx, axis=-1) / R2
        core = np.clip(1.0 - r2, 0.0, None)
        d = dx.shape[-1]
        eye = np.eye(d)
        # f = a*c^3, c = 1 - |x|^2/R2 ; f'' = a[6c (2x/R2)(2x/R2)^T - 3c^2 (2/R2) I]
        term1 = 6.0 * core[..., None, None] * (2.0 / R2) ** 2 * (
            dx[..., :, None] * dx[..., None, :])
        term2 = 3.0 * (core**2)[..., None, None] * (2.0 / R2) * eye
        return self.amplitude * (term1 - term2)


@dataclass
class MetricSpec:
    """Metric data on a model's chart.

    ``matrix``/``dmatrix``/``d2matrix`` give g_ij and its first and second
    coordinate derivatives, vectorized over leading axes.  Index order:
    dmatrix[..., i, j, k] = d_k g_ij and d2matrix[..., i, j, k, l] = d_k d_l g_ij.
    For Finsler metrics ``norm(x, v)`` gives the positively 1-homogeneous norm.
    """

    kind: str  # "riemannian" | "finsler"
    dim: int
    matrix: Optional[Callable[[np.ndarray], np.ndarray]] = None
    dmatrix: Optional[Callable[[np.ndarray], np.ndarray]] = None
    d2matrix: Optional[Callable[[np.ndarray], np.ndarray]] = None
    norm: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    perturbation: tuple[Bump, ...] = ()
    scale: float = 1.0      # global conformal scale factor applied to g
    label: str = ""

    def norm_of(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        if self.kind == "finsler":
            return self.norm(x, v)
        g = self.matrix(x)
        return np.sqrt(np.einsum("...ij,...i,...j->...", g, v, v))

    def check_positive_definite(self, points: np.ndarray, tol: float = 1e-12) -> float:
        """Minimum eigenvalue of g over the sampled grid (must be > tol)."""
        g = self.matrix(np.asarray(points, dtype=float))
        w = np.linalg.eigvalsh(g)
        return float(np.min(w))


# ---------------------------------------------------------------------------
# model spaces
# ---------------------------------------------------------------------------

class ModelSpace:
    """Base class for the supported concrete geometries."""

    kind: str = "abstract"
    dim: int = 0

    @property
    def compact(self) -> bool:
        return True


class FlatTorus(ModelSpace):
    """R^d / lattice with the Euclidean chart metric plus optional bumps."""

    kind = "flat_torus"

    def __init__(self, basis, bumps: Sequence[Bump] = ()):
        b = np.asarray(basis, dtype=float)
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise ValueError("lattice basis must be square")
        if abs(np.linalg.det(b)) < 1e-12:
            raise ValueError("lattice basis is singular")
        self.basis = b
        self.dim = b.shape[0]
        self.bumps = tuple(bumps)

    @property
    def is_circle(self) -> bool:
        return self.dim == 1


class FuchsianGroup:
    """Discrete group of SL(2,R) matrices presenting a hyperbolic surface.

    Generators must be hyperbolic (|trace| > 2) and satisfy the surface
    relation: the product of commutators of consecutive generator pairs
    equals +-identity.
    """

    def __init__(self, generators: Sequence[np.ndarray], genus: int):
        self.generators = tuple(np.asarray(g, dtype=float) for g in generators)
        self.genus = genus
        for g in self.generators:
            if abs(np.linalg.det(g) - 1.0) > 1e-9:
                raise ValueError("generator determinant != 1")
            if abs(np.trace(g)) <= 2.0:
                raise ValueError("generator is not hyperbolic (|tr| <= 2)")

    def relation_residual(self) -> float:
        """Entrywise distance of the commutator-product relation from +-I."""
        r = np.eye(2)
        for i in range(0, len(self.generators) - 1, 2):
            a, b = self.generators[i], self.generators[i + 1]
            r = r @ a @ b @ np.linalg.inv(a) @ np.linalg.inv(b)
        return float(min(np.max(np.abs(r - np.eye(2))), np.max(np.abs(r + np.eye(2)))))

    def matrix_of_word(self, word: Word) -> np.ndarray:
        m = np.eye(2)
        for x in word:
            g = self.generators[abs(x) - 1]
            m = m @ (g if x > 0 else np.linalg.inv(g))
        return m

    def translation_length(self, word: Word) -> float:
        tr = abs(np.trace(self.matrix_of_word(word)))
        if tr <= 2.0:
            from .errors import NotHyperbolicElement
            raise NotHyperbolicElement(f"|tr| = {tr} <= 2")
        return 2.0 * math.acosh(tr / 2.0)


def octagon_group() -> FuchsianGroup:
    """The regular-octagon genus-2 group with standard-relation generators.

    The four side-pairing translations of the regular hyperbolic octagon
    (translation length 2*arccosh(1+sqrt(2)), axes at angles k*pi/4 through
    the origin of the disk) generate the surface group; a fixed change of
    basis turns them into generators satisfying [A,B][C,D] = I.
    """
    ch = 1.0 + math.sqrt(2.0)
    sh = math.sqrt(ch * ch - 1.0)
    def side_pairing(k: int) -> np.ndarray:
        th = k * math.pi / 4.0
        c, s = math.cos(th), math.sin(th)
        return np.array([[ch + sh * c, -sh * s], [-sh * s, ch - sh * c]])

    g = [side_pairing(k) for k in range(4)]
    inv = np.linalg.inv
    a = inv(g[3]) @ g[2] @ inv(g[1])
    b = g[1] @ inv(g[0])
    c = g[2]
    d = inv(g[3])
    return FuchsianGroup([a, b, c, d], genus=2)


class FuchsianSurface(ModelSpace):
    """Closed hyperbolic surface, optionally with explicit group matrices."""

    kind = "fuchsian"
    dim = 2

    def __init__(self, group: Optional[FuchsianGroup] = None, genus: Optional[int] = None):
        if group is None and genus is None:
            raise ValueError("need a group or a genus")
        self.group = group
        self.genus = genus if genus is not None else group.genus
        if self.genus < 2:
            raise ValueError("hyperbolic surface needs genus >= 2")


@dataclass(frozen=True)
class WarpProfile:
    """Named warp profile r -> w(r) with derivatives."""

    name: str
    params: tuple[float, ...] = ()

    def w(self, r):
        r = np.asarray(r, dtype=float)
        if self.name == "cosh":
            return np.cosh(r)
        if self.name == "two_waist":
            c = self.params[0]
            return 1.0 + 0.5 * c * (1.0 - np.cos(2.0 * np.pi * r / 3.0)) \
                + 0.5 * c * (1.0 - np.cos(np.pi * r / 3.0))
        if self.name == "flattening":
            return 2.0 - 1.0 / (1.0 + r * r)
        raise ValueError(f"unknown profile {self.name}")

    def dw(self, r):
        r = np.asarray(r, dtype=float)
        if self.name == "cosh":
            return np.sinh(r)
        if self.name == "two_waist":
            c = self.params[0]
            return 0.5 * c * (2.0 * np.pi / 3.0) * np.sin(2.0 * np.pi * r / 3.0) \
                + 0.5 * c * (np.pi / 3.0) * np.sin(np.pi * r / 3.0)
        if self.name == "flattening":
            return 2.0 * r / (1.0 + r * r) ** 2
        raise ValueError(f"unknown profile {self.name}")

    def d2w(self, r):
        r = np.asarray(r, dtype=float)
        if self.name == "cosh":
            return np.cosh(r)
        if self.name == "two_waist":
            c = self.params[0]
            return 0.5 * c * (2.0 * np.pi / 3.0) ** 2 * np.cos(2.0 * np.pi * r / 3.0) \
                + 0.5 * c * (np.pi / 3.0) ** 2 * np.cos(np.pi * r / 3.0)
        if self.name == "flattening":
            return (2.0 - 6.0 * r * r) / (1.0 + r * r) ** 3
        raise ValueError(f"unknown profile {self.name}")


class WarpedCylinder(ModelSpace):
    """R x S^1 with metric dr^2 + w(r)^2 dtheta^2; theta has period 2*pi.

    The one supported non-compact model.  A class is boundary incompressible
    exactly when its winding number around the core circle is nonzero.
    """

    kind = "warped_cylinder"
    dim = 2

    def __init__(self, profile: WarpProfile, r_window: tuple[float, float] = (-5.0, 5.0)):
        self.profile = profile
        self.r_window = r_window

    @property
    def compact(self) -> bool:
        return False


class Product(ModelSpace):
    kind = "product"

    def __init__(self, factors: Sequence[ModelSpace]):
        self.factors = tuple(factors)
        self.dim = sum(f.dim for f in self.factors)

    @property
    def compact(self) -> bool:
        return all(f.compact for f in self.factors)


class MappingTorus(ModelSpace):
    """Fiber bundle over the circle with monodromy an isometry of the fiber."""

    kind = "mapping_torus"

    def __init__(self, fiber: ModelSpace, automorphism: ClassAutomorphism):
        self.fiber = fiber
        self.automorphism = automorphism
        self.dim = fiber.dim + 1

    @property
    def compact(self) -> bool:
        return self.fiber.compact


# ---------------------------------------------------------------------------
# model-level operations
# ---------------------------------------------------------------------------

def is_boundary_incompressible(cls: FreeHomotopyClass, model: ModelSpace) -> bool:
    """Whether the class cannot be pushed out of every compact exhaustion.

    Compact models: any nonconstant class.  Warped cylinder: nonzero winding.
    Other non-compact models are refused (no finite computation certifies
    the exhaustion condition in general).
    """
    if isinstance(model, WarpedCylinder):
        return cls.rep[0] != 0
    if model.compact:
        return not cls.is_constant()
    raise UnsupportedModel(
        f"boundary incompressibility undecidable for non-compact {model.kind}")


def euler_characteristic(model: ModelSpace) -> int:
    """Euler characteristic for closed surfaces, circles, and their products."""
    if isinstance(model, FlatTorus):
        if model.dim in (1, 2):
            return 0
        raise UnsupportedModel("flat torus of dim > 2")
    if isinstance(model, FuchsianSurface):
        return 2 - 2 * model.genus
    if isinstance(model, Product):
        out = 1
        for f in model.factors:
            out *= euler_characteristic(f)
        return out
    raise UnsupportedModel(f"no Euler characteristic rule for {model.kind}")


@dataclass
class MorseFunctionSpec:
    """Critical-point data (and optionally the function) of a Morse function."""

    critical_points: tuple[tuple[str, int], ...]
    function: Optional[Callable[[np.ndarray], float]] = None
    derivative: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def signed_count(self) -> int:
        return sum((-1) ** idx for _, idx in self.critical_points)

    def check_against(self, model: ModelSpace) -> bool:
        return self.signed_count() == euler_characteristic(model)


# ---------------------------------------------------------------------------
# default metrics
# ---------------------------------------------------------------------------

def _bump_field(model: FlatTorus):
    """Periodic conformal factor b(x) = sum of lattice-translated bumps."""
    basis = model.basis
    inv_basis = np.linalg.inv(basis)
    bumps = model.bumps
    d = model.dim
    grids = np.meshgrid(*([[-1, 0, 1]] * d), indexing="ij")
    ints = np.stack([g.ravel() for g in grids], axis=-1).astype(float)
    shifts = ints @ basis.T

    def parts(x: np.ndarray):
        x = np.asarray(x, dtype=float)
        frac = (x @ inv_basis.T) % 1.0
        xr = frac @ basis.T
        for b in bumps:
            centers = np.asarray(b.center, dtype=float) + shifts  # (S, d)
            dx = xr[..., None, :] - centers  # (..., S, d)
            yield b, dx

    def value(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for b, dx in parts(x):
            out = out + np.sum(b.value(dx), axis=-1)
        return out

    def grad(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for b, dx in parts(x):
            out = out + np.sum(b.grad(dx), axis=-2)
        return out

    def hess(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + (x.shape[-1],))
        for b, dx in parts(x):
            out = out + np.sum(b.hess(dx), axis=-3)
        return out

    return value, grad, hess


def flat_torus_metric(model: FlatTorus, scale: float = 1.0) -> MetricSpec:
    """Euclidean chart metric times (1 + bumps), conformal."""
    d = model.dim
    bval, bgrad, bhess = _bump_field(model)
    eye = np.eye(d)

    def matrix(x):
        x = np.asarray(x, dtype=float)
        f = scale * (1.0 + bval(x))
        return f[..., None, None] * eye

    def dmatrix(x):
        x = np.asarray(x, dtype=float)
        df = scale * bgrad(x)  # (..., k)
        return eye[..., :, :, None] * df[..., None, None, :]

    def d2matrix(x):
        x = np.asarray(x, dtype=float)
        d2f = scale * bhess(x)  # (..., k, l)
        return eye[..., :, :, None, None] * d2f[..., None, None, :, :]

    return MetricSpec("riemannian", d, matrix, dmatrix, d2matrix,
                      perturbation=model.bumps, scale=scale,
                      label=f"flat+{len(model.bumps)}bumps")


def halfplane_metric(scale: float = 1.0) -> MetricSpec:
    """Hyperbolic metric (dx^2 + dy^2)/y^2 on the upper half-plane chart."""
    eye = np.eye(2)

    def matrix(x):
        x = np.asarray(x, dtype=float)
        y = x[..., 1]
        return (scale / (y * y))[..., None, None] * eye

    def dmatrix(x):
        x = np.asarray(x, dtype=float)
        y = x[..., 1]
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 0, 0, 1] = -2.0 * scale / y**3
        out[..., 1, 1, 1] = -2.0 * scale / y**3
        return out

    def d2matrix(x):
        x = np.asarray(x, dtype=float)
        y = x[..., 1]
        out = np.zeros(x.shape[:-1] + (2, 2, 2, 2))
        out[..., 0, 0, 1, 1] = 6.0 * scale / y**4
        out[..., 1, 1, 1, 1] = 6.0 * scale / y**4
        return out

    return MetricSpec("riemannian", 2, matrix, dmatrix, d2matrix, scale=scale,
                      label="hyperbolic")


def warped_metric(model: WarpedCylinder, scale: float = 1.0) -> MetricSpec:
    """diag(1, w(r)^2) in (r, theta) coordinates."""
    prof = model.profile

    def matrix(x):
        x = np.asarray(x, dtype=float)
        r = x[..., 0]
        w = prof.w(r)
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = scale
        out[..., 1, 1] = scale * w * w
        return out

    def dmatrix(x):
        x = np.asarray(x, dtype=float)
        r = x[..., 0]
        w, dw = prof.w(r), prof.dw(r)
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 1, 1, 0] = scale * 2.0 * w * dw
        return out

    def d2matrix(x):
        x = np.asarray(x, dtype=float)
        r = x[..., 0]
        w, dw, d2w = prof.w(r), prof.dw(r), prof.d2w(r)
        out = np.zeros(x.shape[:-1] + (2, 2, 2, 2))
        out[..., 1, 1, 0, 0] = scale * 2.0 * (dw * dw + w * d2w)
        return out

    return MetricSpec("riemannian", 2, matrix, dmatrix, d2matrix, scale=scale,
                      label=f"warped[{prof.name}]")


def default_metric(model: ModelSpace, scale: float = 1.0) -> MetricSpec:
    if isinstance(model, FlatTorus):
        return flat_torus_metric(model, scale)
    if isinstance(model, FuchsianSurface):
        return halfplane_metric(scale)
    if isinstance(model, WarpedCylinder):
        return warped_metric(model, scale)
    if isinstance(model, Product):
        mets = [default_metric(f, scale) for f in model.factors]
        return product_metric(model, mets)
    if isinstance(model, MappingTorus):
        raise UnsupportedModel("mapping torus metrics are handled structurally")
    raise UnsupportedModel(model.kind)


def product_metric(model: Product, metrics: Sequence[MetricSpec]) -> MetricSpec:
    dims = [f.dim for f in model.factors]
    d = sum(dims)

    def matrix(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (d, d))
        o = 0
        for met, k in zip(metrics, dims):
            out[..., o:o + k, o:o + k] = met.matrix(x[..., o:o + k])
            o += k
        return out

    return MetricSpec("riemannian", d, matrix, label="product")


def finsler_metric(dim: int, norm: Callable, label: str = "finsler") -> MetricSpec:
    return MetricSpec("finsler", dim, norm=norm, label=label)


# ---------------------------------------------------------------------------
# model files (JSON-compatible structured text)
# ---------------------------------------------------------------------------

_MODEL_KEYS = {
    "flat_torus": {"kind", "basis", "bumps"},
    "fuchsian": {"kind", "genus", "generators"},
    "warped_cylinder": {"kind", "profile", "r_window"},
    "product": {"kind", "factors"},
    "mapping_torus": {"kind", "fiber", "automorphism"},
}


def model_from_dict(data: dict) -> ModelSpace:
    kind = data.get("kind")
    if kind not in _MODEL_KEYS:
        raise ValueError(f"unknown model kind {kind!r}")
    extra = set(data) - _MODEL_KEYS[kind]
    if extra:
        raise ValueError(f"unknown keys for {kind}: {sorted(extra)}")
    if kind == "flat_torus":
        bumps = tuple(Bump(tuple(b["center"]), float(b["radius"]), float(b["amplitude"]))
                      for b in data.get("bumps", []))
        return FlatTorus(np.array(data["basis"], dtype=float), bumps)
    if kind == "fuchsian":
        gens = data.get("generators")
        genus = data.get("genus")
        if gens == "octagon":
            return FuchsianSurface(octagon_group())
        if gens is None:
            return FuchsianSurface(genus=int(genus))
        group = FuchsianGroup([np.array(g, dtype=float) for g in gens], int(genus))
        return FuchsianSurface(group)
    if kind == "warped_cylinder":
        p = data["profile"]
        prof = WarpProfile(p["name"], tuple(float(x) for x in p.get("params", [])))
        window = tuple(data.get("r_window", (-5.0, 5.0)))
        return WarpedCylinder(prof, window)
    if kind == "product":
        return Product([model_from_dict(f) for f in data["factors"]])
    if kind == "mapping_torus":
        fiber = model_from_dict(data["fiber"])
        auto = data["automorphism"]
        n = _alphabet_size(fiber)
        subst = tuple(parse_word(auto[_LETTERS[i]]) for i in range(n))
        inv = auto.get("inverse")
        if inv is not None:
            inv_subst = tuple(parse_word(inv[_LETTERS[i]]) for i in range(n))
        else:
            inv_subst = subst
        return MappingTorus(fiber, ClassAutomorphism("word", subst=subst,
                                                     inv_subst=inv_subst))
    raise AssertionError


def model_to_dict(model: ModelSpace) -> dict:
    if isinstance(model, FlatTorus):
        return {
            "kind": "flat_torus",
            "basis": model.basis.tolist(),
            "bumps": [
                {"center": list(b.center), "radius": b.radius, "amplitude": b.amplitude}
                for b in model.bumps
            ],
        }
    if isinstance(model, FuchsianSurface):
        out = {"kind": "fuchsian", "genus": model.genus}
        out["generators"] = ([g.tolist() for g in model.group.generators]
                             if model.group is not None else None)
        return out
    if isinstance(model, WarpedCylinder):
        return {
            "kind": "warped_cylinder",
            "profile": {"name": model.profile.name, "params": list(model.profile.params)},
            "r_window": list(model.r_window),
        }
    if isinstance(model, Product):
        return {"kind": "product", "factors": [model_to_dict(f) for f in model.factors]}
    if isinstance(model, MappingTorus):
        n = _alphabet_size(model.fiber)
        auto = {_LETTERS[i]: word_str(model.automorphism.subst[i]) for i in range(n)}
        auto["inverse"] = {_LETTERS[i]: word_str(model.automorphism.inv_subst[i])
                           for i in range(n)}
        return {"kind": "mapping_torus", "fiber": model_to_dict(model.fiber),
                "automorphism": auto}
    raise UnsupportedModel(model.kind)


def model_from_json(text: str) -> ModelSpace:
    return model_from_dict(json.loads(text))


def model_to_json(model: ModelSpace) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True, indent=2)
