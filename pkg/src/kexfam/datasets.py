"""Synthetic benchmark densities (ring, grid, gaussian) with analytic scores.

All sampling uses a Philox counter-based generator seeded explicitly.  Draws
are consumed in a fixed order so a (n, d, params, seed) tuple always yields
the same matrix:

* ring: circle index (n), angle (n), radial noise (n), extra dims (n, d - 2)
* grid: vertex draws (only when vertices are not given), component index (n),
  then standard normals (n, d)
* gaussian: standard normals (n, d)
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp


def make_rng(seed) -> np.random.Generator:
    if seed is None:
        raise ValueError("an explicit seed is required")
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class RingParams:
    radii: tuple = (1.0, 3.0, 5.0)
    radial_std: float = 0.1
    noise_std: float = 0.1

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        object.__setattr__(self, "radii", radii)
        if not radii or any(r <= 0 for r in radii) or len(set(radii)) != len(radii):
            raise ValueError("radii must be positive and distinct")
        if self.radial_std < 0 or self.noise_std <= 0:
            raise ValueError("standard deviations must be positive")


@dataclass(frozen=True)
class GridParams:
    """Mixture of isotropic Gaussians at hypercube vertices.

    ``vertices`` is None until resolved for a given dimension by
    :meth:`resolve`; a resolved instance is what ``grid_true_score`` needs.
    """

    side: float = 4.0
    component_std: float = 1.0
    vertices: tuple | None = None
    weights: tuple | None = None

    def __post_init__(self):
        if self.side <= 0 or self.component_std <= 0:
            raise ValueError("side and component_std must be positive")
        if self.vertices is not None:
            V = np.asarray(self.vertices, dtype=float)
            if V.ndim != 2:
                raise ValueError("vertices must be a matrix")
            if not np.all((V == 0) | (V == self.side)):
                raise ValueError("vertex coordinates must be 0 or side")
            object.__setattr__(self, "vertices", tuple(map(tuple, V.tolist())))
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0) or not np.isclose(w.sum(), 1.0):
                raise ValueError("weights must be a probability vector")
            object.__setattr__(self, "weights", tuple(w.tolist()))

    def resolve(self, d: int, rng: np.random.Generator) -> "GridParams":
        if self.vertices is not None:
            if len(self.vertices[0]) != d:
                raise ValueError("vertex dimension does not match d")
            return self
        V = _draw_vertices(d, rng) * self.side
        return GridParams(self.side, self.component_std, tuple(map(tuple, V.tolist())), self.weights)

    def weight_vector(self) -> np.ndarray:
        k = len(self.vertices)
        if self.weights is None:
            return np.full(k, 1.0 / k)
        if len(self.weights) != k:
            raise ValueError("one weight per vertex required")
        return np.asarray(self.weights)


def _draw_vertices(d, rng):
    # d distinct corners of {0, 1}^d; d <= 2^d for every d >= 1
    chosen = []
    seen = set()
    while len(chosen) < d:
        bits = tuple(rng.integers(0, 2, size=d).tolist())
        if bits not in seen:
            seen.add(bits)
            chosen.append(bits)
    return np.array(chosen, dtype=float)


@dataclass(frozen=True)
class GaussianParams:
    mean: float = 0.0
    std: float = 1.0


@dataclass
class Dataset:
    points: np.ndarray
    generator: str = "external"
    seed: int | None = None
    params: object = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.shape[0] < 1 or self.points.shape[1] < 1:
            raise ValueError("dataset needs at least one point and one dimension")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("dataset contains non-finite entries")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.points[np.asarray(idx)], self.generator, self.seed, self.params)

    def true_score(self):
        """Analytic score function of the generating density, or None."""
        return true_score_for(self.generator, self.params)

    def true_logpdf(self):
        return true_logpdf_for(self.generator, self.params)

    # -- serialization -----------------------------------------------------

    def to_csv(self, path) -> None:
        path = Path(path)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(self.d)])
        for row in self.points:
            w.writerow([repr(float(v)) for v in row])
        path.write_text(buf.getvalue(), encoding="utf-8")
        sidecar = {"generator": self.generator, "seed": self.seed,
                   "n": self.n, "d": self.d, "params": params_to_dict(self.params)}
        sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        path = Path(path)
        with path.open(encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if not all(h == f"x{i + 1}" for i, h in enumerate(header)):
            raise ValueError(f"unexpected CSV header {header}")
        points = np.array([[float(v) for v in r] for r in body], dtype=float)
        side = sidecar_path(path)
        if side.exists():
            meta = json.loads(side.read_text(encoding="utf-8"))
            return cls(points, meta["generator"], meta["seed"],
                       params_from_dict(meta["generator"], meta["params"]))
        return cls(points)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def params_to_dict(params):
    if params is None:
        return None
    out = asdict(params)
    for k, v in out.items():
        if isinstance(v, tuple):
            out[k] = [list(x) if isinstance(x, tuple) else x for x in v]
    return out


def params_from_dict(generator, data):
    if data is None:
        return None
    cls = {"ring": RingParams, "grid": GridParams, "gaussian": GaussianParams}[generator]
    kw = dict(data)
    for k, v in kw.items():
        if isinstance(v, list):
            kw[k] = tuple(tuple(x) if isinstance(x, list) else x for x in v)
    return cls(**kw)


# -- ring ----------------------------------------------------------------------

def sample_ring(n: int, d: int, params: RingParams | None = None, seed=None) -> Dataset:
    if d < 2:
        raise ValueError("ring data needs d >= 2")
    if n < 1:
        raise ValueError("n must be positive")
    params = params or RingParams()
    rng = make_rng(seed)
    radii = np.asarray(params.radii)
    which = rng.integers(0, len(radii), size=n)
    angle = rng.uniform(0.0, 2 * np.pi, size=n)
    r = radii[which] + params.radial_std * rng.standard_normal(n)
    extra = params.noise_std * rng.standard_normal((n, d - 2))
    X = np.column_stack([r * np.cos(angle), r * np.sin(angle), extra])
    return Dataset(X, "ring", seed, params)


def _ring_split(x):
    x = np.asarray(x, dtype=float)
    r = np.hypot(x[..., 0], x[..., 1])
    if np.any(r == 0):
        raise ValueError("ring score is undefined on the axis r = 0")
    return x, r


def ring_logpdf(params: RingParams, x) -> np.ndarray:
    """Unnormalized log-density; the 1/r term is the polar-area Jacobian."""
    x, r = _ring_split(x)
    radii = np.asarray(params.radii)
    s2 = params.radial_std**2
    logs = -0.5 * (r[..., None] - radii) ** 2 / s2
    out = logsumexp(logs, axis=-1) - np.log(r)
    out = out - 0.5 * np.sum(x[..., 2:] ** 2, axis=-1) / params.noise_std**2
    return out


def ring_true_score(params: RingParams, x) -> np.ndarray:
    x, r = _ring_split(x)
    radii = np.asarray(params.radii)
    s2 = params.radial_std**2
    logs = -0.5 * (r[..., None] - radii) ** 2 / s2
    resp = np.exp(logs - logsumexp(logs, axis=-1, keepdims=True))
    dr = np.sum(resp * (radii - r[..., None]), axis=-1) / s2 - 1.0 / r
    g = np.empty_like(x)
    g[..., 0] = dr * x[..., 0] / r
    g[..., 1] = dr * x[..., 1] / r
    g[..., 2:] = -x[..., 2:] / params.noise_std**2
    return g


# -- grid ----------------------------------------------------------------------

def sample_grid(n: int, d: int, params: GridParams | None = None, seed=None) -> Dataset:
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    rng = make_rng(seed)
    params = (params or GridParams()).resolve(d, rng)
    V = np.asarray(params.vertices)
    w = params.weight_vector()
    comp = rng.choice(len(w), size=n, p=w)
    X = V[comp] + params.component_std * rng.standard_normal((n, d))
    return Dataset(X, "grid", seed, params)


def _grid_logs(params, x):
    V = np.asarray(params.vertices)
    w = params.weight_vector()
    x = np.asarray(x, dtype=float)
    diff = V - x[..., None, :]
    s2 = params.component_std**2
    with np.errstate(divide="ignore"):
        logs = np.log(w) - 0.5 * np.sum(diff**2, axis=-1) / s2
    return diff, logs, s2


def grid_logpdf(params: GridParams, x) -> np.ndarray:
    _, logs, _ = _grid_logs(params, x)
    return logsumexp(logs, axis=-1)


def grid_true_score(params: GridParams, x) -> np.ndarray:
    diff, logs, s2 = _grid_logs(params, x)
    resp = np.exp(logs - logsumexp(logs, axis=-1, keepdims=True))
    return np.sum(resp[..., None] * diff, axis=-2) / s2


# -- gaussian ------------------------------------------------------------------

def sample_gaussian(n: int, d: int, params: GaussianParams | None = None, seed=None) -> Dataset:
    params = params or GaussianParams()
    rng = make_rng(seed)
    X = params.mean + params.std * rng.standard_normal((n, d))
    return Dataset(X, "gaussian", seed, params)


def gaussian_logpdf(params: GaussianParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return -0.5 * np.sum((x - params.mean) ** 2, axis=-1) / params.std**2


def gaussian_true_score(params: GaussianParams, x) -> np.ndarray:
    return -(np.asarray(x, dtype=float) - params.mean) / params.std**2


SAMPLERS = {"ring": sample_ring, "grid": sample_grid, "gaussian": sample_gaussian}
_SCORES = {"ring": ring_true_score, "grid": grid_true_score, "gaussian": gaussian_true_score}
_LOGPDFS = {"ring": ring_logpdf, "grid": grid_logpdf, "gaussian": gaussian_logpdf}


def true_score_for(generator, params):
    if generator not in _SCORES or params is None:
        return None
    fn = _SCORES[generator]
    return lambda x: fn(params, x)


def true_logpdf_for(generator, params):
    if generator not in _LOGPDFS or params is None:
        return None
    fn = _LOGPDFS[generator]
    return lambda x: fn(params, x)


def generate(kind: str, n: int, d: int, seed, params=None) -> Dataset:
    try:
        sampler = SAMPLERS[kind]
    except KeyError:
        raise ValueError(f"unknown dataset kind {kind!r}") from None
    return sampler(n, d, params, seed)
