"""Procedural scenes and estimate stacks with analytic references."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .model import AuxPlanes
from .vertical import EstimateStack

KINDS = ("constant", "sine_mul", "sine_add", "ramp", "binary", "heaviside_bank", "linear_integrand")
NOISES = ("uniform", "gaussian", "binary")


@dataclass(frozen=True)
class Step:
    """Integrand ``1[q >= a]`` on ``[0, 1]``."""

    a: float

    def __call__(self, q):
        return (np.asarray(q) >= self.a).astype(np.float64)

    @property
    def reference(self) -> float:
        return 1.0 - self.a


@dataclass(frozen=True)
class Linear:
    """Integrand ``f(q) = q`` on ``[0, 1]``."""

    def __call__(self, q):
        return np.asarray(q, dtype=np.float64)

    @property
    def reference(self) -> float:
        return 0.5


@dataclass
class SceneSpec:
    kind: str
    width: int = 64
    height: int = 64
    M: int = 1
    noise: str = "uniform"
    amplitude: float = 0.25  # uniform half-width, gaussian sigma
    value: float = 0.5  # constant level
    density: float = 0.5  # binary ones probability
    freq: float = 1.0  # sine radians per pixel along x + y
    count: int = 4  # heaviside integrands
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scene kind {self.kind!r}")
        if self.noise not in NOISES:
            raise ValueError(f"unknown noise {self.noise!r}")
        if self.width < 1 or self.height < 1 or self.M < 1 or self.count < 1:
            raise ValueError("dimensions, M and count must be positive")
        if self.amplitude < 0:
            raise ValueError("noise amplitude must be non-negative")
        if not 0.0 <= self.density <= 1.0:
            raise ValueError("density must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown scene fields: {sorted(extra)}")
        if "kind" not in d:
            raise ValueError("scene spec needs a 'kind'")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Scene:
    stack: EstimateStack
    reference: np.ndarray
    aux: AuxPlanes | None = None
    samples: np.ndarray | None = None
    integrands: list = field(default_factory=list)


def generator(seed: int) -> np.random.Generator:
    """Counter-based stream; draws are vectorized so results never depend on threading."""
    return np.random.Generator(np.random.Philox(seed))


def _noise(spec: SceneSpec, rng, shape) -> np.ndarray:
    if spec.noise == "uniform":
        return rng.uniform(-spec.amplitude, spec.amplitude, size=shape)
    if spec.noise == "gaussian":
        return rng.normal(0.0, spec.amplitude, size=shape)
    raise ValueError("binary noise is only meaningful for the constant scene")


def _sine(spec: SceneSpec) -> np.ndarray:
    y, x = np.indices((spec.height, spec.width), dtype=np.float64)
    return 0.5 * (1.0 + np.sin(spec.freq * (x + y)))


def generate(spec: SceneSpec) -> Scene:
    rng = generator(spec.seed)
    H, W, M = spec.height, spec.width, spec.M
    shape = (M, H, W)
    if spec.kind == "constant":
        ref = np.full((H, W), float(spec.value))
        if spec.noise == "binary":
            if not 0.0 <= spec.value <= 1.0:
                raise ValueError("binary noise needs a value in [0, 1]")
            est = (rng.random(shape) < spec.value).astype(np.float64)
        else:
            est = ref[None] + _noise(spec, rng, shape)
        return Scene(EstimateStack(est), ref)
    if spec.kind == "sine_mul":
        alpha = _sine(spec)
        w = rng.uniform(0.0, 2.0, size=shape)
        return Scene(EstimateStack(alpha[None] * w, aux=AuxPlanes(alpha, np.zeros_like(alpha))),
                     alpha.copy(), AuxPlanes(alpha, np.zeros_like(alpha)))
    if spec.kind == "sine_add":
        ref = _sine(spec)
        est = ref[None] + _noise(spec, rng, shape)
        aux = AuxPlanes(np.ones_like(ref), ref.copy())
        return Scene(EstimateStack(est, aux=aux), ref, aux)
    if spec.kind == "ramp":
        ref = np.tile(np.linspace(0.0, 1.0, W), (H, 1))
        est = ref[None] + _noise(spec, rng, shape)
        return Scene(EstimateStack(est), ref)
    if spec.kind == "binary":
        est = (rng.random(shape) < spec.density).astype(np.float64)
        return Scene(EstimateStack(est), np.full((H, W), float(spec.density)))
    samples = rng.random((H, W, M))
    if spec.kind == "heaviside_bank":
        steps = [Step(float(a)) for a in rng.random(spec.count)]
        est = np.stack([f(samples) for f in steps], axis=-1)  # (H, W, M, T)
        ref = np.broadcast_to(np.array([f.reference for f in steps]), (H, W, len(steps))).copy()
        return Scene(EstimateStack(np.moveaxis(est, 2, 0)), ref, samples=samples, integrands=steps)
    # linear_integrand
    f = Linear()
    return Scene(EstimateStack(np.moveaxis(samples, 2, 0).copy()), np.full((H, W), f.reference),
                 samples=samples, integrands=[f])
