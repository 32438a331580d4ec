"""Shared surface of the approximation families.

Families are immutable values.  Each one knows how to sample itself, score
points, expose its blocked parameter layout, report its closed-form
Christoffel contraction, and estimate its own natural gradient against a
target model.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field

import numpy as np

from iblr.blocks import BlockedPoint, BlockedTangent, ChristoffelContraction, PositiveScalar, RealVector, SPD
from iblr.errors import ShapeMismatch
from iblr.linalg import SPDMatrix
from iblr.rng import RngStream

_REGISTRY: dict[str, type["Family"]] = {}


def register_family(cls):
    _REGISTRY[cls.kind] = cls
    return cls


@dataclass
class NaturalGradientEstimate:
    """Per-block natural-gradient values plus Monte-Carlo metadata."""

    blocks: BlockedTangent
    estimator: str
    samples: int
    aux: dict = field(default_factory=dict)


class Family(abc.ABC):
    kind: str = ""

    @abc.abstractmethod
    def sample(self, rng: RngStream, n: int) -> np.ndarray: ...

    @abc.abstractmethod
    def log_density(self, z) -> np.ndarray: ...

    @abc.abstractmethod
    def blocked_point(self) -> BlockedPoint: ...

    @classmethod
    @abc.abstractmethod
    def from_blocked(cls, point: BlockedPoint) -> "Family": ...

    @abc.abstractmethod
    def christoffel_contraction(self) -> ChristoffelContraction: ...

    @abc.abstractmethod
    def natural_gradient(
        self, model, rng: RngStream, n_samples: int, estimator: str = "rep", **kwargs
    ) -> NaturalGradientEstimate: ...


def from_blocked(kind: str, point: BlockedPoint, **meta) -> Family:
    try:
        cls = _REGISTRY[kind]
    except KeyError:
        raise ShapeMismatch(f"unknown family kind {kind!r}") from None
    return cls.from_blocked(point, **meta)


def natural_gradient(family: Family, model, rng, n_samples, estimator="rep", **kwargs):
    return family.natural_gradient(model, rng, n_samples, estimator=estimator, **kwargs)


def _encode_value(constraint, value):
    if isinstance(constraint, SPD):
        return np.asarray(value.data).tolist()
    if isinstance(constraint, RealVector):
        return np.asarray(value, dtype=float).tolist()
    return float(value)


def family_to_json(family: Family) -> dict:
    """{"family": kind, "blocks": [{"kind": ..., "value": ...}]} with
    row-major matrices; floats round-trip losslessly through decimal."""
    point = family.blocked_point()
    blocks = []
    for c, v in point.blocks:
        if isinstance(c, SPD):
            blocks.append({"kind": "spd", "value": _encode_value(c, v)})
        elif isinstance(c, RealVector):
            blocks.append({"kind": "real_vector", "value": _encode_value(c, v)})
        else:
            blocks.append({"kind": "positive_scalar", "value": _encode_value(c, v)})
    doc = {"family": family.kind, "blocks": blocks}
    meta = getattr(family, "json_meta", None)
    if meta:
        doc["meta"] = meta()
    return doc


def family_from_json(doc: dict) -> Family:
    blocks = []
    for item in doc["blocks"]:
        kind = item["kind"]
        if kind == "spd":
            data = np.asarray(item["value"], dtype=float)
            blocks.append((SPD(data.shape[0]), SPDMatrix(data)))
        elif kind == "real_vector":
            vec = np.asarray(item["value"], dtype=float)
            blocks.append((RealVector(vec.size), vec))
        elif kind == "positive_scalar":
            blocks.append((PositiveScalar(), float(item["value"])))
        else:
            raise ShapeMismatch(f"unknown block kind {kind!r}")
    return from_blocked(doc["family"], BlockedPoint(blocks), **doc.get("meta", {}))


def legacy_blr_natural_gradient(family, model, rng, n_samples, estimator="rep", **kwargs):
    """Gradients for the first-order rule in the original natural
    parameterization: (grad mean, Hessian mean) for the full Gaussian,
    (ghat_alpha, ghat_beta) for the gamma.  Dispatches on the family."""
    fn = getattr(family, "legacy_natural_gradient", None)
    if fn is None:
        raise ShapeMismatch(f"family {family.kind!r} has no legacy-rule parameterization")
    return fn(model, rng, n_samples, estimator=estimator, **kwargs)
