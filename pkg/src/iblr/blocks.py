"""Blocked parameters and the constraint-preserving retraction update.

A variational parameter is an ordered list of blocks, each either an
unconstrained real vector, a positive scalar, or an SPD matrix.  The update
applied to every block c is

    lam_c <- lam_c - t * ghat_c - (t^2 / 2) * contraction_c(lam, ghat),

where the contraction is the block's Christoffel term Gamma^c_ab ghat^a
ghat^b.  A plain first-order step (no contraction) is also provided; it may
leave the feasible set and reports that instead of enforcing it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from iblr.errors import InfeasibleResult, NotPositiveDefinite, ShapeMismatch
from iblr.linalg import SPDMatrix, symmetrize

POSITIVE_FLOOR = 1e-12
SPD_PIVOT_FLOOR = 1e-12


@dataclass(frozen=True)
class RealVector:
    dim: int


@dataclass(frozen=True)
class PositiveScalar:
    pass


@dataclass(frozen=True)
class SPD:
    dim: int


Constraint = RealVector | PositiveScalar | SPD


@dataclass
class BlockedPoint:
    """Ordered (constraint, value) pairs; SPD values are SPDMatrix instances."""

    blocks: list[tuple[Constraint, object]]

    def __len__(self) -> int:
        return len(self.blocks)

    def values(self) -> list:
        return [v for _, v in self.blocks]

    def constraints(self) -> list[Constraint]:
        return [c for c, _ in self.blocks]

    def copy(self) -> "BlockedPoint":
        out = []
        for c, v in self.blocks:
            if isinstance(c, SPD):
                out.append((c, v.copy()))
            elif isinstance(c, RealVector):
                out.append((c, np.array(v, dtype=float)))
            else:
                out.append((c, float(v)))
        return BlockedPoint(out)


@dataclass
class BlockedTangent:
    """Per-block tangent values mirroring a point's shapes."""

    values: list

    def __len__(self) -> int:
        return len(self.values)

    @classmethod
    def zeros_like(cls, point: BlockedPoint) -> "BlockedTangent":
        vals = []
        for c, v in point.blocks:
            if isinstance(c, SPD):
                vals.append(np.zeros((c.dim, c.dim)))
            elif isinstance(c, RealVector):
                vals.append(np.zeros(c.dim))
            else:
                vals.append(0.0)
        return cls(vals)

    def scaled(self, a: float) -> "BlockedTangent":
        return BlockedTangent([a * np.asarray(v) if np.ndim(v) else a * v for v in self.values])


# Per-block function mapping (block value, tangent block) to the contraction
# Gamma^c_ab ghat^a ghat^b; None means the block's symbols vanish.
ContractionFn = Callable[[object, object], object]


@dataclass
class ChristoffelContraction:
    fns: Sequence[ContractionFn | None]
    # Blocks whose second-order update carries a closed-form feasibility
    # guarantee; the built-in families set this everywhere it applies.
    guaranteed: Sequence[bool] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.guaranteed:
            self.guaranteed = tuple(True for _ in self.fns)

    def apply(self, index: int, value, tangent):
        fn = self.fns[index]
        if fn is None:
            return None
        return fn(value, tangent)


def _check_congruent(point: BlockedPoint, tangent: BlockedTangent) -> None:
    if len(point) != len(tangent):
        raise ShapeMismatch(f"point has {len(point)} blocks, tangent has {len(tangent)}")
    for (c, v), g in zip(point.blocks, tangent.values):
        if isinstance(c, RealVector):
            if np.shape(g) != (c.dim,):
                raise ShapeMismatch(f"expected tangent shape ({c.dim},), got {np.shape(g)}")
        elif isinstance(c, SPD):
            if np.shape(g) != (c.dim, c.dim):
                raise ShapeMismatch(f"expected tangent shape ({c.dim},{c.dim}), got {np.shape(g)}")
        else:
            if np.ndim(g) != 0:
                raise ShapeMismatch("positive-scalar block needs a scalar tangent")


def value_feasible(constraint: Constraint, value) -> bool:
    """Feasibility with a floating-point floor under the open-set constraints."""
    if isinstance(constraint, RealVector):
        return bool(np.all(np.isfinite(value)))
    if isinstance(constraint, PositiveScalar):
        return bool(np.isfinite(value)) and value > POSITIVE_FLOOR
    data = value.data if isinstance(value, SPDMatrix) else np.asarray(value, dtype=float)
    if not np.all(np.isfinite(data)):
        return False
    try:
        chol = np.linalg.cholesky(symmetrize(data))
    except np.linalg.LinAlgError:
        return False
    floor = SPD_PIVOT_FLOOR * np.trace(data) / constraint.dim
    return bool(np.all(np.diag(chol) ** 2 > floor))


def retraction_step(
    point: BlockedPoint,
    nat_grad: BlockedTangent,
    t: float,
    gamma: ChristoffelContraction,
) -> BlockedPoint:
    """Second-order block update; all blocks read the old point.

    Raises :class:`InfeasibleResult` only when a block whose contraction does
    not carry a feasibility guarantee leaves the constraint set.  For the
    built-in families such an escape would be a bug, so it is re-raised as a
    hard error rather than masked.
    """
    _check_congruent(point, nat_grad)
    if len(gamma.fns) != len(point):
        raise ShapeMismatch("contraction does not match the block layout")
    new_blocks = []
    for i, ((c, v), g) in enumerate(zip(point.blocks, nat_grad.values)):
        contraction = gamma.apply(i, v, g)
        if isinstance(c, RealVector):
            new_v = np.asarray(v, dtype=float) - t * np.asarray(g, dtype=float)
            if contraction is not None:
                new_v = new_v - 0.5 * t * t * np.asarray(contraction, dtype=float)
            new_blocks.append((c, new_v))
            continue
        if isinstance(c, PositiveScalar):
            new_v = float(v) - t * float(g)
            if contraction is not None:
                new_v -= 0.5 * t * t * float(contraction)
            if not value_feasible(c, new_v):
                if not gamma.guaranteed[i]:
                    raise InfeasibleResult(f"positive-scalar block {i} left the feasible set")
                raise NotPositiveDefinite(0, f"guaranteed positive block {i} went non-positive")
            new_blocks.append((c, new_v))
            continue
        data = v.data - t * np.asarray(g, dtype=float)
        if contraction is not None:
            data = data - 0.5 * t * t * np.asarray(contraction, dtype=float)
        data = symmetrize(data)
        if not gamma.guaranteed[i] and not value_feasible(c, data):
            raise InfeasibleResult(f"SPD block {i} left the feasible set")
        new_blocks.append((c, SPDMatrix(data)))
    return BlockedPoint(new_blocks)


def ngd_step(
    point: BlockedPoint, nat_grad: BlockedTangent, t: float
) -> tuple[BlockedPoint, bool]:
    """First-order update.  Returns (new point, feasible flag); SPD blocks of
    an infeasible result hold raw arrays rather than validated matrices."""
    _check_congruent(point, nat_grad)
    new_blocks = []
    feasible = True
    for (c, v), g in zip(point.blocks, nat_grad.values):
        if isinstance(c, RealVector):
            new_blocks.append((c, np.asarray(v, dtype=float) - t * np.asarray(g, dtype=float)))
            continue
        if isinstance(c, PositiveScalar):
            new_v = float(v) - t * float(g)
            if not value_feasible(c, new_v):
                feasible = False
            new_blocks.append((c, new_v))
            continue
        data = symmetrize(v.data - t * np.asarray(g, dtype=float))
        if value_feasible(c, data):
            new_blocks.append((c, SPDMatrix(data)))
        else:
            feasible = False
            new_blocks.append((c, data))
    return BlockedPoint(new_blocks), feasible


def spd_contraction(value, tangent):
    """Contraction of the SPD-block symbols: -G S^-1 G for tangent G at S."""
    g = symmetrize(np.asarray(tangent, dtype=float))
    return -symmetrize(g @ value.solve(g))


def positive_inverse_contraction(value, tangent):
    """Contraction -g^2 / lam, shared by every Table-style positive block
    whose raised symbol is -1/lam."""
    return -float(tangent) ** 2 / float(value)
