"""Probabilistic checks of a submitted block product.

Both checkers draw from an explicitly passed ``numpy.random.Generator`` so a
verification can be replayed. With ``tol=0`` (integer mode) comparisons are
exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tasks import NSubResult, NSubTask

SPOT = "spot"
FREIVALDS = "freivalds"


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    location: tuple[int, int] | None = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.accepted


ACCEPT = Verdict(True)


def _shape_problem(nst: NSubTask, res: NSubResult) -> Verdict | None:
    b = nst.b
    if res.product.shape != (b, b):
        return Verdict(False, None, f"product shape {res.product.shape} != ({b}, {b})")
    if res.ids != nst.ids:
        return Verdict(False, None, f"result ids {res.ids} do not match nsub-task {nst.ids}")
    return None


def verify_spot(nst: NSubTask, res: NSubResult, rounds: int, rng: np.random.Generator, tol: float = 0.0) -> Verdict:
    """Recompute ``rounds`` uniformly drawn elements of the product and compare.

    Each round costs one length-``b`` dot product. Locations are drawn with
    replacement; the verdict names the first mismatching one.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    bad = _shape_problem(nst, res)
    if bad is not None:
        return bad
    locs = rng.integers(0, nst.b, size=(rounds, 2))
    r, c = locs[:, 0], locs[:, 1]
    expect = (nst.a_block.array[r] * nst.b_block.array.T[c]).sum(axis=1)
    got = res.product.array[r, c]
    miss = (expect != got) if tol == 0 else ~(np.abs(expect - got) <= tol)
    if miss.any():
        first = int(miss.argmax())
        loc = (int(r[first]), int(c[first]))
        return Verdict(False, loc, f"element {loc}: claimed {got[first]!r}, recomputed {expect[first]!r}")
    return ACCEPT


def verify_freivalds(
    nst: NSubTask, res: NSubResult, rounds: int, rng: np.random.Generator, tol: float = 0.0
) -> Verdict:
    """Freivalds check with 0/1 vectors; a wrong product survives a round with probability <= 1/2."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    bad = _shape_problem(nst, res)
    if bad is not None:
        return bad
    x = rng.integers(0, 2, size=(nst.b, rounds)).astype(np.float64)
    lhs = nst.a_block.array @ (nst.b_block.array @ x)
    rhs = res.product.array @ x
    diff = np.abs(lhs - rhs)
    failed = (diff != 0).any(axis=0) if tol == 0 else (diff > tol).any(axis=0)
    if failed.any():
        first = int(np.argmax(failed))
        return Verdict(False, None, f"round {first + 1} of {rounds}: A(Bx) != Cx")
    return ACCEPT


VERIFIERS = {SPOT: verify_spot, FREIVALDS: verify_freivalds}


def get_verifier(name: str):
    try:
        return VERIFIERS[name]
    except KeyError:
        raise ValueError(f"unknown verifier {name!r}; choose from {sorted(VERIFIERS)}") from None
