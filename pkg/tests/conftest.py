"""Shared fixtures: small reference codes and random candidates."""

import numpy as np

from qecbo.codes import BbParams, CssCode, HgpParams, bb_from_bits, hgp
from qecbo.gf2 import BitMatrix, BitVector


def repetition_check(r: int) -> BitMatrix:
    """Cyclic repetition parity check: row i has ones at i and i+1 mod r."""
    return BitMatrix(r, r, [(1 << i) | (1 << ((i + 1) % r)) for i in range(r)])


def toric_code(length: int = 3) -> CssCode:
    h = repetition_check(length)
    code = hgp(HgpParams(h1=h, h2=h))
    assert code is not None
    return code


def random_bb_params(rng: np.random.Generator, ell: int = 6, em: int = 3) -> BbParams:
    dim = 2 * (ell + em - 1)
    return BbParams(ell=ell, em=em, bits=BitVector.from_array(rng.integers(0, 2, size=dim)))


def random_valid_bb(rng: np.random.Generator, ell: int = 6, em: int = 3) -> CssCode:
    while True:
        code = bb_from_bits(random_bb_params(rng, ell, em))
        if code is not None:
            return code


def gross_code_params() -> BbParams:
    """Coefficients a = x^3 + y + y^2, b = y^3 + x + x^2 at (l, m) = (12, 6)."""
    half = 12 + 6 - 1
    bits = sum(1 << i for i in (3, 13, 14)) | sum(1 << (half + i) for i in (1, 2, 15))
    return BbParams(ell=12, em=6, bits=BitVector(2 * half, bits))
