"""Two-level Hermitian Toeplitz matrices and their adjoint."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass
class Toeplitz2Param:
    """Generating sequence of a 2-level Toeplitz matrix.

    ``values[k1 + m1 - 1, k2 + m2 - 1]`` holds ``u[k1][k2]`` for
    ``|k1| < m1``, ``|k2| < m2``.
    """

    m1: int
    m2: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (2 * self.m1 - 1, 2 * self.m2 - 1):
            raise ValueError(f"values shape {self.values.shape} does not match levels ({self.m1}, {self.m2})")

    @classmethod
    def zeros(cls, m1: int, m2: int) -> "Toeplitz2Param":
        return cls(m1, m2, np.zeros((2 * m1 - 1, 2 * m2 - 1), dtype=complex))

    @classmethod
    def from_atoms(cls, m1: int, m2: int, f1, f2, powers) -> "Toeplitz2Param":
        """Sequence of ``sum_k p_k v_k v_k^H`` with ``v_k = a_m1(f1_k) kron a_m2(f2_k)``."""
        k1 = np.arange(-(m1 - 1), m1)
        k2 = np.arange(-(m2 - 1), m2)
        vals = np.zeros((2 * m1 - 1, 2 * m2 - 1), dtype=complex)
        for a, b, p in zip(np.atleast_1d(f1), np.atleast_1d(f2), np.atleast_1d(powers)):
            vals += p * np.exp(-2j * np.pi * (k1[:, None] * a + k2[None, :] * b))
        return cls(m1, m2, vals / (m1 * m2))

    def get(self, k1: int, k2: int) -> complex:
        return self.values[k1 + self.m1 - 1, k2 + self.m2 - 1]

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        v = self.values
        return bool(np.allclose(v, v[::-1, ::-1].conj(), atol=tol * max(1.0, np.abs(v).max())))

    def hermitian_part(self) -> "Toeplitz2Param":
        return Toeplitz2Param(self.m1, self.m2, 0.5 * (self.values + self.values[::-1, ::-1].conj()))

    def __mul__(self, a) -> "Toeplitz2Param":
        return Toeplitz2Param(self.m1, self.m2, a * self.values)

    __rmul__ = __mul__


@lru_cache(maxsize=32)
def _lag_index(m1: int, m2: int) -> np.ndarray:
    i = np.repeat(np.arange(m1), m2)
    a = np.tile(np.arange(m2), m1)
    k1 = i[:, None] - i[None, :] + m1 - 1
    k2 = a[:, None] - a[None, :] + m2 - 1
    idx = k1 * (2 * m2 - 1) + k2
    idx.setflags(write=False)
    return idx


@lru_cache(maxsize=32)
def lag_multiplicity(m1: int, m2: int) -> np.ndarray:
    """Number of matrix entries carrying each lag ``(k1, k2)``."""
    k1 = np.arange(-(m1 - 1), m1)
    k2 = np.arange(-(m2 - 1), m2)
    mult = np.outer(m1 - np.abs(k1), m2 - np.abs(k2)).astype(float)
    mult.setflags(write=False)
    return mult


def toeplitz2(p: Toeplitz2Param) -> np.ndarray:
    """Materialize the ``(m1*m2) x (m1*m2)`` block-Toeplitz matrix with Toeplitz blocks."""
    return p.values.ravel()[_lag_index(p.m1, p.m2)]


def toeplitz2_adjoint(x: np.ndarray, m1: int, m2: int) -> Toeplitz2Param:
    """Adjoint of :func:`toeplitz2` under the real inner product ``Re tr(A^H B)``."""
    idx = _lag_index(m1, m2).ravel()
    n = (2 * m1 - 1) * (2 * m2 - 1)
    flat = np.asarray(x).ravel()
    vals = np.bincount(idx, weights=flat.real, minlength=n) + 1j * np.bincount(idx, weights=flat.imag, minlength=n)
    return Toeplitz2Param(m1, m2, vals.reshape(2 * m1 - 1, 2 * m2 - 1))
