"""Linear forward operators with adjoints and SVD pseudo-inverses."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .tensor_io import ParseError, format_tensor, parse_tensor

RANK_TOL = 1e-10


class DimensionError(ValueError):
    pass


class EmptyOperatorError(ValueError):
    pass


@dataclass(frozen=True)
class SVD:
    U: np.ndarray  # (m, r)
    S: np.ndarray  # (r,) strictly positive, descending
    V: np.ndarray  # (n, r)

    @property
    def rank(self) -> int:
        return self.S.size


def truncated_svd(matrix: np.ndarray, tol: float = RANK_TOL) -> SVD:
    """Thin SVD keeping singular values above ``tol * max(S)``."""
    matrix = np.asarray(matrix, dtype=np.float64)
    m, n = matrix.shape
    if m == 0 or n == 0 or not np.any(matrix):
        return SVD(np.zeros((m, 0)), np.zeros(0), np.zeros((n, 0)))
    u, s, vt = np.linalg.svd(matrix, full_matrices=False)
    keep = s > tol * s[0]
    return SVD(u[:, keep], s[keep], vt[keep].T)


def numerical_rank(matrix: np.ndarray, tol: float = RANK_TOL) -> int:
    return truncated_svd(matrix, tol).rank


@dataclass(frozen=True, eq=False)
class LinearOperator:
    """Forward map ``A: R^n -> R^m``.

    Inputs may be a single vector ``(n,)`` or a batch ``(B, n)``; the last
    axis is always the one acted on.
    """

    kind: str
    m: int
    n: int
    keep: np.ndarray | None = None
    rows: tuple[int, ...] | None = None
    dense: np.ndarray | None = field(default=None, repr=False)

    @cached_property
    def matrix(self) -> np.ndarray:
        if self.kind == "mask":
            mat = np.zeros((self.m, self.n))
            mat[np.arange(self.m), self.kept_index] = 1.0
        elif self.kind == "dft-rows":
            mat = _dft_matrix(self.rows, self.n)
        else:
            mat = np.array(self.dense, dtype=np.float64)
        mat.setflags(write=False)
        return mat

    @cached_property
    def kept_index(self) -> np.ndarray:
        return np.flatnonzero(self.keep)

    @cached_property
    def svd(self) -> SVD:
        if self.kind == "mask":
            eye = np.eye(self.m)
            V = np.zeros((self.n, self.m))
            V[self.kept_index, np.arange(self.m)] = 1.0
            return SVD(eye, np.ones(self.m), V)
        return truncated_svd(self.matrix)

    @property
    def rank(self) -> int:
        return self.svd.rank

    @cached_property
    def pinv_matrix(self) -> np.ndarray:
        """Dense ``A^+`` of shape ``(n, m)``."""
        if self.kind == "mask":
            mat = self.matrix.T.copy()
        else:
            U, S, V = self.svd.U, self.svd.S, self.svd.V
            mat = (V / S) @ U.T
        mat.setflags(write=False)
        return mat

    @cached_property
    def projector(self) -> np.ndarray:
        """Orthogonal projector ``A^+ A`` onto the row space, ``(n, n)``."""
        V = self.svd.V
        mat = V @ V.T
        mat.setflags(write=False)
        return mat

    def _check(self, v, expected, name):
        v = np.asarray(v, dtype=np.float64)
        if v.ndim not in (1, 2) or v.shape[-1] != expected:
            raise DimensionError(f"{name}: expected last dimension {expected}, got shape {v.shape}")
        return v

    def apply(self, x) -> np.ndarray:
        x = self._check(x, self.n, "apply")
        if self.kind == "mask":
            return x[..., self.kept_index]
        return x @ self.matrix.T

    def adjoint(self, y) -> np.ndarray:
        y = self._check(y, self.m, "adjoint")
        if self.kind == "mask":
            out = np.zeros(y.shape[:-1] + (self.n,))
            out[..., self.kept_index] = y
            return out
        return y @ self.matrix

    def pinv_apply(self, y) -> np.ndarray:
        y = self._check(y, self.m, "pinv_apply")
        if self.kind == "mask":
            return self.adjoint(y)
        U, S, V = self.svd.U, self.svd.S, self.svd.V
        return ((y @ U) / S) @ V.T

    def measure(self, x, noise_std: float, rng: np.random.Generator) -> np.ndarray:
        if noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        y = self.apply(x)
        if noise_std == 0:
            return y
        return y + noise_std * rng.standard_normal(y.shape)


def make_mask_operator(keep) -> LinearOperator:
    keep = np.asarray(keep, dtype=bool).ravel()
    m = int(keep.sum())
    if m == 0:
        raise EmptyOperatorError("mask keeps no entries")
    keep.setflags(write=False)
    return LinearOperator("mask", m, keep.size, keep=keep)


def random_mask(n: int, drop_fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean keep-vector dropping exactly ``round(drop_fraction * n)`` entries."""
    if not 0 <= drop_fraction < 1:
        raise ValueError("drop_fraction must lie in [0, 1)")
    keep = np.ones(n, dtype=bool)
    keep[rng.permutation(n)[: int(round(drop_fraction * n))]] = False
    return keep


def window_mask(n: int, drop_fraction: float, start: int | None = None) -> np.ndarray:
    """Keep-vector with one contiguous dropped window (centered by default)."""
    width = int(round(drop_fraction * n))
    if start is None:
        start = (n - width) // 2
    keep = np.ones(n, dtype=bool)
    keep[np.arange(start, start + width) % n] = False
    return keep


def _dft_matrix(rows, n) -> np.ndarray:
    i = np.arange(n)
    out = []
    for k in rows:
        out.append(np.cos(2 * np.pi * k * i / n))
        if k != 0 and 2 * k != n:
            out.append(np.sin(2 * np.pi * k * i / n))
    return np.array(out) / np.sqrt(n)


def make_dft_rows_operator(rows, n: int) -> LinearOperator:
    """Real Fourier sampling: a cosine and a sine row per selected frequency.

    Rows are scaled by ``1/sqrt(n)``.  Frequencies 0 and ``n/2`` contribute only
    their cosine row.
    """
    rows = tuple(int(k) for k in rows)
    if not rows:
        raise EmptyOperatorError("no frequencies selected")
    if len(set(rows)) != len(rows):
        raise ValueError(f"duplicate frequency index in {rows}")
    bad = [k for k in rows if not 0 <= k < n]
    if bad:
        raise ValueError(f"frequency indices out of range [0, {n}): {bad}")
    m = sum(1 if k == 0 or 2 * k == n else 2 for k in rows)
    return LinearOperator("dft-rows", m, n, rows=rows)


def make_dense_operator(matrix) -> LinearOperator:
    mat = np.array(matrix, dtype=np.float64)
    if mat.ndim != 2:
        raise DimensionError(f"dense operator needs a 2-d matrix, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ValueError("operator entries must be finite")
    mat.setflags(write=False)
    return LinearOperator("dense", mat.shape[0], mat.shape[1], dense=mat)


# -- file format -----------------------------------------------------------

def format_operator(op: LinearOperator) -> str:
    head = f"kind: {op.kind}\n"
    if op.kind == "mask":
        return head + "mask: " + " ".join("1" if k else "0" for k in op.keep) + "\n"
    if op.kind == "dft-rows":
        return head + f"n: {op.n}\nrows: " + " ".join(str(k) for k in op.rows) + "\n"
    return head + format_tensor(op.matrix)


def save_operator(path, op: LinearOperator) -> None:
    Path(path).write_text(format_operator(op))


def parse_operator(text: str) -> LinearOperator:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("kind:"):
        raise ParseError("expected 'kind:' header", 1)
    kind = lines[0][len("kind:"):].strip()
    if kind == "mask":
        if len(lines) < 2 or not lines[1].startswith("mask:"):
            raise ParseError("expected 'mask:' line", 2)
        toks = lines[1][len("mask:"):].split()
        if any(t not in ("0", "1") for t in toks):
            raise ParseError("mask entries must be 0 or 1", 2)
        return make_mask_operator([t == "1" for t in toks])
    if kind == "dft-rows":
        try:
            n = int(lines[1].split(":", 1)[1]) if lines[1].startswith("n:") else None
            rows = [int(t) for t in lines[2].split(":", 1)[1].split()] if lines[2].startswith("rows:") else None
        except (IndexError, ValueError):
            raise ParseError("expected 'n:' and 'rows:' lines", 2) from None
        if n is None or rows is None:
            raise ParseError("expected 'n:' and 'rows:' lines", 2)
        return make_dft_rows_operator(rows, n)
    if kind == "dense":
        mat, _ = parse_tensor(lines, 1)
        if mat.ndim != 2:
            raise ParseError(f"dense operator must be 2-d, got shape {mat.shape}", 2)
        return make_dense_operator(mat)
    raise ParseError(f"unknown operator kind {kind!r}", 1)


def load_operator(path) -> LinearOperator:
    return parse_operator(Path(path).read_text())
