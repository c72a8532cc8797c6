"""Finite permutation groups acting on signals.

Every element is stored as a gather index over the flattened signal:
``act(g, x).ravel() == x.ravel()[perm(g)]``.  Elements are integers
``0..order-1`` with ``0`` the identity.

Conventions:

* ``shift1d:n`` -- element ``g`` moves entry ``i`` to ``(i + g) mod n``.
* ``shift2d:HxW`` -- element ``g = r*W + c`` rolls rows by ``r`` and columns by ``c``.
* ``dihedral4:HxH`` -- element ``g = 4*f + k`` is ``rot90^k`` (counterclockwise)
  applied after ``f`` horizontal flips.
* ``product(a,b)`` -- element ``i*|b| + j`` is ``T_a(i) T_b(j)``; the set must be
  closed under composition.
"""

from __future__ import annotations

import re

import numpy as np

MATERIALIZE_LIMIT = 4096


class GroupError(ValueError):
    pass


class TransformGroup:
    kind: str
    order: int
    signal_shape: tuple[int, ...]

    @property
    def n(self) -> int:
        return int(np.prod(self.signal_shape))

    def _check_index(self, g):
        if not isinstance(g, (int, np.integer)) or not 0 <= g < self.order:
            raise GroupError(f"element index {g!r} outside [0, {self.order})")

    def perm(self, g: int) -> np.ndarray:
        """Gather index of element ``g`` over the flattened signal."""
        self._check_index(g)
        return self._perm(int(g))

    def act(self, g: int, x) -> np.ndarray:
        x = np.asarray(x)
        if x.shape != self.signal_shape:
            raise GroupError(f"signal shape {x.shape} does not match group shape {self.signal_shape}")
        return x.ravel()[self.perm(g)].reshape(self.signal_shape)

    def act_flat(self, g: int, x) -> np.ndarray:
        """Act on flattened signals ``(..., n)``."""
        x = np.asarray(x)
        if x.shape[-1] != self.n:
            raise GroupError(f"last dimension {x.shape[-1]} does not match group size {self.n}")
        return x[..., self.perm(g)]

    def compose(self, a: int, b: int) -> int:
        """Index of ``T_a T_b`` (apply ``b`` first)."""
        self._check_index(a)
        self._check_index(b)
        return self._compose(int(a), int(b))

    def inverse(self, g: int) -> int:
        self._check_index(g)
        return self._inverse(int(g))

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.order))

    def materialize(self, g: int) -> np.ndarray:
        """Permutation matrix ``P`` with ``P @ x.ravel() == act(g, x).ravel()``."""
        if self.n > MATERIALIZE_LIMIT:
            raise GroupError(f"refusing to materialize a {self.n}x{self.n} matrix (limit {MATERIALIZE_LIMIT})")
        P = np.zeros((self.n, self.n))
        P[np.arange(self.n), self.perm(g)] = 1.0
        return P

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.spec!r})"


class CyclicShift1D(TransformGroup):
    kind = "shift1d"

    def __init__(self, n: int):
        if n < 1:
            raise GroupError("shift1d needs n >= 1")
        self.order = n
        self.signal_shape = (n,)
        self.spec = f"shift1d:{n}"

    def _perm(self, g):
        return (np.arange(self.order) - g) % self.order

    def _compose(self, a, b):
        return (a + b) % self.order

    def _inverse(self, g):
        return (-g) % self.order


class CyclicShift2D(TransformGroup):
    kind = "shift2d"

    def __init__(self, H: int, W: int):
        if H < 1 or W < 1:
            raise GroupError("shift2d needs positive dimensions")
        self.H, self.W = H, W
        self.order = H * W
        self.signal_shape = (H, W)
        self.spec = f"shift2d:{H}x{W}"

    def _split(self, g):
        return divmod(g, self.W)

    def _perm(self, g):
        r, c = self._split(g)
        rows = (np.arange(self.H) - r) % self.H
        cols = (np.arange(self.W) - c) % self.W
        return (rows[:, None] * self.W + cols[None, :]).ravel()

    def _compose(self, a, b):
        ra, ca = self._split(a)
        rb, cb = self._split(b)
        return ((ra + rb) % self.H) * self.W + (ca + cb) % self.W

    def _inverse(self, g):
        r, c = self._split(g)
        return ((-r) % self.H) * self.W + (-c) % self.W


class Dihedral4(TransformGroup):
    kind = "dihedral4"

    def __init__(self, H: int):
        if H < 1:
            raise GroupError("dihedral4 needs H >= 1")
        self.H = H
        self.order = 8
        self.signal_shape = (H, H)
        self.spec = f"dihedral4:{H}x{H}"
        grid = np.arange(H * H).reshape(H, H)
        self._perms = []
        for g in range(8):
            f, k = divmod(g, 4)
            img = np.fliplr(grid) if f else grid
            self._perms.append(np.ascontiguousarray(np.rot90(img, k)).ravel())

    def _perm(self, g):
        return self._perms[g].copy()

    def _compose(self, a, b):
        # R^ka F^fa R^kb F^fb = R^(ka + (-1)^fa kb) F^(fa + fb)
        fa, ka = divmod(a, 4)
        fb, kb = divmod(b, 4)
        k = (ka + (kb if fa == 0 else -kb)) % 4
        return 4 * ((fa + fb) % 2) + k

    def _inverse(self, g):
        f, k = divmod(g, 4)
        return g if f else (-k) % 4


class ProductGroup(TransformGroup):
    kind = "product"

    def __init__(self, a: TransformGroup, b: TransformGroup):
        if a.signal_shape != b.signal_shape:
            raise GroupError(f"product factors act on different shapes {a.signal_shape} vs {b.signal_shape}")
        self.a, self.b = a, b
        self.order = a.order * b.order
        self.signal_shape = a.signal_shape
        self.spec = f"product({a.spec},{b.spec})"
        self._lookup: dict[bytes, int] = {}
        for g in range(self.order):
            key = self._perm(g).tobytes()
            if key in self._lookup:
                raise GroupError(f"{self.spec}: factors overlap, elements are not distinct")
            self._lookup[key] = g
        # closure of A B holds iff every T_b T_a lies in A B
        for j in range(b.order):
            pb = b.perm(j)
            for i in range(a.order):
                if a.perm(i)[pb].tobytes() not in self._lookup:
                    raise GroupError(f"{self.spec}: set is not closed under composition")

    def _perm(self, g):
        i, j = divmod(g, self.b.order)
        # act(a_i, act(b_j, x)): gather with b's index, then a's
        return self.b.perm(j)[self.a.perm(i)]

    def _find(self, perm) -> int:
        return self._lookup[perm.tobytes()]

    def _compose(self, x, y):
        return self._find(self._perm(y)[self._perm(x)])

    def _inverse(self, g):
        p = self._perm(g)
        inv = np.empty_like(p)
        inv[p] = np.arange(p.size)
        return self._find(inv)


def trivial_group(signal_shape) -> TransformGroup:
    """The one-element group acting on ``signal_shape``."""
    return _Trivial(tuple(signal_shape))


class _Trivial(TransformGroup):
    kind = "identity"

    def __init__(self, signal_shape):
        self.order = 1
        self.signal_shape = signal_shape
        self.spec = "identity:" + "x".join(str(d) for d in signal_shape)

    def _perm(self, g):
        return np.arange(self.n)

    def _compose(self, a, b):
        return 0

    def _inverse(self, g):
        return 0


_DIMS = re.compile(r"^(\d+)x(\d+)$")


def _split_args(body: str) -> list[str]:
    depth, parts, cur = 0, [], ""
    for ch in body:
        if ch == "," and depth == 0:
            parts.append(cur)
            cur = ""
            continue
        depth += ch == "("
        depth -= ch == ")"
        cur += ch
    parts.append(cur)
    return [p.strip() for p in parts]


def parse_group(spec: str) -> TransformGroup:
    """Build a group from ``shift1d:n``, ``shift2d:HxW``, ``dihedral4:HxH``,
    ``identity:shape`` or ``product(a,b)``."""
    spec = spec.strip()
    if spec.startswith("product(") and spec.endswith(")"):
        args = _split_args(spec[len("product("):-1])
        if len(args) != 2:
            raise GroupError(f"product takes two groups: {spec!r}")
        return ProductGroup(parse_group(args[0]), parse_group(args[1]))
    name, _, arg = spec.partition(":")
    try:
        if name == "shift1d":
            return CyclicShift1D(int(arg))
        if name == "identity":
            return trivial_group(tuple(int(t) for t in arg.split("x")))
        m = _DIMS.match(arg)
        if name == "shift2d" and m:
            return CyclicShift2D(int(m.group(1)), int(m.group(2)))
        if name == "dihedral4" and m:
            if m.group(1) != m.group(2):
                raise GroupError(f"dihedral4 needs a square grid: {spec!r}")
            return Dihedral4(int(m.group(1)))
    except ValueError as exc:
        if isinstance(exc, GroupError):
            raise
        raise GroupError(f"bad group spec {spec!r}") from None
    raise GroupError(f"bad group spec {spec!r}")
