"""Vectorized dual numbers for forward-mode differentiation.

A `Dual` carries a value array and a gradient array with one extra trailing
axis, one entry per seeded direction. Seeding n directions at once yields a
full Jacobian from a single evaluation of the function.
"""
import numpy as np


class Dual:
    __slots__ = ("value", "grad")
    # let ndarray operators fall through to the reflected methods below
    __array_ufunc__ = None

    def __init__(self, value, grad):
        self.value = np.asarray(value, dtype=float)
        self.grad = np.asarray(grad, dtype=float)

    @classmethod
    def variable(cls, value, start=0, n_dirs=None) -> "Dual":
        """Seed a 1-d vector as independent variables.

        Entry p gets unit derivative along direction `start + p`.

        Args:
            value (array-like): 1-d point
            start (int, optional): first direction used. Defaults to 0.
            n_dirs (int, optional): total number of directions. Defaults to len(value).
        """
        value = np.atleast_1d(np.asarray(value, dtype=float))
        n = value.shape[0]
        n_dirs = n if n_dirs is None else n_dirs
        grad = np.zeros((n, n_dirs))
        grad[np.arange(n), start + np.arange(n)] = 1.0
        return cls(value, grad)

    @classmethod
    def constant(cls, value, n_dirs) -> "Dual":
        value = np.asarray(value, dtype=float)
        return cls(value, np.zeros(value.shape + (n_dirs,)))

    @property
    def n_dirs(self) -> int:
        return self.grad.shape[-1]

    @property
    def shape(self):
        return self.value.shape

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Dual(value={self.value!r}, grad={self.grad!r})"

    # ---------- arithmetic ----------
    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value + other.value, self.grad + other.grad)
        return Dual(self.value + other, self.grad + np.zeros_like(np.asarray(other, dtype=float))[..., None])

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value - other.value, self.grad - other.grad)
        return self + (-np.asarray(other, dtype=float))

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return Dual(-self.value, -self.grad)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value * other.value,
                        self.grad * other.value[..., None] + self.value[..., None] * other.grad)
        other = np.asarray(other, dtype=float)
        return Dual(self.value * other, self.grad * other[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.value
            return Dual(self.value * inv,
                        (self.grad * other.value[..., None] - self.value[..., None] * other.grad)
                        * (inv * inv)[..., None])
        return self * (1.0 / np.asarray(other, dtype=float))

    def __rtruediv__(self, other):
        other = np.asarray(other, dtype=float)
        inv = 1.0 / self.value
        return Dual(other * inv, -(other * inv * inv)[..., None] * self.grad)

    def __rmatmul__(self, matrix):
        """Constant matrix times a 1-d dual vector."""
        matrix = np.asarray(matrix, dtype=float)
        return Dual(matrix @ self.value, matrix @ self.grad)

    def __getitem__(self, index):
        return Dual(self.value[index], self.grad[index])


def sin(x):
    if isinstance(x, Dual):
        return Dual(np.sin(x.value), np.cos(x.value)[..., None] * x.grad)
    return np.sin(x)


def cos(x):
    if isinstance(x, Dual):
        return Dual(np.cos(x.value), -np.sin(x.value)[..., None] * x.grad)
    return np.cos(x)


def concatenate(parts, n_dirs=None):
    """Concatenate 1-d duals and plain arrays; plain arrays get zero gradient."""
    if n_dirs is None:
        n_dirs = next((p.n_dirs for p in parts if isinstance(p, Dual)), None)
    if n_dirs is None:
        return np.concatenate([np.atleast_1d(np.asarray(p, dtype=float)) for p in parts])
    duals = [p if isinstance(p, Dual) else Dual.constant(np.atleast_1d(p), n_dirs) for p in parts]
    return Dual(np.concatenate([d.value for d in duals]), np.concatenate([d.grad for d in duals], axis=0))


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Dual) else np.asarray(x, dtype=float)
