"""Orthogonal layers built from Householder reflections.

``HouseholderStack`` is a dense product R = H_1 H_2 ... H_m. ``PatchRotation``
circularly shifts the flattened image by ``shift`` positions and then applies
an independent Householder stack to each contiguous chunk of patch_side**2
coordinates, giving a block-diagonal matrix on the shifted order.
"""

from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import ContractError

V_EPS = 1e-12
MATERIALIZE_MAX_DIM = 4096


@dataclass
class RotationCache:
    inputs: np.ndarray  # (m, batch, width): input to each reflection, in application order


def _draw_vectors(shape, rng):
    v = rng.standard_normal(shape)
    flat = v.reshape(-1, shape[-1])
    for row in range(flat.shape[0]):
        while flat[row] @ flat[row] < V_EPS:
            flat[row] = rng.standard_normal(shape[-1])
    return v


class _ReflectionLayer:
    """Shared machinery; subclasses provide ``_blocks`` and the permutation hooks."""

    kind = None

    def _blocks(self):
        raise NotImplementedError

    def _permute(self, x):
        return x

    def _unpermute(self, x):
        return x

    def _check(self, x):
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ContractError(f"expected a (batch, {self.dim}) array, got {x.shape}")
        return x

    def apply(self, x):
        y, _ = kernels.householder_forward(self._permute(self._check(x)), self._blocks())
        return y

    def apply_transpose(self, y):
        x, _ = kernels.householder_forward(self._check(y), self._blocks(), transpose=True)
        return self._unpermute(x)

    def forward(self, x):
        """y = R x with the cache needed by :meth:`backward`; logdet is zero."""
        x = self._check(x)
        y, inputs = kernels.householder_forward(self._permute(x), self._blocks(), store=True)
        return y, np.zeros(x.shape[0]), RotationCache(inputs)

    def transform(self, x):
        return self.apply(x), np.zeros(np.shape(x)[0])

    inverse = apply_transpose

    def backward(self, cache, dy):
        """Returns (d vectors, dx). There is no logdet input: it is identically zero."""
        dy = np.ascontiguousarray(dy, dtype=np.float64)
        if cache.inputs.shape[1:] != dy.shape:
            raise ContractError(f"dy shape {dy.shape} does not match cache")
        dV, g = kernels.householder_backward(cache.inputs, self._blocks(), dy)
        return dV.reshape(self.vectors.shape), self._unpermute(g)

    def materialize(self):
        if self.dim > MATERIALIZE_MAX_DIM:
            raise ContractError(f"refusing to materialize a {self.dim}x{self.dim} matrix")
        # row i of apply(I) is R e_i, i.e. column i of R
        return self.apply(np.eye(self.dim)).T


class HouseholderStack(_ReflectionLayer):
    kind = "householder"

    def __init__(self, vectors, dim=None):
        vectors = np.ascontiguousarray(vectors, dtype=np.float64)
        if vectors.ndim != 2:
            if vectors.size == 0 and dim is not None:
                vectors = vectors.reshape(0, dim)
            else:
                raise ContractError("vectors must be an (m, D) matrix")
        if dim is not None and vectors.shape[1] != dim:
            raise ContractError(f"vectors have width {vectors.shape[1]}, expected {dim}")
        self.vectors = vectors

    @property
    def dim(self):
        return self.vectors.shape[1]

    @property
    def n_reflections(self):
        return self.vectors.shape[0]

    def _blocks(self):
        return self.vectors[None]

    def params(self):
        return {"vectors": self.vectors}

    def __repr__(self):
        return f"HouseholderStack(dim={self.dim}, m={self.n_reflections})"

    @classmethod
    def init_random(cls, dim, m, rng):
        if m < 0:
            raise ContractError("number of reflections must be >= 0")
        return cls(_draw_vectors((m, dim), rng), dim=dim)


class PatchRotation(_ReflectionLayer):
    kind = "patch"

    def __init__(self, image_side, patch_side, shift, vectors):
        if patch_side < 1 or image_side % patch_side:
            raise ContractError(f"patch side {patch_side} must divide image side {image_side}")
        D = image_side * image_side
        if not 0 <= shift < D:
            raise ContractError(f"shift must lie in [0, {D}), got {shift}")
        k = image_side // patch_side
        vectors = np.ascontiguousarray(vectors, dtype=np.float64)
        bd = patch_side * patch_side
        if vectors.ndim != 3 or vectors.shape[0] != k * k or vectors.shape[2] != bd:
            raise ContractError(f"vectors must have shape ({k * k}, m, {bd}), got {vectors.shape}")
        self.image_side = int(image_side)
        self.patch_side = int(patch_side)
        self.shift = int(shift)
        self.vectors = vectors

    @property
    def dim(self):
        return self.image_side * self.image_side

    @property
    def n_blocks(self):
        return self.vectors.shape[0]

    @property
    def n_reflections(self):
        return self.vectors.shape[1]

    def _blocks(self):
        return self.vectors

    def _permute(self, x):
        return np.ascontiguousarray(np.roll(x, self.shift, axis=1))

    def _unpermute(self, x):
        return np.ascontiguousarray(np.roll(x, -self.shift, axis=1))

    def params(self):
        return {"vectors": self.vectors}

    def __repr__(self):
        return (f"PatchRotation(L={self.image_side}, p={self.patch_side}, "
                f"c={self.shift}, m={self.n_reflections})")

    @classmethod
    def init_random(cls, image_side, patch_side, rng, m=None, shift=None):
        bd = patch_side * patch_side
        k = image_side // patch_side
        if m is None:
            m = bd
        if shift is None:
            shift = int(rng.integers(0, image_side * image_side))
        return cls(image_side, patch_side, shift, _draw_vectors((k * k, m, bd), rng))


def shift_permutation(dim, shift):
    """Permutation matrix P with (P x)[i] = x[(i - shift) mod dim]."""
    return np.roll(np.eye(dim), shift, axis=0)
