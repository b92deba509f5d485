"""Gaussianization flow: rotation, kernel, rotation, kernel, ... (rotation first)."""

import numpy as np

from . import special
from .config import FlowConfig
from .errors import ContractError, DomainError, NumericError
from .kernel_layer import KernelLayer
from .rotation import HouseholderStack, PatchRotation


class FlowTape:
    """Per-layer forward caches, consumed by exactly one backward call."""

    def __init__(self, caches, batch):
        self.caches = caches
        self.batch = batch
        self.consumed = False


class GaussianizationFlow:
    def __init__(self, layers, metadata=None):
        layers = list(layers)
        if not layers or len(layers) % 2:
            raise ContractError("a flow is a non-empty alternation of rotation and kernel layers")
        for i, layer in enumerate(layers):
            want_kernel = i % 2 == 1
            if isinstance(layer, KernelLayer) != want_kernel:
                raise ContractError(
                    f"layer {i} is {type(layer).__name__}; layers must alternate "
                    "rotation, kernel, starting with a rotation")
        dim = layers[0].dim
        if any(layer.dim != dim for layer in layers):
            raise ContractError("all layers must share one dimension")
        self.layers = layers
        self.metadata = dict(metadata or {})

    @property
    def dim(self):
        return self.layers[0].dim

    @property
    def depth(self):
        return len(self.layers) // 2

    def __repr__(self):
        return f"GaussianizationFlow(dim={self.dim}, L={self.depth})"

    def parameters(self):
        """Live parameter arrays keyed by (layer index, name); updates mutate the flow."""
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                out[(i, name)] = arr
        return out

    def n_parameters(self):
        return sum(a.size for a in self.parameters().values())

    def _check(self, x):
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ContractError(f"expected a (batch, {self.dim}) array, got {x.shape}")
        if x.shape[0] == 0:
            raise ContractError("empty batch")
        if not np.all(np.isfinite(x)):
            raise DomainError("flow input contains non-finite values")
        return x

    @staticmethod
    def _run(i, layer, method, h):
        # inputs were checked finite, so a domain failure inside a layer means
        # its parameters or an upstream layer went bad
        try:
            out = getattr(layer, method)(h)
        except DomainError as exc:
            raise NumericError(f"layer {i} ({layer!r}): {exc}", layer=i) from exc
        y, ld = out[0], out[1]
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(ld)):
            raise NumericError(f"non-finite output from layer {i} ({layer!r})", layer=i)
        return out

    def forward(self, x):
        x = self._check(x)
        logdet = np.zeros(x.shape[0])
        caches = []
        h = x
        for i, layer in enumerate(self.layers):
            h, ld, cache = self._run(i, layer, "forward", h)
            logdet += ld
            caches.append(cache)
        return h, logdet, FlowTape(caches, x.shape[0])

    def transform(self, x):
        """Like :meth:`forward` but keeps no tape."""
        h = self._check(x)
        logdet = np.zeros(h.shape[0])
        for i, layer in enumerate(self.layers):
            h, ld = self._run(i, layer, "transform", h)
            logdet += ld
        return h, logdet

    def log_likelihood(self, x):
        z, logdet = self.transform(x)
        return special.std_normal_logpdf(z).sum(axis=1) + logdet

    def inverse(self, z):
        h = self._check(z)
        for layer in reversed(self.layers):
            h = layer.inverse(h)
        return h

    def sample(self, n, rng):
        if n < 1:
            raise ContractError("sample size must be >= 1")
        return self.inverse(rng.standard_normal((n, self.dim)))

    def backward(self, tape, dz, dlogdet):
        """Reverse pass; returns gradients keyed like :meth:`parameters` and dL/dx."""
        if tape.consumed:
            raise ContractError("tape already consumed by a previous backward call")
        if len(tape.caches) != len(self.layers):
            raise ContractError("tape does not belong to this flow")
        tape.consumed = True
        g = np.asarray(dz, dtype=np.float64)
        dlogdet = np.asarray(dlogdet, dtype=np.float64)
        if g.shape != (tape.batch, self.dim) or dlogdet.shape != (tape.batch,):
            raise ContractError("upstream gradient shapes do not match the tape")
        grads = {}
        for i in range(len(self.layers) - 1, -1, -1):
            layer, cache = self.layers[i], tape.caches[i]
            if isinstance(layer, KernelLayer):
                dmu, drho, g = layer.backward(cache, g, dlogdet)
                grads[(i, "anchors")] = dmu
                grads[(i, "log_bandwidths")] = drho
            else:
                dv, g = layer.backward(cache, g)
                grads[(i, "vectors")] = dv
        return grads, g

    def nll_and_grad(self, x):
        """Mean negative log-likelihood in nats and its parameter gradients."""
        z, logdet, tape = self.forward(x)
        B = z.shape[0]
        ll = special.std_normal_logpdf(z).sum(axis=1) + logdet
        grads, _ = self.backward(tape, z / B, np.full(B, -1.0 / B))
        return -ll.mean(), grads

    @classmethod
    def init_data_dependent(cls, data, config, rng, metadata=None):
        """Random rotations; kernel anchors from a subsample pushed through earlier layers."""
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2:
            raise ContractError("data must be a (rows, D) matrix")
        if isinstance(config, dict):
            config = FlowConfig(**config)
        n, D = data.shape
        K = config.n_anchors
        if n < K:
            raise ContractError(f"need at least {K} rows for data-dependent init, got {n}")
        rows = rng.choice(n, size=min(K, n), replace=False)
        sub = data[rows]
        layers = []
        for _ in range(config.n_layers):
            rot = make_rotation(config, D, rng)
            sub = rot.apply(sub)
            kern = KernelLayer.init_from_data(sub, K, rng)
            sub, _, _ = kern.forward(sub)
            layers += [rot, kern]
        return cls(layers, metadata)


def make_rotation(config, dim, rng):
    if config.rotation == "patch":
        if config.image_side ** 2 != dim:
            raise ContractError(f"image side {config.image_side} does not match dimension {dim}")
        return PatchRotation.init_random(config.image_side, config.patch_side, rng,
                                         m=config.n_reflections)
    m = dim if config.n_reflections is None else config.n_reflections
    return HouseholderStack.init_random(dim, m, rng)
