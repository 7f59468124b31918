"""Representation extractor, domain discriminator and plain SGD.

Both networks are small fully connected stacks stored as a name -> array
mapping (``W0, b0, W1, b1, ...``). Training code turns the arrays into
tracked leaves with :meth:`MLP.track`, runs a forward pass, calls
``backward`` and hands :meth:`MLP.grads` to :func:`sgd_step`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, NumericError
from .numerics import Tensor, as_tensor

PROB_EPS = 1e-12
CHECKPOINT_FORMAT = "dafec-params"
CHECKPOINT_VERSION = 1


def _activate(x: Tensor, name: str | None) -> Tensor:
    if name is None or name == "linear":
        return x
    if name == "tanh":
        return x.tanh()
    if name == "sigmoid":
        return x.sigmoid()
    raise InvalidArgumentError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class MLP:
    """Fully connected network ``dims[0] -> ... -> dims[-1]``.

    ``activation`` is applied between layers, ``output`` after the last one.
    ``params`` holds numpy arrays, or Tensors while a pass is being traced.
    """

    dims: tuple[int, ...]
    params: dict = field(compare=False)
    activation: str = "tanh"
    output: str = "linear"

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    def n_params(self) -> int:
        return int(sum(np.size(_raw(v)) for v in self.params.values()))

    def track(self) -> MLP:
        """Copy whose parameters are fresh gradient-tracking leaves."""
        return replace(self, params={k: Tensor(_raw(v), requires_grad=True) for k, v in self.params.items()})

    def frozen(self) -> MLP:
        return replace(self, params={k: np.asarray(_raw(v)) for k, v in self.params.items()})

    def grads(self) -> dict:
        out = {}
        for k, v in self.params.items():
            g = getattr(v, "grad", None)
            out[k] = np.zeros_like(_raw(v)) if g is None else g
        return out

    def arrays(self) -> dict:
        return {k: np.asarray(_raw(v)) for k, v in self.params.items()}

    def __call__(self, x) -> Tensor:
        return forward(self, x)


# Stage-1 extractor and Stage-4 classifier share this architecture family.
ExtractorParams = MLP
DiscriminatorParams = MLP


def _raw(v):
    return v.data if isinstance(v, Tensor) else v


def _init(dims, seed, activation, output) -> MLP:
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2:
        raise InvalidArgumentError(f"architecture needs at least input and output dims, got {dims}")
    if any(d < 1 for d in dims):
        raise InvalidArgumentError(f"all dims must be >= 1, got {dims}")
    rng = np.random.default_rng(seed)
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        # Glorot-uniform: zero mean, variance 2 / (fan_in + fan_out)
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params[f"W{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"b{i}"] = np.zeros(fan_out)
    return MLP(dims, params, activation, output)


def init_extractor(arch, seed: int, activation: str = "tanh") -> MLP:
    """Extractor ``E`` with Glorot-uniform weights and zero biases."""
    return _init(arch, seed, activation, "linear")


def init_discriminator(feature_dim: int, seed: int, hidden: int = 32) -> MLP:
    """Two-layer discriminator ``D``: d_f -> hidden -> 1, sigmoid on top."""
    return _init((feature_dim, hidden, 1), seed, "tanh", "sigmoid")


def forward(net: MLP, x) -> Tensor:
    x = as_tensor(x)
    if x.shape[-1] != net.dims[0]:
        raise InvalidArgumentError(f"input dimension {x.shape[-1]} does not match network input {net.dims[0]}")
    h = x
    for i in range(net.n_layers):
        h = h @ net.params[f"W{i}"] + net.params[f"b{i}"]
        h = _activate(h, net.activation if i < net.n_layers - 1 else net.output)
    return h


def encode(net: MLP, x) -> Tensor:
    """Features ``E(x)`` for one vector or a batch of row vectors."""
    return forward(net, x)


def discriminate(net: MLP, f) -> Tensor:
    """Source-domain probability ``D(f)``, clamped to [1e-12, 1 - 1e-12].

    Returns a scalar for a single feature vector and shape (n,) for a batch.
    """
    out = forward(net, f)
    out = out.reshape(out.shape[:-1])
    return out.clip(PROB_EPS, 1.0 - PROB_EPS)


@dataclass(frozen=True)
class OptimizerState:
    lr: float = 0.1

    def __post_init__(self):
        if not self.lr > 0:
            raise InvalidArgumentError(f"learning rate must be > 0, got {self.lr}")


def sgd_step(params, grads: dict, opt: OptimizerState):
    """One plain SGD update ``p <- p - lr * g``.

    ``params`` may be an :class:`MLP` or a bare name -> array dict; the
    same kind is returned. Nothing is updated if any gradient is non-finite.
    """
    arrays = params.arrays() if isinstance(params, MLP) else {k: np.asarray(_raw(v)) for k, v in params.items()}
    for name, g in grads.items():
        if name not in arrays:
            raise InvalidArgumentError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != arrays[name].shape:
            raise InvalidArgumentError(f"gradient shape {np.shape(g)} != parameter shape {arrays[name].shape} for {name}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}; update rejected")
    updated = {k: (v - opt.lr * np.asarray(grads[k]) if k in grads else v) for k, v in arrays.items()}
    if isinstance(params, MLP):
        return replace(params, params=updated)
    return updated


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(net: MLP, path) -> None:
    """Write a JSON checkpoint: header, architecture, then named tensors.

    Floats go through ``repr`` (17 significant digits) so a save/load round
    trip is bit-exact.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dims": list(net.dims),
        "activation": net.activation,
        "output": net.output,
        "tensors": [
            {"name": k, "shape": list(v.shape), "data": v.reshape(-1).tolist()}
            for k, v in net.arrays().items()
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path) -> MLP:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise InvalidArgumentError(f"{path}: not a parameter checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise InvalidArgumentError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    params = {}
    for t in doc["tensors"]:
        arr = np.asarray(t["data"], dtype=np.float64).reshape(t["shape"])
        params[t["name"]] = arr
    net = MLP(tuple(doc["dims"]), params, doc["activation"], doc["output"])
    for i in range(net.n_layers):
        w = params.get(f"W{i}")
        if w is None or w.shape != (net.dims[i], net.dims[i + 1]):
            raise InvalidArgumentError(f"{path}: tensor W{i} missing or misshapen")
    return net
