"""Named parameter collections and initializers."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .autodiff import Tensor


class Params(OrderedDict):
    """Ordered ``name -> Tensor`` mapping; order defines checkpoint layout."""

    def subset(self, prefix: str) -> "Params":
        """View of entries under ``prefix.`` with the prefix stripped."""
        pre = prefix + "."
        return Params((k[len(pre):], v) for k, v in self.items() if k.startswith(pre))

    def with_prefix(self, prefix: str) -> "Params":
        return Params((f"{prefix}.{k}", v) for k, v in self.items())

    def zero_grad(self):
        for t in self.values():
            t.grad = None

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self.items())

    def clone(self) -> "Params":
        return Params((k, Tensor(v.data.copy(), requires_grad=v.requires_grad)) for k, v in self.items())

    def load_arrays(self, arrays):
        for k, arr in arrays.items():
            self[k].data[...] = arr

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.values()))


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def linear_params(rng, n_in: int, n_out: int, dtype, bias: bool = True) -> Params:
    p = Params(weight=uniform_fan_in(rng, (n_in, n_out), n_in, dtype))
    if bias:
        p["bias"] = uniform_fan_in(rng, (n_out,), n_in, dtype)
    return p


def linear(x: Tensor, p: Params) -> Tensor:
    out = x @ p["weight"]
    if "bias" in p:
        out = out + p["bias"]
    return out
