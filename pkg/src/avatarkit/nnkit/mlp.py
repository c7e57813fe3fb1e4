from __future__ import annotations

import numpy as np

from .autodiff import Tensor, add, matmul, relu, sigmoid
from .encoding import FrequencyEncoding, HashGridEncoding, RawEncoding

OUTPUT_ACTIVATIONS = ("none", "sigmoid")


class Mlp:
    """ReLU MLP with an optional input encoding and output activation.

    ``widths`` lists the hidden and output widths; the input width comes from
    the encoding. Weights are He-uniform initialised from ``rng``.
    """

    def __init__(self, encoding, widths: list[int], out_act: str = "none",
                 rng: np.random.Generator | None = None, name: str = "mlp"):
        if out_act not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {out_act!r}")
        rng = rng or np.random.default_rng(0)
        self.encoding = encoding
        self.out_act = out_act
        self.name = name
        dims = [encoding.out_dim] + list(widths)
        self.widths = dims
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            bound = np.sqrt(6.0 / a)
            self.weights.append(Tensor(rng.uniform(-bound, bound, (a, b)), requires_grad=True,
                                       name=f"{name}.w{i}"))
            self.biases.append(Tensor(np.zeros(b), requires_grad=True, name=f"{name}.b{i}"))

    @property
    def in_dim(self) -> int:
        return self.encoding.in_dim

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    @property
    def encoding_tag(self) -> str:
        return self.encoding.tag

    def parameters(self) -> list[Tensor]:
        return self.encoding.parameters() + self.weights + self.biases

    def named_parameters(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.parameters()}

    def zero_(self) -> "Mlp":
        for p in self.parameters():
            p.data[...] = 0.0
        return self

    def __call__(self, x) -> Tensor:
        return self.forward(x)

    def forward(self, x) -> Tensor:
        h = self.encoding(x)
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = add(matmul(h, w), b)
            if i < n - 1:
                h = relu(h)
            if not np.all(np.isfinite(h.data)):
                raise FloatingPointError(f"{self.name}: non-finite activations after layer {i}")
        if self.out_act == "sigmoid":
            h = sigmoid(h)
        return h


def make_encoding(tag: str, in_dim: int, *, n_octaves: int = 6, hash_spec=None, rng=None):
    if tag == "raw":
        return RawEncoding(in_dim)
    if tag == "frequency":
        return FrequencyEncoding(in_dim, n_octaves)
    if tag == "hashgrid":
        return HashGridEncoding(hash_spec, rng)
    raise ValueError(f"unknown encoding {tag!r}")
