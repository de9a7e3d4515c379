"""Feature generator and twin classifiers as dense MLPs, plus optimizers."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh, "none": None}

CHECKPOINT_MAGIC = "cosca-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class Layer:
    weight: ad.Tensor
    bias: ad.Tensor
    activation: str = "relu"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


class Mlp:
    def __init__(self, layers: list[Layer]):
        if not layers:
            raise ValueError("an MLP needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ValueError(f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}")
        for layer in layers:
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
        self.layers = layers

    @classmethod
    def init(cls, dims: list[int], activations: list[str], rng: np.random.Generator) -> "Mlp":
        """Glorot-uniform weights, zero biases."""
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ValueError(f"invalid dimension chain {dims}")
        if len(activations) != len(dims) - 1:
            raise ValueError("need one activation per layer")
        layers = []
        for fan_in, fan_out, act in zip(dims, dims[1:], activations):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            layers.append(
                Layer(ad.Tensor(w, requires_grad=True), ad.Tensor(np.zeros(fan_out), requires_grad=True), act)
            )
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> list[ad.Tensor]:
        return [p for layer in self.layers for p in (layer.weight, layer.bias)]

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        if x.data.ndim != 2 or x.shape[1] != self.in_dim:
            raise ad.ShapeError(f"expected input of shape (n, {self.in_dim}), got {x.shape}")
        h = x
        for layer in self.layers:
            h = ad.affine(h, layer.weight, layer.bias)
            act = ACTIVATIONS[layer.activation]
            if act is not None:
                h = act(h)
        return h


@dataclass(frozen=True)
class ArchitectureSpec:
    input_dim: int = 2
    generator_hidden: tuple[int, ...] = (64,)
    feature_dim: int = 64
    classifier_hidden: tuple[int, ...] = (64,)
    num_classes: int = 2
    activation: str = "relu"

    def generator_dims(self) -> list[int]:
        return [self.input_dim, *self.generator_hidden, self.feature_dim]

    def classifier_dims(self) -> list[int]:
        return [self.feature_dim, *self.classifier_hidden, self.num_classes]


@dataclass
class ModelTriple:
    g: Mlp
    f1: Mlp
    f2: Mlp

    def __post_init__(self):
        if self.g.out_dim != self.f1.in_dim or self.g.out_dim != self.f2.in_dim:
            raise ValueError("generator output must match classifier input")
        if self.f1.out_dim != self.f2.out_dim:
            raise ValueError("classifiers disagree on the number of classes")

    @property
    def num_classes(self) -> int:
        return self.f1.out_dim

    def generator_params(self) -> list[ad.Tensor]:
        return self.g.parameters()

    def classifier_params(self) -> list[ad.Tensor]:
        return self.f1.parameters() + self.f2.parameters()

    def parameters(self) -> list[ad.Tensor]:
        return self.generator_params() + self.classifier_params()

    def snapshot(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def clone(self) -> "ModelTriple":
        return copy.deepcopy(self)


def init_model(spec: ArchitectureSpec, seed: int) -> ModelTriple:
    if spec.num_classes < 2:
        raise ValueError("need at least two classes")
    if spec.activation not in ("relu", "tanh"):
        raise ValueError(f"unsupported hidden activation {spec.activation!r}")
    g_seq, f1_seq, f2_seq = np.random.SeedSequence(seed).spawn(3)
    gd, fd = spec.generator_dims(), spec.classifier_dims()
    g_acts = [spec.activation] * (len(gd) - 1)
    f_acts = [spec.activation] * (len(fd) - 2) + ["none"]
    return ModelTriple(
        g=Mlp.init(gd, g_acts, np.random.default_rng(g_seq)),
        f1=Mlp.init(fd, f_acts, np.random.default_rng(f1_seq)),
        f2=Mlp.init(fd, f_acts, np.random.default_rng(f2_seq)),
    )


def forward_features(g: Mlp, x) -> ad.Tensor:
    return g(ad.as_tensor(x))


def forward_logits(f: Mlp, features: ad.Tensor) -> ad.Tensor:
    return f(features)


# ---------------------------------------------------------------- optimizers


@dataclass
class Optimizer:
    kind: str = "adam"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    state: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "sgd_momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")

    def step(self, params: list[ad.Tensor], grads: ad.Gradients) -> None:
        missing = [i for i, p in enumerate(params) if p not in grads]
        if missing:
            raise KeyError(f"missing gradient for parameter(s) {missing}")
        for p in params:
            g = grads[p]
            key = id(p)
            if self.kind == "sgd":
                p.data -= self.learning_rate * g
            elif self.kind == "sgd_momentum":
                buf = self.state.get(key)
                buf = g.copy() if buf is None else self.momentum * buf + g
                self.state[key] = buf
                p.data -= self.learning_rate * buf
            else:
                m, v, t = self.state.get(key, (np.zeros_like(p.data), np.zeros_like(p.data), 0))
                t += 1
                m = self.beta1 * m + (1 - self.beta1) * g
                v = self.beta2 * v + (1 - self.beta2) * g * g
                self.state[key] = (m, v, t)
                m_hat = m / (1 - self.beta1**t)
                v_hat = v / (1 - self.beta2**t)
                p.data -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def apply_gradients(params: list[ad.Tensor], grads: ad.Gradients, opt: Optimizer) -> None:
    opt.step(params, grads)


# ---------------------------------------------------------------- checkpoint


def save_checkpoint(model: ModelTriple, path, stats=None) -> None:
    """Write a text checkpoint.

    Layout (one item per line)::

        cosca-checkpoint 1
        stats <d>            # or "stats none"
        <mean values...>     # only if stats present, then sd values
        <sd values...>
        net g <n_layers>     # repeated for g, f1, f2
        layer <in> <out> <activation>
        <row-major weight values, space separated>
        <bias values>

    Values use ``repr`` so they parse back bit-exactly.
    """
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}"]
    if stats is None:
        lines.append("stats none")
    else:
        lines.append(f"stats {len(stats.mean)}")
        lines.append(_fmt(stats.mean))
        lines.append(_fmt(stats.sd))
    for name in ("g", "f1", "f2"):
        net = getattr(model, name)
        lines.append(f"net {name} {len(net.layers)}")
        for layer in net.layers:
            lines.append(f"layer {layer.in_dim} {layer.out_dim} {layer.activation}")
            lines.append(_fmt(layer.weight.data.ravel()))
            lines.append(_fmt(layer.bias.data))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(model, stats_or_None)``."""
    from .data import StandardizationStats

    with open(path) as fh:
        lines = fh.read().splitlines()
    it = iter(lines)
    header = next(it, "").split()
    if len(header) != 2 or header[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    if int(header[1]) != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header[1]}")
    stats_line = next(it).split()
    stats = None
    if stats_line[1] != "none":
        mean = _parse(next(it))
        sd = _parse(next(it))
        stats = StandardizationStats(mean=mean, sd=sd)
    nets = {}
    for _ in range(3):
        _, name, n_layers = next(it).split()
        layers = []
        for _ in range(int(n_layers)):
            _, fan_in, fan_out, act = next(it).split()
            w = _parse(next(it)).reshape(int(fan_in), int(fan_out))
            b = _parse(next(it))
            layers.append(Layer(ad.Tensor(w, requires_grad=True), ad.Tensor(b, requires_grad=True), act))
        nets[name] = Mlp(layers)
    return ModelTriple(**nets), stats


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values).ravel())


def _parse(line: str) -> np.ndarray:
    return np.array([float(v) for v in line.split()], dtype=np.float64)
