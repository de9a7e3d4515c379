"""Alternating min-max training: source fit (+MMD), classifier discrepancy
maximisation, and generator alignment (+contrastive smoothing)."""
from __future__ import annotations

import contextlib
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .data import ClassAwareSampler, Dataset, LabeledBatch, UniformSampler, UnlabeledBatch
from .losses import (
    KernelSpec,
    contrastive_loss,
    cross_entropy_logits,
    discrepancy,
    mmd_loss,
    pseudo_label,
)
from .models import ArchitectureSpec, ModelTriple, Optimizer, init_model

log = logging.getLogger(__name__)

VARIANTS = ("source_only", "mcd", "mcd_mmd", "mcd_contras", "cosca")

# lambdas forced to zero by each variant
_ZEROED = {
    "source_only": ("lambda1", "lambda2", "lambda3"),
    "mcd": ("lambda1", "lambda3"),
    "mcd_mmd": ("lambda3",),
    "mcd_contras": ("lambda1",),
    "cosca": (),
}

LOSS_KEYS = ("L_ce", "L_mmd", "L_adv_cls", "L_adv", "L_contras")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str, where: str = ""):
        self.term = term
        super().__init__(f"non-finite value in {term}" + (f" ({where})" if where else ""))


@dataclass
class TrainConfig:
    variant: str = "cosca"
    lambda1: float = 0.1
    lambda2: float = 0.3
    lambda3: float = 1.0
    theta: float = 5.0
    tau: int = 2
    delta: int = 2
    margin: float = 1.0
    max_epochs: int = 60
    iters_per_epoch: int = 20
    batch_size_source: int = 64
    batch_size_target: int = 64
    classes_per_batch: int = 0
    optimizer: str = "adam"
    lr_generator: float = 3e-3
    lr_classifier: float = 3e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    pair_budget: int = 0
    conf_threshold: float = 0.0
    reuse_batch: bool = False
    mmd_kernel: str = "normalized_mean_sq"
    mmd_bandwidth: float = 1.0
    generator_hidden: tuple[int, ...] = (64,)
    feature_dim: int = 64
    classifier_hidden: tuple[int, ...] = (64,)
    activation: str = "relu"

    def validate(self) -> "TrainConfig":
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in _ZEROED[self.variant]:
            if getattr(self, name) != 0:
                raise ValueError(f"variant {self.variant} requires {name} = 0")
        if self.theta <= 0:
            raise ValueError("theta must be positive")
        if self.tau < 1 or self.delta < 1:
            raise ValueError("tau and delta must be at least 1")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if self.iters_per_epoch < 0:
            raise ValueError("iters_per_epoch must be nonnegative (0 = one pass)")
        if self.batch_size_source < 1 or self.batch_size_target < 1:
            raise ValueError("batch sizes must be positive")
        KernelSpec(self.mmd_kernel, self.mmd_bandwidth)
        return self

    def for_variant(self, variant: str) -> "TrainConfig":
        """Copy of this config with the lambdas the variant disables set to zero."""
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        return replace(self, variant=variant, **{k: 0.0 for k in _ZEROED[variant]})

    def architecture(self, input_dim: int, num_classes: int) -> ArchitectureSpec:
        return ArchitectureSpec(
            input_dim=input_dim,
            generator_hidden=tuple(self.generator_hidden),
            feature_dim=self.feature_dim,
            classifier_hidden=tuple(self.classifier_hidden),
            num_classes=num_classes,
            activation=self.activation,
        )

    def make_optimizer(self, lr: float) -> Optimizer:
        return Optimizer(self.optimizer, lr, momentum=self.momentum, beta1=self.beta1, beta2=self.beta2)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Optimizers:
    g: Optimizer
    f: Optimizer

    @classmethod
    def for_config(cls, cfg: TrainConfig) -> "Optimizers":
        return cls(g=cfg.make_optimizer(cfg.lr_generator), f=cfg.make_optimizer(cfg.lr_classifier))


@dataclass
class RunRecord:
    iterations: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)


def omega(t: float, max_epochs: int, theta: float, lambda3: float) -> float:
    """Contrastive weight ramp ``exp(-theta * (1 - t / max_epochs)) * lambda3``."""
    if max_epochs == 0:
        raise ValueError("max_epochs must be positive")
    if theta <= 0:
        raise ValueError("theta must be positive")
    if not 0 <= t <= max_epochs:
        raise ValueError(f"t={t} outside [0, {max_epochs}]")
    return math.exp(-theta * (1.0 - t / max_epochs)) * lambda3


@contextlib.contextmanager
def _term(name: str):
    try:
        yield
    except ad.NonFiniteError as exc:
        raise NonFiniteLossError(name, str(exc)) from exc


def _checked(name: str, t: ad.Tensor) -> float:
    v = t.item()
    if not math.isfinite(v):
        raise NonFiniteLossError(name)
    return v


def _require_batches(source_batch, target_batch):
    if not isinstance(source_batch, LabeledBatch):
        raise TypeError("source batch must be a LabeledBatch")
    if not isinstance(target_batch, UnlabeledBatch):
        raise TypeError("target batch must be an UnlabeledBatch")


def _step(params, opt: Optimizer, tape: ad.Tape, loss: ad.Tensor):
    grads = tape.backward(loss)
    opt.step(params, grads)
    return grads


def step_a(model: ModelTriple, opts: Optimizers, source_batch, target_batch, cfg: TrainConfig) -> dict:
    """Update G, F1 and F2 on cross-entropy plus ``lambda1 * MMD``."""
    _require_batches(source_batch, target_batch)
    out = {}
    with ad.Tape() as tape:
        with _term("L_ce"):
            fs = model.g(ad.Tensor(source_batch.inputs))
            ce = cross_entropy_logits(model.f1(fs), model.f2(fs), source_batch.labels)
        out["L_ce"] = _checked("L_ce", ce)
        loss = ce
        if cfg.lambda1 > 0:
            with _term("L_mmd"):
                ft = model.g(ad.Tensor(target_batch.inputs))
                mmd = mmd_loss(fs, ft, KernelSpec(cfg.mmd_kernel, cfg.mmd_bandwidth))
                loss = ad.add(loss, ad.mul(mmd, cfg.lambda1))
            out["L_mmd"] = _checked("L_mmd", mmd)
    grads = tape.backward(loss)
    opts.g.step(model.generator_params(), grads)
    opts.f.step(model.classifier_params(), grads)
    return out


def step_b(model: ModelTriple, opts: Optimizers, source_batch, target_batch, cfg: TrainConfig,
           include_ce: bool = True) -> dict:
    """Update F1, F2 only, on cross-entropy minus ``lambda2 * discrepancy``.

    Features are computed off-tape, so G receives no gradient.
    """
    _require_batches(source_batch, target_batch)
    with _term("L_ce"):
        fs = ad.detach(model.g(ad.Tensor(source_batch.inputs)))
    with _term("L_adv_cls"):
        ft = ad.detach(model.g(ad.Tensor(target_batch.inputs)))
    out = {}
    with ad.Tape() as tape:
        loss = None
        if include_ce:
            with _term("L_ce"):
                loss = cross_entropy_logits(model.f1(fs), model.f2(fs), source_batch.labels)
            out["L_ce_b"] = _checked("L_ce", loss)
        if cfg.lambda2 > 0 or not include_ce:
            with _term("L_adv_cls"):
                adv = discrepancy(ad.softmax_rows(model.f1(ft)), ad.softmax_rows(model.f2(ft)))
                weighted = ad.mul(adv, -cfg.lambda2)
                loss = weighted if loss is None else ad.add(loss, weighted)
            out["L_adv_cls"] = _checked("L_adv_cls", adv)
    _step(model.classifier_params(), opts.f, tape, loss)
    return out


def step_c(model: ModelTriple, opts: Optimizers, source_batch, target_batch, cfg: TrainConfig,
           weight: float, rng=None) -> dict:
    """Update G only, on ``lambda2 * discrepancy + weight * contrastive``.

    Pseudo-labels come from the current (fixed) classifiers on detached
    probabilities. ``weight`` is the scheduled contrastive coefficient.
    """
    _require_batches(source_batch, target_batch)
    out = {}
    with ad.Tape() as tape:
        with _term("L_adv"):
            ft = model.g(ad.Tensor(target_batch.inputs))
            p1 = ad.softmax_rows(model.f1(ft))
            p2 = ad.softmax_rows(model.f2(ft))
            adv = discrepancy(p1, p2)
            loss = ad.mul(adv, cfg.lambda2)
        out["L_adv"] = _checked("L_adv", adv)
        pseudo = pseudo_label(p1.data, p2.data)
        out["pseudo"] = pseudo
        if cfg.lambda3 > 0:
            with _term("L_contras"):
                fs = model.g(ad.Tensor(source_batch.inputs))
                contras = contrastive_loss(
                    fs, source_batch.labels, ft, pseudo, cfg.margin,
                    pair_budget=cfg.pair_budget, conf_threshold=cfg.conf_threshold, rng=rng,
                )
                loss = ad.add(loss, ad.mul(contras, weight))
            out["L_contras"] = _checked("L_contras", contras)
    _step(model.generator_params(), opts.g, tape, loss)
    return out


def predict_proba(model: ModelTriple, inputs):
    feats = model.g(ad.Tensor(inputs))
    return ad.softmax_rows(model.f1(feats)).data, ad.softmax_rows(model.f2(feats)).data


def evaluate(model: ModelTriple, inputs, truth) -> dict:
    truth = np.asarray(truth)
    if len(truth) != len(inputs):
        raise ValueError(f"{len(truth)} labels for {len(inputs)} inputs")
    p1, p2 = predict_proba(model, inputs)
    ens = pseudo_label(p1, p2).labels
    return {
        "accuracy_f1": float(np.mean(p1.argmax(axis=1) == truth)),
        "accuracy_f2": float(np.mean(p2.argmax(axis=1) == truth)),
        "accuracy_ensemble": float(np.mean(ens == truth)),
    }


def train(cfg: TrainConfig, source: Dataset, target: Dataset, eval_truth=None, on_iteration=None,
          on_epoch=None, model: ModelTriple | None = None):
    """Run the full schedule; returns ``(model, RunRecord)``.

    ``eval_truth`` is only used for reporting; training sees target inputs
    through :class:`UnlabeledBatch` alone. ``on_iteration``/``on_epoch``
    receive each record as it is produced.
    """
    cfg.validate()
    if source.domain != "source" or target.domain != "target":
        raise ValueError("train expects a source and a target dataset")
    if source.dim != target.dim:
        raise ValueError("source and target input dims differ")
    if eval_truth is not None:
        eval_truth = np.asarray(eval_truth)
        if len(eval_truth) != len(target):
            raise ValueError("eval_truth length does not match the target dataset")
    model_seq, src_seq, tgt_seq, pair_seq = np.random.SeedSequence(cfg.seed).spawn(4)
    if model is None:
        model = init_model(cfg.architecture(source.dim, source.num_classes), int(model_seq.generate_state(1)[0]))
    opts = Optimizers.for_config(cfg)
    src_sampler = ClassAwareSampler(source, cfg.batch_size_source, cfg.classes_per_batch or None, src_seq)
    tgt_sampler = UniformSampler(target, cfg.batch_size_target, tgt_seq)
    pair_rng = np.random.default_rng(pair_seq)
    iters = cfg.iters_per_epoch or math.ceil(
        max(len(source) / cfg.batch_size_source, len(target) / cfg.batch_size_target)
    )

    def draw():
        return src_sampler.next_batch(), tgt_sampler.next_batch()

    record = RunRecord()
    step = 0
    for epoch in range(1, cfg.max_epochs + 1):
        w = omega(epoch, cfg.max_epochs, cfg.theta, cfg.lambda3)
        hits = seen = 0
        for _ in range(iters):
            step += 1
            sb, tb = draw()
            row = {"iter": step, "epoch": epoch, **dict.fromkeys(LOSS_KEYS), "omega_t": w}
            row.update(step_a(model, opts, sb, tb, cfg))
            if cfg.variant == "source_only":
                if eval_truth is not None:
                    with _term("evaluation"):
                        pseudo = pseudo_label(*predict_proba(model, tb.inputs))
                    hits += int(np.sum(pseudo.labels == eval_truth[tb.indices]))
                    seen += len(tb.indices)
            else:
                for _ in range(cfg.tau):
                    if not cfg.reuse_batch:
                        sb, tb = draw()
                    row.update(step_b(model, opts, sb, tb, cfg))
                for _ in range(cfg.delta):
                    if not cfg.reuse_batch:
                        sb, tb = draw()
                    c = step_c(model, opts, sb, tb, cfg, w, pair_rng)
                    pseudo = c.pop("pseudo")
                    row.update(c)
                    if eval_truth is not None:
                        hits += int(np.sum(pseudo.labels == eval_truth[tb.indices]))
                        seen += len(tb.indices)
            row.pop("L_ce_b", None)
            record.iterations.append(row)
            if on_iteration is not None:
                on_iteration(row)
        with _term("evaluation"):
            ep = {
                "epoch": epoch,
                "omega_t": w,
                "source_acc": evaluate(model, source.inputs, source.labels)["accuracy_ensemble"],
                "target_acc": None,
                "pseudo_label_acc": None,
            }
            if eval_truth is not None:
                ep["target_acc"] = evaluate(model, target.inputs, eval_truth)["accuracy_ensemble"]
                ep["pseudo_label_acc"] = hits / seen if seen else None
        record.epochs.append(ep)
        if on_epoch is not None:
            on_epoch(ep)
        log.debug("epoch %d: %s", epoch, ep)
    return model, record
