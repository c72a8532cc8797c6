"""Training regimes: measurement consistency, equivariant imaging, supervised.

All losses are mean squared errors averaged over batch and coordinates.
One group element is drawn per minibatch.  The equivariance branch
pushes the transformed reconstruction back through ``A^+ A`` and the
network; gradients flow through both network applications, the
permutation and the two fixed linear maps.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .autodiff import AdamState, Graph, adam_step, backward
from .groups import TransformGroup, parse_group
from .linops import LinearOperator
from .metrics import mean_psnr
from .models import MLP, init_mlp, init_model, predict, reconstruct

REGIMES = ("mc", "ei", "sup", "ei-sup", "ei-adv")


@dataclass
class TrainConfig:
    regime: str = "ei"
    alpha: float = 1.0
    beta: float = 1e-8
    epochs: int = 100
    batch_size: int = 1
    lr: float = 1e-3
    lr_decay_factor: float = 0.1
    lr_decay_period: int = 0
    seed: int = 0
    noise_std: float = 0.0
    weight_decay: float = 1e-8
    hidden: list[int] | None = None
    disc_hidden: list[int] = field(default_factory=lambda: [32])
    group: str | None = None
    eval_every: int = 1
    init_output_scale: float = 1.0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("need epochs >= 0, batch_size >= 1 and lr > 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")

    def lr_at(self, epoch: int) -> float:
        if self.lr_decay_period <= 0:
            return self.lr
        return self.lr * self.lr_decay_factor ** (epoch // self.lr_decay_period)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


@dataclass
class EpochRecord:
    epoch: int
    loss_mc: float
    loss_eq: float | None = None
    loss_adv: float | None = None
    psnr_train: float | None = None
    psnr_test: float | None = None


HISTORY_HEADER = "epoch,loss_mc,loss_eq,loss_adv,psnr_train,psnr_test"


def format_history(history: list[EpochRecord]) -> str:
    def cell(v):
        return "" if v is None else "%.17g" % v

    rows = [HISTORY_HEADER]
    for r in history:
        rows.append(",".join([str(r.epoch), cell(r.loss_mc), cell(r.loss_eq), cell(r.loss_adv),
                              cell(r.psnr_train), cell(r.psnr_test)]))
    return "\n".join(rows) + "\n"


@dataclass
class Adam:
    """Adam optimizer state bound to one parameter list."""

    state: AdamState
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def for_model(cls, model: MLP, **kw) -> "Adam":
        return cls(AdamState.zeros_like(model.params), **kw)

    def update(self, model: MLP, grads) -> None:
        model.params, self.state = adam_step(model.params, grads, self.state, self.lr,
                                             self.betas, self.eps, self.weight_decay)


# -- loss graphs ---------------------------------------------------------------

@dataclass
class LossGraph:
    graph: Graph
    params: list[int]
    total: int
    data: int
    eq: int | None = None
    adv: int | None = None
    x1: int | None = None
    x2: int | None = None
    x3: int | None = None

    def value(self, node) -> float:
        return float(self.graph.value(node)[0])


def _equivariance_branch(lg: LossGraph, model: MLP, A: LinearOperator, group: TransformGroup, g: int):
    graph = lg.graph
    x2 = graph.permute(lg.x1, group.perm(g))
    ax2 = graph.matvec(graph.constant(A.matrix), x2)
    u3 = graph.matvec(graph.constant(A.pinv_matrix), ax2)
    x3 = model.forward(graph, lg.params, u3)
    lg.x2, lg.x3 = x2, x3
    lg.eq = graph.mse(x3, x2)


def ei_loss(model: MLP, A: LinearOperator, group: TransformGroup, y, g: int, alpha: float,
            x=None) -> LossGraph:
    """Graph of ``MSE(A x1, y) + alpha * MSE(x3, x2)``.

    With ``x`` given the data term becomes ``MSE(x1, x)`` (EI-regularized
    supervised learning).
    """
    graph = Graph()
    params = model.attach(graph)
    x1 = reconstruct(model, A, y, graph, params)
    if x is None:
        data = graph.mse(graph.matvec(graph.constant(A.matrix), x1), graph.constant(y))
    else:
        data = graph.mse(x1, graph.constant(x))
    lg = LossGraph(graph, params, data, data, x1=x1)
    _equivariance_branch(lg, model, A, group, g)
    lg.total = graph.add(data, graph.scale(lg.eq, alpha))
    return lg


def mc_loss(model: MLP, A: LinearOperator, y) -> LossGraph:
    graph = Graph()
    params = model.attach(graph)
    x1 = reconstruct(model, A, y, graph, params)
    data = graph.mse(graph.matvec(graph.constant(A.matrix), x1), graph.constant(y))
    return LossGraph(graph, params, data, data, x1=x1)


def sup_loss(model: MLP, A: LinearOperator, y, x) -> LossGraph:
    graph = Graph()
    params = model.attach(graph)
    x1 = reconstruct(model, A, y, graph, params)
    data = graph.mse(x1, graph.constant(x))
    return LossGraph(graph, params, data, data, x1=x1)


def _update(model: MLP, opt: Adam, lg: LossGraph) -> None:
    grads = backward(lg.graph, lg.total)
    opt.update(model, [grads[p] for p in lg.params])


# -- steps -----------------------------------------------------------------------

def _batch(y):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] == 0:
        raise ValueError(f"expected a nonempty batch of shape (B, m), got {y.shape}")
    return y


def mc_step(model: MLP, A: LinearOperator, y, opt: Adam) -> float:
    lg = mc_loss(model, A, _batch(y))
    _update(model, opt, lg)
    return lg.value(lg.data)


def ei_step(model: MLP, A: LinearOperator, group: TransformGroup, y, alpha: float,
            rng: np.random.Generator, opt: Adam) -> tuple[float, float]:
    g = group.sample(rng)
    lg = ei_loss(model, A, group, _batch(y), g, alpha)
    _update(model, opt, lg)
    return lg.value(lg.data), lg.value(lg.eq)


def sup_step(model: MLP, A: LinearOperator, y, x, opt: Adam) -> float:
    lg = sup_loss(model, A, _batch(y), _batch(x))
    _update(model, opt, lg)
    return lg.value(lg.data)


def ei_sup_step(model: MLP, A: LinearOperator, group: TransformGroup, y, x, alpha: float,
                rng: np.random.Generator, opt: Adam) -> tuple[float, float]:
    g = group.sample(rng)
    lg = ei_loss(model, A, group, _batch(y), g, alpha, x=_batch(x))
    _update(model, opt, lg)
    return lg.value(lg.data), lg.value(lg.eq)


def _disc_mean(graph: Graph, disc: MLP, d_params, x: int) -> int:
    """Mean of the scalar discriminator output over the batch, shape (1,)."""
    out = disc.forward(graph, d_params, x)
    B = graph.value(out).shape[0]
    flat = graph.reshape(out, (B,))
    return graph.scale(graph.matvec(graph.constant(np.ones((1, B))), flat), 1.0 / B)


def discriminator_loss(disc: MLP, x1: np.ndarray, x2: np.ndarray) -> tuple[Graph, list[int], int]:
    """Least-squares discriminator objective: push ``D(x1)`` to 1 and ``D(x2)`` to 0."""
    graph = Graph()
    d_params = disc.attach(graph)
    d1 = disc.forward(graph, d_params, graph.constant(x1))
    d2 = disc.forward(graph, d_params, graph.constant(x2))
    ones = graph.constant(np.ones(graph.value(d1).shape))
    zeros = graph.constant(np.zeros(graph.value(d2).shape))
    loss = graph.add(graph.mse(d1, ones), graph.mse(d2, zeros))
    return graph, d_params, loss


def ei_adv_loss(model: MLP, disc: MLP, A: LinearOperator, group: TransformGroup, y, g: int,
                alpha: float, beta: float) -> LossGraph:
    """EI loss plus ``beta * (mean D(x1) + mean(1 - D(x2)))`` with ``D`` frozen."""
    lg = ei_loss(model, A, group, y, g, alpha)
    graph = lg.graph
    d_params = [graph.constant(p) for p in disc.params]
    m1 = _disc_mean(graph, disc, d_params, lg.x1)
    m2 = _disc_mean(graph, disc, d_params, lg.x2)
    lg.adv = graph.add(m1, graph.sub(graph.constant(np.ones(1)), m2))
    lg.total = graph.add(lg.total, graph.scale(lg.adv, beta))
    return lg


def ei_adv_step(model: MLP, disc: MLP, A: LinearOperator, group: TransformGroup, y,
                alpha: float, beta: float, rng: np.random.Generator,
                opt: Adam, disc_opt: Adam) -> tuple[float, float, float, float]:
    """One discriminator update followed by one generator update.

    Returns ``(loss_mc, loss_eq, loss_adv, loss_disc)``.
    """
    y = _batch(y)
    g = group.sample(rng)
    x1 = predict(model, A, y)
    x2 = group.act_flat(g, x1)
    dgraph, d_params, d_loss = discriminator_loss(disc, x1, x2)
    dgrads = backward(dgraph, d_loss)
    disc_opt.update(disc, [dgrads[p] for p in d_params])

    lg = ei_adv_loss(model, disc, A, group, y, g, alpha, beta)
    _update(model, opt, lg)
    return lg.value(lg.data), lg.value(lg.eq), lg.value(lg.adv), float(dgraph.value(d_loss)[0])


# -- loop ------------------------------------------------------------------------

def _streams(seed: int):
    """Independent generators for init, shuffling, group sampling and discriminator."""
    return [np.random.default_rng([seed, k]) for k in range(4)]


def train(config: TrainConfig, A: LinearOperator, group: TransformGroup | None,
          y_train, x_train=None, y_test=None, x_test=None,
          model: MLP | None = None) -> tuple[MLP, list[EpochRecord]]:
    """Run ``config.epochs`` epochs of the configured regime.

    Ground-truth ``x_train``/``x_test`` are used for the supervised regimes'
    loss and, in every regime, for PSNR reporting only.
    """
    y_train = np.asarray(y_train, dtype=np.float64)
    if y_train.ndim != 2 or y_train.shape[0] == 0:
        raise ValueError("training set is empty")
    regime = config.regime
    if regime in ("sup", "ei-sup") and x_train is None:
        raise ValueError(f"regime {regime!r} needs ground-truth signals")
    if regime in ("ei", "ei-sup", "ei-adv"):
        if group is None and config.group is not None:
            group = parse_group(config.group)
        if group is None:
            raise ValueError(f"regime {regime!r} needs a transformation group")

    init_rng, shuffle_rng, group_rng, disc_rng = _streams(config.seed)
    if model is None:
        hidden = config.hidden if config.hidden is not None else [4 * A.n, 4 * A.n]
        model = init_mlp([A.n, *hidden, A.n], init_rng, residual=True,
                         output_scale=config.init_output_scale)
    opt = Adam.for_model(model, lr=config.lr, weight_decay=config.weight_decay)
    disc = disc_opt = None
    if regime == "ei-adv":
        disc = init_mlp([A.n, *config.disc_hidden, 1], disc_rng, residual=False)
        disc_opt = Adam.for_model(disc, lr=config.lr, weight_decay=config.weight_decay)

    N = y_train.shape[0]
    history: list[EpochRecord] = []
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        opt.lr = lr
        if disc_opt is not None:
            disc_opt.lr = lr
        order = shuffle_rng.permutation(N)
        sums = np.zeros(3)
        batches = 0
        for start in range(0, N, config.batch_size):
            idx = order[start:start + config.batch_size]
            yb = y_train[idx]
            xb = None if x_train is None else np.asarray(x_train)[idx]
            if regime == "mc":
                sums[0] += mc_step(model, A, yb, opt)
            elif regime == "ei":
                sums[:2] += ei_step(model, A, group, yb, config.alpha, group_rng, opt)
            elif regime == "sup":
                sums[0] += sup_step(model, A, yb, xb, opt)
            elif regime == "ei-sup":
                sums[:2] += ei_sup_step(model, A, group, yb, xb, config.alpha, group_rng, opt)
            else:
                lmc, leq, ladv, _ = ei_adv_step(model, disc, A, group, yb, config.alpha,
                                                config.beta, group_rng, opt, disc_opt)
                sums += (lmc, leq, ladv)
            batches += 1
        means = sums / batches
        rec = EpochRecord(epoch + 1, float(means[0]))
        if regime in ("ei", "ei-sup", "ei-adv"):
            rec.loss_eq = float(means[1])
        if regime == "ei-adv":
            rec.loss_adv = float(means[2])
        last = epoch == config.epochs - 1
        if last or (epoch + 1) % config.eval_every == 0:
            if x_train is not None:
                rec.psnr_train = mean_psnr(np.asarray(x_train), predict(model, A, y_train))
            if x_test is not None and y_test is not None:
                rec.psnr_test = mean_psnr(np.asarray(x_test), predict(model, A, y_test))
        history.append(rec)
    return model, history


__all__ = [
    "Adam", "EpochRecord", "LossGraph", "REGIMES", "TrainConfig", "discriminator_loss",
    "ei_adv_loss", "ei_adv_step", "ei_loss", "ei_step", "ei_sup_step", "format_history",
    "init_model", "mc_loss", "mc_step", "sup_loss", "sup_step", "train",
]
