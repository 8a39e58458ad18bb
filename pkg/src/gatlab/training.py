"""Adam, plateau learning-rate decay, and the DictionaryLookup training loop."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .dictlookup import DictLookupModel, evaluate
from .errors import DimensionError, DivergenceError

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("params, grads and Adam state must have equal length")
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionError(f"adam_step: param {p.shape} vs grad {g.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


class Adam:
    """Adam over a list of :class:`~gatlab.tensor.Tensor` parameters."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = (beta1, beta2)
        self.eps = eps
        self.state = AdamState.zeros_like([p.data for p in self.params])

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adam_step([p.data for p in self.params], grads, self.state, self.lr, *self.betas, self.eps)


@dataclass
class TrainConfig:
    kind: str = "gatv2"
    heads: int = 1
    hidden: int = 128
    lr: float = 1e-3
    batch_size: int = 1024
    lr_decay: float = 0.5
    max_epochs: int = 1000
    seed: int = 0
    shared_w: bool | None = None
    plateau_window: int = 50
    plateau_threshold: float = 1e-4
    early_stop_window: int = 20

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")


@dataclass
class RunResult:
    train_curve: list = field(default_factory=list)
    test_curve: list = field(default_factory=list)
    loss_curve: list = field(default_factory=list)
    final_train: float = 0.0
    final_test: float = 0.0
    best_epoch: int = 0
    epochs: int = 0
    final_lr: float = 0.0
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)

    def to_json(self, path=None):
        text = json.dumps(asdict(self), indent=2)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_acc", "test_acc"])
            for e, (tr, te) in enumerate(zip(self.train_curve, self.test_curve), start=1):
                w.writerow([e, repr(tr), repr(te)])


def _batches(train_idx, graphs_per_batch, rng):
    order = rng.permutation(train_idx)
    return [order[s:s + graphs_per_batch] for s in range(0, order.shape[0], graphs_per_batch)]


def train_model(cfg, data, progress=None):
    """Train a :class:`DictLookupModel` and return the best-test-epoch snapshot.

    The learning rate is multiplied by ``lr_decay`` whenever train accuracy
    has not improved by ``plateau_threshold`` for ``plateau_window`` epochs.
    Training stops early once train accuracy has been 1.0 for
    ``early_stop_window`` consecutive epochs.
    """
    if len(data) == 0 or data.train.size == 0:
        raise ValueError("training needs a non-empty train split")
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    model = DictLookupModel.init(cfg.kind, data.k, hidden=cfg.hidden, heads=cfg.heads,
                                 shared_w=cfg.shared_w, seed=int(rng.integers(2**31)))
    opt = Adam(model.parameters(), lr=cfg.lr)
    labels = data.labels
    graphs_per_batch = max(1, cfg.batch_size // data.k)
    result = RunResult(config=asdict(cfg))

    best_test, best_params = None, None
    best_train, stall, perfect_run = -1.0, 0, 0
    for epoch in range(1, cfg.max_epochs + 1):
        losses = []
        for idx in _batches(data.train, graphs_per_batch, rng):
            opt.zero_grad()
            with T.Tape() as tape:
                logits = model.logits(data.key_attrs[idx], data.key_values[idx], data.query_attrs[idx])
                loss = T.cross_entropy(logits, labels[idx].reshape(-1))
                if not np.isfinite(loss.item()):
                    raise DivergenceError(f"loss became {loss.item()} at epoch {epoch}", epoch)
                tape.backward(loss)
            opt.step()
            losses.append(loss.item())

        train_acc = evaluate(model, data, "train")
        test_acc = evaluate(model, data, "test") if data.test.size else float("nan")
        result.train_curve.append(train_acc)
        result.test_curve.append(test_acc)
        result.loss_curve.append(float(np.mean(losses)))
        if progress is not None:
            progress(epoch, result.loss_curve[-1], train_acc, test_acc, opt.lr)

        # ties on test accuracy go to the better-fitting epoch
        if best_params is None or (test_acc, train_acc) > best_test:
            best_test = (test_acc, train_acc)
            best_params = [p.data.copy() for p in model.parameters()]
            result.best_epoch = epoch

        if train_acc > best_train + cfg.plateau_threshold:
            best_train, stall = train_acc, 0
        else:
            stall += 1
            if stall >= cfg.plateau_window:
                opt.lr *= cfg.lr_decay
                stall = 0
                log.info("epoch %d: train accuracy plateaued, lr -> %g", epoch, opt.lr)

        perfect_run = perfect_run + 1 if train_acc == 1.0 else 0
        result.epochs = epoch
        if perfect_run >= cfg.early_stop_window:
            break

    for p, saved in zip(model.parameters(), best_params):
        p.data[...] = saved
    result.final_train = result.train_curve[result.best_epoch - 1]
    result.final_test = result.test_curve[result.best_epoch - 1]
    result.final_lr = opt.lr
    result.wall_time = time.perf_counter() - start
    return model, result
