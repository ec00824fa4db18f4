"""
Training loop: AdamW with decoupled weight decay, cross-entropy loss,
single-run training and evaluation.
"""
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Mapping, Optional, Tuple

import numpy as np

import autodiff as ad
from autodiff import Tensor
from classifier import Classifier, build, count_parameters
from errors import DataError, NonFiniteGradientError
from har_loader import DatasetSplit, batches
from models import RunRecord, TrainConfig, VariantSpec
from tokenizer import check_p_band

logger = logging.getLogger(__name__)

EVAL_BATCH_SIZE = 256

Progress = Callable[[str], None]


def is_decayed(name: str) -> bool:
    """Weight decay skips GeM exponents, layer-norm affine parameters and biases."""
    return not (name.startswith("tokenizer.") or name.endswith(".bias") or name.endswith(".gain"))


@dataclass
class AdamWState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: Mapping[str, np.ndarray], grads: Mapping[str, Optional[np.ndarray]],
               state: AdamWState, cfg: TrainConfig,
               decay: Optional[Mapping[str, bool]] = None) -> AdamWState:
    """One AdamW update, in place on ``params``.

    A missing gradient counts as zero. Decay is ``theta -= lr * wd * theta``
    for names selected by ``decay`` (default :func:`is_decayed`).
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for {name}")
    state.step += 1
    t = state.step
    bias1 = 1.0 - cfg.beta1 ** t
    bias2 = 1.0 - cfg.beta2 ** t
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(theta)
        decayed = decay[name] if decay is not None else is_decayed(name)
        if decayed and cfg.weight_decay:
            theta *= 1.0 - cfg.lr * cfg.weight_decay
        m = state.m.setdefault(name, np.zeros_like(theta))
        v = state.v.setdefault(name, np.zeros_like(theta))
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        theta -= cfg.lr * (m / bias1) / (np.sqrt(v / bias2) + cfg.adam_eps)
    return state


class AdamW:
    """AdamW bound to a model's named parameter tensors."""

    def __init__(self, params: Mapping[str, Tensor], cfg: TrainConfig):
        self.params = dict(params)
        self.cfg = cfg
        self.state = AdamWState()
        self.decay = {name: is_decayed(name) for name in self.params}

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.zero_grad()

    def gradients(self) -> Dict[str, Optional[np.ndarray]]:
        return {name: tensor.grad for name, tensor in self.params.items()}

    def step(self, grads: Optional[Mapping[str, Optional[np.ndarray]]] = None) -> None:
        grads = self.gradients() if grads is None else grads
        adamw_step({n: t.data for n, t in self.params.items()}, grads, self.state, self.cfg, self.decay)


def clip_grad_norm(grads: Dict[str, Optional[np.ndarray]], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``; returns the norm."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values() if g is not None)))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for name, g in grads.items():
            if g is not None:
                grads[name] = g * scale
    return total


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood from a stable log-softmax."""
    labels = np.asarray(labels)
    batch, n_classes = logits.shape
    if labels.shape != (batch,):
        raise DataError(f"expected {batch} labels, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= n_classes) or np.any(labels != np.round(labels)):
        raise DataError(f"labels must be integers in [0, {n_classes}), got {labels.tolist()}")
    one_hot = np.zeros((batch, n_classes))
    one_hot[np.arange(batch), labels.astype(np.int64)] = 1.0
    picked = (ad.log_softmax(logits, axis=-1) * Tensor(one_hot)).sum()
    return picked * (-1.0 / batch)


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray           # rows = true class, columns = predicted
    predictions: np.ndarray


def evaluate(model: Classifier, split: DatasetSplit, batch_size: int = EVAL_BATCH_SIZE) -> EvalResult:
    """Accuracy and confusion matrix with dropout off, in source order."""
    n_classes = model.model_cfg.n_classes
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    predictions = []
    for signals, labels in batches(split, batch_size):
        predicted = model.predict_logits(signals).argmax(axis=-1)
        np.add.at(confusion, (labels, predicted), 1)
        predictions.append(predicted)
    predicted_all = np.concatenate(predictions) if predictions else np.zeros(0, dtype=np.int64)
    total = int(confusion.sum())
    accuracy = float(np.trace(confusion)) / total if total else 0.0
    return EvalResult(accuracy=accuracy, confusion=confusion, predictions=predicted_all)


def run_config_snapshot(variant: VariantSpec, train_cfg: TrainConfig) -> Dict[str, object]:
    tokenizer = asdict(variant.tokenizer)
    tokenizer["depth_set"] = list(variant.tokenizer.depth_set)
    train = asdict(train_cfg)
    train["seeds"] = list(train_cfg.seeds)
    return {"tokenizer": tokenizer, "model": asdict(variant.model), "train": train}


def _check_gradients(grads: Mapping[str, Optional[np.ndarray]], seed: int, epoch: int, batch: int) -> None:
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(
                f"non-finite gradient for {name} (seed={seed}, epoch={epoch}, batch={batch})"
            )


def train_one(variant: VariantSpec, train_cfg: TrainConfig, seed: int,
              data: Tuple[DatasetSplit, DatasetSplit],
              progress: Optional[Progress] = print) -> Tuple[RunRecord, Classifier]:
    """Train one model from scratch and evaluate it on the test split.

    Initialization, shuffling and dropout masks all derive from ``seed``.
    """
    train_cfg.validate()
    train_split, test_split = data
    shuffle_seq, dropout_seq = np.random.SeedSequence(seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq)

    model = build(variant.model, variant.tokenizer, seed)
    optimizer = AdamW(model.parameters(), train_cfg)
    record = RunRecord(
        variant=variant.name,
        seed=seed,
        config=run_config_snapshot(variant, train_cfg),
        param_count=count_parameters(model),
        selection=train_cfg.selection,
        initial_p=model.tokenizer.learned_p(),
    )
    tag = f"[{variant.name} seed={seed}]"
    if progress:
        progress(f"{tag} parameters={record.param_count}")

    started = time.perf_counter()
    nonzero_grads = set()
    for epoch in range(1, train_cfg.epochs + 1):
        loss_sum, correct, seen = 0.0, 0, 0
        for batch_index, (signals, labels) in enumerate(
                batches(train_split, train_cfg.batch_size, shuffle_rng), start=1):
            optimizer.zero_grad()
            logits = model.forward_windows(signals, train_mode=True, rng=dropout_rng)
            loss = cross_entropy(logits, labels)
            loss.backward()
            if record.initial_loss is None:
                record.initial_loss = loss.item()

            grads = optimizer.gradients()
            _check_gradients(grads, seed, epoch, batch_index)
            if epoch == 1:
                nonzero_grads.update(n for n, g in grads.items() if g is not None and np.any(g != 0))
            if train_cfg.clip is not None:
                clip_grad_norm(grads, train_cfg.clip)
            optimizer.step(grads)

            loss_sum += loss.item() * len(labels)
            correct += int(np.sum(logits.data.argmax(axis=-1) == labels))
            seen += len(labels)

        record.epoch_loss.append(loss_sum / seen)
        record.epoch_accuracy.append(correct / seen)
        if epoch == 1:
            record.dead_parameters = [n for n in optimizer.params if n not in nonzero_grads]
            if record.dead_parameters:
                logger.warning("%s no gradient reached: %s", tag, ", ".join(record.dead_parameters))
        line = f"{tag} epoch {epoch}/{train_cfg.epochs} loss={record.epoch_loss[-1]:.4f} acc={record.epoch_accuracy[-1]:.4f}"
        if train_cfg.selection == "best":
            record.epoch_test_accuracy.append(evaluate(model, test_split).accuracy)
            line += f" test_acc={record.epoch_test_accuracy[-1]:.4f}"
        if progress:
            progress(line)

    if record.epoch_test_accuracy:
        record.final_test_accuracy = record.epoch_test_accuracy[-1]
    else:
        record.final_test_accuracy = evaluate(model, test_split).accuracy
    if train_cfg.selection == "best":
        record.test_accuracy = max(record.epoch_test_accuracy)
    else:
        record.test_accuracy = record.final_test_accuracy
    record.learned_p = model.tokenizer.learned_p()
    record.wall_time_s = time.perf_counter() - started

    if record.learned_p:
        issue = check_p_band(record.p_values)
        if issue:
            logger.warning("%s %s", tag, issue)
    if progress:
        progress(f"{tag} test_acc={record.test_accuracy:.4f} ({record.selection} epoch)")
    return record, model
