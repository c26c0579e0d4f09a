"""Cross-entropy training with Adam, evaluation, prediction maps, checkpoints."""

from __future__ import annotations

import csv
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .data import HsiCube, LabelMap, Split, extract_patch, normalize, stratified_split
from .errors import ConfigError, DivergenceError, FormatError
from .metrics import EvalReport, build_report, confusion_matrix
from .model import (
    ClassifierParams,
    ModelConfig,
    build_model_phase,
    classify,
    init_model,
    model_forward,
    named_parameters,
    set_parameter,
)

CKPT_MAGIC = b"EFCK1\n"


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 60
    batch_size: int = 64
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    patch_size: int = 9
    train_fraction: float = 0.05
    threads: int = 1
    deterministic: bool = True

    def validate(self) -> None:
        if self.learning_rate < 0 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("learning_rate must be >= 0, epochs/batch_size >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must be in (0, 1), got {self.train_fraction}")


class Adam:
    """Standard first/second-moment optimizer over named parameters."""

    def __init__(self, config: TrainConfig):
        self.lr = config.learning_rate
        self.beta1 = config.beta1
        self.beta2 = config.beta2
        self.eps = config.adam_eps
        self.step_count = 0
        self.moment1: dict = {}
        self.moment2: dict = {}

    def step(self, params: ClassifierParams, grads: dict) -> None:
        self.step_count += 1
        t = self.step_count
        for name, tensor in named_parameters(params):
            grad = grads.get(name)
            if grad is None:
                grad = np.zeros_like(tensor.data)
            m = self.moment1.get(name, 0.0) * self.beta1 + (1 - self.beta1) * grad
            v = self.moment2.get(name, 0.0) * self.beta2 + (1 - self.beta2) * grad * grad
            self.moment1[name] = m
            self.moment2[name] = v
            m_hat = m / (1 - self.beta1**t)
            v_hat = v / (1 - self.beta2**t)
            new_data = tensor.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            set_parameter(params, name, Tensor(new_data, requires_grad=True))


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Negative log-likelihood of a 1-based class label; log C at uniform logits."""
    return ad.logsumexp(logits, axis=0) - logits[label - 1]


def _gather_patches(cube: HsiCube, labels: LabelMap, indices, window: int):
    patches = []
    for center in indices:
        patch = extract_patch(cube, labels, center, window, mode="mirror")
        patches.append((patch.data.astype(np.float64), patch.label))
    return patches


def _sample_pass(patch, label, params, config, phase):
    with Tape() as tape:
        logits, _ = model_forward(patch, params, config, phase=phase)
        loss = cross_entropy(logits, label)
    leaf_grads = tape.backward(loss)
    return loss.item(), leaf_grads


def train(
    cube: HsiCube,
    labels: LabelMap,
    split: Split,
    params: ClassifierParams,
    model_config: ModelConfig,
    train_config: TrainConfig,
    log=None,
):
    """Minimize mean cross-entropy over the training pixels with Adam.

    The cube is expected normalized. Per-sample gradients are accumulated
    in sample order (fixed-order reduction, so results match between the
    threaded and single-threaded paths) and averaged per batch. Returns
    (params, per-epoch mean losses, elapsed seconds).
    """
    train_config.validate()
    if not split.train_indices:
        raise ConfigError("split has no training pixels")
    started = time.monotonic()
    rng = np.random.default_rng(train_config.seed)
    samples = _gather_patches(cube, labels, split.train_indices, model_config.window)
    phase = build_model_phase(params, model_config)
    rebuild_phase = params.fope is not None
    optimizer = Adam(train_config)
    losses = []
    workers = max(1, train_config.threads)
    if train_config.deterministic:
        workers = 1

    for epoch in range(train_config.epochs):
        order = rng.permutation(len(samples))
        epoch_loss = 0.0
        for batch_start in range(0, len(order), train_config.batch_size):
            batch = order[batch_start : batch_start + train_config.batch_size]
            name_of = {id(t): n for n, t in named_parameters(params)}
            jobs = [(samples[i][0], samples[i][1]) for i in batch]
            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    results = list(pool.map(lambda j: _sample_pass(j[0], j[1], params, model_config, phase), jobs))
            else:
                results = [_sample_pass(p, l, params, model_config, phase) for p, l in jobs]

            accumulated: dict = {}
            batch_loss = 0.0
            for loss_val, leaf_grads in results:  # fixed order
                batch_loss += loss_val
                for tensor, grad in leaf_grads.items():
                    name = name_of.get(id(tensor))
                    if name is None:
                        continue
                    if name in accumulated:
                        accumulated[name] = accumulated[name] + grad
                    else:
                        accumulated[name] = grad
            scale = 1.0 / len(batch)
            accumulated = {k: v * scale for k, v in accumulated.items()}
            batch_loss *= scale
            if not np.isfinite(batch_loss):
                raise DivergenceError(
                    "training loss is not finite", epoch=epoch, batch=batch_start // train_config.batch_size
                )
            optimizer.step(params, accumulated)
            if rebuild_phase:
                phase = build_model_phase(params, model_config)
            epoch_loss += batch_loss * len(batch)
        epoch_loss /= len(samples)
        losses.append(epoch_loss)
        if log is not None:
            log(epoch, epoch_loss)
    return params, losses, time.monotonic() - started


def predict_label(patch: np.ndarray, params: ClassifierParams, config: ModelConfig, phase=None) -> int:
    logits, _ = model_forward(patch, params, config, phase=phase)
    return int(np.argmax(classify(logits).data)) + 1


def evaluate(
    cube: HsiCube,
    labels: LabelMap,
    split: Split,
    params: ClassifierParams,
    config: ModelConfig,
    train_time_seconds: float = 0.0,
) -> EvalReport:
    """Score the test pixels only; confusion rows follow the split's truth."""
    if labels.num_classes != config.classes:
        raise ConfigError(f"label map has {labels.num_classes} classes, model expects {config.classes}")
    phase = build_model_phase(params, config)
    truth, predicted = [], []
    for center in split.test_indices:
        patch = extract_patch(cube, labels, center, config.window, mode="mirror")
        truth.append(patch.label)
        predicted.append(predict_label(patch.data.astype(np.float64), params, config, phase))
    confusion = confusion_matrix(truth, predicted, config.classes)
    return build_report(confusion, train_time_seconds=train_time_seconds)


def predict_map(
    cube: HsiCube,
    labels: LabelMap,
    params: ClassifierParams,
    config: ModelConfig,
    all_pixels: bool = False,
) -> LabelMap:
    """Predicted label for every labeled pixel (optionally every pixel)."""
    phase = build_model_phase(params, config)
    out = np.zeros((cube.rows, cube.cols), dtype=np.uint16)
    scratch = labels if not all_pixels else LabelMap(np.ones((cube.rows, cube.cols), dtype=np.uint16))
    for r in range(cube.rows):
        for c in range(cube.cols):
            if scratch.labels[r, c] == 0:
                continue
            patch = extract_patch(cube, scratch, (r, c), config.window, mode="mirror")
            out[r, c] = predict_label(patch.data.astype(np.float64), params, config, phase)
    return LabelMap(out)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: ClassifierParams) -> None:
    """Manifest of (name, rank, extents) then float64 LE payloads, in the
    deterministic parameter order."""
    entries = named_parameters(params)
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(entries)))
        for name, tensor in entries:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", tensor.data.ndim))
            for extent in tensor.shape:
                fh.write(struct.pack("<I", extent))
        for _, tensor in entries:
            fh.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict:
    """Name -> float64 array, validated against the manifest."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:6] != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {raw[:6]!r}", offset=0)
    offset = 6

    def take(fmt: str, count: int):
        nonlocal offset
        if offset + count > len(raw):
            raise FormatError("truncated checkpoint manifest", offset=len(raw))
        values = struct.unpack_from(fmt, raw, offset)
        offset += count
        return values

    (num_entries,) = take("<I", 4)
    manifest = []
    for _ in range(num_entries):
        (name_len,) = take("<I", 4)
        if offset + name_len > len(raw):
            raise FormatError("truncated checkpoint name", offset=len(raw))
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = take("<I", 4)
        extents = tuple(take("<" + "I" * rank, 4 * rank)) if rank else ()
        manifest.append((name, extents))
    state = {}
    for name, extents in manifest:
        count = int(np.prod(extents)) if extents else 1
        end = offset + count * 8
        if end > len(raw):
            raise FormatError(f"truncated payload for {name}", offset=len(raw))
        state[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(extents)
        offset = end
    if offset != len(raw):
        raise FormatError("trailing bytes after checkpoint payload", offset=offset)
    return state


def apply_state(params: ClassifierParams, state: dict) -> None:
    names = [n for n, _ in named_parameters(params)]
    missing = [n for n in names if n not in state]
    extra = [n for n in state if n not in names]
    if missing or extra:
        raise ConfigError(f"checkpoint does not match model: missing {missing}, unexpected {extra}")
    for name, tensor in named_parameters(params):
        if state[name].shape != tensor.shape:
            raise ConfigError(f"checkpoint shape {state[name].shape} for {name} does not match model {tensor.shape}")
    for name in names:
        set_parameter(params, name, Tensor(state[name], requires_grad=True))


def write_loss_csv(path, losses) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(losses):
            writer.writerow([epoch, repr(loss)])


# ---------------------------------------------------------------------------
# end-to-end convenience used by the CLI and the acceptance suite


def run_pipeline(
    cube: HsiCube,
    labels: LabelMap,
    model_config: ModelConfig,
    train_config: TrainConfig,
    log=None,
):
    """normalize -> split -> init -> train -> evaluate; returns
    (params, split, report, losses)."""
    normalized = normalize(cube)
    split = stratified_split(labels, train_config.train_fraction, train_config.seed)
    params = init_model(model_config, train_config.seed)
    params, losses, elapsed = train(normalized, labels, split, params, model_config, train_config, log=log)
    report = evaluate(normalized, labels, split, params, model_config, train_time_seconds=elapsed)
    return params, split, report, losses
