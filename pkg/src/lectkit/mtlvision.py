"""Multi-task multi-view classifier over per-frame view embeddings.

One parameter-shared dense encoder maps each view's embedding into a common
space; the two encodings are fused by elementwise max and a dense classifier
emits nine independent sigmoid scores, one per visual feature. Embeddings are
consumed from files (the extractor is a separate component); this module is
backbone-agnostic given the embedding dimension.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from . import nncore
from .core import VISUAL_FEATURES
from .evaluation import EvalReport, evaluate_predictions
from .labeling import FrameSampleSpec
from .nncore import (
    Activation,
    DenseNet,
    DimensionMismatch,
    LossKind,
    LossSpec,
    TrainConfig,
    balanced_pos_weights,
)

EMBEDDING_MAGIC = b"LEMB"
EMBEDDING_VERSION = 1
VIEW_CAMERA = 0
VIEW_SCREEN = 1
N_VISUAL = len(VISUAL_FEATURES)


def frame_id_for(lecture_id: str, time_s: float) -> str:
    """Canonical frame identity shared with the embedding extractor."""
    return f"{lecture_id}@{time_s:.3f}"


@dataclass(frozen=True)
class FrameRecord:
    """One sampled frame: both view embeddings plus its 9-feature label vector."""

    frame_id: str
    lecture_id: str
    time_s: float
    camera: np.ndarray
    screen: np.ndarray
    labels: np.ndarray  # 9-dim binary, VISUAL_FEATURES order

    def __post_init__(self) -> None:
        if self.camera.shape != self.screen.shape:
            raise DimensionMismatch("camera and screen embeddings differ in dimension")
        if self.labels.shape != (N_VISUAL,):
            raise DimensionMismatch(f"labels must be {N_VISUAL}-dim")


@dataclass
class MtlModel:
    """Siamese encoder + max-pool fusion + multi-label classifier.

    The encoder is one parameter set applied to every view; sharing is
    structural, not copied.
    """

    encoder: DenseNet
    classifier: DenseNet
    loss_spec: LossSpec

    def parameters(self) -> list[np.ndarray]:
        return self.encoder.parameters() + self.classifier.parameters()

    @classmethod
    def create(cls, embedding_dim: int, loss_spec: LossSpec,
               encoder_hidden: int = 256, encoder_out: int = 256,
               classifier_hidden: int = 128, seed: int = 0) -> MtlModel:
        encoder = DenseNet.create(
            [embedding_dim, encoder_hidden, encoder_hidden, encoder_out],
            [Activation.LEAKY_RELU] * 3, seed=seed)
        classifier = DenseNet.create(
            [encoder_out, classifier_hidden, N_VISUAL],
            [Activation.LEAKY_RELU, Activation.SIGMOID], seed=seed + 1)
        return cls(encoder, classifier, loss_spec)

    def forward_batch(self, cameras: np.ndarray, screens: np.ndarray) -> np.ndarray:
        scores, _ = self._forward_cached(cameras, screens)
        return scores

    def _forward_cached(self, cameras: np.ndarray, screens: np.ndarray):
        enc_cam, cache_cam = self.encoder.forward_cached(cameras)
        enc_scr, cache_scr = self.encoder.forward_cached(screens)
        # ties route gradient to the first (camera) view
        take_cam = enc_cam >= enc_scr
        pooled = np.where(take_cam, enc_cam, enc_scr)
        scores, cache_cls = self.classifier.forward_cached(pooled)
        return scores, (cache_cam, cache_scr, take_cam, cache_cls)

    def _backward(self, caches, d_scores: np.ndarray,
                  scores_are_preactivation: bool = False) -> list[np.ndarray]:
        cache_cam, cache_scr, take_cam, cache_cls = caches
        cls_grads, d_pooled = self.classifier.backward(
            cache_cls, d_scores, last_is_preactivation=scores_are_preactivation)
        enc_grads_cam, _ = self.encoder.backward(cache_cam, np.where(take_cam, d_pooled, 0.0))
        enc_grads_scr, _ = self.encoder.backward(cache_scr, np.where(take_cam, 0.0, d_pooled))
        enc_grads = [a + b for a, b in zip(enc_grads_cam, enc_grads_scr)]
        return enc_grads + cls_grads


def mtl_forward(model: MtlModel, record: FrameRecord) -> np.ndarray:
    """Nine class scores in (0,1) for one frame."""
    return model.forward_batch(record.camera[None, :], record.screen[None, :])[0]


def _stack(records: Sequence[FrameRecord]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    cams = np.stack([r.camera for r in records])
    scrs = np.stack([r.screen for r in records])
    labels = np.stack([r.labels for r in records]).astype(float)
    return cams, scrs, labels


@dataclass
class MtlRunResult:
    models: list[MtlModel]
    reports: list[EvalReport]

    def summary(self) -> dict:
        acc = [r.accuracy for r in self.reports]
        bal = [r.balanced.value for r in self.reports]
        return {
            "repeats": len(self.reports),
            "accuracy_mean": float(np.mean(acc)),
            "accuracy_std": float(np.std(acc)),
            "balanced_accuracy_mean": float(np.mean(bal)),
            "balanced_accuracy_std": float(np.std(bal)),
        }


def train_mtl(
    splits: dict[str, Sequence[FrameRecord]],
    loss_variant: str = "weighted",
    config: TrainConfig | None = None,
    encoder_hidden: int = 256,
    encoder_out: int = 256,
    classifier_hidden: int = 128,
) -> MtlRunResult:
    """Train config.repeats models on series-grouped splits; report each repeat.

    loss_variant "plain" is unweighted binary cross-entropy; "weighted" uses
    inverse-frequency class weights from the training split.
    """
    config = config or TrainConfig(repeats=5)
    train_recs, dev_recs, test_recs = splits["train"], splits["dev"], splits["test"]
    if not train_recs or not dev_recs or not test_recs:
        raise ValueError("train/dev/test must all be non-empty")
    cams, scrs, y = _stack(train_recs)
    dev = _stack(dev_recs)
    test = _stack(test_recs)

    if loss_variant == "weighted":
        loss_spec = LossSpec(LossKind.BINARY_CROSS_ENTROPY, balanced_pos_weights(y))
    elif loss_variant == "plain":
        loss_spec = LossSpec(LossKind.BINARY_CROSS_ENTROPY)
    else:
        raise ValueError(f"unknown loss variant {loss_variant!r}")

    models, reports = [], []
    for repeat in range(config.repeats):
        seed = config.seed + 1000 * repeat
        model = MtlModel.create(cams.shape[1], loss_spec, encoder_hidden,
                                encoder_out, classifier_hidden, seed=seed)
        _fit(model, (cams, scrs, y), dev, config, seed)
        preds = model.forward_batch(test[0], test[1]) >= 0.5
        report = evaluate_predictions(
            preds, test[2], [f.code for f in VISUAL_FEATURES],
            meta={"repeat": repeat, "seed": seed, "loss_variant": loss_variant})
        models.append(model)
        reports.append(report)
    return MtlRunResult(models, reports)


def _fit(model: MtlModel, train_data, dev_data, config: TrainConfig, seed: int) -> None:
    cams, scrs, y = train_data
    dev_cams, dev_scrs, dev_y = dev_data
    rng = np.random.default_rng(seed)
    velocity = [np.zeros_like(p) for p in model.parameters()]
    best_metric, best_params, stall = -np.inf, None, 0

    for epoch in range(config.max_epochs):
        order = rng.permutation(len(cams))
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            scores, caches = model._forward_cached(cams[idx], scrs[idx])
            value, d_scores, fused = nncore.training_loss_and_grad(
                model.loss_spec, scores, y[idx],
                model.classifier.layers[-1].activation)
            if not np.isfinite(value):
                raise nncore.Divergence(f"non-finite loss {value} at epoch {epoch}")
            grads = model._backward(caches, d_scores, scores_are_preactivation=fused)
            for p, g, v in zip(model.parameters(), grads, velocity):
                v *= config.momentum
                v -= config.learning_rate * g
                p += v

        dev_scores = model.forward_batch(dev_cams, dev_scrs)
        metric = _dev_balanced_accuracy(dev_scores, dev_y)
        if metric > best_metric:
            best_metric = metric
            best_params = [p.copy() for p in model.parameters()]
            stall = 0
        else:
            stall += 1
            if stall > config.early_stop_patience:
                break

    if best_params is not None:
        for p, saved in zip(model.parameters(), best_params):
            p[...] = saved


def _dev_balanced_accuracy(scores: np.ndarray, targets: np.ndarray) -> float:
    preds, truth = scores >= 0.5, targets > 0.5
    recalls = []
    for c in range(targets.shape[1]):
        positives = truth[:, c].sum()
        if positives:
            recalls.append((preds[:, c] & truth[:, c]).sum() / positives)
    return float(np.mean(recalls)) if recalls else 0.0


def confusion_pairs(models: Sequence[MtlModel],
                    records: Sequence[FrameRecord]) -> np.ndarray:
    """Directional substitution errors: M[i][j] counts frames where feature i
    is truly present but missed while feature j is predicted without being
    present. Summed over models."""
    cams, scrs, y = _stack(records)
    truth = y > 0.5
    matrix = np.zeros((N_VISUAL, N_VISUAL), dtype=int)
    for model in models:
        preds = model.forward_batch(cams, scrs) >= 0.5
        missed = truth & ~preds  # (n, 9)
        spurious = preds & ~truth
        matrix += missed.astype(int).T @ spurious.astype(int)
    return matrix


# ---------------------------------------------------------------------------
# Embedding file format (shared contract with the extractor component)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmbeddingRecord:
    frame_id: str
    view_id: int  # 0 camera, 1 screen
    vector: np.ndarray  # float32


def write_embeddings(path: Path, dim: int, records: Iterable[EmbeddingRecord],
                     backbone: str = "synthetic", tap: str = "none",
                     meta: dict | None = None) -> None:
    """Little-endian container: magic, version, JSON header, then one record
    per (frame, view) with float32 vectors."""
    header = {"backbone": backbone, "tap": tap, "dim": dim, "meta": meta or {}}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<I", EMBEDDING_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for rec in records:
            _write_record(fh, rec, dim)


def _write_record(fh: BinaryIO, rec: EmbeddingRecord, dim: int) -> None:
    vec = np.ascontiguousarray(rec.vector, dtype="<f4")
    if vec.shape != (dim,):
        raise DimensionMismatch(f"record {rec.frame_id} has dim {vec.shape}, header says {dim}")
    fid = rec.frame_id.encode("utf-8")
    fh.write(struct.pack("<H", len(fid)))
    fh.write(fid)
    fh.write(struct.pack("<B", rec.view_id))
    fh.write(vec.tobytes())


def read_embeddings(path: Path) -> tuple[dict, list[EmbeddingRecord]]:
    """Read an embedding file back; vectors stay float32 (bit-exact round-trip)."""
    with open(path, "rb") as fh:
        if fh.read(4) != EMBEDDING_MAGIC:
            raise ValueError(f"{path}: not an embedding file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != EMBEDDING_VERSION:
            raise ValueError(f"{path}: unsupported embedding version {version}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        dim = int(header["dim"])
        records = []
        while True:
            raw = fh.read(2)
            if not raw:
                break
            (flen,) = struct.unpack("<H", raw)
            frame_id = fh.read(flen).decode("utf-8")
            (view_id,) = struct.unpack("<B", fh.read(1))
            vec = np.frombuffer(fh.read(dim * 4), dtype="<f4")
            if vec.size != dim:
                raise ValueError(f"{path}: truncated record for {frame_id}")
            records.append(EmbeddingRecord(frame_id, view_id, vec))
    return header, records


def frames_from_embeddings(records: Sequence[EmbeddingRecord],
                           specs: Sequence[FrameSampleSpec]) -> list[FrameRecord]:
    """Join embedding records with frame specs on the canonical frame id."""
    by_frame: dict[str, dict[int, np.ndarray]] = {}
    for rec in records:
        by_frame.setdefault(rec.frame_id, {})[rec.view_id] = rec.vector
    frames = []
    for spec in specs:
        fid = frame_id_for(spec.lecture_id, spec.time_s)
        views = by_frame.get(fid)
        if views is None or VIEW_CAMERA not in views or VIEW_SCREEN not in views:
            raise KeyError(f"embeddings missing for frame {fid}")
        frames.append(FrameRecord(fid, spec.lecture_id, spec.time_s,
                                  np.asarray(views[VIEW_CAMERA], dtype=float),
                                  np.asarray(views[VIEW_SCREEN], dtype=float),
                                  np.asarray(spec.labels, dtype=float)))
    return frames


# ---------------------------------------------------------------------------
# Synthetic two-view embedding corpus (verification substrate; also the
# stand-in when no extractor-produced embeddings exist)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrameSynthConfig:
    seed: int = 0
    n_frames: int = 5000
    embedding_dim: int = 64
    n_series: int = 6
    lectures_per_series: int = 3
    noise: float = 0.05
    prevalences: tuple[float, ...] = (0.35, 0.2, 0.3, 0.15, 0.3, 0.1, 0.25, 0.3, 0.4)


def generate_synthetic_frames(config: FrameSynthConfig
                              ) -> tuple[list[FrameRecord], list[str]]:
    """Two-view embeddings with nine planted linearly-separable concepts.

    Each concept adds a fixed direction to one view (first five to the
    camera view, last five to the screen view, overlapping in the middle)
    plus isotropic noise. Returns records and their series group keys.
    """
    rng = np.random.default_rng(config.seed)
    dim = config.embedding_dim
    directions = rng.normal(size=(N_VISUAL, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    camera_classes = set(range(5))
    screen_classes = set(range(4, N_VISUAL))

    records, keys = [], []
    n_lectures = config.n_series * config.lectures_per_series
    for i in range(config.n_frames):
        lecture_idx = i % n_lectures
        series = f"ser{lecture_idx // config.lectures_per_series:02d}"
        lecture_id = f"vlec{lecture_idx:03d}"
        labels = (rng.random(N_VISUAL) < np.asarray(config.prevalences)).astype(float)
        camera = rng.normal(scale=config.noise, size=dim)
        screen = rng.normal(scale=config.noise, size=dim)
        for c in range(N_VISUAL):
            if labels[c]:
                if c in camera_classes:
                    camera += directions[c]
                if c in screen_classes:
                    screen += directions[c]
        time_s = round(10.0 + i * 0.5, 3)
        records.append(FrameRecord(frame_id_for(lecture_id, time_s), lecture_id,
                                   time_s, camera, screen, labels))
        keys.append(series)
    return records, keys


def save_mtl_model(model: MtlModel, path_prefix: Path, meta: dict | None = None) -> None:
    """Two nncore checkpoints per model: <prefix>.encoder.nnck / <prefix>.classifier.nnck."""
    nncore.save_checkpoint(Path(f"{path_prefix}.encoder.nnck"), model.encoder,
                           loss_spec=model.loss_spec, meta=meta)
    nncore.save_checkpoint(Path(f"{path_prefix}.classifier.nnck"), model.classifier,
                           loss_spec=model.loss_spec, meta=meta)


def load_mtl_model(path_prefix: Path) -> MtlModel:
    enc = nncore.load_checkpoint(Path(f"{path_prefix}.encoder.nnck"))
    cls = nncore.load_checkpoint(Path(f"{path_prefix}.classifier.nnck"))
    return MtlModel(enc.net, cls.net, enc.loss_spec or LossSpec())
