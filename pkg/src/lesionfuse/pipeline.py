"""Dataset ingestion, two-task train/predict/evaluate orchestration, and the
single-file model bundle.

The two binary tasks are: task1 = melanoma vs (nevus or seborrheic
keratosis), task2 = seborrheic keratosis vs (nevus or melanoma).  Each task
gets its own forest, its own convnet, and its own fusion weight; the four
models plus the feature layout travel together in one checksummed bundle
file so a partial model can never be used for prediction.

All randomness flows from the single config seed through per-purpose
derived streams, and parallel sections assemble results in input order, so
a (config, dataset, seed) triple fully determines every output byte at any
worker count.
"""

import csv
import hashlib
import json
import os
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import cnn as cnn_mod
from . import features, fusion, imaging, roi, seeding
from .config import TrainSettings
from .errors import BundleError, DataError
from .forest import ForestParams, forest_from_bytes, forest_to_bytes, predict_proba, train_forest

BUNDLE_MAGIC = b"LFSB"
BUNDLE_VERSION = 1
_SECTION_NAMES = ("layout", "forest1", "forest2", "cnn1", "cnn2", "weights", "meta")


class TaskId(Enum):
    TASK1 = "task1"  # melanoma vs rest
    TASK2 = "task2"  # seborrheic keratosis vs rest


@dataclass(frozen=True)
class DatasetRecord:
    image_id: str
    path: Path
    melanoma: int
    seborrheic_keratosis: int


@dataclass
class ModelBundle:
    layout: tuple
    forests: dict  # TaskId -> Forest
    cnns: dict  # TaskId -> CnnModel
    weights: dict  # TaskId -> float
    metadata: dict = field(default_factory=dict)


@dataclass
class TaskMetrics:
    """Validation-split metrics for one task (all None without a split)."""

    report: "fusion.EvalReport | None"
    auc_cnn: float | None
    auc_forest: float | None
    weight: float


def task_label(record: DatasetRecord, task: TaskId) -> int:
    """Binary label of a record under one task."""
    if task is TaskId.TASK1:
        return record.melanoma
    return record.seborrheic_keratosis


def _parse_binary(raw: str, column: str, lineno: int) -> int:
    try:
        value = float(raw)
    except ValueError:
        raise DataError(f"labels line {lineno}: {column} must be 0 or 1, got {raw!r}") from None
    if value not in (0.0, 1.0):
        raise DataError(f"labels line {lineno}: {column} must be 0 or 1, got {raw!r}")
    return int(value)


def load_labels(csv_path, images_dir) -> list[DatasetRecord]:
    """Read an ISIC-style ground-truth CSV and resolve image files.

    Expects header ``image_id,melanoma,seborrheic_keratosis``; labels must
    be binary and mutually exclusive; image ids must be unique and resolve
    to a .png/.jpg/.jpeg file under ``images_dir``.
    """
    csv_path = Path(csv_path)
    images_dir = Path(images_dir)
    if not csv_path.is_file():
        raise DataError(f"labels file not found: {csv_path}")
    records = []
    seen = set()
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["image_id", "melanoma", "seborrheic_keratosis"]:
            raise DataError(
                f"{csv_path}: expected header 'image_id,melanoma,seborrheic_keratosis', got {header}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise DataError(f"labels line {lineno}: expected 3 columns, got {len(row)}")
            image_id = row[0].strip()
            mel = _parse_binary(row[1], "melanoma", lineno)
            sk = _parse_binary(row[2], "seborrheic_keratosis", lineno)
            if mel == 1 and sk == 1:
                raise DataError(
                    f"labels line {lineno}: {image_id} marked both melanoma and "
                    "seborrheic keratosis (diagnoses are mutually exclusive)"
                )
            if image_id in seen:
                raise DataError(f"labels line {lineno}: duplicate image_id {image_id}")
            seen.add(image_id)
            records.append(DatasetRecord(image_id, _resolve_image(images_dir, image_id), mel, sk))
    return records


def _resolve_image(images_dir: Path, image_id: str) -> Path:
    for ext in ("", ".png", ".jpg", ".jpeg", ".PNG", ".JPG", ".JPEG"):
        candidate = images_dir / f"{image_id}{ext}"
        if candidate.is_file():
            return candidate
    raise DataError(f"no image file for id {image_id!r} under {images_dir}")


def resolve_workers(requested: int = 0) -> int:
    """Worker count: ``requested`` (0 = cpu count) capped by LESIONFUSE_THREADS."""
    n = requested if requested > 0 else (os.cpu_count() or 1)
    cap = os.environ.get("LESIONFUSE_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise DataError(f"LESIONFUSE_THREADS must be an integer, got {cap!r}") from None
    return max(1, n)


def _parallel_map(fn, items, workers: int):
    """Order-preserving map, threaded when workers > 1 (results are assembled
    by input index, so the worker count never changes any output)."""
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def stratified_split(labels, fraction: float, rng: np.random.Generator):
    """(train_idx, val_idx): per class, a seeded permutation sends
    round(fraction * n_class) samples to validation.  Raises if either side
    of either class would be empty while fraction > 0."""
    labels = np.asarray(labels)
    if fraction <= 0.0:
        return np.arange(labels.size), np.array([], dtype=np.intp)
    train, val = [], []
    for cls in (0, 1):
        idx = np.nonzero(labels == cls)[0]
        if idx.size == 0:
            raise DataError("a class is absent from the dataset for this task")
        k = int(round(fraction * idx.size))
        if k < 1 or idx.size - k < 1:
            raise DataError(
                f"validation fraction {fraction} leaves a single-class split "
                f"(class {cls} has {idx.size} samples)"
            )
        perm = idx[rng.permutation(idx.size)]
        val.extend(perm[:k])
        train.extend(perm[k:])
    return np.array(sorted(train), dtype=np.intp), np.array(sorted(val), dtype=np.intp)


def _dataset_hash(records) -> str:
    h = hashlib.sha256()
    for r in sorted(records, key=lambda r: r.image_id):
        h.update(f"{r.image_id},{r.melanoma},{r.seborrheic_keratosis}\n".encode())
        with open(r.path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 16), b""):
                h.update(chunk)
    return h.hexdigest()


def _crop(img, settings: TrainSettings):
    return roi.crop_lesion(
        img,
        margin_frac=settings.roi_margin_frac,
        invert_foreground=settings.roi_invert_foreground,
        median_filter=settings.roi_median_filter,
    )


def _forest_params(settings: TrainSettings, seed: int) -> ForestParams:
    return ForestParams(
        n_trees=settings.forest_n_trees,
        mtry=settings.forest_mtry or None,
        max_depth=settings.forest_max_depth or None,
        min_samples_leaf=settings.forest_min_samples_leaf,
        seed=seed,
        hard_vote=settings.forest_hard_vote,
    )


def _branch_predictions(crop, bundle_cnn, forest, settings):
    p_cnn = cnn_mod.predict_image(bundle_cnn, crop, aggregate=settings.cnn_patch_aggregate)
    p_forest = predict_proba(forest, features.final_feature_vector(crop))
    return p_cnn, p_forest


def run_train(settings: TrainSettings):
    """Train both tasks end to end and write the model bundle.

    Per task: locate and crop every lesion, stratified-split the records,
    augment the training split, train the convnet branch on patches and the
    forest branch on feature vectors, tune the fusion weight on the
    validation split, and evaluate.  Returns (bundle, metrics) where
    metrics maps TaskId to an EvalReport (None without a validation split).
    Writes ``model.lfsb``, per-task loss CSVs, and per-task evaluation
    reports into settings.output_dir.
    """
    if not settings.labels_csv or not settings.images_dir or not settings.output_dir:
        raise DataError("config must set labels_csv, images_dir, and output_dir")
    records = load_labels(settings.labels_csv, settings.images_dir)
    if len(records) < 2:
        raise DataError("need at least 2 labeled images")
    out_dir = Path(settings.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = resolve_workers(settings.threads)

    crops = _parallel_map(
        lambda r: _crop(imaging.load_image(r.path), settings), records, workers
    )

    forests, cnns, weights, metrics = {}, {}, {}, {}
    for t_index, task in enumerate(TaskId):
        labels = np.array([task_label(r, task) for r in records], dtype=np.intp)
        split_rng = seeding.derive_rng(settings.seed, seeding.SPLIT, t_index)
        train_idx, val_idx = stratified_split(labels, settings.validation_fraction, split_rng)
        if np.unique(labels[train_idx]).size < 2:
            raise DataError(f"{task.value}: training split contains a single class")

        augmented = []
        for i in train_idx:
            augmented.extend(imaging.augment(crops[i], int(labels[i])))

        # forest branch
        feats = _parallel_map(lambda pair: features.final_feature_vector(pair[0]), augmented, workers)
        aug_labels = np.array([label for _, label in augmented], dtype=np.intp)
        forest = train_forest(
            np.stack(feats),
            aug_labels,
            _forest_params(settings, seeding.derive_seed(settings.seed, seeding.FOREST_TREE, t_index)),
            workers=workers,
            feature_layout_hash=features.layout_hash(),
        )

        # convnet branch
        patch_set = []
        for img, label in augmented:
            patch_set.extend((p, label) for p in imaging.extract_patches(img))
        cfg = cnn_mod.TrainConfig(
            learning_rate=settings.cnn_learning_rate,
            momentum=settings.cnn_momentum,
            batch_size=settings.cnn_batch_size,
            epochs=settings.cnn_epochs,
            seed=seeding.derive_seed(settings.seed, seeding.CNN_INIT, t_index),
        )
        net = cnn_mod.train_cnn(patch_set, cnn_mod.build_cnn(settings.cnn_input_side), cfg)
        _write_loss_csv(out_dir / f"cnn_loss_{task.value}.csv", net.loss_history)

        # fusion weight + validation metrics
        if val_idx.size:
            branch_pairs = _parallel_map(
                lambda i: _branch_predictions(crops[i], net, forest, settings), val_idx, workers
            )
            preds_cnn = [pair[0] for pair in branch_pairs]
            preds_forest = [pair[1] for pair in branch_pairs]
            val_labels = labels[val_idx]
            w = fusion.tune_weight(preds_cnn, preds_forest, val_labels)
            fused = [fusion.fuse(a, b, w) for a, b in zip(preds_cnn, preds_forest)]
            report = fusion.evaluate(fused, val_labels)
            (out_dir / f"eval_{task.value}.txt").write_text(report.to_text())
            task_metrics = TaskMetrics(
                report,
                fusion.auc([p[1] for p in preds_cnn], val_labels),
                fusion.auc([p[1] for p in preds_forest], val_labels),
                w,
            )
        else:
            w = settings.fusion_weight
            task_metrics = TaskMetrics(None, None, None, w)
        forests[task], cnns[task], weights[task], metrics[task] = forest, net, w, task_metrics

    bundle = ModelBundle(
        layout=features.FEATURE_LAYOUT,
        forests=forests,
        cnns=cnns,
        weights=weights,
        metadata={
            "seed": settings.seed,
            "dataset_hash": _dataset_hash(records),
            "timestamp": settings.metadata_timestamp,
            "n_images": len(records),
            # preprocessing knobs, replayed at predict time
            "roi_margin_frac": settings.roi_margin_frac,
            "roi_invert_foreground": settings.roi_invert_foreground,
            "roi_median_filter": settings.roi_median_filter,
            "cnn_patch_aggregate": settings.cnn_patch_aggregate,
        },
    )
    save_bundle(bundle, out_dir / "model.lfsb")
    return bundle, metrics


def _write_loss_csv(path: Path, history) -> None:
    lines = ["epoch,batch,loss"]
    lines += [f"{e},{b},{format(loss, '.10g')}" for e, b, loss in history]
    path.write_text("\n".join(lines) + "\n")


PREDICT_CSV_HEADER = "image_id,task1_prob,task1_class,task2_prob,task2_class"


def _settings_from_metadata(metadata: dict) -> TrainSettings:
    """Preprocessing settings for predict time, replayed from the bundle."""
    settings = TrainSettings()
    settings.roi_margin_frac = float(metadata.get("roi_margin_frac", settings.roi_margin_frac))
    settings.roi_invert_foreground = bool(metadata.get("roi_invert_foreground", False))
    settings.roi_median_filter = bool(metadata.get("roi_median_filter", True))
    settings.cnn_patch_aggregate = str(metadata.get("cnn_patch_aggregate", "mean"))
    return settings


def run_predict(bundle_path, image_paths):
    """Classify images with a trained bundle.

    Returns (rows, n_errors).  Each row is
    [image_id, task1_prob, task1_class, task2_prob, task2_class]; a row for
    an unreadable image carries the marker "error" in every value column
    and does not disturb the other rows.
    """
    bundle = load_bundle(bundle_path)
    settings = _settings_from_metadata(bundle.metadata)
    rows = []
    n_errors = 0
    for path in image_paths:
        image_id = Path(path).stem
        try:
            crop = _crop(imaging.load_image(path), settings)
            row = [image_id]
            for task in TaskId:
                p_cnn, p_forest = _branch_predictions(crop, bundle.cnns[task], bundle.forests[task], settings)
                fused = fusion.fuse(p_cnn, p_forest, bundle.weights[task])
                row += [format(fused[1], ".10g"), str(fusion.classify(fused))]
            rows.append(row)
        except DataError:
            n_errors += 1
            rows.append([image_id, "error", "error", "error", "error"])
    return rows, n_errors


def write_predictions_csv(rows, out_path) -> None:
    lines = [PREDICT_CSV_HEADER] + [",".join(row) for row in rows]
    Path(out_path).write_text("\n".join(lines) + "\n")


def run_evaluate(bundle_path, labels_csv, images_dir):
    """Evaluate a trained bundle against a labeled image set.

    Returns {TaskId: EvalReport} computed from the fused probabilities.
    """
    bundle = load_bundle(bundle_path)
    records = load_labels(labels_csv, images_dir)
    if not records:
        raise DataError("labels file lists no images")
    settings = _settings_from_metadata(bundle.metadata)
    reports = {}
    preds = {task: [] for task in TaskId}
    for record in records:
        crop = _crop(imaging.load_image(record.path), settings)
        for task in TaskId:
            p_cnn, p_forest = _branch_predictions(crop, bundle.cnns[task], bundle.forests[task], settings)
            preds[task].append(fusion.fuse(p_cnn, p_forest, bundle.weights[task]))
    for task in TaskId:
        labels = [task_label(r, task) for r in records]
        reports[task] = fusion.evaluate(preds[task], labels)
    return reports


# --- bundle file format -----------------------------------------------------
#
# magic "LFSB" | u32 version | u32 section count
# per section: 8-byte ascii name | u64 offset | u64 length | u32 crc32
# then the section payloads.


def _encode_sections(bundle: ModelBundle) -> dict:
    return {
        "layout": json.dumps(list(bundle.layout), sort_keys=True, separators=(",", ":")).encode(),
        "forest1": forest_to_bytes(bundle.forests[TaskId.TASK1]),
        "forest2": forest_to_bytes(bundle.forests[TaskId.TASK2]),
        "cnn1": cnn_mod.cnn_to_bytes(bundle.cnns[TaskId.TASK1]),
        "cnn2": cnn_mod.cnn_to_bytes(bundle.cnns[TaskId.TASK2]),
        "weights": struct.pack("<2d", bundle.weights[TaskId.TASK1], bundle.weights[TaskId.TASK2]),
        "meta": json.dumps(bundle.metadata, sort_keys=True, separators=(",", ":")).encode(),
    }


def save_bundle(bundle: ModelBundle, path) -> None:
    """Write the bundle atomically (temp file + rename)."""
    sections = _encode_sections(bundle)
    header_size = 12 + len(_SECTION_NAMES) * 28
    table = b""
    payload = b""
    offset = header_size
    for name in _SECTION_NAMES:
        data = sections[name]
        table += struct.pack("<8sQQI", name.encode("ascii"), offset, len(data), zlib.crc32(data))
        payload += data
        offset += len(data)
    blob = BUNDLE_MAGIC + struct.pack("<II", BUNDLE_VERSION, len(_SECTION_NAMES)) + table + payload
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def load_bundle(path) -> ModelBundle:
    """Read and verify a bundle file.

    Checks magic, version, section table sanity, and a CRC32 per section
    (failures name the damaged section); rejects bundles whose feature
    layout differs from this build's extractor layout.
    """
    path = Path(path)
    if not path.is_file():
        raise BundleError(f"model file not found: {path}")
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != BUNDLE_MAGIC:
        raise BundleError(f"{path}: not a model bundle (bad magic)")
    version, n_sections = struct.unpack_from("<II", data, 4)
    if version != BUNDLE_VERSION:
        raise BundleError(f"{path}: unsupported bundle version {version} (reader supports {BUNDLE_VERSION})")
    if n_sections != len(_SECTION_NAMES) or len(data) < 12 + n_sections * 28:
        raise BundleError(f"{path}: truncated or malformed section table")
    sections = {}
    pos = 12
    for _ in range(n_sections):
        raw_name, offset, length, crc = struct.unpack_from("<8sQQI", data, pos)
        pos += 28
        name = raw_name.rstrip(b"\x00").decode("ascii", "replace")
        if name not in _SECTION_NAMES:
            raise BundleError(f"{path}: unknown section {name!r}")
        if offset + length > len(data):
            raise BundleError(f"{path}: section {name} exceeds file size (truncated file?)")
        blob = data[offset : offset + length]
        if zlib.crc32(blob) != crc:
            raise BundleError(f"{path}: checksum mismatch in section {name}")
        sections[name] = blob
    missing = [n for n in _SECTION_NAMES if n not in sections]
    if missing:
        raise BundleError(f"{path}: missing sections {missing}")
    try:
        layout = tuple(tuple(entry) for entry in json.loads(sections["layout"]))
        forests = {
            TaskId.TASK1: forest_from_bytes(sections["forest1"]),
            TaskId.TASK2: forest_from_bytes(sections["forest2"]),
        }
        cnns = {
            TaskId.TASK1: cnn_mod.cnn_from_bytes(sections["cnn1"]),
            TaskId.TASK2: cnn_mod.cnn_from_bytes(sections["cnn2"]),
        }
        w1, w2 = struct.unpack("<2d", sections["weights"])
        metadata = json.loads(sections["meta"])
    except BundleError:
        raise
    except Exception as exc:
        raise BundleError(f"{path}: malformed section payload ({exc})") from exc
    if layout != features.FEATURE_LAYOUT:
        raise BundleError(
            f"{path}: bundle feature layout does not match this extractor "
            "(model was trained against a different feature layout)"
        )
    return ModelBundle(layout, forests, cnns, {TaskId.TASK1: w1, TaskId.TASK2: w2}, metadata)
