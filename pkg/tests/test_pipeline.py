import numpy as np
import pytest

from lesionfuse import cli, synthetic
from lesionfuse.config import TrainSettings, apply_overrides, parse_config
from lesionfuse.errors import BundleError, DataError
from lesionfuse.pipeline import (
    PREDICT_CSV_HEADER,
    TaskId,
    load_bundle,
    load_labels,
    run_evaluate,
    run_predict,
    run_train,
    save_bundle,
    stratified_split,
    task_label,
    write_predictions_csv,
)
from lesionfuse.seeding import derive_rng


def write_labels(path, rows, header="image_id,melanoma,seborrheic_keratosis"):
    path.write_text("\n".join([header] + rows) + "\n")
    return path


def make_images(directory, ids):
    from PIL import Image as PilImage

    directory.mkdir(parents=True, exist_ok=True)
    for image_id in ids:
        arr = np.random.default_rng(abs(hash(image_id)) % 2**32).integers(
            0, 256, size=(16, 16, 3), dtype=np.uint8
        )
        PilImage.fromarray(arr).save(directory / f"{image_id}.png")


def test_load_labels_valid_rows(tmp_path):
    make_images(tmp_path / "img", ["A", "B", "C"])
    csv_path = write_labels(tmp_path / "l.csv", ["A,0,0", "B,1,0", "C,0,1"])
    records = load_labels(csv_path, tmp_path / "img")
    assert [r.image_id for r in records] == ["A", "B", "C"]
    assert records[0].melanoma == 0 and records[0].seborrheic_keratosis == 0
    # nevus-by-exclusion is negative for both tasks
    assert task_label(records[0], TaskId.TASK1) == 0
    assert task_label(records[0], TaskId.TASK2) == 0
    assert task_label(records[1], TaskId.TASK1) == 1
    assert task_label(records[1], TaskId.TASK2) == 0
    assert task_label(records[2], TaskId.TASK2) == 1


def test_load_labels_accepts_float_binary(tmp_path):
    make_images(tmp_path / "img", ["A"])
    csv_path = write_labels(tmp_path / "l.csv", ["A,1.0,0.0"])
    assert load_labels(csv_path, tmp_path / "img")[0].melanoma == 1


def test_load_labels_rejects_double_positive(tmp_path):
    make_images(tmp_path / "img", ["A"])
    csv_path = write_labels(tmp_path / "l.csv", ["A,1,1"])
    with pytest.raises(DataError, match="mutually exclusive"):
        load_labels(csv_path, tmp_path / "img")


def test_load_labels_rejects_duplicates(tmp_path):
    make_images(tmp_path / "img", ["A"])
    csv_path = write_labels(tmp_path / "l.csv", ["A,0,0", "A,1,0"])
    with pytest.raises(DataError, match="duplicate"):
        load_labels(csv_path, tmp_path / "img")


def test_load_labels_rejects_bad_header(tmp_path):
    make_images(tmp_path / "img", ["A"])
    csv_path = write_labels(tmp_path / "l.csv", ["A,0,0"], header="id,mel,sk")
    with pytest.raises(DataError, match="header"):
        load_labels(csv_path, tmp_path / "img")


def test_load_labels_rejects_non_binary(tmp_path):
    make_images(tmp_path / "img", ["A"])
    csv_path = write_labels(tmp_path / "l.csv", ["A,2,0"])
    with pytest.raises(DataError, match="0 or 1"):
        load_labels(csv_path, tmp_path / "img")


def test_load_labels_missing_image(tmp_path):
    (tmp_path / "img").mkdir()
    csv_path = write_labels(tmp_path / "l.csv", ["A,0,0"])
    with pytest.raises(DataError, match="no image file"):
        load_labels(csv_path, tmp_path / "img")


def test_stratified_split_deterministic_and_both_classes():
    labels = np.array([0, 0, 0, 0, 0, 1, 1, 1, 1, 1])
    a = stratified_split(labels, 0.2, derive_rng(1, 0, 0))
    b = stratified_split(labels, 0.2, derive_rng(1, 0, 0))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert len(a[1]) == 2
    assert set(labels[a[1]]) == {0, 1}
    assert sorted(np.concatenate(a)) == list(range(10))


def test_stratified_split_zero_fraction():
    train, val = stratified_split(np.array([0, 1]), 0.0, derive_rng(1, 0, 0))
    assert val.size == 0 and train.size == 2


def test_stratified_split_rejects_degenerate():
    with pytest.raises(DataError):
        stratified_split(np.array([0, 1, 1, 1]), 0.2, derive_rng(1, 0, 0))


def test_config_parse_and_overrides(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "# training run\n"
        "labels_csv = data/labels.csv\n"
        "images_dir = data/img\n"
        "output_dir = out\n"
        "seed = 9\n"
        "roi.margin_frac = 0.2\n"
        "forest.n_trees = 31\n"
        "cnn.input_side = 32  # benchmark profile\n"
        "roi.invert_foreground = true\n"
    )
    settings = parse_config(cfg)
    assert settings.seed == 9
    assert settings.roi_margin_frac == 0.2
    assert settings.forest_n_trees == 31
    assert settings.cnn_input_side == 32
    assert settings.roi_invert_foreground is True
    apply_overrides(settings, ["seed=10", "forest.n_trees = 7"])
    assert settings.seed == 10 and settings.forest_n_trees == 7


def test_config_rejects_unknown_key(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("no_such_key = 1\n")
    with pytest.raises(DataError, match="unknown config key"):
        parse_config(cfg)


def test_config_rejects_bad_value(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("seed = notanumber\n")
    with pytest.raises(DataError, match="bad value"):
        parse_config(cfg)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """A small end-to-end training run shared by the bundle/predict tests."""
    root = tmp_path_factory.mktemp("run")
    data_dir = root / "data"
    synthetic.make_dataset(data_dir, n_per_class=4, seed=5, size=64)
    settings = TrainSettings(
        labels_csv=str(data_dir / "labels.csv"),
        images_dir=str(data_dir),
        output_dir=str(root / "out"),
        seed=11,
        validation_fraction=0.25,
        forest_n_trees=10,
        cnn_input_side=16,
        cnn_epochs=2,
        cnn_batch_size=8,
        threads=1,
    )
    bundle, metrics = run_train(settings)
    return root, settings, bundle, metrics


def test_run_train_outputs(trained):
    root, settings, bundle, metrics = trained
    out = root / "out"
    assert (out / "model.lfsb").is_file()
    for task in TaskId:
        assert (out / f"cnn_loss_{task.value}.csv").is_file()
        assert (out / f"eval_{task.value}.txt").is_file()
        assert metrics[task].report is not None
        assert 0.0 <= metrics[task].report.auc <= 1.0
        assert 0.0 <= metrics[task].auc_cnn <= 1.0
        assert 0.0 <= metrics[task].auc_forest <= 1.0
        assert bundle.weights[task] == metrics[task].weight
    loss_lines = (out / "cnn_loss_task1.csv").read_text().splitlines()
    assert loss_lines[0] == "epoch,batch,loss"
    assert len(loss_lines) > 1


def test_bundle_round_trip_bit_equality(trained, tmp_path):
    root, _, bundle, _ = trained
    original = (root / "out" / "model.lfsb").read_bytes()
    loaded = load_bundle(root / "out" / "model.lfsb")
    save_bundle(loaded, tmp_path / "copy.lfsb")
    assert (tmp_path / "copy.lfsb").read_bytes() == original
    assert loaded.metadata["seed"] == 11


def test_bundle_corruption_names_section(trained, tmp_path):
    root, _, _, _ = trained
    blob = bytearray((root / "out" / "model.lfsb").read_bytes())
    import struct

    n_sections = struct.unpack_from("<I", blob, 8)[0]
    for k in range(n_sections):
        name, offset, length, _ = struct.unpack_from("<8sQQI", blob, 12 + 28 * k)
        name = name.rstrip(b"\x00").decode()
        corrupted = bytearray(blob)
        corrupted[offset + length // 2] ^= 0xFF
        bad = tmp_path / f"bad_{name}.lfsb"
        bad.write_bytes(corrupted)
        with pytest.raises(BundleError, match=name):
            load_bundle(bad)


def test_bundle_bad_magic_and_version(trained, tmp_path):
    root, _, _, _ = trained
    blob = bytearray((root / "out" / "model.lfsb").read_bytes())
    bad_magic = bytearray(blob)
    bad_magic[0] = ord("X")
    (tmp_path / "magic.lfsb").write_bytes(bad_magic)
    with pytest.raises(BundleError, match="magic"):
        load_bundle(tmp_path / "magic.lfsb")
    bad_version = bytearray(blob)
    bad_version[4] = 2
    (tmp_path / "v2.lfsb").write_bytes(bad_version)
    with pytest.raises(BundleError, match="version 2"):
        load_bundle(tmp_path / "v2.lfsb")


def test_bundle_truncation_detected(trained, tmp_path):
    root, _, _, _ = trained
    blob = (root / "out" / "model.lfsb").read_bytes()
    (tmp_path / "trunc.lfsb").write_bytes(blob[: len(blob) // 2])
    with pytest.raises(BundleError):
        load_bundle(tmp_path / "trunc.lfsb")


def test_run_predict_rows_and_determinism(trained):
    root, settings, _, _ = trained
    images = sorted((root / "data").glob("*.png"))[:3]
    bundle_path = root / "out" / "model.lfsb"
    rows, n_errors = run_predict(bundle_path, [*images, images[0]])
    assert n_errors == 0
    assert len(rows) == 4
    assert rows[0] == rows[3]  # same image twice -> identical rows
    for row in rows:
        assert len(row) == 5
        assert 0.0 <= float(row[1]) <= 1.0 and row[2] in ("0", "1")
        assert 0.0 <= float(row[3]) <= 1.0 and row[4] in ("0", "1")


def test_run_predict_isolates_bad_image(trained, tmp_path):
    root, _, _, _ = trained
    good = sorted((root / "data").glob("*.png"))[0]
    bad = tmp_path / "broken.png"
    bad.write_bytes(good.read_bytes()[:25])
    rows, n_errors = run_predict(root / "out" / "model.lfsb", [good, bad])
    assert n_errors == 1
    assert rows[0][1] != "error" and rows[1][1:] == ["error"] * 4
    out_csv = tmp_path / "pred.csv"
    write_predictions_csv(rows, out_csv)
    lines = out_csv.read_text().splitlines()
    assert lines[0] == PREDICT_CSV_HEADER
    assert len(lines) == 3


def test_run_evaluate_reports(trained):
    root, settings, _, _ = trained
    reports = run_evaluate(
        root / "out" / "model.lfsb", settings.labels_csv, settings.images_dir
    )
    for task in TaskId:
        assert reports[task].n == 8
        assert 0.0 <= reports[task].accuracy <= 1.0


def test_task_storage_isolation(tmp_path):
    # changing only task2's labels must leave task1's stored models
    # bit-identical: the tasks share no training state
    from lesionfuse.cnn import cnn_to_bytes
    from lesionfuse.forest import forest_to_bytes

    data_dir = tmp_path / "data"
    synthetic.make_dataset(data_dir, n_per_class=4, seed=8, size=48)
    labels = (data_dir / "labels.csv").read_text().splitlines()

    def train_with(rows, out_name):
        csv_path = tmp_path / f"{out_name}.csv"
        csv_path.write_text("\n".join(rows) + "\n")
        settings = TrainSettings(
            labels_csv=str(csv_path),
            images_dir=str(data_dir),
            output_dir=str(tmp_path / out_name),
            seed=21,
            validation_fraction=0.25,
            forest_n_trees=5,
            cnn_input_side=16,
            cnn_epochs=1,
            threads=1,
        )
        bundle, _ = run_train(settings)
        return bundle

    a = train_with(labels, "out_a")
    # flip one smooth image's keratosis label to nevus: task2 changes,
    # task1's labels are untouched
    flipped = [row.replace("SYN_0004,0,1", "SYN_0004,0,0") for row in labels]
    assert flipped != labels
    b = train_with(flipped, "out_b")

    assert forest_to_bytes(a.forests[TaskId.TASK1]) == forest_to_bytes(b.forests[TaskId.TASK1])
    assert cnn_to_bytes(a.cnns[TaskId.TASK1]) == cnn_to_bytes(b.cnns[TaskId.TASK1])
    assert a.weights[TaskId.TASK1] == b.weights[TaskId.TASK1]
    # and task2 did actually change
    assert forest_to_bytes(a.forests[TaskId.TASK2]) != forest_to_bytes(b.forests[TaskId.TASK2])


def test_cli_train_predict_evaluate_inspect(trained, tmp_path, capsys):
    root, settings, _, _ = trained
    bundle_path = root / "out" / "model.lfsb"

    rc = cli.main(
        ["predict", "--model", str(bundle_path), "--images", str(root / "data"), "--out", str(tmp_path / "p.csv")]
    )
    assert rc == 0
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == PREDICT_CSV_HEADER

    rc = cli.main(
        [
            "evaluate",
            "--model", str(bundle_path),
            "--labels", settings.labels_csv,
            "--images-dir", settings.images_dir,
            "--out", str(tmp_path / "report.txt"),
            "--csv", str(tmp_path / "report.csv"),
        ]
    )
    assert rc == 0
    report = (tmp_path / "report.txt").read_text()
    assert "task1.accuracy" in report and "task2.auc" in report
    assert (tmp_path / "report.csv").read_text().startswith("task,n,")

    rc = cli.main(["inspect", "--model", str(bundle_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "feature layout" in out and "task2" in out


def test_cli_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["train"])  # missing --config -> usage error
    assert exc.value.code == 1

    rc = cli.main(["train", "--config", str(tmp_path / "missing.cfg")])
    assert rc == 2  # data error

    bogus = tmp_path / "bogus.lfsb"
    bogus.write_bytes(b"not a bundle at all")
    rc = cli.main(["inspect", "--model", str(bogus)])
    assert rc == 3  # model-file error

    img = tmp_path / "i.png"
    from PIL import Image as PilImage

    PilImage.fromarray(np.zeros((4, 4, 3), np.uint8)).save(img)
    rc = cli.main(["predict", "--model", str(bogus), "--images", str(img), "--out", str(tmp_path / "o.csv")])
    assert rc == 3


def test_cli_train_runs(tmp_path, capsys):
    data_dir = tmp_path / "data"
    synthetic.make_dataset(data_dir, n_per_class=3, seed=6, size=48)
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        f"labels_csv = {data_dir / 'labels.csv'}\n"
        f"images_dir = {data_dir}\n"
        f"output_dir = {tmp_path / 'out'}\n"
        "seed = 3\n"
        "validation_fraction = 0\n"
        "forest.n_trees = 5\n"
        "cnn.input_side = 16\n"
        "cnn.epochs = 1\n"
        "threads = 1\n"
    )
    rc = cli.main(["train", "--config", str(cfg)])
    assert rc == 0
    assert (tmp_path / "out" / "model.lfsb").is_file()
    # validation_fraction 0 -> default weight and no eval report
    bundle = load_bundle(tmp_path / "out" / "model.lfsb")
    assert bundle.weights[TaskId.TASK1] == 0.5
    assert not (tmp_path / "out" / "eval_task1.txt").exists()


def test_layout_mismatch_rejected(trained, tmp_path, monkeypatch):
    root, _, _, _ = trained
    import lesionfuse.features as features
    import lesionfuse.pipeline as pipeline_mod

    monkeypatch.setattr(features, "FEATURE_LAYOUT", (("other", 0, 512),))
    with pytest.raises(BundleError, match="layout"):
        pipeline_mod.load_bundle(root / "out" / "model.lfsb")
