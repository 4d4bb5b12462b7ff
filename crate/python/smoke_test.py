"""Exercise the leafnet Python bindings end to end on the synthetic dataset.

Build and install the extension first:

    pip install maturin
    maturin build --release -m crates/py/Cargo.toml
    pip install target/wheels/leafnet_py-*.whl

Then run ``python python/smoke_test.py``.
"""

import json
import math
import tempfile
from pathlib import Path

import leafnet_py as ln

SIZE = 16


def check_model():
    model = ln.Model(51, 256, seed=0)
    assert model.count_parameters() == 968_691, model
    assert model.shape_chain(2)[-1] == [2, 51]

    small = ln.Model(3, SIZE)
    logits, shape = small.infer([0.5] * (2 * 3 * SIZE * SIZE), [2, 3, SIZE, SIZE])
    assert shape == [2, 3]
    # all-zero weights give identical logits for every class
    assert all(v == logits[0] for v in logits)


def check_metrics():
    cm = ln.ConfusionMatrix(3)
    for truth, pred in [(0, 0), (1, 1), (2, 1), (2, 2)]:
        cm.update(truth, pred)
    assert cm.total() == 4 and cm.get(2, 1) == 1
    assert cm.accuracy() == 0.75
    micro = cm.overall("micro")
    assert math.isclose(micro["precision"], 0.75) and math.isclose(micro["recall"], 0.75)
    assert abs(ln.f1_score(0.998, 0.9882) - 0.9931) < 5e-5
    assert ln.format_fixed4(0.99025) == "0.9903"
    assert ln.cosine_lr(0.001, 100, 0) == 0.001
    assert ln.cosine_lr(0.001, 100, 100) == 0.0


def check_pipeline(root: Path):
    data = root / "fixture"
    assert ln.write_fixture(str(data), per_class=12, size=SIZE, seed=1) == 36
    classes, samples = ln.scan_dataset(str(data))
    assert classes == ["blob_blue", "blob_green", "blob_red"]
    assert len(samples) == 36

    pixels, shape = ln.load_image(samples[0][0], SIZE)
    assert shape == [3, SIZE, SIZE]
    assert all(0.0 <= p <= 1.0 for p in pixels)

    run = root / "run"
    config = {
        "data_dir": str(data),
        "out_dir": str(run),
        "epochs": 2,
        "batch_size": 8,
        "img_size": SIZE,
    }
    outcome = ln.train(json.dumps(config))
    assert len(outcome["epochs"]) == 2
    assert outcome["epochs"][-1]["lr"] == 0.0
    assert 0.0 <= outcome["final_accuracy"] <= 1.0

    report = ln.evaluate(outcome["final_checkpoint"], str(data))
    assert report["overall"]["support"] == 36

    ranked = ln.predict(outcome["final_checkpoint"], samples[0][0], top_k=3)
    assert abs(sum(p["probability"] for p in ranked) - 1.0) < 1e-5

    model = ln.Model.load(outcome["final_checkpoint"])
    assert model.class_names == classes

    try:
        ln.Model.load(str(run / "epoch_log.csv"))
    except ValueError as err:
        assert "checkpoint" in str(err)
    else:
        raise AssertionError("loading a CSV as a checkpoint should fail")


def main():
    check_model()
    check_metrics()
    with tempfile.TemporaryDirectory() as tmp:
        check_pipeline(Path(tmp))
    print("python smoke test passed")


if __name__ == "__main__":
    main()
