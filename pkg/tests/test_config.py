import pytest

from starcd import ConfigError
from starcd.config import load_run_config, parse_run_config


def _doc(**kw):
    doc = {
        "mode": "star",
        "seed": 3,
        "data": {"train_root": "data/train", "eval_root": "data/eval"},
        "train": {"max_steps": 5, "batch_size": 4, "crop_size": 32},
        "augment": {"scale_jitter": [1.0, 1.25]},
    }
    doc.update(kw)
    return doc


def test_parse_minimal():
    run = parse_run_config(_doc())
    assert run.mode == "star"
    assert run.seed == 3
    assert run.train_root == "data/train"
    assert run.eval_root == "data/eval"
    assert run.train.max_steps == 5
    assert run.train.augmentation.scale_jitter == (1.0, 1.25)
    assert run.model.backbone == "reference"


def test_unknown_top_level_key():
    with pytest.raises(ConfigError, match="unknown top-level"):
        parse_run_config(_doc(extra=1))


def test_unknown_section_keys():
    doc = _doc()
    doc["train"]["n_steps"] = 5
    with pytest.raises(ConfigError, match="n_steps"):
        parse_run_config(doc)
    doc = _doc()
    doc["data"]["root"] = "x"
    with pytest.raises(ConfigError, match="root"):
        parse_run_config(doc)
    doc = _doc()
    doc["augment"]["mixup"] = True
    with pytest.raises(ConfigError, match="mixup"):
        parse_run_config(doc)


def test_missing_train_root():
    doc = _doc()
    del doc["data"]["train_root"]
    with pytest.raises(ConfigError, match="train_root"):
        parse_run_config(doc)


def test_unknown_backbone():
    doc = _doc(model={"backbone": "resnet50"})
    with pytest.raises(ConfigError, match="resnet50"):
        parse_run_config(doc)


def test_bad_changemixin_key():
    doc = _doc(model={"changemixin": {"depth": 4}})
    with pytest.raises(ConfigError, match="changemixin"):
        parse_run_config(doc)


def test_invalid_train_value_becomes_config_error():
    doc = _doc()
    doc["train"]["batch_size"] = 1  # too small for pseudo-pair mode
    with pytest.raises(ConfigError):
        parse_run_config(doc)


def test_overrides_win():
    run = parse_run_config(_doc(), {"seed": 9, "out_dir": "runs/x", "mode": "star"})
    assert run.seed == 9
    assert run.out_dir == "runs/x"
    assert run.train.seed == 9


def test_load_run_config_yaml(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(
        "mode: star\n"
        "seed: 1\n"
        "data:\n  train_root: d/train\n"
        "train:\n  max_steps: 2\n  batch_size: 2\n  crop_size: 16\n"
    )
    run = load_run_config(path)
    assert run.train.max_steps == 2
    assert run.eval_root is None


def test_load_run_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_run_config(tmp_path / "nope.yaml")


def test_load_run_config_bad_yaml(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("mode: [unclosed\n")
    with pytest.raises(ConfigError, match="cannot parse"):
        load_run_config(path)


def test_non_mapping_document():
    with pytest.raises(ConfigError):
        parse_run_config(["not", "a", "mapping"])
