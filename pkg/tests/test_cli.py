import json
from pathlib import Path

import pytest

from extsumm.cli import DEFAULT_CONFIG, ConfigError, load_config, main


def write_config(tmp_path: Path, **extra) -> Path:
    cfg = {
        "paths": {
            "corpus_dir": str(tmp_path / "corpus"),
            "products": str(tmp_path / "corpus/products.jsonl"),
            "labels_dir": str(tmp_path / "labels"),
            "checkpoint_dir": str(tmp_path / "ckpt"),
            "output_dir": str(tmp_path / "out"),
        },
        "corpus": {"n_products": 30},
        "model": {"embed_dim": 16, "hidden_dim": 16},
        "train": {"epochs": 3, "batch_size": 10, "eval_every": 10, "learning_rate": 3e-3},
        "decode": {"beam_size": 3, "max_decode_len": 50},
    }
    for key, value in extra.items():
        cfg.setdefault(key, {}).update(value)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


class TestConfig:
    def test_defaults_validate(self):
        load_config(None, [], None)

    def test_unknown_key_named_in_error(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"trian": {"epochs": 2}}))
        with pytest.raises(ConfigError, match="trian"):
            load_config(str(path), [], None)

    def test_set_override(self):
        cfg = load_config(None, ["train.epochs=7", "decode.mode=null_top1"], None)
        assert cfg["train"]["epochs"] == 7
        assert cfg["decode"]["mode"] == "null_top1"

    def test_set_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="decode.bogus"):
            load_config(None, ["decode.bogus=1"], None)

    def test_seed_flag_overrides(self):
        assert load_config(None, [], 42)["seed"] == 42

    def test_bad_values_name_key(self):
        with pytest.raises(ConfigError, match="label_threshold"):
            load_config(None, ["corpus.label_threshold=2.0"], None)
        with pytest.raises(ConfigError, match="split_ratios"):
            load_config(None, ["corpus.split_ratios=[0.5,0.5,0.5]"], None)
        with pytest.raises(ConfigError, match="mode"):
            load_config(None, ["decode.mode=sideways"], None)

    def test_missing_config_file(self):
        with pytest.raises(ConfigError, match="not found"):
            load_config("/nonexistent/config.json", [], None)

    def test_defaults_unmodified(self):
        before = json.dumps(DEFAULT_CONFIG, sort_keys=True)
        load_config(None, ["train.epochs=99"], None)
        assert json.dumps(DEFAULT_CONFIG, sort_keys=True) == before


class TestCliErrors:
    def test_invalid_config_exits_nonzero(self, capsys, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"nope": 1}))
        rc = main(["--config", str(path), "synth"])
        assert rc == 1
        assert "nope" in capsys.readouterr().err

    def test_missing_inputs_exit_nonzero(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path)
        rc = main(["--config", str(cfg_path), "train"])
        assert rc == 1
        assert "not found" in capsys.readouterr().err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run synth -> label -> train -> generate -> evaluate once."""
    tmp_path = tmp_path_factory.mktemp("pipeline")
    cfg_path = write_config(tmp_path)
    for command in ("synth", "label", "train", "generate", "evaluate"):
        assert main(["--config", str(cfg_path), command]) == 0, command
    return tmp_path, cfg_path


class TestPipeline:
    def test_outputs_exist(self, pipeline):
        tmp_path, _ = pipeline
        assert (tmp_path / "corpus/train.jsonl").exists()
        assert (tmp_path / "corpus/products.jsonl").exists()
        assert (tmp_path / "labels/train.labeled.jsonl").exists()
        assert (tmp_path / "ckpt/best.ckpt").exists()
        assert (tmp_path / "ckpt/train_report.json").exists()
        assert (tmp_path / "out/generations.aspect.jsonl").exists()
        assert (tmp_path / "out/eval_report.aspect.json").exists()
        assert not list(tmp_path.rglob("*.tmp"))

    def test_labeled_file_schema(self, pipeline):
        tmp_path, _ = pipeline
        with open(tmp_path / "labels/train.labeled.jsonl", encoding="utf-8") as f:
            first = json.loads(f.readline())
        assert set(first) >= {"product_id", "sentences", "aspect", "summary",
                              "overlap_rates", "labels"}
        assert len(first["overlap_rates"]) == len(first["sentences"])
        assert all(l in (0, 1) for l in first["labels"])

    def test_eval_report_schema(self, pipeline):
        tmp_path, _ = pipeline
        report = json.loads((tmp_path / "out/eval_report.aspect.json").read_text())
        assert set(report["overall"]) == {"rouge1", "rouge2", "rougeL",
                                          "dist2", "dist3", "dist4"}
        assert all(0.0 <= v <= 1.0 for v in report["overall"].values())
        assert report["n_instances"] > 0

    def test_generation_file_schema_and_lengths(self, pipeline):
        tmp_path, _ = pipeline
        with open(tmp_path / "out/generations.aspect.jsonl", encoding="utf-8") as f:
            rows = [json.loads(line) for line in f]
        assert rows
        for row in rows:
            assert set(row) == {"product_id", "aspect", "summary", "candidates"}
            for cand in row["candidates"]:
                assert set(cand) == {"text", "logprob"}

    def test_generate_is_byte_identical_on_rerun(self, pipeline):
        tmp_path, cfg_path = pipeline
        gen_path = tmp_path / "out/generations.aspect.jsonl"
        before = gen_path.read_bytes()
        assert main(["--config", str(cfg_path), "generate"]) == 0
        assert gen_path.read_bytes() == before

    def test_heatmap_command(self, pipeline):
        tmp_path, cfg_path = pipeline
        assert main(["--config", str(cfg_path), "heatmap"]) == 0
        csvs = list((tmp_path / "out").glob("heatmap_*.csv"))
        assert csvs
        lines = csvs[0].read_text(encoding="utf-8").strip().splitlines()
        assert lines[0] == "sentence,score"
        assert len(lines) > 1

    def test_evaluate_on_references_scores_one(self, pipeline):
        tmp_path, cfg_path = pipeline
        # writing the references back as generations must give perfect ROUGE
        refs = [
            json.loads(line)
            for line in (tmp_path / "corpus/test.jsonl").read_text().splitlines()
        ]
        gen_path = tmp_path / "out/generations.aspect.jsonl"
        gen_path.write_text(
            "\n".join(
                json.dumps(
                    {
                        "product_id": r["product_id"],
                        "aspect": r["aspect"],
                        "summary": r["summary"],
                        "candidates": [{"text": r["summary"], "logprob": 0.0}],
                    }
                )
                for r in refs
            )
            + "\n"
        )
        assert main(["--config", str(cfg_path), "evaluate"]) == 0
        report = json.loads((tmp_path / "out/eval_report.aspect.json").read_text())
        assert report["overall"]["rouge1"] == 1.0
        assert report["overall"]["rouge2"] == 1.0
        assert report["overall"]["rougeL"] == 1.0

    def test_build_corpus_roundtrip(self, pipeline):
        tmp_path, cfg_path = pipeline
        # rebuild a corpus from the synthesized products with cluster naming
        rc = main([
            "--config", str(cfg_path), "build-corpus",
            "--set", 'schema.aspects=[]',
            "--set", "schema.cluster_count=3",
            "--set", f"paths.corpus_dir={tmp_path / 'rebuilt'}",
        ])
        assert rc == 0
        stats = json.loads((tmp_path / "rebuilt/stats.json").read_text())
        assert stats["per_split"]["overall"]["n_summaries"] > 0
        with open(tmp_path / "rebuilt/train.jsonl", encoding="utf-8") as f:
            first = json.loads(f.readline())
        assert first["aspect"].startswith("cluster_")
