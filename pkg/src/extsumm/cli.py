"""Command-line pipeline: corpus construction, labeling, training,
generation, evaluation, and extractor heat maps.

One JSON config file drives every command; dotted --set overrides allow
reproducible one-off variations. All randomness flows from the single
top-level seed. Outputs are written to a temporary file and renamed into
place so interrupted commands never leave partial files.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from pathlib import Path

import torch

from . import corpus as corpus_mod
from . import labeling, metrics
from .corpus import CategorySchema, CorpusError, SPLITS
from .decoding import Candidate, DecodeConfig, GenerationRecord, generate_for_instances
from .model import AspectSummarizer, ModelConfig, load_checkpoint
from .trainer import TrainConfig, train
from .vocab import Vocab

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG = {
    "seed": 0,
    "paths": {
        "corpus_dir": "work/corpus",
        "products": "work/corpus/products.jsonl",
        "labels_dir": "work/labels",
        "checkpoint_dir": "work/checkpoints",
        "output_dir": "work/outputs",
    },
    "schema": {
        "category": "synthetic",
        "aspects": ["appearance", "battery", "camera"],
        "cluster_count": 0,
    },
    "corpus": {
        "separator": ".",
        "max_input_chars": 400,
        "max_target_chars": 70,
        "min_fragment_chars": 15,
        "max_fragment_chars": 55,
        "split_ratios": [0.8, 0.1, 0.1],
        "n_products": 200,
        "label_threshold": 0.35,
        "label_strip_chars": "",
    },
    "model": {
        "embed_dim": 48,
        "hidden_dim": 48,
        "extractor_head": "bilinear",
        "encoder_kind": "recurrent",
        "use_extractor": True,
        "use_positions": True,
        "n_heads": 2,
        "n_layers": 2,
        "batch_size": 20,
    },
    "train": {
        "epochs": 10,
        "learning_rate": 1e-3,
        "batch_size": 20,
        "clip_norm": 2.0,
        "eval_every": 50,
        "weight_ext": 1.0,
        "aspect_dropout": 0.0,
    },
    "decode": {
        "beam_size": 5,
        "max_decode_len": 80,
        "length_penalty": 0.0,
        "mode": "aspect",
    },
    "heatmap": {"product_id": "", "aspect": ""},
}


def _merge(base: dict, override: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        dotted = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {dotted}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {dotted} must be a mapping")
            out[key] = _merge(base[key], value, prefix=dotted + ".")
        else:
            out[key] = value
    return out


def _apply_override(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    dotted, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = dotted.split(".")
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown config key: {dotted}")
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(f"unknown config key: {dotted}")
    node[parts[-1]] = value


def load_config(path: str | None, overrides: list[str], seed: int | None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as f:
                user = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}")
        cfg = _merge(cfg, user)
    for assignment in overrides:
        _apply_override(cfg, assignment)
    if seed is not None:
        cfg["seed"] = seed
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    if not isinstance(cfg["seed"], int):
        raise ConfigError("config key seed must be an integer")
    schema = cfg["schema"]
    if not schema["aspects"] and schema["cluster_count"] <= 0:
        raise ConfigError(
            "config key schema.aspects must be non-empty "
            "(or schema.cluster_count must be positive)"
        )
    ratios = cfg["corpus"]["split_ratios"]
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError("config key corpus.split_ratios must be 3 numbers summing to 1")
    for key in ("min_fragment_chars", "max_fragment_chars", "max_input_chars",
                "max_target_chars"):
        if cfg["corpus"][key] < 1:
            raise ConfigError(f"config key corpus.{key} must be >= 1")
    if cfg["corpus"]["min_fragment_chars"] > cfg["corpus"]["max_fragment_chars"]:
        raise ConfigError(
            "config key corpus.min_fragment_chars must be <= corpus.max_fragment_chars"
        )
    threshold = cfg["corpus"]["label_threshold"]
    if not 0.0 < threshold < 1.0:
        raise ConfigError("config key corpus.label_threshold must be in (0, 1)")
    if cfg["decode"]["mode"] not in ("aspect", "null_top1", "null_topk"):
        raise ConfigError("config key decode.mode must be aspect|null_top1|null_topk")
    try:
        _decode_config(cfg).validate()
        _train_config(cfg).validate()
    except ValueError as e:
        raise ConfigError(str(e))


def _schema(cfg: dict) -> CategorySchema:
    s = cfg["schema"]
    names = list(s["aspects"])
    if not names:
        names = [f"cluster_{i}" for i in range(s["cluster_count"])]
    return CategorySchema.from_names(s["category"], names)


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(seed=cfg["seed"], **cfg["train"])


def _decode_config(cfg: dict) -> DecodeConfig:
    d = cfg["decode"]
    return DecodeConfig(
        beam_size=d["beam_size"],
        max_decode_len=d["max_decode_len"],
        length_penalty=d["length_penalty"],
    )


def _atomic_write_lines(path: Path, lines: list[str]) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")
    os.replace(tmp, path)


def _atomic_write_json(path: Path, obj) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, ensure_ascii=False)
        f.write("\n")
    os.replace(tmp, path)


def _instance_line(inst) -> str:
    return json.dumps(
        {
            "product_id": inst.product_id,
            "category": inst.category,
            "sentences": inst.sentences,
            "aspect": inst.aspect.name,
            "summary": inst.summary,
        },
        ensure_ascii=False,
    )


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{what} not found: {path}")
    return path


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(cfg: dict) -> int:
    schema = _schema(cfg)
    c = cfg["corpus"]
    synth = corpus_mod.synth_corpus(
        seed=cfg["seed"],
        n_products=c["n_products"],
        schema=schema,
        split_ratios=tuple(c["split_ratios"]),
        separator=c["separator"],
    )
    corpus_dir = Path(cfg["paths"]["corpus_dir"])
    corpus_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write_lines(
        corpus_dir / "products.jsonl",
        [
            json.dumps(
                {
                    "product_id": p.product_id,
                    "category": p.category,
                    "title": p.title,
                    "details": p.detail_sentences,
                    "raw_summary": p.raw_summary,
                },
                ensure_ascii=False,
            )
            for p in synth.products
        ],
    )
    for split in SPLITS:
        _atomic_write_lines(
            corpus_dir / f"{split}.jsonl",
            [_instance_line(i) for i in synth.instances[split]],
        )
        logger.info("synth: %s split has %d instances", split, len(synth.instances[split]))
    _atomic_write_lines(
        corpus_dir / "gold_labels.jsonl",
        [
            json.dumps({"product_id": pid, "aspect": aspect, "labels": labels})
            for (pid, aspect), labels in synth.gold_labels.items()
        ],
    )
    return 0


def cmd_build_corpus(cfg: dict) -> int:
    schema = _schema(cfg)
    c = cfg["corpus"]
    products = corpus_mod.load_products(_require(Path(cfg["paths"]["products"]), "products file"))
    dataset = corpus_mod.build_dataset(
        products,
        schema,
        embedder=None,
        seed=cfg["seed"],
        split_ratios=tuple(c["split_ratios"]),
        min_fragment_chars=c["min_fragment_chars"],
        max_fragment_chars=c["max_fragment_chars"],
        max_input_chars=c["max_input_chars"],
        max_target_chars=c["max_target_chars"],
        separator=c["separator"],
    )
    corpus_dir = Path(cfg["paths"]["corpus_dir"])
    corpus_dir.mkdir(parents=True, exist_ok=True)
    for split in SPLITS:
        _atomic_write_lines(
            corpus_dir / f"{split}.jsonl", [_instance_line(i) for i in dataset[split]]
        )
        logger.info("build-corpus: %s split has %d instances", split, len(dataset[split]))
    stats = corpus_mod.corpus_stats(dataset)
    _atomic_write_json(corpus_dir / "stats.json", stats.to_dict())
    return 0


def cmd_label(cfg: dict) -> int:
    schema = _schema(cfg)
    c = cfg["corpus"]
    corpus_dir = Path(cfg["paths"]["corpus_dir"])
    labels_dir = Path(cfg["paths"]["labels_dir"])
    labels_dir.mkdir(parents=True, exist_ok=True)
    for split in SPLITS:
        src = corpus_dir / f"{split}.jsonl"
        if not src.exists():
            continue
        instances = corpus_mod.load_corpus(
            src, split, schema,
            max_input_chars=c["max_input_chars"],
            max_target_chars=c["max_target_chars"],
            separator=c["separator"],
        )
        lines = []
        for inst in instances:
            labelset = labeling.label_sentences(
                inst.sentences, inst.summary,
                threshold=c["label_threshold"],
                strip_chars=c["label_strip_chars"],
            )
            obj = json.loads(_instance_line(inst))
            obj["overlap_rates"] = [round(r, 6) for r in labelset.overlap_rates]
            obj["labels"] = labelset.labels
            lines.append(json.dumps(obj, ensure_ascii=False))
        _atomic_write_lines(labels_dir / f"{split}.labeled.jsonl", lines)
        logger.info("label: wrote %d labeled instances for %s", len(lines), split)
    return 0


def load_labeled(path, split: str, schema: CategorySchema, cfg_corpus: dict):
    """Read a labeled JSONL file back into (instances, labels)."""
    instances = corpus_mod.load_corpus(
        path, split, schema,
        max_input_chars=cfg_corpus["max_input_chars"],
        max_target_chars=cfg_corpus["max_target_chars"],
        separator=cfg_corpus["separator"],
    )
    labels = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                labels.append(json.loads(line).get("labels"))
    if any(l is None for l in labels):
        raise CorpusError(f"{path}: missing labels field; run the label command first")
    return instances, labels


def cmd_train(cfg: dict) -> int:
    torch.set_num_threads(1)
    schema = _schema(cfg)
    c = cfg["corpus"]
    labels_dir = Path(cfg["paths"]["labels_dir"])
    train_insts, train_labels = load_labeled(
        _require(labels_dir / "train.labeled.jsonl", "labeled train split"),
        "train", schema, c,
    )
    dev_insts, _ = load_labeled(
        _require(labels_dir / "dev.labeled.jsonl", "labeled dev split"), "dev", schema, c
    )
    texts = []
    for inst in train_insts:
        texts.extend(inst.sentences)
        texts.append(inst.summary)
    vocab = Vocab.build(texts, separator=c["separator"])
    model_cfg = ModelConfig(
        vocab_size=len(vocab),
        n_aspects=len(schema.aspects),
        max_input_chars=c["max_input_chars"],
        max_target_chars=c["max_target_chars"],
        seed=cfg["seed"],
        **cfg["model"],
    )
    model = AspectSummarizer(model_cfg)
    report = train(
        model,
        train_insts,
        dev_insts,
        _train_config(cfg),
        vocab,
        aspect_names=[a.name for a in schema.aspects],
        labels=train_labels,
        checkpoint_dir=cfg["paths"]["checkpoint_dir"],
        separator=c["separator"],
    )
    report_path = Path(cfg["paths"]["checkpoint_dir"]) / "train_report.json"
    _atomic_write_json(report_path, report.to_dict())
    logger.info(
        "train: best dev perplexity %.4f at step %d", report.best_perplexity, report.best_step
    )
    return 0


def _load_references(cfg: dict, schema: CategorySchema):
    c = cfg["corpus"]
    test_path = _require(Path(cfg["paths"]["corpus_dir"]) / "test.jsonl", "test split")
    return corpus_mod.load_corpus(
        test_path, "test", schema,
        max_input_chars=c["max_input_chars"],
        max_target_chars=c["max_target_chars"],
        separator=c["separator"],
    )


def _load_model_and_refs(cfg: dict):
    ckpt = _require(Path(cfg["paths"]["checkpoint_dir"]) / "best.ckpt", "checkpoint")
    model, vocab, aspect_names = load_checkpoint(ckpt)
    schema = CategorySchema.from_names(cfg["schema"]["category"], aspect_names)
    return model, vocab, schema, _load_references(cfg, schema)


def cmd_generate(cfg: dict) -> int:
    torch.set_num_threads(1)
    model, vocab, _, references = _load_model_and_refs(cfg)
    mode = cfg["decode"]["mode"]
    records = generate_for_instances(
        model, vocab, references, _decode_config(cfg), mode=mode,
        separator=cfg["corpus"]["separator"],
    )
    out_dir = Path(cfg["paths"]["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [
        json.dumps(
            {
                "product_id": r.product_id,
                "aspect": r.aspect,
                "summary": r.chosen.text,
                "candidates": [
                    {"text": c.text, "logprob": c.logprob} for c in r.candidates
                ],
            },
            ensure_ascii=False,
        )
        for r in records
    ]
    _atomic_write_lines(out_dir / f"generations.{mode}.jsonl", lines)
    logger.info("generate: wrote %d records (%s mode)", len(records), mode)
    return 0


def _read_generations(path) -> list[GenerationRecord]:
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            candidates = [
                Candidate(token_ids=[], text=c["text"], logprob=c["logprob"], finished=True)
                for c in obj.get("candidates", [])
            ]
            chosen = Candidate(
                token_ids=[], text=obj["summary"], logprob=0.0, finished=True
            )
            records.append(
                GenerationRecord(
                    product_id=obj["product_id"],
                    aspect=obj["aspect"],
                    candidates=candidates or [chosen],
                    chosen=chosen,
                )
            )
    return records


def cmd_evaluate(cfg: dict) -> int:
    references = _load_references(cfg, _schema(cfg))
    mode = cfg["decode"]["mode"]
    gen_path = _require(
        Path(cfg["paths"]["output_dir"]) / f"generations.{mode}.jsonl", "generations file"
    )
    records = _read_generations(gen_path)
    report = metrics.evaluate(
        records, references, mode="topk" if mode == "null_topk" else "top1"
    )
    out_path = Path(cfg["paths"]["output_dir"]) / f"eval_report.{mode}.json"
    _atomic_write_json(out_path, report.to_dict())
    logger.info("evaluate: %s", json.dumps(report.overall))
    return 0


def cmd_heatmap(cfg: dict) -> int:
    model, vocab, schema, references = _load_model_and_refs(cfg)
    want_pid = cfg["heatmap"]["product_id"]
    want_aspect = cfg["heatmap"]["aspect"]
    instance = None
    for inst in references:
        if want_pid and inst.product_id != want_pid:
            continue
        if want_aspect and inst.aspect.name != want_aspect:
            continue
        instance = inst
        break
    if instance is None:
        raise ConfigError(
            f"no test instance matches heatmap.product_id={want_pid!r} "
            f"heatmap.aspect={want_aspect!r}"
        )
    export = metrics.export_heatmap(model, vocab, instance, instance.aspect.index)
    out_dir = Path(cfg["paths"]["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"heatmap_{instance.product_id}_{instance.aspect.name}.csv"
    tmp = out_path.with_name(out_path.name + ".tmp")
    metrics.write_heatmap_csv(export, tmp)
    os.replace(tmp, out_path)
    logger.info("heatmap: wrote %s", out_path)
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "build-corpus": cmd_build_corpus,
    "label": cmd_label,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "heatmap": cmd_heatmap,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="extsumm",
        description="Aspect-conditioned product summarization pipeline",
    )
    parser.add_argument("--config", default=None, help="path to a JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override a dotted config key, e.g. --set train.epochs=5",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        cfg = load_config(args.config, args.overrides, args.seed)
        return COMMANDS[args.command](cfg)
    except (ConfigError, CorpusError, ValueError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
