"""Command-line interface.

Subcommands: gen-data, validate-templates, train, eval, retrieve, grad-check,
report. Global flags: --config FILE, --seed N, --out DIR. Exit codes:
0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..hand import build_rig, load_rig, save_rig
from ..retrieval import (
    HttpVlmClient,
    MockVlmClient,
    ValidationInterrupted,
    ValidationState,
    apply_validation,
    load_db,
    load_prompts,
    save_db,
    validate_templates,
)
from ..serial import BlobFormatError
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config, save_config
from .errors import DataError, NumericalError
from .evaluator import evaluate
from .gradcheck import run_gradient_suite
from .keypoints import evaluate_keypoint_file
from .report import emit_report
from .synth import generate_corpus, load_corpus, save_corpus
from .trainer import train

__all__ = ["main"]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", default="runs/default", help="run directory")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ehicl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic corpus and template db")
    _add_common(p)

    p = sub.add_parser("validate-templates", help="triple-run involvement validation")
    _add_common(p)
    p.add_argument("--state", help="resumable validation state file (JSON)")

    p = sub.add_parser("train", help="train the refinement transformer")
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    _add_common(p)
    p.add_argument("--checkpoint", help="checkpoint path (default OUT/checkpoint.bin)")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--keypoints", help="evaluate an external 21x3 keypoint JSONL file instead")
    p.add_argument("--export-attention", type=int, default=0, metavar="N",
                   help="retain and export attention for the first N queries")

    p = sub.add_parser("retrieve", help="retrieve one template for a query sample")
    _add_common(p)
    p.add_argument("--query-id", required=True)
    p.add_argument("--strategy", choices=("visual", "textual", "combined"))

    p = sub.add_parser("grad-check", help="finite-difference gradient suite")
    _add_common(p)

    p = sub.add_parser("report", help="re-emit report files from a saved report.json")
    p.add_argument("--report", required=True, help="existing report.json")
    p.add_argument("--out", default="runs/default/report")
    p.add_argument("--formats", default="json,csv,txt")
    return parser


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        values = cfg.as_dict()
        values["seed"] = args.seed
        cfg = RunConfig.from_dict(values)
    return cfg


def _client_for(cfg: RunConfig, corpus, db):
    prompts = load_prompts()
    if cfg.vlm_client == "http":
        return HttpVlmClient(model=cfg.vlm_model), prompts
    metadata = corpus.metadata_for_mock() if corpus is not None else {}
    if db is not None:
        metadata = db.metadata_for_mock(metadata)
    return (
        MockVlmClient(metadata, prompts, flip_rate=cfg.mock_flip_rate, seed=cfg.seed),
        prompts,
    )


def _load_run_inputs(out: Path):
    corpus = load_corpus(out / "corpus")
    db = load_db(out / "templates")
    return corpus, db


def _rig_for(cfg: RunConfig, out: Path):
    rig_path = out / "rig.bin"
    if rig_path.exists():
        return load_rig(rig_path)
    return build_rig(cfg.rig_seed)


def _cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rig = build_rig(cfg.rig_seed)
    corpus, db = generate_corpus(cfg, rig)
    save_corpus(corpus, out / "corpus")
    save_db(db, out / "templates")
    save_rig(out / "rig.bin", rig)
    save_config(cfg, out / "config.used")
    sizes = {name: len(v) for name, v in corpus.by_split.items()}
    print(f"corpus written to {out}: {sizes}, {len(db)} templates (unvalidated)")
    return 0


def _cmd_validate(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    corpus, db = _load_run_inputs(out)
    client, prompts = _client_for(cfg, corpus, db)
    state = None
    state_path = Path(args.state) if args.state else out / "validation_state.json"
    if state_path.exists():
        state = ValidationState.from_json(state_path.read_text(encoding="utf-8"))
        print(f"resuming validation from {state_path}")
    try:
        state = validate_templates(db, client, prompts, state=state)
    except ValidationInterrupted as exc:
        state_path.write_text(exc.state.to_json() + "\n", encoding="utf-8")
        raise DataError(f"validation interrupted; partial state saved to {state_path}") from exc
    apply_validation(db, state)
    save_db(db, out / "templates")
    state_path.write_text(state.to_json() + "\n", encoding="utf-8")
    n_ok = len(db.validated_records())
    print(f"validated {n_ok}/{len(db)} templates (audit in {state_path})")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    corpus, db = _load_run_inputs(out)
    if not db.validated_records():
        raise DataError("no validated templates; run validate-templates first")
    rig = _rig_for(cfg, out)
    client, prompts = _client_for(cfg, corpus, db)
    result = train(cfg, corpus, db, client, prompts, rig)
    ckpt = out / "checkpoint.bin"
    save_checkpoint(ckpt, result.weights, cfg, cfg.rig_seed, result.steps)
    (out / "curves.json").write_text(
        json.dumps(result.curves, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(
        f"trained {result.steps} steps in {result.wall_seconds:.1f}s; "
        f"best val P-MPVPE {result.best_val:.3f} mm at epoch {result.best_epoch}; "
        f"checkpoint {ckpt}"
    )
    return 0


def _cmd_eval(args) -> int:
    out = Path(args.out)
    if args.keypoints:
        report = evaluate_keypoint_file(args.keypoints)
        dest = out / "report"
        dest.mkdir(parents=True, exist_ok=True)
        path = dest / "keypoint_report.json"
        path.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        print(f"keypoint report written to {path}")
        return 0
    ckpt_path = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.bin"
    if not ckpt_path.exists():
        raise DataError(f"no checkpoint at {ckpt_path}")
    weights, cfg, meta = load_checkpoint(ckpt_path)
    corpus, db = _load_run_inputs(out)
    rig = build_rig(int(meta["rig_seed"]))
    client, prompts = _client_for(cfg, corpus, db)
    curves = None
    curves_path = out / "curves.json"
    if curves_path.exists():
        curves = json.loads(curves_path.read_text(encoding="utf-8"))
    report = evaluate(
        weights, cfg, corpus, db, client, prompts, rig,
        split=args.split, curves=curves, attention_samples=args.export_attention,
    )
    paths = emit_report(report.as_dict(), out / "report")
    gen = report.refined["general"]["means"] or {}
    print(f"report written: {[str(p) for p in paths]}")
    if gen:
        print(
            f"refined general P-MPVPE {gen.get('p_mpvpe', float('nan')):.3f} mm "
            f"over {report.refined['general']['n_hands']} hands"
        )
    return 0


def _cmd_retrieve(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    corpus, db = _load_run_inputs(out)
    if args.strategy:
        values = cfg.as_dict()
        values["retrieval_strategy"] = args.strategy
        cfg = RunConfig.from_dict(values)
    if args.query_id not in corpus.by_id:
        raise DataError(f"unknown query id {args.query_id!r}")
    sample = corpus.by_id[args.query_id]
    client, prompts = _client_for(cfg, corpus, db)
    from .infer import pick_template

    record = pick_template(sample, db, cfg, client, prompts)
    from ..retrieval.embed import cosine_similarity, embed_text

    sim = cosine_similarity(embed_text(sample.description), record.text_embedding)
    print(
        f"query {sample.sample_id} (class {int(sample.involvement)}) -> "
        f"template {record.record_id} (class {int(record.involvement)}), "
        f"description similarity {sim:.4f}"
    )
    return 0


def _cmd_grad_check(args) -> int:
    ok = run_gradient_suite()
    if not ok:
        raise NumericalError("gradient suite failed")
    return 0


def _cmd_report(args) -> int:
    report = json.loads(Path(args.report).read_text(encoding="utf-8"))
    formats = tuple(f.strip() for f in args.formats.split(",") if f.strip())
    paths = emit_report(report, args.out, formats)
    print(f"emitted: {[str(p) for p in paths]}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "validate-templates": _cmd_validate,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "retrieve": _cmd_retrieve,
    "grad-check": _cmd_grad_check,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, BlobFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
