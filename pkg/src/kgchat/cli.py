"""Command-line entry points: staged training, evaluation, serving, chat."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import training
from .config import Config
from .corpus import RECOMMENDER, USER, load_dialogues, load_kg
from .pipeline import Pipeline

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgchat",
        description="Latent-subgraph conversational recommender",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False):
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--kg", type=Path, help="knowledge-graph triples file")
        p.add_argument("--kg-format", choices=["triple_tsv", "triple_json"])
        p.add_argument("--dialogues", type=Path, help="dialogue LDJSON file")
        p.add_argument("--workdir", type=Path, help="checkpoint directory")
        if checkpoint:
            p.add_argument("--checkpoint", type=Path, required=True)

    p = sub.add_parser("pretrain", help="pre-recommendation + graph regularizer")
    common(p)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("train-rec", help="recommendation objective fine-tuning")
    common(p, checkpoint=True)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("train-gen", help="response-generation training")
    common(p, checkpoint=True)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("eval", help="compute evaluation metrics")
    common(p, checkpoint=True)
    p.add_argument("--split", type=Path, help="dialogues to evaluate (default: training file)")
    p.add_argument("--mode", choices=["greedy", "beam"], default="greedy")
    p.add_argument("--beam-width", type=int, default=1)
    p.add_argument("--max-len", type=int)
    p.add_argument("--out", type=Path, help="write the report JSON here")

    p = sub.add_parser("serve", help="run the HTTP chat service")
    common(p, checkpoint=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--session-log", type=Path)

    p = sub.add_parser("chat", help="interactive terminal chat")
    common(p, checkpoint=True)
    p.add_argument("--mode", choices=["greedy", "beam"], default="greedy")
    p.add_argument("--top", type=int, default=3)

    return parser


def load_config(args) -> Config:
    cfg = Config.load(args.config) if args.config else Config()
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "kg", None):
        cfg.kg_path = str(args.kg)
    if getattr(args, "kg_format", None):
        cfg.kg_format = args.kg_format
    if getattr(args, "dialogues", None):
        cfg.dialogues_path = str(args.dialogues)
    if getattr(args, "workdir", None):
        cfg.workdir = str(args.workdir)
    cfg.validate()
    return cfg


def load_data(cfg: Config, dialogues_path=None):
    if not cfg.kg_path:
        raise SystemExit("no knowledge graph configured (--kg or config kg_path)")
    kg = load_kg(cfg.kg_path, cfg.kg_format)
    path = dialogues_path or cfg.dialogues_path
    if not path:
        raise SystemExit("no dialogues configured (--dialogues or config dialogues_path)")
    return kg, load_dialogues(path, kg)


def cmd_pretrain(args) -> int:
    cfg = load_config(args)
    kg, dialogues = load_data(cfg)
    pipeline = Pipeline(cfg, kg, dialogues)
    rng = np.random.default_rng(cfg.seed + 1)
    optimizer = training.make_optimizer(pipeline, cfg, encoder_lr=0.0)
    epochs = args.epochs if args.epochs is not None else cfg.epochs_pretrain
    trace = training.train_pretrain(pipeline, optimizer, epochs, rng)
    out = Path(cfg.workdir)
    out.mkdir(parents=True, exist_ok=True)
    training.save_checkpoint(out / "pretrain.npz", pipeline, "pretrain", optimizer, rng)
    if trace:
        print(f"pretrain done: {epochs} epochs, final loss {trace[-1]:.4f}")
    else:
        print("pretrain done: 0 epochs")
    print(f"checkpoint: {out / 'pretrain.npz'}")
    return 0


def _resume(args, cfg_override=None):
    cfg = load_config(args) if cfg_override is None else cfg_override
    kg, dialogues = load_data(cfg)
    pipeline, stage, opt_state, rng_state = training.load_checkpoint(
        args.checkpoint, kg, dialogues
    )
    if args.seed is not None:
        pipeline.cfg.seed = args.seed
    return pipeline, stage, opt_state, rng_state


def cmd_train_rec(args) -> int:
    pipeline, stage, opt_state, rng_state = _resume(args)
    training.require_stage(stage, "pretrain", "train-rec")
    cfg = pipeline.cfg
    optimizer = training.make_optimizer(pipeline, cfg)
    rng = (
        training.restore_rng(rng_state)
        if rng_state is not None
        else np.random.default_rng(cfg.seed + 2)
    )
    epochs = args.epochs if args.epochs is not None else cfg.epochs_rec
    trace = training.train_rec(pipeline, optimizer, epochs, rng)
    out = Path(args.workdir or cfg.workdir)
    out.mkdir(parents=True, exist_ok=True)
    training.save_checkpoint(out / "rec.npz", pipeline, "rec", optimizer, rng)
    if trace:
        print(f"train-rec done: {epochs} epochs, final loss {trace[-1]:.4f}")
    print(f"checkpoint: {out / 'rec.npz'}")
    return 0


def cmd_train_gen(args) -> int:
    pipeline, stage, _, rng_state = _resume(args)
    training.require_stage(stage, "rec", "train-gen")
    cfg = pipeline.cfg
    training.freeze_for_gen(pipeline)
    optimizer = training.make_gen_optimizer(pipeline)
    rng = (
        training.restore_rng(rng_state)
        if rng_state is not None
        else np.random.default_rng(cfg.seed + 3)
    )
    epochs = args.epochs if args.epochs is not None else cfg.epochs_gen
    trace = training.train_gen(pipeline, optimizer, epochs, rng)
    out = Path(args.workdir or cfg.workdir)
    out.mkdir(parents=True, exist_ok=True)
    training.save_checkpoint(out / "gen.npz", pipeline, "gen", optimizer, rng)
    if trace:
        print(f"train-gen done: {epochs} epochs, final loss {trace[-1]:.4f}")
    print(f"checkpoint: {out / 'gen.npz'}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args)
    if not cfg.kg_path:
        raise SystemExit("no knowledge graph configured (--kg or config kg_path)")
    kg = load_kg(cfg.kg_path, cfg.kg_format)
    split_path = args.split or cfg.eval_path or cfg.dialogues_path
    if not split_path:
        raise SystemExit("no evaluation dialogues configured (--split)")
    dialogues = load_dialogues(split_path, kg)
    pipeline, stage, _, _ = training.load_checkpoint(args.checkpoint, kg, dialogues)
    training.require_stage(stage, "pretrain", "eval")
    report, ranking_rows, generation_rows = training.evaluate(
        pipeline, mode=args.mode
    )
    payload = report.to_dict()
    print(json.dumps(payload, indent=2))
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        report.save(args.out)
        training.write_ldjson(args.out.with_suffix(".rankings.jsonl"), ranking_rows)
        training.write_ldjson(args.out.with_suffix(".generations.jsonl"), generation_rows)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    cfg = load_config(args)
    kg, dialogues = load_data(cfg)
    pipeline, stage, _, _ = training.load_checkpoint(args.checkpoint, kg, dialogues)
    training.require_stage(stage, "pretrain", "serve")
    app = create_app(pipeline, log_path=args.session_log)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_chat(args) -> int:
    cfg = load_config(args)
    kg, dialogues = load_data(cfg)
    pipeline, stage, _, _ = training.load_checkpoint(args.checkpoint, kg, dialogues)
    training.require_stage(stage, "pretrain", "chat")
    context = []
    print("type a message (empty line to quit)")
    for line in sys.stdin:
        text = line.strip()
        if not text:
            break
        context.append(pipeline.make_utterance(USER, text))
        turn = pipeline.infer_turn(context, top_m=args.top, mode=args.mode)
        response = " ".join(pipeline.vocab.decode(turn.response_ids))
        print(f"> {response}")
        for i in turn.ranking[: args.top]:
            slot = pipeline.item_slot(i)
            print(f"  [{turn.scores[slot]:.3f}] {kg.entity_names[i]}")
        context.append(pipeline.make_utterance(RECOMMENDER, response or "..."))
    return 0


COMMANDS = {
    "pretrain": cmd_pretrain,
    "train-rec": cmd_train_rec,
    "train-gen": cmd_train_gen,
    "eval": cmd_eval,
    "serve": cmd_serve,
    "chat": cmd_chat,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
