"""Training stages, checkpointing, and evaluation orchestration.

Stage order is enforced: ``pretrain`` (pre-recommendation + graph
regularization, context encoder held fixed), then ``rec`` (full
recommendation objective), then ``gen`` (decoder training with everything
else frozen under a warm-up learning-rate schedule). Checkpoints embed the
config, vocabulary, optimizer state and RNG state, so a resumed run is
bit-identical to an uninterrupted one.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from .config import Config
from .corpus import KnowledgeGraph
from .metrics import build_report
from .nn import Adam, NoamSchedule, Tensor, autodiff as ad
from .pipeline import Pipeline
from .recommender import rank_items

logger = logging.getLogger(__name__)

STAGE_ORDER = ("init", "pretrain", "rec", "gen")


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the stage, epoch and example."""


class StageOrderError(RuntimeError):
    """A stage was started from a checkpoint that lacks its prerequisite."""


def _check_finite(loss, stage, epoch, example_id):
    if not np.isfinite(loss):
        raise TrainingDivergedError(
            f"{stage} loss is {loss} at epoch {epoch}, example {example_id}"
        )


def stage_at_least(stage: str, minimum: str) -> bool:
    return STAGE_ORDER.index(stage) >= STAGE_ORDER.index(minimum)


def _clip_gradients(params, max_norm: float) -> None:
    if max_norm <= 0:
        return
    total = 0.0
    for _, p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for _, p in params:
            if p.grad is not None:
                p.grad = p.grad * scale


def partition_parameters(pipeline: Pipeline):
    """Split parameters into the three learning-rate groups."""
    encoder, rgcn, other = [], [], []
    for name, p in pipeline.named_parameters():
        if name.startswith("ctx_encoder."):
            encoder.append((name, p))
        elif name.startswith("graph_encoder."):
            rgcn.append((name, p))
        else:
            other.append((name, p))
    return encoder, rgcn, other


def make_optimizer(pipeline: Pipeline, cfg: Config, encoder_lr=None) -> Adam:
    encoder, rgcn, other = partition_parameters(pipeline)
    lr_enc = cfg.lr_encoder if encoder_lr is None else encoder_lr
    return Adam(
        [
            {"name": "encoder", "params": encoder, "lr": lr_enc},
            {"name": "rgcn", "params": rgcn, "lr": cfg.lr_rgcn},
            {"name": "other", "params": other, "lr": cfg.lr_other},
        ]
    )


def make_gen_optimizer(pipeline: Pipeline) -> Adam:
    params = [
        (name, p)
        for name, p in pipeline.named_parameters()
        if name.startswith("generator.")
    ]
    return Adam([{"name": "gen", "params": params, "lr": 0.0}])


def _trainable_examples(pipeline: Pipeline):
    return [e for e in pipeline.examples if e.target_items]


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def _batches(examples, batch_size):
    step = len(examples) if batch_size is None else max(int(batch_size), 1)
    for start in range(0, len(examples), step):
        yield examples[start:start + step]


def _train_stage(pipeline, optimizer, epochs, stage, loss_fn, batch_size) -> list[float]:
    """Shared epoch loop: per-batch gradient step on the mean example loss.

    ``batch_size=1`` recovers plain per-example updates; ``None`` runs
    full-batch epochs (one entity-table forward per step, far less gradient
    churn on tiny corpora).
    """
    examples = _trainable_examples(pipeline)
    trace = []
    for epoch in range(epochs):
        total = 0.0
        count = 0
        for batch in _batches(examples, batch_size):
            emb = pipeline.graph_encoder()
            losses = []
            for example in batch:
                loss = loss_fn(example, emb)
                if loss is None:
                    continue
                _check_finite(loss.data, stage, epoch, example.example_id)
                losses.append(loss)
            if not losses:
                continue
            batch_loss = losses[0]
            for extra in losses[1:]:
                batch_loss = ad.add(batch_loss, extra)
            batch_loss = ad.mul(batch_loss, 1.0 / len(losses))
            optimizer.zero_grad()
            batch_loss.backward()
            _clip_gradients(
                [q for g in optimizer.groups for q in g["params"]],
                pipeline.cfg.grad_clip,
            )
            optimizer.step()
            total += sum(float(l.data) for l in losses)
            count += len(losses)
        trace.append(total / max(count, 1))
        logger.info("%s epoch %d: loss %.4f", stage, epoch, trace[-1])
    return trace


def train_pretrain(pipeline, optimizer, epochs: int, rng, batch_size=1) -> list[float]:
    """Pre-recommendation cross-entropy plus graph regularizer.

    The context encoder stays fixed in this stage: condition vectors are
    computed once and cached, so no gradient reaches the encoder.
    """
    return _train_stage(
        pipeline, optimizer, epochs, "pretrain",
        lambda example, emb: pipeline.pretrain_loss(example, emb, cache_ctx=True),
        batch_size,
    )


def train_rec(pipeline, optimizer, epochs: int, rng, batch_size=1) -> list[float]:
    """Recommendation objective with straight-through subgraph samples."""
    return _train_stage(
        pipeline, optimizer, epochs, "rec",
        lambda example, emb: pipeline.rec_forward(example, emb, rng, train=True),
        batch_size,
    )


def train_gen(pipeline, optimizer, epochs: int, rng, schedule=None) -> list[float]:
    """Decoder training; context encoder, graph encoder, pooling, and the
    relation networks are frozen and fingerprint-checked by callers."""
    cfg = pipeline.cfg
    schedule = schedule or NoamSchedule(cfg.noam_factor, cfg.ctx_dim, cfg.warmup_steps)
    trace = []
    emb_const = None
    for epoch in range(epochs):
        total = 0.0
        count = 0
        for example in pipeline.examples:
            if emb_const is None:
                # frozen graph encoder: entity table is constant all stage
                emb_const = Tensor(pipeline.graph_encoder().data)
            loss = pipeline.gen_loss_for_example(example, emb_const)
            _check_finite(loss.data, "gen", epoch, example.example_id)
            optimizer.set_lr("gen", schedule(optimizer.step_count + 1))
            optimizer.zero_grad()
            loss.backward()
            _clip_gradients(optimizer.groups[0]["params"], cfg.grad_clip)
            optimizer.step()
            total += float(loss.data)
            count += 1
        trace.append(total / max(count, 1))
        logger.info("gen epoch %d: loss %.4f", epoch, trace[-1])
    return trace


def freeze_for_gen(pipeline: Pipeline) -> dict[str, str]:
    """Freeze everything but the generator; return fingerprints for the
    freeze-contract check."""
    prints = {}
    for name in ("graph_encoder", "pooling", "ctx_encoder", "refactor"):
        module = getattr(pipeline, name)
        module.freeze()
        prints[name] = module.param_fingerprint()
    return prints


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, pipeline: Pipeline, stage: str, optimizer=None, rng=None):
    if stage not in STAGE_ORDER:
        raise ValueError(f"unknown stage: {stage}")
    arrays = {
        "mi_scores": pipeline.mi,
        "occurred": pipeline.occurred,
    }
    for name, p in pipeline.named_parameters():
        arrays["param/" + name] = p.data
    meta = {
        "stage": stage,
        "config": pipeline.cfg.to_dict(),
        "vocab": pipeline.vocab.index_to_token,
    }
    if optimizer is not None:
        state = optimizer.state_dict()
        meta["optimizer_step"] = state["step_count"]
        for key, value in state["m"].items():
            if value is not None:
                arrays["opt_m/" + key] = value
        for key, value in state["v"].items():
            if value is not None:
                arrays["opt_v/" + key] = value
    if rng is not None:
        meta["rng_state"] = rng.bit_generator.state
    arrays["meta"] = np.frombuffer(
        json.dumps(meta).encode("utf-8"), dtype=np.uint8
    ).copy()
    np.savez(path, **arrays)


def read_checkpoint_meta(path) -> dict:
    with np.load(path) as data:
        return json.loads(bytes(data["meta"]).decode("utf-8"))


def load_checkpoint(path, kg: KnowledgeGraph, dialogues):
    """Rebuild a pipeline from a checkpoint; returns
    (pipeline, stage, optimizer_state_or_None, rng_state_or_None)."""
    from .corpus import Vocabulary

    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        arrays = {k: data[k].copy() for k in data.files if k != "meta"}

    cfg = Config.from_dict(meta["config"])
    vocab = Vocabulary(meta["vocab"][len(Vocabulary.RESERVED):])
    pipeline = Pipeline(cfg, kg, dialogues, vocab=vocab)
    # candidate statistics travel with the model, not the evaluation split
    pipeline.mi = arrays["mi_scores"]
    pipeline.occurred = arrays["occurred"]

    params = {
        k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")
    }
    pipeline.load_state_dict(params)

    opt_state = None
    if "optimizer_step" in meta:
        opt_state = {
            "step_count": meta["optimizer_step"],
            "m": {
                k[len("opt_m/"):]: v
                for k, v in arrays.items()
                if k.startswith("opt_m/")
            },
            "v": {
                k[len("opt_v/"):]: v
                for k, v in arrays.items()
                if k.startswith("opt_v/")
            },
        }
    rng_state = meta.get("rng_state")
    return pipeline, meta["stage"], opt_state, rng_state


def restore_optimizer(optimizer: Adam, opt_state) -> None:
    if opt_state is None:
        return
    state = {
        "step_count": opt_state["step_count"],
        "m": {k: None for k in optimizer._m},
        "v": {k: None for k in optimizer._v},
    }
    state["m"].update(opt_state["m"])
    state["v"].update(opt_state["v"])
    optimizer.load_state_dict(state)


def restore_rng(rng_state) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = rng_state
    return rng


def require_stage(stage: str, minimum: str, action: str) -> None:
    if not stage_at_least(stage, minimum):
        raise StageOrderError(
            f"{action} requires a checkpoint at stage '{minimum}' or later, "
            f"got '{stage}'"
        )


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate(pipeline: Pipeline, examples=None, mode="greedy", top_m=50):
    """Deterministic evaluation pass.

    Returns (report, ranking_rows, generation_rows); the row lists are
    LDJSON-ready dicts keyed by example id.
    """
    examples = pipeline.examples if examples is None else examples
    emb = pipeline.graph_encoder()

    rankings, gold_sets = [], []
    ranking_rows = []
    generated, references = [], []
    generation_rows = []
    for example in examples:
        if example.target_items:
            _, _, scores = pipeline.eval_scores(example.context, emb)
            ranking = rank_items(scores, pipeline.item_ids, top_m)
            rankings.append(ranking)
            gold_sets.append(set(int(t) for t in example.target_items))
            ranking_rows.append(
                {
                    "example_id": example.example_id,
                    "ranking": [pipeline.kg.entity_ids[i] for i in ranking],
                }
            )
        response_ids = pipeline.respond(example.context, emb=emb, mode=mode)
        tokens = pipeline.vocab.decode(response_ids)
        generated.append(tokens)
        references.append(list(example.gold_response.tokens))
        generation_rows.append(
            {"example_id": example.example_id, "tokens": tokens}
        )

    report = build_report(rankings, gold_sets, generated, references)
    report.example_count = len(examples)
    return report, ranking_rows, generation_rows


def perplexity(pipeline: Pipeline, examples=None) -> float:
    """exp of the mean per-token negative log-likelihood."""
    examples = pipeline.examples if examples is None else examples
    emb = pipeline.graph_encoder()
    total_nll = 0.0
    total_tokens = 0
    for example in examples:
        dists, gold = pipeline.gen_teacher_forcing(example, emb)
        probs = dists.data[np.arange(gold.size), gold]
        total_nll += float(-np.log(np.clip(probs, 1e-10, None)).sum())
        total_tokens += gold.size
    return float(np.exp(total_nll / max(total_tokens, 1)))


def write_ldjson(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


# ---------------------------------------------------------------------------
# Full pipeline runs
# ---------------------------------------------------------------------------

def run_full_training(cfg: Config, kg, dialogues, workdir=None) -> Pipeline:
    """pretrain -> rec -> gen with per-stage checkpoints; returns the trained
    pipeline."""
    workdir = Path(workdir or cfg.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    pipeline = Pipeline(cfg, kg, dialogues)

    rng = np.random.default_rng(cfg.seed + 1)
    optimizer = make_optimizer(pipeline, cfg, encoder_lr=0.0)
    train_pretrain(pipeline, optimizer, cfg.epochs_pretrain, rng)
    save_checkpoint(workdir / "pretrain.npz", pipeline, "pretrain", optimizer, rng)

    optimizer = make_optimizer(pipeline, cfg)
    train_rec(pipeline, optimizer, cfg.epochs_rec, rng)
    save_checkpoint(workdir / "rec.npz", pipeline, "rec", optimizer, rng)

    freeze_for_gen(pipeline)
    gen_opt = make_gen_optimizer(pipeline)
    train_gen(pipeline, gen_opt, cfg.epochs_gen, rng)
    save_checkpoint(workdir / "gen.npz", pipeline, "gen", gen_opt, rng)
    return pipeline
