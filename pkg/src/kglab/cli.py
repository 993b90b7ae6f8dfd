"""Command-line entry point: ingest, train, eval, predict, llm, cost.

Configuration comes from a TOML file (--config) with every flag able to
override its file counterpart. All randomness flows from one seed, and the
primary outputs (snapshot, checkpoint, metrics.json, transcript.jsonl) are
byte-stable for a fixed config and seed; only logs.jsonl carries wall-clock
timestamps.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields

import click

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .encoders import (EmbeddingStore, FileStoreEncoder, HashEncoder,
                       RemoteConfig, RemoteEncoder)
from .errors import KglabError
from .evaluation import (cost_model, link_prediction_eval, rank_queries,
                         rank_results_tsv, compute_metrics, make_link_scorer)
from .graph import (build_filter_sets, load_knowledge_graph, load_snapshot,
                    save_snapshot)
from .llm import (ConstantMock, LlmClientConfig, LlmEvalConfig, OpenAiChatClient,
                  OracleMock, evaluate_llm_kgc)
from .serialize import SerializeConfig
from .training import (TRAINABLE_KINDS, TrainerConfig, fit, load_checkpoint,
                       save_checkpoint)

MODEL_KINDS = ("masked_entity", "two_tower", "joint", "generation", "llm")
PROVIDER_KINDS = ("hash", "file", "remote")


@dataclass
class RunConfig:
    train_path: str = ""
    valid_path: str = ""
    test_path: str = ""
    entities_path: str = ""
    relations_path: str = ""
    model_kind: str = "masked_entity"
    provider_kind: str = "hash"
    dim: int = 128
    store_path: str = ""
    remote_model: str = "text-embedding"
    output_dir: str = "kglab_run"
    seed: int = 0
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    serialize: SerializeConfig = field(default_factory=SerializeConfig)
    llm_model: str = "gpt-3.5-turbo"
    llm_sample_size: int = 224
    llm_candidates: int = 100
    llm_demos: int = 5
    llm_rationale: bool = False

    def validate(self):
        if self.model_kind not in MODEL_KINDS:
            raise KglabError(f"model kind must be one of {MODEL_KINDS}, "
                             f"got {self.model_kind!r}")
        if self.provider_kind not in PROVIDER_KINDS:
            raise KglabError(f"provider kind must be one of {PROVIDER_KINDS}, "
                             f"got {self.provider_kind!r}")
        if self.provider_kind == "file" and not self.store_path:
            raise KglabError("provider 'file' needs provider.store in the config")


def load_run_config(path=None, overrides=None) -> RunConfig:
    """Read the TOML config, then apply flag overrides on top."""
    cfg = RunConfig()
    if path:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
        data = doc.get("data", {})
        cfg.train_path = data.get("train", cfg.train_path)
        cfg.valid_path = data.get("valid", cfg.valid_path)
        cfg.test_path = data.get("test", cfg.test_path)
        cfg.entities_path = data.get("entities", cfg.entities_path)
        cfg.relations_path = data.get("relations", cfg.relations_path)
        model = doc.get("model", {})
        cfg.model_kind = model.get("kind", cfg.model_kind)
        cfg.provider_kind = model.get("provider", cfg.provider_kind)
        cfg.dim = model.get("dim", cfg.dim)
        cfg.store_path = model.get("store", cfg.store_path)
        cfg.remote_model = model.get("remote_model", cfg.remote_model)
        out = doc.get("output", {})
        cfg.output_dir = out.get("dir", cfg.output_dir)
        cfg.seed = doc.get("seed", cfg.seed)
        trainer_doc = doc.get("trainer", {})
        trainer_kwargs = {f.name: trainer_doc[f.name]
                          for f in fields(TrainerConfig) if f.name in trainer_doc}
        trainer_kwargs.setdefault("seed", cfg.seed)
        cfg.trainer = TrainerConfig(**trainer_kwargs)
        ser_doc = doc.get("serialize", {})
        ser_kwargs = {f.name: ser_doc[f.name]
                      for f in fields(SerializeConfig) if f.name in ser_doc}
        cfg.serialize = SerializeConfig(**ser_kwargs)
        llm_doc = doc.get("llm", {})
        cfg.llm_model = llm_doc.get("model", cfg.llm_model)
        cfg.llm_sample_size = llm_doc.get("sample_size", cfg.llm_sample_size)
        cfg.llm_candidates = llm_doc.get("candidates", cfg.llm_candidates)
        cfg.llm_demos = llm_doc.get("demos", cfg.llm_demos)
        cfg.llm_rationale = llm_doc.get("rationale", cfg.llm_rationale)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "seed":
            cfg.seed = value
            cfg.trainer.seed = value
        elif key == "fast_run":
            cfg.trainer.fast_run = value
        elif hasattr(cfg, key):
            setattr(cfg, key, value)
        else:
            raise KglabError(f"unknown config override {key!r}")
    cfg.validate()
    return cfg


def _json_bytes(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False) + "\n"


def _load_graph(cfg: RunConfig):
    snapshot = os.path.join(cfg.output_dir, "snapshot")
    if os.path.exists(snapshot):
        return load_snapshot(snapshot)
    paths = {}
    for split, p in (("train", cfg.train_path), ("valid", cfg.valid_path),
                     ("test", cfg.test_path)):
        if p:
            paths[split] = p
    if not paths or not cfg.entities_path or not cfg.relations_path:
        raise KglabError("no snapshot found and data paths are incomplete; "
                         "run ingest or fill the [data] section")
    return load_knowledge_graph(paths, cfg.entities_path, cfg.relations_path)


def _make_provider(cfg: RunConfig):
    if cfg.provider_kind == "hash":
        return HashEncoder(cfg.dim, cfg.seed)
    if cfg.provider_kind == "file":
        return FileStoreEncoder(EmbeddingStore.load(cfg.store_path))
    return RemoteEncoder(RemoteConfig.from_env(model=cfg.remote_model))


def _fail(exc: Exception):
    raise click.ClickException(str(exc))


@click.group()
def main():
    """Text-based knowledge-graph embedding toolkit."""


_config_opt = click.option("--config", "config_path", type=click.Path(), default=None,
                           help="TOML run configuration.")
_seed_opt = click.option("--seed", type=int, default=None,
                         help="Override the run seed.")


@main.command()
@_config_opt
@_seed_opt
@click.option("--output-dir", default=None, help="Override the output directory.")
def ingest(config_path, seed, output_dir):
    """Load and index the dataset, write a snapshot, print a report."""
    try:
        cfg = load_run_config(config_path, {"seed": seed, "output_dir": output_dir})
        paths = {}
        for split, p in (("train", cfg.train_path), ("valid", cfg.valid_path),
                         ("test", cfg.test_path)):
            if p:
                paths[split] = p
        kg = load_knowledge_graph(paths, cfg.entities_path, cfg.relations_path)
        build_filter_sets(kg)
        os.makedirs(cfg.output_dir, exist_ok=True)
        save_snapshot(kg, os.path.join(cfg.output_dir, "snapshot"))
    except (KglabError, OSError, ValueError) as exc:
        _fail(exc)
    click.echo(_json_bytes(kg.report()), nl=False)


@main.command()
@_config_opt
@_seed_opt
@click.option("--fast-run", is_flag=True, default=False,
              help="Cap training at 2 epochs of 5 batches.")
@click.option("--resume", "resume_path", type=click.Path(exists=True),
              default=None, help="Continue from a checkpoint.")
def train(config_path, seed, fast_run, resume_path):
    """Fit a model on the train split; write checkpoint, logs and metrics."""
    try:
        cfg = load_run_config(config_path,
                              {"seed": seed, "fast_run": fast_run or None})
        if cfg.model_kind not in TRAINABLE_KINDS:
            raise KglabError(
                f"model kind {cfg.model_kind!r} has no training loop; "
                f"trainable kinds: {', '.join(TRAINABLE_KINDS)}")
        kg = _load_graph(cfg)
        provider = _make_provider(cfg)
        os.makedirs(cfg.output_dir, exist_ok=True)
        state = None
        if resume_path:
            state, _kind = load_checkpoint(resume_path)
        with open(os.path.join(cfg.output_dir, "logs.jsonl"), "w",
                  encoding="utf-8") as log_sink:
            state = fit(cfg.trainer, cfg.model_kind, kg, provider,
                        cfg.serialize, log_sink=log_sink, state=state)
        ema_on = cfg.trainer.ema_decay > 0
        save_checkpoint(state, cfg.model_kind,
                        os.path.join(cfg.output_dir, "checkpoint"),
                        ema_enabled=ema_on)
        filter_index = build_filter_sets(kg)
        monitor = "valid" if kg.splits.get("valid") else "train"
        scorer = make_link_scorer(cfg.model_kind,
                                  state.inference_params(ema_on), provider,
                                  kg, cfg.serialize, seed=cfg.trainer.seed)
        report = link_prediction_eval(scorer, kg, monitor, filter_index, "both")
        payload = {"split": monitor, **report.to_dict()}
        with open(os.path.join(cfg.output_dir, "metrics.json"), "w",
                  encoding="utf-8") as f:
            f.write(_json_bytes(payload))
    except (KglabError, OSError, ValueError) as exc:
        _fail(exc)
    click.echo(_json_bytes(payload), nl=False)


@main.command("eval")
@_config_opt
@_seed_opt
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True),
              required=True)
@click.option("--split", default="test", show_default=True)
@click.option("--directions", default="both", show_default=True,
              type=click.Choice(["tail", "head", "both"]))
@click.option("--per-query", "per_query_path", type=click.Path(), default=None,
              help="Also write one rank row per query as TSV.")
def eval_cmd(config_path, seed, checkpoint_path, split, directions,
             per_query_path):
    """Filtered link-prediction metrics for a checkpoint."""
    try:
        cfg = load_run_config(config_path, {"seed": seed})
        kg = _load_graph(cfg)
        state, kind = load_checkpoint(checkpoint_path)
        provider = _make_provider(cfg)
        filter_index = build_filter_sets(kg)
        scorer = make_link_scorer(kind, state.params, provider, kg,
                                  cfg.serialize, seed=cfg.seed)
        results = rank_queries(scorer, kg, split, filter_index, directions)
        report = compute_metrics([r.rank for r in results])
        if per_query_path:
            with open(per_query_path, "w", encoding="utf-8") as f:
                f.write(rank_results_tsv(results))
        os.makedirs(cfg.output_dir, exist_ok=True)
        payload = {"split": split, "directions": directions, **report.to_dict()}
        with open(os.path.join(cfg.output_dir, "metrics.json"), "w",
                  encoding="utf-8") as f:
            f.write(_json_bytes(payload))
    except (KglabError, OSError, ValueError, KeyError) as exc:
        _fail(exc)
    click.echo(_json_bytes(payload), nl=False)


@main.command()
@_config_opt
@_seed_opt
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True),
              required=True)
@click.option("--head", "head_raw", required=True,
              help="Raw id of the known entity.")
@click.option("--relation", "relation_raw", required=True,
              help="Raw id of the relation.")
@click.option("--direction", default="predict_tail", show_default=True,
              type=click.Choice(["predict_tail", "predict_head"]))
@click.option("--top", "top_n", default=10, show_default=True)
def predict(config_path, seed, checkpoint_path, head_raw, relation_raw,
            direction, top_n):
    """Rank completions for one query; prints raw_id, name and score rows."""
    from .tasks import kgc_predict
    try:
        cfg = load_run_config(config_path, {"seed": seed})
        kg = _load_graph(cfg)
        state, kind = load_checkpoint(checkpoint_path)
        provider = _make_provider(cfg)
        if head_raw not in kg.entity_index:
            raise KglabError(f"unknown entity raw id {head_raw!r}")
        if relation_raw not in kg.relation_index:
            raise KglabError(f"unknown relation raw id {relation_raw!r}")
        if kind != "masked_entity":
            raise KglabError(f"predict needs a masked_entity checkpoint, got {kind!r}")
        filter_index = build_filter_sets(kg)
        ranked = kgc_predict(state.params, provider, kg,
                             kg.entity_index[head_raw],
                             kg.relation_index[relation_raw],
                             direction, top_n, cfg.serialize,
                             filter_index=filter_index, seed=cfg.seed)
    except (KglabError, OSError, ValueError) as exc:
        _fail(exc)
    for eid, score in ranked:
        click.echo(f"{kg.raw_entity_ids[eid]}\t{kg.entity(eid).surface_name}"
                   f"\t{score:.6f}")


@main.command()
@_config_opt
@_seed_opt
@click.option("--sample", "sample_size", type=int, default=None,
              help="Override the stratified sample size.")
@click.option("--mock", "mock_mode", default=None,
              help="Offline client: 'perfect', 'none', or 'constant:<text>'.")
@click.option("--rationale", is_flag=True, default=False,
              help="Add templated rationales to demonstrations.")
def llm(config_path, seed, sample_size, mock_mode, rationale):
    """LLM-based link prediction over a stratified test sample."""
    try:
        cfg = load_run_config(config_path, {"seed": seed})
        kg = _load_graph(cfg)
        if mock_mode is None:
            client = OpenAiChatClient(LlmClientConfig.from_env(model=cfg.llm_model))
        elif mock_mode == "perfect":
            client = OracleMock()
        elif mock_mode == "none":
            client = ConstantMock("I cannot tell.")
        elif mock_mode.startswith("constant:"):
            client = ConstantMock(mock_mode[len("constant:"):])
        else:
            raise KglabError(f"unknown mock mode {mock_mode!r}")
        eval_cfg = LlmEvalConfig(
            sample_size=sample_size if sample_size is not None else cfg.llm_sample_size,
            n_candidates=cfg.llm_candidates, n_demos=cfg.llm_demos,
            with_rationale=rationale or cfg.llm_rationale, seed=cfg.seed)
        os.makedirs(cfg.output_dir, exist_ok=True)
        with open(os.path.join(cfg.output_dir, "transcript.jsonl"), "w",
                  encoding="utf-8") as sink:
            result = evaluate_llm_kgc(kg, client, eval_cfg, transcript_sink=sink)
        payload = {"hits1": result.hits1, "count": result.count}
    except (KglabError, OSError, ValueError) as exc:
        _fail(exc)
    click.echo(_json_bytes(payload), nl=False)


@main.command()
@click.option("--method", required=True,
              help="Scoring method name from the cost table.")
@click.option("-L", "--length", "L", type=float, required=True,
              help="Token length of a full triple description.")
@click.option("-E", "--entities", "E", type=float, required=True)
@click.option("-R", "--relations", "R", type=float, required=True)
def cost(method, L, E, R):
    """Instantiate the inference cost model for one method."""
    try:
        est = cost_model(method, L, E, R)
    except (KglabError, ValueError) as exc:
        _fail(exc)
    click.echo(_json_bytes({"method": est.method, "expression": est.expression,
                            "value": est.value}), nl=False)


if __name__ == "__main__":
    main(prog_name="kglab")
