"""Command-line pipeline: generate -> inject -> embed -> court -> train ->
score -> eval, plus cost estimation, driven by a JSON config and flags.

Every artifact is written atomically (temp file + rename); exit codes are
0 = ok, 1 = runtime failure, 2 = usage or config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import court as court_mod
from .backends import HttpBackend, OracleBackend
from .config import ConfigError, PipelineConfig, validate_config
from .cost import ModelCost, TokenTally, estimate_cost_time
from .embed import embed_remote, embed_texts, load_embeddings, save_embeddings
from .fileio import atomic_write_json, atomic_write_text
from .graph import (
    load_graph,
    load_labels,
    save_graph,
    save_idmap,
    save_labels,
)
from .inject import InjectionConfig, InjectionReport, inject_all
from .metrics import compute_metrics, roc_curve
from .nn import load_params, save_params
from .seeding import derive_seed
from .synth import SyntheticConfig, generate_synthetic_tag
from .training import TrainConfig, score_nodes, train

logger = logging.getLogger("tagcourt")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

SUBCOMMANDS = (
    "gen-synth", "inject", "embed", "court", "train", "score", "eval",
    "estimate-cost", "run-all",
)


class StageError(RuntimeError):
    """A pipeline stage could not run (missing inputs, bad state)."""


def _synth_config(cfg: PipelineConfig) -> SyntheticConfig:
    s = cfg["synth"]
    return SyntheticConfig(
        n=s["n"], communities=s["communities"], intra_p=s["intra_p"], inter_p=s["inter_p"],
        vocab_per_community=s["vocab_per_community"],
        sentences_per_node=tuple(s["sentences_per_node"]),
        seed=derive_seed(cfg.seed, "synth"),
    )


def _inject_config(cfg: PipelineConfig) -> InjectionConfig:
    i = cfg["inject"]
    return InjectionConfig(
        m=i["m"], k=i["k"], q=i["q"], p=i["p"],
        insert_fraction=i["insert_fraction"], replace_fraction=i["replace_fraction"],
        seed=derive_seed(cfg.seed, "inject"),
    )


def _court_config(cfg: PipelineConfig, overrides) -> court_mod.CourtConfig:
    c = cfg["court"]
    return court_mod.CourtConfig(
        dataset_profile=cfg.raw["dataset_profile"],
        n_contextual=c["n_contextual"],
        n_structural=c["n_structural"],
        court_mode=overrides.mode or c["court_mode"],
        parallelism=overrides.parallelism or c["parallelism"],
        max_parse_retries=c["max_parse_retries"],
        temperature=c["temperature"],
        seed=derive_seed(cfg.seed, "court"),
    )


def _train_config(cfg: PipelineConfig) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        learning_rate=t["learning_rate"], epochs=t["epochs"], batch_size=t["batch_size"],
        weight_decay=t["weight_decay"], hidden_dim=t["hidden_dim"],
        gnn_layers=t["gnn_layers"], neighbor_cap=t["neighbor_cap"], rounds=t["rounds"],
        fusion_mode=t["fusion_mode"], seed=derive_seed(cfg.seed, "train"),
    )


def _load_data_graph(cfg: PipelineConfig):
    nodes, edges = cfg.path_for("nodes"), cfg.path_for("edges")
    for p in (nodes, edges):
        if not p.exists():
            raise StageError(f"missing input: {p} (run the inject stage first)")
    graph, _ = load_graph(nodes, edges)
    return graph


def _make_backend(cfg: PipelineConfig, backend_override, store_dir: Path):
    b = cfg["backend"]
    kind = backend_override or b["kind"]
    if kind == "http":
        return HttpBackend(
            endpoint=b["endpoint"],
            model=b["model"] or "default",
            temperature=cfg["court"]["temperature"],
            max_tokens=b["max_tokens"],
            max_retries=b["max_retries"],
            seed=derive_seed(cfg.seed, "backend"),
        )
    labels_path = cfg.path_for("labels")
    report_path = cfg.path_for("injection_report")
    if not labels_path.exists():
        raise StageError(f"oracle backend requires labels at {labels_path}")
    truth = load_labels(labels_path)
    injected = set()
    snippets = {}
    if report_path.exists():
        report = InjectionReport.from_dict(json.loads(report_path.read_text()))
        injected = report.injected_edge_set()
        snippets = report.contextual_snippets
    return OracleBackend(
        truth=truth,
        injected_edges=injected,
        accuracy=b["accuracy"],
        seed=derive_seed(cfg.seed, "oracle"),
        texts=_load_data_graph(cfg).texts(),
        contextual_snippets=snippets,
    )


# --------------------------------------------------------------------------
# Stage implementations

def stage_gen_synth(cfg: PipelineConfig, args) -> None:
    graph, communities = generate_synthetic_tag(_synth_config(cfg))
    save_graph(graph, cfg.path_for("nodes_raw"), cfg.path_for("edges_raw"))
    logger.info("generated synthetic graph: n=%d m=%d", graph.n, graph.m)


def stage_inject(cfg: PipelineConfig, args) -> None:
    nodes_raw, edges_raw = cfg.path_for("nodes_raw"), cfg.path_for("edges_raw")
    for p in (nodes_raw, edges_raw):
        if not p.exists():
            raise StageError(f"missing input: {p} (run gen-synth or place a graph there)")
    graph, info = load_graph(nodes_raw, edges_raw)
    if info.id_remapped:
        save_idmap(info.idmap, cfg.path_for("idmap"))
        logger.info("sparse node ids remapped; mapping written to %s", cfg.path_for("idmap"))
    icfg = _inject_config(cfg)
    embeddings = embed_texts(graph.texts(), cfg["embed"]["dim"])
    mutated, truth, report = inject_all(graph, embeddings, icfg)
    save_graph(mutated, cfg.path_for("nodes"), cfg.path_for("edges"))
    save_labels(truth, cfg.path_for("labels"), mutated.n)
    atomic_write_json(cfg.path_for("injection_report"), report.to_dict())
    logger.info(
        "injected %d anomalies (%d per strategy), %d edges added, %d warnings",
        4 * icfg.m, icfg.m, len(report.edges_added), report.warnings,
    )


def stage_embed(cfg: PipelineConfig, args) -> None:
    kind = getattr(args, "kind", "orig")
    e = cfg["embed"]
    if kind == "orig":
        graph = _load_data_graph(cfg)
        texts = graph.texts()
        out = cfg.path_for("embeddings_orig")
    else:
        store = court_mod.EvidenceStore(cfg.path_for("store"))
        graph = _load_data_graph(cfg)
        texts = court_mod.verdict_texts(store, graph.n, e["verdict_encoding"])
        out = cfg.path_for("embeddings_verd")
    if e["remote_endpoint"]:
        mat = embed_remote(
            texts, e["remote_endpoint"], e["remote_model"] or "default",
            batch=e["remote_batch"], kind=kind,
        )
    else:
        mat = embed_texts(texts, e["dim"], kind=kind)
    save_embeddings(out, mat)
    logger.info("embedded %d texts (kind=%s, d=%d) -> %s", len(texts), kind, mat.d, out)


def stage_court(cfg: PipelineConfig, args) -> None:
    graph = _load_data_graph(cfg)
    store_dir = Path(getattr(args, "store", None) or cfg.path_for("store"))
    store = court_mod.EvidenceStore(store_dir)
    backend = _make_backend(cfg, getattr(args, "backend", None), store_dir)
    ccfg = _court_config(cfg, args)
    stats = court_mod.run_court(graph, ccfg, backend, store)
    logger.info(
        "court run: %d backend calls (%d cached, %d unparseable, %d failed)",
        stats.backend_calls, stats.cached_records, stats.unparseable, len(stats.failed_nodes),
    )


def stage_train(cfg: PipelineConfig, args) -> None:
    graph = _load_data_graph(cfg)
    x_orig = load_embeddings(cfg.path_for("embeddings_orig"), kind="orig")
    verd_path = cfg.path_for("embeddings_verd")
    tcfg = _train_config(cfg)
    if verd_path.exists():
        x_verd = load_embeddings(verd_path, kind="verdict").vectors
    elif tcfg.fusion_mode == "orig_only":
        x_verd = np.zeros_like(x_orig.vectors)
    else:
        raise StageError(f"missing input: {verd_path} (run court + embed --kind verdict)")
    result = train(graph, x_orig.vectors, x_verd, tcfg)
    save_params(cfg.path_for("params"), result.params)
    trace = "epoch,mean_loss\n" + "".join(
        f"{i + 1},{loss:.6f}\n" for i, loss in enumerate(result.loss_trace)
    )
    atomic_write_text(cfg.path_for("loss_trace"), trace)
    logger.info("trained %d epochs; params -> %s", tcfg.epochs, cfg.path_for("params"))


def stage_score(cfg: PipelineConfig, args) -> None:
    graph = _load_data_graph(cfg)
    params_path = cfg.path_for("params")
    if not params_path.exists():
        raise StageError(f"missing input: {params_path} (run the train stage first)")
    params = load_params(params_path)
    x_orig = load_embeddings(cfg.path_for("embeddings_orig")).vectors
    verd_path = cfg.path_for("embeddings_verd")
    tcfg = _train_config(cfg)
    x_verd = (
        load_embeddings(verd_path).vectors if verd_path.exists() else np.zeros_like(x_orig)
    )
    scores = score_nodes(
        params, graph, x_orig, x_verd,
        rounds=tcfg.rounds, neighbor_cap=tcfg.neighbor_cap,
        seed=derive_seed(cfg.seed, "score"), fusion_mode=tcfg.fusion_mode,
    )
    body = "node_id,score\n" + "".join(f"{v},{s:.6f}\n" for v, s in enumerate(scores))
    atomic_write_text(cfg.path_for("scores"), body)
    logger.info("scored %d nodes -> %s", graph.n, cfg.path_for("scores"))


def stage_eval(cfg: PipelineConfig, args) -> None:
    labels_path = cfg.path_for("labels")
    scores_path = cfg.path_for("scores")
    for p in (labels_path, scores_path):
        if not p.exists():
            raise StageError(f"missing input: {p}")
    truth = load_labels(labels_path)
    rows = scores_path.read_text().strip().splitlines()[1:]
    scores = np.asarray([float(r.split(",")[1]) for r in rows])
    labels = truth.binary(len(scores))
    report = compute_metrics(scores, labels)
    atomic_write_json(cfg.path_for("metrics"), report.to_dict())
    points = roc_curve(scores, labels)
    atomic_write_text(
        cfg.path_for("roc"),
        "fpr,tpr\n" + "".join(f"{fpr:.6f},{tpr:.6f}\n" for fpr, tpr in points),
    )
    logger.info("eval: auc=%.4f ap=%.4f (%d pos / %d neg)",
                report.auc, report.ap, report.n_pos, report.n_neg)


def stage_estimate_cost(cfg: PipelineConfig, args) -> None:
    c = cfg["cost"]
    models = {
        name: ModelCost(spec["price_per_mtok"], spec["tokens_per_second"])
        for name, spec in c["models"].items()
    }
    tallies = {
        name: TokenTally(spec["prompt_tokens"], spec["output_tokens"])
        for name, spec in c["tallies"].items()
    }
    if not tallies:
        store_dir = cfg.path_for("store")
        if not store_dir.exists():
            raise StageError("no cost tallies in config and no evidence store to derive them from")
        tallies = court_mod.EvidenceStore(store_dir).token_tallies()
    n_nodes = c["n_nodes"]
    if not n_nodes:
        n_nodes = _load_data_graph(cfg).n
    report = estimate_cost_time(tallies, models, n_nodes, c["parallelism"])
    atomic_write_json(cfg.path_for("cost_report"), report.to_dict())
    logger.info("estimated cost %.2f, time %.1f min at parallelism %d",
                report.cost, report.minutes, c["parallelism"])


def stage_run_all(cfg: PipelineConfig, args) -> None:
    stage_gen_synth(cfg, args)
    stage_inject(cfg, args)
    args.kind = "orig"
    stage_embed(cfg, args)
    stage_court(cfg, args)
    args.kind = "verdict"
    stage_embed(cfg, args)
    stage_train(cfg, args)
    stage_score(cfg, args)
    stage_eval(cfg, args)


_STAGES = {
    "gen-synth": stage_gen_synth,
    "inject": stage_inject,
    "embed": stage_embed,
    "court": stage_court,
    "train": stage_train,
    "score": stage_score,
    "eval": stage_eval,
    "estimate-cost": stage_estimate_cost,
    "run-all": stage_run_all,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tagcourt",
        description="Anomaly-detection pipeline for text-attributed graphs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON pipeline config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--print-config", action="store_true",
                       help="print the effective config and exit")
        if name in ("embed",):
            p.add_argument("--kind", choices=("orig", "verdict"), default="orig")
        if name in ("court", "run-all"):
            p.add_argument("--mode", default=None,
                           choices=("one_prosecutor", "two_prosecutors", "full_court"))
            p.add_argument("--backend", default=None, choices=("http", "oracle"))
            p.add_argument("--parallelism", type=int, default=None)
            p.add_argument("--store", default=None, help="evidence store directory")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    for attr in ("mode", "backend", "parallelism", "store"):
        if not hasattr(args, attr):
            setattr(args, attr, None)
    try:
        cfg = validate_config(args.config, seed_override=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.print_config:
        print(json.dumps(cfg.raw, indent=2, sort_keys=True))
        return EXIT_OK
    try:
        _STAGES[args.command](cfg, args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        logger.exception("stage %s failed", args.command)
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
