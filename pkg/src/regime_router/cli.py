"""Operator entry point: ingest, embed, train, eval, experiment, report.

Exit codes: 0 success, 1 runtime failure (provider, training), 2 usage or
parse error, 3 referential-integrity error. Config precedence is CLI flag
over config file over built-in default, and every report embeds the
effective config plus the deployment-rule banner (alpha, tau, alpha_mode).
Reports are byte-identical across reruns when --deterministic is set.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .corpus import (
    DanglingIdError,
    Dataset,
    DatasetParseError,
    MissingRankError,
    filter_hop1_correct,
    load_dataset,
    load_hop1_ranks,
)
from .embedding_store import (
    DimensionMismatchError,
    EmbedProviderConfig,
    EmbeddingClient,
    MissingEmbeddingError,
    NonFiniteVectorError,
    ProviderError,
    TransportError,
    VectorFormatError,
    VectorStore,
    load_vectors,
    passage_key,
    question_key,
    save_vectors,
    text_key,
)
from .experiments import (
    DEFAULT_SWEEP_TAUS,
    compute_margins,
    knockout_variants,
    mixture_decomposition,
    regime_assignment_eval,
    run_ablations,
    run_knockout,
    run_main_eval,
    run_oracle_analysis,
    synthetic_calibration,
    threshold_sweep,
)
from .linear_model import (
    FoldError,
    NonConvergenceError,
    SingleClassError,
    TrainConfig,
    cross_fit,
    load_model,
    save_model,
)
from .router_retrieval import RoutingConfig, build_router_training
from .selector import AnnotationError, load_annotations, train_selector
from .text_analysis import default_lexicons, split_sentences

logger = logging.getLogger("regime_router")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_INTEGRITY = 3


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config


_DEFAULTS = {
    "alpha": 0.25,
    "tau": 0.5,
    "alpha_mode": "frozen",
    "k": 5,
    "label_mode": "strict",
    "parallelism": 1,
    "l2_penalty": 1.0,
    "cv_folds": 5,
    "endpoint": "",
    "model_name": "",
    "auth_env_var": "",
    "query_prefix": "",
    "doc_prefix": "",
    "timeout": 30.0,
    "max_retries": 3,
    "batch_size": 64,
    "retry_base_delay": 0.5,
}


@dataclass(frozen=True)
class RunConfig:
    alpha: float
    tau: float
    alpha_mode: str
    k: int
    label_mode: str
    parallelism: int
    l2_penalty: float
    cv_folds: int
    endpoint: str
    model_name: str
    auth_env_var: str
    query_prefix: str
    doc_prefix: str
    timeout: float
    max_retries: int
    batch_size: int
    retry_base_delay: float

    def routing(self) -> RoutingConfig:
        return RoutingConfig(
            tau=self.tau,
            alpha=self.alpha,
            alpha_mode=self.alpha_mode,
            k=self.k,
            label_mode=self.label_mode,
        )

    def provider(self) -> EmbedProviderConfig:
        return EmbedProviderConfig(
            endpoint=self.endpoint,
            model_name=self.model_name,
            mode_instructions={"query": self.query_prefix, "doc": self.doc_prefix},
            auth_env_var=self.auth_env_var,
            timeout=self.timeout,
            max_retries=self.max_retries,
            batch_size=self.batch_size,
            parallelism=self.parallelism,
            retry_base_delay=self.retry_base_delay,
        )

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "tau": self.tau,
            "alpha_mode": self.alpha_mode,
            "k": self.k,
            "label_mode": self.label_mode,
            "parallelism": self.parallelism,
            "l2_penalty": self.l2_penalty,
            "cv_folds": self.cv_folds,
            "model_name": self.model_name,
        }

    def banner(self) -> dict:
        return {"alpha": self.alpha, "tau": self.tau, "alpha_mode": self.alpha_mode}


def merge_config(args: argparse.Namespace) -> RunConfig:
    """CLI flag > config file > built-in default."""
    merged = dict(_DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {config_path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError(f"config file {config_path}: expected a JSON object")
        unknown = sorted(set(loaded) - set(_DEFAULTS))
        if unknown:
            raise UsageError(f"config file {config_path}: unknown keys {unknown}")
        merged.update(loaded)
    for key in _DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    cfg = RunConfig(**merged)
    try:
        cfg.routing()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return cfg


# ---------------------------------------------------------------------------
# Shared loading helpers


def _load_dataset(path: str) -> Dataset:
    ds = load_dataset(path)
    logger.info("loaded dataset %s: %d queries, %d passages", ds.name, len(ds.queries), len(ds.passages))
    return ds


def _apply_hop1_filter(ds: Dataset, args: argparse.Namespace, k: int) -> Dataset:
    ranks_path = getattr(args, "hop1_ranks", None)
    if not ranks_path:
        return ds
    ranks = load_hop1_ranks(ranks_path)
    filtered = filter_hop1_correct(ds, ranks, k=k)
    logger.info("hop1 filter kept %d of %d queries", len(filtered.queries), len(ds.queries))
    return filtered


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()[:8]


# ---------------------------------------------------------------------------
# ingest


def cmd_ingest(args: argparse.Namespace) -> int:
    ds = _load_dataset(args.dataset)
    print(f"queries: {len(ds.queries)}")
    print(f"passages: {len(ds.passages)}")
    by_type: dict[str, int] = {}
    for q in ds.queries:
        by_type[q.qtype] = by_type.get(q.qtype, 0) + 1
    for qtype in sorted(by_type):
        print(f"  {qtype}: {by_type[qtype]}")
    if getattr(args, "hop1_ranks", None):
        cfg = merge_config(args)
        filtered = _apply_hop1_filter(ds, args, cfg.k)
        print(f"hop1-correct at k={cfg.k}: {len(filtered.queries)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# embed


def enumerate_embedding_ids(ds: Dataset, lex=None) -> list[tuple[str, str, str]]:
    """(store id, text, mode) for every text any pipeline stage can request.

    The enumeration is a superset: all bridge sentences (any selector's
    choice is among them) and all single-sentence-removed bodies (any
    knockout selection is among them), so a store built from it serves
    eval, ablations, sweeps, oracle analysis, and knockout without a
    second provider pass.
    """
    lex = lex or default_lexicons()
    out: dict[tuple[str, str], str] = {}
    for q in ds.queries:
        out[(question_key(q.id), "query")] = q.question
    for pid, passage in ds.passages.items():
        out[(passage_key(pid), "doc")] = passage.doc_text
    bridge_ids = {q.bridge_id for q in ds.queries}
    for bid in sorted(bridge_ids):
        body = ds.passage(bid).body
        out[(text_key(body), "query")] = body
        sents = split_sentences(body, lex)
        for i, sent in enumerate(sents):
            out[(text_key(sent.text), "query")] = sent.text
            variants = knockout_variants(body, lex, i)
            if variants is not None:
                minus = variants[2]
                out[(text_key(minus), "query")] = minus
    return [(sid, text, mode) for (sid, mode), text in sorted(out.items())]


def cmd_embed(args: argparse.Namespace) -> int:
    cfg = merge_config(args)
    ds = _load_dataset(args.dataset)
    needed = enumerate_embedding_ids(ds)

    store_path = Path(args.store)
    existing: VectorStore | None = None
    if store_path.exists():
        existing = load_vectors(store_path)
    missing = [
        (sid, text, mode)
        for sid, text, mode in needed
        if existing is None or (sid, mode) not in existing
    ]
    print(f"texts needed: {len(needed)}")
    print(f"missing embeddings: {len(missing)}")
    if args.dry_run:
        return EXIT_OK
    if not missing:
        return EXIT_OK

    if not cfg.endpoint:
        raise UsageError("an endpoint is required to fetch embeddings (set --endpoint or config)")
    client = EmbeddingClient(cfg.provider(), cache_path=args.cache)
    new_entries: dict[tuple[str, str], object] = {}
    dim = existing.dim if existing is not None else None
    for mode in ("query", "doc"):
        batch = [(sid, text) for sid, text, m in missing if m == mode]
        if not batch:
            continue
        vectors = client.fetch([text for _, text in batch], mode, expected_dim=dim)
        if dim is None and vectors:
            dim = vectors[0].shape[0]
        for (sid, _), vec in zip(batch, vectors):
            new_entries[(sid, mode)] = vec
    if dim is None:
        raise ProviderError("provider returned no vectors")
    store = existing.merged(new_entries) if existing is not None else VectorStore(dim, new_entries)
    save_vectors(store, store_path)
    print(f"provider calls: {client.calls}")
    print(f"store size: {len(store)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def cmd_train(args: argparse.Namespace) -> int:
    cfg = merge_config(args)
    ds = _load_dataset(args.dataset)
    ds = _apply_hop1_filter(ds, args, cfg.k)
    store = load_vectors(args.store)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_cfg = TrainConfig(l2_penalty=cfg.l2_penalty)

    if args.selector_model:
        selector = load_model(args.selector_model)
        if args.annotations:
            logger.warning("prebuilt selector supplied; annotations file ignored")
        selector_source = f"artifact:{args.selector_model}"
    else:
        if not args.annotations:
            raise UsageError("either --annotations or --selector-model is required")
        annotated = load_annotations(
            args.annotations, ds.passages, {q.id: q.question for q in ds.queries}
        )
        selector = train_selector(annotated, train_cfg)
        selector_source = f"annotations:{args.annotations} ({len(annotated)} bridges)"
    selector_path = out_dir / "selector.json"
    save_model(selector, selector_path)

    X, y = build_router_training(ds, store, selector, cfg.routing())
    result = cross_fit(X, y, k=cfg.cv_folds, cfg=train_cfg)
    router_path = out_dir / "router.json"
    save_model(result.full_model, router_path)

    diagnostics = {
        "n": int(X.shape[0]),
        "fold_sizes": list(result.fold_sizes),
        "label_positive_rate": float(y.mean()),
        "oof_mean_p_union": sum(result.out_of_fold_probs) / len(result.out_of_fold_probs),
        "selector_source": selector_source,
        "effective_config": cfg.to_dict(),
    }
    _write_json(out_dir / "train_diagnostics.json", diagnostics)
    print(f"selector: {selector_path}")
    print(f"router: {router_path}")
    print(f"fold sizes: {list(result.fold_sizes)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def _load_eval_inputs(args: argparse.Namespace, cfg: RunConfig):
    ds = _load_dataset(args.dataset)
    ds = _apply_hop1_filter(ds, args, cfg.k)
    store = load_vectors(args.store)
    selector = load_model(args.selector_model)
    router = load_model(args.router_model)
    return ds, store, selector, router


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = merge_config(args)
    ds, store, selector, router = _load_eval_inputs(args, cfg)
    report = run_main_eval(
        ds, store, selector, router, cfg.routing(), parallelism=cfg.parallelism
    )
    payload = report.to_json_dict()
    payload["effective_config"] = cfg.to_dict()
    payload["deployment_rule"] = cfg.banner()
    if not args.deterministic:
        payload["generated_at"] = datetime.now(timezone.utc).isoformat()

    out_dir = Path(args.out_dir)
    report_path = out_dir / f"eval_{ds.name}.json"
    _write_json(report_path, payload)
    trace_path = out_dir / f"eval_{ds.name}_trace.jsonl"
    with open(trace_path, "w", encoding="utf-8") as fh:
        for t in report.traces:
            fh.write(json.dumps(t.to_json_dict(), sort_keys=True) + "\n")
    header, rows = report.csv_rows()
    _write_csv(out_dir / f"eval_{ds.name}.csv", header, rows)

    print(f"report: {report_path}")
    print(
        f"q_only={report.q_only_r_at_k:.4f} routed={report.routed_r_at_k:.4f} "
        f"delta={report.delta:+.4f} union_rate={report.union_rate:.3f} "
        f"p_exact={report.mcnemar_p['p_exact']:.4g}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# experiment


EXPERIMENT_NAMES = (
    "knockout",
    "oracle",
    "ablations",
    "threshold-sweep",
    "mixture",
    "regime-agreement",
    "synthetic-calibration",
)


def cmd_experiment(args: argparse.Namespace) -> int:
    cfg = merge_config(args)
    name = args.name
    if name not in EXPERIMENT_NAMES:
        print(
            f"unknown experiment {name!r}; valid names: {', '.join(EXPERIMENT_NAMES)}",
            file=sys.stderr,
        )
        return EXIT_USAGE

    if name == "synthetic-calibration":
        fit = synthetic_calibration(
            n=args.n, pool_size=args.pool_size, sigma=args.sigma, seed=args.seed
        )
        result_json = {
            "r_squared": fit.r_squared,
            "inversion_accuracy": fit.inversion_accuracy,
            "n": fit.n,
            "degenerate": fit.degenerate,
        }
        csv_payload = (
            ["metric", "value"],
            [
                ["r_squared", fit.r_squared],
                ["inversion_accuracy", fit.inversion_accuracy],
                ["n", fit.n],
            ],
        )
        ds_name = "synthetic"
    else:
        if not args.dataset or not args.store or not args.selector_model:
            raise UsageError(f"experiment {name!r} needs --dataset, --store, --selector-model")
        ds = _load_dataset(args.dataset)
        ds = _apply_hop1_filter(ds, args, cfg.k)
        store = load_vectors(args.store)
        selector = load_model(args.selector_model)
        router = None
        if name in ("oracle", "ablations", "threshold-sweep"):
            if not args.router_model:
                raise UsageError(f"experiment {name!r} needs --router-model")
            router = load_model(args.router_model)

        if name == "knockout":
            report = run_knockout(ds, store, selector)
        elif name == "oracle":
            report = run_oracle_analysis(ds, store, selector, router, cfg.routing())
        elif name == "ablations":
            report = run_ablations(ds, store, selector, router, cfg.routing())
        elif name == "threshold-sweep":
            taus = DEFAULT_SWEEP_TAUS
            if args.taus:
                taus = tuple(float(t) for t in args.taus.split(","))
            report = threshold_sweep(ds, store, selector, router, taus, cfg.routing())
        elif name == "mixture":
            margins = compute_margins(ds, store, selector)
            usable = [m for m in margins if not m.degenerate]
            by_id = {q.id: q.qtype for q in ds.queries}
            report = mixture_decomposition(
                [(by_id[m.query_id], m.auc_q, m.auc_b) for m in usable]
            )
            result_json = report.to_json_dict()
            result_json["skipped_degenerate"] = len(margins) - len(usable)
        else:  # regime-agreement
            margins = compute_margins(ds, store, selector)
            report = regime_assignment_eval(ds, margins)
        if name != "mixture":
            result_json = report.to_json_dict()
        csv_payload = report.csv_rows()
        ds_name = ds.name

    result_json["experiment"] = name
    result_json["effective_config"] = cfg.to_dict()
    result_json["deployment_rule"] = cfg.banner()
    if not args.deterministic:
        result_json["generated_at"] = datetime.now(timezone.utc).isoformat()

    stem = f"{name.replace('-', '_')}_{ds_name}_{_config_hash(cfg.to_dict())}"
    out_dir = Path(args.out_dir)
    json_path = out_dir / f"{stem}.json"
    _write_json(json_path, result_json)
    _write_csv(out_dir / f"{stem}.csv", *csv_payload)
    print(f"report: {json_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def _flatten(row: dict) -> dict:
    flat = {}
    for key, value in row.items():
        if isinstance(value, dict):
            for sub, sub_value in value.items():
                flat[f"{key}.{sub}"] = sub_value
        else:
            flat[key] = value
    return flat


def cmd_report(args: argparse.Namespace) -> int:
    payload = json.loads(Path(args.report).read_text(encoding="utf-8"))
    rows = payload.get("rows") or payload.get("per_query")
    if not isinstance(rows, list) or not rows or not isinstance(rows[0], dict):
        raise UsageError(f"{args.report}: no tabular section (rows/per_query) found")
    flat_rows = [_flatten(r) for r in rows]
    header: list[str] = []
    for row in flat_rows:
        for key in row:
            if key not in header:
                header.append(key)
    table = [[row.get(col, "") for col in header] for row in flat_rows]
    if args.out:
        _write_csv(Path(args.out), header, table)
        print(f"csv: {args.out}")
    else:
        writer = csv.writer(sys.stdout)
        writer.writerow(header)
        writer.writerows(table)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser wiring


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (CLI flags override it)")
    p.add_argument("--alpha", type=float, help="fusion weight on the relation side")
    p.add_argument("--tau", type=float, help="routing threshold on p_union")
    p.add_argument("--alpha-mode", dest="alpha_mode", choices=("frozen", "p_weighted"))
    p.add_argument("--k", type=int, help="recall cutoff")
    p.add_argument("--label-mode", dest="label_mode", choices=("strict", "rank_gain"))
    p.add_argument("--parallelism", type=int)
    p.add_argument("--l2-penalty", dest="l2_penalty", type=float)
    p.add_argument("--cv-folds", dest="cv_folds", type=int)


def _add_provider_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--endpoint", help="embedding provider URL")
    p.add_argument("--model-name", dest="model_name")
    p.add_argument("--auth-env-var", dest="auth_env_var", help="env var holding the bearer token")
    p.add_argument("--query-prefix", dest="query_prefix")
    p.add_argument("--doc-prefix", dest="doc_prefix")
    p.add_argument("--timeout", type=float)
    p.add_argument("--max-retries", dest="max_retries", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--retry-base-delay", dest="retry_base_delay", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regime-router",
        description="Two-hop retrieval with regime routing and relation-sentence fusion.",
    )
    parser.add_argument("--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate dataset files and print summary counts")
    p.add_argument("--dataset", required=True, help="directory with queries.jsonl and passages.jsonl")
    p.add_argument("--hop1-ranks", dest="hop1_ranks", help="hop-1 gold ranks JSONL for filtering")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("embed", help="materialize every text the pipeline can request")
    p.add_argument("--dataset", required=True)
    p.add_argument("--store", required=True, help="vector store file (created or extended)")
    p.add_argument("--cache", help="JSON cache file for raw provider vectors")
    p.add_argument("--dry-run", dest="dry_run", action="store_true",
                   help="count missing embeddings without network access")
    _add_config_flags(p)
    _add_provider_flags(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", help="train selector and router, write artifacts")
    p.add_argument("--dataset", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--annotations", help="relation-sentence annotations JSONL")
    p.add_argument("--selector-model", dest="selector_model",
                   help="prebuilt selector artifact (skips selector training)")
    p.add_argument("--hop1-ranks", dest="hop1_ranks")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Q-only vs routed recall with significance")
    p.add_argument("--dataset", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--selector-model", dest="selector_model", required=True)
    p.add_argument("--router-model", dest="router_model", required=True)
    p.add_argument("--hop1-ranks", dest="hop1_ranks")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--deterministic", action="store_true",
                   help="omit the timestamp so reruns are byte-identical")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run one named analysis protocol")
    p.add_argument("name", help=f"one of: {', '.join(EXPERIMENT_NAMES)}")
    p.add_argument("--dataset")
    p.add_argument("--store")
    p.add_argument("--selector-model", dest="selector_model")
    p.add_argument("--router-model", dest="router_model")
    p.add_argument("--hop1-ranks", dest="hop1_ranks")
    p.add_argument("--out-dir", dest="out_dir", default=".")
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--taus", help="comma-separated thresholds for threshold-sweep")
    p.add_argument("--n", type=int, default=10_000, help="synthetic-calibration query count")
    p.add_argument("--pool-size", dest="pool_size", type=int, default=200)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    _add_config_flags(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="extract the tabular section of a JSON report as CSV")
    p.add_argument("--report", required=True, help="JSON report produced by eval or experiment")
    p.add_argument("--out", help="CSV output path (stdout when omitted)")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DatasetParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DanglingIdError, MissingRankError, AnnotationError) as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (
        VectorFormatError,
        DimensionMismatchError,
        NonFiniteVectorError,
        MissingEmbeddingError,
        TransportError,
        ProviderError,
        SingleClassError,
        NonConvergenceError,
        FoldError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        # Residual precondition failures (e.g. every margin degenerate).
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
