"""Experimental protocols over a materialized dataset + vector store.

Every experiment is a pure pipeline: immutable inputs in, a report
dataclass out. Reports expose ``to_json_dict`` for the JSON emitters and
``csv_rows`` (header, rows) for plot-ready CSV. Per-query work merges in
dataset order, so results are deterministic regardless of parallelism.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .corpus import Dataset, Query
from .linear_model import LinearModel, predict_proba
from .router_retrieval import (
    ACTION_UNION,
    RoutingConfig,
    clip_alpha,
    rank_pool,
    recall_at_k,
    route,
)
from .selector import oracle_label, select
from .stats import (
    CalibrationFit,
    MarginRecord,
    calibration_fit,
    cohen_kappa,
    mcnemar,
    per_query_auc,
    separation_margin,
)
from .embedding_store import VectorStore, passage_key, question_key, text_key
from .text_analysis import (
    REGIME_B_DOMINANT,
    REGIME_Q_DOMINANT,
    ROUTER_FEATURE_NAMES,
    Lexicons,
    assign_regime,
    p1_proxy,
    p2_proxy,
    router_features,
    split_sentences,
)

REGIME_TRANSITION = "transition"


# ---------------------------------------------------------------------------
# Shared per-query pipeline trace


@dataclass(frozen=True)
class QueryTrace:
    """Everything the eval, sweep, and trace file need about one query."""

    query_id: str
    qtype: str
    features: dict[str, float]
    p_union: float
    alpha_used: float
    action: str
    fallback: bool
    b_rel: str
    rank_q: int | None
    rank_union: int | None
    hit_q: bool
    hit_union: bool

    @property
    def hit_routed(self) -> bool:
        return self.hit_union if self.action == ACTION_UNION else self.hit_q

    def to_json_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "qtype": self.qtype,
            "features": self.features,
            "p_union": self.p_union,
            "action": self.action,
            "alpha_used": self.alpha_used,
            "fallback": self.fallback,
            "rank_gold_q": self.rank_q,
            "rank_gold_union": self.rank_union,
            "hit_q": self.hit_q,
            "hit_union": self.hit_union,
            "hit_routed": self.hit_routed,
        }


def _trace_one(
    q: Query,
    ds: Dataset,
    store: VectorStore,
    selector_model: LinearModel,
    router_model: LinearModel,
    cfg: RoutingConfig,
    lex: Lexicons | None,
) -> QueryTrace:
    bridge = ds.passage(q.bridge_id)
    decision = route(q, bridge, selector_model, router_model, cfg, lex)
    ranked_q = rank_pool(store, question_key(q.id), q.pool_ids, cfg.k)
    if decision.b_rel:
        ranked_u = rank_pool(
            store,
            question_key(q.id),
            q.pool_ids,
            cfg.k,
            brel_side_id=text_key(decision.b_rel),
            alpha=decision.alpha_used,
        )
    else:
        ranked_u = ranked_q
    feats = decision.features
    return QueryTrace(
        query_id=q.id,
        qtype=q.qtype,
        features=dict(zip(ROUTER_FEATURE_NAMES, (float(v) for v in feats.as_vector()))),
        p_union=decision.p_union,
        alpha_used=decision.alpha_used,
        action=decision.action,
        fallback=decision.fallback,
        b_rel=decision.b_rel,
        rank_q=ranked_q.rank_of(q.gold_id),
        rank_union=ranked_u.rank_of(q.gold_id),
        hit_q=recall_at_k(ranked_q, q.gold_id, cfg.k),
        hit_union=recall_at_k(ranked_u, q.gold_id, cfg.k),
    )


def trace_queries(
    ds: Dataset,
    store: VectorStore,
    selector_model: LinearModel,
    router_model: LinearModel,
    cfg: RoutingConfig | None = None,
    lex: Lexicons | None = None,
    parallelism: int = 1,
) -> list[QueryTrace]:
    cfg = cfg or RoutingConfig()
    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            return list(
                pool.map(
                    lambda q: _trace_one(q, ds, store, selector_model, router_model, cfg, lex),
                    ds.queries,
                )
            )
    return [_trace_one(q, ds, store, selector_model, router_model, cfg, lex) for q in ds.queries]


# ---------------------------------------------------------------------------
# Main evaluation


@dataclass(frozen=True)
class EvalReport:
    dataset: str
    n: int
    config: dict
    q_only_r_at_k: float
    routed_r_at_k: float
    delta: float
    wins: int
    losses: int
    mcnemar_p: dict[str, float]
    union_rate: float
    fallback_count: int
    calibration: dict | None
    traces: tuple[QueryTrace, ...]

    def to_json_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "n": self.n,
            "config": self.config,
            "q_only_r_at_k": self.q_only_r_at_k,
            "routed_r_at_k": self.routed_r_at_k,
            "delta": self.delta,
            "wins": self.wins,
            "losses": self.losses,
            "mcnemar": self.mcnemar_p,
            "union_rate": self.union_rate,
            "fallback_count": self.fallback_count,
            "calibration": self.calibration,
            "per_query": [t.to_json_dict() for t in self.traces],
        }

    def csv_rows(self) -> tuple[list[str], list[list]]:
        header = [
            "query_id", "qtype", "p_union", "action", "alpha_used",
            "rank_gold_q", "rank_gold_union", "hit_q", "hit_union", "hit_routed",
        ]
        rows = [
            [
                t.query_id, t.qtype, t.p_union, t.action, t.alpha_used,
                t.rank_q, t.rank_union, int(t.hit_q), int(t.hit_union), int(t.hit_routed),
            ]
            for t in self.traces
        ]
        return header, rows


def _config_banner(cfg: RoutingConfig) -> dict:
    return {
        "alpha": cfg.alpha,
        "tau": cfg.tau,
        "alpha_mode": cfg.alpha_mode,
        "k": cfg.k,
        "label_mode": cfg.label_mode,
    }


def run_main_eval(
    ds: Dataset,
    store: VectorStore,
    selector_model: LinearModel,
    router_model: LinearModel,
    cfg: RoutingConfig | None = None,
    lex: Lexicons | None = None,
    parallelism: int = 1,
) -> EvalReport:
    """Q-only versus routed recall@k with discordant-pair significance."""
    cfg = cfg or RoutingConfig()
    traces = trace_queries(ds, store, selector_model, router_model, cfg, lex, parallelism)
    n = len(traces)
    if n == 0:
        raise ValueError("dataset has no queries")
    hit_q = sum(t.hit_q for t in traces)
    hit_routed = sum(t.hit_routed for t in traces)
    wins = sum(1 for t in traces if t.hit_routed and not t.hit_q)
    losses = sum(1 for t in traces if t.hit_q and not t.hit_routed)

    calibration = None
    if n >= 3:
        margins = []
        aucs = []
        for q in ds.queries:
            gold, pool = _gold_and_pool_scores(store, question_key(q.id), q)
            if pool.size == 0:
                continue
            s, sigma = separation_margin(gold, pool)
            margins.append((s, sigma))
            aucs.append(per_query_auc(gold, pool))
        if len(aucs) >= 3:
            fit = calibration_fit(margins, aucs)
            calibration = {
                "r_squared": fit.r_squared,
                "inversion_accuracy": fit.inversion_accuracy,
                "n": fit.n,
                "degenerate": fit.degenerate,
            }

    return EvalReport(
        dataset=ds.name,
        n=n,
        config=_config_banner(cfg),
        q_only_r_at_k=hit_q / n,
        routed_r_at_k=hit_routed / n,
        delta=(hit_routed - hit_q) / n,
        wins=wins,
        losses=losses,
        mcnemar_p=mcnemar(wins, losses),
        union_rate=sum(1 for t in traces if t.action == ACTION_UNION) / n,
        fallback_count=sum(1 for t in traces if t.fallback),
        calibration=calibration,
        traces=tuple(traces),
    )


# ---------------------------------------------------------------------------
# Margin records and regime assignment


def _gold_and_pool_scores(store: VectorStore, query_side_id: str, q: Query) -> tuple[float, np.ndarray]:
    """Gold score and distractor-pool scores (gold excluded from the pool)."""
    gold = float(store.score(query_side_id, "query", [passage_key(q.gold_id)])[0])
    distractors = [passage_key(p) for p in q.pool_ids if p != q.gold_id]
    pool = store.score(query_side_id, "query", distractors) if distractors else np.array([])
    return gold, pool


def compute_margins(
    ds: Dataset,
    store: VectorStore,
    selector_model: LinearModel,
    lex: Lexicons | None = None,
) -> list[MarginRecord]:
    """Per-query margins/AUC under the question and the selected sentence."""
    records: list[MarginRecord] = []
    for q in ds.queries:
        gold_q, pool_q = _gold_and_pool_scores(store, question_key(q.id), q)
        if pool_q.size == 0:
            records.append(MarginRecord(q.id, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5, degenerate=True))
            continue
        s_q, sigma_q = separation_margin(gold_q, pool_q)
        auc_q = per_query_auc(gold_q, pool_q)

        bridge = ds.passage(q.bridge_id)
        selection = select(bridge, q.question, selector_model, lex=lex)
        if selection.abstained:
            records.append(
                MarginRecord(q.id, s_q, 0.0, sigma_q, 0.0, auc_q, 0.5, degenerate=True)
            )
            continue
        gold_b, pool_b = _gold_and_pool_scores(store, text_key(selection.chosen[0]), q)
        s_b, sigma_b = separation_margin(gold_b, pool_b)
        auc_b = per_query_auc(gold_b, pool_b)
        records.append(
            MarginRecord(
                q.id, s_q, s_b, sigma_q, sigma_b, auc_q, auc_b,
                degenerate=(sigma_q == 0.0 or sigma_b == 0.0),
            )
        )
    return records


@dataclass(frozen=True)
class RegimeAgreement:
    n_total: int
    n_used: int
    agreement: float
    kappa: float
    proxy_counts: dict[str, int]

    def to_json_dict(self) -> dict:
        return {
            "n_total": self.n_total,
            "n_used": self.n_used,
            "agreement": self.agreement,
            "kappa": self.kappa,
            "proxy_counts": self.proxy_counts,
        }

    def csv_rows(self) -> tuple[list[str], list[list]]:
        header = ["n_total", "n_used", "agreement", "kappa"]
        return header, [[self.n_total, self.n_used, self.agreement, self.kappa]]


def regime_assignment_eval(
    ds: Dataset,
    margins: list[MarginRecord],
    lex: Lexicons | None = None,
) -> RegimeAgreement:
    """Agreement between the P1/P2 proxy regime and the sign of delta-S.

    The proxy's uncovered regime maps to the Q side (its fallback action)
    for the binary comparison. Queries with degenerate margins or an
    exactly zero delta are excluded from the agreement count.
    """
    by_id = {m.query_id: m for m in margins}
    proxy_labels: list[str] = []
    observed_labels: list[str] = []
    proxy_counts: dict[str, int] = {}
    for q in ds.queries:
        bridge = ds.passage(q.bridge_id)
        assignment = assign_regime(
            p1_proxy(q.question, q.hop2_title),
            p2_proxy(bridge.body, q.hop2_title, lex),
        )
        proxy_counts[assignment.regime] = proxy_counts.get(assignment.regime, 0) + 1
        rec = by_id.get(q.id)
        if rec is None or rec.degenerate:
            continue
        delta_s = rec.s_b - rec.s_q
        if delta_s == 0.0:
            continue
        proxy_labels.append("B" if assignment.regime == REGIME_B_DOMINANT else "Q")
        observed_labels.append("B" if delta_s > 0 else "Q")
    n_used = len(proxy_labels)
    agreement = (
        sum(1 for a, b in zip(proxy_labels, observed_labels) if a == b) / n_used if n_used else 0.0
    )
    kappa = cohen_kappa(proxy_labels, observed_labels) if n_used else 0.0
    return RegimeAgreement(
        n_total=len(ds.queries),
        n_used=n_used,
        agreement=agreement,
        kappa=kappa,
        proxy_counts=proxy_counts,
    )


# ---------------------------------------------------------------------------
# Mixture decomposition


@dataclass(frozen=True)
class RegimeRow:
    qtype: str
    prevalence: float
    delta_q_minus_b: float
    verdict: str


@dataclass(frozen=True)
class RegimeTable:
    rows: tuple[RegimeRow, ...]
    aggregate_q_minus_b_weighted: float
    aggregate_q_minus_b_micro: float
    aggregate_b_minus_q_weighted: float
    aggregate_b_minus_q_micro: float

    def to_json_dict(self) -> dict:
        return {
            "rows": [
                {
                    "qtype": r.qtype,
                    "prevalence": r.prevalence,
                    "delta_q_minus_b": r.delta_q_minus_b,
                    "verdict": r.verdict,
                }
                for r in self.rows
            ],
            "aggregate": {
                "q_minus_b_weighted": self.aggregate_q_minus_b_weighted,
                "q_minus_b_micro": self.aggregate_q_minus_b_micro,
                "b_minus_q_weighted": self.aggregate_b_minus_q_weighted,
                "b_minus_q_micro": self.aggregate_b_minus_q_micro,
            },
        }

    def csv_rows(self) -> tuple[list[str], list[list]]:
        header = ["qtype", "prevalence", "delta_q_minus_b", "verdict"]
        return header, [[r.qtype, r.prevalence, r.delta_q_minus_b, r.verdict] for r in self.rows]


def mixture_decomposition(per_query: list[tuple[str, float, float]]) -> RegimeTable:
    """Type-stratified AUC deltas and both aggregate conventions.

    per_query rows are (qtype, auc_q, auc_b). The prevalence-weighted
    aggregate equals the micro mean exactly (same data, same weights);
    both are emitted, in both sign conventions.
    """
    if not per_query:
        raise ValueError("need at least one query")
    n = len(per_query)
    by_type: dict[str, list[float]] = {}
    for qtype, auc_q, auc_b in per_query:
        by_type.setdefault(qtype, []).append(auc_q - auc_b)
    rows = []
    for qtype, deltas in by_type.items():
        delta = float(np.mean(deltas))
        if delta > 0:
            verdict = REGIME_Q_DOMINANT
        elif delta < 0:
            verdict = REGIME_B_DOMINANT
        else:
            verdict = REGIME_TRANSITION
        rows.append(RegimeRow(qtype, len(deltas) / n, delta, verdict))
    rows.sort(key=lambda r: (-r.prevalence, r.qtype))
    weighted = float(sum(r.prevalence * r.delta_q_minus_b for r in rows))
    micro = float(np.mean([auc_q - auc_b for _, auc_q, auc_b in per_query]))
    return RegimeTable(
        rows=tuple(rows),
        aggregate_q_minus_b_weighted=weighted,
        aggregate_q_minus_b_micro=micro,
        aggregate_b_minus_q_weighted=-weighted,
        aggregate_b_minus_q_micro=-micro,
    )


# ---------------------------------------------------------------------------
# Knockout


@dataclass(frozen=True)
class KnockoutRecord:
    query_id: str
    auc_full: float
    auc_rel: float
    auc_minus: float


@dataclass(frozen=True)
class KnockoutReport:
    records: tuple[KnockoutRecord, ...]
    excluded: int
    mean_auc_full: float
    mean_auc_rel: float
    mean_auc_minus: float
    full_vs_minus: dict
    full_vs_rel: dict

    def to_json_dict(self) -> dict:
        return {
            "n_used": len(self.records),
            "excluded_single_sentence": self.excluded,
            "mean_auc": {
                "full": self.mean_auc_full,
                "rel": self.mean_auc_rel,
                "minus": self.mean_auc_minus,
            },
            "full_vs_minus": self.full_vs_minus,
            "full_vs_rel": self.full_vs_rel,
            "per_query": [
                {
                    "query_id": r.query_id,
                    "auc_full": r.auc_full,
                    "auc_rel": r.auc_rel,
                    "auc_minus": r.auc_minus,
                }
                for r in self.records
            ],
        }

    def csv_rows(self) -> tuple[list[str], list[list]]:
        header = ["query_id", "auc_full", "auc_rel", "auc_minus"]
        return header, [[r.query_id, r.auc_full, r.auc_rel, r.auc_minus] for r in self.records]


def knockout_variants(body: str, lex: Lexicons | None = None, selection_index: int | None = None,
                      ) -> tuple[str, str, str] | None:
    """(full, rel, minus) texts for a bridge body and a sentence index.

    minus is the body with the sentence's char span removed and
    whitespace collapsed. Returns None when the body has fewer than two
    sentences (no meaningful minus variant).
    """
    sents = split_sentences(body, lex)
    if len(sents) < 2 or selection_index is None or not (0 <= selection_index < len(sents)):
        return None
    sent = sents[selection_index]
    minus = " ".join((body[: sent.start] + body[sent.end :]).split())
    if not minus:
        return None
    return body, sent.text, minus


def _variant_auc(store: VectorStore, variant_text: str, q: Query) -> float:
    gold, pool = _gold_and_pool_scores(store, text_key(variant_text), q)
    if pool.size == 0:
        raise ValueError(f"query {q.id!r} has no distractor pool")
    return per_query_auc(gold, pool)


def _paired_sign_summary(deltas: list[float]) -> dict:
    wins = sum(1 for d in deltas if d > 0)
    losses = sum(1 for d in deltas if d < 0)
    p = mcnemar(wins, losses)
    return {
        "mean_delta": float(np.mean(deltas)) if deltas else 0.0,
        "wins": wins,
        "losses": losses,
        "p_exact": p["p_exact"],
        "p_chi2": p["p_chi2"],
    }


def run_knockout(
    ds: Dataset,
    store: VectorStore,
    selector_model: LinearModel,
    lex: Lexicons | None = None,
) -> KnockoutReport:
    """AUC of gold-vs-pool under three bridge variants embedded as queries."""
    records: list[KnockoutRecord] = []
    excluded = 0
    for q in ds.queries:
        bridge = ds.passage(q.bridge_id)
        selection = select(bridge, q.question, selector_model, lex=lex)
        if selection.abstained:
            excluded += 1
            continue
        variants = knockout_variants(bridge.body, lex, selection.chosen[1])
        if variants is None:
            excluded += 1
            continue
        full_text, rel_text, minus_text = variants
        records.append(
            KnockoutRecord(
                query_id=q.id,
                auc_full=_variant_auc(store, full_text, q),
                auc_rel=_variant_auc(store, rel_text, q),
                auc_minus=_variant_auc(store, minus_text, q),
            )
        )
    if not records:
        raise ValueError("no usable queries (all bridges single-sentence?)")
    return KnockoutReport(
        records=tuple(records),
        excluded=excluded,
        mean_auc_full=float(np.mean([r.auc_full for r in records])),
        mean_auc_rel=float(np.mean([r.auc_rel for r in records])),
        mean_auc_minus=float(np.mean([r.auc_minus for r in records])),
        full_vs_minus=_paired_sign_summary([r.auc_full - r.auc_minus for r in records]),
        full_vs_rel=_paired_sign_summary([r.auc_full - r.auc_rel for r in records]),
    )


# ---------------------------------------------------------------------------
# Oracle decomposition, ablations, threshold sweep


@dataclass(frozen=True)
class OracleReport:
    baseline_q: float
    learned: float
    oracle_selector: float
    oracle_router: float
    routing_gap: float
    selector_gap: float

    def to_json_dict(self) -> dict:
        return {
            "r_at_k": {
                "baseline_q": self.baseline_q,
                "learned": self.learned,
                "oracle_selector": self.oracle_selector,
                "oracle_router": self.oracle_router,
            },
            "routing_gap": self.routing_gap,
            "selector_gap": self.selector_gap,
        }

    def csv_rows(self) -> tuple[list[str], list[list]]:
        header = ["condition", "r_at_k"]
        return header, [
            ["baseline_q", self.baseline_q],
            ["learned", self.learned],
            ["oracle_selector", self.oracle_selector],
            ["oracle_router", self.oracle_router],
        ]


def _union_hit(store: VectorStore, q: Query, brel_text: str, alpha: float, k: int) -> bool:
    ranked = rank_pool(
        store, question_key(q.id), q.pool_ids, k,
        brel_side_id=text_key(brel_text), alpha=alpha,
    )
    return recall_at_k(ranked, q.gold_id, k)


def run_oracle_analysis(
    ds: Dataset,
    store: VectorStore,
    selector_model: LinearModel,
    router_model: LinearModel,
    cfg: RoutingConfig | None = None,
    lex: Lexicons | None = None,
) -> OracleReport:
    """Gap decomposition against oracle selector and oracle router."""
    cfg = cfg or RoutingConfig()
    traces = trace_queries(ds, store, selector_model, router_model, cfg, lex)
    n = len(traces)
    baseline = sum(t.hit_q for t in traces) / n
    learned = sum(t.hit_routed for t in traces) / n
    oracle_router = sum(max(t.hit_q, t.hit_union) for t in traces) / n

    oracle_selector_hits = 0
    for q, t in zip(ds.queries, traces):
        bridge = ds.passage(q.bridge_id)
        idx = oracle_label(bridge, q.hop2_title, lex)
        if idx is None:
            oracle_selector_hits += t.hit_routed
            continue
        sents = split_sentences(bridge.body, lex)
        brel = sents[idx].text
        feats = router_features(q.question, brel, bridge.body, lex)
        p = predict_proba(router_model, feats.as_vector())
        if p >= cfg.tau:
            alpha = clip_alpha(p) if cfg.alpha_mode == "p_weighted" else cfg.alpha
            oracle_selector_hits += _union_hit(store, q, brel, alpha, cfg.k)
        else:
            oracle_selector_hits += t.hit_q
    oracle_selector = oracle_selector_hits / n

    return OracleReport(
        baseline_q=baseline,
        learned=learned,
        oracle_selector=oracle_selector,
        oracle_router=oracle_router,
        routing_gap=oracle_router - learned,
        selector_gap=oracle_selector - learned,
    )


@dataclass(frozen=True)
class AblationRow:
    condition: str
    r_at_5: float
    delta_pp: float


@dataclass(frozen=True)
class AblationReport:
    rows: tuple[AblationRow, ...]

    def to_json_dict(self) -> dict:
        return {
            "rows": [
                {"condition": r.condition, "r_at_5": r.r_at_5, "delta_pp": r.delta_pp}
                for r in self.rows
            ]
        }

    def csv_rows(self) -> tuple[list[str], list[list]]:
        header = ["condition", "r_at_5", "delta_pp"]
        return header, [[r.condition, r.r_at_5, r.delta_pp] for r in self.rows]


def run_ablations(
    ds: Dataset,
    store: VectorStore,
    selector_model: LinearModel,
    router_model: LinearModel,
    cfg: RoutingConfig | None = None,
    lex: Lexicons | None = None,
) -> AblationReport:
    """The six-condition table: baselines, unrouted fusions, routed, heuristic."""
    cfg = cfg or RoutingConfig()
    n = len(ds.queries)
    if n == 0:
        raise ValueError("dataset has no queries")

    hits_q = 0
    hits_full_unrouted = 0
    hits_brel_unrouted = 0
    hits_routed_half = 0
    hits_routed_main = 0
    hits_ne = 0

    for q in ds.queries:
        bridge = ds.passage(q.bridge_id)
        ranked_q = rank_pool(store, question_key(q.id), q.pool_ids, cfg.k)
        hit_q = recall_at_k(ranked_q, q.gold_id, cfg.k)
        hits_q += hit_q

        hits_full_unrouted += _union_hit(store, q, bridge.body, 0.5, cfg.k)

        selection = select(bridge, q.question, selector_model, lex=lex)
        if selection.abstained:
            hits_brel_unrouted += hit_q
            hits_routed_half += hit_q
            hits_routed_main += hit_q
            hits_ne += hit_q
            continue
        brel = selection.chosen[0]
        hits_brel_unrouted += _union_hit(store, q, brel, 0.5, cfg.k)

        feats = router_features(q.question, brel, bridge.body, lex)
        p = predict_proba(router_model, feats.as_vector())
        union = p >= cfg.tau
        hits_routed_half += _union_hit(store, q, brel, 0.5, cfg.k) if union else hit_q
        hits_routed_main += _union_hit(store, q, brel, cfg.alpha, cfg.k) if union else hit_q

        ne_union = feats.b_new_entity_count >= 1 and feats.q_comparison_word == 0
        hits_ne += _union_hit(store, q, brel, cfg.alpha, cfg.k) if ne_union else hit_q

    base = hits_q / n
    rows = [
        AblationRow("q_only", base, 0.0),
        AblationRow("full_bridge_unrouted_alpha_0.5", hits_full_unrouted / n, (hits_full_unrouted / n - base) * 100),
        AblationRow("brel_unrouted_alpha_0.5", hits_brel_unrouted / n, (hits_brel_unrouted / n - base) * 100),
        AblationRow("routed_alpha_0.5", hits_routed_half / n, (hits_routed_half / n - base) * 100),
        AblationRow(f"routed_alpha_{cfg.alpha}", hits_routed_main / n, (hits_routed_main / n - base) * 100),
        AblationRow("ne_heuristic", hits_ne / n, (hits_ne / n - base) * 100),
    ]
    return AblationReport(rows=tuple(rows))


@dataclass(frozen=True)
class SweepRow:
    tau: float
    r_at_5: float
    union_rate: float


@dataclass(frozen=True)
class SweepReport:
    rows: tuple[SweepRow, ...]

    def to_json_dict(self) -> dict:
        return {
            "rows": [
                {"tau": r.tau, "r_at_5": r.r_at_5, "union_rate": r.union_rate} for r in self.rows
            ]
        }

    def csv_rows(self) -> tuple[list[str], list[list]]:
        header = ["tau", "r_at_5", "union_rate"]
        return header, [[r.tau, r.r_at_5, r.union_rate] for r in self.rows]


DEFAULT_SWEEP_TAUS = (0.5, 0.55, 0.6, 0.65, 0.7, 0.75)


def threshold_sweep(
    ds: Dataset,
    store: VectorStore,
    selector_model: LinearModel,
    router_model: LinearModel,
    taus=DEFAULT_SWEEP_TAUS,
    cfg: RoutingConfig | None = None,
    lex: Lexicons | None = None,
) -> SweepReport:
    """Recall@k and Union rate as the routing threshold varies.

    p_union and both rankings are computed once per query; each tau only
    re-applies the decision rule, so tau=0 reproduces all-Union and any
    tau > 1 reproduces all-Q bitwise.
    """
    cfg = cfg or RoutingConfig()
    traces = trace_queries(ds, store, selector_model, router_model, cfg, lex)
    n = len(traces)
    rows = []
    for tau in taus:
        hits = 0
        unions = 0
        for t in traces:
            union = (not t.fallback) and t.p_union >= tau
            unions += union
            hits += t.hit_union if union else t.hit_q
        rows.append(SweepRow(tau=float(tau), r_at_5=hits / n, union_rate=unions / n))
    return SweepReport(rows=tuple(rows))


# ---------------------------------------------------------------------------
# Synthetic calibration


def synthetic_calibration(
    n: int = 10_000,
    pool_size: int = 200,
    sigma: float = 0.1,
    margin_spread: float | None = None,
    seed: int = 0,
) -> CalibrationFit:
    """Gaussian-pool simulation validating the margin-to-AUC law.

    Per query a gold score is drawn with spread ``margin_spread`` and a
    pool of Normal(0, sigma) scores; predicted AUC phi(S/sigma) is fit
    against the empirical AUC. The default spread of 4 * sigma keeps
    most query pairs separated by more than the 1/pool_size AUC noise
    floor, so pairwise-order agreement reflects the law, not tie noise.
    """
    if n < 3 or pool_size < 2:
        raise ValueError("need n >= 3 and pool_size >= 2")
    rng = np.random.default_rng(seed)
    spread = 4.0 * sigma if margin_spread is None else margin_spread
    golds = rng.normal(0.0, spread, size=n)
    pools = rng.normal(0.0, sigma, size=(n, pool_size))

    mu = pools.mean(axis=1)
    sd = pools.std(axis=1)
    s = golds - mu
    below = (pools < golds[:, None]).sum(axis=1)
    tied = (pools == golds[:, None]).sum(axis=1)
    aucs = (below + 0.5 * tied) / pool_size
    return calibration_fit(list(zip(s, sd)), aucs)
