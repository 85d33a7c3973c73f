"""End-to-end orchestration: blocking, labeling, scoring, metrics, reports.

An experiment is: load or generate data, partition by linked pair, block
candidates per split, build the evolution graph from the training links,
train embeddings, optionally train weights, pick the decision threshold on
validation, and evaluate on test. Everything is driven by one config object
and is deterministic given its seeds.
"""

from __future__ import annotations

import csv
import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from . import ekg as ekg_mod
from . import weights as weights_mod
from .embed import EmbeddingStore, EmbedHyperparams, train_embeddings
from .errors import BlockingCapError, ConfigError, StageError
from .ingest import (
    LinkedPairSet,
    RecordSet,
    Schema,
    Split,
    SynthConfig,
    TextFormat,
    generate_synthetic,
    load_links,
    load_records,
    partition,
)
from .model_io import ModelBundle
from .weights import RLHyperparams, WeightVector, select_threshold, train_weights

log = logging.getLogger(__name__)

# Published benchmark F-scores quoted in every report footer for context.
REFERENCE_RESULTS = (
    "BALL WERL(EKG) F=0.93 | Febrl MERL(EKG) F=0.98 | Cora WERL(EKG) F=0.46"
)

DEFAULT_CROSS_PRODUCT_CAP = 2_000_000


@dataclass(frozen=True)
class CandidatePair:
    a_entity: int
    b_entity: int
    label: bool | None = None
    probability: float | None = None

    def __post_init__(self):
        if self.probability is not None and not 0.0 <= self.probability <= 1.0:
            raise ConfigError(f"probability {self.probability} outside [0, 1]")


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f_score: float
    tp: int
    fp: int
    tn: int
    fn: int

    @classmethod
    def from_counts(cls, tp: int, fp: int, tn: int, fn: int) -> "Metrics":
        total = tp + fp + tn + fn
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        accuracy = (tp + tn) / total if total else 0.0
        return cls(accuracy, precision, recall, f, tp, fp, tn, fn)

    def row(self) -> str:
        return (
            f"accuracy={self.accuracy:.4f} precision={self.precision:.4f} "
            f"recall={self.recall:.4f} f_score={self.f_score:.4f} "
            f"tp={self.tp} fp={self.fp} tn={self.tn} fn={self.fn}"
        )


def block_candidates(
    records_a: RecordSet,
    records_b: RecordSet,
    blocking_attribute: int | None = None,
    cross_product_cap: int = DEFAULT_CROSS_PRODUCT_CAP,
) -> list[CandidatePair]:
    """All A x B pairs whose blocking values are present and equal.

    Without a blocking attribute the full cross product is returned, guarded
    by the size cap. Records missing the blocking value join no pair.
    """
    if records_a.dictionary is not records_b.dictionary:
        raise ConfigError("record sets must share one value dictionary")
    if blocking_attribute is None:
        total = len(records_a) * len(records_b)
        if total > cross_product_cap:
            raise BlockingCapError(
                f"cross product of {total} pairs exceeds the cap of "
                f"{cross_product_cap}; configure a blocking attribute"
            )
        return [
            CandidatePair(a.entity_id, b.entity_id)
            for a in records_a
            for b in records_b
        ]

    groups: dict[int, list[int]] = {}
    for b in records_b:
        vid = b.values.get(blocking_attribute)
        if vid is not None:
            groups.setdefault(vid, []).append(b.entity_id)
    pairs: list[CandidatePair] = []
    for a in records_a:
        vid = a.values.get(blocking_attribute)
        if vid is None:
            continue
        for b_id in groups.get(vid, ()):
            pairs.append(CandidatePair(a.entity_id, b_id))
    return pairs


class LabeledCandidates(NamedTuple):
    pairs: list[CandidatePair]
    lost_links: int  # true links no candidate pair covers (blocking loss)


def label_pairs(pairs: Sequence[CandidatePair], truth: LinkedPairSet) -> LabeledCandidates:
    """Mark candidates against the truth set; count links blocking lost."""
    truth_set = set(truth.pairs)
    labeled = [
        replace(p, label=(p.a_entity, p.b_entity) in truth_set) for p in pairs
    ]
    covered = {(p.a_entity, p.b_entity) for p in pairs}
    lost = sum(1 for t in truth.pairs if t not in covered)
    return LabeledCandidates(labeled, lost)


def score_pairs(
    pairs: Sequence[CandidatePair],
    records_a: RecordSet,
    records_b: RecordSet,
    store: EmbeddingStore,
    w: WeightVector,
    p: int = 2,
    n_known_values: int | None = None,
) -> list[CandidatePair]:
    """Attach match probabilities; pairs with no shared attribute get 0.0."""
    if not pairs:
        return []
    features, defined = weights_mod.feature_matrix(
        pairs, records_a, records_b, store, p, n_known_values
    )
    scores = features @ w.weights
    probs = 1.0 / (1.0 + np.exp(-scores))
    probs = np.clip(probs, 1e-15, 1.0 - 1e-15)
    probs[~defined] = 0.0
    return [replace(pair, probability=float(pr)) for pair, pr in zip(pairs, probs)]


def evaluate(
    pairs: Sequence[CandidatePair], tau: float, extra_false_negatives: int = 0
) -> Metrics:
    """Confusion counts and derived metrics at threshold tau.

    ``extra_false_negatives`` charges true links that blocking removed from
    the candidate set (they are unrecoverable misses).
    """
    tp = fp = tn = fn = 0
    for pair in pairs:
        if pair.label is None or pair.probability is None:
            raise ConfigError(
                f"pair ({pair.a_entity},{pair.b_entity}) lacks label or probability"
            )
        match = pair.probability >= tau
        if match and pair.label:
            tp += 1
        elif match:
            fp += 1
        elif pair.label:
            fn += 1
        else:
            tn += 1
    return Metrics.from_counts(tp, fp, tn, fn + extra_false_negatives)


def exact_match_probabilities(
    pairs: Sequence[CandidatePair],
    records_a: RecordSet,
    records_b: RecordSet,
    attributes: Sequence[int],
) -> list[CandidatePair]:
    """Baseline scorer: probability 1.0 iff every listed attribute is present
    and equal on both sides, else 0.0."""
    out = []
    for pair in pairs:
        a = records_a.get(pair.a_entity)
        b = records_b.get(pair.b_entity)
        hit = all(
            a.values.get(attr) is not None and a.values.get(attr) == b.values.get(attr)
            for attr in attributes
        )
        out.append(replace(pair, probability=1.0 if hit else 0.0))
    return out


def all_negative_probabilities(pairs: Sequence[CandidatePair]) -> list[CandidatePair]:
    """Baseline that never links anything."""
    return [replace(p, probability=0.0) for p in pairs]


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment run needs; loadable from JSON."""

    source: Mapping  # {"kind": "synthetic", ...} or {"kind": "files", ...}
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    mode: str = "werl"  # "werl" (learned weights) or "merl" (all ones)
    kg_variant: str = "ekg"  # "ekg" or "er" (identity + reversed triples)
    embed: EmbedHyperparams = field(default_factory=EmbedHyperparams)
    rl: RLHyperparams = field(default_factory=RLHyperparams)
    seed: int = 0
    cross_product_cap: int = DEFAULT_CROSS_PRODUCT_CAP

    def __post_init__(self):
        if self.mode not in ("werl", "merl"):
            raise ConfigError(f"mode: unknown mode {self.mode!r}")
        if self.kg_variant not in ("ekg", "er"):
            raise ConfigError(f"kg_variant: unknown variant {self.kg_variant!r}")
        kind = self.source.get("kind")
        if kind not in ("synthetic", "files"):
            raise ConfigError(f"source.kind: expected 'synthetic' or 'files', got {kind!r}")

    @property
    def stage_seeds(self) -> dict[str, int]:
        return {
            "master": self.seed,
            "synthetic": self.seed,
            "partition": self.seed + 1,
            "embed": self.embed.seed if self.embed.seed else self.seed + 2,
            "weights": self.rl.seed if self.rl.seed else self.seed + 3,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ExperimentConfig":
        if "source" not in raw:
            raise ConfigError("missing key 'source'")
        embed_kwargs = dict(raw.get("embed", {}))
        rl_kwargs = dict(raw.get("rl", {}))
        try:
            embed_hp = EmbedHyperparams(**embed_kwargs)
        except TypeError as exc:
            raise ConfigError(f"embed: {exc}") from None
        try:
            rl_hp = RLHyperparams(**rl_kwargs)
        except TypeError as exc:
            raise ConfigError(f"rl: {exc}") from None
        ratios = tuple(raw.get("ratios", (0.6, 0.2, 0.2)))
        if len(ratios) != 3:
            raise ConfigError("ratios: expected three fractions")
        return cls(
            source=dict(raw["source"]),
            ratios=ratios,  # type: ignore[arg-type]
            mode=str(raw.get("mode", "werl")).lower(),
            kg_variant=str(raw.get("kg_variant", "ekg")).lower(),
            embed=embed_hp,
            rl=rl_hp,
            seed=int(raw.get("seed", 0)),
            cross_product_cap=int(raw.get("cross_product_cap", DEFAULT_CROSS_PRODUCT_CAP)),
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return {
            "source": dict(self.source),
            "ratios": list(self.ratios),
            "mode": self.mode,
            "kg_variant": self.kg_variant,
            "embed": {
                "dim": self.embed.dim,
                "margin": self.embed.margin,
                "learning_rate": self.embed.learning_rate,
                "epochs": self.embed.epochs,
                "batch_size": self.embed.batch_size,
                "negatives": self.embed.negatives,
                "norm": self.embed.norm,
                "seed": self.embed.seed,
            },
            "rl": {
                "margin": self.rl.margin,
                "learning_rate": self.rl.learning_rate,
                "epochs": self.rl.epochs,
                "loss_sign": self.rl.loss_sign,
                "negative_ratio": self.rl.negative_ratio,
                "nonnegative": self.rl.nonnegative,
                "seed": self.rl.seed,
            },
            "seed": self.seed,
            "cross_product_cap": self.cross_product_cap,
        }


class BlockingDiagnostics(NamedTuple):
    candidates: int
    true_pairs: int
    lost_links: int


@dataclass(frozen=True)
class ExperimentReport:
    config: dict
    seeds: dict
    graph_counts: dict
    blocking: dict[str, BlockingDiagnostics]
    embed_loss: list[float]
    weights_loss: list[float]
    weight_values: dict[str, float]
    tau: float
    validation_f: float
    metrics: Metrics
    mode: str
    kg_variant: str
    loss_sign: str


@dataclass
class ExperimentResult:
    """Report plus the trained artifacts needed for persistence and reuse."""

    report: ExperimentReport
    bundle: ModelBundle
    splits: tuple[Split, Split, Split]
    test_pairs: list[CandidatePair]


@contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def _resolve_data(config: ExperimentConfig) -> tuple[Schema, Split]:
    src = config.source
    if src["kind"] == "synthetic":
        synth = SynthConfig.from_dict(src.get("synth", {}))
        data = generate_synthetic(synth, config.stage_seeds["synthetic"])
        return data.records_a.schema, data
    try:
        attributes = tuple(src["attributes"])
    except KeyError:
        raise ConfigError("source.attributes: required for file sources") from None
    blocking_name = src.get("blocking_attribute")
    if blocking_name is None:
        blocking = None
    elif blocking_name in attributes:
        blocking = attributes.index(blocking_name)
    else:
        raise ConfigError(
            f"source.blocking_attribute: unknown attribute {blocking_name!r}"
        )
    schema = Schema(attributes, blocking)
    fmt_raw = src.get("format", {})
    fmt = TextFormat(
        delimiter=fmt_raw.get("delimiter", ";"),
        null_markers=tuple(fmt_raw.get("null_markers", ("", "illegible", "NA"))),
    )
    for key in ("a", "b", "truth"):
        if key not in src:
            raise ConfigError(f"source.{key}: required for file sources")
    records_a, dictionary = load_records(src["a"], schema, fmt)
    records_b, _ = load_records(src["b"], schema, fmt, dictionary=dictionary)
    links = load_links(src["truth"], fmt, provenance="loaded")
    return schema, Split(records_a, records_b, links)


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run the full two-step pipeline described in the module docstring."""
    seeds = config.stage_seeds

    with _stage("load"):
        schema, data = _resolve_data(config)
        log.info("loaded %d + %d records, %d links", len(data.records_a), len(data.records_b), len(data.links))

    with _stage("partition"):
        train, validation, test = partition(
            data.records_a, data.records_b, data.links, config.ratios, seeds["partition"]
        )

    with _stage("block"):
        blocking: dict[str, BlockingDiagnostics] = {}
        labeled: dict[str, list[CandidatePair]] = {}
        for name, split in (("train", train), ("validation", validation), ("test", test)):
            pairs = block_candidates(
                split.records_a,
                split.records_b,
                schema.blocking_attribute,
                config.cross_product_cap,
            )
            marked = label_pairs(pairs, split.links)
            labeled[name] = marked.pairs
            blocking[name] = BlockingDiagnostics(
                len(pairs), len(split.links), marked.lost_links
            )
            log.info(
                "%s: %d candidates, %d true, %d lost to blocking",
                name, len(pairs), len(split.links), marked.lost_links,
            )

    with _stage("graph"):
        relational: tuple = ()
        relation_names: tuple = ()
        relations_path = config.source.get("relations")
        if relations_path:
            fmt_raw = config.source.get("format", {})
            fmt = TextFormat(delimiter=fmt_raw.get("delimiter", ";"))
            universe = data.records_a.entity_ids() | data.records_b.entity_ids()
            all_triples, relation_names = ekg_mod.load_relations(
                relations_path, universe, fmt
            )
            in_split = train.records_a.entity_ids() | train.records_b.entity_ids()
            relational = tuple(
                t for t in all_triples if t.head in in_split and t.tail in in_split
            )
        degenerate = config.kg_variant == "er"
        graph = ekg_mod.build_ekg(
            train.records_a,
            train.records_b,
            train.links,
            include_identity_triples=degenerate,
            include_reverse_triples=degenerate,
            relational=relational,
            relation_names=relation_names,
        )

    with _stage("embed"):
        embed_hp = replace(config.embed, seed=seeds["embed"])
        store, embed_loss = train_embeddings(graph, embed_hp)

    with _stage("weights"):
        rl_hp = replace(config.rl, seed=seeds["weights"])
        if config.mode == "merl":
            w = WeightVector.ones(schema.n_attributes)
            weights_loss: list[float] = []
        else:
            t_plus = [p for p in labeled["train"] if p.label]
            t_minus = [p for p in labeled["train"] if not p.label]
            w, weights_loss = train_weights(
                t_plus, t_minus, train.records_a, train.records_b, store, rl_hp,
                p=embed_hp.norm,
            )

    with _stage("threshold"):
        scored_val = score_pairs(
            labeled["validation"], validation.records_a, validation.records_b,
            store, w, p=embed_hp.norm,
        )
        tau, validation_f = select_threshold(
            [p.probability for p in scored_val], [p.label for p in scored_val]
        )

    with _stage("evaluate"):
        scored_test = score_pairs(
            labeled["test"], test.records_a, test.records_b, store, w, p=embed_hp.norm
        )
        metrics = evaluate(scored_test, tau, extra_false_negatives=blocking["test"].lost_links)

    report = ExperimentReport(
        config=config.to_dict(),
        seeds=seeds,
        graph_counts=graph.counts(),
        blocking=blocking,
        embed_loss=embed_loss,
        weights_loss=weights_loss,
        weight_values=w.as_dict(schema.attributes),
        tau=tau,
        validation_f=validation_f,
        metrics=metrics,
        mode=config.mode,
        kg_variant=config.kg_variant,
        loss_sign=config.rl.loss_sign,
    )
    bundle = ModelBundle(
        schema=schema,
        dictionary=data.records_a.dictionary,
        store=store,
        embed_hp=embed_hp,
        weights=w,
        rl_margin=config.rl.margin,
        loss_sign=config.rl.loss_sign,
        tau=tau,
    )
    return ExperimentResult(report, bundle, (train, validation, test), scored_test)


def _write_loss_csv(path: Path, losses: Sequence[float]) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss"])
        for i, loss in enumerate(losses):
            writer.writerow([i, repr(float(loss))])


def write_report(report: ExperimentReport, out_dir: str | Path) -> None:
    """Write the fixed run-directory layout.

    config.json, loss_embed.csv, loss_weights.csv, metrics.csv, report.txt.
    All content is a pure function of the report, so reruns with identical
    seeds produce byte-identical files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    (out / "config.json").write_text(
        json.dumps(report.config, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _write_loss_csv(out / "loss_embed.csv", report.embed_loss)
    _write_loss_csv(out / "loss_weights.csv", report.weights_loss)

    m = report.metrics
    with open(out / "metrics.csv", "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["accuracy", "precision", "recall", "f_score", "tp", "fp", "tn", "fn", "tau"]
        )
        writer.writerow(
            [
                repr(m.accuracy), repr(m.precision), repr(m.recall), repr(m.f_score),
                m.tp, m.fp, m.tn, m.fn, repr(report.tau),
            ]
        )

    lines = ["record linkage run report", "=" * 26, ""]
    lines.append(f"mode: {report.mode}")
    lines.append(f"kg_variant: {report.kg_variant}")
    lines.append(f"loss_sign: {report.loss_sign}")
    lines.append(
        "seeds: " + " ".join(f"{k}={v}" for k, v in sorted(report.seeds.items()))
    )
    lines.append("")
    lines.append("config:")
    for cfg_line in json.dumps(report.config, indent=2, sort_keys=True).splitlines():
        lines.append("  " + cfg_line)
    lines.append("")
    lines.append(
        "graph: " + " ".join(f"{k}={v}" for k, v in sorted(report.graph_counts.items()))
    )
    lines.append("blocking:")
    for name in ("train", "validation", "test"):
        d = report.blocking[name]
        lines.append(
            f"  {name}: candidates={d.candidates} true_pairs={d.true_pairs} "
            f"lost_links={d.lost_links}"
        )
    final_embed = repr(report.embed_loss[-1]) if report.embed_loss else "n/a"
    lines.append(
        f"embedding training: epochs={len(report.embed_loss)} final_loss={final_embed}"
    )
    final_w = repr(report.weights_loss[-1]) if report.weights_loss else "n/a"
    lines.append(
        f"weight training: epochs={len(report.weights_loss)} final_loss={final_w}"
    )
    lines.append(
        "weights: "
        + " ".join(f"{k}={repr(v)}" for k, v in report.weight_values.items())
    )
    lines.append(f"threshold: tau={repr(report.tau)} validation_f={repr(report.validation_f)}")
    lines.append(f"test metrics: {m.row()}")
    lines.append("")
    lines.append(f"reference results (published benchmarks): {REFERENCE_RESULTS}")
    (out / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
