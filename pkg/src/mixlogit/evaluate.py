"""Preference margins and subgroup-disaggregated reports.

The margin of a pair is the policy's log-probability gap between the
human-preferred and dispreferred response, in nats, computed from the
policy alone. Reports aggregate margins three ways: micro (every
comparison weighted equally), per (dimension, category) cell, and macro
per dimension (every category weighted equally). The micro/macro gap is
what quantifies subgroup masking.

Aggregation is order-independent down to the bit: margins are keyed by a
content hash, sorted, and summed with math.fsum.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import model as model_mod
from .datagen import PreferencePair

REPORT_FORMAT = "mixlogit-report-v1"
CSV_COLUMNS = ["dimension", "category", "count", "mean_margin", "margin_gain"]
MICRO_DIMENSION = "(all)"
MICRO_CATEGORY = "(micro)"
MACRO_CATEGORY = "(macro)"


@dataclass
class MarginReport:
    per_pair_margins: list[tuple[str, float]]  # (pair id, margin), sorted by id
    per_subgroup: dict[tuple[str, str], tuple[int, float]]  # (dim, cat) -> (count, mean)
    micro_avg: float
    macro_avg: dict[str, float]  # per dimension
    margin_gain: dict | None = None  # vs. a baseline report, same keys

    def to_dict(self) -> dict:
        doc = {
            "format": REPORT_FORMAT,
            "micro_avg": self.micro_avg,
            "macro_avg": dict(sorted(self.macro_avg.items())),
            "per_subgroup": [
                {"dimension": dim, "category": cat, "count": cnt, "mean_margin": mean}
                for (dim, cat), (cnt, mean) in sorted(self.per_subgroup.items())
            ],
            "per_pair_margins": [
                {"id": pid, "margin": m} for pid, m in self.per_pair_margins
            ],
        }
        if self.margin_gain is not None:
            doc["margin_gain"] = {
                "micro": self.margin_gain["micro"],
                "macro": dict(sorted(self.margin_gain["macro"].items())),
                "per_subgroup": [
                    {"dimension": dim, "category": cat, "gain": gain}
                    for (dim, cat), gain in sorted(
                        self.margin_gain["per_subgroup"].items()
                    )
                ],
            }
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "MarginReport":
        if doc.get("format") != REPORT_FORMAT:
            raise ValueError(f"unexpected report format {doc.get('format')!r}")
        gain = None
        if "margin_gain" in doc:
            gain = {
                "micro": doc["margin_gain"]["micro"],
                "macro": dict(doc["margin_gain"]["macro"]),
                "per_subgroup": {
                    (e["dimension"], e["category"]): e["gain"]
                    for e in doc["margin_gain"]["per_subgroup"]
                },
            }
        return cls(
            per_pair_margins=[(e["id"], e["margin"])
                              for e in doc["per_pair_margins"]],
            per_subgroup={(e["dimension"], e["category"]): (e["count"], e["mean_margin"])
                          for e in doc["per_subgroup"]},
            micro_avg=doc["micro_avg"],
            macro_avg=dict(doc["macro_avg"]),
            margin_gain=gain,
        )


def pair_id(pair: PreferencePair) -> str:
    payload = json.dumps(
        [pair.prompt, pair.chosen, pair.rejected, pair.annotator_id],
        separators=(",", ":"),
    )
    return hashlib.sha1(payload.encode("utf-8")).hexdigest()[:16]


def preference_margin(policy: model_mod.Model, pair: PreferencePair,
                      length_normalize: bool = False,
                      reference: model_mod.Model | None = None) -> float:
    """log pi(y_w|x) - log pi(y_l|x) in nats.

    ``length_normalize`` divides each side by its response length.
    Passing a reference switches to the implicit-reward margin
    (policy/reference log ratios) instead of the policy-only default.
    """
    lw = model_mod.sequence_logprob_value(policy, pair.prompt, pair.chosen)
    ll = model_mod.sequence_logprob_value(policy, pair.prompt, pair.rejected)
    if reference is not None:
        lw -= model_mod.sequence_logprob_value(reference, pair.prompt, pair.chosen)
        ll -= model_mod.sequence_logprob_value(reference, pair.prompt, pair.rejected)
    if length_normalize:
        lw /= len(pair.chosen)
        ll /= len(pair.rejected)
    return lw - ll


def build_report(policy: model_mod.Model, pairs,
                 baseline: MarginReport | None = None,
                 length_normalize: bool = False,
                 reference: model_mod.Model | None = None) -> MarginReport:
    pairs = list(pairs)
    if not pairs:
        raise ValueError("build_report requires at least one pair")
    margins = sorted(
        (pair_id(p),
         preference_margin(policy, p, length_normalize, reference),
         p.subgroups)
        for p in pairs
    )
    micro = math.fsum(m for _, m, _ in margins) / len(margins)

    cells: dict[tuple[str, str], list[float]] = {}
    for _, m, subgroups in margins:
        for dim, cat in subgroups.items():
            cells.setdefault((dim, cat), []).append(m)
    per_subgroup = {
        key: (len(vals), math.fsum(vals) / len(vals))
        for key, vals in cells.items()
    }
    dims = sorted({dim for dim, _ in per_subgroup})
    macro = {
        dim: math.fsum(mean for (d, _), (_, mean) in sorted(per_subgroup.items())
                       if d == dim)
        / sum(1 for (d, _) in per_subgroup if d == dim)
        for dim in dims
    }

    gain = None
    if baseline is not None:
        gain = {
            "micro": micro - baseline.micro_avg,
            "macro": {dim: macro[dim] - baseline.macro_avg[dim]
                      for dim in macro if dim in baseline.macro_avg},
            "per_subgroup": {
                key: per_subgroup[key][1] - baseline.per_subgroup[key][1]
                for key in per_subgroup if key in baseline.per_subgroup
            },
        }
    return MarginReport(
        per_pair_margins=[(pid, m) for pid, m, _ in margins],
        per_subgroup=per_subgroup, micro_avg=micro, macro_avg=macro,
        margin_gain=gain,
    )


def write_report_json(report: MarginReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n",
                          encoding="utf-8")


def read_report_json(path) -> MarginReport:
    return MarginReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def write_report_csv(report: MarginReport, path) -> None:
    """Flat export: one row per (dimension, category) cell, then one macro
    row per dimension and a final micro row."""
    gain = report.margin_gain or {}
    sub_gain = gain.get("per_subgroup", {})
    macro_gain = gain.get("macro", {})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for (dim, cat), (count, mean) in sorted(report.per_subgroup.items()):
            g = sub_gain.get((dim, cat))
            writer.writerow([dim, cat, count, repr(mean),
                             "" if g is None else repr(g)])
        for dim, mean in sorted(report.macro_avg.items()):
            count = sum(c for (d, _), (c, _) in report.per_subgroup.items()
                        if d == dim)
            g = macro_gain.get(dim)
            writer.writerow([dim, MACRO_CATEGORY, count, repr(mean),
                             "" if g is None else repr(g)])
        g = gain.get("micro")
        writer.writerow([MICRO_DIMENSION, MICRO_CATEGORY,
                         len(report.per_pair_margins), repr(report.micro_avg),
                         "" if g is None else repr(g)])


def runtime_compare(workload, variants: dict, repetitions: int = 5) -> dict:
    """Wall-clock ratios of loss-variant workloads, normalized to 'dpo'.

    ``workload`` is a callable taking one of ``variants``' values and
    running an identical job for it. Returns, per variant, the mean and
    standard deviation of its runtime ratio over the repetitions.
    Report-only: nothing here is asserted against a threshold.
    """
    if "dpo" not in variants:
        raise ValueError("runtime_compare needs a 'dpo' variant to normalize to")
    if repetitions < 2:
        raise ValueError("need at least 2 repetitions for a spread estimate")
    times: dict[str, list[float]] = {name: [] for name in variants}
    for _ in range(repetitions):
        for name, spec in variants.items():
            t0 = time.perf_counter()
            workload(spec)
            times[name].append(time.perf_counter() - t0)
    base = times["dpo"]
    out = {}
    for name, ts in times.items():
        ratios = [t / b for t, b in zip(ts, base)]
        mean = math.fsum(ratios) / len(ratios)
        var = math.fsum((r - mean) ** 2 for r in ratios) / (len(ratios) - 1)
        out[name] = {"ratio_mean": mean, "ratio_std": math.sqrt(var),
                     "seconds_mean": math.fsum(ts) / len(ts)}
    return out
