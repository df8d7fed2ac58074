"""Critical-region surprisal sums, filler effects and pattern verdicts.

The filler effect for a condition pair is region surprisal of the +filler
sentence minus that of its -filler counterpart, summed over the critical
region. A construction's effect table has four (gap x island) cells; the
qualitative verdicts read that table the way the figures do: sign pattern
for simple sentences, zero-overlap or magnitude-reduction for islands.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .neural_lm.score import SurprisalProfile


class ScoringError(ValueError):
    pass


@dataclass(frozen=True)
class RegionScore:
    item_id: int
    construction: str
    condition: tuple[bool, bool, bool]  # (filler, gap, island)
    region_surprisal: float  # bits

    def __post_init__(self) -> None:
        if not np.isfinite(self.region_surprisal):
            raise ScoringError("region surprisal must be finite")

    @property
    def filler(self) -> bool:
        return self.condition[0]

    @property
    def gap(self) -> bool:
        return self.condition[1]

    @property
    def island(self) -> bool:
        return self.condition[2]


@dataclass(frozen=True)
class EffectRecord:
    item_id: int
    construction: str
    gap: bool
    island: bool
    filler_effect: float  # bits


@dataclass(frozen=True)
class EffectSummary:
    construction: str
    gap: bool
    island: bool
    mean: float
    ci_half_width: float  # 95% t-interval over items
    n: int

    @property
    def ci(self) -> tuple[float, float]:
        return (self.mean - self.ci_half_width, self.mean + self.ci_half_width)

    def overlaps_zero(self) -> bool:
        lo, hi = self.ci
        return lo <= 0.0 <= hi


def region_surprisal(
    profile: SurprisalProfile,
    region: tuple[int, int],
    item_id: int | None = None,
    construction: str = "",
) -> RegionScore:
    """Sum of per-token surprisals over the half-open token range."""
    start, end = region
    if not (0 <= start < end <= len(profile.tokens)):
        raise ScoringError(
            f"region {region} out of bounds for {len(profile.tokens)} tokens"
        )
    total = float(profile.surprisal_bits[start:end].sum())
    resolved_id = item_id if item_id is not None else (profile.item_id or -1)
    condition = profile.condition if profile.condition is not None else (False, False, False)
    return RegionScore(resolved_id, construction, condition, total)


def filler_effect(plus: RegionScore, minus: RegionScore) -> EffectRecord:
    """plus.region_surprisal - minus.region_surprisal for a matched pair."""
    if not plus.filler or minus.filler:
        raise ScoringError("expected a (+filler, -filler) pair in that order")
    if (plus.item_id, plus.construction, plus.gap, plus.island) != (
        minus.item_id,
        minus.construction,
        minus.gap,
        minus.island,
    ):
        raise ScoringError(
            f"mismatched pair: {plus.item_id}/{plus.condition} vs "
            f"{minus.item_id}/{minus.condition}"
        )
    return EffectRecord(
        plus.item_id,
        plus.construction,
        plus.gap,
        plus.island,
        plus.region_surprisal - minus.region_surprisal,
    )


def pair_effects(scores: Iterable[RegionScore]) -> list[EffectRecord]:
    """Group region scores into +/-filler pairs and compute all effects."""
    by_key: dict[tuple, dict[bool, RegionScore]] = {}
    for score in scores:
        key = (score.construction, score.item_id, score.gap, score.island)
        slot = by_key.setdefault(key, {})
        if score.filler in slot:
            raise ScoringError(f"duplicate score for {key} filler={score.filler}")
        slot[score.filler] = score
    records = []
    for key in sorted(by_key, key=lambda k: (k[0], k[1], not k[2], not k[3])):
        pair = by_key[key]
        if set(pair) != {True, False}:
            raise ScoringError(f"incomplete +/-filler pair for {key}")
        records.append(filler_effect(pair[True], pair[False]))
    return records


def effect_summary(records: Sequence[EffectRecord]) -> list[EffectSummary]:
    """Mean filler effect and 95% t-CI per (construction, gap, island) group."""
    groups: dict[tuple[str, bool, bool], list[float]] = {}
    for rec in records:
        groups.setdefault((rec.construction, rec.gap, rec.island), []).append(
            rec.filler_effect
        )
    out = []
    for (construction, gap, island) in sorted(
        groups, key=lambda k: (k[0], not k[1], not k[2])
    ):
        values = np.asarray(groups[(construction, gap, island)], dtype=np.float64)
        n = len(values)
        if n < 2:
            raise ScoringError(
                f"group {construction} gap={gap} island={island} has n={n}; "
                "need at least 2 items for a confidence interval"
            )
        mean = float(values.mean())
        sd = float(values.std(ddof=1))
        half = float(stats.t.ppf(0.975, n - 1) * sd / np.sqrt(n))
        out.append(EffectSummary(construction, gap, island, mean, half, n))
    return out


@dataclass(frozen=True)
class PatternVerdict:
    """Qualitative reading of one construction's filler-effect table.

    simple_learned: negative effect with a gap, positive without, in
    non-island sentences. island_stringent: the island-cell CI overlaps
    zero (per gap value). island_relative: the island-cell magnitude is
    smaller than the matching simple-cell magnitude.
    """

    construction: str
    simple_learned: bool
    island_stringent: dict[bool, bool]  # keyed by gap value
    island_relative: dict[bool, bool]

    @property
    def island_stringent_pass(self) -> bool:
        return all(self.island_stringent.values())

    @property
    def island_relative_pass(self) -> bool:
        return all(self.island_relative.values())


SCORES_HEADER = ["construction", "item_id", "filler", "gap", "island", "region_surprisal_bits"]
EFFECTS_HEADER = ["construction", "item_id", "gap", "island", "filler_effect_bits"]


def write_scores_csv(scores: Sequence[RegionScore], path: Path | str) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SCORES_HEADER)
        for s in scores:
            writer.writerow(
                [s.construction, s.item_id, int(s.filler), int(s.gap), int(s.island),
                 repr(s.region_surprisal)]
            )


def read_scores_csv(path: Path | str) -> list[RegionScore]:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != SCORES_HEADER:
            raise ScoringError(f"{path}: unexpected columns {header}")
        return [
            RegionScore(
                int(row[1]), row[0],
                (bool(int(row[2])), bool(int(row[3])), bool(int(row[4]))),
                float(row[5]),
            )
            for row in reader
        ]


def write_effects_csv(records: Sequence[EffectRecord], path: Path | str) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EFFECTS_HEADER)
        for r in records:
            writer.writerow(
                [r.construction, r.item_id, int(r.gap), int(r.island), repr(r.filler_effect)]
            )


def read_effects_csv(path: Path | str) -> list[EffectRecord]:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != EFFECTS_HEADER:
            raise ScoringError(f"{path}: unexpected columns {header}")
        return [
            EffectRecord(int(row[1]), row[0], bool(int(row[2])), bool(int(row[3])), float(row[4]))
            for row in reader
        ]


def classify_pattern(summaries: Sequence[EffectSummary]) -> list[PatternVerdict]:
    """Apply the expected-effect table to per-cell summaries, per construction."""
    by_construction: dict[str, dict[tuple[bool, bool], EffectSummary]] = {}
    for summary in summaries:
        cells = by_construction.setdefault(summary.construction, {})
        cells[(summary.gap, summary.island)] = summary
    verdicts = []
    for construction in sorted(by_construction):
        cells = by_construction[construction]
        required = {(g, i) for g in (True, False) for i in (True, False)}
        missing = required - set(cells)
        if missing:
            raise ScoringError(
                f"{construction}: missing effect cells {sorted(missing)}"
            )
        simple_learned = (
            cells[(True, False)].mean < 0.0 and cells[(False, False)].mean > 0.0
        )
        stringent = {gap: cells[(gap, True)].overlaps_zero() for gap in (True, False)}
        relative = {
            gap: abs(cells[(gap, True)].mean) < abs(cells[(gap, False)].mean)
            for gap in (True, False)
        }
        verdicts.append(
            PatternVerdict(construction, simple_learned, stringent, relative)
        )
    return verdicts
