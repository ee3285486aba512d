"""Per-episode metric records and their CSV/JSON export."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

from .episode import EpisodeLog, cpm_data_volume, mean_or_none, packet_reception_ratio


@dataclass(frozen=True)
class MetricsRecord:
    density: int
    episode: int
    policy: str
    cpm_records_per_vehicle: float
    detection_ratio: float | None
    packet_reception_ratio: float | None
    training_steps_at_eval: int | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("detection_ratio", "packet_reception_ratio"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    @classmethod
    def from_log(cls, log: EpisodeLog, episode: int, training_steps: int | None = None,
                 per_record_bits: int = 280, header_bits: int = 400) -> "MetricsRecord":
        return cls(
            density=log.scenario.vehicle_count,
            episode=episode,
            policy=log.policy,
            cpm_records_per_vehicle=cpm_data_volume(log.network_log, log.n_vehicles, 1, per_record_bits, header_bits),
            detection_ratio=log.detection_ratio,
            packet_reception_ratio=packet_reception_ratio(log.network_log, "CPM"),
            training_steps_at_eval=training_steps,
            seed=log.scenario.rng_seed,
        )


METRIC_COLUMNS = tuple(f.name for f in fields(MetricsRecord))


def _cell(v):
    # repr keeps full float precision, so identical runs give identical bytes
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def write_metrics_csv(records: Iterable[MetricsRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in records:
            w.writerow([_cell(getattr(r, c)) for c in METRIC_COLUMNS])


def write_metrics_json(records: Iterable[MetricsRecord], path) -> None:
    Path(path).write_text(json.dumps([asdict(r) for r in records], indent=2, sort_keys=True) + "\n")


def _opt(text: str, cast):
    return cast(text) if text != "" else None


def read_metrics_csv(path) -> list[MetricsRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(MetricsRecord(
                density=int(row["density"]),
                episode=int(row["episode"]),
                policy=row["policy"],
                cpm_records_per_vehicle=float(row["cpm_records_per_vehicle"]),
                detection_ratio=_opt(row["detection_ratio"], float),
                packet_reception_ratio=_opt(row["packet_reception_ratio"], float),
                training_steps_at_eval=_opt(row["training_steps_at_eval"], int),
                seed=int(row["seed"]),
            ))
    return out


@dataclass(frozen=True)
class Summary:
    """Episode-averaged metrics of one policy at one density."""

    density: int
    policy: str
    episodes: int
    cpm_records_per_vehicle: float
    detection_ratio: float | None
    packet_reception_ratio: float | None


def summarize(records: Sequence[MetricsRecord]) -> list[Summary]:
    groups: dict[tuple[int, str], list[MetricsRecord]] = {}
    for r in records:
        groups.setdefault((r.density, r.policy), []).append(r)
    out = []
    for (density, policy), rs in sorted(groups.items()):
        out.append(Summary(
            density, policy, len(rs),
            sum(r.cpm_records_per_vehicle for r in rs) / len(rs),
            mean_or_none([r.detection_ratio for r in rs]),
            mean_or_none([r.packet_reception_ratio for r in rs]),
        ))
    return out
