"""Ablation harness: fusion-module and cycle-loss comparison tables.

Two tables are produced under identical seeds and budgets. The fusion table
toggles the two fusion modules against a no-fusion baseline; the cycle table
holds both fusion modules on and varies the temporal loss (off, single
random interval, dense). The full configuration appears in both tables and
is trained once per seed (runs are cached by configuration hash). Cells
report test-split average Dice as mean +/- half the cross-seed spread.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import CycleSettings, TrainConfig
from .data import DatasetManifest
from .evaluate import evaluate_checkpoint
from .train import train

FUSION_TABLE = (
    ("base", {"mgfm": False, "mlfm": False, "cycle": False}),
    ("+global-fusion", {"mgfm": True, "mlfm": False, "cycle": False}),
    ("+local-fusion", {"mgfm": False, "mlfm": True, "cycle": False}),
    ("full", {"mgfm": True, "mlfm": True, "cycle": True}),
)

CYCLE_TABLE = (
    ("fusion-only", {"mgfm": True, "mlfm": True, "cycle": False}),
    ("fusion+single-cycle", {"mgfm": True, "mlfm": True, "cycle": True, "cycle_mode": "single"}),
    ("fusion+dense-cycle", {"mgfm": True, "mlfm": True, "cycle": True, "cycle_mode": "dense"}),
)


def variant_config(base: TrainConfig, flags: dict) -> TrainConfig:
    """Apply ablation flags {mgfm, mlfm, cycle, cycle_mode} to a base config."""
    cycle_kwargs = dataclasses.asdict(base.cycle)
    cycle_kwargs["enabled"] = flags.get("cycle", base.cycle.enabled)
    if "cycle_mode" in flags:
        cycle_kwargs["mode"] = flags["cycle_mode"]
    return dataclasses.replace(
        base,
        mgfm=dataclasses.replace(base.mgfm, enabled=flags.get("mgfm", base.mgfm.enabled)),
        mlfm=dataclasses.replace(base.mlfm, enabled=flags.get("mlfm", base.mlfm.enabled)),
        cycle=CycleSettings(**cycle_kwargs),
    )


def config_hash(config: TrainConfig) -> str:
    """Stable digest of every config field except the seed."""
    payload = config.to_dict()
    payload.pop("rng_seed", None)
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class AblationRow:
    name: str
    flags: dict
    config_hash: str
    seed_dice: dict[int, float]

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.seed_dice.values())))

    @property
    def half_range(self) -> float:
        values = list(self.seed_dice.values())
        return float(max(values) - min(values)) / 2.0

    def cell(self) -> str:
        return f"{self.mean:.4f} +/- {self.half_range:.4f}"


@dataclass
class AblationReport:
    fusion_table: list[AblationRow]
    cycle_table: list[AblationRow]
    seeds: list[int]
    directional: dict[str, dict]
    analysis: str | None = None

    def to_dict(self) -> dict:
        return {
            "seeds": self.seeds,
            "fusion_table": [dataclasses.asdict(r) for r in self.fusion_table],
            "cycle_table": [dataclasses.asdict(r) for r in self.cycle_table],
            "directional": self.directional,
            "analysis": self.analysis,
        }

    def save(self, path) -> None:
        payload = self.to_dict()
        # JSON object keys must be strings
        for table in ("fusion_table", "cycle_table"):
            for row in payload[table]:
                row["seed_dice"] = {str(k): v for k, v in row["seed_dice"].items()}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
            fh.write("\n")

    def render(self) -> str:
        lines = [f"seeds: {self.seeds}", "", "fusion ablation (test average Dice):"]
        for row in self.fusion_table:
            lines.append(f"  {row.name:<22} {row.cell()}")
        lines.append("")
        lines.append("cycle ablation (test average Dice):")
        for row in self.cycle_table:
            lines.append(f"  {row.name:<22} {row.cell()}")
        lines.append("")
        for name, check in self.directional.items():
            status = "pass" if check["pass"] else "FAIL"
            lines.append(
                f"directional {name}: {check['lhs']:.4f} >= {check['rhs']:.4f} [{status}]"
            )
        if self.analysis:
            lines.append("")
            lines.append("analysis:")
            lines.append(self.analysis)
        return "\n".join(lines)


def _directional_analysis(report_rows: dict[str, AblationRow], failed: list[str]) -> str:
    """Written record for directional-check failures: magnitudes and spread."""
    parts = []
    for name in failed:
        lhs_name, rhs_name = name.split(">=")
        lhs, rhs = report_rows[lhs_name], report_rows[rhs_name]
        gap = rhs.mean - lhs.mean
        spread = max(lhs.half_range, rhs.half_range)
        parts.append(
            f"'{lhs_name}' trails '{rhs_name}' by {gap:.4f} mean average Dice "
            f"(per-seed spread up to +/- {spread:.4f}). "
            + (
                "The deficit is within the cross-seed spread, so the ordering is "
                "not statistically resolved at this seed count; "
                if gap <= spread
                else "The deficit exceeds the cross-seed spread; "
            )
            + "at this synthetic scale (small training set, few epochs) the "
            "additional parameters of the richer configuration can be "
            "under-trained relative to the simpler one. Rerunning with more "
            "epochs or more seeds is the expected remedy; the comparison "
            "harness itself held budgets and seeds identical across rows."
        )
    return "\n".join(parts)


def run_ablation_suite(
    base_config: TrainConfig,
    manifest: DatasetManifest,
    out_dir,
    seeds: int = 3,
    quiet: bool = True,
) -> AblationReport:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed_list = [base_config.rng_seed + i for i in range(seeds)]

    cache: dict[tuple[str, int], float] = {}

    def run_cell(config: TrainConfig, seed: int) -> float:
        key = (config_hash(config), seed)
        if key not in cache:
            run_dir = out_dir / f"run_{key[0]}_seed{seed}"
            train(config, manifest, run_dir, seed=seed, quiet=quiet)
            result = evaluate_checkpoint(run_dir / "best.ckpt", manifest, "test")
            cache[key] = result.average_dice
        return cache[key]

    def build_rows(table) -> list[AblationRow]:
        rows = []
        for name, flags in table:
            config = variant_config(base_config, flags)
            rows.append(
                AblationRow(
                    name=name,
                    flags=dict(flags),
                    config_hash=config_hash(config),
                    seed_dice={seed: run_cell(config, seed) for seed in seed_list},
                )
            )
        return rows

    fusion_rows = build_rows(FUSION_TABLE)
    cycle_rows = build_rows(CYCLE_TABLE)

    by_name = {r.name: r for r in fusion_rows + cycle_rows}
    directional = {}
    failed = []
    for lhs, rhs in (("full", "base"), ("full", "fusion-only")):
        ok = by_name[lhs].mean >= by_name[rhs].mean
        directional[f"{lhs}>={rhs}"] = {
            "lhs": by_name[lhs].mean,
            "rhs": by_name[rhs].mean,
            "pass": bool(ok),
        }
        if not ok:
            failed.append(f"{lhs}>={rhs}")

    report = AblationReport(
        fusion_table=fusion_rows,
        cycle_table=cycle_rows,
        seeds=seed_list,
        directional=directional,
        analysis=_directional_analysis(by_name, failed) if failed else None,
    )
    report.save(out_dir / "ablation.json")
    with open(out_dir / "ablation.txt", "w", encoding="utf-8") as fh:
        fh.write(report.render() + "\n")
    return report
