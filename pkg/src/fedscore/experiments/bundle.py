"""Result bundles: everywhere a scenario's numbers land on disk.

A bundle is a directory of CSV tables with JSON mirrors, the scenario
snapshot, the seed list, and a checksum manifest.  Table bytes are fully
deterministic (repr floats, sorted JSON keys, \\n newlines), so rerunning
a scenario must reproduce every checksum; only the bundle directory's
default name carries a timestamp.
"""

import dataclasses
import hashlib
import json
import os
import time

from .runs import (
    ablation,
    derive_seeds,
    influence_summary,
    manipulation_summary,
    misbehavior,
    rank_fidelity,
    run_repeats,
    weighted_aggregation,
)
from .scenario import (
    InfluenceBlock,
    ManipulationBlock,
    MisbehaviorBlock,
    WeightedBlock,
    parse_scenario,
)


def _cell(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_table(tables_dir, name, header, rows):
    """One logical table as <name>.csv plus a <name>.json mirror."""
    os.makedirs(tables_dir, exist_ok=True)
    csv_path = os.path.join(tables_dir, f"{name}.csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")
    json_path = os.path.join(tables_dir, f"{name}.json")
    payload = {
        "name": name,
        "header": list(header),
        "rows": [
            [v if not isinstance(v, bool) else bool(v) for v in row]
            for row in rows
        ],
    }
    with open(json_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, sort_keys=True, separators=(",", ":")))
        fh.write("\n")
    return [f"{name}.csv", f"{name}.json"]


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _fidelity_tables(tables_dir, result):
    files = write_table(
        tables_dir,
        "rank_fidelity",
        ["method", "metric", "mean", "variance"],
        result.summary,
    )
    files += write_table(
        tables_dir,
        "rank_fidelity_per_seed",
        ["repeat", "seed", "method", "l2", "spearman", "kendall", "pearson"],
        result.per_repeat,
    )
    return files


def _ablation_tables(tables_dir, result):
    return write_table(
        tables_dir,
        "ablation",
        ["axis", "value", "method", "metric", "mean", "variance"],
        result.rows,
    )


def _weighted_tables(tables_dir, result):
    files = write_table(
        tables_dir,
        "weighted_curves",
        ["repeat", "round", "method", "neg_loss"],
        result.curves,
    )
    files += write_table(
        tables_dir,
        "weighted_curves_mean",
        ["round", "method", "mean_neg_loss", "variance"],
        result.aggregate,
    )
    files += write_table(
        tables_dir,
        "weighted_summary",
        ["method", "wins_vs_fedavg", "repeats", "mean_final_neg_loss",
         "fedavg_mean_final_neg_loss"],
        result.summary,
    )
    files += write_table(
        tables_dir,
        "weighted_flagged",
        ["repeat", "round", "method"],
        result.flagged,
    )
    return files


def _misbehavior_tables(tables_dir, result):
    files = write_table(
        tables_dir,
        "misbehavior",
        ["method", "detection_rate", "attacker_score_min", "q1", "median",
         "q3", "attacker_score_max"],
        result.summary,
    )
    files += write_table(
        tables_dir,
        "misbehavior_per_seed",
        ["repeat", "seed", "method", "attacker_score", "detected"],
        result.per_repeat,
    )
    return files


def _influence_tables(tables_dir, result):
    files = write_table(
        tables_dir,
        "influence",
        ["source", "target", "mean_normalized_influence"],
        result.rows,
    )
    files += write_table(
        tables_dir,
        "influence_flagged",
        ["repeat", "column", "reason"],
        result.flagged,
    )
    return files


def _manipulation_tables(tables_dir, result):
    return write_table(
        tables_dir,
        "manipulation",
        ["scorer", "kind", "mean_own_delta", "max_abs_numerator_delta"],
        result.rows,
    )


def run_scenario(path, out_dir=None, master_seed=None):
    """Parse, execute, and persist a scenario; returns the bundle dir.

    Runs rank fidelity always, the ablation block if present, then every
    downstream block.  The base federations are trained once and shared
    by rank fidelity, the round-axis ablation, influence, and
    manipulation; weighted aggregation and misbehavior train their own
    federations because they change the split and the labels.
    """
    scenario = parse_scenario(path, name=_stem(path))
    if master_seed is not None:
        scenario = dataclasses.replace(scenario, master_seed=int(master_seed))

    if out_dir is None:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        out_dir = os.path.join("results", f"{scenario.name}-{stamp}")
    tables_dir = os.path.join(out_dir, "tables")
    os.makedirs(tables_dir, exist_ok=True)

    contexts = run_repeats(scenario)
    files = _fidelity_tables(tables_dir, rank_fidelity(scenario, contexts))
    components = ["rank_fidelity"]

    if scenario.ablation is not None:
        shared = contexts if scenario.ablation.axis == "round" else None
        files += _ablation_tables(
            tables_dir, ablation(scenario, contexts=shared)
        )
        components.append("ablation")
    for block in scenario.downstream:
        if isinstance(block, WeightedBlock):
            files += _weighted_tables(
                tables_dir, weighted_aggregation(scenario, block)
            )
            components.append("weighted_aggregation")
        elif isinstance(block, MisbehaviorBlock):
            files += _misbehavior_tables(tables_dir, misbehavior(scenario, block))
            components.append("misbehavior")
        elif isinstance(block, InfluenceBlock):
            files += _influence_tables(
                tables_dir, influence_summary(scenario, block, contexts)
            )
            components.append("influence")
        elif isinstance(block, ManipulationBlock):
            files += _manipulation_tables(
                tables_dir, manipulation_summary(scenario, contexts)
            )
            components.append("manipulation")

    seeds_path = os.path.join(out_dir, "seeds.json")
    with open(seeds_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(
            {
                "master_seed": scenario.master_seed,
                "seeds": derive_seeds(scenario.master_seed, scenario.repeats),
            },
            sort_keys=True, separators=(",", ":"),
        ))
        fh.write("\n")

    _snapshot(path, out_dir)

    checksums = {
        f"tables/{name}": _sha256(os.path.join(tables_dir, name))
        for name in sorted(files)
    }
    checksums["seeds.json"] = _sha256(seeds_path)
    with open(os.path.join(out_dir, "checksums.json"), "w",
              encoding="utf-8") as fh:
        fh.write(json.dumps(checksums, sort_keys=True, indent=1))
        fh.write("\n")

    with open(os.path.join(out_dir, "run.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(
            {
                "scenario": scenario.name,
                "components": components,
                "tables": sorted(files),
            },
            sort_keys=True, separators=(",", ":"),
        ))
        fh.write("\n")
    return out_dir


def _stem(path):
    if hasattr(path, "read"):
        return "scenario"
    base = os.path.basename(str(path))
    return base[:-len(".scenario")] if base.endswith(".scenario") else base


def _snapshot(path, out_dir):
    """Copy the scenario source next to its results."""
    target = os.path.join(out_dir, "scenario.snapshot")
    if hasattr(path, "read"):
        return
    with open(path, "rb") as src, open(target, "wb") as dst:
        dst.write(src.read())


def verify_bundle(bundle_dir):
    """Recompute every checksum in a bundle; returns the mismatch list."""
    manifest = os.path.join(bundle_dir, "checksums.json")
    if not os.path.exists(manifest):
        raise FileNotFoundError(f"{bundle_dir}: no checksums.json")
    with open(manifest, "r", encoding="utf-8") as fh:
        recorded = json.load(fh)
    bad = []
    for rel, digest in sorted(recorded.items()):
        full = os.path.join(bundle_dir, rel)
        if not os.path.exists(full) or _sha256(full) != digest:
            bad.append(rel)
    return bad
