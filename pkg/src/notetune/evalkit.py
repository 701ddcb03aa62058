"""Frame-level accuracy metrics, ablation tables, and report emission."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

RPA_TOLERANCE = 0.5  # semitones, strict inequality


def note_pitch_curve(notes, pitches, n_frames: int) -> np.ndarray:
    """Frame-level curve holding each note's pitch over its span, NaN outside."""
    curve = np.full(n_frames, np.nan)
    for note, p in zip(notes, pitches):
        a = max(note.start_frame, 0)
        b = min(note.end_frame, n_frames)
        curve[a:b] = p
    return curve


def rpa_from_curves(pred_curve: np.ndarray, gt_curve: np.ndarray, voiced: np.ndarray) -> dict:
    """Raw pitch accuracy over voiced frames covered by ground-truth notes.

    A frame counts as correct when |pred - gt| < 0.5 semitones (strict);
    frames without a prediction count as incorrect.  Returns NaN when no
    frame qualifies.
    """
    v = np.asarray(voiced, dtype=bool) & np.isfinite(gt_curve)
    n = int(v.sum())
    if n == 0:
        return {"rpa_percent": float("nan"), "n_frames": 0}
    pred = pred_curve[v]
    correct = np.isfinite(pred) & (np.abs(pred - gt_curve[v]) < RPA_TOLERANCE)
    return {"rpa_percent": 100.0 * float(correct.mean()), "n_frames": n}


def rpa(pred_pitches, gt_pitches, notes, voiced) -> dict:
    """RPA for aligned per-note predictions/GT sharing one note list."""
    pred_pitches = np.asarray(pred_pitches, dtype=np.float64)
    gt_pitches = np.asarray(gt_pitches, dtype=np.float64)
    if len(pred_pitches) != len(gt_pitches) or len(pred_pitches) != len(notes):
        raise ValueError("predictions, ground truth and notes must align")
    n_frames = len(voiced)
    pred_curve = note_pitch_curve(notes, pred_pitches, n_frames)
    gt_curve = note_pitch_curve(notes, gt_pitches, n_frames)
    return rpa_from_curves(pred_curve, gt_curve, voiced)


def pooled_rpa(per_song: list[dict]) -> dict:
    """Frame-weighted pool of per-song RPA dicts."""
    n = sum(r["n_frames"] for r in per_song)
    if n == 0:
        return {"rpa_percent": float("nan"), "n_frames": 0}
    correct = sum(r["rpa_percent"] * r["n_frames"] / 100.0 for r in per_song if r["n_frames"])
    return {"rpa_percent": 100.0 * correct / n, "n_frames": n}


class MissingCheckpointError(FileNotFoundError):
    pass


def run_ablation(variants: dict[str, object], evaluate_fn, splits: list[str]) -> dict:
    """Evaluate each variant on each split via `evaluate_fn(variant, split)`.

    `variants` maps a variant name to whatever evaluate_fn needs (e.g. a
    checkpoint path); a missing value raises MissingCheckpointError naming
    the variant.
    """
    table: dict[str, dict[str, float]] = {}
    for name, handle in variants.items():
        if handle is None:
            raise MissingCheckpointError(f"no checkpoint for ablation variant {name!r}")
        table[name] = {}
        for split in splits:
            result = evaluate_fn(handle, split)
            table[name][split] = result["rpa_percent"]
    return table


def format_ablation_table(table: dict[str, dict[str, float]], splits: list[str]) -> str:
    width = max(len(k) for k in table) + 2
    lines = ["variant".ljust(width) + "".join(s.rjust(18) for s in splits)]
    for name, row in table.items():
        lines.append(name.ljust(width) + "".join(f"{row[s]:18.2f}" for s in splits))
    return "\n".join(lines)


# ---- reports -------------------------------------------------------------------

def emit_report(metrics: dict, histograms: dict[str, dict], outdir) -> dict:
    """Write a metrics JSON plus one CSV per histogram; returns written paths.

    The JSON is fully deterministic (sorted keys, repr floats) so a
    fixed-seed run reproduces it byte-identically.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {}
    metrics_path = outdir / "metrics.json"
    metrics_path.write_text(json.dumps(metrics, sort_keys=True, indent=1) + "\n")
    paths["metrics"] = metrics_path
    for name, hist in histograms.items():
        csv_path = outdir / f"hist_{name}.csv"
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_left", "bin_right", "count"])
            edges = hist.get("edges", [])
            counts = hist.get("counts", [])
            for left, right, count in zip(edges[:-1], edges[1:], counts):
                writer.writerow([f"{left:.6f}", f"{right:.6f}", count])
        paths[f"hist_{name}"] = csv_path
    return paths
