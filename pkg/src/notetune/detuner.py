"""Learnable augmentation: autoregressive note-wise pitch-error generation.

A 2-layer GRU regresses each note's pitch error from (note pitch, duration,
previous error); generation rolls the model forward on its own noised
predictions.  Uniform-random baselines and histogram utilities live here
too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nncore as nn

ERROR_CLAMP = 3.0  # semitones
PITCH_CENTER = 60.0
PITCH_SCALE = 12.0


@dataclass
class DetunerConfig:
    hidden: int = 64
    seed: int = 0
    min_notes: int = 200


class Detuner(nn.Module):
    def __init__(self, cfg: DetunerConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed + 17)
        self.gru1 = nn.GRU(rng, 3, cfg.hidden)
        self.gru2 = nn.GRU(rng, cfg.hidden, cfg.hidden)
        self.out = nn.Linear(rng, cfg.hidden, 1)

    def forward(self, x) -> nn.Tensor:
        """[B, N, 3] note features -> predicted errors [B, N]."""
        h = self.gru2(self.gru1(x if isinstance(x, nn.Tensor) else nn.Tensor(x)))
        y = self.out(h)
        B, N, _ = y.shape
        return y.reshape((B, N))


def note_features(pitches: np.ndarray, dur_beats: np.ndarray, prev_errors: np.ndarray) -> np.ndarray:
    """Normalized per-note inputs: centered pitch, log duration, previous error."""
    p = (np.asarray(pitches, dtype=np.float64) - PITCH_CENTER) / PITCH_SCALE
    d = np.log(np.maximum(np.asarray(dur_beats, dtype=np.float64), 1e-3))
    e = np.asarray(prev_errors, dtype=np.float64)
    return np.stack([p, d, e], axis=-1)


def teacher_inputs(pitches, dur_beats, errors) -> np.ndarray:
    prev = np.concatenate([[0.0], np.asarray(errors)[:-1]])
    return note_features(pitches, dur_beats, prev)


# ---- stateful rollout (plain numpy; no gradients needed) -----------------------

def _gru_cell(x, h, w_ih, b_ih, w_hh, b_hh):
    gi = x @ w_ih + b_ih
    gh = h @ w_hh + b_hh
    H = h.shape[-1]
    r = 1.0 / (1.0 + np.exp(-(gi[:H] + gh[:H])))
    z = 1.0 / (1.0 + np.exp(-(gi[H : 2 * H] + gh[H : 2 * H])))
    n = np.tanh(gi[2 * H :] + r * gh[2 * H :])
    return (1.0 - z) * n + z * h


def generate_errors(
    model: Detuner,
    sigma_e: float,
    pitches: np.ndarray,
    dur_beats: np.ndarray,
    seed: int,
) -> np.ndarray:
    """Autoregressive rollout: each step's prediction is perturbed by
    Gaussian noise with the training-residual std and fed back; errors are
    clamped to +-3 semitones."""
    rng = np.random.default_rng(seed)
    H = model.cfg.hidden
    h1 = np.zeros(H)
    h2 = np.zeros(H)
    g1, g2, out = model.gru1, model.gru2, model.out
    prev = 0.0
    errors = np.empty(len(pitches))
    for i in range(len(pitches)):
        x = note_features(pitches[i : i + 1], dur_beats[i : i + 1], [prev])[0]
        h1 = _gru_cell(x, h1, g1.w_ih.data, g1.b_ih.data, g1.w_hh.data, g1.b_hh.data)
        h2 = _gru_cell(h1, h2, g2.w_ih.data, g2.b_ih.data, g2.w_hh.data, g2.b_hh.data)
        pred = float(h2 @ out.w.data[:, 0] + out.b.data[0])
        err = pred + rng.normal(0.0, sigma_e) if sigma_e > 0 else pred
        err = float(np.clip(err, -ERROR_CLAMP, ERROR_CLAMP))
        errors[i] = err
        prev = err
    return errors


def uniform_detune(n_notes: int, lo: float, hi: float, seed: int) -> np.ndarray:
    """Independent per-note errors from Uniform(lo, hi)."""
    if lo >= hi:
        raise ValueError("lo must be < hi")
    return np.random.default_rng(seed).uniform(lo, hi, size=n_notes)


# ---- training --------------------------------------------------------------

@dataclass
class DetunerTrainResult:
    model: Detuner
    sigma_e: float
    losses: list


def train_detuner(
    sequences: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
    cfg: DetunerConfig,
    steps: int = 1500,
    batch_size: int = 16,
    lr: float = 3e-3,
) -> DetunerTrainResult:
    """Teacher-forced MSE regression on (pitches, dur_beats, errors) sequences."""
    n_notes = sum(len(s[2]) for s in sequences)
    if n_notes < cfg.min_notes:
        raise ValueError(
            f"refusing to train the detuner on {n_notes} notes (< {cfg.min_notes})"
        )
    model = Detuner(cfg)
    opt = nn.AdamW(
        model.params(),
        nn.OptimizerConfig(lr=lr, t_max=steps, eta_min=lr / 100, warmup=min(50, steps // 10)),
    )
    rng = np.random.default_rng(cfg.seed + 23)
    max_len = max(len(s[2]) for s in sequences)
    losses = []
    for step in range(steps):
        idx = rng.integers(0, len(sequences), size=batch_size)
        x = np.zeros((batch_size, max_len, 3))
        y = np.zeros((batch_size, max_len))
        m = np.zeros((batch_size, max_len))
        for k, j in enumerate(idx):
            pitches, durs, errs = sequences[j]
            L = len(errs)
            x[k, :L] = teacher_inputs(pitches, durs, errs)
            y[k, :L] = errs
            m[k, :L] = 1.0
        pred = model.forward(x)
        losses.append(nn.train_step((((pred - y) ** 2) * m).sum() / m.sum(), opt))
    # residual std over the whole training set, teacher-forced
    residuals = []
    with nn.no_grad():
        for pitches, durs, errs in sequences:
            pred = model.forward(teacher_inputs(pitches, durs, errs)[None]).data[0]
            residuals.append(pred - errs)
    sigma_e = float(np.concatenate(residuals).std())
    return DetunerTrainResult(model=model, sigma_e=sigma_e, losses=losses)


# ---- distribution utilities ---------------------------------------------------

def error_histogram(errors: np.ndarray, bin_width: float = 0.1) -> dict:
    """Histogram plus summary stats, serializable for plotting."""
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    errors = np.asarray(errors, dtype=np.float64)
    if len(errors) == 0:
        return {"bin_width": bin_width, "edges": [], "counts": [], "n": 0}
    lo = math.floor(errors.min() / bin_width) * bin_width
    hi = math.ceil(errors.max() / bin_width) * bin_width
    n_bins = max(1, int(round((hi - lo) / bin_width)))
    counts, edges = np.histogram(errors, bins=n_bins, range=(lo, lo + n_bins * bin_width))
    pct = np.percentile(errors, [5, 25, 50, 75, 95])
    return {
        "bin_width": bin_width,
        "edges": edges.tolist(),
        "counts": counts.tolist(),
        "n": int(len(errors)),
        "mean": float(errors.mean()),
        "std": float(errors.std()),
        "percentiles": {"p5": pct[0], "p25": pct[1], "p50": pct[2], "p75": pct[3], "p95": pct[4]},
    }


def l1_histogram_distance(
    a: np.ndarray, b: np.ndarray, bin_width: float = 0.1, span: float = ERROR_CLAMP
) -> float:
    """L1 distance between normalized histograms on a shared bin grid."""
    bins = np.arange(-span, span + bin_width, bin_width)
    ha, _ = np.histogram(np.clip(a, -span, span - 1e-9), bins=bins)
    hb, _ = np.histogram(np.clip(b, -span, span - 1e-9), bins=bins)
    pa = ha / max(ha.sum(), 1)
    pb = hb / max(hb.sum(), 1)
    return float(np.abs(pa - pb).sum())
