import numpy as np
import pytest

from conftest import make_track
from notetune import corrector as C
from notetune import features as F
from notetune.segmenter import NoteInterval
from notetune.spp import StationaryEstimate

SR = 22050


def _est(pitch, n, flagged=False):
    return StationaryEstimate(0, pitch, np.ones(n) / n, flagged=flagged)


def test_plan_arithmetic():
    track = make_track(np.full(10, 60.6))
    plan = C.build_plan([_est(60.4, 10)], [60.0], [NoteInterval(0, 10)], track)
    assert plan.deltas[0] == pytest.approx(0.4, abs=1e-4)
    assert plan.target_pitch[0] == pytest.approx(60.2, abs=1e-4)


def test_plan_identity_when_target_equals_estimate():
    track = make_track(np.full(10, 60.0))
    plan = C.build_plan([_est(60.0, 10)], [60.0], [NoteInterval(0, 10)], track)
    assert plan.deltas[0] == 0.0
    wav = np.random.default_rng(0).normal(0, 0.1, SR)
    out = C.shift_audio(wav, plan, make_track(np.full(87, 60.0)))
    assert np.array_equal(out, wav)


def test_plan_misaligned_inputs_error():
    track = make_track(np.full(10, 60.0))
    with pytest.raises(ValueError):
        C.build_plan([_est(60.0, 10)], [60.0, 61.0], [NoteInterval(0, 10)], track)


def test_plan_flagged_note_gets_zero_delta():
    track = make_track(np.full(10, 60.5))
    plan = C.build_plan([_est(60.5, 10, flagged=True)], [60.0], [NoteInterval(0, 10)], track)
    assert plan.deltas[0] == 0.0


def test_expression_preserved_exactly_pure_offset():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = int(rng.integers(5, 120))
        pitch = 61.3 + 0.5 * np.sin(np.linspace(0, 6, n)) + rng.normal(0, 0.05, n)
        track = make_track(pitch)
        est = _est(float(pitch.mean()), n)
        target = float(rng.integers(55, 70))
        plan = C.build_plan([est], [target], [NoteInterval(0, n)], track)
        offsets = plan.target_pitch - pitch  # all voiced
        # pure per-note offset, bit-exact: max == min
        assert offsets.max() == offsets.min()
        assert offsets[0] == -plan.deltas[0]
        # demeaned contour is therefore preserved exactly
        demeaned_in = pitch - pitch.mean()
        demeaned_out = plan.target_pitch - plan.target_pitch.mean()
        assert np.allclose(demeaned_in, demeaned_out, atol=1e-9)


def test_vibrato_contour_preserved_offset_removed():
    n = 200
    vib = 0.5 * np.sin(np.linspace(0, 20, n))
    pitch = 61.3 + vib
    track = make_track(pitch)
    plan = C.build_plan([_est(61.3, n)], [61.0], [NoteInterval(0, n)], track)
    assert np.allclose(plan.target_pitch, 61.0 + vib, atol=1e-4)


def _tone_track(freq=440.0, dur=2.0):
    t = np.arange(int(SR * dur)) / SR
    wav = sum((0.25 / k) * np.sin(2 * np.pi * freq * k * t) for k in range(1, 6))
    edge = int(0.02 * SR)
    env = np.ones(len(wav))
    env[:edge] = np.linspace(0, 1, edge)
    env[-edge:] = np.linspace(1, 0, edge)
    wav = wav * env
    track = F.extract_track(wav)
    return wav, track


def test_shift_up_one_semitone_retracks_correctly():
    wav, track = _tone_track(440.0)
    notes = [NoteInterval(0, track.n_frames)]
    est = [_est(float(np.nanmean(track.pitch_semitones)), track.n_frames)]
    # delta = -1: target = pitch + 1, audio shifts up to ~466.16 Hz
    plan = C.build_plan(est, [est[0].pitch + 1.0], notes, track)
    out = C.shift_audio(wav, plan, track)
    assert len(out) == len(wav)
    repitch = F.extract_track(out).pitch_semitones[20:-20]
    assert abs(np.nanmean(repitch) - (est[0].pitch + 1.0)) < 0.1


def test_roundtrip_shift_within_10_cents():
    wav, track = _tone_track(330.0)
    notes = [NoteInterval(0, track.n_frames)]
    p0 = float(np.nanmean(track.pitch_semitones[20:-20]))
    est = [_est(p0, track.n_frames)]
    plan_down = C.build_plan(est, [p0 - 1.0], notes, track)  # delta +1, shift down
    mid = C.shift_audio(wav, plan_down, track)
    track_mid = F.extract_track(mid)
    p1 = float(np.nanmean(track_mid.pitch_semitones[20:-20]))
    est_mid = [_est(p1, track_mid.n_frames)]
    plan_up = C.build_plan(est_mid, [p1 + 1.0], [NoteInterval(0, track_mid.n_frames)], track_mid)
    back = C.shift_audio(mid, plan_up, track_mid)
    p2 = float(np.nanmean(F.extract_track(back).pitch_semitones[20:-20]))
    assert abs(p2 - p0) * 100 < 10.0
    assert len(back) == len(wav)


def test_clamp_warns_and_limits(caplog):
    wav, track = _tone_track(440.0, dur=1.0)
    notes = [NoteInterval(0, track.n_frames)]
    est = [_est(float(np.nanmean(track.pitch_semitones)), track.n_frames)]
    plan = C.build_plan(est, [est[0].pitch - 12.0], notes, track)  # delta = +12
    import logging

    with caplog.at_level(logging.WARNING, logger="notetune.corrector"):
        out = C.shift_audio(wav, plan, track)
    assert any("clamping" in r.message for r in caplog.records)
    repitch = np.nanmean(F.extract_track(out).pitch_semitones[20:-20])
    # shift limited to 3 semitones, not 12
    assert abs(repitch - (est[0].pitch - 3.0)) < 0.2


def test_verify_plan_rows_match_notes():
    track = make_track(np.full(30, 60.0))
    notes = [NoteInterval(0, 10), NoteInterval(10, 30)]
    ests = [
        StationaryEstimate(0, 60.2, np.ones(10) / 10),
        StationaryEstimate(1, 59.8, np.ones(20) / 20),
    ]
    plan = C.build_plan(ests, [60.0, 60.0], notes, track)
    rows = C.verify_plan(ests, plan, track)
    assert len(rows) == len(notes)
    assert rows[0]["residual_cents"] == pytest.approx(20.0, abs=0.01)


def test_plan_sidecar_format(tmp_path):
    track = make_track(np.full(10, 60.0))
    plan = C.build_plan([_est(60.4, 10)], [60.0], [NoteInterval(0, 10)], track)
    path = tmp_path / "plan.tsv"
    C.write_plan_sidecar(path, plan, track)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "note\tstart_sec\tend_sec\tp_hat\tp_tilde\tdelta"
    assert len(lines) == 2
