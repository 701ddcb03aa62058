import numpy as np
import pytest

from notetune import nncore as nn
from notetune import symbolic as sym
from notetune.datakit import AnnotatedSample, Note
from notetune.segmenter import NoteInterval
from notetune.spp import StationaryEstimate


def test_event_at_time_zero():
    meta = sym.GridMeta(tempo_bpm=120.0)
    evs = sym.events_from_times(np.array([0.0]), np.array([0.5]), np.array([60.0]), meta)
    assert evs[0].bar == 0 and evs[0].pos == 0


def test_event_at_half_second_120bpm_is_beat_one():
    meta = sym.GridMeta(tempo_bpm=120.0)
    evs = sym.events_from_times(np.array([0.5]), np.array([0.25]), np.array([64.0]), meta)
    assert evs[0].bar == 0 and evs[0].pos == 4  # one beat = 4 sixteenths


def test_consecutive_notes_strictly_ordered():
    meta = sym.GridMeta(tempo_bpm=120.0)
    onsets = np.array([0.0, 0.01])  # quantize to the same cell without the bump
    evs = sym.events_from_times(onsets, np.array([0.01, 0.5]), np.array([60.0, 62.0]), meta)
    assert (evs[1].bar, evs[1].pos) > (evs[0].bar, evs[0].pos)


def test_tokenization_roundtrip_within_one_grid_unit():
    meta = sym.GridMeta(tempo_bpm=100.0)
    rng = np.random.default_rng(0)
    onsets = np.cumsum(rng.uniform(0.2, 0.8, size=20))
    durs = rng.uniform(0.15, 0.7, size=20)
    evs = sym.events_from_times(onsets, durs, np.full(20, 60.0), meta)
    spb = 60.0 / meta.tempo_bpm
    unit = spb / sym.GRID_PER_BEAT
    ppb = sym.positions_per_bar(meta.time_signature)
    for ev, onset, dur in zip(evs, onsets, durs):
        t = (ev.bar * ppb + ev.pos) * unit
        assert abs(t - onset) <= unit
        assert abs(ev.dur * unit - dur) <= unit


def test_positions_per_bar():
    assert sym.positions_per_bar((4, 4)) == 16
    assert sym.positions_per_bar((3, 4)) == 12
    assert sym.positions_per_bar((6, 8)) == 12


def test_interp_embedding_integer_exact():
    rng = np.random.default_rng(1)
    table = nn.Tensor(rng.normal(size=(sym.PITCH_TABLE_ROWS, 8)))
    out = sym.interp_pitch_embedding(table, np.array([60.0]))
    assert np.array_equal(out.data[0], table.data[60])


def test_interp_embedding_midpoint_and_quarter():
    rng = np.random.default_rng(2)
    table = nn.Tensor(rng.normal(size=(sym.PITCH_TABLE_ROWS, 8)))
    mid = sym.interp_pitch_embedding(table, np.array([60.5])).data[0]
    assert np.allclose(mid, 0.5 * (table.data[60] + table.data[61]))
    q = sym.interp_pitch_embedding(table, np.array([59.75])).data[0]
    assert np.allclose(q, 0.25 * table.data[59] + 0.75 * table.data[60])


def test_interp_embedding_top_of_range():
    table = nn.Tensor(np.random.default_rng(3).normal(size=(sym.PITCH_TABLE_ROWS, 4)))
    out = sym.interp_pitch_embedding(table, np.array([127.0]))
    assert np.array_equal(out.data[0], table.data[127])


def test_interp_embedding_linear_in_alpha():
    table = nn.Tensor(np.random.default_rng(4).normal(size=(sym.PITCH_TABLE_ROWS, 16)))
    e0, e1 = table.data[70], table.data[71]
    for alpha in (0.1, 0.3, 0.9):
        out = sym.interp_pitch_embedding(table, np.array([70.0 + alpha])).data[0]
        d0 = np.linalg.norm(out - e0)
        d1 = np.linalg.norm(out - e1)
        gap = np.linalg.norm(e1 - e0)
        assert d0 == pytest.approx(alpha * gap, rel=1e-9)
        assert d1 == pytest.approx((1 - alpha) * gap, rel=1e-9)


def test_round_pitch_half_up():
    assert sym.round_pitch(60.4) == 60
    assert sym.round_pitch(60.5) == 61
    assert sym.round_pitch(60.9) == 61
    assert sym.round_pitch(127.9) == 127


def test_detune_schedule_endpoints():
    assert sym.detune_schedule(0, 1000) == 0.0
    assert sym.detune_schedule(300, 1000) == pytest.approx(0.4)
    assert sym.detune_schedule(999, 1000) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        sym.detune_schedule(0, 100, p_max=1.5)


def _tiny_model(max_events=64):
    return sym.Cnpp(
        sym.CnppConfig(layers=1, model_dim=16, heads=2, embed_dim=8, max_events=max_events, seed=5)
    )


def _events(n=6):
    meta = sym.GridMeta(tempo_bpm=120.0)
    onsets = np.arange(n) * 0.5
    durs = np.full(n, 0.4)
    pitches = 60 + np.arange(n) % 5 + 0.3
    return sym.events_from_times(onsets, durs, pitches, meta)


def test_cnpp_outputs_valid_tokens_and_distributions():
    model = _tiny_model()
    tokens, probs = model.predict(_events())
    assert tokens.shape == (6,)
    assert np.all((tokens >= 0) & (tokens <= 127))
    assert probs.shape == (6, sym.PITCH_TOKENS)
    assert np.all(np.abs(probs.sum(axis=1) - 1.0) < 1e-9)


def test_cnpp_empty_sequence():
    tokens, probs = _tiny_model().predict([])
    assert len(tokens) == 0 and probs.shape == (0, sym.PITCH_TOKENS)


def test_cnpp_deterministic():
    model = _tiny_model()
    t1, p1 = model.predict(_events())
    t2, p2 = model.predict(_events())
    assert np.array_equal(t1, t2) and np.array_equal(p1, p2)


def test_cnpp_rejects_overlong_sequences():
    model = _tiny_model(max_events=4)
    with pytest.raises(ValueError):
        model.predict(_events(10))


def test_octuple_corpus_roundtrip(tmp_path):
    songs = {"a": _events(5), "b": _events(3)}
    path = tmp_path / "corpus.oct"
    sym.write_octuple_corpus(path, songs)
    loaded = sym.read_octuple_corpus(path)
    assert set(loaded) == {"a", "b"}
    for sid in songs:
        for e1, e2 in zip(songs[sid], loaded[sid]):
            assert (e1.bar, e1.pos, e1.dur, e1.vel, e1.tempo, e1.sig, e1.instr) == (
                e2.bar, e2.pos, e2.dur, e2.vel, e2.tempo, e2.sig, e2.instr
            )
            assert e2.pitch == pytest.approx(e1.pitch, abs=1e-6)


def test_octuple_corpus_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.oct"
    path.write_text("not a corpus\n")
    with pytest.raises(ValueError):
        sym.read_octuple_corpus(path)


def test_octuples_from_annotation_and_midi_import(tmp_path):
    from notetune import midifile
    from notetune.datakit import import_annotations

    notes = [(0.0, 0.45, 60), (0.5, 0.95, 62), (1.0, 1.45, 64)]
    midi_path = tmp_path / "m.mid"
    midifile.write_midi(midi_path, notes, tempo_bpm=120.0)
    ann = import_annotations(midi_path)
    evs = sym.octuples_from_annotation(ann)
    assert [e.pos for e in evs] == [0, 4, 8]  # 0.5 s = 1 beat = 4 sixteenths
    assert [round(e.pitch) for e in evs] == [60, 62, 64]


def test_notes_to_octuples_alignment_check():
    meta = sym.GridMeta()
    notes = [NoteInterval(0, 10)]
    with pytest.raises(ValueError):
        sym.notes_to_octuples(notes, [], meta, 22050, 256)
    est = [StationaryEstimate(0, 61.2, np.ones(10))]
    evs = sym.notes_to_octuples(notes, est, meta, 22050, 256)
    assert evs[0].pitch == pytest.approx(61.2)
    assert evs[0].dur >= 1
