import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctvseg import phantom
from ctvseg.phantom import (
    CHEST_WALL, LEFT_BREAST, LEFT_NODES, RIGHT_BREAST, RIGHT_NODES, SKIN, ClinicalRecord,
    SynthesisError, VolumeFormatError, normalize_hu, read_volume, render_numeric, render_text,
    sample_record, synthesize, write_volume,
)
from oracles import ruleset_mask

GRID = (32, 32, 16)
records = st.builds(
    ClinicalRecord,
    st.sampled_from(phantom.LATERALITIES), st.sampled_from(phantom.T_STAGES),
    st.sampled_from(phantom.N_STAGES), st.sampled_from(phantom.SURGERIES), st.integers(30, 79),
)


def test_sample_record_deterministic():
    assert sample_record(12) == sample_record(12)
    assert sample_record([3, 4]) == sample_record([3, 4])


def test_sample_record_balance():
    recs = [sample_record(i) for i in range(10000)]
    left = np.mean([r.laterality == "left" for r in recs])
    mast = np.mean([r.surgery == "mastectomy" for r in recs])
    assert abs(left - 0.5) < 0.02 and abs(mast - 0.5) < 0.02


def test_render_text_examples():
    r = ClinicalRecord("left", "T1", "N0", "breast-conserving", 52)
    assert render_text(r) == "age 52. t1 n0 m0 cancer in the left breast. surgery: breast conserving surgery."
    assert render_text(r, omit=("laterality",)) == "age 52. t1 n0 m0 cancer. surgery: breast conserving surgery."
    assert render_text(r.without("laterality")) == render_text(r, omit=("laterality",))
    flipped = render_text(r.replace(laterality="right"))
    assert flipped == render_text(r).replace("left breast", "right breast")


def test_render_numeric_examples():
    assert render_numeric(ClinicalRecord("right", "T3", "N0", "mastectomy")) == "0301"
    assert render_numeric(ClinicalRecord("right", "T3", "N0", "mastectomy"), omit=("n_stage",)) == "?301"
    assert render_numeric(ClinicalRecord("left", "T1", "N2", "breast-conserving")) == "2110"


@settings(max_examples=60, deadline=None)
@given(records, st.sampled_from(phantom.FIELDS))
def test_omission_only_drops_that_clause(r, field):
    full, cut = phantom.words(render_text(r)), phantom.words(render_text(r, omit=(field,)))
    # the omitted text is a subsequence of the full text, missing only that field's words
    it = iter(full)
    assert all(w in it for w in cut)
    removed = len(full) - len(cut)
    assert removed == {"laterality": 4, "surgery": 4 if r.surgery == "breast-conserving" else 3,
                       "age": 2}.get(field, 1)


def test_record_file_round_trip(tmp_path):
    r = ClinicalRecord("right", "T2", "N1", "mastectomy", 61)
    phantom.write_record(tmp_path / "a.rec", r)
    assert phantom.read_record(tmp_path / "a.rec") == r
    phantom.write_record(tmp_path / "b.rec", r.without("t_stage"))
    assert phantom.read_record(tmp_path / "b.rec").t_stage is None
    assert "t_stage" not in (tmp_path / "b.rec").read_text()


def test_volume_round_trip(tmp_path):
    m = np.array([[0, 1], [1, 0]], dtype=np.uint8)[:, :, None]
    write_volume(tmp_path / "m.vol", m, (1, 1, 3), "mask-u8")
    back, spacing, kind = read_volume(tmp_path / "m.vol")
    assert back.tobytes() == m.tobytes() and spacing == (1.0, 1.0, 3.0) and kind == "mask-u8"
    v = np.random.default_rng(0).random((3, 4, 5)).astype(np.float32)
    write_volume(tmp_path / "v.vol", v, (1, 1, 3), "intensity-f32")
    assert read_volume(tmp_path / "v.vol")[0].tobytes() == v.tobytes()


def test_volume_layout_w_fastest(tmp_path):
    g = np.arange(2 * 3 * 2, dtype=np.uint8).reshape(2, 3, 2)
    write_volume(tmp_path / "g.vol", g, (1, 1, 1), "labels-u8")
    payload = (tmp_path / "g.vol").read_bytes()[-12:]
    assert list(payload[:3]) == [g[0, 0, 0], g[0, 1, 0], g[0, 2, 0]]
    assert payload[3] == g[1, 0, 0] and payload[6] == g[0, 0, 1]


def test_volume_format_errors(tmp_path):
    bad = tmp_path / "bad.vol"
    bad.write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(VolumeFormatError) as err:
        read_volume(bad)
    assert err.value.offset == 0
    write_volume(tmp_path / "ok.vol", np.zeros((4, 4, 4), np.uint8), (1, 1, 1), "mask-u8")
    short = tmp_path / "short.vol"
    short.write_bytes((tmp_path / "ok.vol").read_bytes()[:-10])
    with pytest.raises(VolumeFormatError, match="truncated"):
        read_volume(short)


def test_normalize_hu():
    np.testing.assert_array_equal(normalize_hu([-1000, 0, 3000, -5000]), [0.0, 0.5, 1.0, 0.0])


def test_synthesize_examples():
    vol, labels, mask = synthesize(ClinicalRecord("left", "T1", "N0", "breast-conserving"), 4, GRID)
    assert mask.any() and not mask[:, : GRID[1] // 2].any()
    np.testing.assert_array_equal(mask, labels == LEFT_BREAST)
    assert not (mask & (labels == SKIN)).any()

    _, labels, mask = synthesize(ClinicalRecord("right", "T3", "N0", "mastectomy"), 5, GRID)
    right = np.zeros(GRID, bool)
    right[:, : GRID[1] // 2] = True
    assert mask[labels == RIGHT_NODES].all()
    assert mask[(labels == CHEST_WALL) & right].all()
    assert (labels == RIGHT_NODES).any() and (labels == CHEST_WALL).any()
    assert 0.0 <= vol.min() and vol.max() <= 1.0 and vol.dtype == np.float32


def test_synthesize_too_small():
    with pytest.raises(SynthesisError):
        synthesize(sample_record(0), 0, (8, 8, 2))


def test_labels_respect_midline():
    _, labels, _ = synthesize(sample_record(0), 9, GRID)
    half = GRID[1] // 2
    assert not np.isin(labels[:, :half], (LEFT_BREAST, LEFT_NODES)).any()
    assert not np.isin(labels[:, half:], (RIGHT_BREAST, RIGHT_NODES)).any()
    assert all((labels == c).any() for c in range(1, 7))


@settings(max_examples=40, deadline=None)
@given(records, st.integers(0, 10**6))
def test_mask_matches_ruleset_oracle(r, seed):
    _, labels, mask = synthesize(r, seed, GRID)
    np.testing.assert_array_equal(mask, ruleset_mask(r.laterality, r.t_stage, r.n_stage, r.surgery, labels))


@settings(max_examples=25, deadline=None)
@given(records, st.integers(0, 10**6))
def test_laterality_flip_mirrors_mask(r, seed):
    _, _, a = synthesize(r.replace(laterality="left"), seed, GRID)
    _, _, b = synthesize(r.replace(laterality="right"), seed, GRID)
    np.testing.assert_array_equal(a, b[:, ::-1, :])


def test_halves_statistically_indistinguishable():
    diffs = []
    for seed in range(40):
        vol, _, _ = synthesize(sample_record(seed), seed, GRID)
        left, right = vol[:, GRID[1] // 2:], vol[:, : GRID[1] // 2][:, ::-1]
        diffs.append((left.mean() - right.mean(), left.var() - right.var()))
    d = np.array(diffs)
    # only the per-voxel noise differs between halves
    n = left.size
    assert np.abs(d[:, 0]).max() < 5 * phantom.NOISE_SIGMA / np.sqrt(n) * np.sqrt(2)
    assert abs(d[:, 0].mean()) < 3 * phantom.NOISE_SIGMA / np.sqrt(n * len(d)) * np.sqrt(2)
    assert abs(d[:, 1].mean()) < 1e-3


def test_generate_dataset(tmp_path):
    manifest = phantom.generate_dataset(tmp_path / "d", 3, 7, GRID)
    entries = phantom.read_manifest(manifest)
    assert [e.case_id for e in entries] == ["case_0000", "case_0001", "case_0002"]
    for e in entries:
        r = phantom.read_record(e.record)
        labels = read_volume(e.labels)[0]
        np.testing.assert_array_equal(read_volume(e.mask)[0], ruleset_mask(r.laterality, r.t_stage, r.n_stage, r.surgery, labels))
    again = phantom.generate_dataset(tmp_path / "e", 3, 7, GRID)
    for a, b in zip(entries, phantom.read_manifest(again)):
        assert a.volume.read_bytes() == b.volume.read_bytes()
