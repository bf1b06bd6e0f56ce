import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amttrack.check import load_trace_fixture, replay_trace
from amttrack.exceptions import DegenerateInputError, ParameterError, ShapeError
from amttrack.memory import TemplateEntry, TemplateMemory, assemble, enhance


def unit(i, d=8):
    e = np.zeros(d)
    e[i] = 1.0
    return e


def entry(vec, n, score=0.9):
    return TemplateEntry(np.asarray(vec, float), score, n)


def small_memory(**kw):
    params = dict(st_capacity=3, lt_capacity=3, st_interval=1, lt_interval=1, theta=0.5, tau=0.7,
                  reinit_interval=1000)
    params.update(kw)
    return TemplateMemory(TemplateEntry(unit(0), 1.0, 0, static=True), **params)


def test_scripted_trace_checkpoints():
    fixture = load_trace_fixture()
    snaps, mem = replay_trace(fixture)
    for n, want in fixture["expected"].items():
        got = snaps[int(n)]
        assert (got["ST"], got["LT"]) == (want["ST"], want["LT"]), n
    assert mem.n == len(fixture["scores"])


def test_trace_records_actions():
    snaps, mem = replay_trace(load_trace_fixture())
    by_n = {r.n: r for r in mem.trace}
    assert by_n[20].lt_action == "insert"
    assert by_n[40].lt_action == "reject"  # cos to the static template is 0.8
    assert by_n[50].st_action == "none"  # low score on an update frame
    assert by_n[60].st_action == "push_evict"
    assert by_n[10].div_scale == pytest.approx(1.0)


def test_low_score_frames_leave_memory_untouched():
    mem = small_memory()
    for n in range(1, 6):
        assert not mem.wants_candidate(0.7)  # strictly greater than tau is required
        mem.step(0.7)
    assert mem.snapshot() == {"n": 5, "ST": [0], "LT": [0]}


def test_missing_candidate_is_an_error():
    mem = small_memory()
    with pytest.raises(ParameterError):
        mem.step(0.9)


def test_st_fifo_eviction():
    mem = small_memory(lt_interval=1000)
    for n in range(1, 6):
        mem.step(0.9, entry(unit(n % 8), n))
    assert mem.snapshot()["ST"] == [3, 4, 5]


def test_lt_eviction_spares_static_and_drops_most_redundant():
    mem = small_memory(theta=0.9)
    mem.step(0.9, entry(unit(1), 1))
    mem.step(0.9, entry(unit(2), 2))
    assert mem.snapshot()["LT"] == [0, 1, 2]
    # similar to entry 1: entry 1 becomes the most redundant and is evicted
    mem.step(0.9, entry(0.6 * unit(1) + 0.8 * unit(3), 3))
    assert mem.snapshot()["LT"] == [0, 2, 3]


def test_lt_eviction_ties_go_to_oldest():
    mem = small_memory(theta=0.9)
    for n in (1, 2, 3):
        mem.step(0.9, entry(unit(n), n))
    assert mem.snapshot()["LT"] == [0, 2, 3]


def test_reinit_resets_long_term_store():
    mem = small_memory(reinit_interval=4, theta=0.9)
    for n in (1, 2, 3):
        mem.step(0.9, entry(unit(n), n))
    rec = mem.step(0.3)
    assert rec.lt_action == "reinit"
    assert mem.snapshot()["LT"] == [0]
    assert mem.snapshot()["ST"] == [1, 2, 3]  # ST is not reset


def test_resample_picks_newest_st_and_most_diverse_lt():
    mem = small_memory(lt_capacity=5, st_capacity=5, theta=0.9)
    mem.step(0.9, entry(unit(1), 1))
    mem.step(0.9, entry(0.5 * unit(1) + np.sqrt(0.75) * unit(2), 2))
    lt, st_ = mem.resample()
    assert st_.frame_idx == 2
    assert lt.frame_idx == 0  # orthogonal to both others, lowest mean similarity


def test_resample_with_static_only():
    mem = small_memory()
    lt, st_ = mem.resample()
    assert lt.static and st_.static


def test_write_trace(tmp_path):
    _, mem = replay_trace(load_trace_fixture())
    mem.write_trace(tmp_path / "t.jsonl")
    lines = (tmp_path / "t.jsonl").read_text().splitlines()
    assert len(lines) == mem.n


def test_entry_validation():
    with pytest.raises(DegenerateInputError):
        TemplateEntry(np.zeros(4))
    with pytest.raises(Exception):
        TemplateEntry(np.ones(4), score=1.5)
    assert np.linalg.norm(TemplateEntry(np.full(4, 3.0)).embedding) == pytest.approx(1.0)
    with pytest.raises(ParameterError):
        small_memory(st_capacity=0)


@settings(max_examples=40)
@given(st.integers(0, 2**31), st.floats(0.05, 0.95))
def test_lt_entries_stay_pairwise_diverse(seed, theta):
    rng = np.random.default_rng(seed)
    mem = small_memory(st_capacity=4, lt_capacity=4, st_interval=2, lt_interval=4, theta=theta,
                       reinit_interval=37)
    for n in range(1, 120):
        score = float(rng.uniform())
        cand = entry(rng.standard_normal(8), n, score) if mem.wants_candidate(score) else None
        mem.step(score, cand)
        assert len(mem.ST) <= 4 and len(mem.LT) <= 4
        assert mem.LT[0].static
        E = np.stack([e.embedding for e in mem.LT])
        S = E @ E.T
        off = S[~np.eye(len(E), dtype=bool)]
        assert np.all(off < theta + 1e-12)


def test_enhance_and_assemble(rng):
    tok = {"rgb": rng.standard_normal((4, 6))}
    a = TemplateEntry(np.ones(3), tokens=tok)
    b = TemplateEntry(np.ones(3), tokens={"rgb": tok["rgb"] + 1})
    same = enhance(a, b)
    assert same[0] is a and same[1] is b
    keys = rng.standard_normal((5, 6))
    la, lb = enhance(a, b, keys, beta=2.0)
    assert la.tokens["rgb"].shape == (4, 6)
    w = np.exp(2.0 * tok["rgb"] @ keys.T)
    np.testing.assert_allclose(la.tokens["rgb"], (w / w.sum(1, keepdims=True)) @ keys, rtol=1e-10)
    block = assemble(a, b, a, "rgb")
    np.testing.assert_array_equal(block[4:8], tok["rgb"])
    np.testing.assert_array_equal(block[8:], tok["rgb"] + 1)
    with pytest.raises(ShapeError):
        assemble(a, TemplateEntry(np.ones(3), tokens={"rgb": np.ones((4, 5))}), a, "rgb")
