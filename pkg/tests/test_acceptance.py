"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import io
import json
import time
from contextlib import redirect_stdout

import numpy as np
import pytest

from amttrack import check
from amttrack.backbone import random_weights
from amttrack.boxes import giou_array, iou_array
from amttrack.cli import main
from amttrack.config import TrackerConfig
from amttrack.events import EventStream, decode_ppm, encode_ppm, format_events, parse_events, write_events
from amttrack.exceptions import FormatError
from amttrack.hopfield import retrieve_step
from amttrack.memory import TemplateEntry, TemplateMemory
from amttrack.metrics import SequenceResult, evaluate
from amttrack.sequence import Sequence, read_predictions, write_predictions
from amttrack.synth import MORPH_SPAN, easy_scene, generate, morph_scene
from amttrack.tracker import track_sequence
from amttrack.weights_io import decode_ntw, encode_ntw

from test_metrics import HAND_GT, HAND_NPR, HAND_PR, HAND_PRED, HAND_SR


@pytest.fixture
def report(capsys):
    def emit(number, name, passed, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if passed else 'FAIL'}] criterion {number} {name}: {detail}")
        assert passed, detail
    return emit


def test_c01_energy_descent(report):
    t0 = time.perf_counter()
    worst = check.energy_violations(seed=0, trials=1000)
    dt = time.perf_counter() - t0
    report(1, "energy descent", worst <= 1e-9 and dt < 10.0,
           f"max E increase {worst:.2e} (<= 1e-9), {dt:.2f}s (< 10s)")


def _separated_patterns(rng, n=32, d=64, max_cos=0.5):
    rows = []
    while len(rows) < n:
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        if all(v @ r <= max_cos for r in rows):
            rows.append(v)
    return np.array(rows)


def test_c02_retrieval_exactness(report):
    hits, worst_mean = 0, 0.0
    for trial in range(100):
        rng = np.random.default_rng(trial)
        Y = _separated_patterns(rng)
        q = Y[rng.integers(32)] + 0.2 * rng.standard_normal(64) / 8.0
        nearest = Y[np.argmax(Y @ q / np.linalg.norm(q))]
        r = retrieve_step(Y, q, 20.0)
        hits += int(r @ nearest / np.linalg.norm(r) >= 0.99)
        worst_mean = max(worst_mean, float(np.max(np.abs(retrieve_step(Y, q, 1e-8) - Y.mean(axis=0)))))
    report(2, "retrieval exactness", hits == 100 and worst_mean <= 1e-6,
           f"beta=20 hits {hits}/100, beta=1e-8 max |r - mean| {worst_mean:.1e}")


def test_c03_attention_equivalence(report):
    worst = max(check.attention_errors(seed=0, trials=100))
    report(3, "attention equivalence", worst <= 1e-10, f"max abs diff {worst:.1e} over 100 shapes")


def test_c04_gradients(report):
    rng = np.random.default_rng(0)
    worst = {}
    for _ in range(20):
        errs = {**check.assoc_grad_errors(rng, h=1e-4), **check.box_grad_errors(rng, h=1e-5)}
        for k, v in errs.items():
            worst[k] = max(worst.get(k, 0.0), v)
    report(4, "gradient correctness", all(v <= 1e-5 for v in worst.values()),
           ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def test_c05_box_oracles(report):
    rng = np.random.default_rng(0)
    n = 10_000
    a = np.column_stack([rng.uniform(-50, 50, (n, 2)), rng.uniform(0.5, 40, (n, 2))])
    b = np.column_stack([rng.uniform(-50, 50, (n, 2)), rng.uniform(0.5, 40, (n, 2))])
    shift = rng.uniform(-100, 100, (n, 2))
    sa, sb = a.copy(), b.copy()
    sa[:, :2] += shift
    sb[:, :2] += shift
    i_ab, g_ab = iou_array(a, b), giou_array(a, b)
    ok = {
        "identical": np.all(iou_array(a, a) == 1.0) and np.allclose(giou_array(a, a), 1.0, atol=1e-12),
        "touching": np.all(iou_array(a, a + [[1, 0, 0, 0]] * a[:, 2:3]) <= 1e-12),
        "symmetric": np.allclose(i_ab, iou_array(b, a), atol=1e-12) and np.allclose(g_ab, giou_array(b, a), atol=1e-12),
        "translation": np.allclose(i_ab, iou_array(sa, sb), atol=1e-9) and np.allclose(g_ab, giou_array(sa, sb), atol=1e-9),
        "giou<=iou": np.all(g_ab <= i_ab + 1e-12),
    }
    report(5, "GIoU/IoU oracles", all(ok.values()), ", ".join(f"{k} {'ok' if v else 'BAD'}" for k, v in ok.items()))


def _random_trace(rng):
    d = int(rng.integers(2, 9))
    theta = float(rng.uniform(0.05, 0.95))
    mem = TemplateMemory(TemplateEntry(rng.standard_normal(d), 1.0, 0, static=True),
                         st_capacity=int(rng.integers(1, 6)), lt_capacity=int(rng.integers(2, 6)),
                         st_interval=int(rng.integers(1, 3)), lt_interval=int(rng.integers(1, 4)),
                         theta=theta, tau=float(rng.uniform(0.1, 0.8)), reinit_interval=int(rng.integers(10, 60)))
    worst, inserts = -np.inf, 0
    for n in range(1, 41):
        score = float(rng.uniform())
        cand = TemplateEntry(rng.standard_normal(d), score, n) if mem.wants_candidate(score) else None
        rec = mem.step(score, cand)
        if rec.lt_action.startswith("insert"):
            inserts += 1
            E = np.stack([e.embedding for e in mem.LT[1:]])
            S = E @ E.T
            off = S[~np.eye(len(E), dtype=bool)]
            if off.size:
                worst = max(worst, float(off.max()) - theta)
    return worst, inserts


def test_c06_memory_state_machine(report):
    fixture = check.load_trace_fixture()
    snaps, _ = check.replay_trace(fixture)
    exact = all(snaps[int(n)]["ST"] == w["ST"] and snaps[int(n)]["LT"] == w["LT"]
                for n, w in fixture["expected"].items())
    rng = np.random.default_rng(0)
    worst, inserts = -np.inf, 0
    for _ in range(10_000):
        w, k = _random_trace(rng)
        worst, inserts = max(worst, w), inserts + k
    report(6, "template memory state machine", exact and worst < 0,
           f"checkpoints 10/20/40/100 {'match' if exact else 'DIFFER'}; "
           f"10000 traces, {inserts} insertions, max (sim - theta) {worst:.2e} (< 0)")


def test_c07_metrics(report):
    rng = np.random.default_rng(0)
    gt = np.column_stack([rng.uniform(30, 300, (100, 2)), rng.uniform(5, 60, (100, 2))])
    perfect = evaluate([SequenceResult("perfect", gt, gt)])
    hand = evaluate([SequenceResult("hand", HAND_PRED, HAND_GT)])
    wild = [list(p) for p in HAND_PRED]
    wild[2] = [999.0, 999.0, 1.0, 1.0]  # a prediction on the absent frame
    excl = evaluate([SequenceResult("hand", wild, HAND_GT)])
    ok_perfect = perfect.sr >= 0.99 and perfect.pr == 1.0 and perfect.npr == 1.0
    diffs = [abs(hand.sr - HAND_SR), abs(hand.pr - HAND_PR), abs(hand.npr - HAND_NPR)]
    ok_excl = (excl.sr, excl.pr, excl.npr) == (hand.sr, hand.pr, hand.npr) and hand.sequences["hand"].graded_frames == 4
    report(7, "metrics oracle", ok_perfect and max(diffs) <= 1e-12 and ok_excl,
           f"perfect SR {perfect.sr:.3f} PR {perfect.pr} NPR {perfect.npr}; hand max diff {max(diffs):.1e}; "
           f"absent frame excluded {ok_excl}")


def _mean_iou(boxes, gt, frames=None):
    keep = ~np.all(gt == 0, axis=1)
    if frames is not None:
        mask = np.zeros(len(gt), bool)
        mask[frames] = True
        keep &= mask
    return float(iou_array(boxes[keep], gt[keep]).mean())


@pytest.fixture(scope="module")
def e2e_sequences(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e")
    t0 = time.perf_counter()
    easy = [generate(easy_scene(s), 300, root / f"easy_{s:02d}") for s in range(10)]
    morph = generate(morph_scene(0), 180, root / "morph")
    return easy, morph, time.perf_counter() - t0


def test_c08_end_to_end_tracking(report, e2e_sequences):
    easy, morph, gen_time = e2e_sequences
    t0 = time.perf_counter()
    results, ious = [], []
    for d in easy:
        seq = Sequence.open(d)
        boxes, scores, _ = track_sequence(seq)
        results.append(SequenceResult(seq.name, boxes, seq.groundtruth, scores))
        ious.append(_mean_iou(boxes, seq.groundtruth))
    pr = evaluate(results).pr
    mseq = Sequence.open(morph)
    on, _, _ = track_sequence(mseq, TrackerConfig(atu=True))
    off, _, _ = track_sequence(mseq, TrackerConfig(atu=False))
    span = np.arange(MORPH_SPAN[0], MORPH_SPAN[1] + 1)
    on_all, off_all = _mean_iou(on, mseq.groundtruth), _mean_iou(off, mseq.groundtruth)
    on_span, off_span = _mean_iou(on, mseq.groundtruth, span), _mean_iou(off, mseq.groundtruth, span)
    track_time = time.perf_counter() - t0
    total = gen_time + track_time
    mean_iou = float(np.mean(ious))
    ok = mean_iou >= 0.5 and pr >= 0.8 and on_all >= off_all - 0.01 and on_span > off_span and total < 120.0
    report(8, "end-to-end identity tracking", ok,
           f"easy mean IoU {mean_iou:.3f} (>= 0.5), PR {pr:.3f} (>= 0.8); morph ATU on/off "
           f"overall {on_all:.3f}/{off_all:.3f}, span {on_span:.3f}/{off_span:.3f}; "
           f"runtime {total:.1f}s (generation {gen_time:.1f}s + tracking {track_time:.1f}s, < 120s)")


def test_c09_encoded_defaults(report):
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = main(["--show-config"])
    shown = {k: json.loads(v) for k, v in (ln.split("=", 1) for ln in buf.getvalue().splitlines())}
    expected = {
        "beta_cross": 0.25,
        "beta_template": 4.0,
        "hopfield_layers": [5, 8, 11],
        "preceding_layers": {"5": [1, 3], "8": [4, 6], "11": [7, 9]},
        "lambda_l1": 5.0,
        "lambda_iou": 2.0,
        "template_size": 128,
        "search_size": 256,
        "n_z": 64,
        "n_x": 256,
    }
    bad = {k: shown.get(k) for k, v in expected.items() if shown.get(k) != v}
    report(9, "encoded defaults", code == 0 and not bad,
           "all 10 values match" if not bad else f"mismatches {bad}")


def test_c10_format_round_trips(report, tmp_path):
    rng = np.random.default_rng(0)
    n = 500
    ev = EventStream(np.sort(rng.integers(0, 10**6, n)), rng.integers(0, 346, n), rng.integers(0, 260, n),
                     rng.choice([-1, 1], n))
    write_events(tmp_path / "e.csv", ev)
    back = parse_events(tmp_path / "e.csv")
    ok_ev = (all(np.array_equal(getattr(back, f), getattr(ev, f)) for f in ("t", "x", "y", "p"))
             and format_events(back) == (tmp_path / "e.csv").read_text())
    img = rng.integers(0, 256, (17, 23, 3), dtype=np.uint8)
    data = encode_ppm(img)
    ok_ppm = np.array_equal(decode_ppm(data), img) and encode_ppm(decode_ppm(data)) == data
    tensors = random_weights(TrackerConfig(embed_dim=16, num_heads=2, num_layers=2, hopfield_layers=[1],
                                           preceding_layers={1: [0]})).to_tensors()
    tensors = {k: v.astype(np.float32) for k, v in tensors.items()}
    blob = encode_ntw(tensors)
    dec = decode_ntw(blob)
    ok_ntw = (all(np.array_equal(dec[k], tensors[k]) for k in tensors)
              and encode_ntw({k: v.astype(np.float32) for k, v in dec.items()}) == blob)
    boxes, scores = rng.uniform(0, 300, (50, 4)), rng.uniform(size=50)
    write_predictions(tmp_path / "p.txt", boxes, scores)
    b2, s2 = read_predictions(tmp_path / "p.txt")
    ok_pred = np.array_equal(b2, boxes) and np.array_equal(s2, scores)
    corrupt = bytearray(blob)
    corrupt[-3] ^= 0x10
    closed = []
    for bad in (bytes(corrupt), blob[:-8], b"XXXXXXXX" + blob[8:]):
        try:
            decode_ntw(bad)
            closed.append(False)
        except FormatError:
            closed.append(True)
    ok = ok_ev and ok_ppm and ok_ntw and ok_pred and all(closed)
    report(10, "format round-trips", ok,
           f"events {ok_ev}, ppm {ok_ppm}, ntw {ok_ntw}, predictions {ok_pred}, corrupt ntw rejected {all(closed)}")
