import numpy as np
import pytest
from sklearn.base import clone

from amttrack.config import TrackerConfig
from amttrack.exceptions import InitError
from amttrack.sequence import Sequence
from amttrack.synth import Mover, SceneSpec, generate
from amttrack.tracker import AMTTracker, target_mask, track_sequence
from amttrack.boxes import BBox


@pytest.fixture(scope="module")
def seqs(tmp_path_factory):
    root = tmp_path_factory.mktemp("seqs")
    spec = SceneSpec(width=160, height=120,
                     target=Mover(size=[30.0, 30.0], waypoints=[[50.0, 60.0], [110.0, 60.0]], speed=1.5))
    return generate(spec, 24, root / "long"), generate(spec, 12, root / "short")


def test_causal_prefix(seqs):
    long_boxes, long_scores, _ = track_sequence(Sequence.open(seqs[0]))
    short_boxes, short_scores, _ = track_sequence(Sequence.open(seqs[1]))
    np.testing.assert_array_equal(long_boxes[:12], short_boxes)
    np.testing.assert_array_equal(long_scores[:12], short_scores)


def test_tracks_easy_motion(seqs):
    seq = Sequence.open(seqs[0])
    boxes, scores, tracker = track_sequence(seq)
    assert scores[0] == 1.0
    np.testing.assert_array_equal(boxes[0], seq.groundtruth[0])
    err = np.hypot(*(boxes[:, :2] - seq.groundtruth[:, :2]).T)
    assert np.all(err < 20)
    assert np.all((scores >= 0) & (scores <= 1))
    assert tracker.memory_.n == 23


def test_atu_off_leaves_memory_idle(seqs):
    _, _, tracker = track_sequence(Sequence.open(seqs[0]), TrackerConfig(atu=False))
    assert tracker.memory_.n == 0 and tracker.memory_.trace == []


def test_estimator_api():
    t = AMTTracker(TrackerConfig(tau=0.6))
    assert clone(t).get_params()["config"].tau == 0.6
    with pytest.raises(Exception):
        t.predict((np.zeros((8, 8, 3)), np.zeros((8, 8, 3))))
    with pytest.raises(InitError):
        t.fit((np.zeros((64, 64, 3)), np.zeros((64, 64, 3))), BBox(0, 0, 0, 0))


def test_target_mask_covers_box_centre_cells():
    m = target_mask(BBox(50, 50, 20, 20), 2.0, 128, 16).reshape(8, 8)
    # the box spans half the template side, i.e. the central 4 x 4 cells
    assert m.sum() == 16 and m[2:6, 2:6].all()
