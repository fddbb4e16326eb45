import numpy as np
import pytest
from _builders import random_reconstruction

from otfsfm.errors import DatasetError
from otfsfm.io import export


@pytest.mark.parametrize("seed", range(5))
def test_text_round_trip_is_exact(seed):
    rec, kps = random_reconstruction(np.random.default_rng(seed))
    text = export.dumps(rec)
    back = export.loads(text)
    assert export.dumps(back) == text
    for i, r in rec.images.items():
        b = back.images[i]
        assert b.pose.rotation.tobytes() == r.pose.rotation.tobytes()
        assert b.pose.translation.tobytes() == r.pose.translation.tobytes()
        assert (b.agent_id, b.submap_id) == (r.agent_id, r.submap_id)
    for p, r in rec.points.items():
        assert back.points[p].xyz.tobytes() == r.xyz.tobytes()
        assert back.points[p].observations == r.observations
    assert back.cameras == rec.cameras
    assert np.array_equal(export.residuals(back, kps), export.residuals(rec, kps))


def test_sections_and_format():
    rec, _ = random_reconstruction(np.random.default_rng(9), 2, 2)
    lines = export.dumps(rec).splitlines()
    assert lines[0] == export.HEADER
    assert lines[1] == "[cameras]"
    assert lines.index("[images]") == 2 + len(rec.cameras)
    img_line = lines[lines.index("[images]") + 1].split()
    assert len(img_line) == 10
    pt_line = lines[lines.index("[points]") + 1].split()
    assert all(":" in f for f in pt_line[4:])


def test_file_round_trip(tmp_path):
    rec, _ = random_reconstruction(np.random.default_rng(3))
    export.write(rec, tmp_path / "r.txt")
    assert export.dumps(export.read(tmp_path / "r.txt")) == export.dumps(rec)


@pytest.mark.parametrize("text", [
    "[cameras]\n0 1 1 0 0 10\n",
    "[images]\n1 0 1 0 0 0 0 0 0 0\n",
    "[cameras]\n0 500 500 320 240 640 480\n[images]\n1 0 1 0 0 0 0 0 0 0\n[points]\n5 0 0 0 2:1\n",
    "[bogus]\n",
    "1 2 3\n",
])
def test_bad_exports_rejected(text):
    with pytest.raises(DatasetError):
        export.loads(text)
