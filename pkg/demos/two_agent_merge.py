"""Two agents map the same block from opposite sides and meet halfway.

Until their paths cross, each agent grows its own submap in its own gauge.
Once enough frames register into both submaps, RANSAC over the shared images
estimates the similarity transform between the two and they are fused. We
check that transform against the one implied by ground truth.

Run:  python demos/two_agent_merge.py     (about a minute and a half)
"""
import numpy as np

from otfsfm.engine import Engine, EngineConfig
from otfsfm.geometry import estimate_similarity_umeyama
from otfsfm.io.metrics import evaluate
from otfsfm.rotation import rotation_angle
from otfsfm.synthstream import generate, render_packets, two_agent_spec

scene = generate(two_agent_spec())
engine = Engine(EngineConfig())
rec, report = engine.run(render_packets(scene))

timeline = report.submap_timeline
print("submaps over time:", "".join(str(min(n, 9)) for n in timeline))


def gauge_to_truth(centers):
    ids = list(centers)
    return estimate_similarity_umeyama(np.array([centers[i] for i in ids]),
                                       np.array([scene.frame(i).pose.center for i in ids]))


for e in engine.registry.events:
    truth = gauge_to_truth(e.reference_centers).inverse().compose(
        gauge_to_truth(e.source_centers))
    rot = np.degrees(rotation_angle(e.transform.R @ truth.R.T))
    print(f"frame {e.frame_index}: submap {e.source} -> {e.reference} "
          f"from {e.n_inlier_images}/{e.n_shared} shared images; "
          f"error {rot:.3f} deg, scale {100 * abs(e.transform.scale / truth.scale - 1):.3f}%")

m = evaluate(rec, {f.image_id: f.pose for f in scene.frames}, engine.keypoints)
print(f"final: {report.n_submaps} submap(s), {m.n_images} images, {m.n_points} points, "
      f"MRE {m.mre:.3f} px, MRD {m.mrd_deg:.3f} deg, ATE {m.ate:.4f}")
