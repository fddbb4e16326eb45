"""Which cameras does a new image's local adjustment move, and how much?

We index one agent's descriptors, take the newest frame as the root, and
print its association tree: layer, parent, descriptor distance path and the
resulting BA weight. Deeper images get smaller weights (stronger damping);
the deepest layer is held FIXED and anchors the gauge.

Run:  python demos/association_weights.py
"""
from otfsfm.association import build_tree, compute_weights, is_fixed
from otfsfm.retrieval import HnswIndex, HnswParams
from otfsfm.synthstream import AgentSpec, SceneSpec, generate, render_packets

scene = generate(SceneSpec(agents=[AgentSpec(40, 0, 100)], seed=3))
packets = render_packets(scene)

index = HnswIndex(256, HnswParams(max_elements=len(packets)))
for p in packets:
    index.insert(p.global_descriptor(), p.frame_id)


def retrieve(image_id, fanout=3):
    hits = index.query_top_n(index.vector(image_id), fanout + 1)
    return [(i, d) for i, d in hits if i != image_id][:fanout]


root = packets[-1].frame_id
tree = build_tree(root, retrieve, depth=3, fanout=3)
weights = {w.image_id: w.weight for w in compute_weights(tree)}

print(f"root {root}: {len(tree)} images in the tree")
print(f"{'image':>5} {'layer':>5} {'parent':>6}  path distances          weight")
for e in tree.entries():
    path = ", ".join(f"{s:.3f}" for s in e.path_distances)
    w = weights[e.image_id]
    w = "FIXED" if is_fixed(w) else f"{w:.4f}"
    print(f"{e.image_id:>5} {e.layer:>5} {e.parent:>6}  {path:<22}  {w}")
