import sys

import numpy as np

from pointcube.geometry import merge_clouds
from pointcube.inference import export_heatmap, part_reason
from pointcube.labels import embed_label_sets, fallback_embed
from pointcube.synth import SynthSpec, generate
from pointcube.training import TrainConfig, load_checkpoint, train

ckpt_path = sys.argv[1] if len(sys.argv) > 1 else None
prompt = 'the bottom region of the z-axis for pole-on-slab'

dataset = generate([SynthSpec(a, points=256) for a in ('slab-table', 'vertical-pole', 'pole-on-slab')], 10)
if ckpt_path:
    ckpt = load_checkpoint(ckpt_path)
else:
    # a short run only; use `pointcube train` for a real checkpoint
    embeddings = embed_label_sets(dataset.label_sets)
    ckpt = train(dataset.manifest, dataset.label_sets, embeddings, TrainConfig(epochs=5),
                 clouds=dataset.clouds).checkpoint

scene = merge_clouds([dataset.clouds['vertical-pole-000'], dataset.clouds['pole-on-slab-000']],
                     offsets=[(-1.5, 0, 0), (1.5, 0, 0)], object_id='scene')
heatmap = part_reason(scene, fallback_embed(prompt, ckpt.params.config.d_et), ckpt, prompt_text=prompt)
export_heatmap(heatmap, scene, 'scene.heatmap.json', 'scene.heatmap.ply')

best = heatmap.argmax()
print(f"Best block {best.j} at grid {tuple(best.grid)} with score {best.score:.3f}")
print("Valid block scores:", np.round(heatmap.scores[~np.isnan(heatmap.scores)], 3))
