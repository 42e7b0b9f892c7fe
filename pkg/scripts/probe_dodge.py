"""Dodge-rate probe: train a surrogate on the 20-participant fixture and count
how many participants the default-config attack pushes past the dodge
threshold. Training cell comes from argv: margin lr seed [epochs]."""
import sys
import time

import numpy as np

import mascara.attack as atk
import mascara.frpipeline as fr
import mascara.harness as hz
import mascara.synthface as sf
from mascara.embedder import SURROGATE_SPEC, TrainConfig, embed, train

margin = float(sys.argv[1]) if len(sys.argv) > 1 else 0.2
lr = float(sys.argv[2]) if len(sys.argv) > 2 else 0.05
seed = int(sys.argv[3]) if len(sys.argv) > 3 else 0
epochs = int(sys.argv[4]) if len(sys.argv) > 4 else 8

t0 = time.time()
idents = [sf.identity_from_seed(1000 + i) for i in range(20)]
size = SURROGATE_SPEC.input_size

dataset = {}
for ident in idents:
    rng = np.random.default_rng([307, ident.seed])
    imgs = []
    for _ in range(6):
        img, lm = sf.render_identity(ident, hz._still_capture(rng))
        imgs.append(hz._aligned(img, lm, size))
    dataset[f"id{ident.seed}"] = imgs

cfg = TrainConfig(margin=margin, learning_rate=lr, seed=seed, epochs=epochs)
model, _hist = train(SURROGATE_SPEC, dataset, cfg)
print(f"trained in {time.time()-t0:.0f}s", flush=True)

bases, all_masks, positives = [], [], []
for ident in idents:
    img, lm = sf.render_identity(ident)
    bases.append(hz._aligned(img, lm, size))
    all_masks.append(sf.region_masks(fr.aligned_landmarks(lm, size), size))
    prng = np.random.default_rng([211, ident.seed, 2])
    pos = []
    for _ in range(3):
        pimg, plm = sf.render_identity(ident, hz._still_capture(prng))
        pos.append(hz._aligned(pimg, plm, size))
    positives.append(tuple(pos))

neutral_embs = [embed(model, b) for b in bases]

results = []
for i, ident in enumerate(idents):
    dists = [(fr.cosine_distance(neutral_embs[i], e), j)
             for j, e in enumerate(neutral_embs) if j != i]
    pool = [j for _, j in sorted(dists)[:8]]
    nrng = np.random.default_rng([401, i])
    neg_j = pool[int(nrng.integers(len(pool)))]

    ctx = atk.AttackContext(model=model, base_image=bases[i],
                            positives=positives[i],
                            negative_image=bases[neg_j], masks=all_masks[i])
    res = atk.run_attack(ctx, atk.AttackConfig())
    results.append(res)
    print(f"id{ident.seed}: {res.outcome} d={res.final_distance:.3f} "
          f"iters={len(res.trace)} layers={len(res.layers)}", flush=True)

dodged = sum(r.outcome == "dodged" for r in results)
mean_final = float(np.mean([r.final_distance for r in results]))
print(f"cell m{margin}/lr{lr}/s{seed}/e{epochs}: dodge {dodged}/20 "
      f"mean_final={mean_final:.3f} total {time.time()-t0:.0f}s")
