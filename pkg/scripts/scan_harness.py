"""Training-cell scan for the experiment defaults: runs the full experiment at
frames_per_walk=1 (streams cost nothing to the scan objectives) and prints the
calibration metrics. argv: s_margin s_lr s_seed [t_margin t_lr t_seed]."""
import sys
import time

from mascara import harness as hz
from mascara.embedder import TrainConfig

sm, slr, ss = float(sys.argv[1]), float(sys.argv[2]), int(sys.argv[3])
tm = float(sys.argv[4]) if len(sys.argv) > 4 else 0.55
tlr = float(sys.argv[5]) if len(sys.argv) > 5 else 0.02
ts = int(sys.argv[6]) if len(sys.argv) > 6 else 29

t0 = time.time()
cfg = hz.ExperimentConfig(
    frames_per_walk=1,
    surrogate_train=TrainConfig(margin=sm, learning_rate=slr, seed=ss),
    target_train=TrainConfig(margin=tm, learning_rate=tlr, seed=ts))
rep = hz.run_experiment(cfg)
inc = [r for r in rep.participants if not r.excluded]
print(f"cell s[m{sm}/lr{slr}/s{ss}] t[m{tm}/lr{tlr}/s{ts}]: "
      f"excluded={len(rep.excluded_ids)} "
      f"dodge={rep.surrogate_dodge_rate:.2f} "
      f"adv_dodge={rep.adversarial_target_dodge_rate:.2f} "
      f"rnd_dodge={rep.random_target_dodge_rate:.2f} "
      f"rnd_ident={rep.random_identified_rate:.2f} "
      f"int_adv={rep.mean_adversarial_intensity:.2f} "
      f"int_rnd={rep.mean_random_intensity:.2f} "
      f"percap_ok={all(r.random_intensity >= r.adversarial_intensity for r in inc)} "
      f"{time.time()-t0:.0f}s")
