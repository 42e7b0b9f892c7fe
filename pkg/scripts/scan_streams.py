"""Full-experiment measurement: orderings, alarm pattern, transfer, intensity.
argv: wear attack_threshold attack_iters [s_margin s_lr s_seed]."""
import sys
import time

import mascara.attack as atk
import mascara.harness as hz
from mascara.embedder import TrainConfig

wear = float(sys.argv[1]) if len(sys.argv) > 1 else 3.0
athr = float(sys.argv[2]) if len(sys.argv) > 2 else 0.368
ait = int(sys.argv[3]) if len(sys.argv) > 3 else 24
sm = float(sys.argv[4]) if len(sys.argv) > 4 else 0.4
slr = float(sys.argv[5]) if len(sys.argv) > 5 else 0.03
ss = int(sys.argv[6]) if len(sys.argv) > 6 else 0

hz.ENROLL_WEAR_INTENSITY = wear
t0 = time.time()
cfg = hz.ExperimentConfig(
    surrogate_train=TrainConfig(margin=sm, learning_rate=slr, seed=ss),
    attack=atk.AttackConfig(threshold=athr, max_iterations=ait))
rep = hz.run_experiment(cfg)
inc = [r for r in rep.participants if not r.excluded]

avg = rep.condition_averages
order_ok = avg["adversarial"] < avg["random"] < avg["none"]
walks = {c: [] for c in hz.CONDITIONS}
for r in inc:
    for cond in hz.CONDITIONS:
        out = r.conditions[cond]
        for cam in sorted(out.camera_alarms):
            walks[cond].append((out.camera_alarms[cam], out.recognized[cam]))
adv_alarms = sum(1 for a, _ in walks["adversarial"] if a)
none_alarms = sum(1 for a, _ in walks["none"] if a)
rnd_alarms = sum(1 for a, _ in walks["random"] if a)

print(f"config wear={wear} attack={athr}/{ait} s[m{sm}/lr{slr}/s{ss}]")
print(f"averages adv={avg['adversarial']:.4f} rnd={avg['random']:.4f} "
      f"none={avg['none']:.4f} order_ok={order_ok}")
print(f"alarms adv={adv_alarms}/{len(walks['adversarial'])} "
      f"rnd={rnd_alarms}/{len(walks['random'])} "
      f"none={none_alarms}/{len(walks['none'])}")
print(f"adv recognized per walk: {sorted(r for _, r in walks['adversarial'])}")
print(f"none recognized per walk: {sorted(r for _, r in walks['none'])}")
print(f"dodge={rep.surrogate_dodge_rate:.2f} "
      f"adv_dodge={rep.adversarial_target_dodge_rate:.2f} "
      f"rnd_dodge={rep.random_target_dodge_rate:.2f} "
      f"rnd_ident={rep.random_identified_rate:.2f}")
print(f"int_adv={rep.mean_adversarial_intensity:.2f} "
      f"int_rnd={rep.mean_random_intensity:.2f} "
      f"percap_ok={all(r.random_intensity >= r.adversarial_intensity for r in inc)} "
      f"excluded={len(rep.excluded_ids)} {time.time()-t0:.0f}s")
