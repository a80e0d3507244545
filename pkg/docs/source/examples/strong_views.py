import numpy as np

import gait_ssa

walk = gait_ssa.generate_synthetic(gait_ssa.SynthConfig(n_samples=4, n_actors=1)).data[0]

for name, strong in sorted(gait_ssa.STRONG_PRESETS.items()):
    plan = gait_ssa.AugmentationPlan(strong=strong)
    s1, s2, s3 = gait_ssa.make_views(walk, seed=7, plan=plan)
    zeroed = np.mean(np.all(s3 == 0, axis=-1))
    print(
        f"{name:>5}: general views differ by {np.abs(s1 - s2).mean():.4f}, "
        f"{zeroed:.1%} of strong joints masked"
    )
