"""Dynamics sweep: find a PointMass configuration where the 5-tick delay
dominates, so multi-step resampled backups show their advantage."""
import os
for v in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(v, "1")
import sys
import time
import numpy as np

from delayrl.envs import PointMass, DelayedTask
from delayrl.delay_channel import DelayProcess
from delayrl.agents import Hyperparams, make_agent, train

variants = {
    "A_fast":  dict(dt=0.2,  accel=2.0, max_speed=1.5, horizon=150),
    "B_sharp": dict(dt=0.15, accel=3.0, max_speed=2.0, horizon=150),
}
t0 = time.time()
hp = Hyperparams(eval_every=5000, eval_episodes=3, warmup_samples=5000)
for name, kwargs in variants.items():
    pm = PointMass(goal=0.5, **kwargs)
    task = DelayedTask(pm, DelayProcess.constant(2), DelayProcess.constant(3), 2, 3)
    for seed in (0, 1):
        for agent_id in ("dcac", "sac"):
            agent = make_agent(agent_id, task, hp,
                               np.random.default_rng([seed, 3, hash(agent_id) % 100]))
            rows = train(task.channel_factory(), agent, hp, 40000, seed)
            print(f"[{name} seed {seed}] {agent_id}: " +
                  " ".join(f"{r[1]:.2f}" for r in rows) + f"  ({time.time()-t0:.0f}s)",
                  flush=True)
