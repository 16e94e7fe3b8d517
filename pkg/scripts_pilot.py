"""Pilot runs for the two empirical acceptance criteria (not shipped)."""
import os
for v in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(v, "1")
import time
import numpy as np
from scipy import stats

from delayrl.envs import ContinuousOneDWorld, PointMass, DelayedTask, RandomPolicy
from delayrl.delay_channel import DelayProcess
from delayrl.agents import Hyperparams, make_agent, train, evaluate

t0 = time.time()

# --- criterion 9 pilot: Markov violation on delayed OneDWorld (a=0, b=1)
env = ContinuousOneDWorld(num_cells=7, horizon=50, reward_mode="center")
task = DelayedTask(env, DelayProcess.constant(0), DelayProcess.constant(1), 0, 1)
hp = Hyperparams(warmup_samples=1000, hidden=(32, 32), eval_every=5000, eval_episodes=3)
STEPS = 15000

def episode_returns(policy_like, episodes, rng, deterministic):
    out = []
    for _ in range(episodes):
        ch = task.channel_factory()()
        x = ch.reset(rng)
        ret = 0.0
        for _ in range(200):
            a = policy_like.act_deterministic(x) if deterministic else policy_like.act(x, rng)
            x, r, done = ch.step(a, rng)
            ret += r
            if done:
                break
        out.append(ret)
    return np.array(out)

for seed in (0, 1, 2):
    naive = make_agent("sac-naive", task, hp, np.random.default_rng([seed, 1]))
    train(task.channel_factory(), naive, hp, STEPS, seed)
    aug = make_agent("sac", task, hp, np.random.default_rng([seed, 2]))
    train(task.channel_factory(), aug, hp, STEPS, seed)
    rng = np.random.default_rng([seed, 99])
    rand_r = episode_returns(RandomPolicy(1), 80, rng, False)
    naive_r = episode_returns(naive, 40, rng, False)
    aug_r = episode_returns(aug, 40, rng, True)
    tstat, pval = stats.ttest_ind(naive_r, rand_r, equal_var=False)
    se = np.sqrt(aug_r.var(ddof=1) / aug_r.size + rand_r.var(ddof=1) / rand_r.size)
    print(f"[c9 seed {seed}] random {rand_r.mean():.2f}  naive {naive_r.mean():.2f} "
          f"(p={pval:.3f})  aug {aug_r.mean():.2f} "
          f"(z={(aug_r.mean()-rand_r.mean())/se:.1f})  ({time.time()-t0:.0f}s)", flush=True)

# --- criterion 8 pilot: PointMass alpha=2, beta=3, short runs
pm = PointMass(dt=0.1, horizon=200, goal=0.5)
task8 = DelayedTask(pm, DelayProcess.constant(2), DelayProcess.constant(3), 2, 3)
hp8 = Hyperparams(eval_every=5000, eval_episodes=3, warmup_samples=5000)
for seed in (0, 1):
    for agent_id in ("dcac", "sac"):
        agent = make_agent(agent_id, task8, hp8, np.random.default_rng([seed, 3]))
        rows = train(task8.channel_factory(), agent, hp8, 30000, seed)
        print(f"[c8 seed {seed}] {agent_id}: " +
              " ".join(f"{r[1]:.2f}" for r in rows) + f"  ({time.time()-t0:.0f}s)", flush=True)
