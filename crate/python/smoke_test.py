"""End-to-end smoke test for the i2l_py extension module.

Build the module and point PYTHONPATH at it before running:

    cargo build -p i2l-py
    cp target/debug/libi2l_py.so target/debug/i2l_py.so
    PYTHONPATH=target/debug python3 python/smoke_test.py
"""

import math
import tempfile
from pathlib import Path

import i2l_py

def main() -> None:
    root = Path(tempfile.mkdtemp(prefix="i2l_py_smoke_"))

    env = i2l_py.Env("pendulum", gravity_scale=0.5)
    assert (env.state_dim, env.action_dim, env.episode_length) == (3, 1, 200)
    obs = env.reset(seed=0)
    assert len(obs) == 3
    assert abs(obs[0] ** 2 + obs[1] ** 2 - 1.0) < 1e-9, "cos/sin observation"
    ret = 0.0
    for _ in range(env.episode_length):
        obs, reward, done = env.step([0.3])
        ret += reward
    assert done and ret < 0.0
    print(f"env rollout: return {ret:.2f}")

    expert_dir = root / "expert"
    iters, expert_return = i2l_py.train_expert(
        "pendulum", expert_dir, seed=1, steps=6000
    )
    demo = expert_dir / "expert.demo"
    states = i2l_py.load_demo(demo)
    assert iters == 3 and len(states) == 1000 and len(states[0]) == 3
    print(f"expert: {iters} iterations, return {expert_return:.2f}, demo {len(states)} states")

    # Buffer snapshots land every 10 iterations, so run exactly 10.
    run_dir = root / "i2l"
    iters, imitator_return = i2l_py.train_imitate(
        "i2l", "pendulum", demo, run_dir,
        seed=2, steps=20000, buffer_capacity=2,
        gravity_scale=0.5, snapshots=True,
    )
    assert iters == 10
    print(f"i2l: {iters} iterations, return {imitator_return:.2f}")

    policy = i2l_py.Policy.load(run_dir / "policy.ckpt")
    action = policy.act(obs)
    assert len(action) == 1 and math.isfinite(action[0])
    lp = policy.log_prob(obs, action)
    assert lp >= policy.log_prob(obs, [action[0] + 0.5]), "mean maximizes density"
    assert math.isfinite(policy.entropy())

    critic = i2l_py.Critic.load(run_dir / "critic.ckpt")
    batch = states[:50]
    assert critic.w1(batch, batch) == 0.0
    assert math.isfinite(critic.score(states[0]))

    reward = i2l_py.LearnedReward.load(run_dir / "disc.ckpt")
    assert reward.input_dim == 4
    f = reward.f(states[0] + [0.0])
    d = reward.d(states[0] + [0.0], lp)
    assert math.isfinite(f) and 0.0 < d < 1.0

    buffer = i2l_py.Buffer.load(run_dir / "buffer.ckpt")
    assert len(buffer) <= buffer.capacity == 2
    assert len(buffer.states()) == len(buffer) * 200
    assert buffer.mean_score is None or math.isfinite(buffer.mean_score)
    print(f"artifacts: buffer holds {len(buffer)} trajectories, scores {buffer.scores}")

    expert_f, rows = i2l_py.reward_gap(
        run_dir, expert_dir / "expert.demo-sa", scales=[1.0], rounds=2, seed=3
    )
    assert rows and all(len(gaps) == 1 for _, _, gaps in rows)
    print(f"gap rows: {[(it, round(g[0][1], 4)) for it, _, g in rows]}")

    print("smoke test passed")

if __name__ == "__main__":
    main()
