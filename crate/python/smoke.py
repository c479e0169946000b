"""Smoke test for the `slicing` extension module.

Build and install first:  pip install ./crates/py  (or `maturin develop -m crates/py/Cargo.toml`)
"""

import tempfile

import slicing

DESK = """
[grid]
resolution_mhz = 1.0
[scenario]
user_counts = [10, 10, 2]
[agent]
optimizer = "adam"
hidden = [32, 32]
"""


def main():
    assert slicing.Grid.count(10.0, 0.2, 3) == 1176
    grid = slicing.Grid(10.0, 1.0, 3)
    assert len(grid) == 36
    assert grid.equal_allocation() == [3.0, 3.0, 4.0]
    assert grid.nearest([3.2, 3.3, 3.5])[0] == [3.0, 3.0, 4.0]
    assert grid.index(grid.actions()[7]) == 7

    env = slicing.Environment(DESK)
    obs = env.reset(1)
    assert len(obs) == env.observation_dim == 3
    obs, reward, metrics = env.step([2.0, 5.0, 3.0])
    assert 0.0 <= metrics["qoe_aggregate"] <= 1.0 and reward > 0.0
    try:
        env.step([2.0, 2.0, 2.0])
    except ValueError:
        pass
    else:
        raise AssertionError("invalid allocation accepted")

    agent = slicing.Agent(DESK, kind="dnaf", seed=3)
    log = agent.train(episodes=80)
    assert len(log["rewards"]) == 80 and log["last_loss"] is not None
    allocation = agent.act(obs)
    assert abs(sum(allocation) - 10.0) < 1e-9

    with tempfile.TemporaryDirectory() as d:
        agent.save(d)
        again = slicing.Agent.load(d, DESK)
        assert again.kind == "dnaf" and again.act(obs) == allocation

    stats = slicing.traffic_stats("volte", samples=20000)
    assert abs(stats["inter_arrival_ms"]["mean"] - 80.0) < 2.0

    print(f"ok: final mean reward {log['final_mean_reward']:.4f}, allocation {allocation}")


if __name__ == "__main__":
    main()
