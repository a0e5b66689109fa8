#!/usr/bin/env python3
"""Smoke test for the Python bindings.

Builds the extension module, loads it, and exercises the main entry points:
environment construction, interactive training, regret accounting, the
reduction inequality, a verification suite, and a config-driven experiment.
Prints OK and exits 0 when everything holds.
"""

import json
import shutil
import subprocess
import sys
import sysconfig
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def build_and_import():
    subprocess.run(
        ["cargo", "build", "-p", "imil-py", "--release"], cwd=REPO, check=True
    )
    built = REPO / "target" / "release" / "libimil_py.so"
    suffix = sysconfig.get_config_var("EXT_SUFFIX") or ".so"
    stage = Path(tempfile.mkdtemp(prefix="imil-py-"))
    shutil.copy2(built, stage / f"imil_py{suffix}")
    sys.path.insert(0, str(stage))
    import imil_py

    return imil_py


def main():
    m = build_and_import()

    # Environment, expert, class.
    mdp = m.Mdp.random([3, 3, 3], 2, seed=7)
    assert mdp.state_count() == 9 and mdp.horizon() == 3 and mdp.actions() == 2
    expert = mdp.optimal_policy()
    cls = m.PolicyClass.random_tables(mdp.state_count(), mdp.actions(), 12, seed=8)
    assert len(cls) == 12
    j_expert = mdp.expected_cost(expert)
    d = mdp.visitation(expert)
    assert abs(sum(d) - 1.0) < 1e-9, "visitation sums to one"

    # Interactive training plus regret accounting.
    result = m.run(mdp, expert, cls, algo="dagger", rounds=25, samples_per_round=10, seed=0)
    assert result.rounds() == 25
    assert result.expert_queries() == 25 * 10
    ledger = m.regret_ledger(mdp, expert, cls, result, basis="exact")
    assert ledger.final_regret >= -1e-9
    assert len(ledger.rows) == 25

    # Round-trip the run record through JSON.
    again = m.RunResult.from_json(result.to_json())
    assert again.final_members() == result.final_members()

    # Perturbed ensemble needs a covering distribution.
    d0 = m.Covering.visitation_mixture(mdp, cls)
    assert abs(sum(d0.pmf()) - 1.0) < 1e-9
    inv_sigma, infinite = m.smoothness(mdp, cls, d0, mixture_samples=32, seed=1)
    assert inv_sigma >= 1.0 and not infinite
    ens = m.run(
        mdp, expert, cls, algo="mftpl-p", rounds=25, samples_per_round=10,
        ensemble_size=5, poisson=50.0, d0=d0, seed=0,
    )
    assert len(ens.members(1)) == 5

    # The performance gap obeys its regret bound on both runs.
    for r in (result, ens):
        check = m.reduction_check(mdp, expert, cls, r)
        assert check.holds, f"gap {check.avg_policy_gap} vs bound {check.bound}"

    # The designed trap keeps its exact constants.
    trap_mdp, trap_expert, trap_cls, mu = m.selection_trap(10)
    assert trap_mdp.expected_cost(trap_expert) == 0.0
    assert abs(trap_mdp.expected_cost(trap_cls.get(0)) - 1.0) < 1e-12
    assert abs(trap_mdp.expected_cost(trap_cls.get(1)) - 9.0) < 1e-12
    assert mu == 9.0
    mu2, witness = trap_mdp.recoverability(trap_expert)
    assert mu2 == mu and witness is not None

    # Estimation gap is the documented product.
    assert m.estimation_gap(2.0, 5, 3.0, 10) == 2.0 * 5 * 3.0 / 10

    # One cheap verification suite end to end.
    assert "trap-exact" in m.suite_names()
    passed, details = m.verify_suite("trap-exact")
    assert passed, details

    # Config-driven experiment through the harness.
    toml_text = """
seeds = [0, 1]

[env]
kind = "tabular-random"
layers = [3, 3]
actions = 2
seed = 3

[class]
kind = "random-tables"
size = 6
seed = 4

[[algos]]
kind = "dagger"
rounds = 5
samples-per-round = 4
"""
    csv_text, summary_json, failures = m.run_experiment(toml_text)
    assert not failures
    lines = csv_text.strip().splitlines()
    assert lines[0].startswith("algo,seed,round,expert_queries")
    assert len(lines) == 1 + 2 * 5, "two seeds times five rounds"
    summary = json.loads(summary_json)
    assert len(summary) == 5 and summary[0]["algo"] == "dagger"

    print(f"OK (expert cost {j_expert:.4f}, regret {ledger.final_regret:.4f})")


if __name__ == "__main__":
    main()
