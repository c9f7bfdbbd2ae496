"""Second-moment bound and Euler step-halving checks on the reference ensemble."""

import argparse
import json

import _common
from mflab.config import parse_config
from mflab.dynamics import evolve_reference
from mflab.experiments import moment_check, reference_seed, self_convergence

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default=str(_common.ROOT / "configs" / "bias_sweep.toml"))
    p.add_argument("--T", type=float, default=16.0)
    a = p.parse_args()
    cfg = parse_config(a.config)
    plan = cfg.plan()
    hp = plan.hyperparams(plan.n_max)
    seed = reference_seed(plan.master_seed)
    ref = evolve_reference(seed, plan.m_ref, plan.h, a.T, plan.data, plan.model, hp, plan.init, snapshot_times=[])
    out = {
        "moment": moment_check(ref, plan.model, plan.A, plan.lam),
        "self_convergence": self_convergence(seed, 1024, 0.01, 1.0, plan.data, plan.model, hp, plan.init),
    }
    print(json.dumps(out, indent=2))
