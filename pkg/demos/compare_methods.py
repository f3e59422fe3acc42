"""Entries communicated to reach a loss target: dense vs Rand-K vs ARC.

Four simulated nodes train a row-structured quadratic with EF21M. Each run
stops once the loss falls within 0.01 of the optimum. The count is per node.
"""
from arctopk.bench import RunConfig, build_problem, entries_to_reach
from arctopk.optimizer import Ef21mConfig, run_training

cfg = RunConfig(d=512, m=16, mu=0.2, r=1, N=4, T=3000, sigma=0.1,
                heterogeneity=0.5, eta=0.9, seed=0).validate()
problem = build_problem(cfg)
level = problem.f_star + 0.01
opt = Ef21mConfig(gamma=0.5 / problem.L, eta=cfg.eta, T=cfg.T)

for method in ("dense", "randk", "arc"):
    records, ledger = run_training(problem, method, "ef21m", opt, cfg.m, cfg.K, cfg.r,
                                   cfg.seed, stop_below=level)
    print(f"{method:>5}: {len(records) - 1:5d} steps, "
          f"{entries_to_reach(records, level)} entries to reach f* + 0.01")
