"""Exhaustive checks of the tabular reach-time theory on grid worlds."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import RewardConstants
from .tabular import (
    closed_form_error,
    exact_q_all_goals,
    grid_mdp,
    verify_q0_separation,
    verify_suboptimality_bound,
)

CLOSED_FORM_TOL = 1e-9


@dataclass
class TheoryReport:
    closed_form: dict = field(default_factory=dict)  # grid size -> max abs error
    separation: dict = field(default_factory=dict)  # grid size -> SeparationReport
    bound_instances: list = field(default_factory=list)  # ReachReport
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        lines = []
        for n, err in self.closed_form.items():
            lines.append(f"closed_form grid={n}x{n} max_abs_error={err:.3e} tol={CLOSED_FORM_TOL:g}")
        for n, rep in self.separation.items():
            lines.append(f"q0_separation grid={n}x{n} q0={rep.q0:.6g} margin_pos={rep.margin_positive:.6g} "
                         f"margin_neg={rep.margin_negative:.6g} violations={len(rep.violations)}")
        flagged = [r for r in self.bound_instances if r.flagged]
        if self.bound_instances:
            lines.append(f"suboptimality_bound instances={len(self.bound_instances)} violations={len(flagged)} "
                         f"min_slack={min(r.slack for r in self.bound_instances)}")
        lines.append("status=" + ("ok" if self.ok else "VIOLATION"))
        lines.extend("failure: " + f for f in self.failures)
        return "\n".join(lines)

    def write(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "theory_summary.txt").write_text(self.summary() + "\n")
        with (directory / "theory_instances.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("start", "goal", "radius", "t1", "t2", "t3", "diam", "t_goal", "slack", "flagged"))
            for r in self.bound_instances:
                w.writerow((r.start, r.goal, r.radius, r.t1, r.t2, r.t3, r.diam, r.t_goal, r.slack, int(r.flagged)))
        return directory


def verify_theory(grid_sizes=(6, 8), radii=(1, 2, 3), seeds=(0,), n_instances: int = 200,
                  bound_grid: int = 10, gamma_error: float = 0.0) -> TheoryReport:
    """Run the closed-form, q0-separation and suboptimality-bound checks.

    ``gamma_error`` perturbs the discount used in the closed form only; it
    exists to confirm that the check can fail.
    """
    report = TheoryReport()
    for n in grid_sizes:
        mdp = grid_mdp(n)
        c = RewardConstants.for_horizon(4 * n, epsilon=0.5)
        exact = exact_q_all_goals(mdp, c)
        err = closed_form_error(mdp, c, gamma_override=c.gamma + gamma_error, exact=exact)
        report.closed_form[n] = err
        if not err < CLOSED_FORM_TOL:
            report.failures.append(f"closed form mismatch on {n}x{n}: {err:.3e}")
        sep = verify_q0_separation(mdp, c, exact=exact)
        report.separation[n] = sep
        if not sep.ok:
            report.failures.append(f"q0 separation on {n}x{n}: {len(sep.violations)} violations, "
                                   f"first {sep.violations[:3]}")
    mdp = grid_mdp(bound_grid)
    c = RewardConstants.for_horizon(4 * bound_grid, epsilon=0.5)
    for seed in seeds:
        reps = verify_suboptimality_bound(mdp, n_instances, np.random.default_rng(seed), radii=radii, c=c)
        report.bound_instances.extend(reps)
        for r in reps:
            if r.flagged:
                report.failures.append(f"bound violated: {r}")
    return report
