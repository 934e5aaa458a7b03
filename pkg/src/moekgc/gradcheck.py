"""Central-finite-difference verification of analytic gradients.

The closure must be a deterministic scalar function of the checked arrays:
it is evaluated twice up front and aborted if the two baselines differ at all.

Errors are scaled per parameter group: each coordinate's |analytic - numeric|
is divided by the group's gradient magnitude (max over |analytic| and the
sampled |numeric|, floored at 1e-12). Coordinates whose true gradient sits
orders of magnitude below the group scale are then compared in absolute terms
against that scale instead of blowing up a near-zero denominator.
"""

import numpy as np

from .errors import GradCheckError


class GroupReport:
    __slots__ = ("name", "max_rel_err", "max_abs_err", "scale", "checked",
                 "worst_coord")

    def __init__(self, name):
        self.name = name
        self.max_rel_err = 0.0
        self.max_abs_err = 0.0
        self.scale = 0.0
        self.checked = 0
        self.worst_coord = None


def grad_check(closure, groups, h=1e-5, tolerance=1e-4, max_coords_per_group=None,
               rng=None, scale_floor=1e-12):
    """Compare analytic gradients against (L(x+h) - L(x-h)) / 2h per coordinate.

    groups: list of (name, value_array, analytic_grad_array). value arrays are
    perturbed in place and restored. Returns (passed, {name: GroupReport}).
    """
    base1 = float(closure())
    base2 = float(closure())
    if base1 != base2:
        raise GradCheckError(
            f"closure is not deterministic: {base1!r} != {base2!r}; "
            "fix hidden RNG or caching before checking gradients"
        )

    reports = {}
    for name, value, analytic in groups:
        flat = value.reshape(-1)
        aflat = np.asarray(analytic, dtype=np.float64).reshape(-1)
        if aflat.shape != flat.shape:
            raise GradCheckError(f"group {name!r}: gradient shape does not match value shape")
        idx = np.arange(flat.size)
        if max_coords_per_group is not None and flat.size > max_coords_per_group:
            if rng is None:
                rng = np.random.default_rng(0)
            idx = rng.choice(flat.size, size=max_coords_per_group, replace=False)
            idx.sort()
        numerics = np.empty(len(idx))
        for pos, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            up = float(closure())
            flat[i] = orig - h
            down = float(closure())
            flat[i] = orig
            numerics[pos] = (up - down) / (2.0 * h)

        report = GroupReport(name)
        report.checked = len(idx)
        scale = max(
            float(np.max(np.abs(aflat))) if aflat.size else 0.0,
            float(np.max(np.abs(numerics))) if numerics.size else 0.0,
            scale_floor,
        )
        report.scale = scale
        for pos, i in enumerate(idx):
            err = abs(float(aflat[i]) - numerics[pos])
            rel = err / scale
            report.max_abs_err = max(report.max_abs_err, err)
            if rel >= report.max_rel_err:
                report.max_rel_err = rel
                report.worst_coord = (int(i), float(aflat[i]), float(numerics[pos]))
        reports[name] = report

    passed = all(r.max_rel_err <= tolerance for r in reports.values())
    return passed, reports


def format_report(reports, tolerance):
    lines = []
    for name in sorted(reports):
        r = reports[name]
        status = "ok" if r.max_rel_err <= tolerance else "FAIL"
        lines.append(
            f"{name:<24s} coords={r.checked:<5d} max_rel_err={r.max_rel_err:.3e} {status}"
        )
    return "\n".join(lines)
