"""Standard run suites shared by the ``verify`` command and the test-suite."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import AprioriEnvelope, SolverConfig, Trajectory, solve
from .spectral import BoxSpec, PhysParams, SpectralField, norm_H, random_field, taylor_green

NU = 0.1
ALPHA = 0.2
FORCING_AMPLITUDE = 0.2


@dataclass(frozen=True, eq=False)
class SuiteRun:
    name: str
    w0: SpectralField
    params: PhysParams
    config: SolverConfig

    def solve(self) -> Trajectory:
        return solve(self.w0, self.params, self.config)

    def envelope(self, M=None) -> AprioriEnvelope:
        R = max(self.params.R0, norm_H(self.w0))
        return AprioriEnvelope(R) if M is None else AprioriEnvelope(R, M)


def envelope_suite(n=16, t_end=5.0, dt=0.01, save_stride=5):
    """Twelve runs: {unforced, forced} x {NS-alpha, Galerkin NSE} x three initial states.

    Forced initial states: rest, |w0| = R0/2 and |w0| = R0 (on the boundary
    of the absorbing ball). Unforced: |w0| in {1, 5, 15}.
    """
    box = BoxSpec(n=n)
    forcings = {
        "unforced": SpectralField.zeros(box),
        "forced": taylor_green(box, FORCING_AMPLITUDE),
    }
    runs = []
    for fname, f in forcings.items():
        for model in ("ns-alpha", "nse"):
            p = PhysParams(NU, ALPHA if model == "ns-alpha" else 0.0, f)
            if fname == "forced":
                amps = (0.0, 0.5 * p.R0, p.R0)
            else:
                amps = (1.0, 5.0, 15.0)
            cfg = SolverConfig(dt, t_end, "if-midpoint", save_stride, model)
            for k, a in enumerate(amps):
                rng = np.random.default_rng(1000 + 10 * k + (model == "nse"))
                w0 = random_field(box, rng, 48, a) if a > 0 else SpectralField.zeros(box)
                runs.append(SuiteRun(f"{fname}-{model}-{k}", w0, p, cfg))
    return runs
