"""Built-in named scenarios.

Each name expands to one or more labelled variants of a
:class:`~rangemon.config.ScenarioConfig`; multi-variant scenarios compare
settings side by side (for instance warm against cold start).
"""

from __future__ import annotations

from .config import AttackSpec, DynamicsSpec, ScenarioConfig, TopologySpec
from .errors import ConfigError
from .measurement import NoiseConfig
from .solver import SolverConfig

NU_MAX = 0.02

# reset modes: warm keeps duals across outer rounds, cold resets a robot's
# duals once any of them passes the threshold
WARM = {"warm_start": True, "cold_start": False}
COLD = {"warm_start": True, "cold_start": True}


def _noise_study(name: str, rho: float, omega: float) -> ScenarioConfig:
    return ScenarioConfig(
        name=name, n_agents=20, dim=3, steps=150, trials=20,
        noise=NoiseConfig(omega_max=omega, nu_max=NU_MAX),
        solver=SolverConfig(rho=rho, **WARM),
        attack=AttackSpec(windows=((0, None),), counts=(6,), magnitude=1.0))


NOISE_CONFIGS = {
    "noise-i": (0.25, 0.02),
    "noise-ii": (0.25, 0.05),
    "noise-iii": (1.25, 0.02),
    "noise-iv": (1.25, 0.05),
}

RHO_SWEEP = (0.25, 0.5, 0.75, 1.0, 1.25, 1.5)

TWO_PHASE_WINDOWS = ((10, 85), (85, 160))


def two_phase(rho: float, mode: str) -> ScenarioConfig:
    return ScenarioConfig(
        name=f"two-phase-rho{rho:g}-{mode}", n_agents=20, dim=3, steps=160, trials=20,
        topology=TopologySpec(rebuild_on_attack=True),
        noise=NoiseConfig(omega_max=0.02, nu_max=NU_MAX),
        solver=SolverConfig(rho=rho, **(WARM if mode == "warm" else COLD)),
        attack=AttackSpec(windows=TWO_PHASE_WINDOWS, counts=(3, 3), magnitude=1.0))


def mr7() -> ScenarioConfig:
    """Seven robots in closed-loop formation flight; two get spoofed GNSS from step 50."""
    return ScenarioConfig(
        name="mr7", n_agents=7, dim=3, mode="dynamics", steps=200, trials=5,
        topology=TopologySpec(mean_degree=4.0),
        noise=NoiseConfig(omega_max=0.02, nu_max=NU_MAX, w_bound=1e-6, v_bound=1e-4),
        solver=SolverConfig(rho=0.25, **COLD),
        dynamics=DynamicsSpec(),
        attack=AttackSpec(windows=((50, None),), counts=(2,), magnitude=1.0))


DESCRIPTIONS = {
    "noise-i": "20 robots, 6 attacked, rho=0.25, omega_max=0.02",
    "noise-ii": "20 robots, 6 attacked, rho=0.25, omega_max=0.05",
    "noise-iii": "20 robots, 6 attacked, rho=1.25, omega_max=0.02",
    "noise-iv": "20 robots, 6 attacked, rho=1.25, omega_max=0.05",
    "rho-sweep": "noise study over rho in {0.25..1.5} for omega_max in {0.02, 0.05}",
    "two-phase": "two attack phases of 3 robots with topology change; rho in {0.25, 0.75} x {warm, cold}",
    "mr7": "7 robots in closed-loop formation flight, 2 spoofed",
}


def scenario(name: str) -> list[tuple[str, ScenarioConfig]]:
    """Labelled variants for a named scenario."""
    if name in NOISE_CONFIGS:
        rho, omega = NOISE_CONFIGS[name]
        return [(name, _noise_study(name, rho, omega))]
    if name == "rho-sweep":
        return [(f"rho{rho:g}-omega{omega:g}", _noise_study(f"rho-sweep-rho{rho:g}-omega{omega:g}", rho, omega))
                for omega in (0.02, 0.05) for rho in RHO_SWEEP]
    if name == "two-phase":
        return [(f"rho{rho:g}-{mode}", two_phase(rho, mode)) for rho in (0.25, 0.75) for mode in ("warm", "cold")]
    if name == "mr7":
        return [("mr7", mr7())]
    raise ConfigError("scenario", f"unknown scenario {name!r}; choose from {sorted(DESCRIPTIONS)}")


def names() -> list[str]:
    return list(DESCRIPTIONS)
