"""Flat ``key = value`` solver configuration files.

Example::

    # narmsr solver config
    mode = mog
    stages = 4
    mu = 0.2
    delta = auto

Blank lines and ``#`` comments are ignored. Every key is also a CLI flag
(``gamma_narm`` -> ``--gamma-narm``).
"""
from __future__ import annotations

from dataclasses import replace
from pathlib import Path

from .denoiser import DenoiserSpec
from .narm import NarmParams, read_embedding
from .solver import SolverConfig


class ConfigError(ValueError):
    """Invalid configuration; ``keys`` lists the offending entries."""

    def __init__(self, problems: dict[str, str]):
        self.keys = sorted(problems)
        detail = "; ".join(f"{k}: {problems[k]}" for k in self.keys)
        super().__init__(f"invalid configuration ({detail})")


def _auto_float(text: str):
    return None if text.strip().lower() in ("auto", "none", "") else float(text)


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, help)
SCHEMA = {
    "mode": (str, "solver variant: mog (with NARM terms) or dpdnn"),
    "stages": (int, "number of unfolded stages T"),
    "mu": (float, "weight of the NARM fidelity term"),
    "gamma_narm": (float, "weight of the NARM consistency term"),
    "eta": (float, "splitting weight coupling x and v"),
    "delta": (_auto_float, "e-step size, or auto"),
    "delta_prime": (_auto_float, "x-step size, or auto"),
    "step_scale": (float, "auto step = step_scale / Lipschitz estimate"),
    "power_iterations": (int, "power iterations for the Lipschitz estimate"),
    "inner_x_steps": (int, "gradient steps on x per stage"),
    "inner_e_steps": (int, "gradient steps on e per stage"),
    "denoiser": (str, "identity, gaussian or nlm"),
    "denoiser_strength": (float, "initial denoiser strength"),
    "denoiser_decay": (float, "per-stage geometric decay of the strength"),
    "narm_backend": (str, "ar (patch search + ridge weights) or attention"),
    "patch_size": (int, "NARM patch side"),
    "neighbors": (int, "NARM neighbours per pixel J"),
    "search_window": (int, "NARM search window side"),
    "gamma_reg": (float, "ridge weight of the AR regression"),
    "q": (int, "attention block side"),
    "embedding_file": (str, "embedding weights file for the attention backend"),
    "eq19_printed_sign": (_bool, "use A(x-e) in the x-step fidelity term"),
    "x_narm_gradient": (str, "exact or printed NARM term in the x-step"),
    "init_alignment": (str, "operator (grid-aligned) or centered bicubic initialization"),
}


def config_to_dict(cfg: SolverConfig) -> dict:
    return {
        "mode": cfg.mode,
        "stages": cfg.stages,
        "mu": cfg.mu,
        "gamma_narm": cfg.gamma_narm,
        "eta": cfg.eta,
        "delta": cfg.delta,
        "delta_prime": cfg.delta_prime,
        "step_scale": cfg.step_scale,
        "power_iterations": cfg.power_iterations,
        "inner_x_steps": cfg.inner_x_steps,
        "inner_e_steps": cfg.inner_e_steps,
        "denoiser": cfg.denoiser.kind,
        "denoiser_strength": cfg.denoiser.strength,
        "denoiser_decay": cfg.denoiser_decay,
        "narm_backend": cfg.narm_backend,
        "patch_size": cfg.narm.patch_size,
        "neighbors": cfg.narm.J,
        "search_window": cfg.narm.search_window,
        "gamma_reg": cfg.narm.gamma_reg,
        "q": cfg.narm.q,
        "eq19_printed_sign": cfg.eq19_printed_sign,
        "x_narm_gradient": cfg.x_narm_gradient,
        "init_alignment": cfg.init_alignment,
    }


def config_to_text(cfg: SolverConfig) -> str:
    lines = []
    for key, value in config_to_dict(cfg).items():
        if value is None:
            value = "auto"
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def parse_config_text(text: str) -> dict[str, str]:
    """Raw ``key -> value`` strings; unknown keys and malformed lines are errors."""
    raw, problems = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems[f"line {lineno}"] = f"expected key = value, got {line!r}"
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            problems[key] = "unknown key"
            continue
        raw[key] = value
    if problems:
        raise ConfigError(problems)
    return raw


def apply_settings(cfg: SolverConfig, settings: dict) -> SolverConfig:
    """Return ``cfg`` updated with ``settings`` (strings or typed values)."""
    values, problems = {}, {}
    for key, value in settings.items():
        if key not in SCHEMA:
            problems[key] = "unknown key"
            continue
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(value) if isinstance(value, str) else value
        except ValueError as exc:
            problems[key] = str(exc)
    if problems:
        raise ConfigError(problems)

    current = config_to_dict(cfg) | values
    try:
        denoiser = DenoiserSpec(current["denoiser"], current["denoiser_strength"])
    except ValueError as exc:
        raise ConfigError({"denoiser": str(exc)}) from None
    try:
        narm = NarmParams(
            patch_size=current["patch_size"],
            J=current["neighbors"],
            search_window=current["search_window"],
            gamma_reg=current["gamma_reg"],
            q=current["q"],
        )
    except ValueError as exc:
        keys = [k for k in ("patch_size", "neighbors", "search_window", "gamma_reg", "q") if k in values]
        raise ConfigError({k: str(exc) for k in keys or ["narm"]}) from None
    embedding = cfg.embedding
    if "embedding_file" in values:
        try:
            embedding = read_embedding(values["embedding_file"])
        except (OSError, ValueError) as exc:
            raise ConfigError({"embedding_file": str(exc)}) from None
    try:
        return replace(
            cfg,
            mode=current["mode"],
            stages=current["stages"],
            mu=current["mu"],
            gamma_narm=current["gamma_narm"],
            eta=current["eta"],
            delta=current["delta"],
            delta_prime=current["delta_prime"],
            step_scale=current["step_scale"],
            power_iterations=current["power_iterations"],
            inner_x_steps=current["inner_x_steps"],
            inner_e_steps=current["inner_e_steps"],
            denoiser=denoiser,
            denoiser_decay=current["denoiser_decay"],
            narm=narm,
            narm_backend=current["narm_backend"],
            embedding=embedding,
            eq19_printed_sign=current["eq19_printed_sign"],
            x_narm_gradient=current["x_narm_gradient"],
            init_alignment=current["init_alignment"],
        )
    except ValueError as exc:
        # the solver's validation message names the field first
        key = next((k for k in values if k in str(exc)), "config")
        raise ConfigError({key: str(exc)}) from None


def load_config(path, base: SolverConfig | None = None) -> SolverConfig:
    text = Path(path).read_text()
    return apply_settings(base or SolverConfig(), parse_config_text(text))
