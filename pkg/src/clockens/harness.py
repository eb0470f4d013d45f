"""Scenario configuration, orchestration and artifact writing."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .clock_models import ClockKind, ClockSpec
from .control import closed_loop_simulate, feedback_gains, psi_trajectory
from .decomposition import build_transform
from .ensemble import (EnsembleSpec, ProcessNoise, assemble_system, measurement_noise,
                       simulate, write_csv)
from .filters import ckf_init, ckf_step, steady_gains, tkf_init, tkf_step
from .stability import (PsiModel, hvar_curve, octave_grid, optimal_weight, theoretical_curve,
                        weight_long_term, weight_short_term, write_hvar_csv)

log = logging.getLogger(__name__)

OUTPUT_ENV = "CLOCKENS_OUTPUT_DIR"
BUNDLED = {"paper_sec5": "paper_sec5.yaml"}
WEIGHT_MODES = ("short_term", "long_term", "custom", "general")
FILTERS = ("ckf", "tkf", "sstkf")
DEFAULT_SCALES = {"sigma1": 1e-9, "sigma2": 1e-12, "sigma3": 1e-19}


class ConfigError(ValueError):
    def __init__(self, field: str, rule: str):
        super().__init__(f"{field}: {rule}")
        self.field = field
        self.rule = rule


@dataclass
class ScenarioConfig:
    name: str
    tau: float
    r: float
    clocks: list
    gamma: float
    V: object = "star"
    scales: dict = field(default_factory=lambda: dict(DEFAULT_SCALES))
    weight_mode: str = "short_term"
    q: list | None = None
    tau_opt: float | None = None
    allow_unstable: bool = False
    controller_filter: str = "sstkf"
    filters: list = field(default_factory=lambda: ["sstkf"])
    ckf_update_form: str = "standard"
    ckf_P0: float = 0.0
    tkf_P_oo0: float = 1e-18
    horizon: int = 1000
    seeds: list = field(default_factory=lambda: [1])
    output_dir: str = "runs"

    # ------------------------------------------------------------ (de)serialise

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>", "config must be a mapping")
        ens = _section(d, "ensemble")
        weight = d.get("weight") or {}
        ctrl = _section(d, "controller")
        filt = d.get("filter") or {}
        run = d.get("run") or {}
        out = d.get("outputs") or {}
        if "gamma" not in ctrl:
            raise ConfigError("controller.gamma", "is required")
        for key in ("tau", "r", "clocks"):
            if key not in ens:
                raise ConfigError(f"ensemble.{key}", "is required")
        scales = dict(DEFAULT_SCALES)
        scales.update({k: float(v) for k, v in (ens.get("scales") or {}).items()})
        cfg = cls(
            name=str(d.get("name", "scenario")),
            tau=_num("ensemble.tau", ens["tau"]),
            r=_num("ensemble.r", ens["r"]),
            clocks=[dict(c) for c in ens["clocks"]],
            gamma=_num("controller.gamma", ctrl["gamma"]),
            V=ens.get("V", "star"),
            scales=scales,
            weight_mode=str(weight.get("mode", "short_term")),
            q=None if weight.get("q") is None else [float(x) for x in weight["q"]],
            tau_opt=None if weight.get("tau") is None else _num("weight.tau", weight["tau"]),
            allow_unstable=bool(ctrl.get("allow_unstable", False)),
            controller_filter=str(ctrl.get("filter", "sstkf")),
            filters=list(filt.get("run", ["sstkf"])),
            ckf_update_form=str(filt.get("ckf_update_form", "standard")),
            ckf_P0=_num("filter.ckf_P0", filt.get("ckf_P0", 0.0)),
            tkf_P_oo0=_num("filter.tkf_P_oo0", filt.get("tkf_P_oo0", 1e-18)),
            horizon=int(run.get("horizon", 1000)),
            seeds=[int(s) for s in run.get("seeds", [1])],
            output_dir=str(out.get("dir", "runs")),
        )
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        weight = {"mode": self.weight_mode}
        if self.q is not None:
            weight["q"] = list(self.q)
        if self.tau_opt is not None:
            weight["tau"] = self.tau_opt
        return {
            "name": self.name,
            "ensemble": {"tau": self.tau, "r": self.r, "V": self.V, "scales": dict(self.scales),
                         "clocks": [dict(c) for c in self.clocks]},
            "weight": weight,
            "controller": {"gamma": self.gamma, "filter": self.controller_filter,
                           "allow_unstable": self.allow_unstable},
            "filter": {"run": list(self.filters), "ckf_update_form": self.ckf_update_form,
                       "ckf_P0": self.ckf_P0, "tkf_P_oo0": self.tkf_P_oo0},
            "run": {"horizon": self.horizon, "seeds": list(self.seeds)},
            "outputs": {"dir": self.output_dir},
        }

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    # ---------------------------------------------------------------- validate

    def validate(self) -> None:
        if not self.tau > 0:
            raise ConfigError("ensemble.tau", "must be > 0")
        if not self.r > 0:
            raise ConfigError("ensemble.r", "must be > 0")
        if self.weight_mode not in WEIGHT_MODES:
            raise ConfigError("weight.mode", f"must be one of {WEIGHT_MODES}")
        if self.weight_mode == "custom" and self.q is None:
            raise ConfigError("weight.q", "is required for mode custom")
        if self.weight_mode == "general" and (self.tau_opt is None or self.tau_opt <= 0):
            raise ConfigError("weight.tau", "a positive interval is required for mode general")
        if abs(1 - self.gamma) >= 1 and not self.allow_unstable:
            raise ConfigError("controller.gamma", "must satisfy |1 - gamma| < 1 "
                              "(set controller.allow_unstable to override)")
        if self.controller_filter not in ("sstkf", "tkf"):
            raise ConfigError("controller.filter", "must be sstkf or tkf")
        bad = [f for f in self.filters if f not in FILTERS]
        if bad:
            raise ConfigError("filter.run", f"unknown filters {bad}, allowed {FILTERS}")
        if self.ckf_update_form not in ("standard", "as_printed"):
            raise ConfigError("filter.ckf_update_form", "must be standard or as_printed")
        if self.horizon < 4:
            raise ConfigError("run.horizon", "must be >= 4")
        if not self.seeds:
            raise ConfigError("run.seeds", "needs at least one seed")
        for i, c in enumerate(self.clocks):
            kind = c.get("kind")
            if kind not in ("Cs", "Hm"):
                raise ConfigError(f"ensemble.clocks[{i}].kind", "must be Cs or Hm")
            if kind == "Cs" and float(c.get("sigma3", 0.0)) != 0.0:
                raise ConfigError(f"ensemble.clocks[{i}].sigma3", "must be 0 for a Cs clock")
            for s in ("sigma1", "sigma2"):
                if s not in c:
                    raise ConfigError(f"ensemble.clocks[{i}].{s}", "is required")
        try:
            spec = self.ensemble_spec()
        except ValueError as exc:
            raise ConfigError("ensemble", str(exc)) from exc
        if self.q is not None and len(self.q) != spec.N:
            raise ConfigError("weight.q", f"must have {spec.N} entries")
        try:
            build_transform(spec, self.weight_vector(spec))
        except (ValueError, ZeroDivisionError, np.linalg.LinAlgError) as exc:
            raise ConfigError("weight", str(exc)) from exc

    # ------------------------------------------------------------------ derive

    def clock_specs(self) -> list[ClockSpec]:
        out = []
        for c in self.clocks:
            out.append(ClockSpec(
                ClockKind(c["kind"]),
                float(c["sigma1"]) * self.scales["sigma1"],
                float(c["sigma2"]) * self.scales["sigma2"],
                float(c.get("sigma3", 0.0)) * self.scales["sigma3"],
            ))
        return out

    def ensemble_spec(self) -> EnsembleSpec:
        V = None if self.V in (None, "star") else np.array(self.V, dtype=float)
        return EnsembleSpec(self.clock_specs(), self.tau, self.r, V)

    def weight_vector(self, spec: EnsembleSpec | None = None) -> np.ndarray:
        spec = spec or self.ensemble_spec()
        return compute_weights(spec, self.weight_mode, self.q, self.tau_opt)


def compute_weights(spec: EnsembleSpec, mode: str, q=None, tau_opt=None) -> np.ndarray:
    if mode == "short_term":
        return weight_short_term(spec.sigma_diag(1))
    if mode == "long_term":
        return weight_long_term(spec.sigma_diag(2), spec.N, spec.M)
    if mode == "general":
        return optimal_weight(tau_opt, spec.sigma_diag(1), spec.sigma_diag(2), spec.sigma_diag(3))
    if mode == "custom":
        return np.asarray(q, dtype=float)
    raise ValueError(f"unknown weight mode {mode!r}")


def _section(d: dict, key: str) -> dict:
    sec = d.get(key)
    if not isinstance(sec, dict):
        raise ConfigError(key, "section is required")
    return sec


def _num(name: str, value) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(name, f"must be a number, got {value!r}") from None


def load_config(path) -> ScenarioConfig:
    """Read a scenario from a YAML file, or one of the bundled names."""
    if str(path) in BUNDLED:
        text = resources.files("clockens.data").joinpath(BUNDLED[str(path)]).read_text()
    else:
        text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"parse error: {exc}") from exc
    return ScenarioConfig.from_dict(data)


def paper_config(**overrides) -> ScenarioConfig:
    cfg = load_config("paper_sec5")
    for key, value in overrides.items():
        setattr(cfg, key, value)
    cfg.validate()
    return cfg


# --------------------------------------------------------------------------- run

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _filter_diagnostics(cfg: ScenarioConfig, spec, sysm, bundle, gains, trace) -> tuple[list, np.ndarray]:
    """Run the requested filters over the closed-loop measurement stream."""
    eta_true = np.hstack([trace.x, trace.z]) @ bundle.T.T
    n_o = bundle.n_o
    names, cols = [], []
    Y, U = trace.y, trace.u
    steps = trace.horizon + 1
    if "ckf" in cfg.filters:
        st = ckf_init(spec.n_state, cfg.ckf_P0)
        maxdiag, resid = np.empty(steps), np.empty(steps)
        u_prev = np.zeros(spec.N)
        for k in range(steps):
            st = ckf_step(st, Y[k], u_prev, sysm, spec.r, cfg.ckf_update_form)
            u_prev = U[k]
            maxdiag[k] = np.max(np.diag(st.P))
            resid[k] = np.linalg.norm((bundle.T @ st.xhat)[:n_o] - eta_true[k, :n_o])
        names += ["ckf_max_diag_P", "ckf_eta_o_error"]
        cols += [maxdiag, resid]
    if "tkf" in cfg.filters:
        st = tkf_init(bundle, cfg.tkf_P_oo0)
        norm, resid = np.empty(steps), np.empty(steps)
        u_prev = np.zeros(spec.N)
        for k in range(steps):
            st = tkf_step(st, Y[k], u_prev, bundle, sysm.Q, spec.r)
            u_prev = U[k]
            norm[k] = np.linalg.norm(st.P_oo)
            resid[k] = np.linalg.norm(st.eta_o_hat - eta_true[k, :n_o])
        names += ["tkf_P_oo_norm", "tkf_eta_o_error"]
        cols += [norm, resid]
    if "sstkf" in cfg.filters:
        est = trace.extras["eta_hat"]
        names += ["sstkf_eta_o_error"]
        cols += [np.linalg.norm(est[:, :n_o] - eta_true[:, :n_o], axis=1)]
    return names, np.column_stack([np.arange(steps)] + cols) if cols else np.arange(steps)[:, None]


def run_seed(cfg: ScenarioConfig, seed: int, out: Path) -> list[Path]:
    spec = cfg.ensemble_spec()
    sysm = assemble_system(spec)
    q = cfg.weight_vector(spec)
    bundle = build_transform(spec, q)
    gains = steady_gains(bundle, sysm.Q, spec.r)
    ctrl = feedback_gains(cfg.gamma, spec.tau, allow_unstable=cfg.allow_unstable)
    H = cfg.horizon

    v = ProcessNoise(spec, seed).draw(H)
    w = measurement_noise(spec, seed, H + 1)
    free = simulate(sysm, spec, None, H, seed, process_noise=v, meas_noise=w)
    closed = closed_loop_simulate(spec, bundle, gains, ctrl, H, seed,
                                  filter=cfg.controller_filter)
    q0 = weight_short_term(spec.sigma_diag(1))
    qinf = weight_long_term(spec.sigma_diag(2), spec.N, spec.M)
    g0 = psi_trajectory(v, q0, spec)
    ginf = psi_trajectory(v, qinf, spec)

    files = []
    p = out / f"trace_free_seed{seed}.csv"
    free.to_csv(p)
    files.append(p)

    p = out / f"trace_closed_seed{seed}.csv"
    closed.to_csv(p)
    files.append(p)

    p = out / f"psi_seed{seed}.csv"
    write_csv(p, ["k", "h_q0", "h_qinf", "f_q0", "f_qinf"],
              np.column_stack([np.arange(H + 1), g0[:, 0], ginf[:, 0], g0[:, 1], ginf[:, 1]]))
    files.append(p)

    ms = octave_grid(H)
    curves = []
    for i in range(spec.N):
        curves.append(hvar_curve(free.phases[:, i], spec.tau, ms, f"free_{i + 1}"))
    for i in range(spec.N):
        curves.append(hvar_curve(closed.phases[:, i], spec.tau, ms, f"controlled_{i + 1}"))
    curves.append(hvar_curve(closed.extras["theta"], spec.tau, ms, "gts"))
    curves.append(hvar_curve(g0[:, 0], spec.tau, ms, "psi_q0"))
    curves.append(hvar_curve(ginf[:, 0], spec.tau, ms, "psi_qinf"))
    curves.append(theoretical_curve(PsiModel.from_spec(spec, q0), ms, "psi_q0"))
    curves.append(theoretical_curve(PsiModel.from_spec(spec, qinf), ms, "psi_qinf"))
    p = out / f"hvar_seed{seed}.csv"
    write_hvar_csv(p, curves)
    files.append(p)

    names, data = _filter_diagnostics(cfg, spec, sysm, bundle, gains, closed)
    p = out / f"filters_seed{seed}.csv"
    write_csv(p, ["k"] + names, data)
    files.append(p)
    return files


@dataclass
class RunArtifacts:
    directory: Path
    manifest: dict

    @property
    def files(self) -> dict[str, Path]:
        return {f["name"]: self.directory / f["name"] for f in self.manifest["files"]}


def resolve_output_dir(cfg: ScenarioConfig, out_dir=None) -> Path:
    base = out_dir or os.environ.get(OUTPUT_ENV) or cfg.output_dir
    return Path(base) / cfg.name


def run_scenario(cfg: ScenarioConfig, out_dir=None, workers: int | None = None) -> RunArtifacts:
    """Run every seed and write CSVs plus ``manifest.json`` into one directory.

    Files are written to a scratch directory next to the target and moved
    into place only when every seed has finished.  Seeds run in separate
    processes when ``workers`` (default: one per seed, capped at the CPU
    count) is above one; each seed owns its random streams, so the output
    does not depend on the worker count.
    """
    cfg.validate()
    target = resolve_output_dir(cfg, out_dir)
    target.parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=f".{cfg.name}-", dir=target.parent))
    try:
        if workers is None:
            workers = min(len(cfg.seeds), os.cpu_count() or 1)
        files = []
        if workers > 1 and len(cfg.seeds) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                jobs = [pool.submit(run_seed, cfg, seed, scratch) for seed in cfg.seeds]
                for job in jobs:
                    files += job.result()
        else:
            for seed in cfg.seeds:
                log.info("running %s seed %d, horizon %d", cfg.name, seed, cfg.horizon)
                files += run_seed(cfg, seed, scratch)
        (scratch / "config.yaml").write_text(cfg.dumps())
        files.append(scratch / "config.yaml")
        manifest = {
            "name": cfg.name,
            "config_sha256": cfg.digest(),
            "seeds": list(cfg.seeds),
            "horizon": cfg.horizon,
            "weights": [float(x) for x in cfg.weight_vector()],
            "versions": {"clockens": __version__, "numpy": np.__version__},
            "initial_conditions": {
                "true_state": "zero", "estimates": "zero",
                "ckf_P0": cfg.ckf_P0, "tkf_P_oo0": cfg.tkf_P_oo0, "tkf_P_obar_o0": 0.0,
            },
            "files": [{"name": f.name, "sha256": _sha256(f)} for f in files],
        }
        (scratch / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        if target.exists():
            shutil.rmtree(target)
        os.replace(scratch, target)
    except BaseException:
        shutil.rmtree(scratch, ignore_errors=True)
        raise
    return RunArtifacts(target, manifest)


__all__ = ["ConfigError", "ScenarioConfig", "load_config", "paper_config", "run_scenario",
           "run_seed", "compute_weights", "RunArtifacts", "resolve_output_dir"]
