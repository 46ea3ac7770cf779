"""Scenario runner and report generator.

``avtdlab run config.json [--out DIR]`` validates the config, computes,
writes CSV data and a certificate bundle, and finally the manifest (atomic
rename).  ``avtdlab report manifest.json ...`` re-checks digests and prints
a summary table.  Exit codes: 0 ok, 1 verdict failure or digest mismatch,
2 usage or config error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
from pathlib import Path
import sys
import tempfile
import time

from . import __version__

log = logging.getLogger(__name__)

SCHEMA = "avtdlab-scenario/1"
MANIFEST_SCHEMA = "avtdlab-manifest/1"
KINDS = ("gowdy-evolve", "gowdy-analyze", "tsym-analyze", "cmc-evolve", "cmc-family",
         "cmc-causal")
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
TOP_KEYS = {"schema", "kind", "name", "seed", "output", "params", "tolerances"}


class ConfigError(ValueError):
    """Schema violation, reported with the offending path."""

    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path, self.reason = path, reason


def fmt(x) -> str:
    return "%.17g" % (x + 0.0)


# --------------------------------------------------------------------------
# config validation


class _Params:
    """Typed access to a parameter block that rejects unknown keys."""

    def __init__(self, data, path: str):
        if not isinstance(data, dict):
            raise ConfigError(path, "expected an object")
        self.data, self.path, self.used = data, path, set()

    def _get(self, key, default, required):
        self.used.add(key)
        if key not in self.data:
            if required:
                raise ConfigError(f"{self.path}.{key}", "required key missing")
            return default
        return self.data[key]

    def num(self, key, default=None, *, required=False, positive=False, integer=False,
            minimum=None):
        v = self._get(key, default, required)
        if v is None:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"{self.path}.{key}", f"expected a finite number, got {v!r}")
        if integer:
            if int(v) != v:
                raise ConfigError(f"{self.path}.{key}", f"expected an integer, got {v!r}")
            v = int(v)
        if positive and not v > 0:
            raise ConfigError(f"{self.path}.{key}", f"must be positive, got {v!r}")
        if minimum is not None and v < minimum:
            raise ConfigError(f"{self.path}.{key}", f"must be >= {minimum}, got {v!r}")
        return v

    def choice(self, key, options, default=None, *, required=False):
        v = self._get(key, default, required)
        if v not in options:
            raise ConfigError(f"{self.path}.{key}", f"expected one of {list(options)}, got {v!r}")
        return v

    def flag(self, key, default=False):
        v = self._get(key, default, False)
        if not isinstance(v, bool):
            raise ConfigError(f"{self.path}.{key}", f"expected true/false, got {v!r}")
        return v

    def string(self, key, default=None, *, required=False):
        v = self._get(key, default, required)
        if v is not None and not isinstance(v, str):
            raise ConfigError(f"{self.path}.{key}", f"expected a string, got {v!r}")
        return v

    def numlist(self, key, default=None, *, required=False, length=None):
        v = self._get(key, default, required)
        if v is None:
            return None
        if not isinstance(v, list) or not all(
                isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)
                for x in v):
            raise ConfigError(f"{self.path}.{key}", "expected a list of finite numbers")
        if length is not None and len(v) != length:
            raise ConfigError(f"{self.path}.{key}", f"expected {length} entries, got {len(v)}")
        return [float(x) for x in v]

    def sub(self, key, *, required=False):
        v = self._get(key, None, required)
        return None if v is None else _Params(v, f"{self.path}.{key}")

    def finish(self):
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise ConfigError(f"{self.path}.{extra[0]}", "unknown key")


def _profile_value(v, path):
    """A profile entry: a number or ``{"mean", "cos", "sin"}`` Fourier coefficients."""
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return float(v)
    p = _Params(v, path)
    mean = p.num("mean", 0.0)
    cos = p.numlist("cos", [])
    sin = p.numlist("sin", [])
    p.finish()

    def f(theta, mean=mean, cos=tuple(cos), sin=tuple(sin)):
        import numpy as np
        out = np.full_like(theta, mean, dtype=float)
        for j, c in enumerate(cos, start=1):
            out = out + c * np.cos(j * theta)
        for j, c in enumerate(sin, start=1):
            out = out + c * np.sin(j * theta)
        return out

    return f


FAMILY_PARAMS = {
    "cone": {"n": "int", "vol0": "pos"},
    "cone_torus": {"m": "int", "n_flat": "int", "vol0_cone": "pos", "vol0_flat": "pos"},
    "kantowski_sachs": {"mass": "pos", "vol0_circle": "pos", "vol0_sphere": "pos"},
    "kasner": {"p": "list", "dims": "list", "scales": "list", "vol0": "list"},
}


def _family_spec(p: _Params):
    kind = p.choice("family", tuple(FAMILY_PARAMS), required=True)
    fp = p.sub("family_params") or _Params({}, f"{p.path}.family_params")
    out = {}
    for key, typ in FAMILY_PARAMS[kind].items():
        if typ == "int":
            v = fp.num(key, integer=True, minimum=1)
        elif typ == "pos":
            v = fp.num(key, positive=True)
        else:
            v = fp.numlist(key)
            if v is not None and key == "dims":
                v = [int(x) for x in v]
        if v is not None:
            out[key] = v
    fp.finish()
    if kind == "kasner" and "p" not in out:
        raise ConfigError(f"{fp.path}.p", "required key missing")
    return kind, out


def validate(config: dict) -> dict:
    """Check the whole config before any compute; returns a normalized scenario."""
    if not isinstance(config, dict):
        raise ConfigError("$", "config must be a JSON object")
    extra = sorted(set(config) - TOP_KEYS)
    if extra:
        raise ConfigError(f"$.{extra[0]}", "unknown key")
    if config.get("schema") != SCHEMA:
        raise ConfigError("$.schema", f"expected {SCHEMA!r}, got {config.get('schema')!r}")
    kind = config.get("kind")
    if kind not in KINDS:
        raise ConfigError("$.kind", f"expected one of {list(KINDS)}, got {kind!r}")
    seed = config.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("$.seed", f"expected a nonnegative integer, got {seed!r}")
    name = config.get("name", kind)
    if not isinstance(name, str) or not name or "/" in name or name.startswith("."):
        raise ConfigError("$.name", "expected a plain file-name stem")
    output = config.get("output")
    if output is not None and not isinstance(output, str):
        raise ConfigError("$.output", "expected a string")
    tol = config.get("tolerances", {})
    if not isinstance(tol, dict) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0 for v in tol.values()):
        raise ConfigError("$.tolerances", "expected an object of positive numbers")
    p = _Params(config.get("params", {}), "$.params")
    params = VALIDATORS[kind](p)
    p.finish()
    allowed = TOLERANCES[kind]
    bad = sorted(set(tol) - set(allowed))
    if bad:
        raise ConfigError(f"$.tolerances.{bad[0]}", f"unknown tolerance (allowed: {sorted(allowed)})")
    tolerances = {**allowed, **{k: float(v) for k, v in tol.items()}}
    return {"kind": kind, "name": name, "seed": seed, "output": output,
            "params": params, "tolerances": tolerances}


def _v_gowdy_evolve(p: _Params) -> dict:
    out = {
        "N": p.num("N", required=True, integer=True, minimum=1),
        "n_y": p.num("n_y", 256, integer=True, minimum=8),
        "scheme": p.choice("scheme", ("spectral", "fd4"), "spectral"),
        "L_c": p.num("L_c", 2 * math.pi, positive=True),
        "s0": p.num("s0", 0.0, minimum=0.0),
        "s_end": p.num("s_end", 4.0),
        "cfl": p.num("cfl", 0.5, positive=True),
        "ds_max": p.num("ds_max", 0.005, positive=True),
        "output_every": p.num("output_every", None, positive=True),
        "decay": p.flag("decay", True),
        "decay_every": p.num("decay_every", 10, integer=True, minimum=1),
    }
    if out["n_y"] % 2:
        raise ConfigError("$.params.n_y", "must be even")
    if out["s_end"] <= out["s0"]:
        raise ConfigError("$.params.s_end", "must exceed s0")
    d = p.sub("data") or _Params({}, "$.params.data")
    dtype = d.choice("type", ("random", "bessel", "homogeneous"), "random")
    data = {"type": dtype}
    if dtype == "random":
        data.update(amplitude=d.num("amplitude", 0.5, minimum=0.0),
                    velocity=d.num("velocity", 0.5, minimum=0.0),
                    band=d.num("band", 3, integer=True, minimum=1),
                    polarized=d.flag("polarized", False))
    elif dtype == "bessel":
        data.update(k=d.num("k", 1, integer=True, minimum=1),
                    amplitude=d.num("amplitude", 1.0))
        if out["N"] != 2:
            raise ConfigError("$.params.N", "Bessel data need N = 2")
    else:
        data.update(q=d.numlist("q", required=True, length=out["N"]))
    d.finish()
    out["data"] = data
    return out


def _v_gowdy_analyze(p: _Params) -> dict:
    return {"snapshot": p.string("snapshot", required=True)}


def _v_tsym(p: _Params) -> dict:
    out = {"history": p.string("history")}
    e = p.sub("expansion")
    if (out["history"] is None) == (e is None):
        raise ConfigError("$.params", "give exactly one of 'history' or 'expansion'")
    if e is not None:
        prof = {}
        for key in ("k", "U_ss", "A_star", "A_ss", "a_star", "H_star"):
            if key in e.data:
                e.used.add(key)
                prof[key] = e.data[key]
        if "k" not in prof:
            raise ConfigError("$.params.expansion.k", "required key missing")
        for key, v in prof.items():
            _profile_value(v, f"$.params.expansion.{key}")
        out["expansion"] = prof
        out["allow_k_out_of_range"] = e.flag("allow_k_out_of_range", False)
        e.finish()
        out["n_y"] = p.num("n_y", 128, integer=True, minimum=8)
        out["K"] = p.num("K", 1.0, positive=True)
        out["tau"] = p.numlist("tau", [1.0, 8.0, 0.02], length=3)
        t0, t1, dt = out["tau"]
        if not (t0 >= 1 and t1 > t0 and dt > 0):
            raise ConfigError("$.params.tau", "need [start >= 1, end > start, step > 0]")
    out["window"] = p.num("window", 1.0, positive=True)
    return out


def _v_cmc_evolve(p: _Params) -> dict:
    kind, fparams = _family_spec(p)
    out = {"family": kind, "family_params": fparams,
           "t_start": p.num("t_start", 1.0, positive=True),
           "t_end": p.num("t_end", 0.1, positive=True),
           "steps": p.num("steps", 2000, integer=True, minimum=4)}
    return out


def _v_cmc_family(p: _Params) -> dict:
    kind, fparams = _family_spec(p)
    out = {"family": kind, "family_params": fparams,
           "t_range": p.numlist("t_range", [0.1, 1.0], length=2),
           "samples": p.num("samples", 201, integer=True, minimum=5),
           "Lambda": p.num("Lambda", 2.0, positive=True),
           "rescale": p.numlist("rescale", [1e-1, 1e-2, 1e-3, 1e-4])}
    lo, hi = out["t_range"]
    if not 0 < lo < hi:
        raise ConfigError("$.params.t_range", "need 0 < t_low < t_high")
    if out["Lambda"] <= 1:
        raise ConfigError("$.params.Lambda", "must exceed 1")
    return out


def _v_cmc_causal(p: _Params) -> dict:
    kind, fparams = _family_spec(p)
    out = {"family": kind, "family_params": fparams,
           "block": p.num("block", 0, integer=True, minimum=0),
           "t": p.num("t", 1.0, positive=True),
           "Lambda": p.num("Lambda", 10.0, positive=True),
           "separation": p.num("separation", 1.0, positive=True),
           "from_zero": p.flag("from_zero", True)}
    if out["Lambda"] <= 1:
        raise ConfigError("$.params.Lambda", "must exceed 1")
    return out


VALIDATORS = {"gowdy-evolve": _v_gowdy_evolve, "gowdy-analyze": _v_gowdy_analyze,
              "tsym-analyze": _v_tsym, "cmc-evolve": _v_cmc_evolve,
              "cmc-family": _v_cmc_family, "cmc-causal": _v_cmc_causal}

TOLERANCES = {
    "gowdy-evolve": {"identity": 1e-4, "constraint": 1e-8, "oracle": 1e-6},
    "gowdy-analyze": {"constraint": 1e-8},
    "tsym-analyze": {"slope_margin": 0.05, "triangle": 1e-10},
    "cmc-evolve": {"closed_form": 1e-7, "monotone": 1e-6, "integral": 1e-8},
    "cmc-family": {"monotone": 1e-6, "integral": 1e-8, "limit": 1e-3},
    "cmc-causal": {},
}


# --------------------------------------------------------------------------
# scenario execution


class Outputs:
    """Collects files inside one output directory and their digests."""

    def __init__(self, root: Path):
        self.root = root
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        p = (self.root / name).resolve()
        if self.root.resolve() not in p.parents:
            raise ValueError(f"refusing to write outside the output directory: {name}")
        self.files.append(name)
        return p

    def write_csv(self, name: str, header, rows) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in r])
        self.path(name).write_text(buf.getvalue())

    def write_json(self, name: str, obj) -> None:
        self.path(name).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n")


def _default(o):
    import numpy as np
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _certs_json(certs) -> dict:
    return {name: c.to_dict() for name, c in certs.items()}


REPORTED = "reported, not judged"


def _judged(cert) -> bool:
    return REPORTED not in cert.notes


def _simple_cert(name, passed, verdict=None, **metrics):
    from .certificate import Certificate
    return Certificate(name=name, verdict=verdict or ("pass" if passed else "fail"),
                       passed=bool(passed), metrics=metrics)


def run_gowdy_evolve(sc, out: Outputs):
    import numpy as np
    from . import gowdy
    from .circlefield import CircleGrid
    p, tol = sc["params"], sc["tolerances"]
    grid = CircleGrid(p["n_y"], p["L_c"], p["scheme"])
    data = p["data"]
    rng = np.random.Generator(np.random.Philox(key=sc["seed"]))
    if data["type"] == "random":
        state = gowdy.random_data(p["N"], p["s0"], grid, rng, amplitude=data["amplitude"],
                                  velocity=data["velocity"], band=data["band"],
                                  polarized=data["polarized"])
    elif data["type"] == "bessel":
        state = gowdy.bessel_polarized(data["k"], p["s0"], grid, data["amplitude"])
    else:
        state = gowdy.homogeneous(np.array(data["q"]), p["s0"], grid)
    every = p["output_every"] or 0.01 * 256 / p["n_y"]
    nout = max(int(round((p["s_end"] - p["s0"]) / every)), 8)
    outputs = np.linspace(p["s0"], p["s_end"], nout + 1)
    traj = gowdy.evolve(state, p["s_end"], p["cfl"], outputs=outputs,
                        ds_max=min(p["ds_max"], every))
    certs = {"identities": gowdy.energy_identities(traj)}
    ident = certs["identities"]
    ident.passed = bool(ident.passed) and max(
        ident.metrics["residual_hat"], ident.metrics["residual_tilde"]) < tol["identity"]
    cons = [st.constraint_errors() for st in traj.states]
    worst = {k: max(c[k] for c in cons) for k in cons[0]}
    certs["constraints"] = _simple_cert("constraints", max(worst.values()) < tol["constraint"],
                                        **worst)
    certs["twist_density"] = gowdy.twist_density_check(traj, tol=tol["constraint"])
    W = np.full(len(traj), np.nan)
    if p["decay"]:
        dc = gowdy.decay_certificate(traj, every=p["decay_every"])
        certs["decay"] = dc
        idx = list(range(0, len(traj), p["decay_every"]))
        if idx[-1] != len(traj) - 1:
            idx.append(len(traj) - 1)
        W[idx] = dc.values["W"]
    oracle = np.full(len(traj), np.nan)
    if data["type"] == "bessel":
        for i, st in enumerate(traj.states):
            P, _ = gowdy.extract_pq(st.G, st.s)
            ex = gowdy.bessel_solution(data["k"], st.s, grid, data["amplitude"])
            oracle[i] = float(np.max(np.abs(P - ex)))
        certs["bessel_oracle"] = _simple_cert("bessel_oracle", np.max(oracle) < tol["oracle"],
                                              max_error=float(np.max(oracle)))
    elif data["type"] == "homogeneous":
        from . import symmat
        G0, W0 = state.G[0], state.Atilde[0]
        for i, st in enumerate(traj.states):
            ex = symmat.vtd_geodesic(G0, W0, st.s - p["s0"])
            oracle[i] = float(np.max(np.abs(st.G - ex)) / np.max(np.abs(ex)))
        certs["vtd_oracle"] = _simple_cert("vtd_oracle", np.max(oracle) < tol["oracle"],
                                           max_error=float(np.max(oracle)))
    rows = []
    for i, st in enumerate(traj.states):
        e = gowdy.energies(st)
        c = cons[i]
        rows.append((st.s, st.T, e.E, e.Ehat, e.Etilde, W[i], c["det"], c["trace_atilde"],
                     c["self_adjoint"], oracle[i]))
    out.write_csv(f"{sc['name']}.csv", ["s", "T", "E", "Ehat", "Etilde", "W", "det_residual",
                                        "trace_residual", "self_adjoint_residual",
                                        "oracle_error"], rows)
    gowdy.write_snapshot(out.path(f"{sc['name']}.gowdy"), traj[-1], tol)
    exps = {"decay_tail_exponent": certs["decay"].metrics["tail_exponent"]} if p["decay"] else {}
    return certs, exps, {"n_y": p["n_y"], "scheme": p["scheme"], "outputs": len(traj),
                         "steps": traj.steps, "b_lipschitz": gowdy.b_lipschitz(traj[-1])}


def run_gowdy_analyze(sc, out: Outputs):
    from . import gowdy
    st, header = gowdy.read_snapshot(sc["params"]["snapshot"])
    e = gowdy.energies(st)
    c = st.constraint_errors()
    W = gowdy.decay_integrand(st)
    certs = {"constraints": _simple_cert("constraints",
                                         max(c.values()) < sc["tolerances"]["constraint"], **c)}
    out.write_csv(f"{sc['name']}.csv", ["s", "T", "E", "Ehat", "Etilde", "W", "b_lipschitz"],
                  [(st.s, st.T, e.E, e.Ehat, e.Etilde, W, gowdy.b_lipschitz(st))])
    return certs, {}, {"n_y": st.grid.n, "N": st.N, "scheme": st.grid.scheme}


def run_tsym(sc, out: Outputs):
    import numpy as np
    from . import tsym
    from .circlefield import CircleGrid
    p, tol = sc["params"], sc["tolerances"]
    if p.get("history"):
        history = tsym.read_history(p["history"])
    else:
        prof = {k: _profile_value(v, k) for k, v in p["expansion"].items()}
        profile = tsym.ExpansionProfile(**prof, allow_k_out_of_range=p["allow_k_out_of_range"])
        t0, t1, dt = p["tau"]
        taus = t0 + dt * np.arange(int(math.floor((t1 - t0) / dt + 1e-9)) + 1)
        history = tsym.expansion_history(profile, taus, CircleGrid(p["n_y"]), p["K"])
        tsym.write_history(out.path(f"{sc['name']}.tsym"), history)
    res = tsym.avtd_quantities(history, window=p["window"], slope_margin=tol["slope_margin"],
                               triangle_tol=tol["triangle"])
    certs = {f"integrability_{k}": res.certificates[k] for k in ("source", "q_full", "q_avtd")}
    certs["holonomy"] = res.certificates["holonomy"]
    certs["implication"] = res.certificates["implication"]
    mono = tsym.monotonicity_residual(history)
    certs["monotonicity"] = mono
    # integrability verdicts and identity residuals (exact only for true solutions)
    # are reported; the implication and the monotonicity sign are judged
    for k in ("integrability_source", "integrability_q_full", "integrability_q_avtd", "holonomy",
              "monotonicity"):
        certs[k].notes.append(REPORTED)
    tsym.export_csv(out.path(f"{sc['name']}.csv"), res, history)
    exps = {f"{k}_slope": res.certificates[k].metrics["slope"]
            for k in ("source", "q_full", "q_avtd")}
    judged = {"implication": certs["implication"], "monotonicity_sign": _simple_cert(
        "monotonicity_sign", mono.verdict == "nondecreasing", mono.verdict)}
    return {**certs, **judged}, exps, {"n_y": history.grid.n, "times": len(history)}


def _family(p):
    from . import cmcflow
    return cmcflow.make_family(p["family"], **p["family_params"])


def _cmc_rows(traj):
    import numpy as np
    n = traj.n
    Vn = (-traj.H) ** n * traj.vol
    V1 = -traj.H * traj.vol
    ham = traj.hamiltonian_residual()
    hub = traj.hubble_drift()
    nb = len(traj.blocks)
    header = (["t"] + [f"a_{i}" for i in range(nb)] + [f"kappa_{i}" for i in range(nb)]
              + ["L", "R", "V_n", "V_1", "hamiltonian_residual", "hubble_residual"])
    order = np.argsort(traj.t)
    rows = [(traj.t[i], *traj.a[i], *traj.kappa[i], traj.lapse[i], traj.R[i], Vn[i], V1[i],
             ham[i], hub[i]) for i in order]
    return header, rows


def run_cmc_evolve(sc, out: Outputs):
    import numpy as np
    from . import cmcflow
    p, tol = sc["params"], sc["tolerances"]
    fam = _family(p)
    traj = cmcflow.evolve_cmc(fam.state(p["t_start"]), p["t_end"], p["steps"])
    exact = fam.sample(traj.t)
    err = float(max(np.max(np.abs(traj.a / exact.a - 1)),
                    np.max(np.abs(traj.kappa - exact.kappa) / np.abs(exact.H)[:, None])))
    certs = {
        "closed_form": _simple_cert("closed_form", err < tol["closed_form"], max_error=err),
        "monotone": cmcflow.monotone_quantities(traj, tol=tol["monotone"]),
        "lapse_bounds": cmcflow.lapse_bounds(traj),
        "curvature_integral": cmcflow.curvature_integral_check(traj, tol=tol["integral"]),
        "hubble_gauge": _simple_cert("hubble_gauge", traj.hubble_drift().max() < 1e-10,
                                     max_drift=float(traj.hubble_drift().max())),
    }
    header, rows = _cmc_rows(traj)
    out.write_csv(f"{sc['name']}.csv", header, rows)
    return certs, {}, {"steps": p["steps"], "family": p["family"]}


def run_cmc_family(sc, out: Outputs):
    import numpy as np
    from . import cmcflow
    p, tol = sc["params"], sc["tolerances"]
    fam = _family(p)
    lo, hi = p["t_range"]
    traj = fam.sample(np.geomspace(lo, hi, p["samples"]))
    certs = {
        "monotone": cmcflow.monotone_quantities(traj, tol=tol["monotone"]),
        "lapse_bounds": cmcflow.lapse_bounds(traj),
        "curvature_integral": cmcflow.curvature_integral_check(traj, tol=tol["integral"]),
    }
    rep = cmcflow.curvature_report(fam, traj.t[::max(1, len(traj) // 20)])
    certs["type_i"] = _simple_cert("type_i", np.isfinite(rep.type_i_constant), "bounded",
                                   type_i_constant=rep.type_i_constant)
    exps = {}
    if fam.has_nonpositive_curvature():
        d = cmcflow.dvol0_limit(fam)
        certs["dvol0"] = _simple_cert("dvol0", True, "zero" if d.is_zero else "nonzero",
                                      value=d.value, closed_form=d.closed_form)
        certs["kasner_limit"] = cmcflow.kasner_limit_check(fam, p["Lambda"], p["rescale"],
                                                           tol=tol["limit"])
    s_min = min(p["rescale"])
    ex = cmcflow.rescale(fam, s_min).sample([1.0]).exponents[0]
    for i, v in enumerate(ex):
        exps[f"rescaled_exponent_{i}"] = float(v)
    header, rows = _cmc_rows(traj)
    out.write_csv(f"{sc['name']}.csv", header, rows)
    return certs, exps, {"samples": p["samples"], "family": p["family"]}


def run_cmc_causal(sc, out: Outputs):
    from . import cmcflow
    p = sc["params"]
    fam = _family(p)
    if p["block"] >= len(fam.blocks):
        raise ConfigError("$.params.block", f"family has {len(fam.blocks)} blocks")
    t, Lam = p["t"], p["Lambda"]
    window = cmcflow.causal_radius(fam, p["block"], t / Lam, t)
    rows = [("window", t / Lam, t, window.value, window.diameter_bound, "")]
    if p["from_zero"]:
        full = cmcflow.causal_radius(fam, p["block"], 0.0, t)
        rows.append(("from_zero", 0.0, t, full.value, full.diameter_bound,
                     "" if full.exponent is None else fmt(full.exponent)))
    disjoint = cmcflow.disjointness(fam, p["block"], p["separation"], Lam, t)
    certs = {"disjointness": _simple_cert("disjointness", True,
                                          "disjoint" if disjoint else "overlapping",
                                          radius=window.value, separation=p["separation"])}
    if p["from_zero"]:
        certs["finiteness"] = _simple_cert("finiteness", True,
                                           "finite" if full.finite else "divergent",
                                           radius=full.value, exponent=full.exponent)
    out.write_csv(f"{sc['name']}.csv", ["range", "t_low", "t_high", "radius", "diameter_bound",
                                        "integrand_exponent"], rows)
    return certs, {}, {"block": p["block"]}


RUNNERS = {"gowdy-evolve": run_gowdy_evolve, "gowdy-analyze": run_gowdy_analyze,
           "tsym-analyze": run_tsym, "cmc-evolve": run_cmc_evolve,
           "cmc-family": run_cmc_family, "cmc-causal": run_cmc_causal}


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def scenario_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def run(config_path, out_dir=None, threads: int = 1) -> tuple[int, Path | None]:
    """Run one scenario; returns (exit code, manifest path)."""
    try:
        raw = json.loads(Path(config_path).read_text())
    except OSError as exc:
        raise ConfigError("$", f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON: {exc}") from exc
    sc = validate(raw)
    root = Path(out_dir or sc["output"] or f"{sc['name']}-out")
    root.mkdir(parents=True, exist_ok=True)
    out = Outputs(root)
    t0 = time.perf_counter()
    certs, exps, echo = RUNNERS[sc["kind"]](sc, out)
    cert_name = f"{sc['name']}.certificates.json"
    out.write_json(cert_name, _certs_json(certs))
    wall = time.perf_counter() - t0
    verdicts = {k: {"verdict": c.verdict, "passed": bool(c.passed), "judged": _judged(c)}
                for k, c in certs.items()}
    passed = all(v["passed"] for v in verdicts.values() if v["judged"])
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "scenario": sc["name"],
        "kind": sc["kind"],
        "scenario_hash": scenario_hash(raw),
        "code_version": __version__,
        "seed": sc["seed"],
        "threads": threads,
        "config": raw,
        "echo": {**echo, "tolerances": sc["tolerances"]},
        "files": [{"path": f, "sha256": sha256_file(root / f)} for f in out.files],
        "wall_clock_seconds": wall,
        "verdicts": verdicts,
        "exponents": exps,
        "passed": passed,
    }
    final = root / "manifest.json"
    fd, tmp = tempfile.mkstemp(prefix=".manifest-", dir=root)
    with os.fdopen(fd, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_default)
        fh.write("\n")
    os.replace(tmp, final)
    return (EXIT_OK if passed else EXIT_FAIL), final


REPORT_COLUMNS = ["manifest", "scenario", "kind", "scenario_hash", "passed", "digests_ok",
                  "failed", "exponents"]


def report(paths, csv_out=None, stream=None) -> int:
    """Summarize manifests; digest mismatches and failed verdicts give exit 1."""
    stream = stream or sys.stdout
    rows = []
    status = EXIT_OK
    for p in paths:
        p = Path(p)
        try:
            m = json.loads(p.read_text())
            if m.get("schema") != MANIFEST_SCHEMA:
                raise ValueError(f"unexpected schema {m.get('schema')!r}")
        except (OSError, ValueError) as exc:
            raise ConfigError(str(p), f"not a valid manifest: {exc}") from exc
        ok_digest = True
        for f in m["files"]:
            fp = p.parent / f["path"]
            if not fp.exists() or sha256_file(fp) != f["sha256"]:
                ok_digest = False
        failed = sorted(k for k, v in m["verdicts"].items()
                        if v.get("judged", True) and not v["passed"])
        exps = ";".join(f"{k}={fmt(v)}" for k, v in sorted(m.get("exponents", {}).items()))
        rows.append([str(p), m["scenario"], m["kind"], m["scenario_hash"][:12],
                     "yes" if m["passed"] else "no",
                     "yes" if ok_digest else "DIGEST MISMATCH", ",".join(failed), exps])
        if not ok_digest or not m["passed"]:
            status = EXIT_FAIL
    widths = [max(len(REPORT_COLUMNS[j]), *(len(r[j]) for r in rows)) for j in range(len(REPORT_COLUMNS))]
    line = "  ".join(c.ljust(w) for c, w in zip(REPORT_COLUMNS, widths))
    print(line.rstrip(), file=stream)
    for r in rows:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip(), file=stream)
    if csv_out:
        with open(csv_out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            w.writerows(rows)
    return status


def _limit_threads(k: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(k))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="avtdlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"avtdlab {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one scenario config")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides the config)")
    r.add_argument("--threads", type=int, default=1,
                   help="thread cap for the numerical libraries")
    rp = sub.add_parser("report", help="summarize run manifests")
    rp.add_argument("manifests", nargs="+")
    rp.add_argument("--csv", help="also write the table as CSV")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            if args.threads < 1:
                raise ConfigError("--threads", "must be >= 1")
            _limit_threads(args.threads)
            code, manifest = run(args.config, args.out, args.threads)
            print(manifest)
            return code
        return report(args.manifests, args.csv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # compute aborts keep their module diagnostics
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
