"""End-to-end fitting: split, spectral prior from D1, variational fit on D2."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import datagen, glm, spectral
from .errors import ArgumentError, ParseError
from .prior import SpectralPrior, VariancePrior
from .vi import FitConfig, VariationalState, fit, point_estimates, sigma2_posterior_mean

MODEL_FORMAT = "esprior-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class PriorConfig:
    k: int | None = None
    evr: float = 0.95
    radius: float | None = None
    eta: float = 1.0
    xi: float = 1.0


def build_prior(split, prior_cfg=PriorConfig()):
    """Spectral prior from the D1 covariates of ``split``."""
    spec = spectral.spectrum_from_data(split.D1, split.n)
    k = prior_cfg.k if prior_cfg.k is not None else spectral.choose_k(spec, prior_cfg.evr)
    k = min(int(k), spec.dim)
    low_rank = spectral.truncate(spec, k)
    return SpectralPrior.from_low_rank(low_rank, prior_cfg.radius), spec


@dataclass
class FittedModel:
    spec: glm.GlmSpec
    states: list
    radii: list
    center: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def p(self):
        return self.states[0].p

    @property
    def predictive(self):
        return self.states if len(self.states) > 1 else self.states[0]

    def point_estimate(self):
        from .vi import project_to_ball

        ests = [project_to_ball(s.beta_mean(), r) for s, r in zip(self.states, self.radii)]
        return np.mean(ests, axis=0)

    def sigma2_mean(self):
        return float(np.mean([sigma2_posterior_mean(s) for s in self.states]))


@dataclass
class PipelineResult:
    model: FittedModel
    results: list
    priors: list
    splits: list


def fit_dataset(
    data,
    spec,
    prior_cfg=PriorConfig(),
    fit_cfg=FitConfig(),
    split_seed=0,
    swap_average=False,
):
    """Split, build the prior, and fit; optionally repeat with D1/D2 swapped."""
    glm.validate_response(spec, data.y)
    sd = datagen.split(data, split_seed)
    splits = [sd] + ([datagen.swap_roles(sd)] if swap_average else [])
    var_prior = VariancePrior(prior_cfg.eta, prior_cfg.xi) if spec.two_parameter else None
    results, priors = [], []
    for s in splits:
        prior, _ = build_prior(s, prior_cfg)
        results.append(fit(s, spec, prior, fit_cfg, var_prior=var_prior))
        priors.append(prior)
    model = FittedModel(
        spec,
        [r.state for r in results],
        [r.radius for r in results],
        data.center,
        {
            "k": [int(p.low_rank.rank) for p in priors],
            "pos_rank": [int(p.low_rank.pos_rank) for p in priors],
            "swap_average": bool(swap_average),
            "split_seed": int(split_seed),
        },
    )
    return PipelineResult(model, results, priors, splits)


def map_and_mean(result):
    """Point estimates of a pipeline result (averaged over swapped fits)."""
    return point_estimates(result.results if len(result.results) > 1 else result.results[0])


# ---------------------------------------------------------------------------
# persistence


def save_model(model, fh, extra=None):
    """Write ``model`` as a self-describing ``.npz`` container to ``fh``."""
    arrays = {}
    comps = []
    for i, (s, r) in enumerate(zip(model.states, model.radii)):
        arrays[f"mean_{i}"] = s.mean
        arrays[f"factor_{i}"] = s.factor
        if s.lowrank is not None:
            arrays[f"lowrank_{i}"] = s.lowrank
        if s.basis is not None:
            arrays[f"basis_{i}"] = s.basis
        comps.append(
            {
                "kind": s.kind,
                "radius": float(r),
                "variance_block": None if s.variance_block is None else list(s.variance_block),
            }
        )
    if model.center is not None:
        arrays["center"] = model.center
    header = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "spec": model.spec.to_dict(),
        "components": comps,
        "meta": model.meta,
        "extra": extra or {},
    }
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(fh, **arrays)


def load_model(path):
    try:
        z = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise ParseError(f"cannot read model file: {exc}", str(path)) from exc
    with z:
        header = json.loads(bytes(z["header"]).decode())
        if header.get("format") != MODEL_FORMAT:
            raise ParseError("not a model file", str(path))
        if header.get("version") != MODEL_VERSION:
            raise ParseError(f"unsupported model version {header.get('version')}", str(path))
        states, radii = [], []
        for i, c in enumerate(header["components"]):
            vb = c["variance_block"]
            states.append(
                VariationalState(
                    z[f"mean_{i}"],
                    c["kind"],
                    z[f"factor_{i}"],
                    z[f"lowrank_{i}"] if f"lowrank_{i}" in z else None,
                    z[f"basis_{i}"] if f"basis_{i}" in z else None,
                    None if vb is None else tuple(vb),
                )
            )
            radii.append(c["radius"])
        center = z["center"] if "center" in z else None
    model = FittedModel(glm.GlmSpec.from_dict(header["spec"]), states, radii, center, header["meta"])
    return model, header


def model_bytes(model, extra=None):
    buf = io.BytesIO()
    save_model(model, buf, extra)
    return buf.getvalue()


def check_compatible(model, data):
    if data.p != model.p:
        raise ArgumentError(f"model expects {model.p} covariates, data has {data.p}")
