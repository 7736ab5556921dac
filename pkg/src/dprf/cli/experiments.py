"""Seeded experiment protocols driven by an :class:`ExperimentConfig`."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from dprf._seeding import derive_seed
from dprf.cli.config import Experiment, ExperimentConfig
from dprf.cli.report import ResultTable
from dprf.data import (
    MEDICAL_SCHEMA,
    WINE_SCHEMA,
    ColumnSchema,
    Dataset,
    PerGroupFraction,
    Role,
    gen_grouped_synthetic,
    gen_synthetic,
    load_tabular,
    preprocess,
    replay,
    split,
    with_label_divisor,
)
from dprf.diagnostics import concentration_check, format_audit, noise_calibration, sensitivity_audit
from dprf.diagnostics import generalization_bound_terms
from dprf.features import build_design_matrix, check_concentration_conditions, estimate_gamma_sq, sample_features
from dprf.metrics import LinearModel, TrainedModel, excessive_risk_gap, statistical_parity, test_error
from dprf.privacy import (
    GammaMechanism,
    GaussianMechanism,
    PrivacyParams,
    calibrate_gaussian,
    check_label_norm,
    default_linear_lambda,
    dp_linear_baseline,
    privatize,
    ridge_linear,
)
from dprf.solvers import solve_kaczmarz, solve_min_norm, solve_sgd

__all__ = ["RunContext", "run_experiment"]

# seed stream identifiers
_DATA, _TEST, _FEATURES, _NOISE, _SOLVER, _SPLIT, _FAIR, _AUDIT = range(1, 9)
_MECH_ID = {"NonPrivate": 0, "Gaussian": 1, "Gamma": 2, "SGD": 3}


@dataclass
class RunContext:
    config: ExperimentConfig
    tables: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    texts: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.config["seed"]

    def warn(self, message: str) -> None:
        if message not in self.warnings:
            self.warnings.append(message)

    def table(self, *args, **kwargs) -> ResultTable:
        t = ResultTable(*args, **kwargs)
        self.tables.append(t)
        return t


# ---------------------------------------------------------------- data


def _schema(cfg: ExperimentConfig) -> ColumnSchema:
    base = MEDICAL_SCHEMA if cfg["data.schema"] == "medical" else WINE_SCHEMA
    roles = dict(base.roles)
    group = cfg["data.group"]
    if group is not None and group not in roles:
        # e.g. a red/white colour tag appended to the wine table
        roles[group] = Role.GROUP
    return ColumnSchema(roles, group=group)


def _raw_table(cfg: ExperimentConfig):
    return load_tabular(cfg["data.path"], _schema(cfg))


def _train_test(cfg: ExperimentConfig, seed: int, r: int, m: int | None = None) -> tuple[Dataset, Dataset]:
    if cfg["data.source"] == "csv":
        tr_raw, te_raw = split(_raw_table(cfg), PerGroupFraction(cfg["data.train_frac"]),
                               derive_seed(seed, _SPLIT, r))
        train = preprocess(tr_raw, cfg["data.preprocess"] or "regression")
        return train, replay(te_raw, train.provenance)
    m = cfg["data.m"] if m is None else m
    d, fn = cfg["data.d"], cfg["data.fn"]
    train = gen_synthetic(derive_seed(seed, _DATA, r, m), m, d, fn)
    test = gen_synthetic(derive_seed(seed, _TEST, r, m), cfg["data.m_test"], d, fn, normalize_labels=False)
    return train, with_label_divisor(test, train.provenance.label_divisor)


def _grouped(cfg: ExperimentConfig, seed: int, r: int) -> tuple[Dataset, Dataset]:
    """Training data for the random feature model and for the linear baseline."""
    if cfg["data.source"] == "csv":
        if cfg["data.group"] is None:
            raise ValueError("fairness experiments on csv data need data.group")
        raw = _raw_table(cfg)
        return preprocess(raw, cfg["data.preprocess"] or "fairness-rf"), preprocess(raw, cfg["data.preprocess_linear"])
    sizes = dict(enumerate(cfg["data.group_sizes"]))
    scales = dict(enumerate(cfg["data.group_scales"]))
    ds = gen_grouped_synthetic(derive_seed(seed, _DATA, r), sizes, scales, cfg["data.d"], cfg["data.fn"])
    return ds, ds


def _label_check(ctx: RunContext, y) -> None:
    try:
        check_label_norm(y)
    except ValueError as exc:
        if not ctx.config["allow_unbounded_labels"]:
            raise
        ctx.warn(f"{exc} (continuing because allow_unbounded_labels is set)")


def _conditions(ctx: RunContext, X, N: int) -> None:
    cfg = ctx.config
    m, d = X.shape
    gamma_sq = estimate_gamma_sq(X) if m > 1 else 0.0
    if gamma_sq <= 0:
        ctx.warn(f"m={m}: input variance is zero; concentration conditions not evaluated")
        return
    rep = check_concentration_conditions(m, d, N, cfg["privacy.eta"], cfg["bound.delta"], gamma_sq,
                                         cfg["features.sigma_omega_sq"],
                                         (cfg["conditions.C1"], cfg["conditions.C2"]))
    if not rep.d_ok:
        ctx.warn(f"m={m}, N={N}: d={d} below required {rep.required_d:.4g}")
    if not rep.variance_ok:
        ctx.warn(f"m={m}, N={N}: gamma^2 sigma^2={rep.observed_variance_product:.4g} "
                 f"below required {rep.required_variance_product:.4g}")
    if not rep.n_ok:
        ctx.warn(f"m={m}, N={N}: N below required {rep.required_N:.4g}")


# ---------------------------------------------------------------- training


def _fit(cfg: ExperimentConfig, A, y, method: str, seed: int):
    if method == "kaczmarz":
        iters = cfg["solver.kaczmarz_iters"] or A.shape[0]
        return solve_kaczmarz(A, y, iters, rng_seed=seed)
    return solve_min_norm(A, y, method=method)


def _params(cfg: ExperimentConfig, N: int, eps: float) -> PrivacyParams:
    if cfg["privacy.noiseless"]:
        return PrivacyParams.noiseless(N, cfg["privacy.eta"])
    return calibrate_gaussian(N, cfg["privacy.eta"], eps, cfg["privacy.delta_p"])


def _evaluate(ctx, table, key_prefix, feats, A, c, train, test, noise_keys):
    """Score every configured mechanism at every epsilon."""
    cfg = ctx.config
    mechs = cfg["privacy.mechanisms"]
    N = feats.n_features
    sgd = None
    if "SGD" in mechs:
        m = A.shape[0]
        sgd = solve_sgd(A, train.y, learning_rate=cfg["solver.sgd_lr_factor"] / m,
                        rng_seed=derive_seed(ctx.seed, _SOLVER, *noise_keys, 1))
    for ei, eps in enumerate(cfg["privacy.epsilon"]):
        params = _params(cfg, N, eps)
        for mech in mechs:
            seed = derive_seed(ctx.seed, _NOISE, *noise_keys, ei, _MECH_ID[mech])
            if mech == "NonPrivate":
                coef = c
            elif mech == "Gaussian":
                coef = privatize(c, GaussianMechanism(params), seed)
            elif mech == "Gamma":
                coef = privatize(c, GammaMechanism.from_params(params), seed)
            else:
                coef = privatize(sgd, GaussianMechanism(params), seed)
            err = test_error(TrainedModel(feats, coef), test.X, test.y)
            table.add((*key_prefix, eps, mech), err)


def _run_curves(ctx: RunContext) -> None:
    cfg = ctx.config
    real = cfg.experiment is Experiment.REAL_DATA
    if real and cfg["data.source"] != "csv":
        raise ValueError("RealData needs data.source = csv")
    if real:
        table = ctx.table("realdata", ("N", "solver", "epsilon", "method"), x="N",
                          series=("solver", "epsilon", "method"))
    else:
        table = ctx.table("curves", ("N", "epsilon", "method"), x="N", series=("epsilon", "method"))
    methods = cfg["solver.methods"] if real else cfg["solver.methods"][:1]
    timings: dict = {}
    for r in range(cfg["repetitions"]):
        train, test = _train_test(cfg, ctx.seed, r)
        _label_check(ctx, train.y)
        for N in cfg["features.N"]:
            if N < train.m:
                raise ValueError(f"N={N} is below the training size m={train.m}")
            if r == 0:
                _conditions(ctx, train.X, N)
            feats = sample_features(derive_seed(ctx.seed, _FEATURES, r), N, train.d,
                                    cfg["features.sigma_omega_sq"], cfg["features.kind"])
            A = build_design_matrix(feats, train.X)
            for si, method in enumerate(methods):
                solver_seed = derive_seed(ctx.seed, _SOLVER, r, N, si)
                if real and r == 0:
                    runs = []
                    for _ in range(cfg["solver.timing_runs"]):
                        t0 = time.perf_counter()
                        c = _fit(cfg, A, train.y, method, solver_seed)
                        runs.append(time.perf_counter() - t0)
                    timings[f"N={N},solver={method}"] = float(np.median(runs))
                else:
                    c = _fit(cfg, A, train.y, method, solver_seed)
                prefix = (N, method) if real else (N,)
                _evaluate(ctx, table, prefix, feats, A, c, train, test, (r, N, si))
    if real:
        ctx.extra["solver_seconds_median"] = timings


def _run_sample_size(ctx: RunContext) -> None:
    cfg = ctx.config
    table = ctx.table("sample_size", ("m", "epsilon", "method"), x="m", series=("epsilon", "method"))
    for r in range(cfg["repetitions"]):
        for m in cfg["sweep.m"]:
            N = m + cfg["sweep.extra_features"]
            train, test = _train_test(cfg, ctx.seed, r, m=m)
            _label_check(ctx, train.y)
            if r == 0:
                _conditions(ctx, train.X, N)
            feats = sample_features(derive_seed(ctx.seed, _FEATURES, r, m), N, train.d,
                                    cfg["features.sigma_omega_sq"], cfg["features.kind"])
            A = build_design_matrix(feats, train.X)
            c = _fit(cfg, A, train.y, cfg["solver.methods"][0], derive_seed(ctx.seed, _SOLVER, r, m))
            _evaluate(ctx, table, (m,), feats, A, c, train, test, (r, m))


# ---------------------------------------------------------------- fairness


def _linear_lambda(cfg: ExperimentConfig, N: int, m: int) -> float:
    lam = cfg["fairness.linear_lambda"]
    return default_linear_lambda(N, m) if lam is None else lam


def _run_erg(ctx: RunContext) -> None:
    cfg = ctx.config
    table = ctx.table("erg", ("N", "epsilon", "model", "metric", "group"), x="epsilon",
                      series=("N", "model", "metric", "group"))
    for r in range(cfg["repetitions"]):
        rf_data, lin_data = _grouped(cfg, ctx.seed, r)
        _label_check(ctx, rf_data.y)
        _label_check(ctx, lin_data.y)
        for N in cfg["features.N"]:
            feats = sample_features(derive_seed(ctx.seed, _FEATURES, r), N, rf_data.d,
                                    cfg["features.sigma_omega_sq"], cfg["features.kind"])
            A = build_design_matrix(feats, rf_data.X)
            rf = TrainedModel(feats, _fit(cfg, A, rf_data.y, cfg["solver.methods"][0],
                                          derive_seed(ctx.seed, _SOLVER, r, N)))
            lam = _linear_lambda(cfg, N, lin_data.m)
            lin = LinearModel(ridge_linear(lin_data.X, lin_data.y, lam))
            for ei, eps in enumerate(cfg["privacy.epsilon"]):
                rf_mech = GaussianMechanism(_params(cfg, N, eps))
                lin_mech = dp_linear_baseline(lin_data.X, lin_data.y, lam, eps, cfg["privacy.delta_p"],
                                              noiseless=cfg["privacy.noiseless"]).mechanism
                for model_name, model, mech, ds in (("rf", rf, rf_mech, rf_data),
                                                     ("linear", lin, lin_mech, lin_data)):
                    rep = excessive_risk_gap(model, mech, ds.X, ds.y, ds.groups, cfg["fairness.perturbations"],
                                             derive_seed(ctx.seed, _FAIR, r, N, ei, len(model_name)))
                    key = (N, eps, model_name)
                    for g, gap in rep.per_group_gap.items():
                        table.add((*key, "gap", str(g)), gap)
                        table.add((*key, "excess_risk", str(g)), rep.per_group_excessive_risk[g])
                        table.add((*key, "hessian_trace", str(g)), rep.hessian_traces[g])
                    table.add((*key, "gap", "max"), max(rep.per_group_gap.values()))
                    table.add((*key, "excess_risk", "population"), rep.population_excessive_risk)


def _run_sp(ctx: RunContext) -> None:
    cfg = ctx.config
    table = ctx.table("sp", ("N", "epsilon", "model"), x="N", series=("epsilon", "model"))
    eps = cfg["privacy.epsilon"][0]
    grid = cfg["fairness.grid"]
    for r in range(cfg["repetitions"]):
        rf_data, lin_data = _grouped(cfg, ctx.seed, r)
        _label_check(ctx, rf_data.y)
        for N in cfg["features.N"]:
            feats = sample_features(derive_seed(ctx.seed, _FEATURES, r), N, rf_data.d,
                                    cfg["features.sigma_omega_sq"], cfg["features.kind"])
            A = build_design_matrix(feats, rf_data.X)
            c = _fit(cfg, A, rf_data.y, cfg["solver.methods"][0], derive_seed(ctx.seed, _SOLVER, r, N))
            noisy = privatize(c, GaussianMechanism(_params(cfg, N, eps)), derive_seed(ctx.seed, _NOISE, r, N))
            lam = _linear_lambda(cfg, N, lin_data.m)
            lin = LinearModel(ridge_linear(lin_data.X, lin_data.y, lam))
            lin_priv = dp_linear_baseline(lin_data.X, lin_data.y, lam, eps, cfg["privacy.delta_p"],
                                          rng_seed=derive_seed(ctx.seed, _NOISE, r, N, 1),
                                          noiseless=cfg["privacy.noiseless"])
            models = {
                "rf_private": (TrainedModel(feats, noisy), rf_data),
                "rf_nonprivate": (TrainedModel(feats, c), rf_data),
                "linear_nonprivate": (lin, lin_data),
                "linear_private": (LinearModel(lin_priv.values), lin_data),
            }
            for name, (model, ds) in models.items():
                if ds.groups is None:
                    raise ValueError("statistical parity needs group labels")
                out = model.predict(ds.X)
                by_group = {g: out[ds.groups == g] for g in ds.group_names()}
                table.add((N, eps, name), statistical_parity(by_group, grid))


# ---------------------------------------------------------------- audit / bound


def _run_audit(ctx: RunContext) -> None:
    cfg = ctx.config
    table = ctx.table("audit", ("check", "N", "statistic"))
    eta, eps, delta_p = cfg["privacy.eta"], cfg["privacy.epsilon"][0], cfg["privacy.delta_p"]
    lines = []
    for r in range(cfg["repetitions"]):
        data, pool = _train_test(cfg, ctx.seed, r)
        pool = pool if cfg["data.source"] == "csv" else None
        _label_check(ctx, data.y)
        for N in cfg["features.N"]:
            if N < data.m:
                raise ValueError(f"N={N} is below the training size m={data.m}")
            if r == 0:
                _conditions(ctx, data.X, N)
            feats = sample_features(derive_seed(ctx.seed, _FEATURES, r), N, data.d,
                                    cfg["features.sigma_omega_sq"], cfg["features.kind"])
            conc = concentration_check(build_design_matrix(feats, data.X))
            for stat, v in conc._asdict().items():
                table.add(("concentration", N, stat), v)
            table.add(("concentration", N, "within_2eta"), float(conc.spectral_deviation <= 2 * eta))
            for mi, mode in enumerate(cfg["audit.modes"]):
                res = sensitivity_audit(data, feats, mode, cfg["audit.trials"], eta,
                                        derive_seed(ctx.seed, _AUDIT, r, N, mi), pool=pool)
                check = f"sensitivity_{mode}"
                table.add((check, N, "empirical_max"), res.empirical_max)
                table.add((check, N, "theoretical_bound"), res.theoretical_bound)
                table.add((check, N, "violated"), float(res.violated))
                table.add((check, N, "excluded"), res.excluded)
                lines.append(f"rep={r} N={N} {format_audit(res)}")
            params = calibrate_gaussian(N, eta, eps, delta_p)
            draws = cfg["audit.draws"]
            for name, mech, n_draws in (("noise_gaussian", GaussianMechanism(params), draws),
                                        ("noise_gamma", GammaMechanism.from_params(params), max(100, draws // 10))):
                rep = noise_calibration(mech, N, n_draws, cfg["audit.delta"],
                                        derive_seed(ctx.seed, _AUDIT, r, N, 100 + len(name)))
                for stat in ("coord_variance_mean", "coord_variance_max_rel_error", "reference_variance",
                             "mean_norm", "reference_mean_norm", "mean_norm_sq", "reference_mean_norm_sq",
                             "quantile", "bound"):
                    table.add((name, N, stat), getattr(rep, stat))
                table.add((name, N, "bound_holds"), float(rep.bound_holds))
                lines.append(f"rep={r} N={N} {name} {rep.quantile_statistic} q{rep.quantile_level:g}="
                             f"{rep.quantile:.6g} bound={rep.bound:.6g} holds={rep.bound_holds}")
    ctx.texts["audit.txt"] = "\n".join(lines) + "\n"


def _run_bound(ctx: RunContext) -> None:
    cfg = ctx.config
    table = ctx.table("bound", ("N", "m", "epsilon", "term"), x="N", series=("m", "epsilon", "term"))
    for N in cfg["features.N"]:
        for m in cfg["bound.m"]:
            for eps in cfg["privacy.epsilon"]:
                t = generalization_bound_terms(N, m, cfg["privacy.eta"], cfg["bound.delta"], eps,
                                               cfg["privacy.delta_p"], cfg["bound.f_norm"])
                for term in ("approximation", "estimation", "concentration", "nonprivate", "privacy",
                             "privacy_one_minus_eta", "total"):
                    table.add((N, m, eps, term), getattr(t, term))
    ctx.extra["bound_note"] = t.note


_DRIVERS = {
    Experiment.CURVES_VS_N: _run_curves,
    Experiment.REAL_DATA: _run_curves,
    Experiment.SAMPLE_SIZE_SWEEP: _run_sample_size,
    Experiment.FAIRNESS_ERG: _run_erg,
    Experiment.FAIRNESS_SP: _run_sp,
    Experiment.AUDIT: _run_audit,
    Experiment.BOUND: _run_bound,
}


def run_experiment(ctx: RunContext) -> RunContext:
    """Fill ``ctx.tables`` for the configured protocol; raises on module errors."""
    _DRIVERS[ctx.config.experiment](ctx)
    return ctx
