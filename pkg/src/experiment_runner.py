import csv
import io
import logging
import math

import numpy as np

from certify import (
    check_recovery_condition,
    error_bounds,
    kernel_exact_recovery_check,
    nsp_falsify,
    recovery_threshold,
    rip_exact,
    ripl_exact,
    ripl_lower_bound,
)
from config_loader import ExperimentConfig
from data_loaders import CsvLoader, PgmLoader, ingest
from data_models import CertificateReport, NspConstants, SolveOptions, SparsityPattern, Weights
from evaluation import ReconstructionEvaluator, round_metrics
from exceptions import ConfigError
from fliptest import (
    FlipReport,
    MoverSpec,
    generalized_flip_test,
    make_permutation,
    permutation_sweep,
    piecewise_signal,
    run_flip_test,
)
from operators import (
    SensingOperator,
    dft,
    dft2,
    dwt,
    dwt2,
    identity,
    materialize,
    matrix_operator,
    reorder_outputs,
    subsample,
    tensor_product,
    wht,
)
from sampling import get_sampling_strategy
from solver import solve_weighted_l1
from sparsity import (
    covers,
    level_weights,
    make_pattern,
    max_weighted_l0_over_pattern,
    num_elements,
    ratio_constant,
    scale_pattern,
    sk_epsilon,
    sparse_vector_in_levels,
)
from wavelets import tensor_level_order, wavelet_level_boundaries

FLIP_COLUMNS = ["perm_index", "seed", "err_orig_l2", "err_flip_l2", "err_orig_l1", "err_flip_l1", "iterations"]
DEFAULT_ORDERING = {"dft": "magnitude", "wht": "paley"}


class SensingSetup:
    """The subsampled operator of a config together with its full-sampling parts."""
    def __init__(self, full: SensingOperator, sparsifier: SensingOperator | None, boundaries: tuple[int, ...],
                 U: SensingOperator, scheme, side: int | None):
        self.full = full
        self.sparsifier = sparsifier
        self.boundaries = boundaries
        self.U = U
        self.scheme = scheme
        self.side = side

    @property
    def n(self) -> int:
        return self.full.n_in

    def to_coefficients(self, signal: np.ndarray) -> np.ndarray:
        return signal if self.sparsifier is None else self.sparsifier.forward(signal)

    def to_signal(self, coefficients: np.ndarray) -> np.ndarray:
        return coefficients if self.sparsifier is None else self.sparsifier.adjoint_apply(coefficients)


def _sensing_1d(kind: str, n: int, ordering: str | None) -> SensingOperator:
    if kind == "dft":
        return dft(n, ordering or DEFAULT_ORDERING["dft"])
    if kind == "wht":
        return wht(n, ordering or DEFAULT_ORDERING["wht"])
    if kind == "identity":
        return identity(n)
    raise NotImplementedError(f"Sensing transform '{kind}' is not implemented.")


def build_operator(config: ExperimentConfig) -> SensingSetup:
    """Sensing . sparsifier^-1, subsampled by the configured scheme."""
    op = config.operator
    if op.sensing == "matrix":
        A = ingest(op.matrix_path)
        if A.ndim != 2:
            raise ConfigError(f"matrix_path '{op.matrix_path}' does not hold a matrix")
        full = matrix_operator(A, name=op.matrix_path)
        boundaries = (0, full.n_in)
        sparsifier, side = None, None
    elif op.dims == 1:
        sensing = _sensing_1d(op.sensing, op.n, op.ordering)
        sparsifier = dwt(op.wavelet, op.n) if op.wavelet else None
        boundaries = wavelet_level_boundaries(op.n, op.wavelet.levels) if op.wavelet else (0, op.n)
        full = sensing if sparsifier is None else sensing @ sparsifier.H
        side = None
    else:
        side = op.n
        bands_1d = wavelet_level_boundaries(side, op.wavelet.levels) if op.wavelet else (0, side)
        if op.sensing == "dft":
            sensing = dft2(side, op.ordering or DEFAULT_ORDERING["dft"], bands=bands_1d)
        else:
            one_d = _sensing_1d(op.sensing, side, op.ordering)
            order, _ = tensor_level_order(bands_1d)
            sensing = reorder_outputs(tensor_product(one_d, one_d), order, f"{one_d.descriptor}2[rings]")
        if op.wavelet:
            sparsifier, boundaries = dwt2(op.wavelet, side)
        else:
            sparsifier, boundaries = None, tensor_level_order(bands_1d)[1]
        full = sensing if sparsifier is None else sensing @ sparsifier.H

    strategy = get_sampling_strategy(config.sampling.model_dump(exclude_none=True), boundaries, config.seed)
    scheme = strategy.draw(full.n_out)
    logging.info(f"Operator {full} with sampling {strategy}: {len(scheme)} of {full.n_out} rows")
    return SensingSetup(full, sparsifier, tuple(boundaries), subsample(full, scheme), scheme, side)


def build_pattern(config: ExperimentConfig, boundaries: tuple[int, ...] | None = None) -> SparsityPattern:
    M = config.pattern.M if config.pattern.M is not None else boundaries
    if M is None:
        raise ConfigError("pattern.M is required when there is no operator to take level boundaries from")
    return make_pattern(config.pattern.s, M)


def build_signal(config: ExperimentConfig, setup: SensingSetup, p: SparsityPattern | None) -> np.ndarray:
    """Ground-truth coefficient vector."""
    sig = config.signal
    if sig.kind == "sparse":
        if p is None:
            raise ConfigError("A sparse test signal needs a pattern block")
        return sparse_vector_in_levels(p, setup.n, seed=config.seed + sig.seed, complex_valued=sig.complex_valued)
    if sig.kind == "piecewise":
        if setup.side is not None:
            raise ConfigError("The piecewise test signal is one-dimensional")
        values = piecewise_signal(setup.n)
    else:
        if not sig.path:
            raise ConfigError("signal.kind 'file' needs signal.path")
        values = ingest(sig.path)
    if values.shape != (setup.n,):
        raise ConfigError(f"Signal of length {values.size} does not fit an operator on {setup.n} coefficients")
    return setup.to_coefficients(values) if sig.transform else values


def _csv_text(rows: list[dict], columns: list[str]) -> str:
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
    return out.getvalue()


def flip_csv(reports: list[FlipReport]) -> str:
    """One row per permutation and a final row of column means. Provenance lives in the JSON sidecar."""
    rows = [r.to_row(i) for i, r in enumerate(reports)]
    means = {c: float(np.mean([row[c] for row in rows])) for c in FLIP_COLUMNS[2:]}
    rows.append({"perm_index": "summary", "seed": "", **means})
    return _csv_text(rows, FLIP_COLUMNS)


def certificate_summary(report: CertificateReport) -> str:
    lines = [f"kind: {report.kind}", f"method: {report.method}", f"value: {report.value}"]
    if report.bound is not None:
        lines.append(f"bound: [{report.bound[0]}, {report.bound[1]}]")
    if report.witness_support is not None:
        lines.append(f"witness support: {report.witness_support}")
    lines.append(f"work: {report.work}")
    lines.append(f"passed: {report.passed}")
    if report.notes:
        lines.append(f"notes: {report.notes}")
    return "\n".join(lines) + "\n"


class ExperimentRunner:
    """
    Runs one configured command. It is a pure "doer": run() returns the metrics
    and the named output files, and writes nothing itself.
    """
    def __init__(self, config: ExperimentConfig, run_name: str, provenance: dict | None = None):
        self.config = config
        self.run_name = run_name
        self.provenance = provenance or {}

    @property
    def _solve_opts(self) -> SolveOptions:
        return self.config.solver

    def run(self) -> tuple[dict, dict]:
        command = self.config.command
        logging.info(f"--- Running {command}: {self.run_name} ---")
        handler = {
            "certify": self.run_certify,
            "fliptest": self.run_fliptest,
            "recover": self.run_recover,
            "skeps": self.run_skeps,
            "pattern": self.run_pattern,
        }[command]
        metrics, files = handler()
        return round_metrics(metrics), files

    def run_certify(self) -> tuple[dict, dict]:
        cfg, limits = self.config.certify, self.config.limits
        setup = build_operator(self.config)
        p = build_pattern(self.config, setup.boundaries)
        A = materialize(setup.U, cap=limits.materialize_cap, n_jobs=self.config.threads)
        seed = self.config.seed
        extra = {}
        if cfg.quantity == "bounds":
            if cfg.rho is None:
                raise ConfigError("certify.rho is required for error bounds")
            bounds = error_bounds(NspConstants(rho=cfg.rho, tau=cfg.tau), p, cfg.sigma, cfg.epsilon)
            return bounds.model_dump(), {"certificate.json": {"bounds": bounds.model_dump(), "provenance": self.provenance},
                                         "summary.txt": "".join(f"{k}: {v}\n" for k, v in bounds.model_dump().items())}
        if cfg.quantity == "ripl":
            report = ripl_exact(A, p, cap=limits.enumeration_cap, n_jobs=self.config.threads)
        elif cfg.quantity == "rip":
            report = rip_exact(A, cfg.s if cfg.s is not None else num_elements(p), cap=limits.enumeration_cap,
                               n_jobs=self.config.threads)
        elif cfg.quantity == "ripl-lower":
            report = ripl_lower_bound(A, p, budget=cfg.budget, seed=seed)
        elif cfg.quantity == "recovery":
            check = check_recovery_condition(A, p, cap=limits.enumeration_cap, budget=cfg.budget, seed=seed,
                                             n_jobs=self.config.threads)
            extra = check.model_dump(exclude={"report"})
            report = check.report or CertificateReport(kind="RIP_L", method="analytic", passed=False, notes=check.reason)
            report.passed = check.satisfied if check.conclusive else None
        elif cfg.quantity == "kernel":
            report = kernel_exact_recovery_check(A, p, kernel_cap=limits.kernel_cap, trials=cfg.trials, seed=seed)
        else:
            if cfg.rho is None:
                raise ConfigError("certify.rho is required for the nullspace property check")
            report = nsp_falsify(A, p, cfg.rho, cfg.tau, trials=cfg.trials, seed=seed, norm=cfg.norm)
        metrics = {"value": report.value, "work": report.work, "passed": report.passed}
        files = {
            "certificate.json": {**report.model_dump(), "pattern": {"s": list(p.s), "M": list(p.M)},
                                 "recovery_check": extra or None, "provenance": self.provenance},
            "summary.txt": certificate_summary(report),
        }
        return metrics, files

    def run_fliptest(self) -> tuple[dict, dict]:
        cfg = self.config.fliptest
        setup = build_operator(self.config)
        p = build_pattern(self.config, setup.boundaries)
        x1 = build_signal(self.config, setup, p)
        seed = self.config.seed
        if cfg.mode == "single":
            if cfg.permutation == "identity":
                perm = make_permutation("custom", setup.n, mapping=range(setup.n))
            else:
                perm = make_permutation(cfg.permutation, p, seed)
            reports = [run_flip_test(setup.U, x1, perm, self._solve_opts, cfg.epsilon)]
            summary = {"err_original_l2": reports[0].err_original_l2, "err_flipped_l2": reports[0].err_flipped_l2}
        elif cfg.mode == "sweep":
            sweep = permutation_sweep(setup.U, x1, p, cfg.count, seed, self._solve_opts, cfg.epsilon,
                                      n_jobs=self.config.threads)
            reports, summary = sweep.reports, {**sweep.summary, "err_original_l2": sweep.reports[0].err_original_l2}
        else:
            omega = level_weights(p, cfg.weights_base)
            mover = MoverSpec(**cfg.mover.model_dump())
            report = generalized_flip_test(setup.U, x1, omega, p, mover, self._solve_opts,
                                           thresholds=cfg.thresholds, weighted=cfg.weighted)
            reports = [report]
            summary = {"err_original_l2": report.err_original_l2, "err_flipped_l2": report.err_flipped_l2,
                       "mover": report.mover}
        files = {
            "fliptest.csv": flip_csv(reports),
            "fliptest_summary.json": {"mode": cfg.mode, "summary": summary, "provenance": self.provenance,
                                      "reports": [r.model_dump() for r in reports]},
        }
        metrics = {k: v for k, v in summary.items() if isinstance(v, float)}
        return metrics, files

    def run_recover(self) -> tuple[dict, dict]:
        cfg = self.config.recover
        setup = build_operator(self.config)
        p = build_pattern(self.config, setup.boundaries) if self.config.pattern else None
        x = build_signal(self.config, setup, p)
        y = setup.U.forward(x)
        if cfg.noise > 0:
            rng = np.random.default_rng(self.config.seed + 1)
            y = y + cfg.noise * rng.standard_normal(y.shape)
        if cfg.weights_base is not None:
            if p is None:
                raise ConfigError("Weighted recovery needs a pattern block")
            weights = level_weights(p, cfg.weights_base).values
        else:
            weights = np.ones(setup.n)
        result = solve_weighted_l1(setup.U, y, Weights(values=weights), epsilon=cfg.epsilon, opts=self._solve_opts)
        errors = ReconstructionEvaluator().evaluate(result.x, x)
        files = {
            "reconstruction.csv": CsvLoader().encode(result.x).decode("utf-8"),
            "solve.json": {**result.diagnostics(), **errors, "measurements": len(setup.scheme),
                           "provenance": self.provenance},
        }
        if setup.side is not None:
            image = np.real(setup.to_signal(result.x)).reshape(setup.side, setup.side)
            files["reconstruction.pgm"] = PgmLoader().encode(image)
        return {**errors, "iterations": result.iterations, "converged": result.converged}, files

    def _skeps_input(self) -> tuple[np.ndarray, int | None]:
        path = self.config.skeps.input or self.config.signal.path
        if not path:
            raise ConfigError("skeps needs skeps.input or signal.path")
        if str(path).lower().endswith(".pgm"):
            image = PgmLoader().load_image(path)
            if image.shape[0] != image.shape[1]:
                raise ConfigError(f"skeps images must be square, got {image.shape}")
            return image.ravel(), image.shape[0]
        return ingest(path), None

    def run_skeps(self) -> tuple[dict, dict]:
        values, side = self._skeps_input()
        op = self.config.operator
        if op is None or op.wavelet is None:
            raise ConfigError("skeps needs operator.wavelet to define the levels")
        if side is not None:
            W, boundaries = dwt2(op.wavelet, side)
        else:
            W, boundaries = dwt(op.wavelet, len(values)), wavelet_level_boundaries(len(values), op.wavelet.levels)
        w = W.forward(values)
        full = make_pattern([boundaries[i + 1] - boundaries[i] for i in range(len(boundaries) - 1)], boundaries)
        columns = ["epsilon", "total"] + [f"level_{i + 1}" for i in range(full.num_levels)]
        rows = []
        for eps in self.config.skeps.epsilons:
            counts = sk_epsilon(w, full, eps)
            rows.append({"epsilon": eps, "total": int(counts.sum()),
                         **{f"level_{i + 1}": int(c) for i, c in enumerate(counts)}})
        return {"levels": full.num_levels}, {"skeps.csv": _csv_text(rows, columns)}

    def run_pattern(self) -> tuple[dict, dict]:
        p = build_pattern(self.config)
        eta = ratio_constant(p)
        finite = not math.isinf(eta)
        info = {
            "s": list(p.s),
            "M": list(p.M),
            "num_levels": p.num_levels,
            "num_elements": num_elements(p),
            "eta": str(eta) if finite else "inf",
            "doubled": {"s": list(scale_pattern(p, 2).s), "M": list(p.M)},
            "recovery_threshold": recovery_threshold(p) if finite else None,
            "weighted_l0_bound": max_weighted_l0_over_pattern(p, level_weights(p)),
        }
        if self.config.operator is not None and self.config.operator.n is not None:
            n = self.config.operator.n ** self.config.operator.dims
            info["covers"] = covers(p, n)
        return {"num_elements": info["num_elements"]}, {"pattern.json": {**info, "provenance": self.provenance}}
