"""Command-line front end and experiment orchestration.

Every command writes its outputs plus a ``manifest.json`` (command, full
config, seed, artifact version) into ``--output-dir``; given the manifest,
each run is reproducible bit for bit.  Exit codes: 0 success, 1 usage or
schema error, 2 verification failure, 3 quadrature convergence failure.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass

import click
import numpy as np

from . import __version__
from .dataio import (
    SchemaError,
    load_prediction_set,
    save_prediction_set,
    write_csv,
    write_manifest,
)
from .estimators import (
    Availability,
    ApproximationId,
    EnsembleBatch,
    EstimatorId,
    PredictionSet,
    RiskKind,
    availability,
    default_estimators,
    measure_matrix,
)
from .gaussians import GaussianComponent, GaussianEnsemble, averaged_surrogate, moment_surrogate
from .metrics import DegenerateMetricError, auroc, kendall_tau_b, prr
from .oracle import (
    ConvergenceError,
    QuadratureConfig,
    oracle_entropy,
    oracle_expected_score,
    oracle_divergence,
)
from .scores import ScoringRule
from .synthetic import (
    ShiftKind,
    UniformPosteriorSpec,
    shift_report,
    two_curve_arrays,
)
from .trainer import (
    MlpSpec,
    TrainConfig,
    active_learning_loop,
    ensemble_nll,
    predict,
    predict_arrays,
    save_checkpoint,
    train_ensemble,
)


class VerificationFailure(RuntimeError):
    """oracle-check found deviations beyond tolerance."""


def _parse_rules(text: str) -> list[ScoringRule]:
    if text.strip().lower() == "all":
        return list(ScoringRule)
    rules = []
    for part in text.split(","):
        part = part.strip().lower()
        try:
            rules.append(ScoringRule(part))
        except ValueError:
            raise click.UsageError(
                f"unknown rule {part!r}; expected crps, log, quadratic, se, or all")
    return rules


def _parse_estimators(text: str) -> tuple[EstimatorId, ...]:
    if text.strip().lower() == "all":
        return default_estimators()
    out = []
    for part in text.split(","):
        try:
            out.append(EstimatorId.parse(part))
        except ValueError as exc:
            raise click.UsageError(str(exc))
    return tuple(out)


@click.group()
@click.version_option(__version__)
def cli():
    """Regression uncertainty measures for Gaussian ensembles."""


# -- measures -----------------------------------------------------------------

@cli.command("measures")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--rules", default="all", show_default=True)
@click.option("--estimators", "estimators_text", default="all", show_default=True)
@click.option("--oracle-fallback", is_flag=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--output-dir", default=".", show_default=True)
def cmd_measures(input_path, rules, estimators_text, oracle_fallback, seed, output_dir):
    """Evaluate every (rule, estimator) cell for every point of a prediction set."""
    ps = load_prediction_set(input_path)
    rules_list = _parse_rules(rules)
    ests = _parse_estimators(estimators_text)
    matrix = measure_matrix(rules_list, ps, use_oracle_fallback=oracle_fallback,
                            estimators=ests)
    os.makedirs(output_dir, exist_ok=True)
    header = ["point_id", "target", "group"] + [c.name for c in matrix.columns]
    rows = []
    for i, pt in enumerate(ps.points):
        row = [pt.point_id, pt.target, pt.group]
        row.extend(float(v) for v in matrix.values[i])
        rows.append(row)
    write_csv(os.path.join(output_dir, "measures.csv"), header, rows)
    write_manifest(output_dir, "measures", seed, {
        "input": os.path.abspath(input_path), "rules": rules,
        "estimators": estimators_text, "oracle_fallback": oracle_fallback,
        "output_dir": os.path.abspath(output_dir),
    })
    click.echo(f"wrote {len(rows)} rows x {len(matrix.columns)} measure columns")


# -- oracle-check ----------------------------------------------------------------

@dataclass
class _CellCheck:
    rule: ScoringRule
    estimator: EstimatorId
    max_abs_dev: float = 0.0
    max_rel_dev: float = 0.0
    convergence_failures: int = 0


def _quadrature_cells(rule: ScoringRule, ens: GaussianEnsemble,
                      cfg: QuadratureConfig) -> dict[str, float]:
    """Assemble every estimator cell from per-pair quadrature primitives."""
    comps = [GaussianComponent(c.mean, c.variance) for c in ens.components]
    mm = moment_surrogate(ens).as_component()
    av = averaged_surrogate(ens).as_component()
    h_members = [oracle_entropy(rule, c, cfg) for c in comps]
    h_mix = oracle_entropy(rule, ens, cfg)
    h_mm = oracle_entropy(rule, mm, cfg)
    h_av = oracle_entropy(rule, av, cfg)

    def div(pred, label, h_label):
        if rule is ScoringRule.CRPS:
            return oracle_divergence(rule, pred, label, cfg)
        return oracle_expected_score(rule, pred, label, cfg).value - h_label

    d_pairs = [div(a, b, h_members[j])
               for a in comps for j, b in enumerate(comps)]
    d_ens_member = [div(ens, c, h_members[j]) for j, c in enumerate(comps)]
    d_mm_member = [div(mm, c, h_members[j]) for j, c in enumerate(comps)]
    d_av_member = [div(av, c, h_members[j]) for j, c in enumerate(comps)]
    d_mm_ens = div(mm, ens, h_mix)
    d_av_ens = div(av, ens, h_mix)

    bayes = {
        "1": float(np.mean(h_members)), "2": h_mix, "3a": h_mm, "3b": h_av,
    }
    exc = {
        "1_1": float(np.mean(d_pairs)),
        "2_1": float(np.mean(d_ens_member)),
        "3a_1": float(np.mean(d_mm_member)),
        "3b_1": float(np.mean(d_av_member)),
        "3a_2": d_mm_ens,
        "3b_2": d_av_ens,
    }
    cells = {f"bayes_{k}": v for k, v in bayes.items()}
    cells.update({f"exc_{k}": v for k, v in exc.items()})
    for pair, value in exc.items():
        alpha = pair.split("_")[0]
        cells[f"tot_{pair}"] = bayes[alpha] + value
    return cells


def run_oracle_check(trials: int, seed: int,
                     cfg: QuadratureConfig | None = None,
                     rel_tol: float = 1e-6, abs_floor: float = 1e-9):
    """Compare every ClosedForm (and IdenticallyZero) cell to quadrature.

    Returns (rows, passed, worst_rel): one row per (rule, estimator) with
    the worst deviation over all trials.  A cell passes when
    |closed - quad| <= max(rel_tol * |closed|, abs_floor).
    """
    if trials < 1:
        raise click.UsageError("--trials must be >= 1")
    cfg = cfg or QuadratureConfig()
    rng = np.random.default_rng(seed)
    checks = {(rule, est.key): _CellCheck(rule, est)
              for rule in ScoringRule for est in default_estimators()}
    passed = True
    for _ in range(trials):
        m = int(rng.integers(1, 6))
        means = rng.uniform(-5.0, 5.0, size=m)
        variances = rng.uniform(0.05, 9.0, size=m)
        ens = GaussianEnsemble.from_arrays(means, variances)
        batch = EnsembleBatch(means[None, :], variances[None, :])
        for rule in ScoringRule:
            try:
                quad = _quadrature_cells(rule, ens, cfg)
            except ConvergenceError:
                for est in default_estimators():
                    checks[(rule, est.key)].convergence_failures += 1
                passed = False
                continue
            for est in default_estimators():
                avail = availability(rule, est)
                if avail is Availability.QUADRATURE_REQUIRED:
                    continue
                closed = float(batch.evaluate(rule, est)[0])
                dev = abs(closed - quad[est.key])
                cell = checks[(rule, est.key)]
                cell.max_abs_dev = max(cell.max_abs_dev, dev)
                cell.max_rel_dev = max(cell.max_rel_dev,
                                       dev / max(abs(closed), abs_floor / rel_tol))
                if dev > max(rel_tol * abs(closed), abs_floor):
                    passed = False
    rows = [c for c in checks.values()]
    worst = max(c.max_rel_dev for c in rows)
    return rows, passed, worst


@cli.command("oracle-check")
@click.option("--trials", default=200, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--output-dir", default=".", show_default=True)
def cmd_oracle_check(trials, seed, output_dir):
    """Verify all closed-form estimator cells against adaptive quadrature."""
    rows, passed, worst = run_oracle_check(trials, seed)
    os.makedirs(output_dir, exist_ok=True)
    write_csv(
        os.path.join(output_dir, "oracle_check.csv"),
        ["rule", "estimator", "max_abs_dev", "max_rel_dev", "convergence_failures"],
        [[c.rule.value, c.estimator.key, c.max_abs_dev, c.max_rel_dev,
          c.convergence_failures] for c in rows],
    )
    write_manifest(output_dir, "oracle-check", seed, {
        "trials": trials, "output_dir": os.path.abspath(output_dir),
    })
    click.echo(f"oracle-check: {trials} trials, worst relative deviation {worst:.3e}")
    if not passed:
        raise VerificationFailure(
            f"closed forms deviate from quadrature beyond tolerance "
            f"(worst relative {worst:.3e})")


# -- shift --------------------------------------------------------------------

_KIND_ALIASES = {k.value: k for k in ShiftKind}


@cli.command("shift")
@click.option("--kind", default="all", show_default=True,
              type=click.Choice(["all", *_KIND_ALIASES]))
@click.option("--rules", default="all", show_default=True)
@click.option("--replicates", default=100_000, show_default=True)
@click.option("--members", default=10, show_default=True)
@click.option("--flat-threshold", default=0.01, show_default=True)
@click.option("--oracle-fallback", is_flag=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--output-dir", default=".", show_default=True)
def cmd_shift(kind, rules, replicates, members, flat_threshold, oracle_fallback,
              seed, output_dir):
    """Direction table (up/down/flat) for each measure under posterior shifts."""
    rules_list = _parse_rules(rules)
    base = UniformPosteriorSpec(members=members, replicates=replicates, seed=seed)
    kinds = list(ShiftKind) if kind == "all" else [_KIND_ALIASES[kind]]
    rows = []
    for k in kinds:
        report = shift_report(rules_list, base, k, flat_threshold=flat_threshold,
                              oracle_fallback=oracle_fallback)
        for row in report.rows:
            rows.append([k.value, row.rule.value, row.estimator.key,
                         row.direction, row.base_mean, row.shifted_mean])
    os.makedirs(output_dir, exist_ok=True)
    write_csv(os.path.join(output_dir, "shift.csv"),
              ["kind", "rule", "estimator", "direction", "base_mean", "shifted_mean"],
              rows)
    write_manifest(output_dir, "shift", seed, {
        "kind": kind, "rules": rules, "replicates": replicates, "members": members,
        "flat_threshold": flat_threshold, "oracle_fallback": oracle_fallback,
        "output_dir": os.path.abspath(output_dir),
    })
    click.echo(f"wrote {len(rows)} shift rows")


# -- training-based commands ------------------------------------------------------

def _train_on_two_curve(n_train, members, epochs, seed, x_low, x_high):
    xs, ys, _ = two_curve_arrays(n_train, x_low, x_high, seed)
    cfg = TrainConfig(epochs=epochs, seed=seed)
    predictor = train_ensemble(xs, ys, members, MlpSpec(), cfg)
    return predictor, xs, ys


@cli.command("synth-demo")
@click.option("--seed", default=0, show_default=True)
@click.option("--n-train", default=1200, show_default=True)
@click.option("--members", default=10, show_default=True)
@click.option("--epochs", default=100, show_default=True)
@click.option("--rules", default="log", show_default=True)
@click.option("--output-dir", default=".", show_default=True)
def cmd_synth_demo(seed, n_train, members, epochs, rules, output_dir):
    """Train on the two-curve task and emit per-point risks on a wide grid."""
    rules_list = _parse_rules(rules)
    predictor, xs, ys = _train_on_two_curve(n_train, members, epochs, seed, -4.0, 4.0)
    _, _, comp = two_curve_arrays(n_train, -4.0, 4.0, seed)
    grid = np.linspace(-7.0, 7.0, 281)
    means, variances = predict_arrays(predictor, grid)
    batch = EnsembleBatch(means, variances)
    header = ["x", "pred_mean"]
    cols = [grid, means.mean(axis=1)]
    ba = ApproximationId.BA
    for rule in rules_list:
        for est in (EstimatorId(RiskKind.TOTAL, ba, ba),
                    EstimatorId(RiskKind.BAYES, ba),
                    EstimatorId(RiskKind.EXCESS, ba, ba)):
            header.append(f"{rule.value}_{est.key}")
            cols.append(batch.evaluate(rule, est))
    os.makedirs(output_dir, exist_ok=True)
    write_csv(os.path.join(output_dir, "synth_demo.csv"), header,
              [[float(c[i]) for c in cols] for i in range(len(grid))])
    write_csv(os.path.join(output_dir, "synth_data.csv"), ["x", "y", "component"],
              [[float(x), float(y), int(k)] for x, y, k in zip(xs, ys, comp)])
    write_manifest(output_dir, "synth-demo", seed, {
        "n_train": n_train, "members": members, "epochs": epochs, "rules": rules,
        "output_dir": os.path.abspath(output_dir),
    })
    click.echo(f"wrote synth_demo.csv over {len(grid)} grid points")


@cli.command("train")
@click.option("--seed", default=0, show_default=True)
@click.option("--n-train", default=1200, show_default=True)
@click.option("--n-test", default=500, show_default=True)
@click.option("--members", default=10, show_default=True)
@click.option("--epochs", default=100, show_default=True)
@click.option("--x-low", default=-4.0, show_default=True)
@click.option("--x-high", default=4.0, show_default=True)
@click.option("--output-dir", default=".", show_default=True)
def cmd_train(seed, n_train, n_test, members, epochs, x_low, x_high, output_dir):
    """Train a two-curve ensemble; write a checkpoint and test predictions."""
    predictor, _, _ = _train_on_two_curve(n_train, members, epochs, seed, x_low, x_high)
    xs_test, ys_test, _ = two_curve_arrays(n_test, x_low, x_high, seed + 1)
    ps = predict(predictor, xs_test, targets=ys_test, group="id")
    os.makedirs(output_dir, exist_ok=True)
    save_checkpoint(predictor, os.path.join(output_dir, "checkpoint.json"))
    save_prediction_set(ps, os.path.join(output_dir, "predictions.json"))
    nll = ensemble_nll(predictor, xs_test, ys_test)
    write_manifest(output_dir, "train", seed, {
        "n_train": n_train, "n_test": n_test, "members": members, "epochs": epochs,
        "x_low": x_low, "x_high": x_high, "output_dir": os.path.abspath(output_dir),
    })
    click.echo(f"held-out ensemble NLL: {nll:.6f}")


# -- downstream metrics ------------------------------------------------------------

def _matrix_for(ps: PredictionSet, rules_text: str, oracle_fallback: bool):
    rules_list = _parse_rules(rules_text)
    return measure_matrix(rules_list, ps, use_oracle_fallback=oracle_fallback)


def _usable(values: np.ndarray) -> bool:
    return not np.any(np.isnan(values))


@cli.command("selective")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--rules", default="all", show_default=True)
@click.option("--oracle-fallback", is_flag=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--output-dir", default=".", show_default=True)
def cmd_selective(input_path, rules, oracle_fallback, seed, output_dir):
    """Prediction-reject ratio of every measure against squared errors."""
    ps = load_prediction_set(input_path)
    try:
        targets = ps.targets()
    except ValueError as exc:
        raise SchemaError(f"selective prediction requires targets: {exc}")
    mu_star = np.array([float(np.mean(p.ensemble.means)) for p in ps.points])
    errors = (targets - mu_star) ** 2
    matrix = _matrix_for(ps, rules, oracle_fallback)
    rows = []
    for k, col in enumerate(matrix.columns):
        vals = matrix.values[:, k]
        if not _usable(vals):
            rows.append([col.rule.value, col.estimator.key, None])
            continue
        rows.append([col.rule.value, col.estimator.key, prr(errors, vals)])
    os.makedirs(output_dir, exist_ok=True)
    write_csv(os.path.join(output_dir, "selective.csv"),
              ["rule", "estimator", "prr"], rows)
    write_manifest(output_dir, "selective", seed, {
        "input": os.path.abspath(input_path), "rules": rules,
        "oracle_fallback": oracle_fallback, "output_dir": os.path.abspath(output_dir),
    })
    click.echo(f"wrote {len(rows)} PRR rows")


@cli.command("ood")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--rules", default="all", show_default=True)
@click.option("--oracle-fallback", is_flag=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--output-dir", default=".", show_default=True)
def cmd_ood(input_path, rules, oracle_fallback, seed, output_dir):
    """AUROC of each measure for separating group 'ood' from group 'id'."""
    ps = load_prediction_set(input_path)
    try:
        groups = np.array(ps.groups())
    except ValueError as exc:
        raise SchemaError(f"ood detection requires group labels: {exc}")
    is_id, is_ood = groups == "id", groups == "ood"
    if not (np.any(is_id) and np.any(is_ood)):
        raise SchemaError("ood detection needs points in both groups 'id' and 'ood'")
    matrix = _matrix_for(ps, rules, oracle_fallback)
    rows = []
    for k, col in enumerate(matrix.columns):
        vals = matrix.values[:, k]
        if not _usable(vals):
            rows.append([col.rule.value, col.estimator.key, None])
            continue
        rows.append([col.rule.value, col.estimator.key,
                     auroc(vals[is_id], vals[is_ood])])
    os.makedirs(output_dir, exist_ok=True)
    write_csv(os.path.join(output_dir, "ood.csv"),
              ["rule", "estimator", "auroc"], rows)
    write_manifest(output_dir, "ood", seed, {
        "input": os.path.abspath(input_path), "rules": rules,
        "oracle_fallback": oracle_fallback, "output_dir": os.path.abspath(output_dir),
    })
    click.echo(f"wrote {len(rows)} AUROC rows")


def _tau_or_none(a: np.ndarray, b: np.ndarray):
    try:
        return kendall_tau_b(a, b)
    except DegenerateMetricError:
        return None


@cli.command("correlate")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--rules", default="all", show_default=True)
@click.option("--oracle-fallback", is_flag=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--output-dir", default=".", show_default=True)
def cmd_correlate(input_path, rules, oracle_fallback, seed, output_dir):
    """Kendall tau_b between estimators (per rule) and between rules (per estimator)."""
    ps = load_prediction_set(input_path)
    rules_list = _parse_rules(rules)
    matrix = _matrix_for(ps, rules, oracle_fallback)

    def col(rule, est):
        vals = matrix.column(rule, est)
        return vals if _usable(vals) else None

    est_rows = []
    for rule in rules_list:
        for ea in default_estimators():
            for eb in default_estimators():
                va, vb = col(rule, ea), col(rule, eb)
                tau = None if va is None or vb is None else _tau_or_none(va, vb)
                est_rows.append([rule.value, ea.key, eb.key, tau])
    rule_rows = []
    for est in default_estimators():
        for ra in rules_list:
            for rb in rules_list:
                va, vb = col(ra, est), col(rb, est)
                tau = None if va is None or vb is None else _tau_or_none(va, vb)
                rule_rows.append([est.key, ra.value, rb.value, tau])
    os.makedirs(output_dir, exist_ok=True)
    write_csv(os.path.join(output_dir, "correlate_estimators.csv"),
              ["rule", "estimator_a", "estimator_b", "tau_b"], est_rows)
    write_csv(os.path.join(output_dir, "correlate_rules.csv"),
              ["estimator", "rule_a", "rule_b", "tau_b"], rule_rows)
    write_manifest(output_dir, "correlate", seed, {
        "input": os.path.abspath(input_path), "rules": rules,
        "oracle_fallback": oracle_fallback, "output_dir": os.path.abspath(output_dir),
    })
    click.echo(f"wrote {len(est_rows)} + {len(rule_rows)} correlation rows")


# -- active learning ---------------------------------------------------------------

@cli.command("active")
@click.option("--seed", default=0, show_default=True)
@click.option("--iterations", default=6, show_default=True)
@click.option("--batch", default=30, show_default=True)
@click.option("--members", default=10, show_default=True)
@click.option("--pool-size", default=1200, show_default=True)
@click.option("--initial", default=60, show_default=True)
@click.option("--heldout", default=800, show_default=True)
@click.option("--epochs", default=150, show_default=True)
@click.option("--measure", default="log:exc_1_1", show_default=True)
@click.option("--output-dir", default=".", show_default=True)
def cmd_active(seed, iterations, batch, members, pool_size, initial, heldout,
               epochs, measure, output_dir):
    """Uncertainty-guided acquisition on the two-curve pool vs a Random baseline."""
    try:
        rule_text, est_text = measure.split(":")
        rule = ScoringRule(rule_text.strip().lower())
        est = EstimatorId.parse(est_text)
    except ValueError as exc:
        raise click.UsageError(f"bad --measure {measure!r}: {exc}")
    pool_x, pool_y, _ = two_curve_arrays(pool_size, -4.0, 4.0, seed)
    held_x, held_y, _ = two_curve_arrays(heldout, -4.0, 4.0, seed + 1)
    init_rng = np.random.default_rng([seed, 0x1417])
    init_idx = init_rng.choice(pool_size, size=initial, replace=False)
    cfg = TrainConfig(epochs=epochs, seed=seed)
    runs = {}
    for name, m in (("measure", (rule, est)), ("random", None)):
        runs[name] = active_learning_loop(
            pool_x, pool_y, init_idx, m, iterations, batch, members,
            held_x, held_y, MlpSpec(), cfg)
    os.makedirs(output_dir, exist_ok=True)
    rows = [[i, runs["measure"].nll_trajectory[i], runs["random"].nll_trajectory[i]]
            for i in range(len(runs["measure"].nll_trajectory))]
    write_csv(os.path.join(output_dir, "active.csv"),
              ["iteration", f"nll_{rule.value}_{est.key}", "nll_random"], rows)
    write_manifest(output_dir, "active", seed, {
        "iterations": iterations, "batch": batch, "members": members,
        "pool_size": pool_size, "initial": initial, "heldout": heldout,
        "epochs": epochs, "measure": measure,
        "truncated": {k: r.truncated for k, r in runs.items()},
        "output_dir": os.path.abspath(output_dir),
    })
    click.echo(
        f"final NLL {rule.value}:{est.key} = {runs['measure'].nll_trajectory[-1]:.4f}, "
        f"random = {runs['random'].nll_trajectory[-1]:.4f}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except (SchemaError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except VerificationFailure as exc:
        click.echo(f"verification failure: {exc}", err=True)
        return 2
    except ConvergenceError as exc:
        click.echo(f"convergence failure: {exc}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
