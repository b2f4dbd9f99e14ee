import os
import sys
import time

import click
import numpy as np

from simulation.billiard import launch_state, trace_ray
from simulation.fronts import flow_front, germ_from_curvatures, germ_from_point_source
from simulation.manifold import geodesic_evolve
from simulation.rigidity import (
    BallFamily,
    SamplingSpec,
    compare_tt_sets,
    estimate_reflection_constants,
    reconstruct_obstacles,
    sample_tt_set,
)
from simulation.scene import check_conditions, condition_terms
from utils.config import (
    CompareParams,
    DEFAULT_OUT,
    DEFAULT_SEED,
    DEFAULT_THREADS,
    EstimateParams,
    FrontParams,
    GlobalOptions,
    LimitsOptions,
    ReconstructParams,
    RunConfig,
    SweepParams,
    TraceParams,
    ValidateParams,
)
from utils.errors import BilliardError, DidNotConverge
from utils.io_manager import (
    load_sampling_spec,
    load_scene,
    load_tt_set,
    store_csv,
    store_front_log,
    store_json,
    store_text,
    store_trace,
    store_tt_set,
    tt_set_rows,
    write_manifest,
)
from utils.logger import set_log_level, setup_logger, verbosity_to_level

logger = setup_logger("cli")

USAGE_EXIT = 1

# ---------------------------- ENTRY POINT ----------------------------

class BilliardGroup(click.Group):
    """
    Normalises exit codes: 0 success, 1 usage, 2 validation, 3 runtime.
    """

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            result = super().main(args=args, prog_name=prog_name, complete_var=complete_var,
                                  standalone_mode=False, **extra)
        except click.ClickException as e:
            e.show()
            sys.exit(USAGE_EXIT)
        except click.exceptions.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(USAGE_EXIT)
        except BilliardError as e:
            logger.error(f"Run failed: {e}")
            click.echo(str(e), err=True)
            sys.exit(e.exit_code)
        sys.exit(result if isinstance(result, int) else 0)


def _vector(ctx, param, value):
    if value is None:
        return None
    try:
        return [float(part) for part in str(value).split(",") if part.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {value!r}")


def limit_options(command):
    command = click.option("--tangency-eps", type=float, default=LimitsOptions().tangency_eps,
                           show_default=True, help="Incidence cosine below which a hit is tangential.")(command)
    command = click.option("--n-max", type=int, default=None, help="Reflection cutoff (default 10 xi).")(command)
    command = click.option("--t-max", type=float, default=None, help="Time cutoff (default 50 D).")(command)
    return command


def _finish(config, files):
    """Writes run_config.json and the manifest for a finished command."""
    out = config.options.out
    files = list(files) + [store_text(os.path.join(out, "run_config.json"), config.emit() + "\n")]
    write_manifest(out, files, config)


@click.group(name="billiards", cls=BilliardGroup, context_settings={"auto_envvar_prefix": "BILLIARD"})
@click.option("--out", default=DEFAULT_OUT, show_default=True, help="Output directory for artifacts.")
@click.option("--seed", type=int, default=DEFAULT_SEED, show_default=True, help="Seed for every random choice.")
@click.option("--threads", type=click.IntRange(min=1), default=DEFAULT_THREADS, show_default=True)
@click.option("-v", "--verbose", count=True, help="More logging.")
@click.option("-q", "--quiet", count=True, help="Less logging.")
@click.pass_context
def cli(ctx, out, seed, threads, verbose, quiet):
    """Geodesic billiards and travelling-time rigidity experiments."""
    verbosity = verbose - quiet
    set_log_level(verbosity_to_level(verbosity))
    ctx.obj = GlobalOptions(out=out, seed=seed, threads=threads, verbosity=verbosity)


# ---------------------------- COMMANDS ----------------------------

@cli.command()
@click.option("--scene", "scene_file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
def validate(options, scene_file):
    """Validates a scene and reports which curvature condition holds."""
    config = RunConfig(options=options, params=ValidateParams(scene=scene_file))
    scene = load_scene(scene_file)
    report = scene.report
    declared = scene.declared
    verdict = check_conditions(report, declared.xi, declared.phi0, declared.theta0)
    terms = condition_terms(report, declared.xi, declared.phi0, declared.theta0)

    for key, value in report.to_dict().items():
        click.echo(f"{key}: {value}")
    click.echo(f"condition: {verdict}")
    click.echo(f"D*xi*sqrt(sec_max): {terms['D_xi_sqrt_sec']:.6g} (< pi/2 = {np.pi / 2:.6g})")
    click.echo(f"tan(sec_max*D*xi)*sqrt(sec_max): {terms['tan_term']:.6g} (< Theta = {terms['Theta']:.6g})")

    payload = {**report.to_dict(), "verdict": verdict, "terms": terms, "scene_hash": scene.hash}
    _finish(config, [store_json(os.path.join(options.out, "report.json"), payload)])


@cli.command()
@click.option("--scene", "scene_file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--foot", required=True, callback=_vector, help="Foot unit vector, e.g. -1,0.")
@click.option("--direction", required=True, callback=_vector, help="Inward direction in the boundary frame, e.g. 1,0.")
@limit_options
@click.pass_obj
def trace(options, scene_file, foot, direction, t_max, n_max, tangency_eps):
    """Traces one launch and dumps its reflection events."""
    limits = LimitsOptions(t_max=t_max, n_max=n_max, tangency_eps=tangency_eps)
    config = RunConfig(options=options, params=TraceParams(scene=scene_file, foot=foot, direction=direction,
                                                           limits=limits))
    scene = load_scene(scene_file)
    result = trace_ray(scene, launch_state(scene, foot, direction), limits.to_limits())

    terminal = result.terminal
    if hasattr(terminal, "v"):
        click.echo(f"exit at t={terminal.t:.12g} after {result.n_reflections} reflections")
    else:
        click.echo(f"trapped ({terminal.reason}) at t={terminal.t:.12g} after {len(result.events)} events")

    dim = scene.model.ambient_dim
    rows = [[e.t, e.obstacle_id, e.cos_incidence, int(e.tangential)] + e.x.tolist() for e in result.events]
    files = [
        store_trace(os.path.join(options.out, "trace.jsonl"), result),
        store_csv(os.path.join(options.out, "events.csv"),
                  ["t", "obstacle_id", "cos_incidence", "tangential"] + [f"x_{i}" for i in range(dim)], rows),
    ]
    _finish(config, files)


@cli.command()
@click.option("--scene", "scene_file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--spec", "spec_file", type=click.Path(exists=True, dir_okay=False),
              help="Sampling spec JSON; overrides the flags below.")
@click.option("--scheme", type=click.Choice(["grid", "quasi_random"]), default="quasi_random", show_default=True)
@click.option("--n-points", type=click.IntRange(min=1), default=64, show_default=True)
@click.option("--n-dirs", type=click.IntRange(min=1), default=16, show_default=True)
@limit_options
@click.pass_obj
def sweep(options, scene_file, spec_file, scheme, n_points, n_dirs, t_max, n_max, tangency_eps):
    """Samples the travelling-time set of a scene."""
    if spec_file:
        spec = load_sampling_spec(spec_file)
    else:
        spec = SamplingSpec(n_points=n_points, n_dirs=n_dirs, scheme=scheme, seed=options.seed)
    limits = LimitsOptions(t_max=t_max, n_max=n_max, tangency_eps=tangency_eps)
    config = RunConfig(options=options, params=SweepParams(scene=scene_file, spec=spec, limits=limits))

    start_time = time.time()
    scene = load_scene(scene_file)
    tt = sample_tt_set(scene, spec, limits.to_limits(), options.threads)
    header, rows = tt_set_rows(tt)
    files = [
        store_tt_set(os.path.join(options.out, "ttset.jsonl"), tt),
        store_csv(os.path.join(options.out, "ttset.csv"), header, rows),
    ]
    _finish(config, files)

    duration = time.time() - start_time
    click.echo(f"{len(tt.samples)} launches, {len(tt.exits())} exits, "
               f"trapped fraction {tt.fraction('trapped'):.4f}, failed {tt.fraction('failed'):.4f}")
    logger.info(f"Sweep finished in {duration:.2f}s")


@cli.command()
@click.argument("tt_a", type=click.Path(exists=True, dir_okay=False))
@click.argument("tt_b", type=click.Path(exists=True, dir_okay=False))
@click.option("--match-radius", type=float, default=None, help="Default 0.1 D.")
@click.pass_obj
def compare(options, tt_a, tt_b, match_radius):
    """Discrepancy between two travelling-time set files."""
    config = RunConfig(options=options, params=CompareParams(tt_a=tt_a, tt_b=tt_b, match_radius=match_radius))
    report = compare_tt_sets(load_tt_set(tt_a), load_tt_set(tt_b), match_radius)
    for key, value in report.to_dict().items():
        click.echo(f"{key}: {value}")
    _finish(config, [store_json(os.path.join(options.out, "discrepancy.json"), report.to_dict())])


@cli.command()
@click.option("--scene", "scene_file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--foot", required=True, callback=_vector)
@click.option("--direction", required=True, callback=_vector)
@click.option("--radius", type=float, default=None, help="Point source this far behind the launch.")
@click.option("--curvatures", callback=_vector, default=None, help="Principal curvatures at the launch.")
@click.option("--t", "duration", type=float, required=True, help="Evolution time.")
@click.option("--tangency-eps", type=float, default=LimitsOptions().tangency_eps, show_default=True)
@click.pass_obj
def front(options, scene_file, foot, direction, radius, curvatures, duration, tangency_eps):
    """Evolves a convex front along a launch and logs its principal curvatures."""
    if (radius is None) == (curvatures is None):
        raise click.UsageError("give exactly one of --radius or --curvatures")
    config = RunConfig(options=options, params=FrontParams(
        scene=scene_file, foot=foot, direction=direction, radius=radius,
        curvatures=curvatures, t=duration, tangency_eps=tangency_eps))

    scene = load_scene(scene_file)
    model = scene.model
    sigma = launch_state(scene, foot, direction)
    if radius is not None:
        source = geodesic_evolve(model, sigma.reversed(), radius).reversed()
        germ = germ_from_point_source(model, source, radius)
    else:
        germ = germ_from_curvatures(model, sigma, curvatures)

    final, steps = flow_front(scene, germ, duration, tangency_eps)
    click.echo(f"principal curvatures at t={duration:.6g}: {np.round(final.eigenvalues, 9).tolist()}")

    k = model.dim - 1
    rows = [[s.t, s.kind, "" if s.obstacle_id is None else s.obstacle_id] + s.eigenvalues.tolist() + s.x.tolist()
            for s in steps]
    header = ["t", "kind", "obstacle_id"] + [f"k_{i}" for i in range(k)] + [f"x_{i}" for i in range(model.ambient_dim)]
    files = [
        store_front_log(os.path.join(options.out, "front.jsonl"), steps),
        store_csv(os.path.join(options.out, "front.csv"), header, rows),
    ]
    _finish(config, files)


@cli.command()
@click.option("--scene", "scene_file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--n-rays", type=click.IntRange(min=1), default=1000, show_default=True)
@click.option("--margin", type=float, default=0.01, show_default=True)
@limit_options
@click.pass_obj
def estimate(options, scene_file, n_rays, margin, t_max, n_max, tangency_eps):
    """Estimates the reflection constants xi and phi0 from sampled rays."""
    limits = LimitsOptions(t_max=t_max, n_max=n_max, tangency_eps=tangency_eps)
    config = RunConfig(options=options, params=EstimateParams(scene=scene_file, n_rays=n_rays,
                                                              margin=margin, limits=limits))
    scene = load_scene(scene_file)
    constants = estimate_reflection_constants(scene, n_rays, limits.to_limits(), margin,
                                              seed=options.seed, threads=options.threads)
    click.echo(f"xi_hat: {constants.xi_hat}")
    click.echo(f"phi0_hat: {constants.phi0_hat:.9g}")
    files = [
        store_json(os.path.join(options.out, "constants.json"), constants.to_dict()),
        store_csv(os.path.join(options.out, "m_curve.csv"), ["k", "m_k", "n_rays"], constants.curve),
    ]
    _finish(config, files)


@cli.command()
@click.option("--tt", "tt_file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--scene", "scene_file", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Template scene; its balls fix the family size.")
@click.option("--init", required=True, callback=_vector, help="Initial parameters: center then radius per ball.")
@click.option("--max-evals", type=click.IntRange(min=1), default=ReconstructParams.model_fields["max_evals"].default)
@click.option("--restarts", type=click.IntRange(min=1), default=ReconstructParams.model_fields["restarts"].default)
@click.option("--sample-seed", type=int, default=None,
              help="Seed of the simulated sweeps; defaults to the target seed + 1.")
@click.option("--match-radius", type=click.FloatRange(min=0, min_open=True), default=None,
              help="Residual above which an exit counts as unmatched; defaults to 0.1 D.")
@click.pass_obj
def reconstruct(options, tt_file, scene_file, init, max_evals, restarts, sample_seed, match_radius):
    """Fits ball obstacles to a travelling-time set."""
    params = ReconstructParams(tt=tt_file, scene=scene_file, init=init, max_evals=max_evals,
                               restarts=restarts, sample_seed=sample_seed, match_radius=match_radius)
    config = RunConfig(options=options, params=params)
    family = BallFamily.from_scene(load_scene(scene_file))
    if len(init) != family.n_balls * (family.dim + 1):
        raise click.BadParameter(f"expected {family.n_balls * (family.dim + 1)} values", param_hint="--init")

    target = load_tt_set(tt_file)
    result_path = os.path.join(options.out, "reconstruction.json")
    try:
        result = reconstruct_obstacles(target, family, init, params.to_options(options.seed, options.threads))
    except DidNotConverge as e:
        best = e.best_so_far
        _finish(config, [store_json(result_path, best.to_dict())])
        raise

    click.echo(f"params: {np.round(result.params, 9).tolist()}")
    click.echo(f"objective: {result.objective:.6g} after {result.n_evals} evaluations")
    files = [
        store_json(result_path, result.to_dict()),
        store_csv(os.path.join(options.out, "history.csv"), ["evaluation", "best_objective"],
                  list(enumerate(result.history))),
    ]
    _finish(config, files)


if __name__ == "__main__":
    cli()
