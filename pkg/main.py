import os
import logging
import sys
import argparse
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

import db
from diarysim.base import (
    ConfigError,
    ConfigMismatchError,
    DataError,
    DiarySimError,
    EmptyCorpusError,
    EmptyDistributionError,
    UndefinedSilhouetteError,
)
from diarysim.clustering import (
    cluster_sizes,
    dbscan,
    distance_matrix,
    knee_profile,
    medoid,
    silhouette_values,
    typical_weeks,
)
from diarysim.config import CONFIG, CdrFilterConfig, DeprConfig, GpsFilterConfig, LatpConfig, SwimConfig, WaitingTimeConfig
from diarysim.diary import (
    diary_from_trajectory,
    diary_log_likelihood,
    home_typical_diary,
    load_model,
    mdl_learn,
    save_model,
)
from diarysim.engine import (
    DiaryKind,
    SampledTrajectory,
    SimulationConfig,
    TrajectoryKind,
    make_diary_generator,
    make_trajectory_generator,
    read_trajectories,
    run_ditras,
    write_trajectories,
)
from diarysim.evaluation import scorecard
from diarysim.ingestion import (
    apply_cdr_filters,
    assign_slots,
    coordinate_key,
    filter_active_vehicles,
    read_abstract_trajectories,
    read_records,
    segment_gps_trips,
    snapped_key,
    trips_to_records,
    write_abstract_trajectories,
)
from diarysim.manifest import RunManifest
from diarysim.measures import HEAVY_TAILED, MeasureKind, build_distribution, ccdf, compute_all, distribution_frame, summarize
from diarysim.tessellation import load_tessellation, merge_coincident
from diarysim.utils import atomic_write_json, draw_seed

logging.basicConfig(level=logging.INFO, format="%(asctime)s | %(levelname)s | %(message)s")
logger = logging.getLogger(__name__)

EXIT_CONFIG_ERROR = 2
EXIT_DATA_ERROR = 3
FLOAT_FORMAT = "%.12g"


@dataclass
class Phase:
    """Represents a single phase of a command."""
    name: str
    description: str
    function: Callable[[dict], None]
    icon: str


class Pipeline:
    """Runs the phases of one command in order and writes its manifest."""

    def __init__(self, command: str, args: argparse.Namespace, phases: List[Phase]):
        self.command = command
        self.args = args
        self.phases = phases
        parameters = {k: v for k, v in vars(args).items() if k not in ("build", "command", "verbose")}
        self.manifest = RunManifest(command=command, parameters=parameters)
        self.context: Dict[str, object] = {"args": args, "manifest": self.manifest}

    def setup(self):
        """Create the output directory."""
        logger.info(f"🚀 Running {self.command} into {self.args.out}")
        os.makedirs(self.args.out, exist_ok=True)

    def run_phase(self, phase: Phase):
        """Execute a single phase; any failure stops the command."""
        logger.info(f"{phase.icon} Phase: {phase.description}...")
        try:
            phase.function(self.context)
            logger.info(f"✅ {phase.name} phase completed successfully")
        except DiarySimError as e:
            logger.error(f"❌ {phase.name} phase failed: {e}")
            raise
        except Exception as e:
            logger.error(f"❌ {phase.name} phase failed: {e}")
            logger.exception(f"{phase.name} phase detailed error:")
            raise

    def run(self):
        """Execute all phases in sequence, then record the run."""
        for phase in self.phases:
            self.run_phase(phase)
        self.manifest.finish()
        self.manifest.write(self.args.out)
        db.record_run(self.manifest.to_dict(), self.args.out)
        logger.info(f"✅ {self.command} finished in {self.manifest.duration_seconds:.2f}s")


def _out(ctx: dict, name: str) -> str:
    return os.path.join(ctx["args"].out, name)


def _as_config(factory, **kwargs):
    try:
        return factory(**kwargs)
    except ValueError as e:
        raise ConfigError(str(e))


# learn

def learn_phases(args: argparse.Namespace) -> List[Phase]:
    def load(ctx):
        ctx["manifest"].add_inputs([args.input, args.tessellation])
        ctx["records"] = read_records(args.input)
        ctx["key"] = coordinate_key
        if args.tessellation:
            ctx["tessellation"] = load_tessellation(args.tessellation, args.planar)
            everything = [r for records in ctx["records"].values() for r in records]
            ctx["key"] = snapped_key(everything, ctx["tessellation"])

    def segment(ctx):
        if not args.gps:
            logger.info("Records are stays already, nothing to segment")
            return
        gps_config = _as_config(GpsFilterConfig, stop_threshold=args.stop_threshold,
                                min_trips_per_day=args.min_trips_per_day, day_window=args.day_window)
        trips = {v: segment_gps_trips(points, gps_config.stop_threshold) for v, points in ctx["records"].items()}
        kept = filter_active_vehicles(trips, gps_config, ctx["key"])
        ctx["records"] = {v: sorted(trips_to_records(trips[v]), key=lambda r: r.timestamp) for v in sorted(kept)}

    def filter_users(ctx):
        if not args.gps and not args.no_filters:
            cdr_config = _as_config(CdrFilterConfig, min_location_freq=args.min_location_freq,
                                    min_call_rate=args.min_call_rate)
            ctx["records"] = apply_cdr_filters(ctx["records"], cdr_config, args.days, ctx["key"])
        if not ctx["records"]:
            raise EmptyCorpusError("no user survived preprocessing")

    def slot(ctx):
        ctx["trajectories"] = [
            assign_slots(records, args.slot_seconds, args.weighting, ctx["key"])
            for records in ctx["records"].values()
        ]
        logger.info(f"📋 {len(ctx['trajectories'])} abstract trajectories")

    def learn(ctx):
        ctx["model"] = mdl_learn(ctx["trajectories"], None, args.period)

    def write(ctx):
        save_model(ctx["model"], _out(ctx, "model.json"))
        write_abstract_trajectories(ctx["trajectories"], _out(ctx, "abstract.csv"))
        if "tessellation" in ctx:
            reference = reference_trajectories(ctx["trajectories"])
            write_trajectories(reference, ctx["tessellation"], _out(ctx, "reference.csv"))

    return [
        Phase("Load", "Read raw records", load, "📋"),
        Phase("Segment", "Segment GPS tracks into trips", segment, "🚗"),
        Phase("Filter", "Apply user and location filters", filter_users, "🔍"),
        Phase("Slots", "Assign records to time slots", slot, "⏳"),
        Phase("Learn", "Learn the Markov diary model", learn, "🧠"),
        Phase("Write", "Write model and trajectories", write, "💾"),
    ]


def reference_trajectories(trajectories) -> List[SampledTrajectory]:
    """Real users as location-id trajectories, starting at their first midnight so hours line up."""
    reference = []
    for agent, traj in enumerate(trajectories):
        slots_per_day = max(1, 86400 // traj.slot_seconds)
        offset = (-traj.first_slot) % slots_per_day
        if offset >= len(traj):
            offset = 0
        locations = np.array(traj.labels, dtype=np.int64)[traj.slots[offset:]]
        reference.append(SampledTrajectory(agent, traj.slot_seconds, locations))
    return reference


# generate

def generate_phases(args: argparse.Namespace) -> List[Phase]:
    def load(ctx):
        ctx["manifest"].add_inputs([args.tessellation, args.model])
        tessellation = load_tessellation(args.tessellation, args.planar)
        if args.merge_coincident:
            tessellation, _ = merge_coincident(tessellation)
        ctx["tessellation"] = tessellation
        ctx["model"] = None
        if args.diary == DiaryKind.MD.value:
            if not args.model:
                raise ConfigError("--diary md needs --model")
            ctx["model"] = load_model(args.model)

    def configure(ctx):
        model = ctx["model"]
        slot_seconds = args.slot_seconds or (model.slot_seconds if model else CONFIG.slot_seconds)
        if model is not None:
            if slot_seconds != model.slot_seconds:
                raise ConfigMismatchError(f"model uses {model.slot_seconds}-second slots, --slot-seconds is {slot_seconds}")
            if args.period and args.period != model.period:
                raise ConfigMismatchError(f"model period is {model.period}, --period is {args.period}")
        seed = args.seed
        if seed is None:
            seed = draw_seed()
            logger.warning(f"⚠️ No --seed given, drew seed {seed}")
        ctx["manifest"].seed = seed
        ctx["manifest"].parameters["seed"] = seed

        engine_config = _as_config(lambda **changes: replace(CONFIG.engine, **changes),
                                   enable_threading=args.threads > 1, max_workers=max(1, args.threads),
                                   visit_counting=args.visit_counting)
        ctx["config"] = SimulationConfig(
            n_agents=args.agents,
            n_slots=args.slots,
            slot_seconds=slot_seconds,
            diary_kind=args.diary,
            trajectory_kind=args.trajectory,
            seed=seed,
            depr=_as_config(DeprConfig, rho=args.rho, gamma=args.gamma),
            swim=_as_config(SwimConfig, alpha=args.alpha),
            latp=_as_config(LatpConfig, exponent=args.exponent),
            waiting_time=_as_config(WaitingTimeConfig, beta=args.beta, tau_hours=args.tau),
            engine=engine_config,
        )

    def build(ctx):
        config = ctx["config"]
        ctx["diary_gen"] = make_diary_generator(config, ctx["model"])
        ctx["traj_gen"] = make_trajectory_generator(config, ctx["tessellation"])

    def simulate(ctx):
        ctx["trajectories"] = run_ditras(ctx["diary_gen"], ctx["traj_gen"], ctx["tessellation"], ctx["config"])

    def write(ctx):
        write_trajectories(ctx["trajectories"], ctx["tessellation"], _out(ctx, "trajectories.csv"), compact=args.compact)

    return [
        Phase("Load", "Read tessellation and model", load, "📋"),
        Phase("Configure", "Resolve simulation parameters", configure, "⚙️"),
        Phase("Build", "Build diary and trajectory generators", build, "🔗"),
        Phase("Simulate", "Generate agents", simulate, "🚀"),
        Phase("Write", "Write trajectories", write, "💾"),
    ]


# measure

def measure_phases(args: argparse.Namespace) -> List[Phase]:
    def load(ctx):
        ctx["manifest"].add_inputs([args.trajectories, args.tessellation])
        ctx["tessellation"] = load_tessellation(args.tessellation, args.planar)
        ctx["population"] = read_trajectories(args.trajectories, args.slot_seconds, len(ctx["tessellation"]))

    def measure(ctx):
        kinds = parse_measures(args.measures)
        ctx["samples"] = compute_all(ctx["population"], ctx["tessellation"], kinds)

    def write(ctx):
        summary = summarize(ctx["samples"])
        for kind, (values, weights) in ctx["samples"].items():
            try:
                distribution = build_distribution(values, kind, weights=weights)
            except EmptyDistributionError as e:
                logger.warning(f"⚠️ {e}")
                summary[kind.value]["distribution"] = None
                continue
            name = f"{kind.value}.csv"
            distribution_frame(distribution).to_csv(_out(ctx, name), index=False, float_format=FLOAT_FORMAT)
            summary[kind.value]["distribution"] = name
            if kind in HEAVY_TAILED:
                x, p = ccdf(distribution.samples)
                pd.DataFrame({"value": x, "ccdf": p}).to_csv(_out(ctx, f"ccdf_{kind.value}.csv"), index=False,
                                                             float_format=FLOAT_FORMAT)
        atomic_write_json(_out(ctx, "summary.json"), summary)

    return [
        Phase("Load", "Read trajectories and tessellation", load, "📋"),
        Phase("Measure", "Compute mobility measures", measure, "📏"),
        Phase("Write", "Write distributions and summary", write, "💾"),
    ]


def parse_measures(selection: Optional[str]) -> List[MeasureKind]:
    if not selection or selection == "all":
        return list(MeasureKind)
    try:
        return [MeasureKind(name.strip()) for name in selection.split(",") if name.strip()]
    except ValueError as e:
        raise ConfigError(f"{e}; choose from {', '.join(k.value for k in MeasureKind)}")


# compare

def parse_models(entries: List[str]) -> List[tuple]:
    models = []
    for entry in entries:
        label, _, path = entry.rpartition("=") if "=" in entry else (Path(entry).stem, "", entry)
        models.append((label, path))
    labels = [label for label, _ in models]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"model labels must be unique, got {labels}")
    return models


def compare_phases(args: argparse.Namespace) -> List[Phase]:
    def load(ctx):
        models = parse_models(args.models)
        ctx["manifest"].add_inputs([args.reference, args.tessellation] + [path for _, path in models])
        t = load_tessellation(args.tessellation, args.planar)
        ctx["tessellation"] = t
        ctx["reference"] = read_trajectories(args.reference, args.slot_seconds, len(t))
        ctx["models"] = [(label, read_trajectories(path, args.slot_seconds, len(t))) for label, path in models]

    def score(ctx):
        ctx["report"] = scorecard(ctx["models"], ctx["reference"], ctx["tessellation"], parse_measures(args.measures))

    def write(ctx):
        report = ctx["report"]
        report.to_frame().to_csv(_out(ctx, "scorecard.csv"), index=False, float_format=FLOAT_FORMAT)
        text = report.to_text()
        with open(_out(ctx, "scorecard.txt"), "w", encoding="utf-8") as fh:
            fh.write(text)
        logger.info(f"📋 Scorecard\n{text}")

    return [
        Phase("Load", "Read reference and model trajectories", load, "📋"),
        Phase("Score", "Compare distributions", score, "⚖️"),
        Phase("Write", "Write scorecard", write, "💾"),
    ]


# cluster

def cluster_phases(args: argparse.Namespace) -> List[Phase]:
    def load(ctx):
        ctx["manifest"].add_inputs([args.abstract])
        ctx["weeks"] = typical_weeks(read_abstract_trajectories(args.abstract, 3600))
        if not ctx["weeks"]:
            raise EmptyCorpusError("no user has a full week of hourly slots")

    def cluster(ctx):
        weeks = ctx["weeks"]
        ctx["distances"] = distance_matrix(weeks)
        ctx["labels"] = dbscan(weeks, args.eps, args.min_pts, ctx["distances"])
        try:
            ctx["silhouettes"] = silhouette_values(ctx["distances"], ctx["labels"])
        except UndefinedSilhouetteError as e:
            logger.warning(f"⚠️ {e}")
            ctx["silhouettes"] = np.full(len(weeks), np.nan)

    def write(ctx):
        weeks, labels, distances = ctx["weeks"], ctx["labels"], ctx["distances"]
        pd.DataFrame({
            "user_id": [w.user for w in weeks],
            "cluster_label": labels,
            "silhouette": ctx["silhouettes"],
        }).to_csv(_out(ctx, "clusters.csv"), index=False, float_format=FLOAT_FORMAT)

        if len(weeks) > args.knee_k:
            knee = knee_profile(weeks, args.knee_k, distances)
            pd.DataFrame({"rank": np.arange(len(knee)), "distance": knee}).to_csv(
                _out(ctx, "knee.csv"), index=False, float_format=FLOAT_FORMAT)

        sizes = cluster_sizes(labels)
        clustered = [label for label in sizes if label != -1]
        silhouettes = ctx["silhouettes"]
        medoids = {}
        for label in clustered:
            index = medoid(distances, labels, label)
            medoids[str(label)] = {"user": weeks[index].user, "week": weeks[index].canonical.tolist()}
        atomic_write_json(_out(ctx, "summary.json"), {
            "users": len(weeks),
            "clusters": {str(k): v for k, v in sizes.items() if k != -1},
            "noise": sizes.get(-1, 0),
            "largest_cluster_fraction": max((sizes[k] for k in clustered), default=0) / len(weeks),
            "silhouette": None if np.all(np.isnan(silhouettes)) else float(np.nanmean(silhouettes)),
            "medoids": medoids,
            "eps": args.eps,
            "min_pts": args.min_pts,
        })
        logger.info(f"📋 {len(clustered)} clusters, {sizes.get(-1, 0)} noise users")

    return [
        Phase("Load", "Extract typical weeks", load, "📋"),
        Phase("Cluster", "Cluster typical weeks", cluster, "🧩"),
        Phase("Write", "Write cluster report", write, "💾"),
    ]


# score

def score_phases(args: argparse.Namespace) -> List[Phase]:
    def load(ctx):
        ctx["manifest"].add_inputs([args.abstract, args.model])
        ctx["model"] = load_model(args.model)
        ctx["trajectories"] = read_abstract_trajectories(args.abstract, ctx["model"].slot_seconds)

    def score(ctx):
        model = ctx["model"]
        rows = []
        for traj in ctx["trajectories"]:
            diary = diary_from_trajectory(traj, home_typical_diary(traj))
            likelihood = diary_log_likelihood(model, diary, traj.phase(model.period))
            rows.append({"user_id": traj.user, "log_likelihood": likelihood,
                         "per_slot": likelihood / len(traj), "slots": len(traj)})
        frame = pd.DataFrame(rows, columns=["user_id", "log_likelihood", "per_slot", "slots"])
        ctx["scores"] = frame.sort_values(["per_slot", "user_id"], kind="mergesort").reset_index(drop=True)

    def write(ctx):
        ctx["scores"].to_csv(_out(ctx, "scores.csv"), index=False, float_format=FLOAT_FORMAT)

    return [
        Phase("Load", "Read model and abstract trajectories", load, "📋"),
        Phase("Score", "Score diaries under the model", score, "🔎"),
        Phase("Write", "Write ranked scores", write, "💾"),
    ]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diarysim", description="Learn, generate and evaluate mobility diaries.")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    learn = commands.add_parser("learn", help="learn a Markov diary model from raw records")
    learn.add_argument("input", help="CSV with user_id,lat,lon,timestamp")
    learn.add_argument("--out", required=True)
    learn.add_argument("--slot-seconds", type=int, default=CONFIG.slot_seconds)
    learn.add_argument("--period", type=int, default=CONFIG.period)
    learn.add_argument("--weighting", choices=["count", "dwell"], default="count")
    learn.add_argument("--min-location-freq", type=float, default=CONFIG.cdr.min_location_freq)
    learn.add_argument("--min-call-rate", type=float, default=CONFIG.cdr.min_call_rate)
    learn.add_argument("--days", type=int, default=None, help="observation days for the call-rate filter")
    learn.add_argument("--no-filters", action="store_true")
    learn.add_argument("--gps", action="store_true", help="records are GPS fixes to segment into trips")
    learn.add_argument("--stop-threshold", type=int, default=CONFIG.gps.stop_threshold)
    learn.add_argument("--min-trips-per-day", type=float, default=CONFIG.gps.min_trips_per_day)
    learn.add_argument("--day-window", choices=["calendar", "observed"], default=CONFIG.gps.day_window)
    learn.add_argument("--tessellation", help="snap records to this tessellation and write reference.csv")
    learn.add_argument("--planar", action="store_true")
    learn.set_defaults(build=learn_phases)

    generate = commands.add_parser("generate", help="generate synthetic trajectories")
    generate.add_argument("--diary", choices=[k.value for k in DiaryKind], default=DiaryKind.MD.value)
    generate.add_argument("--model", help="model.json from learn (needed for --diary md)")
    generate.add_argument("--tessellation", required=True)
    generate.add_argument("--planar", action="store_true")
    generate.add_argument("--merge-coincident", action="store_true")
    generate.add_argument("--trajectory", choices=[k.value for k in TrajectoryKind], default=TrajectoryKind.DEPR.value)
    generate.add_argument("--agents", type=int, default=100)
    generate.add_argument("--slots", type=int, default=744)
    generate.add_argument("--slot-seconds", type=int, default=None)
    generate.add_argument("--period", type=int, default=None)
    generate.add_argument("--rho", type=float, default=CONFIG.depr.rho)
    generate.add_argument("--gamma", type=float, default=CONFIG.depr.gamma)
    generate.add_argument("--alpha", type=float, default=CONFIG.swim.alpha)
    generate.add_argument("--exponent", type=float, default=CONFIG.latp.exponent)
    generate.add_argument("--beta", type=float, default=CONFIG.waiting_time.beta)
    generate.add_argument("--tau", type=float, default=CONFIG.waiting_time.tau_hours, help="waiting-time cutoff in hours")
    generate.add_argument("--visit-counting", choices=["slot", "trip"], default=CONFIG.engine.visit_counting)
    generate.add_argument("--seed", type=int, default=None)
    generate.add_argument("--threads", type=int, default=1)
    generate.add_argument("--compact", action="store_true", help="run-length output")
    generate.add_argument("--out", required=True)
    generate.set_defaults(build=generate_phases)

    measure = commands.add_parser("measure", help="compute measure distributions of a trajectory file")
    measure.add_argument("trajectories")
    measure.add_argument("--tessellation", required=True)
    measure.add_argument("--planar", action="store_true")
    measure.add_argument("--measures", default="all", help="comma-separated measure names")
    measure.add_argument("--slot-seconds", type=int, default=CONFIG.slot_seconds)
    measure.add_argument("--out", required=True)
    measure.set_defaults(build=measure_phases)

    compare = commands.add_parser("compare", help="score model trajectories against a reference")
    compare.add_argument("--reference", required=True)
    compare.add_argument("--models", nargs="+", required=True, help="paths or label=path")
    compare.add_argument("--tessellation", required=True)
    compare.add_argument("--planar", action="store_true")
    compare.add_argument("--measures", default="all")
    compare.add_argument("--slot-seconds", type=int, default=CONFIG.slot_seconds)
    compare.add_argument("--out", required=True)
    compare.set_defaults(build=compare_phases)

    cluster = commands.add_parser("cluster", help="cluster users' typical weeks")
    cluster.add_argument("abstract", help="abstract.csv from learn")
    cluster.add_argument("--eps", type=float, default=CONFIG.cluster.eps)
    cluster.add_argument("--min-pts", type=int, default=CONFIG.cluster.min_pts)
    cluster.add_argument("--knee-k", type=int, default=CONFIG.cluster.knee_k)
    cluster.add_argument("--out", required=True)
    cluster.set_defaults(build=cluster_phases)

    score = commands.add_parser("score", help="rank users by diary likelihood under a model")
    score.add_argument("abstract")
    score.add_argument("--model", required=True)
    score.add_argument("--out", required=True)
    score.set_defaults(build=score_phases)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; exits 2 on configuration errors and 3 on data errors."""
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        pipeline = Pipeline(args.command, args, args.build(args))
        pipeline.setup()
        pipeline.run()
    except ConfigError as e:
        logger.error(f"❌ Configuration error: {e}")
        sys.exit(EXIT_CONFIG_ERROR)
    except (DataError, ValueError) as e:
        logger.error(f"❌ Data error: {e}")
        sys.exit(EXIT_DATA_ERROR)
    except Exception as e:
        logger.error(f"❌ Critical error in {args.command}: {e}")
        logger.exception("Detailed error:")
        sys.exit(1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
