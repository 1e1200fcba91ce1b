"""End-to-end experiment stages over one run directory.

Each stage reads the artifacts of the stages before it and writes its own;
``run_experiment`` skips stages whose artifacts already exist, so an
interrupted run resumes from its last checkpoint.
"""
from __future__ import annotations

import logging
from collections.abc import Callable
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from tqdm import tqdm

from src.autograd.tensor import no_grad
from src.common import ensure_out_dir, stream_rng, write_rows
from src.config import ExperimentConfig, config_text, dump_config
from src.diffusion import train as refiner_train
from src.diffusion.refine import refine
from src.diffusion.schedule import NoiseSchedule
from src.diffusion.unet import DenoiseUNet
from src.errors import ContractError, MissingArtifactError
from src.evaluation.baselines import fixed_frame_baseline
from src.evaluation.evaluate import VARIANTS, ISReport, best_sample, branches_covered, evaluate, psi_table, sign_test
from src.ogm.dataset import CodeSequence, SequenceSample, read_codes, read_dataset, write_codes, write_dataset
from src.ogm.generate import TEST_INDEX_OFFSET, GenerationSettings, generate_sequences
from src.ogm.pgm import write_pgm_stack
from src.predictor import train as predictor_train
from src.predictor.conditioning import Conditioning
from src.predictor.model import PredictorConfig, VariationalPredictor, extrapolate
from src.representation import train as vae_train
from src.representation.model import VaeGan, decode_codes

logger = logging.getLogger(__name__)

STAGES = ("gen-data", "train-vae", "encode", "train-predictor", "train-refiner", "eval")
PREDICTOR_VARIANTS = ("deterministic", "stochastic")
# psi per step of the sample that is best over the whole horizon.
METRIC_COLUMNS = ("sequence_id", "step", "variant", "psi")
COVERAGE_COLUMNS = ("variant", "fork_sequences", "covered", "rate")
# Sequences whose predictions are exported as PGM stacks.
DUMP_SEQUENCES = 2


@dataclass(frozen=True)
class RunPaths:
    root: Path

    @property
    def config(self) -> Path:
        return self.root / "config.txt"

    @property
    def logs(self) -> Path:
        return self.root / "logs"

    @property
    def grids(self) -> Path:
        return self.root / "grids"

    def data(self, split: str) -> Path:
        return self.root / "data" / f"{split}.bin"

    def codes(self, split: str) -> Path:
        return self.root / "codes" / f"{split}.bin"

    @property
    def vae(self) -> Path:
        return self.root / "vae.ckpt"

    @property
    def vae_losses(self) -> Path:
        return self.root / "vae_losses.csv"

    def predictor(self, variant: str) -> Path:
        return self.root / f"predictor_{variant}.ckpt"

    def predictor_losses(self, variant: str) -> Path:
        return self.root / f"predictor_{variant}_losses.csv"

    @property
    def refiner(self) -> Path:
        return self.root / "refiner.ckpt"

    @property
    def refiner_losses(self) -> Path:
        return self.root / "refiner_losses.csv"

    @property
    def metrics(self) -> Path:
        return self.root / "metrics.csv"

    @property
    def summary(self) -> Path:
        return self.root / "summary.csv"

    @property
    def coverage(self) -> Path:
        return self.root / "coverage.csv"

    @property
    def baseline_metrics(self) -> Path:
        return self.root / "baseline_metrics.csv"

    @property
    def baseline_summary(self) -> Path:
        return self.root / "baseline_summary.csv"


def run_paths(cfg: ExperimentConfig) -> RunPaths:
    return RunPaths(Path(cfg.run_dir))


def require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(str(path), stage)
    return path


def predictor_variants(cfg: ExperimentConfig) -> tuple[str, ...]:
    """The deterministic comparison model is always trained; the stochastic one when enabled."""
    return PREDICTOR_VARIANTS if cfg.pred_stochastic else ("deterministic",)


# --------------------------------------------------------------------------- stages


def _generation(cfg: ExperimentConfig, t_fut: int, augment: bool) -> GenerationSettings:
    return GenerationSettings(
        spec=cfg.grid_spec,
        t_obs=cfg.t_obs,
        t_fut=t_fut,
        n_beams=cfg.n_beams,
        max_range=cfg.max_range,
        archetypes=cfg.archetypes,
        augment=augment,
        seed=cfg.seed,
    )


def stage_gen_data(cfg: ExperimentConfig) -> list[Path]:
    """Training sequences span ``t_obs + t_fut`` frames, test sequences ``t_obs + horizon``."""
    paths = run_paths(cfg)
    train = generate_sequences(_generation(cfg, cfg.t_fut, cfg.augment), range(cfg.n_train), cfg.workers, cfg.progress)
    test_indices = range(TEST_INDEX_OFFSET, TEST_INDEX_OFFSET + cfg.n_test)
    test = generate_sequences(_generation(cfg, cfg.horizon, False), test_indices, cfg.workers, cfg.progress)
    forks = sum(s.alt_grids is not None for s in test)
    logger.info("test split: %d sequences, %d with a fork", len(test), forks)
    return [write_dataset(paths.data("train"), train, cfg.grid_spec), write_dataset(paths.data("test"), test, cfg.grid_spec)]


def _read_samples(cfg: ExperimentConfig, split: str) -> list[SequenceSample]:
    _, samples = read_dataset(require(run_paths(cfg).data(split), "gen-data"))
    return samples


def _load_vae(cfg: ExperimentConfig) -> VaeGan:
    return vae_train.load_representation(require(run_paths(cfg).vae, "train-vae"), vae_train.settings_from_config(cfg))


def stage_train_vae(cfg: ExperimentConfig) -> list[Path]:
    paths = run_paths(cfg)
    train = _read_samples(cfg, "train")
    grids = np.concatenate([s.grids for s in train])
    run = vae_train.train_representation(grids, vae_train.settings_from_config(cfg), cfg.seed, cfg.progress, cfg.log_every)
    test = _read_samples(cfg, "test")
    held_out = vae_train.reconstruction_mse(run.model, np.concatenate([s.grids for s in test]))
    logger.info("representation held-out reconstruction MSE %.5f", held_out)
    return [vae_train.save_representation(paths.vae, run.model), vae_train.write_losses(paths.vae_losses, run)]


def stage_encode(cfg: ExperimentConfig) -> list[Path]:
    paths = run_paths(cfg)
    vae = _load_vae(cfg)
    out = []
    for split in ("train", "test"):
        sequences = predictor_train.encode_dataset(vae, _read_samples(cfg, split))
        out.append(write_codes(paths.codes(split), sequences, cfg.code_shape))
    return out


def _read_codes(cfg: ExperimentConfig, split: str) -> list[CodeSequence]:
    _, sequences = read_codes(require(run_paths(cfg).codes(split), "encode"))
    return sequences


def stage_train_predictor(cfg: ExperimentConfig) -> list[Path]:
    paths = run_paths(cfg)
    train = _read_codes(cfg, "train")
    test = [s for s in _read_codes(cfg, "test") if s.codes.shape[0] >= cfg.t_obs + cfg.t_fut]
    settings = predictor_train.TrainSettings.from_config(cfg)
    schedule = predictor_train.schedule_from_config(cfg)
    out = []
    for variant in predictor_variants(cfg):
        pcfg = predictor_config(cfg, variant)
        logger.info("training %s predictor (%s preset)", variant, cfg.pred_preset)
        run = predictor_train.train_predictor(train, pcfg, schedule, settings, cfg.seed, cfg.progress, cfg.log_every)
        if test:
            recon, kl = predictor_train.evaluation_loss(run.model, test, cfg.seed)
            logger.info("%s predictor held-out recon %.5f kl %.4f", variant, recon, kl)
        out.append(predictor_train.save_predictor(paths.predictor(variant), run.model))
        out.append(predictor_train.write_losses(paths.predictor_losses(variant), run))
    return out


def predictor_config(cfg: ExperimentConfig, variant: str) -> PredictorConfig:
    pcfg = predictor_train.settings_from_config(cfg)
    return pcfg if variant == "stochastic" else replace(pcfg, stochastic=False)


def stage_train_refiner(cfg: ExperimentConfig) -> list[Path]:
    if not cfg.diff_enabled:
        logger.info("refiner disabled (diff_enabled = false)")
        return []
    paths = run_paths(cfg)
    vae = _load_vae(cfg)
    windows = refiner_train.build_windows(vae, _read_samples(cfg, "train"), cfg.diff_window)
    rcfg = refiner_train.settings_from_config(cfg)
    run = refiner_train.train_refiner(windows, rcfg, cfg.seed, cfg.progress, cfg.log_every)
    return [refiner_train.save_refiner(paths.refiner, run.model), refiner_train.write_losses(paths.refiner_losses, run)]


# --------------------------------------------------------------------------- eval


@dataclass(eq=False)
class EvalModels:
    """Everything a worker needs to forecast and score one test sequence."""

    cfg: ExperimentConfig
    vae: VaeGan
    predictors: dict[str, VariationalPredictor]
    refiner: DenoiseUNet | None = None
    schedule: NoiseSchedule | None = None

    @classmethod
    def load(cls, cfg: ExperimentConfig) -> EvalModels:
        paths = run_paths(cfg)
        predictors = {}
        for variant in predictor_variants(cfg):
            ckpt = require(paths.predictor(variant), "train-predictor")
            predictors[variant] = predictor_train.load_predictor(ckpt, predictor_config(cfg, variant))
        refiner = schedule = None
        if cfg.diff_enabled and "stochastic" in predictors:
            rcfg = refiner_train.settings_from_config(cfg)
            refiner = refiner_train.load_refiner(require(paths.refiner, "train-refiner"), rcfg)
            schedule = NoiseSchedule.linear(rcfg.steps)
        return cls(cfg, _load_vae(cfg), predictors, refiner, schedule)


@dataclass(eq=False)
class SequenceEval:
    sequence_id: int
    psi: dict[str, np.ndarray] = field(default_factory=dict)
    coverage: dict[str, bool | None] = field(default_factory=dict)
    best: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    clamp_rate: float | None = None


def forecast(
    vae: VaeGan,
    model: VariationalPredictor,
    codes: CodeSequence,
    n_samples: int,
    t_obs: int,
    horizon: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """(S, horizon, H, W) decoded forecasts; samples are rolled out as one batch."""
    observed = np.repeat(codes.codes[None, :t_obs], n_samples, axis=0)
    cond = Conditioning.from_sequences([codes] * n_samples).window(0, t_obs + horizon)
    with no_grad():
        z = extrapolate(model, observed, cond, horizon, rng).data
    return np.stack([decode_codes(vae, z[s]) for s in range(n_samples)])


def evaluate_sequence(
    models: EvalModels,
    sequence_id: int,
    sample: SequenceSample,
    codes: CodeSequence,
    refine_it: bool,
    keep_grids: bool,
) -> SequenceEval:
    cfg = models.cfg
    t_obs, horizon = cfg.t_obs, cfg.horizon
    truth = sample.grids[t_obs : t_obs + horizon]
    rng = stream_rng(cfg.seed, sequence_id, 4)
    out = SequenceEval(sequence_id)
    fork_frame = t_obs + cfg.t_fut - 1

    def record(variant: str, predictions: np.ndarray) -> None:
        table = psi_table(predictions, truth, cfg.t_occ, cfg.t_free)
        out.psi[variant] = table
        if keep_grids:
            out.best[variant] = predictions[best_sample(table)]
        if sample.alt_grids is not None and variant != "fixed_frame":
            final = predictions[:, cfg.t_fut - 1]
            out.coverage[variant] = branches_covered(final, sample.grids[fork_frame], sample.alt_grids[fork_frame])

    record("fixed_frame", fixed_frame_baseline(sample.grids[:t_obs], horizon)[None])
    for variant, model in models.predictors.items():
        n = cfg.n_samples if model.cfg.stochastic else 1
        predictions = forecast(models.vae, model, codes, n, t_obs, horizon, rng)
        record(variant, predictions)
        if variant == "stochastic" and refine_it and models.refiner is not None and models.schedule is not None:
            result = refine(models.refiner, models.schedule, predictions, sample.grids[t_obs - 1], rng)
            out.clamp_rate = result.clamp_rate
            record("refined", result.grids)
    return out


_WORKER_MODELS: EvalModels | None = None


def _init_worker(cfg: ExperimentConfig) -> None:
    global _WORKER_MODELS
    _WORKER_MODELS = EvalModels.load(cfg)


def _evaluate_job(job: tuple[int, SequenceSample, CodeSequence, bool, bool]) -> SequenceEval:
    if _WORKER_MODELS is None:
        raise RuntimeError("eval worker not initialised")
    return evaluate_sequence(_WORKER_MODELS, *job)


def _eval_split(cfg: ExperimentConfig) -> tuple[list[SequenceSample], list[CodeSequence]]:
    samples = _read_samples(cfg, "test")
    codes = _read_codes(cfg, "test")
    if len(samples) != len(codes):
        raise ContractError(f"{len(samples)} test sequences but {len(codes)} code sequences; rerun encode")
    count = cfg.eval_sequences or len(samples)
    samples, codes = samples[:count], codes[:count]
    short = [i for i, s in enumerate(samples) if s.total < cfg.t_obs + cfg.horizon]
    if short:
        raise ContractError(f"test sequences {short} are shorter than t_obs + horizon; rerun gen-data")
    return samples, codes


def evaluate_run(
    cfg: ExperimentConfig, samples: list[SequenceSample], codes: list[CodeSequence]
) -> list[SequenceEval]:
    """Per-sequence psi tables for every variant, in sequence order."""
    jobs = [(i, samples[i], codes[i], i < cfg.diff_eval_sequences, i < DUMP_SEQUENCES) for i in range(len(samples))]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers, initializer=_init_worker, initargs=(cfg,)) as pool:
            return list(tqdm(pool.map(_evaluate_job, jobs), total=len(jobs), disable=not cfg.progress, desc="eval"))
    models = EvalModels.load(cfg)
    return [evaluate_sequence(models, *job) for job in tqdm(jobs, disable=not cfg.progress, desc="eval")]


def build_reports(results: list[SequenceEval]) -> dict[str, ISReport]:
    reports = {}
    for variant in VARIANTS:
        rows = [r for r in results if variant in r.psi]
        if rows:
            reports[variant] = evaluate([r.psi[variant] for r in rows], variant, tuple(r.sequence_id for r in rows))
    return reports


def summary_columns(cfg: ExperimentConfig) -> tuple[str, str]:
    return f"IS_{cfg.t_obs}_{cfg.t_fut}", f"IS_{cfg.t_obs}_{cfg.horizon}"


def metric_rows(reports: dict[str, ISReport]) -> list[dict[str, object]]:
    rows: list[dict[str, object]] = []
    for variant, report in reports.items():
        for sequence_id, psi in zip(report.sequence_ids, report.per_sequence):
            rows.extend({"sequence_id": sequence_id, "step": t + 1, "variant": variant, "psi": float(v)} for t, v in enumerate(psi))
    return rows


def summary_rows(cfg: ExperimentConfig, reports: dict[str, ISReport]) -> list[dict[str, object]]:
    short, long = summary_columns(cfg)
    return [
        {
            "variant": variant,
            short: report.score(cfg.t_fut),
            long: report.score(cfg.horizon),
            "stderr": report.stderr(cfg.t_fut),
        }
        for variant, report in reports.items()
    ]


def coverage_rows(results: list[SequenceEval]) -> list[dict[str, object]]:
    rows: list[dict[str, object]] = []
    for variant in VARIANTS:
        flags = [r.coverage[variant] for r in results if r.coverage.get(variant) is not None]
        if flags:
            covered = sum(bool(f) for f in flags)
            rows.append({"variant": variant, "fork_sequences": len(flags), "covered": covered, "rate": covered / len(flags)})
    return rows


def _write(path: Path, rows: list[dict[str, object]], columns: tuple[str, ...] | None = None) -> Path:
    ensure_out_dir(path.parent)
    if not rows and columns:
        path.write_text(",".join(columns) + "\n", encoding="utf-8")
    else:
        write_rows(path, rows)
    return path


def dump_grids(cfg: ExperimentConfig, results: list[SequenceEval], samples: list[SequenceSample]) -> list[Path]:
    out_dir = run_paths(cfg).grids
    written = []
    for r in results:
        if not r.best:
            continue
        prefix = f"seq{r.sequence_id:04d}"
        truth = samples[r.sequence_id].grids[cfg.t_obs : cfg.t_obs + cfg.horizon]
        written += write_pgm_stack(out_dir / "truth", truth, prefix)
        for variant, grids in r.best.items():
            written += write_pgm_stack(out_dir / variant, grids, prefix)
    return written


def stage_eval(cfg: ExperimentConfig) -> list[Path]:
    paths = run_paths(cfg)
    samples, codes = _eval_split(cfg)
    results = evaluate_run(cfg, samples, codes)
    reports = build_reports(results)
    written = [
        _write(paths.metrics, metric_rows(reports), METRIC_COLUMNS),
        _write(paths.summary, summary_rows(cfg, reports)),
        _write(paths.coverage, coverage_rows(results), COVERAGE_COLUMNS),
    ]
    short, _ = summary_columns(cfg)
    for variant, report in reports.items():
        logger.info("%s %s = %.4f ± %.4f (%d sequences)", variant, short, report.score(cfg.t_fut), report.stderr(cfg.t_fut), report.n_sequences)
    if "stochastic" in reports and "deterministic" in reports:
        p = sign_test(reports["stochastic"].sequence_means(cfg.t_fut), reports["deterministic"].sequence_means(cfg.t_fut))
        logger.info("sign test stochastic < deterministic: p = %.4g", p)
    rates = [r.clamp_rate for r in results if r.clamp_rate is not None]
    if rates:
        logger.info("refiner clamp rate %.4f", float(np.mean(rates)))
    grid_files = dump_grids(cfg, results, samples)
    logger.info("wrote %d grid dumps under %s", len(grid_files), paths.grids)
    return written


def stage_baseline(cfg: ExperimentConfig) -> list[Path]:
    """Fixed-frame scores alone; needs only the generated test split."""
    paths = run_paths(cfg)
    samples = _read_samples(cfg, "test")[: cfg.eval_sequences or None]
    psi = []
    for sample in tqdm(samples, disable=not cfg.progress, desc="baseline"):
        truth = sample.grids[cfg.t_obs : cfg.t_obs + cfg.horizon]
        predicted = fixed_frame_baseline(sample.grids[: cfg.t_obs], cfg.horizon)
        psi.append(psi_table(predicted[None], truth, cfg.t_occ, cfg.t_free))
    reports = {"fixed_frame": evaluate(psi, "fixed_frame")}
    return [
        _write(paths.baseline_metrics, metric_rows(reports), METRIC_COLUMNS),
        _write(paths.baseline_summary, summary_rows(cfg, reports)),
    ]


# --------------------------------------------------------------------------- orchestration

StageFn = Callable[[ExperimentConfig], list[Path]]

STAGE_FUNCTIONS: dict[str, StageFn] = {
    "gen-data": stage_gen_data,
    "train-vae": stage_train_vae,
    "encode": stage_encode,
    "train-predictor": stage_train_predictor,
    "train-refiner": stage_train_refiner,
    "eval": stage_eval,
    "baseline": stage_baseline,
}


def stage_outputs(stage: str, cfg: ExperimentConfig) -> list[Path]:
    paths = run_paths(cfg)
    if stage == "gen-data":
        return [paths.data("train"), paths.data("test")]
    if stage == "train-vae":
        return [paths.vae]
    if stage == "encode":
        return [paths.codes("train"), paths.codes("test")]
    if stage == "train-predictor":
        return [paths.predictor(v) for v in predictor_variants(cfg)]
    if stage == "train-refiner":
        return [paths.refiner] if cfg.diff_enabled else []
    if stage == "eval":
        return [paths.metrics, paths.summary]
    if stage == "baseline":
        return [paths.baseline_metrics, paths.baseline_summary]
    raise ContractError(f"bad stage '{stage}' (expected one of {list(STAGE_FUNCTIONS)})")


def run_stage(stage: str, cfg: ExperimentConfig) -> list[Path]:
    if stage not in STAGE_FUNCTIONS:
        raise ContractError(f"bad stage '{stage}' (expected one of {list(STAGE_FUNCTIONS)})")
    logger.info("stage %s -> %s", stage, cfg.run_dir)
    written = STAGE_FUNCTIONS[stage](cfg)
    for path in written:
        logger.info("wrote %s", path)
    return written


def run_experiment(cfg: ExperimentConfig, force: bool = False) -> list[Path]:
    """All stages in order, skipping those whose artifacts are already on disk."""
    paths = run_paths(cfg)
    ensure_out_dir(paths.root)
    if paths.config.exists() and not force:
        if paths.config.read_text(encoding="utf-8") != config_text(cfg):
            logger.warning("config differs from %s; existing artifacts are reused (pass force to retrain)", paths.config)
    written = [dump_config(cfg, paths.config)]
    for stage in STAGES:
        outputs = stage_outputs(stage, cfg)
        if not force and outputs and all(p.exists() for p in outputs):
            logger.info("stage %s: artifacts present, skipping", stage)
            continue
        written += run_stage(stage, cfg)
    return written

