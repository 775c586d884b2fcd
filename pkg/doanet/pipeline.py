"""
Pipeline stages behind the command-line interface.

On-disk layout (all roots come from [paths]):

    data_dir/split<s>/<set>/manifest.csv
    data_dir/split<s>/<set>/<part>/rec<k>.wav | .csv | .meta.json
    work_dir/split<s>/<set>/<part>/rec<k>/seq<j>.feat | sps.bin | doa.bin | index.csv
    work_dir/models/split<s>/<context>_o<O>.params | .history.csv | .meta.json
    results_dir/music/split<s>/<set>/rec<k>.peaks.csv
    results_dir/infer/split<s>/<set>/rec<k>/sps.bin | probs.bin | estimates_<mode>.csv
    results_dir/<stage>_report.txt | .csv

<set> is "<context>_o<O>" for anechoic data and "<context>_o<O>_room<r>"
for reverberant data. Reverberant training data exists only for the
training room; other rooms get test recordings only.

Each stage writes resolved_config.ini next to its outputs. Per-recording
work runs on a process pool when workers > 1; results are collected in
task order so outputs do not depend on scheduling.
"""

from __future__ import annotations

import logging
from concurrent.futures import Future, ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Sequence

import numpy as np
from rich.progress import BarColumn, Progress, TextColumn, TimeRemainingColumn

from doanet.config import ExperimentConfig, write_config
from doanet.corpus import Corpus, CorpusExample, generate_synthetic_corpus, load_corpus_dir, split_corpus
from doanet.errors import MissingInputError, ValidationError
from doanet.export import (
    sps_image,
    write_direction_sets,
    write_pgm,
    write_report,
    write_report_csv,
)
from doanet.features import assemble_sequences, pad_frames, sequence_slices, stft
from doanet.geometry import DirectionGrid, build_doa_grid, build_sps_grid
from doanet.metrics import EvalReport, FrameTally
from doanet.model import Direction
from doanet.network import DOANet
from doanet.room import measure_t60, room_preset, spatial_impulse_response
from doanet.scene import compute_ground_truth, render_anechoic, render_reverberant, schedule_events
from doanet.storage import (
    file_sha256,
    meta_path,
    read_array,
    read_csv,
    read_meta,
    read_parameters,
    read_scene,
    read_wav,
    write_array,
    write_csv,
    write_grid_csv,
    write_meta,
    write_parameters,
    write_scene,
    write_wav,
)
from doanet.subspace import compute_music_sps, oracle_sps, pick_peaks
from doanet.training import (
    MODES,
    SequenceItem,
    indices_to_directions,
    predict,
    select_threshold,
    select_top_o,
    train,
)

logger = logging.getLogger(__name__)

PARTS = ("train", "test")
MANIFEST_FIELDS = ["recording", "part", "wav", "scene", "sha256"]
INDEX_FIELDS = ["sequence", "file", "first_frame", "valid_frames"]
HISTORY_FIELDS = ["epoch", "mse", "bce", "total", "doa_metric", "best_flag"]
RESOLVED_CONFIG = "resolved_config.ini"


# ---------------------------------------------------------------------------
# Dataset enumeration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetKey:
    split: int
    context: str
    overlap: int
    room: Optional[int] = None

    @property
    def name(self) -> str:
        base = f"{self.context}_o{self.overlap}"
        return base if self.room is None else f"{base}_room{self.room}"

    @property
    def model_name(self) -> str:
        return f"{self.context}_o{self.overlap}"

    def subdir(self) -> Path:
        return Path(f"split{self.split}") / self.name

    def label(self) -> str:
        return f"split{self.split} {self.name}"


def enumerate_sets(cfg: ExperimentConfig) -> list[DatasetKey]:
    ds = cfg.dataset
    keys: list[DatasetKey] = []
    for split in ds.splits:
        for context in ds.contexts:
            for overlap in ds.overlaps:
                if context == "anechoic":
                    keys.append(DatasetKey(split, context, overlap))
                else:
                    rooms = sorted({ds.train_room, *ds.test_rooms})
                    keys.extend(DatasetKey(split, context, overlap, r) for r in rooms)
    return keys


def parts_of(key: DatasetKey, cfg: ExperimentConfig) -> tuple[str, ...]:
    if key.context == "reverberant" and key.room != cfg.dataset.train_room:
        return ("test",)
    if key.context == "reverberant" and key.room not in cfg.dataset.test_rooms:
        return ("train",)
    return PARTS


def training_sets(cfg: ExperimentConfig) -> list[DatasetKey]:
    return [k for k in enumerate_sets(cfg) if "train" in parts_of(k, cfg)]


def training_set_for(key: DatasetKey, cfg: ExperimentConfig) -> DatasetKey:
    room = cfg.dataset.train_room if key.context == "reverberant" else None
    return DatasetKey(key.split, key.context, key.overlap, room)


def recording_seed(cfg: ExperimentConfig, key: DatasetKey, part: str, index: int) -> int:
    ctx = ("anechoic", "reverberant").index(key.context)
    seq = np.random.SeedSequence(
        [cfg.dataset.seed, key.split, ctx, key.overlap, key.room or 0, PARTS.index(part), index]
    )
    return int(seq.generate_state(1)[0])


def recording_name(index: int) -> str:
    return f"rec{index:03d}"


def _model_path(cfg: ExperimentConfig, key: DatasetKey) -> Path:
    return Path(cfg.paths.work_dir) / "models" / f"split{key.split}" / f"{key.model_name}.params"


# ---------------------------------------------------------------------------
# Task runner
# ---------------------------------------------------------------------------


def _progress() -> Progress:
    return Progress(
        TextColumn("[bold]{task.description}"),
        BarColumn(),
        TextColumn("{task.completed}/{task.total}"),
        TimeRemainingColumn(),
        transient=True,
    )


def run_tasks(
    fn: Callable[..., Any],
    tasks: Sequence[tuple[Any, ...]],
    description: str,
    workers: int = 1,
    initializer: Optional[Callable[..., None]] = None,
    initargs: tuple[Any, ...] = (),
) -> list[Any]:
    """Run fn(*task) for every task; results come back in task order."""
    results: list[Any] = [None] * len(tasks)
    with _progress() as progress:
        bar = progress.add_task(description, total=len(tasks))
        if workers <= 1 or len(tasks) <= 1:
            if initializer is not None:
                initializer(*initargs)
            for i, task in enumerate(tasks):
                results[i] = fn(*task)
                progress.advance(bar)
            return results
        with ProcessPoolExecutor(max_workers=workers, initializer=initializer, initargs=initargs) as pool:
            futures: list[Future[Any]] = [pool.submit(fn, *task) for task in tasks]
            for i, fut in enumerate(futures):
                results[i] = fut.result()
                progress.advance(bar)
    return results


# ---------------------------------------------------------------------------
# Corpus (one copy per worker process)
# ---------------------------------------------------------------------------

_CORPUS: Optional[Corpus] = None


def load_corpus(cfg: ExperimentConfig) -> Corpus:
    if cfg.paths.corpus_dir:
        return load_corpus_dir(cfg.paths.corpus_dir)
    return generate_synthetic_corpus(cfg.dataset.examples_per_class, seed=cfg.dataset.seed)


def _init_corpus(cfg: ExperimentConfig) -> None:
    global _CORPUS
    _CORPUS = load_corpus(cfg)


def _corpus() -> Corpus:
    if _CORPUS is None:
        raise MissingInputError("Corpus was not loaded in this process")
    return _CORPUS


def _part_examples(cfg: ExperimentConfig, split: int, part: str) -> list[CorpusExample]:
    train_ex, test_ex = split_corpus(_corpus(), split, cfg.dataset.test_examples_per_class, cfg.dataset.seed)
    return train_ex if part == "train" else test_ex


# ---------------------------------------------------------------------------
# synthesize
# ---------------------------------------------------------------------------


def _synthesize_one(cfg: ExperimentConfig, key: DatasetKey, part: str, index: int) -> dict[str, str]:
    set_dir = Path(cfg.paths.data_dir) / key.subdir()
    name = recording_name(index)
    room = room_preset(key.room) if key.room is not None else None
    spec = schedule_events(
        _part_examples(cfg, key.split, part),
        key.overlap,
        length=cfg.dataset.recording_length,
        seed=recording_seed(cfg, key, part, index),
        context=key.context,
        room=room,
        grid=build_doa_grid(),
        max_distance=cfg.dataset.max_distance,
    )
    if spec.context == "reverberant":
        buffer, _ = render_reverberant(spec, _corpus())
    else:
        buffer, _ = render_anechoic(spec, _corpus(), cfg.dataset.max_distance)
    wav = write_wav(set_dir / part / f"{name}.wav", buffer)
    scene = write_scene(set_dir / part / f"{name}.csv", spec)
    return {
        "recording": name,
        "part": part,
        "wav": wav.relative_to(set_dir).as_posix(),
        "scene": scene.relative_to(set_dir).as_posix(),
        "sha256": file_sha256(wav),
    }


def _log_room_t60(rooms: Iterable[int]) -> None:
    for number in sorted(set(rooms)):
        room = room_preset(number)
        mic = np.asarray(room.microphone_position)
        source = tuple(float(v) for v in mic + np.array([1.5, 1.0, 0.5]))
        ir = spatial_impulse_response(room, source)  # type: ignore[arg-type]
        logger.info(
            "Room %d %s: target T60 %.2f s, measured %.2f s",
            number, room.dimensions, room.target_t60, measure_t60(ir[0]),
        )


def cmd_synthesize(cfg: ExperimentConfig) -> list[Path]:
    """Render every recording of every set and write one manifest per set."""
    data_dir = Path(cfg.paths.data_dir)
    keys = enumerate_sets(cfg)
    rooms = [k.room for k in keys if k.room is not None]
    if rooms:
        _log_room_t60(rooms)

    tasks: list[tuple[Any, ...]] = []
    for key in keys:
        for part in parts_of(key, cfg):
            count = cfg.dataset.train_recordings if part == "train" else cfg.dataset.test_recordings
            tasks.extend((cfg, key, part, k) for k in range(count))
    rows = run_tasks(_synthesize_one, tasks, "synthesize", cfg.workers, _init_corpus, (cfg,))

    manifests: list[Path] = []
    for key in keys:
        set_rows = [row for task, row in zip(tasks, rows) if task[1] == key]
        manifests.append(write_csv(data_dir / key.subdir() / "manifest.csv", MANIFEST_FIELDS, set_rows))
    write_grid_csv(data_dir / "doa_grid.csv", build_doa_grid())
    write_grid_csv(data_dir / "sps_grid.csv", build_sps_grid())
    write_config(data_dir / RESOLVED_CONFIG, cfg)
    logger.info("Synthesized %d recordings in %d sets under %s", len(tasks), len(keys), data_dir)
    return manifests


def read_manifest(cfg: ExperimentConfig, key: DatasetKey) -> list[dict[str, str]]:
    path = Path(cfg.paths.data_dir) / key.subdir() / "manifest.csv"
    if not path.exists():
        raise MissingInputError(f"No manifest for {key.label()}: {path} (run 'synthesize' first)")
    return read_csv(path)


# ---------------------------------------------------------------------------
# prepare
# ---------------------------------------------------------------------------


def recording_work_dir(cfg: ExperimentConfig, key: DatasetKey, part: str, name: str) -> Path:
    return Path(cfg.paths.work_dir) / key.subdir() / part / name


def _prepare_one(cfg: ExperimentConfig, key: DatasetKey, row: dict[str, str]) -> int:
    set_dir = Path(cfg.paths.data_dir) / key.subdir()
    out = recording_work_dir(cfg, key, row["part"], row["recording"])
    buffer = read_wav(set_dir / row["wav"])
    scene = read_scene(set_dir / row["scene"])
    spec = stft(buffer)
    truth = compute_ground_truth(scene)
    if len(truth) != spec.n_frames:
        raise ValidationError(
            f"{row['recording']}: {spec.n_frames} STFT frames but {len(truth)} ground-truth frames"
        )

    index_rows = []
    slices = sequence_slices(spec.n_frames, cfg.features.sequence_length)
    for j, (seq, sl) in enumerate(zip(assemble_sequences(spec, cfg.features.sequence_length), slices)):
        path = write_array(out / f"seq{j:02d}.feat", seq.data, "FEAT", seq.valid_frames)
        index_rows.append({"sequence": j, "file": path.name, "first_frame": sl.start, "valid_frames": seq.valid_frames})
    write_csv(out / "index.csv", INDEX_FIELDS, index_rows)

    doa = truth.doa_target(build_doa_grid())
    write_array(out / "doa.bin", doa, "DOAT")
    counts = truth.counts()
    sps = compute_music_sps(spec, counts, build_sps_grid(), cfg.music.half_window).values
    write_array(out / "sps.bin", sps, "SPS_")
    meta: dict[str, Any] = {
        "n_frames": spec.n_frames,
        "sps_scale": float(sps.max()),
        "covariance_half_window": cfg.music.half_window,
        "covariance_bins": "all 1024",
        "grid": "sps 10 deg, south pole first, elevation-major",
    }
    if cfg.training.sps_target == "oracle":
        oracle = oracle_sps(truth.frames, build_sps_grid()).values
        write_array(out / "oracle_sps.bin", oracle, "SPS_")
        meta["oracle_scale"] = float(oracle.max()) if oracle.max() > 0 else 1.0
    write_meta(out / "sps.meta.json", meta)
    return spec.n_frames


def cmd_prepare(cfg: ExperimentConfig) -> int:
    """Features, MUSIC SPS targets and DOA targets for every recording."""
    tasks: list[tuple[Any, ...]] = []
    for key in enumerate_sets(cfg):
        for row in read_manifest(cfg, key):
            tasks.append((cfg, key, row))
    frames = run_tasks(_prepare_one, tasks, "prepare", cfg.workers)
    write_config(Path(cfg.paths.work_dir) / RESOLVED_CONFIG, cfg)
    logger.info("Prepared %d recordings (%d frames)", len(tasks), sum(frames))
    return len(tasks)


# ---------------------------------------------------------------------------
# Loading prepared recordings
# ---------------------------------------------------------------------------


def _load_feature(path: Path) -> np.ndarray:
    return read_array(path, "FEAT")[0]


def _require_dir(path: Path, what: str) -> Path:
    if not path.is_dir():
        raise MissingInputError(f"Missing {what}: {path} (run 'prepare' first)")
    return path


def load_recording_items(cfg: ExperimentConfig, work: Path) -> tuple[list[SequenceItem], np.ndarray]:
    """Sequences of one prepared recording and its (frames, 432) DOA target."""
    _require_dir(work, "prepared recording")
    missing = [n for n in ("index.csv", "doa.bin", "sps.bin", "sps.meta.json") if not (work / n).exists()]
    if missing:
        raise MissingInputError(f"{work}: missing {', '.join(missing)}")
    meta = read_meta(work / "sps.meta.json")
    doa, _ = read_array(work / "doa.bin", "DOAT")
    if cfg.training.sps_target == "oracle":
        sps, _ = read_array(work / "oracle_sps.bin", "SPS_")
        scale = float(meta["oracle_scale"])
    else:
        sps, _ = read_array(work / "sps.bin", "SPS_")
        scale = float(meta["sps_scale"]) or 1.0
    sps = (sps / scale).astype(np.float32)
    length = cfg.features.sequence_length
    sps_blocks = pad_frames(sps, length)
    doa_blocks = pad_frames(doa, length)
    items = []
    for row, s_blk, d_blk in zip(read_csv(work / "index.csv"), sps_blocks, doa_blocks):
        items.append(SequenceItem(
            load_features=partial(_load_feature, work / row["file"]),
            sps_target=s_blk,
            doa_target=d_blk,
            valid_frames=int(row["valid_frames"]),
        ))
    return items, doa


def _recordings(cfg: ExperimentConfig, key: DatasetKey, part: str) -> list[str]:
    return [row["recording"] for row in read_manifest(cfg, key) if row["part"] == part]


# ---------------------------------------------------------------------------
# music-eval
# ---------------------------------------------------------------------------


def music_estimates(sps: np.ndarray, counts: np.ndarray, grid: DirectionGrid) -> list[tuple[Direction, ...]]:
    """Top-count SPS peaks per frame; frames with no active source get none."""
    return [
        tuple(pick_peaks(sps[t], int(c), grid)) if c > 0 else ()
        for t, c in enumerate(counts)
    ]


def _truth_frames(cfg: ExperimentConfig, key: DatasetKey, part: str, name: str) -> list[tuple[Direction, ...]]:
    scene = read_scene(Path(cfg.paths.data_dir) / key.subdir() / part / f"{name}.csv")
    return list(compute_ground_truth(scene).frames)


def _music_one(cfg: ExperimentConfig, key: DatasetKey, name: str) -> FrameTally:
    work = _require_dir(recording_work_dir(cfg, key, "test", name), "prepared recording")
    sps, _ = read_array(work / "sps.bin", "SPS_")
    doa, _ = read_array(work / "doa.bin", "DOAT")
    counts = np.rint(doa.sum(axis=1)).astype(np.int64)
    estimates = music_estimates(sps, counts, build_sps_grid())
    truths = _truth_frames(cfg, key, "test", name)
    out = Path(cfg.paths.results_dir) / "music" / key.subdir() / f"{name}.peaks.csv"
    write_direction_sets(out, estimates)
    tally = FrameTally()
    tally.update(estimates, truths)
    return tally


def _fold(tallies: Iterable[FrameTally]) -> FrameTally:
    total = FrameTally()
    for t in tallies:
        total.merge(t)
    return total


def cmd_music_eval(cfg: ExperimentConfig) -> list[EvalReport]:
    """MUSIC with known per-frame source counts on every test set."""
    keys = [k for k in enumerate_sets(cfg) if "test" in parts_of(k, cfg)]
    tasks = [(cfg, key, name) for key in keys for name in _recordings(cfg, key, "test")]
    tallies = run_tasks(_music_one, tasks, "music-eval", cfg.workers)
    reports = []
    for key in keys:
        folded = _fold(t for task, t in zip(tasks, tallies) if task[1] == key)
        reports.append(folded.report(f"{key.label()} MUSIC"))
    results = Path(cfg.paths.results_dir)
    write_report(results / "music_report.txt", reports, "MUSIC baseline (known source count)")
    write_report_csv(results / "music_report.csv", reports)
    write_config(results / RESOLVED_CONFIG, cfg)
    return reports


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _split_holdout(names: list[str]) -> tuple[list[str], list[str]]:
    """Last sixth of the training recordings (at least one) is held out."""
    if len(names) < 2:
        return names, []
    n_val = max(1, len(names) // 6)
    return names[:-n_val], names[-n_val:]


def train_model(cfg: ExperimentConfig, key: DatasetKey) -> Path:
    names = _recordings(cfg, key, "train")
    fit_names, val_names = _split_holdout(names)
    fit_items: list[SequenceItem] = []
    val_items: list[SequenceItem] = []
    for name in fit_names:
        fit_items += load_recording_items(cfg, recording_work_dir(cfg, key, "train", name))[0]
    for name in val_names:
        val_items += load_recording_items(cfg, recording_work_dir(cfg, key, "train", name))[0]

    net = DOANet(cfg.network, seed=cfg.training.seed)
    logger.info(
        "Training %s on %d sequences (%d held out), %d parameters",
        key.label(), len(fit_items), len(val_items), net.parameter_count(),
    )
    with _progress() as progress:
        bar = progress.add_task(f"train {key.model_name}", total=cfg.training.max_epochs)
        params, history, optimizer = train(
            net, fit_items, cfg.training, val_items or None,
            on_epoch=lambda _rec: progress.advance(bar),
        )

    out = _model_path(cfg, key)
    write_parameters(out, params, optimizer.state())
    write_csv(
        out.with_suffix(".history.csv"),
        HISTORY_FIELDS,
        (
            {
                "epoch": r.epoch, "mse": f"{r.mse:.6g}", "bce": f"{r.bce:.6g}", "total": f"{r.total:.6g}",
                "doa_metric": f"{r.doa_metric:.6g}", "best_flag": int(r.best),
            }
            for r in history
        ),
    )
    best = min(history, key=lambda r: r.doa_metric)
    write_meta(meta_path(out), {
        "dataset": key.name,
        "split": key.split,
        "parameter_count": params.count(),
        "analytic_parameter_count": cfg.network.parameter_count(),
        "epochs_run": len(history),
        "best_epoch": best.epoch,
        "best_doa_metric": best.doa_metric,
        "sps_target": cfg.training.sps_target,
        "teacher_forcing": cfg.training.teacher_forcing,
    })
    return out


def cmd_train(cfg: ExperimentConfig) -> list[Path]:
    paths = [train_model(cfg, key) for key in training_sets(cfg)]
    write_config(Path(cfg.paths.work_dir) / "models" / RESOLVED_CONFIG, cfg)
    return paths


def load_model(cfg: ExperimentConfig, key: DatasetKey) -> DOANet:
    path = _model_path(cfg, training_set_for(key, cfg))
    if not path.exists():
        raise MissingInputError(f"No trained parameters for {key.label()}: {path} (run 'train' first)")
    params, _ = read_parameters(path)
    if params.config != cfg.network:
        raise ValidationError(f"{path} was trained with a different [network] configuration")
    net = DOANet(params.config, seed=cfg.training.seed)
    net.set_parameters(params)
    return net


# ---------------------------------------------------------------------------
# infer / eval
# ---------------------------------------------------------------------------


def _select(probs: np.ndarray, mode: str, counts: np.ndarray) -> list[list[int]]:
    return select_threshold(probs) if mode == "threshold" else select_top_o(probs, counts)


def cmd_infer(cfg: ExperimentConfig, modes: Sequence[str] = MODES) -> int:
    """Write network SPS, DOA probabilities and DOA estimates for every test recording."""
    doa_grid = build_doa_grid()
    done = 0
    for key in [k for k in enumerate_sets(cfg) if "test" in parts_of(k, cfg)]:
        net = load_model(cfg, key)
        names = _recordings(cfg, key, "test")
        with _progress() as progress:
            bar = progress.add_task(f"infer {key.name}", total=len(names))
            for name in names:
                items, doa = load_recording_items(cfg, recording_work_dir(cfg, key, "test", name))
                sps, probs = predict(net, items, cfg.training.batch_size)
                counts = np.rint(doa.sum(axis=1)).astype(np.int64)
                out = Path(cfg.paths.results_dir) / "infer" / key.subdir() / name
                write_array(out / "sps.bin", sps, "SPS_")
                write_array(out / "probs.bin", probs, "PROB")
                for mode in modes:
                    chosen = _select(probs, mode, counts)
                    write_direction_sets(out / f"estimates_{mode}.csv", indices_to_directions(chosen, doa_grid))
                done += 1
                progress.advance(bar)
    write_config(Path(cfg.paths.results_dir) / "infer" / RESOLVED_CONFIG, cfg)
    return done


def cmd_eval(cfg: ExperimentConfig, modes: Sequence[str] = MODES) -> list[EvalReport]:
    """
    DOA error, frame recall, confusion and SPS SNR for the network (per mode)
    and for MUSIC, on every test set.
    """
    doa_grid = build_doa_grid()
    sps_grid = build_sps_grid()
    reports: list[EvalReport] = []
    for key in [k for k in enumerate_sets(cfg) if "test" in parts_of(k, cfg)]:
        net_tallies = {mode: FrameTally() for mode in modes}
        music_tally = FrameTally()
        for name in _recordings(cfg, key, "test"):
            work = recording_work_dir(cfg, key, "test", name)
            out = Path(cfg.paths.results_dir) / "infer" / key.subdir() / name
            if not (out / "probs.bin").exists():
                raise MissingInputError(f"No inference output for {key.label()} {name}: {out} (run 'infer' first)")
            probs, _ = read_array(out / "probs.bin", "PROB")
            net_sps, _ = read_array(out / "sps.bin", "SPS_")
            music_sps, _ = read_array(work / "sps.bin", "SPS_")
            doa, _ = read_array(work / "doa.bin", "DOAT")
            scale = float(read_meta(work / "sps.meta.json")["sps_scale"]) or 1.0
            counts = np.rint(doa.sum(axis=1)).astype(np.int64)
            truths = _truth_frames(cfg, key, "test", name)
            for mode in modes:
                estimates = indices_to_directions(_select(probs, mode, counts), doa_grid)
                net_tallies[mode].update(estimates, truths)
                net_tallies[mode].update_sps(net_sps, music_sps / scale)
            music_tally.update(music_estimates(music_sps, counts, sps_grid), truths)
        for mode in modes:
            reports.append(net_tallies[mode].report(f"{key.label()} DOAnet ({mode})"))
        reports.append(music_tally.report(f"{key.label()} MUSIC"))

    results = Path(cfg.paths.results_dir)
    write_report(results / "eval_report.txt", reports, "DOAnet vs MUSIC")
    write_report_csv(results / "eval_report.csv", reports)
    write_config(results / RESOLVED_CONFIG, cfg)
    return reports


# ---------------------------------------------------------------------------
# render-sps
# ---------------------------------------------------------------------------


def _grid_for(width: int) -> DirectionGrid:
    for grid in (build_sps_grid(), build_doa_grid()):
        if len(grid) == width:
            return grid
    raise ValidationError(f"No direction grid has {width} directions")


def parse_frame_range(text: str, n_frames: int) -> range:
    """'a:b' (b exclusive), 'a' (single frame) or '' (all frames)."""
    try:
        if not text:
            rng = range(0, n_frames)
        elif ":" in text:
            lo, hi = text.split(":", 1)
            rng = range(int(lo) if lo else 0, int(hi) if hi else n_frames)
        else:
            rng = range(int(text), int(text) + 1)
    except ValueError:
        raise ValidationError(f"Bad frame range {text!r}; use START:STOP") from None
    if len(rng) == 0 or rng.start < 0 or rng.stop > n_frames:
        raise ValidationError(f"Frame range {text!r} outside [0, {n_frames})")
    return rng


def cmd_render_sps(
    sps_path: str | Path,
    out_dir: str | Path,
    frames: str = "",
    scene_path: Optional[str | Path] = None,
    peaks: int = 1,
) -> int:
    """PGM heatmap per frame plus a CSV of the top `peaks` directions per frame."""
    path = Path(sps_path)
    if not path.exists():
        raise MissingInputError(f"SPS file not found: {path}")
    try:
        values, _ = read_array(path, "SPS_")
    except ValidationError:
        values, _ = read_array(path, "PROB")
    grid = _grid_for(values.shape[1])
    selected = parse_frame_range(frames, values.shape[0])
    truth: list[tuple[Direction, ...]] = []
    if scene_path is not None:
        truth = list(compute_ground_truth(read_scene(scene_path)).frames)

    out = Path(out_dir)
    peak_sets = []
    for t in selected:
        markers = truth[t] if t < len(truth) else ()
        write_pgm(out / f"{path.stem}_frame{t:05d}.pgm", sps_image(values[t], grid, markers))
        peak_sets.append(tuple(pick_peaks(values[t], peaks, grid)))
    write_direction_sets(out / f"{path.stem}_peaks.csv", peak_sets, first_frame=selected.start)
    logger.info("Rendered %d frames of %s (%s grid) to %s", len(selected), path, grid.kind, out)
    return len(selected)
