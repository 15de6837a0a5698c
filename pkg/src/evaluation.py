"""Objective evaluation: MCD reports, speaker-embedding probe, ablation grid.

Parallel target-speaker references do not exist for arbitrary pairs, so
conversion distortion is measured on the round trip source -> target ->
source against the source itself. Reconstruction distortion is the same
measurement with the source as its own target.

Test utterances of training speakers give the many-to-many (m2m) numbers;
utterances of speakers held out of training give the any-to-any (a2a) ones.
"""

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Annotated, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .corpus import CorpusHandle, Utterance
from .dsp import MelSpectrogram, dct2_mfcc, mcd, truncate_to_common_length
from .errors import EmptyTestSetError
from .speaker_encoder import (
    SpeakerEncoderNet,
    SpeakerTrainConfig,
    cosine_similarity,
    embed,
    pad_frames,
    train_speaker_encoder,
)
from .trainer import VcTrainConfig, train_vc_with_encoder
from .vc_model import VcNet, convert


logger = logging.getLogger(__name__)

MODE_RECON = "recon"
MODE_CONV = "conv"
SETTING_M2M = "m2m"
SETTING_A2A = "a2a"
TOGGLES = ("label_smoothing", "mfcc_loss", "cycle_loss", "shuffle")
FULL_VARIANT = "full"
BASELINE_VARIANT = "baseline"

Toggle = Literal["label_smoothing", "mfcc_loss", "cycle_loss", "shuffle"]


@dataclass(frozen=True)
class PairMcd:
    source_utt: str
    target_utt: str
    mode: str
    mcd: float
    group: str = "default"
    setting: str = SETTING_M2M


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values) if values else math.nan


def _averages(pairs: Sequence[PairMcd]) -> dict[str, float]:
    recon = _mean([p.mcd for p in pairs if p.mode == MODE_RECON])
    conv = _mean([p.mcd for p in pairs if p.mode == MODE_CONV])
    return {"recon": recon, "conv": conv, "avg": (recon + conv) / 2.0}


@dataclass
class McdReport:
    """Per-pair MCD values and their per-mode averages.

    ``recon_avg``, ``conv_avg`` and ``overall_avg`` (the plain mean of the
    first two) cover speakers seen in training; ``by_group`` holds the same
    three numbers per speaker group. ``a2a`` holds them for speakers held
    out of training, or is None when the corpus has none.
    """
    per_pair: list[PairMcd]
    recon_avg: float
    conv_avg: float
    overall_avg: float
    by_group: dict[str, dict[str, float]] = field(default_factory=dict)
    a2a: Optional[dict[str, float]] = None
    probe_rate: Optional[float] = None

    @classmethod
    def from_pairs(cls, pairs: Sequence[PairMcd]) -> "McdReport":
        seen = [p for p in pairs if p.setting == SETTING_M2M]
        unseen = [p for p in pairs if p.setting == SETTING_A2A]
        overall = _averages(seen)
        groups = sorted({p.group for p in seen})
        return cls(
            per_pair=list(pairs),
            recon_avg=overall["recon"],
            conv_avg=overall["conv"],
            overall_avg=overall["avg"],
            by_group={g: _averages([p for p in seen if p.group == g]) for g in groups},
            a2a=_averages(unseen) if unseen else None,
        )


def _mel_mcd(reference: MelSpectrogram, synthesized: MelSpectrogram, db_scale: bool) -> float:
    ref, syn = truncate_to_common_length(reference.values, synthesized.values)
    return mcd(dct2_mfcc(ref), dct2_mfcc(syn), db_scale=db_scale)


def _reference(se: SpeakerEncoderNet, mel: MelSpectrogram) -> MelSpectrogram:
    return pad_frames(mel, se.config.chunk_len)


def round_trip_mcd(
    net: VcNet,
    se: SpeakerEncoderNet,
    source: Utterance,
    target: Utterance,
    db_scale: bool = False,
) -> float:
    """MCD between the source and its conversion to ``target``'s voice.

    For a different target the converted mel is converted back with the
    source as reference before scoring; with ``target is source`` this is
    plain reconstruction. References shorter than one speaker-encoder chunk
    are padded with the log floor.
    """
    converted = convert(net, se, source.mel, _reference(se, target.mel))
    if target is not source:
        converted = convert(net, se, converted, _reference(se, source.mel))
    return _mel_mcd(source.mel, converted, db_scale)


def _next_other_speaker(utts: Sequence[Utterance], index: int) -> Optional[Utterance]:
    """Next utterance in cyclic order whose speaker differs from ``utts[index]``."""
    for step in range(1, len(utts)):
        candidate = utts[(index + step) % len(utts)]
        if candidate.speaker != utts[index].speaker:
            return candidate
    return None


def _score_setting(
    net: VcNet,
    se: SpeakerEncoderNet,
    utts: Sequence[Utterance],
    setting: str,
    db_scale: bool,
) -> list[PairMcd]:
    pairs = []
    for i, utt in enumerate(utts):
        recon = round_trip_mcd(net, se, utt, utt, db_scale)
        pairs.append(PairMcd(utt.utt_id, utt.utt_id, MODE_RECON, recon, utt.group, setting))
        target = _next_other_speaker(utts, i)
        if target is not None:
            conv = round_trip_mcd(net, se, utt, target, db_scale)
            pairs.append(PairMcd(utt.utt_id, target.utt_id, MODE_CONV, conv, utt.group, setting))
    return pairs


def evaluate_mcd(
    net: VcNet,
    se: SpeakerEncoderNet,
    test_set: CorpusHandle,
    db_scale: bool = False,
) -> McdReport:
    """Reconstruction and conversion MCD over the test split and unseen speakers.

    Each test utterance is scored once in recon mode and once in conv mode
    against the next test utterance of another speaker. Utterances of
    speakers held out of training are scored the same way among
    themselves and reported as the a2a setting.

    Raises:
        EmptyTestSetError: If there are neither test nor unseen utterances
    """
    utts = test_set.test_utterances()
    unseen = test_set.unseen_utterances()
    if not utts and not unseen:
        raise EmptyTestSetError("test set is empty")

    pairs = _score_setting(net, se, utts, SETTING_M2M, db_scale)
    pairs.extend(_score_setting(net, se, unseen, SETTING_A2A, db_scale))

    if utts and not any(p.mode == MODE_CONV and p.setting == SETTING_M2M for p in pairs):
        logger.warning("Test set has a single speaker; conversion MCD is undefined")

    report = McdReport.from_pairs(pairs)
    logger.info(
        f"MCD over {len(utts)} test utterances: recon={report.recon_avg:.4f} "
        f"conv={report.conv_avg:.4f} avg={report.overall_avg:.4f}"
    )
    if report.a2a is not None:
        logger.info(
            f"A2A MCD over {len(unseen)} unseen-speaker utterances: recon={report.a2a['recon']:.4f} "
            f"conv={report.a2a['conv']:.4f} avg={report.a2a['avg']:.4f}"
        )
    return report


def cross_speaker_pairs(utts: Sequence[Utterance], max_pairs: Optional[int] = None, seed: int = 0) -> list[tuple[Utterance, Utterance]]:
    """Ordered (source, target) pairs of different speakers, optionally a seeded subsample."""
    pairs = [(a, b) for a in utts for b in utts if a.speaker != b.speaker]
    if max_pairs is not None and len(pairs) > max_pairs:
        chosen = np.sort(np.random.default_rng(seed).choice(len(pairs), size=max_pairs, replace=False))
        pairs = [pairs[i] for i in chosen]
    return pairs


def speaker_probe(
    net: VcNet,
    se: SpeakerEncoderNet,
    test_set: CorpusHandle,
    max_pairs: Optional[int] = 200,
    seed: int = 0,
) -> float:
    """Fraction of cross-speaker conversions whose embedding is closer to the target than to the source.

    Raises:
        EmptyTestSetError: If the test split has no cross-speaker pair
    """
    pairs = cross_speaker_pairs(test_set.test_utterances(), max_pairs, seed)
    if not pairs:
        raise EmptyTestSetError("no cross-speaker pairs in test set")

    references = {}
    for utt in {u.utt_id: u for pair in pairs for u in pair}.values():
        references[utt.utt_id] = embed(se, _reference(se, utt.mel))

    successes = 0
    for source, target in pairs:
        converted = embed(se, _reference(se, convert(net, se, source.mel, _reference(se, target.mel))))
        to_target = cosine_similarity(converted, references[target.utt_id])
        to_source = cosine_similarity(converted, references[source.utt_id])
        successes += int(to_target > to_source)

    rate = successes / len(pairs)
    logger.info(f"Speaker probe: {successes}/{len(pairs)} conversions closer to target ({rate:.3f})")
    return rate


def write_report(report: McdReport, path: str | Path) -> tuple[Path, Path]:
    """Write per-pair rows as CSV and the rendered table next to it as ``<path>.txt``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["source_utt", "target_utt", "mode", "mcd", "group", "setting"])
        for p in report.per_pair:
            writer.writerow([p.source_utt, p.target_utt, p.mode, repr(p.mcd), p.group, p.setting])

    text_path = path.with_name(path.name + ".txt")
    text_path.write_text(render_report(report), encoding="utf-8")
    return path, text_path


def render_report(report: McdReport) -> str:
    """Recon/Conv/Avg rows with one column for all seen speakers, one per group and one for a2a."""
    columns = [("all", {"recon": report.recon_avg, "conv": report.conv_avg, "avg": report.overall_avg})]
    if len(report.by_group) > 1:
        columns.extend(report.by_group.items())
    if report.a2a is not None:
        columns.append((SETTING_A2A.upper(), report.a2a))

    width = max(10, *(len(name) + 2 for name, _ in columns))
    lines = ["MCD".ljust(8) + "".join(name.rjust(width) for name, _ in columns)]
    for key, label in (("recon", "Recon."), ("conv", "Conv."), ("avg", "Avg.")):
        lines.append(label.ljust(8) + "".join(f"{values[key]:.3f}".rjust(width) for _, values in columns))
    if report.probe_rate is not None:
        lines.append("")
        lines.append(f"Speaker probe success rate: {report.probe_rate:.3f}")
    return "\n".join(lines) + "\n"


class AblationSpec(BaseModel):
    """Grid of bottleneck sizes times loss/encoder variants."""
    model_config = ConfigDict(extra="forbid")

    bottleneck_sizes: Annotated[list[Annotated[int, Field(ge=2)]], Field(min_length=1)] = [16, 64, 128]
    toggles: Annotated[list[Toggle], Field(description="Components switched off one at a time")] = []
    iterations: Annotated[int, Field(ge=1, description="VC training iterations per cell")] = 2000
    include_baseline: Annotated[bool, Field(description="Add a batch-norm, no-cycle cell per bottleneck")] = False
    probe: Annotated[bool, Field(description="Also run the speaker probe per cell")] = False
    max_workers: Annotated[int, Field(ge=1, description="Cells trained in parallel processes")] = 1


class AblationPlan(BaseModel):
    """Everything an ``ablate`` run needs, as one config file."""
    model_config = ConfigDict(extra="forbid")

    corpus: Annotated[str, Field(description="Corpus directory")]
    spec: AblationSpec = AblationSpec()
    vc: VcTrainConfig = VcTrainConfig()
    se: SpeakerTrainConfig = SpeakerTrainConfig()


@dataclass
class AblationCell:
    bottleneck: int
    variant: str
    report: McdReport


def variant_names(spec: AblationSpec) -> list[str]:
    names = [FULL_VARIANT] + [f"w/o {toggle}" for toggle in spec.toggles]
    if spec.include_baseline:
        names.append(BASELINE_VARIANT)
    return names


def _se_variant(variant: str, se_cfg: SpeakerTrainConfig) -> SpeakerTrainConfig:
    if variant == "w/o label_smoothing":
        return se_cfg.model_copy(update={"alpha": 0.0})
    if variant == "w/o shuffle":
        return se_cfg.model_copy(update={"shuffle": False})
    return se_cfg


def cell_config(base_cfg: VcTrainConfig, spec: AblationSpec, bottleneck: int, variant: str) -> VcTrainConfig:
    """VC training config of one grid cell."""
    data = base_cfg.model_dump()
    data["iterations"] = spec.iterations
    data["model"]["bottleneck"] = bottleneck
    if variant == "w/o mfcc_loss":
        data["weights"]["lambda_mfcc"] = 0.0
    elif variant in ("w/o cycle_loss", BASELINE_VARIANT):
        data["weights"]["lambda_cycle"] = 0.0
        data["weights"]["lambda_mfcc"] = 0.0
    if variant == BASELINE_VARIANT:
        data["model"]["content_norm"] = "batch"
    return VcTrainConfig.model_validate(data)


def _run_cell(
    corpus: CorpusHandle,
    se: SpeakerEncoderNet,
    cfg: VcTrainConfig,
    probe: bool,
    out_dir: Optional[Path],
) -> McdReport:
    net, _ = train_vc_with_encoder(corpus, se, cfg, out_dir)
    report = evaluate_mcd(net, se, corpus)
    if probe:
        report.probe_rate = speaker_probe(net, se, corpus, seed=cfg.seed)
    return report


def _cell_dir_name(bottleneck: int, variant: str) -> str:
    return f"b{bottleneck}_{variant.replace('w/o ', 'no_')}"


def run_ablation(
    corpus: CorpusHandle,
    spec: AblationSpec,
    base_cfg: VcTrainConfig,
    se_cfg: Optional[SpeakerTrainConfig] = None,
    out_dir: Optional[str | Path] = None,
) -> list[AblationCell]:
    """Train and evaluate one model per (bottleneck, variant) cell.

    Every cell shares the seed, so all cells see the same data order.
    Speaker encoders are trained once per distinct encoder variant.
    """
    se_cfg = se_cfg or SpeakerTrainConfig()
    out_path = Path(out_dir) if out_dir is not None else None
    variants = variant_names(spec)

    encoders: dict[tuple[float, bool], SpeakerEncoderNet] = {}
    for variant in variants:
        cfg = _se_variant(variant, se_cfg)
        key = (cfg.alpha, cfg.shuffle)
        if key not in encoders:
            logger.info(f"Training speaker encoder for ablation (alpha={cfg.alpha}, shuffle={cfg.shuffle})")
            encoders[key], _ = train_speaker_encoder(corpus, cfg)

    jobs = []
    for bottleneck in spec.bottleneck_sizes:
        for variant in variants:
            se_key = (_se_variant(variant, se_cfg).alpha, _se_variant(variant, se_cfg).shuffle)
            cell_dir = out_path / _cell_dir_name(bottleneck, variant) if out_path else None
            jobs.append((bottleneck, variant, encoders[se_key], cell_config(base_cfg, spec, bottleneck, variant), cell_dir))

    logger.info(f"Running ablation grid: {len(jobs)} cells, {spec.max_workers} worker(s)")
    if spec.max_workers > 1:
        with ProcessPoolExecutor(max_workers=spec.max_workers) as pool:
            futures = [pool.submit(_run_cell, corpus, se, cfg, spec.probe, cell_dir) for _, _, se, cfg, cell_dir in jobs]
            reports = [future.result() for future in futures]
    else:
        reports = [_run_cell(corpus, se, cfg, spec.probe, cell_dir) for _, _, se, cfg, cell_dir in jobs]

    cells = [AblationCell(bottleneck, variant, report) for (bottleneck, variant, *_), report in zip(jobs, reports)]
    for cell in cells:
        logger.info(f"Cell b={cell.bottleneck} {cell.variant}: avg MCD {cell.report.overall_avg:.4f}")
    return cells


def relative_spread(values: Sequence[float]) -> float:
    """(max - min) / min."""
    low, high = min(values), max(values)
    return (high - low) / low if low > 0 else math.inf


def render_ablation(cells: Sequence[AblationCell]) -> str:
    """Grid with Recon./Conv./Avg. rows per variant and one column per bottleneck."""
    bottlenecks = sorted({c.bottleneck for c in cells})
    variants = list(dict.fromkeys(c.variant for c in cells))
    lookup = {(c.bottleneck, c.variant): c.report for c in cells}

    name_width = max(12, *(len(v) + 2 for v in variants))
    header = "variant".ljust(name_width) + "metric".ljust(8) + "".join(str(b).rjust(10) for b in bottlenecks)
    lines = [header]
    for variant in variants:
        for i, (attr, label) in enumerate((("recon_avg", "Recon."), ("conv_avg", "Conv."), ("overall_avg", "Avg."))):
            row = (variant if i == 0 else "").ljust(name_width) + label.ljust(8)
            for b in bottlenecks:
                report = lookup.get((b, variant))
                row += (f"{getattr(report, attr):.3f}" if report else "-").rjust(10)
            lines.append(row)
        probes = [lookup[(b, variant)].probe_rate for b in bottlenecks if (b, variant) in lookup]
        if any(p is not None for p in probes):
            row = "".ljust(name_width) + "Probe".ljust(8)
            row += "".join((f"{p:.3f}" if p is not None else "-").rjust(10) for p in probes)
            lines.append(row)
    return "\n".join(lines) + "\n"


def write_ablation(cells: Sequence[AblationCell], out_dir: str | Path) -> tuple[Path, Path]:
    """``ablation.csv`` (one row per cell) and ``ablation.txt`` (rendered grid)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "ablation.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["bottleneck", "variant", "recon_avg", "conv_avg", "overall_avg", "probe_rate"])
        for c in cells:
            probe = "" if c.report.probe_rate is None else repr(c.report.probe_rate)
            writer.writerow([c.bottleneck, c.variant, repr(c.report.recon_avg), repr(c.report.conv_avg), repr(c.report.overall_avg), probe])
    text_path = out_dir / "ablation.txt"
    text_path.write_text(render_ablation(cells), encoding="utf-8")
    return csv_path, text_path
