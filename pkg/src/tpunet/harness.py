"""Training loop, evaluation, and the five-variant ablation runner.

Every number a run reports is a deterministic function of (seed,
config, dataset): parameter init, batch order, and evaluation are all
driven by seeded generators, and wall-clock time is kept out of the
canonical report JSON so two identical runs serialize identically.
"""

import csv
import hashlib
import json
import os
import statistics
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import align, model, objectives, optim
from . import tensor as T
from .align import AlignmentBatch
from .model import ModelDims, VARIANTS
from .prompt import PromptSpec, Vocabulary, build_vocabulary, default_corpus, render_prompt, tokenize
from .synthdata import Dataset, load_dataset
from .tensor import Tensor

_INIT_TAG = 11
_SHUFFLE_TAG = 22


class HarnessError(ValueError):
    pass


@dataclass
class RunConfig:
    data_dir: str = ""
    variant: str = "full"
    steps: int = 1000
    batch_size: int = 8
    lr0: float = 3e-5
    weight_decay: float = 1e-6
    tau: float = 0.1
    lam: float = 0.5
    beta: float = 0.1
    align_warmup_steps: int = 0
    seed: int = 0
    D: int = 16
    d: int = 32
    L: int = 18
    channels: Tuple[int, int] = (16, 32)
    bottleneck: int = 64
    num_classes: int = 3
    eval_every: int = 100

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise HarnessError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.lr0 <= 0:
            raise HarnessError(f"lr0 must be positive, got {self.lr0}")
        self.channels = tuple(self.channels)

    def dims(self) -> ModelDims:
        return ModelDims(D=self.D, d=self.d, L=self.L, channels=self.channels,
                         bottleneck=self.bottleneck, num_classes=self.num_classes)

    def to_flat_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_flat_dict(cls, payload: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise HarnessError(f"unknown config keys: {sorted(unknown)}")
        return cls(**payload)

    def hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_flat_dict(), sort_keys=True).encode()).hexdigest()


@dataclass
class MetricsReport:
    split: str
    variant: str
    seed: int
    per_class_dice: List[float]
    per_class_jaccard: List[float]
    mean_dice: float
    mean_jaccard: float
    n_samples: int
    config_hash: str
    loss_curve: Optional[List[float]] = None
    wall_clock_s: float = 0.0

    def canonical_dict(self) -> dict:
        """Everything except wall-clock, which varies between reruns."""
        d = asdict(self)
        d.pop("wall_clock_s")
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.canonical_dict(), sort_keys=True)


def organ_phrase(dataset: Dataset) -> str:
    """Prompt organ slot: the physician names the scanned region, not the
    per-slice labels, so multi-organ datasets use a region phrase."""
    organs = dataset.manifest["organs"]
    return "abdomen" if len(organs) > 1 else organs[0]["name"]


def build_vocab(dataset: Dataset) -> Vocabulary:
    return build_vocabulary(default_corpus([organ_phrase(dataset)]))


def encode_prompts(dataset: Dataset, split: str, vocab: Vocabulary, L: int,
                   include_time: bool) -> np.ndarray:
    """Token id matrix [n, L] for every record of the split, in order."""
    phrase = organ_phrase(dataset)
    cache: Dict[tuple, tuple] = {}
    rows = []
    for rec in dataset.split(split).records:
        key = (rec["modality"], rec["i"], rec["N"], include_time)
        if key not in cache:
            text = render_prompt(PromptSpec(rec["modality"], phrase, rec["i"], rec["N"],
                                            include_time))
            cache[key] = tokenize(text, vocab, L).ids
        rows.append(cache[key])
    return np.asarray(rows, dtype=np.int64)


def _uses_text(variant: str) -> bool:
    return variant != "no_temporal_prompt"


def _uses_contrastive(variant: str) -> bool:
    return variant in ("full", "no_temporal_info")


def _include_time(variant: str) -> bool:
    return variant != "no_temporal_info"


def evaluate(params: Dict[str, Tensor], dataset: Dataset, split: str,
             config: RunConfig, vocab: Vocabulary,
             loss_curve: Optional[List[float]] = None,
             eval_batch: int = 16) -> MetricsReport:
    """Per-class Dice/Jaccard at 0.5 binarization over a whole split."""
    data = dataset.split(split)
    K = data.masks.shape[1]
    if K != config.num_classes:
        raise HarnessError(f"dataset has {K} mask channels, config expects {config.num_classes}")
    ids = (encode_prompts(dataset, split, vocab, config.L, _include_time(config.variant))
           if _uses_text(config.variant) else None)
    t0 = time.perf_counter()
    n = data.images.shape[0]
    dice_rows, jacc_rows = [], []
    with T.no_grad():
        for lo in range(0, n, eval_batch):
            hi = min(lo + eval_batch, n)
            out = model.forward(params, data.images[lo:hi],
                                None if ids is None else ids[lo:hi],
                                config.variant, config.dims())
            probs = T.sigmoid(out.logits).data
            pred = objectives.binarize(probs)
            for b in range(hi - lo):
                dice_rows.append([objectives.dice(pred[b, k], data.masks[lo + b, k])
                                  for k in range(K)])
                jacc_rows.append([objectives.jaccard(pred[b, k], data.masks[lo + b, k])
                                  for k in range(K)])
    per_dice = np.asarray(dice_rows).mean(axis=0)
    per_jacc = np.asarray(jacc_rows).mean(axis=0)
    return MetricsReport(
        split=split, variant=config.variant, seed=config.seed,
        per_class_dice=[float(x) for x in per_dice],
        per_class_jaccard=[float(x) for x in per_jacc],
        mean_dice=float(per_dice.mean()), mean_jaccard=float(per_jacc.mean()),
        n_samples=n, config_hash=config.hash(), loss_curve=loss_curve,
        wall_clock_s=time.perf_counter() - t0)


def predict(params: Dict[str, Tensor], dataset: Dataset, split: str,
            config: RunConfig, vocab: Vocabulary, indices: List[int]) -> np.ndarray:
    """Sigmoid probability maps [len(indices), K, H, W] for chosen samples."""
    data = dataset.split(split)
    ids = (encode_prompts(dataset, split, vocab, config.L, _include_time(config.variant))
           if _uses_text(config.variant) else None)
    take = list(indices)
    with T.no_grad():
        out = model.forward(params, data.images[take],
                            None if ids is None else ids[take],
                            config.variant, config.dims())
        return T.sigmoid(out.logits).data


@dataclass
class TrainResult:
    params: Dict[str, Tensor]      # holds the best-validation weights
    vocab: Vocabulary
    config: RunConfig
    best_val: MetricsReport
    loss_curve: List[float]
    lr_curve: List[float] = field(default_factory=list)
    best_step: int = -1
    wall_clock_s: float = 0.0


def train(config: RunConfig, dataset: Optional[Dataset] = None,
          out_dir: Optional[str] = None, log=None) -> TrainResult:
    t_start = time.perf_counter()
    if dataset is None:
        dataset = load_dataset(config.data_dir)
    train_data = dataset.split("train")
    K = train_data.masks.shape[1]
    if K != config.num_classes:
        raise HarnessError(f"dataset has {K} mask channels, config expects {config.num_classes}")

    vocab = build_vocab(dataset)
    dims = config.dims()
    use_text = _uses_text(config.variant)
    use_con = _uses_contrastive(config.variant) and (config.beta > 0
                                                     or config.align_warmup_steps > 0)
    ids = (encode_prompts(dataset, "train", vocab, config.L, _include_time(config.variant))
           if use_text else None)

    init_rng = np.random.default_rng(np.random.SeedSequence((config.seed, _INIT_TAG)))
    params = model.params_for_variant(
        model.make_params(init_rng, len(vocab), dims), config.variant)
    state = optim.AdamState(params)
    # batch order depends only on the seed, so every variant sees the same data
    shuffle_rng = np.random.default_rng(np.random.SeedSequence((config.seed, _SHUFFLE_TAG)))

    n = train_data.images.shape[0]
    if n < config.batch_size:
        raise HarnessError(f"batch size {config.batch_size} exceeds train split size {n}")
    order: List[int] = []
    loss_curve, lr_curve = [], []
    best_dice = -1.0
    best_step = -1
    best_snapshot = None

    for step in range(config.steps):
        if len(order) < config.batch_size:
            order = list(shuffle_rng.permutation(n))
        take = [order.pop() for _ in range(config.batch_size)]
        images = train_data.images[take]
        targets = train_data.masks[take]
        batch_ids = ids[take] if use_text else None

        T.reset_tape()
        out = model.forward(params, images, batch_ids, config.variant, dims,
                            want_alignment=use_con)
        probs = T.sigmoid(out.logits)
        seg = objectives.seg_loss(probs, targets)
        if use_con:
            closs = align.contrastive_loss(AlignmentBatch(
                out.pooled_image, out.pooled_text, tau=config.tau, lam=config.lam))
            if step < config.align_warmup_steps:
                loss = closs
            else:
                loss = seg + closs * config.beta
        else:
            loss = seg
        T.backward(loss)
        lr = optim.cosine_lr(step, config.steps, config.lr0)
        optim.adam_step(params, state, lr, config.weight_decay)
        for p in params.values():
            p.grad = None
        loss_curve.append(loss.item())
        lr_curve.append(lr)

        if (step + 1) % config.eval_every == 0 or step == config.steps - 1:
            report = evaluate(params, dataset, "val", config, vocab)
            if log:
                log(f"step {step + 1}/{config.steps} loss {loss_curve[-1]:.4f} "
                    f"val mDice {report.mean_dice:.4f}")
            if report.mean_dice > best_dice:
                best_dice = report.mean_dice
                best_step = step + 1
                best_snapshot = {k: p.data.copy() for k, p in params.items()}

    if best_snapshot is None:  # steps < eval_every with no final eval hit
        best_snapshot = {k: p.data.copy() for k, p in params.items()}
        best_step = config.steps
    for k, p in params.items():
        p.data = best_snapshot[k].copy()
    best_val = evaluate(params, dataset, "val", config, vocab, loss_curve=loss_curve)
    result = TrainResult(params=params, vocab=vocab, config=config, best_val=best_val,
                         loss_curve=loss_curve, lr_curve=lr_curve, best_step=best_step,
                         wall_clock_s=time.perf_counter() - t_start)
    if out_dir:
        save_run(out_dir, result)
    return result


def save_run(out_dir: str, result: TrainResult):
    from . import checkpoint

    os.makedirs(out_dir, exist_ok=True)
    checkpoint.save_tensors(os.path.join(out_dir, "best.ckpt"), result.params)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(result.config.to_flat_dict(), fh, indent=1, sort_keys=True)
    with open(os.path.join(out_dir, "vocab.json"), "w") as fh:
        fh.write(result.vocab.to_json())
    with open(os.path.join(out_dir, "metrics.json"), "w") as fh:
        fh.write(result.best_val.canonical_json())
    with open(os.path.join(out_dir, "loss_curve.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "lr"])
        for i, (l, lr) in enumerate(zip(result.loss_curve, result.lr_curve)):
            writer.writerow([i, repr(l), repr(lr)])


def load_run(run_dir: str) -> Tuple[Dict[str, Tensor], RunConfig, Vocabulary]:
    from . import checkpoint

    with open(os.path.join(run_dir, "config.json")) as fh:
        config = RunConfig.from_flat_dict(json.load(fh))
    with open(os.path.join(run_dir, "vocab.json")) as fh:
        vocab = Vocabulary.from_json(fh.read())
    arrays = checkpoint.load_tensors(os.path.join(run_dir, "best.ckpt"))
    params = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
    return params, config, vocab


@dataclass
class AblationResult:
    table: Dict[str, dict]            # variant -> median metrics
    runs: List[MetricsReport]         # every (variant, seed) test report
    seeds: List[int]
    wall_clock_s: float = 0.0


def run_ablation(base_config: RunConfig, seeds: List[int],
                 dataset: Optional[Dataset] = None,
                 out_csv: Optional[str] = None, log=None,
                 on_run=None) -> AblationResult:
    """Train all five variants per seed on identical data and batch order,
    then report per-variant medians over seeds.

    on_run(config, train_result, report), if given, fires after each run;
    it is the only way to reach the trained parameters, which are not kept.
    """
    t0 = time.perf_counter()
    if dataset is None:
        dataset = load_dataset(base_config.data_dir)
    runs: List[MetricsReport] = []
    per_variant: Dict[str, List[MetricsReport]] = {v: [] for v in VARIANTS}
    for seed in seeds:
        for variant in VARIANTS:
            config = replace(base_config, variant=variant, seed=seed)
            if log:
                log(f"training {variant} seed {seed}")
            result = train(config, dataset=dataset, log=log)
            report = evaluate(result.params, dataset, "test", config, result.vocab,
                              loss_curve=result.loss_curve)
            report.wall_clock_s = result.wall_clock_s
            runs.append(report)
            per_variant[variant].append(report)
            if on_run is not None:
                on_run(config, result, report)

    K = base_config.num_classes
    table = {}
    for variant in VARIANTS:
        reps = per_variant[variant]
        table[variant] = {
            "mean_dice": statistics.median(r.mean_dice for r in reps),
            "mean_jaccard": statistics.median(r.mean_jaccard for r in reps),
            "per_class_dice": [statistics.median(r.per_class_dice[k] for r in reps)
                               for k in range(K)],
            "per_class_jaccard": [statistics.median(r.per_class_jaccard[k] for r in reps)
                                  for k in range(K)],
        }
    result = AblationResult(table=table, runs=runs, seeds=list(seeds),
                            wall_clock_s=time.perf_counter() - t0)
    if out_csv:
        write_ablation_csv(out_csv, result, base_config)
    return result


def write_ablation_csv(path: str, result: AblationResult, base_config: RunConfig):
    """Median table at ``path`` plus a long per-run file next to it."""
    K = base_config.num_classes
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant"]
                        + [f"dice_class{k}" for k in range(K)] + ["dice_mean"]
                        + [f"jaccard_class{k}" for k in range(K)] + ["jaccard_mean"])
        for variant in VARIANTS:
            row = result.table[variant]
            writer.writerow([variant]
                            + [f"{x:.6f}" for x in row["per_class_dice"]]
                            + [f"{row['mean_dice']:.6f}"]
                            + [f"{x:.6f}" for x in row["per_class_jaccard"]]
                            + [f"{row['mean_jaccard']:.6f}"])
    root, ext = os.path.splitext(path)
    with open(f"{root}_runs{ext or '.csv'}", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run_id", "variant", "class", "dice", "jaccard", "seed"])
        for rep in result.runs:
            run_id = f"{rep.config_hash[:8]}-{rep.variant}-s{rep.seed}"
            for k in range(len(rep.per_class_dice)):
                writer.writerow([run_id, rep.variant, k,
                                 f"{rep.per_class_dice[k]:.6f}",
                                 f"{rep.per_class_jaccard[k]:.6f}", rep.seed])
            writer.writerow([run_id, rep.variant, "mean",
                             f"{rep.mean_dice:.6f}", f"{rep.mean_jaccard:.6f}", rep.seed])
