"""Task-sequence training: adaptation, memory building, distillation phases.

A run walks the task sequence in order.  Every task starts with a plain
classification phase on the new data (the classifier grows first).  In
"distill" mode the model then selects exemplars, refreshes prototypes,
optionally augments the data, draws pseudo samples around the prototypes, and
runs two distillation phases against the frozen previous-task model: one over
the (augmented) current data, one over the (augmented) memory.  The
"finetune" baseline stops after the classification phase; the "joint"
baseline retrains a fresh model on the union of everything seen so far.

Randomness is split into five independent streams (parameter init, data
shuffling, pseudo-sample noise, dropout, exemplar clustering) so that
structurally unrelated draws never shift each other between run variants.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .augment import augment
from .data import Sample, Task, TaskSequence
from .encoder import EncoderConfig, Model, ModelSnapshot
from .errors import ConfigError, TrainingError, ValidationError
from .evaluation import (AccuracyMatrix, average_accuracy, bwt,
                         dump_representations, strict_accuracy,
                         write_accuracy_csv, write_summary_json)
from .losses import (LossWeights, classification_loss, distillation_triplet_loss,
                     feature_distill_loss, final_loss, hidden_contrastive_loss,
                     mine_triplets_batch, prediction_distill_loss,
                     representation_distill_loss, total_distillation_loss)
from .memory import (MemoryStore, PseudoSample, compute_deviation,
                     compute_prototype, generate_pseudo, select_typical)
from .optim import Adam

MODES = ("distill", "finetune", "joint")
LOSS_COLUMNS = ("step", "phase", "csf", "fd", "rd", "dtr", "pd", "total")


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs besides the data; defaults are the paper-scale
    training settings with a desk-scale encoder."""

    mode: str = "distill"
    seed: int = 0
    epochs_adapt: int = 20
    epochs_sckd: int = 10
    batch_size: int = 16
    grad_accum: int = 4
    eval_batch: int = 64
    lr_encoder: float = 1e-5
    lr_projection: float = 1e-5
    lr_classifier: float = 1e-3
    memory_size: int = 1
    pseudo_count: int = 10
    tau: float = 0.95
    augment_enabled: bool = True
    augment_cap: int = 2
    weights: LossWeights = field(default_factory=LossWeights)
    model_dim: int = 64
    hidden_dim: int = 64
    n_heads: int = 4
    ff_dim: int = 256
    dropout: float = 0.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        for name in ("epochs_adapt", "epochs_sckd"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("batch_size", "grad_accum", "eval_batch", "memory_size",
                     "pseudo_count", "augment_cap"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        for name in ("lr_encoder", "lr_projection", "lr_classifier"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must be in (0, 1], got {self.tau}")

    def group_lrs(self) -> dict[str, float]:
        return {"encoder": self.lr_encoder, "projection": self.lr_projection,
                "classifier": self.lr_classifier}


class TrainerState:
    """Mutable run state: model, optimizer, frozen teacher, memory, RNGs."""

    def __init__(self, config: RunConfig, vocab_size: int):
        self.config = config
        streams = np.random.SeedSequence(config.seed).spawn(5)
        self.rng_init = np.random.default_rng(streams[0])
        self.rng_data = np.random.default_rng(streams[1])
        self.rng_noise = np.random.default_rng(streams[2])
        self.rng_dropout = np.random.default_rng(streams[3])
        self.rng_cluster = np.random.default_rng(streams[4])
        self.encoder_config = EncoderConfig(
            vocab_size=vocab_size, model_dim=config.model_dim,
            hidden_dim=config.hidden_dim, n_heads=config.n_heads,
            ff_dim=config.ff_dim, dropout=config.dropout)
        self.model = Model(self.encoder_config, self.rng_init)
        self.optimizer = Adam(self.model, config.group_lrs())
        self.teacher: ModelSnapshot | None = None
        self.memory = MemoryStore()
        self.task_count = 0

    def reset_model(self) -> None:
        """Fresh parameters and optimizer (joint baseline re-initialization)."""
        self.model = Model(self.encoder_config, self.rng_init)
        self.optimizer = Adam(self.model, self.config.group_lrs())


def _step_groups(n: int, batch_size: int, grad_accum: int,
                 rng: np.random.Generator) -> list[list[np.ndarray]]:
    """One epoch's worth of optimizer steps: a shuffled order chopped into
    micro-batches, grouped grad_accum at a time (last group may be short)."""
    order = rng.permutation(n)
    micro = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    return [micro[i:i + grad_accum] for i in range(0, len(micro), grad_accum)]


def _labels(model: Model, batch: list[Sample]) -> np.ndarray:
    return np.array([model.relation_index(s.relation) for s in batch])


def _loss_row(phase: str, **parts) -> dict:
    row = {"phase": phase, "csf": 0.0, "fd": 0.0, "rd": 0.0,
           "dtr": 0.0, "pd": 0.0, "total": 0.0}
    row.update(parts)
    return row


def csf_phase(state: TrainerState, samples: list[Sample], epochs: int,
              phase: str = "adapt") -> list[dict]:
    """Plain cross-entropy training over full-width labels; gradients are
    summed across the micro-batches of a group before each Adam step."""
    if not samples:
        raise ValidationError("cannot train on an empty sample list")
    cfg = state.config
    model, opt = state.model, state.optimizer
    rows = []
    for _ in range(epochs):
        for group in _step_groups(len(samples), cfg.batch_size,
                                  cfg.grad_accum, state.rng_data):
            opt.zero_grad()
            vals = []
            for idx in group:
                batch = [samples[i] for i in idx]
                _, _, logits = model.forward(batch, train_mode=True,
                                             rng=state.rng_dropout)
                loss = classification_loss(logits, _labels(model, batch))
                loss.backward()
                vals.append(float(loss.data))
            opt.step()
            mean = sum(vals) / len(vals)
            rows.append(_loss_row(phase, csf=mean, total=mean))
    return rows


def adapt_on_new_task(state: TrainerState, task: Task) -> list[dict]:
    """Grow the classifier for the task's relations, then train on its data
    with the classification loss only."""
    if not task.train:
        raise ValidationError(f"task {task.index} has no training samples")
    state.model.extend_classifier(list(task.relations), state.rng_init)
    return csf_phase(state, list(task.train), state.config.epochs_adapt)


def _eval_hiddens(model: Model, samples: list[Sample], batch_size: int) -> np.ndarray:
    chunks = []
    for start in range(0, len(samples), batch_size):
        _, hidden, _ = model.forward(samples[start:start + batch_size],
                                     train_mode=False)
        chunks.append(hidden.data)
    return np.concatenate(chunks, axis=0)


def build_memory_and_prototypes(state: TrainerState, task: Task) -> None:
    """Select exemplars for the task's relations, record their deviation
    statistics, and refresh every stored prototype with the current model."""
    cfg = state.config
    model, memory = state.model, state.memory
    for relation in task.relations:
        samples = task.train_by_relation(relation)
        if not samples:
            raise ValidationError(f"relation {relation!r} has no training samples")
        hiddens = _eval_hiddens(model, samples, cfg.eval_batch)
        ids = select_typical(samples, hiddens, cfg.memory_size, state.rng_cluster)
        by_id = {s.id: s for s in samples}
        memory.add_relation(relation, task.index, [by_id[i] for i in ids],
                            compute_deviation(hiddens))
    for relation in memory.relations():
        hiddens = _eval_hiddens(model, memory.exemplar_samples(relation),
                                cfg.eval_batch)
        memory.set_prototype(relation, compute_prototype(hiddens))


def generate_task_pseudo(state: TrainerState) -> list[PseudoSample]:
    """Fresh pseudo samples around every stored prototype, in the order the
    relations were first observed."""
    out: list[PseudoSample] = []
    for relation in state.memory.relations():
        st = state.memory.stats[relation]
        if st.prototype is None:
            raise TrainingError(f"relation {relation!r} has no prototype")
        out.extend(generate_pseudo(st.prototype, st.deviation, relation,
                                   state.config.pseudo_count, state.rng_noise))
    return out


def sckd_phase(state: TrainerState, data: list[Sample],
               pseudo: list[PseudoSample], phase: str) -> list[dict]:
    """Distillation training against the frozen previous-task model.

    Teacher outputs are computed once per phase (the teacher never moves);
    triplet targets are mined per batch from the pseudo samples plus the
    teacher representations of the batch itself.  Every loss term is always
    built so that zeroed weights stay on the exact same compute path.
    """
    if state.teacher is None:
        raise TrainingError("distillation phase requires a previous-task model")
    if not data:
        raise ValidationError("cannot train on an empty sample list")
    cfg = state.config
    w = cfg.weights
    model, opt, teacher = state.model, state.optimizer, state.teacher

    feat_prev, hid_prev, logit_prev = [], [], []
    for start in range(0, len(data), cfg.eval_batch):
        f, h, lg = teacher.forward(data[start:start + cfg.eval_batch])
        feat_prev.append(f.data)
        hid_prev.append(h.data)
        logit_prev.append(lg.data)
    feat_prev = np.concatenate(feat_prev, axis=0)
    hid_prev = np.concatenate(hid_prev, axis=0)
    logit_prev = np.concatenate(logit_prev, axis=0)
    row_of = {s.id: k for k, s in enumerate(data)}

    if pseudo:
        pool_base = np.stack([p.vector for p in pseudo])
    else:
        pool_base = np.zeros((0, hid_prev.shape[1]))
    pool_base_relations = [p.relation for p in pseudo]

    rows = []
    for _ in range(cfg.epochs_sckd):
        for group in _step_groups(len(data), cfg.batch_size, cfg.grad_accum,
                                  state.rng_data):
            opt.zero_grad()
            vals = np.zeros(6)
            for idx in group:
                batch = [data[i] for i in idx]
                take = np.array([row_of[s.id] for s in batch])
                relations = [s.relation for s in batch]
                f_cur, h_cur, logits_cur = model.forward(
                    batch, train_mode=True, rng=state.rng_dropout)
                csf = classification_loss(logits_cur, _labels(model, batch))
                fd = feature_distill_loss(feat_prev[take], f_cur)
                rd = representation_distill_loss(hid_prev[take], h_cur)
                pool = np.concatenate([pool_base, hid_prev[take]], axis=0)
                pool_relations = pool_base_relations + relations
                targets = mine_triplets_batch(hid_prev[take], relations,
                                              pool, pool_relations)
                dtr = distillation_triplet_loss(h_cur, targets)
                hcd = hidden_contrastive_loss(rd, dtr, w)
                pd = prediction_distill_loss(logit_prev[take], logits_cur,
                                             w.temperature)
                dst = total_distillation_loss(fd, hcd, pd, w)
                loss = final_loss(csf, dst, w)
                loss.backward()
                vals += [float(csf.data), float(fd.data), float(rd.data),
                         float(dtr.data), float(pd.data), float(loss.data)]
            opt.step()
            vals /= len(group)
            rows.append(_loss_row(phase, csf=vals[0], fd=vals[1], rd=vals[2],
                                  dtr=vals[3], pd=vals[4], total=vals[5]))
    return rows


def train_task(state: TrainerState, task: Task) -> list[dict]:
    """Run the full per-task procedure: adapt, build memory, and (from the
    second task on) augment, draw pseudo samples, and distill over the
    current data and then the memory.  Snapshots the result as the next
    task's teacher."""
    if task.index != state.task_count + 1:
        raise TrainingError(
            f"task {task.index} out of order, expected {state.task_count + 1}")
    if task.index >= 2 and state.teacher is None:
        raise TrainingError("no teacher snapshot from the previous task")
    rows = adapt_on_new_task(state, task)
    build_memory_and_prototypes(state, task)
    if task.index >= 2:
        if state.config.augment_enabled:
            data_star, memory_star = augment(
                list(task.train), state.memory.all_samples(), state.model,
                state.config.tau, cap=state.config.augment_cap)
        else:
            data_star = list(task.train)
            memory_star = state.memory.all_samples()
        pseudo = generate_task_pseudo(state)
        rows += sckd_phase(state, data_star, pseudo, "current")
        rows += sckd_phase(state, memory_star, pseudo, "replay")
    state.teacher = state.model.snapshot()
    state.task_count = task.index
    return rows


def finetune_task(state: TrainerState, task: Task) -> list[dict]:
    """Baseline: adapt on the new task only, inheriting parameters."""
    if task.index != state.task_count + 1:
        raise TrainingError(
            f"task {task.index} out of order, expected {state.task_count + 1}")
    rows = adapt_on_new_task(state, task)
    state.task_count = task.index
    return rows


def joint_task(state: TrainerState, tasks: list[Task]) -> list[dict]:
    """Baseline: re-initialize and train on the union of all data seen so
    far.  The first task reuses the state's initial model so a single-task
    joint run is exactly a single-task finetune run."""
    task = tasks[-1]
    if task.index != state.task_count + 1:
        raise TrainingError(
            f"task {task.index} out of order, expected {state.task_count + 1}")
    if task.index > 1:
        state.reset_model()
    for t in tasks:
        state.model.extend_classifier(list(t.relations), state.rng_init)
    union = [s for t in tasks for s in t.train]
    rows = csf_phase(state, union, state.config.epochs_adapt)
    state.task_count = task.index
    return rows


def _write_loss_trace(rows: list[dict], path: Path) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOSS_COLUMNS)
        for step, row in enumerate(rows, start=1):
            writer.writerow([step, row["phase"]]
                            + [f"{row[c]:.17g}" for c in LOSS_COLUMNS[2:]])


def _flush_manifest(manifest: dict, path: Path) -> None:
    path.write_text(json.dumps(manifest, indent=2) + "\n")


def run_experiment(config: RunConfig, sequence: TaskSequence,
                   out_dir=None, dump_reps: bool = False,
                   manifest_extra: dict | None = None
                   ) -> tuple[AccuracyMatrix, dict]:
    """Train over the whole sequence, evaluating strictly after each task.

    When `out_dir` is given, artifacts are flushed after every task so a
    crashed run still leaves a usable partial record: the accuracy matrix,
    the summary, per-task loss traces, the memory dump (distill mode), and a
    manifest echoing the full configuration.
    """
    state = TrainerState(config, sequence.vocab_size)
    n_tasks = len(sequence.tasks)
    matrix = AccuracyMatrix(n_tasks)
    out = Path(out_dir) if out_dir is not None else None
    manifest = {
        "config": asdict(config),
        "n_tasks": n_tasks,
        "n_ways": sequence.n_ways,
        "k_shots": sequence.k_shots,
        "vocab_size": sequence.vocab_size,
        "completed_tasks": 0,
        "task_seconds": [],
    }
    if manifest_extra:
        manifest.update(manifest_extra)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _flush_manifest(manifest, out / "manifest.json")

    started = time.perf_counter()
    tasks_so_far: list[Task] = []
    for task in sequence.tasks:
        tasks_so_far.append(task)
        t0 = time.perf_counter()
        if config.mode == "distill":
            rows = train_task(state, task)
        elif config.mode == "finetune":
            rows = finetune_task(state, task)
        else:
            rows = joint_task(state, tasks_so_far)
        manifest["task_seconds"].append(time.perf_counter() - t0)
        observed = set(state.model.relations)
        for i, past in enumerate(tasks_so_far, start=1):
            matrix.record(task.index, i,
                          strict_accuracy(state.model, list(past.test),
                                          observed, config.eval_batch))
        manifest["completed_tasks"] = task.index
        if out is not None:
            _write_loss_trace(rows, out / f"loss_trace_task{task.index}.csv")
            write_accuracy_csv(matrix, out / "acc_matrix.csv")
            write_summary_json(matrix, out / "summary.json",
                               extra={"mode": config.mode, "seed": config.seed})
            if config.mode == "distill":
                state.memory.dump_csv(out / "memory.csv")
            _flush_manifest(manifest, out / "manifest.json")

    summary = {
        "mode": config.mode,
        "seed": config.seed,
        "n_tasks": n_tasks,
        "average_accuracy": [average_accuracy(matrix, j)
                             for j in range(1, n_tasks + 1)],
        "final_accuracy": average_accuracy(matrix, n_tasks),
        "bwt": bwt(matrix),
    }
    manifest["wall_seconds"] = time.perf_counter() - started
    manifest["final_accuracy"] = summary["final_accuracy"]
    manifest["bwt"] = summary["bwt"]
    if out is not None:
        if dump_reps:
            everything = [s for t in sequence.tasks for s in t.test]
            dump_representations(state.model, everything, out / "reps.csv",
                                 config.eval_batch)
        _flush_manifest(manifest, out / "manifest.json")
    return matrix, summary
