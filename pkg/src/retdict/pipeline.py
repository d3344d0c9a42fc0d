"""Build -> train -> compress, driven by a ``key=value`` config file.

Every phase writes its artifact into ``out_dir`` and is skipped when that
artifact already exists, so an interrupted run resumes where it stopped.
"""

import logging
import os
from dataclasses import dataclass, fields

import numpy as np

from . import io
from .compress import DistillConfig, contrastive_loss, distill, init_student, mean_output_cosine
from .dictionary import EmbeddingSet, KMeansConfig, lloyd, preprocess
from .harness import MetricRecord, TrainConfig, generate_toy_task, train_model
from .layer import rd_transform
from .normalization import Dictionary

logger = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    def __init__(self, phase, cause):
        self.phase = phase
        super().__init__(f"phase '{phase}' failed: {cause}")


@dataclass
class PipelineConfig:
    out_dir: str = "rd_artifacts"
    seed: int = 0
    features: int = 16
    atoms: int = 32
    kernel: int = 3
    height: int = 8
    width: int = 8
    classes: int = 4
    samples_per_class: int = 50
    noise: float = 0.5
    normalize: str = "none"
    kmeans_iters: int = 300
    kmeans_tol: float = 1e-4
    lam: float = 0.8
    train_epochs: int = 50
    train_lr: float = 0.05
    batch_size: int = 16
    freeze_backbone: bool = False
    freeze_retriever: bool = False
    freeze_dict: bool = False
    compress_atoms: int = 0
    compress_epochs: int = 30
    compress_lr: float = 0.003
    compress_batch_size: int = 8
    tau: float = 0.07

    def __post_init__(self):
        if self.compress_atoms == 0:
            self.compress_atoms = max(1, self.atoms // 2)

    @classmethod
    def from_mapping(cls, mapping):
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            key = key.replace("-", "_")
            if key == "lambda":
                key = "lam"
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            typ = types[key]
            if typ is bool:
                kwargs[key] = str(raw).strip().lower() in ("1", "true", "yes", "on")
            else:
                kwargs[key] = typ(raw)
        return cls(**kwargs)


def parse_config(text):
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return PipelineConfig.from_mapping(parse_config(fh.read()))


def toy_task(cfg):
    return generate_toy_task(cfg.seed, cfg.classes, cfg.samples_per_class, cfg.features,
                             cfg.height, cfg.width, cfg.noise)


def pixel_embeddings(X):
    """Every pixel's feature vector of a ``(n, f, H, W)`` stack, one per row."""
    return EmbeddingSet(X.transpose(0, 2, 3, 1).reshape(-1, X.shape[1]), "encoder")


def batched_contrastive_loss(student, teacher, feats, tau, batch_size):
    """Mean contrastive loss of student vs. teacher outputs over fixed batches."""
    losses = []
    for start in range(0, len(feats), batch_size):
        chunk = feats[start:start + batch_size]
        s = np.stack([rd_transform(x, student) for x in chunk])
        t = np.stack([rd_transform(x, teacher) for x in chunk])
        losses.append(contrastive_loss(s, t, tau))
    return float(np.mean(losses))


def compress_model(model, data, val, cfg, records=None):
    """Distill ``model.rd`` into ``cfg.student_atoms`` atoms; returns a new model.

    When ``records`` is given it receives per-epoch metrics: ``loss`` is the
    contrastive loss and ``acc`` the mean student/teacher output cosine.
    """
    teacher = model.rd
    train_feats = [model.encode(x) for x in data.X]
    val_feats = [model.encode(x) for x in val.X]

    def log(epoch, student, loss):
        if records is None:
            return
        if loss is None:
            loss = batched_contrastive_loss(student, teacher, train_feats, cfg.tau, cfg.batch_size)
        val_loss = batched_contrastive_loss(student, teacher, val_feats, cfg.tau, cfg.batch_size)
        records.append(MetricRecord(epoch, "train", loss, mean_output_cosine(student, teacher, train_feats)))
        records.append(MetricRecord(epoch, "val", val_loss, mean_output_cosine(student, teacher, val_feats)))

    initial = init_student(teacher, cfg.student_atoms, cfg.seed)
    log(0, initial, None)
    student = distill(teacher, model.encode, data.X, cfg, student=initial, callback=log)
    out = model.copy()
    out.rd = student
    return out


def run_pipeline(cfg):
    """Run all phases; returns a dict of artifact paths and summary metrics."""
    if isinstance(cfg, (str, os.PathLike)):
        cfg = load_config(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    paths = {name: os.path.join(cfg.out_dir, fname) for name, fname in [
        ("embeddings", "embeddings.rdem"), ("build_log", "build.log"),
        ("dictionary", "dictionary.rddc"),
        ("model", "model.rdmd"), ("train_metrics", "train.metrics"),
        ("compressed", "compressed.rdmd"), ("compress_metrics", "compress.metrics"),
        ("report", "report.txt"),
    ]}
    train, val = toy_task(cfg)
    summary = {}

    phase = "build"
    try:
        if not os.path.exists(paths["dictionary"]):
            # the model starts with an identity encoder, so its features are the raw maps
            emb = pixel_embeddings(train.X)
            io.write_embeddings(paths["embeddings"], emb)
            emb = preprocess(io.read_embeddings(paths["embeddings"]), cfg.normalize)
            result = lloyd(emb.data, KMeansConfig(cfg.atoms, cfg.kmeans_iters, cfg.kmeans_tol, cfg.seed))
            io.atomic_write(paths["build_log"], f"sse={result.sse!r} iters={result.n_iter}\n".encode("ascii"))
            io.write_dictionary(paths["dictionary"], Dictionary(result.centroids))
        dictionary, _ = io.read_dictionary(paths["dictionary"])

        phase = "train"
        if not os.path.exists(paths["model"]):
            tcfg = TrainConfig(cfg.train_epochs, cfg.batch_size, cfg.train_lr, cfg.lam, cfg.seed,
                               cfg.kernel, not cfg.freeze_backbone, not cfg.freeze_retriever,
                               not cfg.freeze_dict)
            model, records = train_model(tcfg, dictionary, train, val)
            io.write_metrics(paths["train_metrics"], records)
            io.write_model(paths["model"], model)
        model = io.read_model(paths["model"])

        phase = "compress"
        if not os.path.exists(paths["compressed"]):
            dcfg = DistillConfig(cfg.compress_atoms, cfg.tau, cfg.compress_epochs,
                                 cfg.compress_lr, cfg.compress_batch_size, cfg.seed)
            records = []
            compressed = compress_model(model, train, val, dcfg, records)
            io.write_metrics(paths["compress_metrics"], records)
            io.write_model(paths["compressed"], compressed)
        compressed = io.read_model(paths["compressed"])

        phase = "report"
        val_feats = [model.encode(x) for x in val.X]
        summary.update(
            atoms=model.rd.n_atoms,
            compressed_atoms=compressed.rd.n_atoms,
            val_acc=float((model.predict(val.X) == val.y).mean()),
            compressed_val_acc=float((compressed.predict(val.X) == val.y).mean()),
            student_teacher_cosine=float(mean_output_cosine(compressed.rd, model.rd, val_feats)),
        )
        report = "".join(f"{k}={v!r}\n" for k, v in summary.items())
        io.atomic_write(paths["report"], report.encode("ascii"))
    except Exception as exc:
        raise PipelineError(phase, exc) from exc
    return {"paths": paths, **summary}
