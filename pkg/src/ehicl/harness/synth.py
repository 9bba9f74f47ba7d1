"""Synthetic corpus: ground-truth hands, coarse corruptions, mock metadata.

Ground-truth draws: pose components N(0, 0.3^2), shape N(0, 1), global
orientation a uniform upper-hemisphere axis with a uniform angle in [0, pi).
Image features are a fixed random linear map of wrist-relative ground-truth
joints (both hands, zero-padded when absent, millimeters/100) plus isotropic
noise, standing in for a visual backbone's features.

The coarse estimate corrupts ground truth with Gaussian noise (doubled for
two-hand samples as an occlusion proxy), occasionally swaps the left/right
parameter vectors (identity confusion), and occasionally clears a detection
flag.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..hand import HandParams, HandRig, forward
from ..retrieval.descriptions import description_sentence
from ..retrieval.involvement import InvolvementClass
from ..retrieval.templates import TemplateDb, TemplateRecord
from ..rng import derive_rng
from ..serial import read_blob, write_blob
from .config import RunConfig
from .errors import DataError

__all__ = [
    "SyntheticSample",
    "Corpus",
    "generate_corpus",
    "corrupt_to_coarse",
    "save_corpus",
    "load_corpus",
    "CORPUS_MAGIC",
]

CORPUS_MAGIC = "EHCRP1"

VERBS = (
    "grasping",
    "holding",
    "touching",
    "lifting",
    "rotating",
    "pressing",
    "opening",
    "wiping",
    "squeezing",
    "pointing at",
)
NOUNS = (
    "cup",
    "phone",
    "book",
    "knife",
    "bottle",
    "pen",
    "bowl",
    "keyboard",
    "apple",
    "box",
    "jar",
    "cloth",
)

_SPLITS = ("train", "val", "test")
_JOINT_BLOCK = 63  # 21 joints x 3, per hand


@dataclass
class SyntheticSample:
    sample_id: str
    split: str
    involvement: InvolvementClass
    gt: dict[str, HandParams]
    coarse: dict[str, HandParams]
    detected: dict[str, bool]
    image_features: np.ndarray
    verb: str
    noun: str
    description: str

    @property
    def image_ref(self) -> str:
        return self.sample_id

    @property
    def sides(self) -> tuple[str, ...]:
        return self.involvement.sides


class Corpus:
    def __init__(self, samples: list[SyntheticSample]):
        self.samples = list(samples)
        self.by_id = {s.sample_id: s for s in self.samples}
        self.by_split = {name: [s for s in self.samples if s.split == name] for name in _SPLITS}

    def split(self, name: str) -> list[SyntheticSample]:
        if name not in self.by_split:
            raise DataError(f"unknown split {name!r}")
        return self.by_split[name]

    def metadata_for_mock(self) -> dict:
        return {
            s.image_ref: {"involvement": int(s.involvement), "verb": s.verb, "noun": s.noun}
            for s in self.samples
        }


def _draw_gt(rng: np.random.Generator, side: str) -> HandParams:
    theta = 0.3 * rng.standard_normal((15, 3))
    beta = rng.standard_normal(10)
    axis = rng.standard_normal(3)
    axis /= max(np.linalg.norm(axis), 1e-12)
    axis[2] = abs(axis[2])  # viewing directions span one hemisphere
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, np.pi)
    return HandParams(theta, beta, axis * angle, side)


def corrupt_to_coarse(
    gt: dict[str, HandParams],
    involvement: InvolvementClass,
    rng: np.random.Generator,
    cfg: RunConfig,
) -> tuple[dict[str, HandParams], dict[str, bool]]:
    """Noisy coarse estimate plus per-hand detection flags."""
    scale = cfg.two_hand_noise_scale if involvement == InvolvementClass.BOTH else 1.0
    coarse: dict[str, HandParams] = {}
    detected: dict[str, bool] = {}
    for side in sorted(gt):
        p = gt[side]
        coarse[side] = HandParams(
            p.theta + cfg.sigma_pose * scale * rng.standard_normal((15, 3)),
            p.beta + cfg.sigma_beta * scale * rng.standard_normal(10),
            p.phi + cfg.sigma_pose * scale * rng.standard_normal(3),
            side,
        )
        detected[side] = True
    if involvement == InvolvementClass.BOTH and rng.uniform() < cfg.p_swap:
        left, right = coarse["left"], coarse["right"]
        coarse["left"] = HandParams(right.theta, right.beta, right.phi, "left")
        coarse["right"] = HandParams(left.theta, left.beta, left.phi, "right")
    for side in sorted(detected):
        if rng.uniform() < cfg.p_miss:
            detected[side] = False
    return coarse, detected


# nominal wrist-relative joint spread; fixes the feature gain so features are
# O(1) while sigma_feat stays an absolute noise floor
_JOINT_SCALE_MM = 25.0


def _feature_map(cfg: RunConfig) -> np.ndarray:
    rng = derive_rng(cfg.seed, "feature-map")
    gain = 1.0 / (np.sqrt(2 * _JOINT_BLOCK) * _JOINT_SCALE_MM)
    return gain * rng.standard_normal((cfg.feat_dim, 2 * _JOINT_BLOCK))


def _image_features(rig, gt, fmap, rng, cfg) -> np.ndarray:
    vec = np.zeros(2 * _JOINT_BLOCK)
    for k, side in enumerate(("left", "right")):
        if side in gt:
            joints = forward(rig, gt[side]).joints
            rel = joints - joints[0]  # millimeters, wrist-relative
            vec[k * _JOINT_BLOCK : (k + 1) * _JOINT_BLOCK] = rel.ravel()
    return fmap @ vec + cfg.sigma_feat * rng.standard_normal(cfg.feat_dim)


def generate_corpus(cfg: RunConfig, rig: HandRig) -> tuple[Corpus, TemplateDb]:
    """Deterministic corpus per config seed, plus the train-split template db."""
    fmap = _feature_map(cfg)
    props = np.asarray(cfg.proportions)
    samples = []
    sizes = {"train": cfg.train_size, "val": cfg.val_size, "test": cfg.test_size}
    for split in _SPLITS:
        rng = derive_rng(cfg.seed, "corpus", split)
        noise_rng = derive_rng(cfg.seed, "coarse", split)
        feat_rng = derive_rng(cfg.seed, "features", split)
        for i in range(sizes[split]):
            involvement = InvolvementClass(int(rng.choice(4, p=props)))
            gt = {side: _draw_gt(rng, side) for side in involvement.sides}
            coarse, detected = corrupt_to_coarse(gt, involvement, noise_rng, cfg)
            verb = VERBS[int(rng.integers(len(VERBS)))]
            noun = NOUNS[int(rng.integers(len(NOUNS)))]
            samples.append(
                SyntheticSample(
                    sample_id=f"{split}-{i:05d}",
                    split=split,
                    involvement=involvement,
                    gt=gt,
                    coarse=coarse,
                    detected=detected,
                    image_features=_image_features(rig, gt, fmap, feat_rng, cfg),
                    verb=verb,
                    noun=noun,
                    description=description_sentence(involvement, verb, noun),
                )
            )
    corpus = Corpus(samples)
    db = TemplateDb(
        [
            TemplateRecord(
                record_id=s.sample_id,
                involvement=s.involvement,
                description=s.description,
                coarse=s.coarse,
                gt=s.gt,
                image_features=s.image_features,
                validated=False,
            )
            for s in corpus.split("train")
        ]
    )
    return corpus, db


# ------------------------------------------------------------- persistence


def save_corpus(corpus: Corpus, dirpath) -> None:
    root = Path(dirpath)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    gt_rows, coarse_rows, feats = [], [], []
    hand_cursor = 0
    for s in corpus.samples:
        sides = sorted(s.gt)
        entries.append(
            {
                "id": s.sample_id,
                "split": s.split,
                "involvement": int(s.involvement),
                "verb": s.verb,
                "noun": s.noun,
                "description": s.description,
                "sides": sides,
                "detected": [bool(s.detected[x]) for x in sides],
                "hand_offset": hand_cursor,
                "feature_row": len(feats),
            }
        )
        for side in sides:
            gt_rows.append(s.gt[side].to_vector())
            coarse_rows.append(s.coarse[side].to_vector())
        hand_cursor += len(sides)
        feats.append(s.image_features)
    (root / "samples.json").write_text(
        json.dumps({"version": 1, "samples": entries}, sort_keys=True) + "\n", encoding="utf-8"
    )
    write_blob(
        root / "params.bin",
        CORPUS_MAGIC,
        {"n_samples": len(corpus.samples)},
        {
            "gt": np.asarray(gt_rows).reshape(-1, 58),
            "coarse": np.asarray(coarse_rows).reshape(-1, 58),
            "features": np.asarray(feats),
        },
    )


def load_corpus(dirpath) -> Corpus:
    root = Path(dirpath)
    manifest_path = root / "samples.json"
    if not manifest_path.exists():
        raise DataError(f"no corpus at {root}: run gen-data first")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    _, arrays = read_blob(root / "params.bin", CORPUS_MAGIC)
    samples = []
    for e in manifest["samples"]:
        sides = list(e["sides"])
        gt, coarse, detected = {}, {}, {}
        for k, side in enumerate(sides):
            row = e["hand_offset"] + k
            gt[side] = HandParams.from_vector(arrays["gt"][row], side)
            coarse[side] = HandParams.from_vector(arrays["coarse"][row], side)
            detected[side] = bool(e["detected"][k])
        samples.append(
            SyntheticSample(
                sample_id=e["id"],
                split=e["split"],
                involvement=InvolvementClass(e["involvement"]),
                gt=gt,
                coarse=coarse,
                detected=detected,
                image_features=arrays["features"][e["feature_row"]],
                verb=e["verb"],
                noun=e["noun"],
                description=e["description"],
            )
        )
    return Corpus(samples)
