"""Window-level predictions, majority voting per video, and accuracy reports."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyVideo
from .traj import FAKE, REAL

FAKE_VOTE, ABSTAIN, REAL_VOTE = 1, 0, -1


@dataclass
class VideoVerdict:
    video_id: str
    probs: list
    votes: list  # +1 fake, -1 real, 0 abstain (prob exactly at the threshold)
    label: int
    n_fake: int
    n_real: int


def majority_vote(probs, threshold=0.5, video_id="", tie_label=FAKE) -> VideoVerdict:
    """Video label by majority of window votes.

    A window votes fake when its probability exceeds ``threshold`` and real
    when it falls below; a probability exactly at the threshold abstains.
    Equal counts (including no votes at all) resolve to ``tie_label``.
    """
    probs = [float(p) for p in np.asarray(probs, dtype=np.float64).ravel()]
    if not probs:
        raise EmptyVideo(f"video {video_id!r} has no samples")
    votes = [FAKE_VOTE if p > threshold else REAL_VOTE if p < threshold else ABSTAIN for p in probs]
    n_fake = votes.count(FAKE_VOTE)
    n_real = votes.count(REAL_VOTE)
    label = FAKE if n_fake > n_real else REAL if n_real > n_fake else tie_label
    return VideoVerdict(video_id, probs, votes, label, n_fake, n_real)


def group_by_video(video_ids) -> dict:
    """``{video_id: [sample indices]}`` in first-appearance order."""
    groups = {}
    for i, v in enumerate(video_ids):
        groups.setdefault(v, []).append(i)
    return groups


def confusion(truth, pred) -> list:
    """2x2 counts ``[[real->real, real->fake], [fake->real, fake->fake]]``."""
    m = [[0, 0], [0, 0]]
    for t, p in zip(truth, pred):
        m[int(t)][int(p)] += 1
    return m


@dataclass
class EvalReport:
    threshold: float
    n_samples: int
    n_videos: int
    sample_accuracy: float
    video_accuracy: float
    sample_counts: dict
    video_counts: dict
    sample_confusion: list
    video_confusion: list
    verdicts: list = field(default_factory=list)

    def to_dict(self, with_verdicts=True) -> dict:
        d = {k: getattr(self, k) for k in ("threshold", "n_samples", "n_videos", "sample_accuracy",
                                           "video_accuracy", "sample_counts", "video_counts",
                                           "sample_confusion", "video_confusion")}
        if with_verdicts:
            d["videos"] = [{"video_id": v.video_id, "label": v.label, "n_fake": v.n_fake,
                            "n_real": v.n_real, "probs": v.probs} for v in self.verdicts]
        return d

    def table(self) -> str:
        rows = [
            f"{'level':<8}{'n':>8}{'accuracy':>11}{'real':>7}{'fake':>7}   confusion [[rr, rf], [fr, ff]]",
            f"{'sample':<8}{self.n_samples:>8}{self.sample_accuracy:>11.4f}{self.sample_counts['real']:>7}"
            f"{self.sample_counts['fake']:>7}   {self.sample_confusion}",
            f"{'video':<8}{self.n_videos:>8}{self.video_accuracy:>11.4f}{self.video_counts['real']:>7}"
            f"{self.video_counts['fake']:>7}   {self.video_confusion}",
        ]
        return "\n".join(rows)


def evaluate(probs, labels, video_ids, threshold=0.5, tie_label=FAKE) -> EvalReport:
    """Sample accuracy, video accuracy after voting, class counts and confusion matrices.

    A window is predicted fake when ``prob >= threshold``. A video's true
    label is the majority label of its windows.
    """
    probs = np.asarray(probs, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if len(probs) != len(labels) or len(labels) != len(video_ids):
        raise ValueError("probs, labels and video ids must have equal length")
    pred = (probs >= threshold).astype(np.int64)
    verdicts, v_truth, v_pred = [], [], []
    for vid, idx in group_by_video(video_ids).items():
        verdict = majority_vote(probs[idx], threshold, vid, tie_label)
        verdicts.append(verdict)
        v_truth.append(int(np.mean(labels[idx]) > 0.5))
        v_pred.append(verdict.label)

    def acc(t, p):
        return float(np.mean(np.asarray(t) == np.asarray(p))) if len(t) else float("nan")

    def counts(t):
        t = list(t)
        return {"real": t.count(REAL), "fake": t.count(FAKE)}

    return EvalReport(threshold, len(probs), len(verdicts), acc(labels, pred), acc(v_truth, v_pred),
                      counts(labels.tolist()), counts(v_truth), confusion(labels, pred),
                      confusion(v_truth, v_pred), verdicts)
