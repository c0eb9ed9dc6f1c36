"""Episodes, the replay buffer, and mini-batch iteration."""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyBufferError

BUFFER_FORMAT_VERSION = 1


@dataclass
class Episode:
    observations: np.ndarray  # (T + 1, obs_dim)
    actions: np.ndarray  # (T, action_dim)
    rewards: np.ndarray  # (T,)
    truncated: bool = False
    diverged: bool = False
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        T = len(self.actions)
        if self.observations.shape[0] != T + 1 or self.rewards.shape != (T,):
            raise ValueError(
                f"inconsistent episode: {self.observations.shape[0]} observations, {T} actions, "
                f"{self.rewards.shape[0]} rewards"
            )

    def __len__(self):
        return len(self.actions)

    @property
    def total_return(self):
        return float(self.rewards.sum())

    def to_record(self):
        return {
            "version": BUFFER_FORMAT_VERSION,
            "observations": self.observations.tolist(),
            "actions": self.actions.tolist(),
            "rewards": self.rewards.tolist(),
            "truncated": bool(self.truncated),
            "diverged": bool(self.diverged),
        }

    @classmethod
    def from_record(cls, rec):
        if rec.get("version") != BUFFER_FORMAT_VERSION:
            raise ValueError(f"unsupported episode record version {rec.get('version')!r}")
        obs = np.asarray(rec["observations"], dtype=np.float64)
        acts = np.asarray(rec["actions"], dtype=np.float64).reshape(len(obs) - 1, -1)
        return cls(obs, acts, rec["rewards"], rec["truncated"], rec["diverged"])


class ReplayBuffer:
    """Ordered store of episodes with transition and window views."""

    def __init__(self, obs_dim, action_dim, episodes=()):
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.episodes = []
        for ep in episodes:
            self.add(ep)

    def add(self, episode):
        if episode.observations.shape[1] != self.obs_dim or (
            len(episode) and episode.actions.shape[1] != self.action_dim
        ):
            raise ValueError("episode dimensions do not match the buffer")
        self.episodes.append(episode)

    def __len__(self):
        return len(self.episodes)

    @property
    def num_transitions(self):
        return sum(len(ep) for ep in self.episodes)

    def transitions(self):
        """``(S, A, S_next)`` over all finite transitions, in episode order."""
        S, A, S2 = [], [], []
        for ep in self.episodes:
            S.append(ep.observations[:-1])
            A.append(ep.actions)
            S2.append(ep.observations[1:])
        if not S:
            return np.zeros((0, self.obs_dim)), np.zeros((0, self.action_dim)), np.zeros((0, self.obs_dim))
        S, A, S2 = np.concatenate(S), np.concatenate(A), np.concatenate(S2)
        ok = np.isfinite(S).all(1) & np.isfinite(A).all(1) & np.isfinite(S2).all(1)
        return S[ok], A[ok], S2[ok]

    def windows(self, w):
        """Every run of ``w`` consecutive (o, a) pairs, flattened; never crosses episodes."""
        if w < 1:
            raise ValueError("window size must be >= 1")
        d = self.obs_dim + self.action_dim
        out = []
        for ep in self.episodes:
            T = len(ep)
            if T < w:
                continue
            pairs = np.concatenate([ep.observations[:T], ep.actions], axis=1)
            idx = np.arange(T - w + 1)[:, None] + np.arange(w)[None, :]
            out.append(pairs[idx].reshape(-1, w * d))
        if not out:
            return np.zeros((0, w * d))
        X = np.concatenate(out)
        return X[np.isfinite(X).all(1)]

    def stats(self):
        """Per-dimension mean/std of ``(s, a)`` inputs and ``s' - s`` deltas."""
        S, A, S2 = self.transitions()
        if len(S) == 0:
            raise EmptyBufferError("no transitions")
        X, D = np.concatenate([S, A], axis=1), S2 - S
        return X.mean(0), X.std(0), D.mean(0), D.std(0)

    def split(self, holdout=0.1):
        """Transitions split into the leading ``1 - holdout`` and the last ``holdout`` share."""
        S, A, S2 = self.transitions()
        n_val = int(np.ceil(holdout * len(S))) if len(S) else 0
        cut = len(S) - n_val
        return (S[:cut], A[:cut], S2[:cut]), (S[cut:], A[cut:], S2[cut:])

    def dump_jsonl(self, path):
        with open(path, "w") as f:
            for ep in self.episodes:
                f.write(json.dumps(ep.to_record()) + "\n")

    @classmethod
    def load_jsonl(cls, path, obs_dim=None, action_dim=None):
        with open(path) as f:
            eps = [Episode.from_record(json.loads(line)) for line in f if line.strip()]
        if eps:
            obs_dim = eps[0].observations.shape[1]
            action_dim = eps[0].actions.shape[1] if len(eps[0]) else action_dim
        return cls(obs_dim, action_dim, eps)


def iter_batches(n, batch_size, rng):
    """Index batches covering ``range(n)`` once in a fresh random order."""
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def sample_batches(buffer, batch_size, seed, epochs=1):
    """Shuffled ``(S, A, S_next)`` mini-batches, ``epochs`` full passes."""
    S, A, S2 = buffer.transitions()
    if len(S) == 0:
        raise EmptyBufferError("cannot sample from an empty buffer")
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        for idx in iter_batches(len(S), batch_size, rng):
            yield S[idx], A[idx], S2[idx]


def sample_window_batches(buffer, w, batch_size, seed, epochs=1):
    X = buffer.windows(w)
    if len(X) == 0:
        raise EmptyBufferError("no complete windows in the buffer")
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        for idx in iter_batches(len(X), batch_size, rng):
            yield X[idx]
