"""The 239-dimensional unknown vector and its named views."""

from dataclasses import dataclass, field

import numpy as np

N_ID = 80
N_EXP = 64
N_TEX = 80
N_SH = 9
N_POSE = 6
N_PARAMS = N_ID + N_EXP + N_TEX + N_SH + N_POSE

# slices into the flat vector
SL_ID = slice(0, N_ID)
SL_EXP = slice(N_ID, N_ID + N_EXP)
SL_TEX = slice(N_ID + N_EXP, N_ID + N_EXP + N_TEX)
SL_SH = slice(N_ID + N_EXP + N_TEX, N_ID + N_EXP + N_TEX + N_SH)
SL_POSE = slice(N_PARAMS - N_POSE, N_PARAMS)

# unit uniform light: gamma_0 * Y_00 == 1
UNIT_LIGHT0 = 2.0 * np.sqrt(np.pi)


def _vec(x, n, name):
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    if a.shape != (n,):
        raise ValueError(f"{name} must have {n} entries, got {a.size}")
    return a


@dataclass
class SceneParams:
    """Identity, expression, texture, lighting and pose coefficients.

    ``pose`` is ``(pitch, yaw, roll, f, tx, ty)``: Euler angles in radians,
    scale in pixels per model unit, translation in pixels.
    """

    alpha_id: np.ndarray = field(default_factory=lambda: np.zeros(N_ID))
    beta_exp: np.ndarray = field(default_factory=lambda: np.zeros(N_EXP))
    beta_tex: np.ndarray = field(default_factory=lambda: np.zeros(N_TEX))
    gamma: np.ndarray = field(default_factory=lambda: unit_light())
    pose: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0, 0.0, 0.0]))

    def __post_init__(self):
        self.alpha_id = _vec(self.alpha_id, N_ID, "alpha_id")
        self.beta_exp = _vec(self.beta_exp, N_EXP, "beta_exp")
        self.beta_tex = _vec(self.beta_tex, N_TEX, "beta_tex")
        self.gamma = _vec(self.gamma, N_SH, "gamma")
        self.pose = _vec(self.pose, N_POSE, "pose")
        if not np.all(np.isfinite(self.to_vector())):
            raise ValueError("scene parameters must be finite")
        if self.pose[3] <= 0:
            raise ValueError(f"scale f must be positive, got {self.pose[3]}")

    def to_vector(self):
        return np.concatenate([self.alpha_id, self.beta_exp, self.beta_tex, self.gamma, self.pose])

    @classmethod
    def from_vector(cls, y):
        y = _vec(y, N_PARAMS, "parameter vector")
        return cls(y[SL_ID].copy(), y[SL_EXP].copy(), y[SL_TEX].copy(), y[SL_SH].copy(), y[SL_POSE].copy())

    def copy(self):
        return SceneParams.from_vector(self.to_vector())

    @property
    def angles(self):
        return self.pose[:3]

    @property
    def f(self):
        return float(self.pose[3])

    @property
    def t2d(self):
        return self.pose[4:6]

    def to_dict(self):
        return {
            "alpha_id": self.alpha_id.tolist(),
            "beta_exp": self.beta_exp.tolist(),
            "beta_tex": self.beta_tex.tolist(),
            "gamma": self.gamma.tolist(),
            "pose": self.pose.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        missing = {"alpha_id", "beta_exp", "beta_tex", "gamma", "pose"} - set(d)
        if missing:
            raise ValueError(f"missing parameter blocks: {sorted(missing)}")
        return cls(d["alpha_id"], d["beta_exp"], d["beta_tex"], d["gamma"], d["pose"])


def unit_light():
    g = np.zeros(N_SH)
    g[0] = UNIT_LIGHT0
    return g
