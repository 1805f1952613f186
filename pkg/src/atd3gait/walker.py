"""Deterministic planar seven-link biped.

Reduced coordinates q = [x, z, pitch, rh, rk, ra, lh, lk, la]: (x, z) is the
hip joint, pitch tilts the torso forward, the six joint angles are relative
(flexion / dorsiflexion positive). Every link's absolute orientation is a
linear combination of q[2:], so positions, Jacobians and velocity-product
terms come from one vectorised forward-kinematics pass.

Contact is a penalty spring-damper on the heel and toe of each foot.
Damping terms (contact, friction, joint) are treated implicitly in the
velocity solve so the integrator stays stable at millisecond substeps.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

JOINTS = ("right_hip", "right_knee", "right_ankle", "left_hip", "left_knee", "left_ankle")
OBS_DIM = 22
ACT_DIM = 6
STATE_VERSION = 1

# link order
TORSO, R_THIGH, R_SHANK, R_FOOT, L_THIGH, L_SHANK, L_FOOT = range(7)


@dataclass
class RobotConfig:
    torso_length: float = 0.4
    thigh_length: float = 0.45
    shank_length: float = 0.5
    foot_heel: float = 0.05      # heel distance behind the ankle (m)
    foot_toe: float = 0.15       # toe distance ahead of the ankle (m)
    foot_depth: float = 0.05     # sole distance below the ankle (m)
    torso_mass: float = 3.53
    thigh_mass: float = 3.93
    shank_mass: float = 2.71
    foot_mass: float = 2.94
    # degrees in config files for readability; converted on use
    hip_limits_deg: tuple = (-25.0, 115.0)
    knee_limits_deg: tuple = (0.0, 150.0)
    ankle_limits_deg: tuple = (-45.0, 45.0)
    torque_limits: tuple = (40.0, 40.0, 40.0)   # hip, knee, ankle (N m)
    gravity: float = 9.81
    dt: float = 0.0165
    substeps: int = 5
    contact_stiffness: float = 3.0e4
    contact_damping: float = 1.0e3
    friction: float = 1.0
    friction_damping: float = 3.0e3
    contact_tolerance: float = 2.0e-3
    joint_damping: float = 0.5
    limit_stiffness: float = 500.0
    action_mode: str = "torque"
    kp: float = 100.0
    kd: float = 2.0
    episode_cap: int = 1000
    fall_height_ratio: float = 0.8
    fall_pitch: float = 1.0
    init_noise: float = 0.005
    nominal_hip: float = 0.05
    nominal_knee: float = 0.1
    # default-reward coefficients
    alive_bonus: float = 1.0
    fallen_penalty: float = -1.0
    progress_scale: float = 1.0
    power_cost: float = 1e-3
    torque_cost: float = 1e-4
    limit_cost: float = 0.1
    limit_margin: float = 0.01

    def __post_init__(self):
        self.hip_limits_deg = tuple(self.hip_limits_deg)
        self.knee_limits_deg = tuple(self.knee_limits_deg)
        self.ankle_limits_deg = tuple(self.ankle_limits_deg)
        self.torque_limits = tuple(self.torque_limits)
        self.validate()

    def validate(self):
        positive = ("torso_length", "thigh_length", "shank_length", "foot_heel", "foot_toe",
                    "foot_depth", "torso_mass", "thigh_mass", "shank_mass", "foot_mass", "dt",
                    "contact_stiffness")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"RobotConfig.{name} must be > 0")
        if self.gravity < 0:
            raise ValueError("RobotConfig.gravity must be >= 0")
        if self.substeps < 1:
            raise ValueError("RobotConfig.substeps must be >= 1")
        for name in ("hip_limits_deg", "knee_limits_deg", "ankle_limits_deg"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"RobotConfig.{name}: lower must be < upper")
        if any(t <= 0 for t in self.torque_limits) or len(self.torque_limits) != 3:
            raise ValueError("RobotConfig.torque_limits needs three positive values")
        if self.action_mode not in ("torque", "position"):
            raise ValueError(f"unknown action_mode {self.action_mode!r}")

    @property
    def joint_limits(self) -> np.ndarray:
        """(6, 2) array of joint limits in radians, JOINTS order."""
        per_leg = [self.hip_limits_deg, self.knee_limits_deg, self.ankle_limits_deg]
        return np.radians(np.array(per_leg * 2, dtype=np.float64))

    @property
    def joint_torque_limits(self) -> np.ndarray:
        return np.array(self.torque_limits * 2, dtype=np.float64)

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown RobotConfig keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class SimState:
    q: np.ndarray
    qd: np.ndarray
    step: int = 0
    z0: float = 0.0
    x0: float = 0.0
    contacts: np.ndarray = field(default_factory=lambda: np.zeros(2, dtype=bool))
    error: bool = False

    def copy(self):
        return SimState(self.q.copy(), self.qd.copy(), self.step, self.z0, self.x0,
                        self.contacts.copy(), self.error)

    @property
    def displacement(self):
        return float(self.q[0] - self.x0)


@dataclass
class DefaultRewardBreakdown:
    alive: float
    progress: float
    effort: float
    limit: float
    collision: float = 0.0

    @property
    def total(self) -> float:
        return self.alive + self.progress + self.effort + self.limit + self.collision

    def as_tuple(self):
        return (self.alive, self.progress, self.effort, self.limit, self.collision)


@dataclass
class StepResult:
    obs: np.ndarray
    reward: DefaultRewardBreakdown
    terminal: bool
    info: dict


class WalkerModel:
    """Kinematic/inertial description derived from a RobotConfig."""

    def __init__(self, cfg: RobotConfig):
        self.cfg = cfg
        # absolute link angle = C @ q[2:]; link angles turn "clockwise" so that
        # hip flexion swings the thigh toward +x
        C = np.zeros((7, 7))
        C[TORSO, 0] = 1.0
        for side, (th, sh, ft) in enumerate([(R_THIGH, R_SHANK, R_FOOT), (L_THIGH, L_SHANK, L_FOOT)]):
            hip, knee, ankle = 1 + 3 * side, 2 + 3 * side, 3 + 3 * side
            C[th, [0, hip]] = [1.0, -1.0]
            C[sh, [0, hip, knee]] = [1.0, -1.0, 1.0]
            C[ft, [0, hip, knee, ankle]] = [1.0, -1.0, 1.0, -1.0]
        self.C = C

        Lt, Lth, Lsh = cfg.torso_length, cfg.thigh_length, cfg.shank_length
        fh, ftoe, fd = cfg.foot_heel, cfg.foot_toe, cfg.foot_depth
        masses = [cfg.torso_mass, cfg.thigh_mass, cfg.shank_mass, cfg.foot_mass,
                  cfg.thigh_mass, cfg.shank_mass, cfg.foot_mass]
        lengths = [Lt, Lth, Lsh, fh + ftoe, Lth, Lsh, fh + ftoe]
        self.mass = np.array(masses)
        self.inertia = np.array([m * l * l / 12.0 for m, l in zip(masses, lengths)])

        # every point = hip + sum_k R(psi_k) P[point, k]
        names = ["com_torso", "com_r_thigh", "com_r_shank", "com_r_foot",
                 "com_l_thigh", "com_l_shank", "com_l_foot",
                 "r_heel", "r_toe", "l_heel", "l_toe",
                 "torso_top", "r_knee", "r_ankle", "l_knee", "l_ankle"]
        P = np.zeros((len(names), 7, 2))
        P[0, TORSO] = (0.0, Lt / 2)
        P[11, TORSO] = (0.0, Lt)
        for side, (th, sh, ft) in enumerate([(R_THIGH, R_SHANK, R_FOOT), (L_THIGH, L_SHANK, L_FOOT)]):
            com_th, com_sh, com_ft = 1 + 3 * side, 2 + 3 * side, 3 + 3 * side
            heel, toe = 7 + 2 * side, 8 + 2 * side
            knee, ankle = 12 + 2 * side, 13 + 2 * side
            P[com_th, th] = (0.0, -Lth / 2)
            for idx in (com_sh, com_ft, heel, toe, knee, ankle):
                P[idx, th] = (0.0, -Lth)
            P[com_sh, sh] = (0.0, -Lsh / 2)
            for idx in (com_ft, heel, toe, ankle):
                P[idx, sh] = (0.0, -Lsh)
            P[com_ft, ft] = ((ftoe - fh) / 2, -fd / 2)
            P[heel, ft] = (-fh, -fd)
            P[toe, ft] = (ftoe, -fd)
        self.P = P
        self.point_names = names
        self.n_com = 7
        self.contact_idx = np.array([7, 8, 9, 10])
        self.contact_foot = np.array([0, 0, 1, 1])   # right, right, left, left
        self.limits = cfg.joint_limits
        self.torque_limits = cfg.joint_torque_limits

    def kinematics(self, q, qd, points=None):
        """Positions (n,2), angle Jacobians (n,2,7) and velocity-product terms (n,2)."""
        psi = self.C @ q[2:]
        c, s = np.cos(psi), np.sin(psi)
        P = self.P if points is None else self.P[points]
        Wx = P[..., 0] * c + P[..., 1] * s
        Wz = -P[..., 0] * s + P[..., 1] * c
        pos = np.stack([q[0] + Wx.sum(axis=1), q[1] + Wz.sum(axis=1)], axis=1)
        Jx = Wz @ self.C
        Jz = -Wx @ self.C
        w2 = (self.C @ qd[2:]) ** 2
        acc = np.stack([-(Wx @ w2), -(Wz @ w2)], axis=1)
        return pos, Jx, Jz, acc

    def points(self, q):
        psi = self.C @ q[2:]
        c, s = np.cos(psi), np.sin(psi)
        Wx = self.P[..., 0] * c + self.P[..., 1] * s
        Wz = -self.P[..., 0] * s + self.P[..., 1] * c
        return np.stack([q[0] + Wx.sum(axis=1), q[1] + Wz.sum(axis=1)], axis=1)

    def full_jacobians(self, Jx_ang, Jz_ang):
        n = Jx_ang.shape[0]
        Jx = np.zeros((n, 9))
        Jz = np.zeros((n, 9))
        Jx[:, 0] = 1.0
        Jz[:, 1] = 1.0
        Jx[:, 2:] = Jx_ang
        Jz[:, 2:] = Jz_ang
        return Jx, Jz

    def mass_matrix_and_bias(self, q, qd):
        pos, Jxa, Jza, acc = self.kinematics(q, qd)
        Jx, Jz = self.full_jacobians(Jxa, Jza)
        m = self.mass
        nc = self.n_com
        M = (Jx[:nc].T * m) @ Jx[:nc] + (Jz[:nc].T * m) @ Jz[:nc]
        M[2:, 2:] += (self.C.T * self.inertia) @ self.C
        bias = Jx[:nc].T @ (m * acc[:nc, 0]) + Jz[:nc].T @ (m * (acc[:nc, 1] + self.cfg.gravity))
        return M, bias, pos, Jx, Jz

    def energy(self, q, qd):
        M, _, pos, _, _ = self.mass_matrix_and_bias(q, qd)
        kinetic = 0.5 * qd @ M @ qd
        potential = self.cfg.gravity * float(self.mass @ pos[:self.n_com, 1])
        return float(kinetic + potential)

    def foot_heights(self, q):
        pos = self.points(q)[self.contact_idx, 1]
        return np.array([pos[:2].min(), pos[2:].min()])


class Walker2D:
    """Gym-style wrapper around :class:`WalkerModel` with the default reward."""

    obs_dim = OBS_DIM
    act_dim = ACT_DIM
    name = "walker2d"

    def __init__(self, config: RobotConfig | None = None):
        self.cfg = config or RobotConfig()
        self.cfg.validate()
        self.model = WalkerModel(self.cfg)
        self.state: SimState | None = None
        self.nominal_height = self._nominal_pose()[1]
        self.last_torque = np.zeros(ACT_DIM)

    # ------------------------------------------------------------- lifecycle
    def _nominal_pose(self, joints=None):
        cfg = self.cfg
        if joints is None:
            h, k = cfg.nominal_hip, cfg.nominal_knee
            joints = np.array([h, k, k - h, h, k, k - h])
        q = np.zeros(9)
        q[3:] = joints
        # lowest foot point touches z = 0
        q[1] = -self.model.foot_heights(q).min()
        return q

    def reset(self, seed=None, perturb=True):
        rng = np.random.default_rng(seed)
        h, k = self.cfg.nominal_hip, self.cfg.nominal_knee
        joints = np.array([h, k, k - h, h, k, k - h])
        if perturb and self.cfg.init_noise > 0:
            joints = joints + rng.uniform(-self.cfg.init_noise, self.cfg.init_noise, size=6)
        q = self._nominal_pose(joints)
        self.state = SimState(q=q, qd=np.zeros(9), step=0, z0=float(q[1]), x0=float(q[0]))
        self.state.contacts = self._contact_flags(q)
        self.last_torque = np.zeros(ACT_DIM)
        return self.observe()

    def _contact_flags(self, q):
        return self.model.foot_heights(q) <= self.cfg.contact_tolerance

    # ---------------------------------------------------------- observation
    def observe(self, state: SimState | None = None) -> np.ndarray:
        st = state or self.state
        q, qd = st.q, st.qd
        obs = np.zeros(OBS_DIM)
        obs[0] = q[1] - st.z0
        obs[1] = 1.0          # cos(target yaw - yaw), planar: yaw = 0
        obs[2] = 0.0
        obs[3] = qd[0]
        obs[4] = 0.0          # lateral velocity
        obs[5] = qd[1]
        obs[6] = 0.0          # roll
        obs[7] = q[2]
        obs[8:20:2] = q[3:]
        obs[9:20:2] = qd[3:]
        obs[20:22] = st.contacts.astype(np.float64)
        return obs

    # --------------------------------------------------------------- dynamics
    def _joint_torque(self, action, q, qd):
        lim = self.model.torque_limits
        if self.cfg.action_mode == "torque":
            return np.clip(action, -1.0, 1.0) * lim
        lo, hi = self.model.limits[:, 0], self.model.limits[:, 1]
        target = lo + (np.clip(action, -1.0, 1.0) + 1.0) * 0.5 * (hi - lo)
        tau = self.cfg.kp * (target - q[3:]) - self.cfg.kd * qd[3:]
        return np.clip(tau, -lim, lim)

    def _substep(self, q, qd, action, h):
        cfg, model = self.cfg, self.model
        M, bias, pos, Jx, Jz = model.mass_matrix_and_bias(q, qd)
        tau = self._joint_torque(action, q, qd)
        f = -bias
        f[3:] += tau
        # soft joint limits
        lo, hi = model.limits[:, 0], model.limits[:, 1]
        jq = q[3:]
        f[3:] += cfg.limit_stiffness * (np.minimum(jq - lo, 0.0) * -1.0 - np.maximum(jq - hi, 0.0))
        A = M.copy()
        A[np.arange(3, 9), np.arange(3, 9)] += h * cfg.joint_damping

        ci = model.contact_idx
        cpos = pos[ci]
        pen = -cpos[:, 1]
        active = np.nonzero(pen > 0.0)[0]
        if active.size:
            cJx, cJz = Jx[ci[active]], Jz[ci[active]]
            vx = cJx @ qd
            vz = cJz @ qd
            spring = cfg.contact_stiffness * pen[active]
            fn_est = np.maximum(spring - cfg.contact_damping * vz, 0.0)
            damp_n = np.where(fn_est > 0.0, cfg.contact_damping, 0.0)
            # viscous friction, coefficient capped by the Coulomb cone
            damp_t = np.minimum(cfg.friction_damping,
                                cfg.friction * fn_est / np.maximum(np.abs(vx), 1e-6))
            f += cJz.T @ spring
            A += h * ((cJz.T * damp_n) @ cJz + (cJx.T * damp_t) @ cJx)
        qd_new = np.linalg.solve(A, M @ qd + h * f)
        # joints at or past a limit and still moving outward get a plastic
        # impact: the impulse goes through M, so the rest of the body reacts
        jq_next = q[3:] + h * qd_new[3:]
        jv = qd_new[3:]
        hit = np.nonzero(((jq_next < lo) & (jv < 0.0)) | ((jq_next > hi) & (jv > 0.0)))[0]
        if hit.size:
            cols = 3 + hit
            E = np.zeros((9, hit.size))
            E[cols, np.arange(hit.size)] = 1.0
            X = np.linalg.solve(M, E)
            lam = np.linalg.solve(X[cols], qd_new[cols])
            qd_new = qd_new - X @ lam
            qd_new[cols] = 0.0
        q_new = q + h * qd_new
        # position clamp as a backstop; velocities are already consistent
        q_new[3:] = np.clip(q_new[3:], lo, hi)
        return q_new, qd_new, tau

    def step(self, action) -> StepResult:
        if self.state is None:
            raise RuntimeError("step() before reset()")
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (ACT_DIM,):
            raise ValueError(f"action must have shape ({ACT_DIM},), got {action.shape}")
        if not np.all(np.isfinite(action)):
            raise ValueError("action contains NaN/Inf")
        cfg = self.cfg
        st = self.state
        h = cfg.dt / cfg.substeps
        q, qd = st.q.copy(), st.qd.copy()
        x_before = q[0]
        tau = np.zeros(ACT_DIM)
        error = False
        # blow-ups are reported through the error flag instead of warnings
        with np.errstate(invalid="ignore", over="ignore"):
            for _ in range(cfg.substeps):
                q, qd, tau = self._substep(q, qd, action, h)
                if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
                    error = True
                    break
        self.last_torque = tau
        if error:
            st.error = True
            st.step += 1
            rew = DefaultRewardBreakdown(cfg.fallen_penalty, 0.0, 0.0, 0.0)
            return StepResult(self.observe(), rew, True, {"error": True, "fallen": True,
                                                          "truncated": False, "torque": tau})
        st.q, st.qd = q, qd
        st.step += 1
        st.contacts = self._contact_flags(q)

        fallen = bool(q[1] < cfg.fall_height_ratio * self.nominal_height or abs(q[2]) > cfg.fall_pitch)
        alive = cfg.fallen_penalty if fallen else cfg.alive_bonus
        progress = cfg.progress_scale * (q[0] - x_before) / cfg.dt
        jv = qd[3:]
        effort = -cfg.power_cost * float(np.abs(tau * jv).sum()) - cfg.torque_cost * float((tau * tau).sum())
        lo, hi = self.model.limits[:, 0], self.model.limits[:, 1]
        margin = cfg.limit_margin * (hi - lo)
        near = (q[3:] - lo <= margin) | (hi - q[3:] <= margin)
        limit = -cfg.limit_cost * float(near.sum())
        reward = DefaultRewardBreakdown(alive, float(progress), effort, limit, 0.0)
        truncated = st.step >= cfg.episode_cap
        info = {"fallen": fallen, "truncated": truncated and not fallen, "error": False,
                "torque": tau}
        return StepResult(self.observe(), reward, fallen or truncated, info)

    # ------------------------------------------------------------ snapshots
    def snapshot(self) -> SimState:
        return self.state.copy()

    def restore(self, state: SimState):
        self.state = state.copy()

    def save_state(self) -> bytes:
        return serialize_state(self.state)

    def restore_state(self, blob: bytes):
        self.state = deserialize_state(blob)

    def joint_angles(self, state: SimState | None = None) -> np.ndarray:
        return (state or self.state).q[3:].copy()

    def energy(self, state: SimState | None = None) -> float:
        st = state or self.state
        return self.model.energy(st.q, st.qd)


def serialize_state(state: SimState) -> bytes:
    body = {
        "version": STATE_VERSION,
        "q": [float(v).hex() for v in state.q],
        "qd": [float(v).hex() for v in state.qd],
        "step": state.step,
        "z0": float(state.z0).hex(),
        "x0": float(state.x0).hex(),
        "contacts": [bool(c) for c in state.contacts],
        "error": state.error,
    }
    payload = json.dumps(body, sort_keys=True)
    digest = hashlib.sha256(payload.encode()).hexdigest()
    return json.dumps({"payload": payload, "sha256": digest}).encode()


def deserialize_state(blob: bytes) -> SimState:
    try:
        outer = json.loads(blob.decode())
        payload = outer["payload"]
        if hashlib.sha256(payload.encode()).hexdigest() != outer["sha256"]:
            raise ValueError("checksum mismatch")
        body = json.loads(payload)
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise ValueError(f"corrupted simulator state: {exc}") from exc
    if body.get("version") != STATE_VERSION:
        raise ValueError(f"simulator state version {body.get('version')} != {STATE_VERSION}")
    return SimState(
        q=np.array([float.fromhex(v) for v in body["q"]]),
        qd=np.array([float.fromhex(v) for v in body["qd"]]),
        step=int(body["step"]),
        z0=float.fromhex(body["z0"]),
        x0=float.fromhex(body["x0"]),
        contacts=np.array(body["contacts"], dtype=bool),
        error=bool(body["error"]),
    )


def free_flight_energy_drift(dt, duration=1.0, height=10.0, seed=0, config=None):
    """Energy at the end of a contact-free, torque-free flight (helper for checks)."""
    cfg = config or RobotConfig()
    cfg = RobotConfig.from_dict({**cfg.to_dict(), "dt": dt, "substeps": 1, "joint_damping": 0.0})
    env = Walker2D(cfg)
    env.reset(seed=seed, perturb=False)
    rng = np.random.default_rng(seed)
    env.state.q[1] += height
    env.state.qd[:] = 0.0
    env.state.qd[0] = 0.5
    env.state.qd[2:] = rng.uniform(-0.1, 0.1, size=7)
    e0 = env.energy()
    for _ in range(int(round(duration / dt))):
        env.step(np.zeros(ACT_DIM))
    return e0, env.energy()


TRAJECTORY_FIELDS = (("step",) + tuple(f"obs{i}" for i in range(OBS_DIM))
                     + tuple(f"act_{j}" for j in JOINTS)
                     + ("alive", "progress", "effort", "limit", "collision", "terminal"))


class TrajectoryRecorder:
    """Collects one CSV row per step: index, observation, action, reward parts, terminal."""

    def __init__(self):
        self.rows = []

    def record(self, step, obs, action, reward: DefaultRewardBreakdown, terminal):
        self.rows.append([int(step)] + [float(v) for v in obs] + [float(v) for v in action]
                         + list(reward.as_tuple()) + [int(bool(terminal))])

    def write(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRAJECTORY_FIELDS)
            w.writerows([[repr(v) if isinstance(v, float) else v for v in row] for row in self.rows])
